//! Backward dual problem `−ż = J(ū)ᵀ z`, `z(T) = z_T`, and the stability
//! factors weighting data, discretization and round-off errors.
//!
//! The dual is solved forward in `s = T − t` by the same cG stepper; the
//! dual trajectory is therefore stored in `s`, and [`DualSolution::z_at`]
//! translates back to the original time.

use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::galerkin::{integrate, GalerkinError, SolverConfig, SolverStats};
use crate::precision::{BigMat, BigScalar, BigVec, PrecisionContext};
use crate::problem::{DualSystem, OdeSystem};
use crate::quadrature::{gauss_legendre, QuadratureError};
use crate::trajectory::{Trajectory, TrajectoryError};

/// Highest derivative order `p + 1` served by the analytic recurrence.
pub const MAX_RECURRENCE_ORDER: usize = 3;

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error("invalid dual configuration: {0}")]
    Config(String),
    #[error("final time {t} outside the primal trajectory [{start}, {end}]")]
    Span { t: String, start: String, end: String },
    #[error("derivative of order {order} unavailable: the dual is piecewise degree {degree} and the problem provides no Jacobian tangents")]
    OrderUnavailable { order: usize, degree: usize },
    #[error("primal evaluation failed: {0}")]
    Primal(TrajectoryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Clone, Debug)]
pub struct DualConfig {
    pub ctx: PrecisionContext,
    /// Terminal value `z(T)`.
    pub z_t: BigVec,
    pub dual_q: usize,
    pub dual_dt: BigScalar,
}

impl DualConfig {
    /// `z_T = e_1`, `dual_q = max(3, q/2)` and the primal step.
    pub fn for_primal(primal: &Trajectory) -> Self {
        let ctx = primal.context();
        let mut z_t = BigVec::zeros(&ctx, primal.dim());
        z_t[0] = ctx.one();
        DualConfig { ctx, z_t, dual_q: (primal.q() / 2).max(3), dual_dt: primal.partition().dt.clone() }
    }

    /// `z_T = 0` is accepted: it yields the zero dual.
    pub fn validate(&self, dim: usize) -> Result<(), AdjointError> {
        if self.z_t.len() != dim {
            return Err(AdjointError::Config(format!(
                "terminal value has {} components, problem has {dim}",
                self.z_t.len()
            )));
        }
        if self.dual_q == 0 {
            return Err(AdjointError::Config("dual degree must be at least 1".into()));
        }
        if !(self.dual_dt > self.ctx.zero()) {
            return Err(AdjointError::Config("dual step must be positive".into()));
        }
        Ok(())
    }
}

/// A dual solve on `[0, T]` together with the primal it linearizes around.
pub struct DualSolution<'a, S: OdeSystem> {
    system: &'a S,
    primal: &'a Trajectory,
    traj: Trajectory,
    t_final: BigScalar,
    z_t: BigVec,
    stats: SolverStats,
}

impl<'a, S: OdeSystem> DualSolution<'a, S> {
    /// The dual in reversed time `s = T − t`.
    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn t_final(&self) -> &BigScalar {
        &self.t_final
    }

    pub fn z_t(&self) -> &BigVec {
        &self.z_t
    }

    pub fn stats(&self) -> &SolverStats {
        &self.stats
    }

    pub fn context(&self) -> PrecisionContext {
        self.traj.context()
    }

    /// `z(t)` for `t ∈ [0, T]`.
    pub fn z_at(&self, t: &BigScalar) -> Result<BigVec, TrajectoryError> {
        let ctx = self.context();
        self.traj.evaluate(&(&self.t_final - &ctx.convert(t)))
    }

    /// `z(0)`.
    pub fn initial_value(&self) -> BigVec {
        self.traj.final_state()
    }

    fn ubar(&self, t: &BigScalar) -> Result<BigVec, AdjointError> {
        let ctx = self.context();
        Ok(self.primal.evaluate(t).map_err(AdjointError::Primal)?.convert(&ctx))
    }

    fn primal_derivative(&self, t: &BigScalar, order: usize) -> Result<BigVec, AdjointError> {
        let ctx = self.context();
        let d = self.primal.derivative_or_zero(t, order).map_err(AdjointError::Primal)?;
        Ok(d.value.convert(&ctx))
    }
}

/// Solves the dual on `[0, t_final]` along `primal`.
pub fn solve_dual<'a, S: OdeSystem>(
    system: &'a S,
    primal: &'a Trajectory,
    t_final: &BigScalar,
    cfg: &DualConfig,
) -> Result<DualSolution<'a, S>, AdjointError> {
    cfg.validate(system.dim())?;
    let ctx = cfg.ctx;
    let t_final = ctx.convert(t_final);
    let (start, end) = (primal.t_start(), primal.t_end());
    if ctx.convert(&start) > ctx.zero() || t_final > ctx.convert(&end) || !(t_final > ctx.zero()) {
        return Err(AdjointError::Span {
            t: t_final.to_sci(17),
            start: start.to_sci(17),
            end: end.to_sci(17),
        });
    }
    let failure: Mutex<Option<TrajectoryError>> = Mutex::new(None);
    let ubar = |t: &BigScalar| match primal.evaluate(t) {
        Ok(u) => u.convert(&ctx),
        Err(e) => {
            failure.lock().expect("poisoned").get_or_insert(e);
            BigVec::zeros(&ctx, system.dim())
        }
    };
    let dual = DualSystem::new(system, t_final.clone(), ubar);
    let solver = SolverConfig::new(ctx, cfg.dual_q, cfg.dual_dt.clone())?;
    let z_t = cfg.z_t.convert(&ctx);
    let (traj, stats) = integrate(&dual, &z_t, &t_final, &solver)?;
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(AdjointError::Primal(e));
    }
    Ok(DualSolution { system, primal, traj, t_final, z_t, stats })
}

/// `S_D = ‖z(0)‖`, `S_G = ∫‖z^(p+1)‖`, `S_C = ∫‖z‖`, `S_C2 = (∫‖z‖²)^½`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityFactors {
    pub s_d: BigScalar,
    pub s_g: BigScalar,
    pub s_c: BigScalar,
    pub s_c2: BigScalar,
    pub t: BigScalar,
    pub p: usize,
    pub z_t: BigVec,
}

/// Euclidean norms throughout; the projection in `S_C` is the identity.
///
/// The integrals use a `(dual_q + 2)`-point Gauss rule on every dual
/// interval. `z^(p+1)` comes from differentiating the dual equation when
/// `p + 1 ≤ 3` and the problem provides Jacobian tangents, otherwise from the
/// dual polynomial itself (which fails beyond its degree).
pub fn stability_factors<S: OdeSystem>(
    dual: &DualSolution<'_, S>,
    p: usize,
) -> Result<StabilityFactors, AdjointError> {
    let ctx = dual.context();
    let traj = &dual.traj;
    let basis = traj.basis();
    let dim = traj.dim();
    let order = p + 1;
    let rule = gauss_legendre(basis.degree() + 2, &ctx)?;
    let cards: Vec<Vec<BigScalar>> = rule.points.iter().map(|x| basis.cardinals(x)).collect();
    let analytic = order <= MAX_RECURRENCE_ORDER && has_tangents(dual, order);
    let combine = |vals: &[BigScalar], card: &[BigScalar]| {
        let mut out = BigVec::zeros(&ctx, dim);
        for (j, l) in card.iter().enumerate() {
            for c in 0..dim {
                out[c].add_mul(l, &vals[j * dim + c]);
            }
        }
        out
    };

    let (mut s_g, mut s_c, mut s_c2) = (ctx.zero(), ctx.zero(), ctx.zero());
    for m in 0..traj.intervals() {
        let a = traj.node_time(m);
        let h = &traj.node_time(m + 1) - &a;
        let vals = traj.interval_values(m);
        let poly_deriv = if analytic {
            None
        } else {
            if order > basis.degree() {
                return Err(AdjointError::OrderUnavailable { order, degree: basis.degree() });
            }
            let mut d = vals.to_vec();
            for _ in 0..order {
                d = basis.differentiate(&d, dim);
            }
            Some((d, h.powi(-(order as i64))))
        };
        for (g, w) in rule.weights.iter().enumerate() {
            let s = &a + &(&h * &rule.points[g]);
            let z = combine(vals, &cards[g]);
            let hw = &h * w;
            let nz = z.norm_sqr();
            s_c2.add_mul(&hw, &nz);
            s_c.add_mul(&hw, &nz.sqrt());
            let zd = match &poly_deriv {
                Some((d, scale)) => combine(d, &cards[g]).scale(scale),
                None => dual_derivative(dual, &z, &s, order)?,
            };
            s_g.add_mul(&hw, &zd.norm());
        }
    }
    Ok(StabilityFactors {
        s_d: dual.initial_value().norm(),
        s_g,
        s_c,
        s_c2: s_c2.sqrt(),
        t: dual.t_final.clone(),
        p,
        z_t: dual.z_t.clone(),
    })
}

fn has_tangents<S: OdeSystem>(dual: &DualSolution<'_, S>, order: usize) -> bool {
    let ctx = dual.context();
    let zero = BigVec::zeros(&ctx, dual.traj.dim());
    let t = ctx.zero();
    (order < 2 || dual.system.jacobian_tangent(&zero, &zero, &t).is_some())
        && (order < 3 || dual.system.jacobian_second_tangent(&zero, &zero, &t).is_some())
}

/// `d^order z / ds^order` at `s` from the dual equation `z' = B z`,
/// `B(s) = J(ū(T − s))ᵀ`. Requires [`has_tangents`].
fn dual_derivative<S: OdeSystem>(
    dual: &DualSolution<'_, S>,
    z: &BigVec,
    s: &BigScalar,
    order: usize,
) -> Result<BigVec, AdjointError> {
    let t = &dual.t_final - s;
    let u = dual.ubar(&t)?;
    let b = dual.system.jacobian(&u, &t).transpose();
    let z1 = b.mul_vec(z);
    if order == 1 {
        return Ok(z1);
    }
    // dū/ds = −u̇(t), d²ū/ds² = ü(t)
    let du = dual.primal_derivative(&t, 1)?;
    let jt = dual.system.jacobian_tangent(&u, &du, &t).expect("checked by has_tangents");
    let b1 = jt.transpose().scale(&-dual.context().one());
    let z2 = b1.mul_vec(z).add(&b.mul_vec(&z1));
    if order == 2 {
        return Ok(z2);
    }
    let ddu = dual.primal_derivative(&t, 2)?;
    let j2 = dual.system.jacobian_second_tangent(&u, &du, &t).expect("checked by has_tangents");
    let jt2 = dual.system.jacobian_tangent(&u, &ddu, &t).expect("checked by has_tangents");
    let b2: BigMat = j2.add(&jt2).transpose();
    let z3 = b2.mul_vec(z).add(&b1.mul_vec(&z1).scale(&dual.context().from_i64(2))).add(&b.mul_vec(&z2));
    Ok(z3)
}

/// One independent dual solve per final time, run in parallel. Results keep
/// the order of `t_list`.
pub fn growth_series<S: OdeSystem>(
    system: &S,
    primal: &Trajectory,
    t_list: &[BigScalar],
    cfg: &DualConfig,
    p: usize,
) -> Vec<(BigScalar, Result<StabilityFactors, AdjointError>)> {
    t_list
        .par_iter()
        .map(|t| {
            let r = solve_dual(system, primal, t, cfg).and_then(|d| stability_factors(&d, p));
            (t.clone(), r)
        })
        .collect()
}

/// Theorem-style bounds with both quadrature constants set to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBounds {
    /// `S_D ‖U(0) − u(0)‖`.
    pub e_d: BigScalar,
    /// `S_G · disc_terms`.
    pub e_g: BigScalar,
    /// `S_C · comp_terms`.
    pub e_c: BigScalar,
    /// `S_C2 · eps / √k_min`.
    pub e_c_rms: BigScalar,
    pub data_err: BigScalar,
    pub disc_terms: BigScalar,
    pub comp_terms: BigScalar,
    pub eps: BigScalar,
    pub min_dt: BigScalar,
}

impl ErrorBounds {
    pub const CONSTANT_CONVENTION: &'static str = "C_p = C_p' = 1";
}

/// `disc_terms` is `max k^(p+1)(‖[U]‖/k + ‖R‖)` and `comp_terms` is
/// `max ‖k⁻¹ R̄‖`, both supplied by the caller.
pub fn error_bounds(
    f: &StabilityFactors,
    data_err: &BigScalar,
    disc_terms: &BigScalar,
    comp_terms: &BigScalar,
    eps: &BigScalar,
    min_dt: &BigScalar,
) -> ErrorBounds {
    let ctx = f.s_d.context();
    let c = |x: &BigScalar| ctx.convert(x);
    ErrorBounds {
        e_d: &f.s_d * &c(data_err),
        e_g: &f.s_g * &c(disc_terms),
        e_c: &f.s_c * &c(comp_terms),
        e_c_rms: &(&f.s_c2 * &c(eps)) / &c(min_dt).sqrt(),
        data_err: c(data_err),
        disc_terms: c(disc_terms),
        comp_terms: c(comp_terms),
        eps: c(eps),
        min_dt: c(min_dt),
    }
}

/// `max k^(p+1) ‖R‖` over `samples` evenly spaced interior points of every
/// interval (jumps vanish for continuous trajectories).
pub fn discretization_term<S: OdeSystem + ?Sized>(
    traj: &Trajectory,
    system: &S,
    p: usize,
    samples: usize,
) -> Result<BigScalar, AdjointError> {
    let ctx = traj.context();
    let basis = traj.basis();
    let dim = traj.dim();
    let mut best = ctx.zero();
    for m in 0..traj.intervals() {
        let a = traj.node_time(m);
        let h = &traj.node_time(m + 1) - &a;
        let vals = traj.interval_values(m);
        let dvals = basis.differentiate(vals, dim);
        let kp = h.powi(p as i64 + 1);
        for j in 1..=samples {
            let tau = ctx.ratio(j as i64, samples as i64 + 1);
            let t = &a + &(&h * &tau);
            let u = crate::quadrature::lagrange_eval(basis, vals, dim, &tau);
            let du = crate::quadrature::lagrange_eval(basis, &dvals, dim, &tau).scale(&(ctx.one() / &h));
            let r = du.sub(&system.rhs(&u, &t)).norm();
            best = best.max(&(&kp * &r));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::integrate;
    use crate::problem::{LinearScalar, Lorenz, ProblemMeta};

    fn ctx(d: u32) -> PrecisionContext {
        PrecisionContext::new(d).unwrap()
    }

    fn primal<S: OdeSystem>(sys: &S, u0: &BigVec, q: usize, dt: &str, t: &str) -> Trajectory {
        let c = u0[0].context();
        let cfg = SolverConfig::new(c, q, c.parse(dt).unwrap()).unwrap();
        integrate(sys, u0, &c.parse(t).unwrap(), &cfg).unwrap().0
    }

    fn close(a: &BigScalar, b: &BigScalar, rel: &BigScalar) -> bool {
        (a - b).abs() <= rel * &b.abs()
    }

    /// `u̇ = a u` without Jacobian tangents.
    struct Opaque(LinearScalar);

    impl OdeSystem for Opaque {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, u: &[BigScalar], t: &BigScalar) -> BigVec {
            self.0.rhs(u, t)
        }
        fn jacobian(&self, u: &[BigScalar], t: &BigScalar) -> BigMat {
            self.0.jacobian(u, t)
        }
        fn meta(&self) -> ProblemMeta {
            self.0.meta()
        }
    }

    #[test]
    fn scalar_dual_closed_forms() {
        let c = ctx(30);
        let sys = LinearScalar { a: c.from_i64(2) };
        let tr = primal(&sys, &BigVec::from(vec![c.one()]), 4, "0.05", "1");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.dual_q = 12;
        let dual = solve_dual(&sys, &tr, &c.one(), &cfg).unwrap();
        let tol = c.pow10(-15);
        let e2 = c.from_i64(2).exp();
        let e2m1 = &e2 - &c.one();
        // z(t) = e^{2(1 − t)}
        let z_half = dual.z_at(&c.parse("0.5").unwrap()).unwrap();
        assert!(close(&z_half[0], &c.one().exp(), &tol));
        for p in 0..5 {
            let f = stability_factors(&dual, p).unwrap();
            assert!(close(&f.s_d, &e2, &tol));
            assert!(close(&f.s_c, &e2m1.div_i64(2), &tol));
            // ∫ e^{4(1−t)} = (e⁴ − 1)/4
            let c2 = ((&(&e2 * &e2) - &c.one()).div_i64(4)).sqrt();
            assert!(close(&f.s_c2, &c2, &tol));
            // |z^(p+1)| = 2^{p+1} z
            let g = &e2m1 * &c.from_i64(1 << p);
            assert!(close(&f.s_g, &g, &tol), "p = {p}: {}", f.s_g.to_sci(20));
            assert_eq!(f.p, p);
        }
    }

    #[test]
    fn unit_growth_gives_e() {
        let c = ctx(30);
        let sys = LinearScalar { a: c.one() };
        let tr = primal(&sys, &BigVec::from(vec![c.one()]), 3, "0.1", "1");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.dual_q = 10;
        cfg.dual_dt = c.parse("0.05").unwrap();
        let dual = solve_dual(&sys, &tr, &c.one(), &cfg).unwrap();
        let f = stability_factors(&dual, 0).unwrap();
        let e = c.one().exp();
        assert!(close(&f.s_d, &e, &c.pow10(-15)));
        assert!(close(&f.s_g, &(&e - &c.one()), &c.pow10(-15)));
    }

    #[test]
    fn polynomial_route_without_tangents() {
        let c = ctx(30);
        let sys = Opaque(LinearScalar { a: c.from_i64(2) });
        let tr = primal(&sys, &BigVec::from(vec![c.one()]), 4, "0.05", "1");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.dual_q = 12;
        let dual = solve_dual(&sys, &tr, &c.one(), &cfg).unwrap();
        let g = &(&c.from_i64(2).exp() - &c.one()) * &c.from_i64(2);
        let f = stability_factors(&dual, 1).unwrap();
        assert!(close(&f.s_g, &g, &c.pow10(-12)), "{}", f.s_g.to_sci(20));

        cfg.dual_q = 1;
        let dual = solve_dual(&sys, &tr, &c.one(), &cfg).unwrap();
        assert!(stability_factors(&dual, 0).is_ok());
        assert!(matches!(
            stability_factors(&dual, 1),
            Err(AdjointError::OrderUnavailable { order: 2, degree: 1 })
        ));
    }

    #[test]
    fn lorenz_recurrence_matches_polynomial_derivative() {
        let c = ctx(40);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 6, "0.01", "1");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.dual_q = 8;
        let dual = solve_dual(&sys, &tr, &c.one(), &cfg).unwrap();
        for p in 0..3 {
            let analytic = stability_factors(&dual, p).unwrap().s_g;
            // the dual polynomial route, forced through a high order request
            let traj = dual.trajectory();
            let basis = traj.basis();
            let rule = gauss_legendre(basis.degree() + 2, &c).unwrap();
            let mut poly = c.zero();
            for m in 0..traj.intervals() {
                let h = &traj.node_time(m + 1) - &traj.node_time(m);
                let mut d = traj.interval_values(m).to_vec();
                for _ in 0..=p {
                    d = basis.differentiate(&d, 3);
                }
                let scale = h.powi(-(p as i64 + 1));
                for (x, w) in rule.points.iter().zip(&rule.weights) {
                    let v = crate::quadrature::lagrange_eval(basis, &d, 3, x).scale(&scale);
                    poly.add_mul(&(&h * w), &v.norm());
                }
            }
            assert!(close(&analytic, &poly, &c.pow10(-8)), "p = {p}: {} vs {}", analytic.to_sci(12), poly.to_sci(12));
        }
    }

    #[test]
    fn zero_terminal_value_gives_zero_dual() {
        let c = ctx(25);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 3, "0.02", "0.5");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.z_t = BigVec::zeros(&c, 3);
        let dual = solve_dual(&sys, &tr, &c.parse("0.5").unwrap(), &cfg).unwrap();
        assert!(dual.trajectory().values().iter().all(|v| v.is_zero()));
        let f = stability_factors(&dual, 0).unwrap();
        assert!(f.s_d.is_zero() && f.s_c.is_zero() && f.s_g.is_zero());
    }

    #[test]
    fn dual_is_linear_in_terminal_value() {
        let c = ctx(40);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 4, "0.02", "2");
        let mut cfg = DualConfig::for_primal(&tr);
        cfg.z_t = c.vec_parse(&["0.3", "-1", "2"]).unwrap();
        let t = c.from_i64(2);
        let one = solve_dual(&sys, &tr, &t, &cfg).unwrap();
        cfg.z_t = cfg.z_t.scale(&c.from_i64(2));
        let two = solve_dual(&sys, &tr, &t, &cfg).unwrap();
        let tol = c.pow10(-36);
        for (a, b) in one.trajectory().values().iter().zip(two.trajectory().values()) {
            assert!((&a.mul_i64(2) - b).abs() <= &tol * &b.abs().max(&c.one()));
        }
    }

    #[test]
    fn factor_invariants_on_lorenz() {
        let c = ctx(30);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 4, "0.02", "3");
        let cfg = DualConfig::for_primal(&tr);
        let t = c.from_i64(3);
        let dual = solve_dual(&sys, &tr, &t, &cfg).unwrap();
        let f = stability_factors(&dual, 0).unwrap();
        assert_eq!(f.s_d, dual.z_at(&c.zero()).unwrap().norm());
        let mut sup = c.zero();
        for j in 0..=300 {
            sup = sup.max(&dual.z_at(&c.ratio(j, 100)).unwrap().norm());
        }
        assert!(f.s_d <= sup);
        assert!(f.s_c <= &sup * &t);
        assert!(f.s_c2 <= &sup * &t.sqrt());
        // Cauchy–Schwarz the other way round
        assert!(f.s_c <= &f.s_c2 * &t.sqrt());
        assert!(f.s_g > c.zero());
    }

    #[test]
    fn span_and_config_errors() {
        let c = ctx(20);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 2, "0.05", "1");
        let cfg = DualConfig::for_primal(&tr);
        assert!(matches!(solve_dual(&sys, &tr, &c.from_i64(2), &cfg), Err(AdjointError::Span { .. })));
        assert!(matches!(solve_dual(&sys, &tr, &c.zero(), &cfg), Err(AdjointError::Span { .. })));
        let mut bad = cfg.clone();
        bad.z_t = BigVec::zeros(&c, 2);
        assert!(matches!(solve_dual(&sys, &tr, &c.one(), &bad), Err(AdjointError::Config(_))));
        assert_eq!(cfg.dual_q, 3);
        assert_eq!(cfg.dual_dt, tr.partition().dt);
    }

    #[test]
    fn growth_series_is_order_stable() {
        let c = ctx(25);
        let sys = Lorenz::classic(&c);
        let tr = primal(&sys, &c.vec_parse(&["1", "0", "0"]).unwrap(), 3, "0.02", "2");
        let cfg = DualConfig::for_primal(&tr);
        let ts = vec![c.from_i64(2), c.one(), c.one(), c.parse("3").unwrap()];
        let out = growth_series(&sys, &tr, &ts, &cfg, 0);
        assert_eq!(out.len(), 4);
        for (t, (t2, _)) in ts.iter().zip(&out) {
            assert_eq!(t, t2);
        }
        let single = stability_factors(&solve_dual(&sys, &tr, &c.from_i64(2), &cfg).unwrap(), 0).unwrap();
        assert_eq!(out[0].1.as_ref().unwrap(), &single);
        assert_eq!(out[1].1.as_ref().unwrap(), out[2].1.as_ref().unwrap());
        assert!(matches!(out[3].1, Err(AdjointError::Span { .. })));
    }

    #[test]
    fn bounds_are_literal_products() {
        let c = ctx(30);
        let f = StabilityFactors {
            s_d: c.parse("0.51").unwrap(),
            s_g: c.parse("28.9").unwrap(),
            s_c: c.parse("2.08").unwrap(),
            s_c2: c.parse("1.5").unwrap(),
            t: c.from_i64(10),
            p: 0,
            z_t: c.vec_parse(&["1", "0", "0"]).unwrap(),
        };
        let one = c.one();
        let b = error_bounds(&f, &one, &one, &one, &one, &one);
        assert_eq!((b.e_d.clone(), b.e_g.clone(), b.e_c.clone(), b.e_c_rms.clone()), (f.s_d.clone(), f.s_g.clone(), f.s_c.clone(), f.s_c2.clone()));
        let b = error_bounds(&f, &c.zero(), &one, &one, &one, &one);
        assert!(b.e_d.is_zero());

        // 2.08e388 · 1e-420 / √0.0037 ≈ 3.4e-31
        let big = c.parse("2.08e388").unwrap();
        let g = StabilityFactors { s_c2: big, ..f };
        let b = error_bounds(&g, &one, &one, &one, &c.parse("1e-420").unwrap(), &c.parse("0.0037").unwrap());
        let v = b.e_c_rms.to_f64();
        assert!((v / 3.42e-31 - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn discretization_term_scales_with_order() {
        let c = ctx(30);
        let sys = Lorenz::classic(&c);
        let u0 = c.vec_parse(&["1", "0", "0"]).unwrap();
        let coarse = primal(&sys, &u0, 2, "0.02", "0.5");
        let fine = primal(&sys, &u0, 2, "0.01", "0.5");
        let a = discretization_term(&coarse, &sys, 0, 5).unwrap().to_f64();
        let b = discretization_term(&fine, &sys, 0, 5).unwrap().to_f64();
        // ‖R‖ = O(k^q), times k^{p+1}: ratio ≈ 2^{q+1} = 8
        let ratio = a / b;
        assert!(ratio > 6.0 && ratio < 10.0, "{ratio}");
    }
}
