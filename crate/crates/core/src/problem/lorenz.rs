use super::{OdeSystem, ProblemMeta};
use crate::precision::{spectral_norm, BigMat, BigScalar, BigVec, PrecisionContext, SpectralNormError};
use crate::trajectory::{Trajectory, TrajectoryError};

/// Default sampling interval for [`lipschitz_estimate`].
pub const DEFAULT_LIPSCHITZ_SAMPLE_DT: &str = "0.01";

/// Parameters `σ`, `b`, `r` of the Lorenz system.
#[derive(Clone, Debug, PartialEq)]
pub struct LorenzParams {
    pub sigma: BigScalar,
    pub b: BigScalar,
    pub r: BigScalar,
}

impl LorenzParams {
    /// `σ = 10`, `b = 8/3`, `r = 28`, each rounded once at the working precision.
    pub fn classic(ctx: &PrecisionContext) -> Self {
        LorenzParams { sigma: ctx.from_i64(10), b: ctx.ratio(8, 3), r: ctx.from_i64(28) }
    }

    pub fn context(&self) -> PrecisionContext {
        self.sigma.context()
    }

    pub fn convert(&self, ctx: &PrecisionContext) -> Self {
        LorenzParams {
            sigma: ctx.convert(&self.sigma),
            b: ctx.convert(&self.b),
            r: ctx.convert(&self.r),
        }
    }
}

/// `f(u) = (σ(y − x), rx − y − xz, xy − bz)`.
pub fn lorenz_rhs(u: &[BigScalar], p: &LorenzParams) -> BigVec {
    let (x, y, z) = (&u[0], &u[1], &u[2]);
    BigVec::from(vec![
        &p.sigma * &(y - x),
        &(&(&p.r * x) - y) - &(x * z),
        &(x * y) - &(&p.b * z),
    ])
}

/// `∂f/∂u = [[−σ, σ, 0], [r − z, −1, −x], [y, x, −b]]`.
pub fn lorenz_jacobian(u: &[BigScalar], p: &LorenzParams) -> BigMat {
    let ctx = p.context();
    let (x, y, z) = (&u[0], &u[1], &u[2]);
    BigMat::from_rows(vec![
        vec![-&p.sigma, p.sigma.clone(), ctx.zero()],
        vec![&p.r - z, -ctx.one(), -x],
        vec![y.clone(), x.clone(), -&p.b],
    ])
}

/// Right-hand side of the backward dual `−ż = J(ū)ᵀ z`, i.e. returns `ż`.
pub fn dual_rhs(z: &[BigScalar], ubar: &[BigScalar], p: &LorenzParams) -> BigVec {
    let mut v = lorenz_jacobian(ubar, p).tr_mul_vec(z);
    for c in v.iter_mut() {
        *c = -&*c;
    }
    v
}

/// Midpoint `(u + U)/2`. For a quadratic `f` this makes
/// `f(u) − f(U) = J(ū)(u − U)` exact.
pub fn averaged_state(u: &[BigScalar], uh: &[BigScalar]) -> BigVec {
    u.iter().zip(uh).map(|(a, b)| (a + b).div_i64(2)).collect()
}

/// The origin and `(±√(b(r−1)), ±√(b(r−1)), r − 1)`.
pub fn fixed_points(p: &LorenzParams) -> [BigVec; 3] {
    let ctx = p.context();
    let rm1 = &p.r - &ctx.one();
    let s = (&p.b * &rm1).sqrt();
    [
        BigVec::zeros(&ctx, 3),
        BigVec::from(vec![s.clone(), s.clone(), rm1.clone()]),
        BigVec::from(vec![-&s, -&s, rm1]),
    ]
}

#[derive(Debug, thiserror::Error)]
pub enum LipschitzError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    SpectralNorm(#[from] SpectralNormError),
}

/// Maximum of `‖J(u(t))‖₂` over samples `t = t0, t0 + dt, …` not beyond the
/// end of the trajectory.
pub fn lipschitz_estimate(
    traj: &Trajectory,
    p: &LorenzParams,
    sample_dt: &BigScalar,
) -> Result<BigScalar, LipschitzError> {
    let ctx = p.context();
    let t0 = traj.t_start();
    let t1 = traj.t_end();
    let dt = ctx.convert(sample_dt);
    let mut best = ctx.zero();
    let mut j = 0i64;
    loop {
        let t = &t0 + &dt.mul_i64(j);
        if t > t1 {
            break;
        }
        let u = traj.evaluate(&t)?.convert(&ctx);
        best = best.max(&spectral_norm(&lorenz_jacobian(&u, p))?);
        j += 1;
    }
    Ok(best)
}

/// The Lorenz system as an [`OdeSystem`].
#[derive(Clone, Debug)]
pub struct Lorenz {
    params: LorenzParams,
}

impl Lorenz {
    pub fn new(params: LorenzParams) -> Self {
        Lorenz { params }
    }

    pub fn classic(ctx: &PrecisionContext) -> Self {
        Lorenz::new(LorenzParams::classic(ctx))
    }

    pub fn params(&self) -> &LorenzParams {
        &self.params
    }
}

impl OdeSystem for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, u: &[BigScalar], _t: &BigScalar) -> BigVec {
        lorenz_rhs(u, &self.params)
    }

    fn jacobian(&self, u: &[BigScalar], _t: &BigScalar) -> BigMat {
        lorenz_jacobian(u, &self.params)
    }

    // J is affine in u, so DJ(u)[du] drops the constant part.
    fn jacobian_tangent(&self, _u: &[BigScalar], du: &[BigScalar], _t: &BigScalar) -> Option<BigMat> {
        let ctx = self.params.context();
        let (dx, dy, dz) = (&du[0], &du[1], &du[2]);
        Some(BigMat::from_rows(vec![
            vec![ctx.zero(), ctx.zero(), ctx.zero()],
            vec![-dz, ctx.zero(), -dx],
            vec![dy.clone(), dx.clone(), ctx.zero()],
        ]))
    }

    fn jacobian_second_tangent(
        &self,
        _u: &[BigScalar],
        _du: &[BigScalar],
        _t: &BigScalar,
    ) -> Option<BigMat> {
        Some(BigMat::zeros(&self.params.context(), 3, 3))
    }

    fn meta(&self) -> ProblemMeta {
        ProblemMeta {
            name: "lorenz".into(),
            params: vec![
                ("sigma".into(), self.params.sigma.clone()),
                ("b".into(), self.params.b.clone()),
                ("r".into(), self.params.r.clone()),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(d: u32) -> PrecisionContext {
        PrecisionContext::new(d).unwrap()
    }

    #[test]
    fn rhs_at_known_point() {
        let c = ctx(30);
        let p = LorenzParams::classic(&c);
        let u = c.vec_parse(&["1", "2", "3"]).unwrap();
        let f = lorenz_rhs(&u, &p);
        // (10(2−1), 28 − 2 − 3, 2 − 8)
        assert_eq!(f[0], c.from_i64(10));
        assert_eq!(f[1], c.from_i64(23));
        assert_eq!(f[2], c.from_i64(2) - c.from_i64(8));
    }

    #[test]
    fn fixed_points_are_stationary() {
        let c = ctx(50);
        let p = LorenzParams::classic(&c);
        for fp in fixed_points(&p) {
            let f = lorenz_rhs(&fp, &p);
            assert!(f.norm_inf() < c.pow10(-48), "{:?}", f.to_f64());
        }
        assert!((fixed_points(&p)[1][0].to_f64() - 72f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let c = ctx(60);
        let p = LorenzParams::classic(&c);
        let u = c.vec_parse(&["-3.5", "1.25", "20.125"]).unwrap();
        let j = lorenz_jacobian(&u, &p);
        let h = c.pow10(-20);
        for col in 0..3 {
            let mut up = u.clone();
            up[col] = &up[col] + &h;
            let mut dn = u.clone();
            dn[col] = &dn[col] - &h;
            let fd = lorenz_rhs(&up, &p).sub(&lorenz_rhs(&dn, &p)).scale(&(c.one() / h.mul_i64(2)));
            for row in 0..3 {
                let diff = (&fd[row] - &j[(row, col)]).abs();
                assert!(diff < c.pow10(-30), "({row},{col})");
            }
        }
    }

    #[test]
    fn mean_value_linearization_is_exact() {
        let c = ctx(40);
        let p = LorenzParams::classic(&c);
        let u = c.vec_parse(&["1.5", "-2", "7"]).unwrap();
        let uh = c.vec_parse(&["0.25", "3", "-1.75"]).unwrap();
        let lhs = lorenz_rhs(&u, &p).sub(&lorenz_rhs(&uh, &p));
        let rhs = lorenz_jacobian(&averaged_state(&u, &uh), &p).mul_vec(&u.sub(&uh));
        assert!(lhs.sub(&rhs).norm_inf() < c.pow10(-37));
    }

    #[test]
    fn dual_rhs_closed_form() {
        let c = ctx(30);
        let p = LorenzParams::classic(&c);
        let ub = c.vec_parse(&["2", "-1", "5"]).unwrap();
        let z = c.vec_parse(&["1", "2", "3"]).unwrap();
        let d = dual_rhs(&z, &ub, &p);
        // (σξ − (r−z̄)η − ȳζ, −σξ + η − x̄ζ, x̄η + bζ)
        let expect = [10.0 - 23.0 * 2.0 + 3.0, -10.0 + 2.0 - 6.0, 4.0 + 8.0];
        for i in 0..3 {
            assert!((d[i].to_f64() - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_matches_jacobian_difference() {
        let c = ctx(30);
        let l = Lorenz::classic(&c);
        let u = c.vec_parse(&["1", "2", "3"]).unwrap();
        let du = c.vec_parse(&["0.5", "-1", "2"]).unwrap();
        let t = c.zero();
        let jt = l.jacobian_tangent(&u, &du, &t).unwrap();
        let diff = l.jacobian(&u.add(&du), &t).sub(&l.jacobian(&u, &t));
        assert!(diff.sub(&jt).norm_max().is_zero());
    }
}
