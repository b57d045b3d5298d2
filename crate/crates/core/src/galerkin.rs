//! The cG(q) time stepper.
//!
//! On each interval `[t, t + h]` the solution is a degree-`q` polynomial with
//! nodal values `U_0..U_q` at the Gauss–Lobatto points; `U_0` is the value
//! carried over from the previous interval. The Galerkin conditions, with the
//! test integrals evaluated by `q`-point Gauss–Legendre quadrature, reduce to
//!
//! ```text
//! F_j = Σ_i G_ji U_i − h f(Σ_i E_ji U_i, t + g_j h) = 0,   j = 1..q
//! ```
//!
//! where `E_ji = ℓ_i(g_j)` and `G = E·D`. Newton's method on `U_1..U_q` uses
//! the exact Jacobian blocks `G_ji I − h E_ji J(U(g_j))`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock, RwLock};

use thiserror::Error;

use crate::precision::{BigMat, BigScalar, BigVec, LuFactors, PrecisionContext, PrecisionError};
use crate::problem::OdeSystem;
use crate::quadrature::{gauss_legendre, NodalBasis, QuadratureError, QuadratureRule};
use crate::trajectory::{
    finer, vec_gap, DivergenceReport, DivergenceSearch, Partition, Trajectory, TrajectoryError,
    TrajectoryMeta,
};

pub const DEFAULT_MAX_NEWTON_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("step {interval} at t = {time} failed: Newton did not converge (residual history {history:?})")]
    StepFailure { interval: usize, time: String, history: Vec<String> },
    #[error("step {interval} at t = {time}: {source}")]
    Linear { interval: usize, time: String, source: PrecisionError },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Precision(#[from] PrecisionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("no convergence after {iterations} iterations")]
    Diverged { iterations: usize, history: Vec<BigScalar> },
    #[error(transparent)]
    Linear(#[from] PrecisionError),
}

/// How the Newton iteration is started on each interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialGuess {
    /// Every node starts at the left value.
    Constant,
    /// Continue the previous interval's polynomial.
    Extrapolate,
}

impl InitialGuess {
    pub fn name(&self) -> &'static str {
        match self {
            InitialGuess::Constant => "constant",
            InitialGuess::Extrapolate => "extrapolate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(InitialGuess::Constant),
            "extrapolate" => Some(InitialGuess::Extrapolate),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub ctx: PrecisionContext,
    pub q: usize,
    pub dt: BigScalar,
    /// Newton stops once `‖F‖∞` or the last update is below
    /// `residual_tol · max(1, ‖U_left‖∞)`.
    pub residual_tol: BigScalar,
    pub max_newton_iters: usize,
    pub guess: InitialGuess,
}

impl SolverConfig {
    /// Defaults: `residual_tol = 100·eps`, 50 Newton iterations, constant guess.
    pub fn new(ctx: PrecisionContext, q: usize, dt: BigScalar) -> Result<Self, GalerkinError> {
        let cfg = SolverConfig {
            ctx,
            q,
            dt: ctx.convert(&dt),
            residual_tol: ctx.eps().mul_i64(100),
            max_newton_iters: DEFAULT_MAX_NEWTON_ITERS,
            guess: InitialGuess::Constant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GalerkinError> {
        if self.q == 0 {
            return Err(GalerkinError::Config("polynomial degree q must be at least 1".into()));
        }
        if !(self.dt > self.ctx.zero()) {
            return Err(GalerkinError::Config("time step must be positive".into()));
        }
        if self.residual_tol < self.ctx.eps() {
            return Err(GalerkinError::Config("residual tolerance must be at least eps".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(GalerkinError::Config("max_newton_iters must be positive".into()));
        }
        Ok(())
    }

    /// Key/value form for file headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("q".into(), self.q.to_string()),
            ("digits".into(), self.ctx.digits().to_string()),
            ("dt".into(), self.dt.to_decimal()),
            ("residual_tol".into(), self.residual_tol.to_decimal()),
            ("max_newton_iters".into(), self.max_newton_iters.to_string()),
            ("guess".into(), self.guess.name().into()),
        ]
    }
}

/// Per-`(q, precision)` matrices of the discrete equations.
#[derive(Debug)]
pub struct CgTables {
    pub basis: Arc<NodalBasis>,
    pub gauss: Arc<QuadratureRule>,
    /// `E_ji = ℓ_i(g_j)`, `q × (q+1)`.
    pub eval: BigMat,
    /// `G = E·D`, `q × (q+1)`.
    pub deriv: BigMat,
}

impl CgTables {
    pub fn get(q: usize, ctx: &PrecisionContext) -> Result<Arc<CgTables>, QuadratureError> {
        static CACHE: OnceLock<RwLock<HashMap<(usize, u32), Arc<CgTables>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (q, ctx.bits());
        if let Some(t) = cache.read().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let basis = NodalBasis::lobatto(q, ctx)?;
        let gauss = gauss_legendre(q, ctx)?;
        let eval = BigMat::from_rows(gauss.points.iter().map(|g| basis.cardinals(g)).collect());
        let deriv = eval.matmul(basis.differentiation_matrix());
        let t = Arc::new(CgTables { basis, gauss, eval, deriv });
        Ok(cache.write().unwrap().entry(key).or_insert(t).clone())
    }

    pub fn q(&self) -> usize {
        self.basis.degree()
    }
}

/// The nonlinear system of one interval.
pub struct StepSystem<'a, S: OdeSystem + ?Sized> {
    pub system: &'a S,
    pub tables: &'a CgTables,
    pub left: &'a [BigScalar],
    pub t: BigScalar,
    pub h: BigScalar,
}

impl<'a, S: OdeSystem + ?Sized> StepSystem<'a, S> {
    fn dim(&self) -> usize {
        self.left.len()
    }

    fn q(&self) -> usize {
        self.tables.q()
    }

    /// `U(g_j)` and `t + g_j h` for each Gauss point.
    fn gauss_states(&self, x: &[BigScalar]) -> Vec<(BigVec, BigScalar)> {
        let (q, d) = (self.q(), self.dim());
        let ctx = self.h.context();
        (0..q)
            .map(|j| {
                let mut u = BigVec::zeros(&ctx, d);
                for i in 0..=q {
                    let e = &self.tables.eval[(j, i)];
                    let node = if i == 0 { self.left } else { &x[(i - 1) * d..i * d] };
                    for c in 0..d {
                        u[c].add_mul(e, &node[c]);
                    }
                }
                let t = &self.t + &(&self.h * &self.tables.gauss.points[j]);
                (u, t)
            })
            .collect()
    }

    /// `F(x)` for the unknown nodes `x = (U_1, …, U_q)`.
    pub fn residual(&self, x: &[BigScalar]) -> Vec<BigScalar> {
        let states = self.gauss_states(x);
        self.residual_at(x, &states)
    }

    fn residual_at(&self, x: &[BigScalar], states: &[(BigVec, BigScalar)]) -> Vec<BigScalar> {
        let (q, d) = (self.q(), self.dim());
        let mut out = Vec::with_capacity(q * d);
        for (j, (u, t)) in states.iter().enumerate() {
            let f = self.system.rhs(u, t);
            for c in 0..d {
                let mut acc = -(&self.h * &f[c]);
                for i in 0..=q {
                    let v = if i == 0 { &self.left[c] } else { &x[(i - 1) * d + c] };
                    acc.add_mul(&self.tables.deriv[(j, i)], v);
                }
                out.push(acc);
            }
        }
        out
    }

    fn jacobian_at(&self, states: &[(BigVec, BigScalar)]) -> BigMat {
        let (q, d) = (self.q(), self.dim());
        let ctx = self.h.context();
        let mut m = BigMat::zeros(&ctx, q * d, q * d);
        for (j, (u, t)) in states.iter().enumerate() {
            let jac = self.system.jacobian(u, t);
            for i in 1..=q {
                let he = &self.h * &self.tables.eval[(j, i)];
                let g = &self.tables.deriv[(j, i)];
                for r in 0..d {
                    for c in 0..d {
                        let mut v = -(&he * &jac[(r, c)]);
                        if r == c {
                            v += g;
                        }
                        m[(j * d + r, (i - 1) * d + c)] = v;
                    }
                }
            }
        }
        m
    }

    pub fn jacobian(&self, x: &[BigScalar]) -> BigMat {
        self.jacobian_at(&self.gauss_states(x))
    }

    /// `max(1, ‖U_left‖∞)`.
    pub fn scale(&self) -> BigScalar {
        let ctx = self.h.context();
        let mut s = ctx.one();
        for v in self.left {
            s = s.max(&v.abs());
        }
        s
    }
}

fn norm_inf(v: &[BigScalar], ctx: &PrecisionContext) -> BigScalar {
    v.iter().fold(ctx.zero(), |m, x| m.max(&x.abs()))
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub x: Vec<BigScalar>,
    /// Number of Newton updates applied.
    pub iterations: usize,
    /// `‖F‖∞` before each update and at the accepted point.
    pub history: Vec<BigScalar>,
    pub residual: BigScalar,
}

/// Newton's method with the exact step Jacobian.
///
/// Accepts when `‖F‖∞ ≤ tol·scale`, or when the previous update was already
/// below `tol·scale` (the residual is then at the rounding level of its own
/// evaluation).
pub fn newton_solve<S: OdeSystem + ?Sized>(
    sys: &StepSystem<'_, S>,
    guess: Vec<BigScalar>,
    tol: &BigScalar,
    max_iters: usize,
) -> Result<NewtonOutcome, NewtonError> {
    let ctx = sys.h.context();
    let limit = tol * &sys.scale();
    let mut x = guess;
    let mut history = Vec::new();
    let mut small_update = false;
    for iterations in 0..=max_iters {
        let states = sys.gauss_states(&x);
        let f = sys.residual_at(&x, &states);
        let r = norm_inf(&f, &ctx);
        history.push(r.clone());
        if r <= limit || small_update {
            return Ok(NewtonOutcome { x, iterations, history, residual: r });
        }
        if iterations == max_iters {
            break;
        }
        let lu = LuFactors::factor(sys.jacobian_at(&states))?;
        let delta = lu.solve(&f)?;
        for (xi, di) in x.iter_mut().zip(delta.iter()) {
            *xi -= di;
        }
        small_update = norm_inf(&delta, &ctx) <= limit;
    }
    Err(NewtonError::Diverged { iterations: max_iters, history })
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Node-major values `U_0..U_q`, with `U_0` equal to the left value.
    pub values: Vec<BigScalar>,
    pub iterations: usize,
    pub residual: BigScalar,
}

/// One cG(q) step of length `h` from `(t, U_left)`, started from a constant guess.
pub fn step<S: OdeSystem + ?Sized>(
    system: &S,
    u_left: &[BigScalar],
    t: &BigScalar,
    h: &BigScalar,
    cfg: &SolverConfig,
) -> Result<StepOutcome, GalerkinError> {
    let tables = CgTables::get(cfg.q, &cfg.ctx)?;
    let guess: Vec<BigScalar> = (0..cfg.q).flat_map(|_| u_left.iter().cloned()).collect();
    step_with(system, &tables, u_left, t, h, cfg, guess, 0)
}

#[allow(clippy::too_many_arguments)]
fn step_with<S: OdeSystem + ?Sized>(
    system: &S,
    tables: &CgTables,
    u_left: &[BigScalar],
    t: &BigScalar,
    h: &BigScalar,
    cfg: &SolverConfig,
    guess: Vec<BigScalar>,
    interval: usize,
) -> Result<StepOutcome, GalerkinError> {
    let sys = StepSystem { system, tables, left: u_left, t: t.clone(), h: h.clone() };
    match newton_solve(&sys, guess, &cfg.residual_tol, cfg.max_newton_iters) {
        Ok(out) => {
            let mut values = Vec::with_capacity((cfg.q + 1) * u_left.len());
            values.extend(u_left.iter().cloned());
            values.extend(out.x);
            Ok(StepOutcome { values, iterations: out.iterations, residual: out.residual })
        }
        Err(NewtonError::Diverged { history, .. }) => Err(GalerkinError::StepFailure {
            interval,
            time: t.to_sci(17),
            history: history.iter().map(|r| r.to_sci(4)).collect(),
        }),
        Err(NewtonError::Linear(source)) => {
            Err(GalerkinError::Linear { interval, time: t.to_sci(17), source })
        }
    }
}

/// Counters accumulated over an integration.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub max_residual: BigScalar,
}

impl SolverStats {
    fn new(ctx: &PrecisionContext) -> Self {
        SolverStats { steps: 0, newton_iterations: 0, max_newton_iterations: 0, max_residual: ctx.zero() }
    }
}

/// Sequential integrator over a uniform partition.
pub struct Integrator<'a, S: OdeSystem + ?Sized> {
    system: &'a S,
    cfg: SolverConfig,
    tables: Arc<CgTables>,
    partition: Partition,
    n: usize,
    state: BigVec,
    prev: Option<Vec<BigScalar>>,
    stats: SolverStats,
}

impl<'a, S: OdeSystem + ?Sized> Integrator<'a, S> {
    pub fn new(
        system: &'a S,
        u0: &[BigScalar],
        t0: &BigScalar,
        t_end: &BigScalar,
        cfg: &SolverConfig,
    ) -> Result<Self, GalerkinError> {
        cfg.validate()?;
        let ctx = cfg.ctx;
        if u0.len() != system.dim() {
            return Err(GalerkinError::Config(format!(
                "initial state has {} components, problem has {}",
                u0.len(),
                system.dim()
            )));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(GalerkinError::Config("initial state is not finite".into()));
        }
        let partition = Partition::uniform(ctx.convert(t0), cfg.dt.clone(), ctx.convert(t_end))?;
        Ok(Integrator {
            system,
            tables: CgTables::get(cfg.q, &ctx)?,
            cfg: cfg.clone(),
            partition,
            n: 0,
            state: u0.iter().map(|v| ctx.convert(v)).collect(),
            prev: None,
            stats: SolverStats::new(&ctx),
        })
    }

    /// Continues from a checkpoint written by the same configuration.
    pub fn resume(system: &'a S, cp: &Checkpoint, cfg: &SolverConfig) -> Result<Self, GalerkinError> {
        let mut it = Integrator::new(system, &cp.state, &cp.partition.t0, &cp.partition.t_end, cfg)?;
        if it.partition != cp.partition || cp.q != cfg.q || cp.digits != cfg.ctx.digits() {
            return Err(GalerkinError::Checkpoint("checkpoint does not match the solver configuration".into()));
        }
        it.n = cp.step;
        it.prev = cp.prev.clone();
        it.stats = cp.stats.clone();
        Ok(it)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn basis(&self) -> &Arc<NodalBasis> {
        &self.tables.basis
    }

    pub fn system(&self) -> &S {
        self.system
    }

    pub fn steps_done(&self) -> usize {
        self.n
    }

    pub fn total_steps(&self) -> usize {
        self.partition.m
    }

    pub fn is_done(&self) -> bool {
        self.n >= self.partition.m
    }

    /// Current time `t_n`.
    pub fn time(&self) -> BigScalar {
        self.partition.time(self.n)
    }

    /// Current state `U(t_n)`.
    pub fn state(&self) -> &BigVec {
        &self.state
    }

    pub fn stats(&self) -> &SolverStats {
        &self.stats
    }

    /// Nodal values of the interval just completed.
    pub fn last_interval(&self) -> Option<&[BigScalar]> {
        self.prev.as_deref()
    }

    fn guess(&self, t: &BigScalar, h: &BigScalar) -> Vec<BigScalar> {
        let q = self.cfg.q;
        match (&self.cfg.guess, &self.prev) {
            (InitialGuess::Extrapolate, Some(prev)) => {
                let d = self.state.len();
                let a = self.partition.time(self.n - 1);
                let hp = t - &a;
                let mut out = Vec::with_capacity(q * d);
                for x in &self.tables.basis.nodes()[1..] {
                    let tau = &(&hp + &(h * x)) / &hp;
                    out.extend(crate::quadrature::lagrange_eval(&self.tables.basis, prev, d, &tau).into_inner());
                }
                out
            }
            _ => (0..q).flat_map(|_| self.state.iter().cloned()).collect(),
        }
    }

    /// Advances one interval; returns its nodal values.
    pub fn step(&mut self) -> Result<&[BigScalar], GalerkinError> {
        if self.is_done() {
            return Err(GalerkinError::Config("integration already reached the final time".into()));
        }
        let t = self.partition.time(self.n);
        let h = &self.partition.time(self.n + 1) - &t;
        let guess = self.guess(&t, &h);
        let out = step_with(self.system, &self.tables, &self.state, &t, &h, &self.cfg, guess, self.n)?;
        let d = self.state.len();
        self.state = out.values[out.values.len() - d..].iter().cloned().collect();
        self.stats.steps += 1;
        self.stats.newton_iterations += out.iterations;
        self.stats.max_newton_iterations = self.stats.max_newton_iterations.max(out.iterations);
        self.stats.max_residual = self.stats.max_residual.max(&out.residual);
        self.n += 1;
        self.prev = Some(out.values);
        Ok(self.prev.as_deref().unwrap())
    }

    /// Runs to the end, handing each interval to `sink`.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(usize, &[BigScalar]) -> Result<(), GalerkinError>,
    ) -> Result<(), GalerkinError> {
        while !self.is_done() {
            let m = self.n;
            let vals = self.step()?;
            sink(m, vals)?;
        }
        Ok(())
    }

    /// Steps until `t_n ≥ t` and returns the window from the interval
    /// containing the previous position through the current one.
    pub fn segment_until(&mut self, t: &BigScalar) -> Result<Trajectory, GalerkinError> {
        let ctx = self.cfg.ctx;
        let d = self.state.len();
        let q = self.cfg.q;
        let (first, mut values) = match &self.prev {
            Some(p) => (self.n - 1, p.clone()),
            None => (self.n, Vec::new()),
        };
        let t = ctx.convert(t);
        while !self.is_done() && (self.time() < t || values.is_empty()) {
            let vals = self.step()?;
            if values.is_empty() {
                values.extend_from_slice(vals);
            } else {
                values.extend_from_slice(&vals[d..]);
            }
        }
        debug_assert_eq!((values.len() / d - 1) % q, 0);
        Ok(Trajectory::new(self.tables.basis.clone(), d, self.partition.clone(), first, values, self.meta(None))?)
    }

    /// Trajectory metadata for this run.
    pub fn meta(&self, u0: Option<&BigVec>) -> TrajectoryMeta {
        let m = self.system.meta();
        TrajectoryMeta {
            problem: m.name,
            params: m.params,
            u0: u0.cloned().unwrap_or_else(|| self.state.clone()),
            config: self.cfg.to_pairs(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.n,
            digits: self.cfg.ctx.digits(),
            q: self.cfg.q,
            partition: self.partition.clone(),
            state: self.state.clone(),
            prev: self.prev.clone(),
            stats: self.stats.clone(),
            extra: Vec::new(),
        }
    }
}

/// Integrates over `[0, T]` and keeps the whole trajectory.
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    u0: &[BigScalar],
    t_final: &BigScalar,
    cfg: &SolverConfig,
) -> Result<(Trajectory, SolverStats), GalerkinError> {
    let ctx = cfg.ctx;
    let mut it = Integrator::new(system, u0, &ctx.zero(), t_final, cfg)?;
    let meta = it.meta(None);
    let d = u0.len();
    let mut values: Vec<BigScalar> = it.state().iter().cloned().collect();
    values.reserve(it.total_steps() * cfg.q * d);
    it.run(|_, vals| {
        values.extend_from_slice(&vals[d..]);
        Ok(())
    })?;
    let stats = it.stats().clone();
    let traj = Trajectory::new(it.basis().clone(), d, it.partition().clone(), 0, values, meta)?;
    Ok((traj, stats))
}

/// Integrates over `[0, T]` keeping only the final state.
pub fn integrate_final<S: OdeSystem + ?Sized>(
    system: &S,
    u0: &[BigScalar],
    t_final: &BigScalar,
    cfg: &SolverConfig,
) -> Result<(BigVec, SolverStats), GalerkinError> {
    let ctx = cfg.ctx;
    let mut it = Integrator::new(system, u0, &ctx.zero(), t_final, cfg)?;
    it.run(|_, _| Ok(()))?;
    Ok((it.state().clone(), it.stats().clone()))
}

/// `U̇(t) − f(U(t), t)`; one-sided (left interval) at partition points.
pub fn residual<S: OdeSystem + ?Sized>(
    traj: &Trajectory,
    system: &S,
    t: &BigScalar,
) -> Result<BigVec, GalerkinError> {
    let ctx = traj.context();
    let t = ctx.convert(t);
    let du = traj.derivative(&t, 1)?.value;
    let u = traj.evaluate(&t)?;
    Ok(du.sub(&system.rhs(&u, &t)))
}

/// Divergence search that integrates both runs alongside the sampling, so
/// only a short window of each trajectory is ever held in memory.
pub fn stream_divergence<A: OdeSystem + ?Sized, B: OdeSystem + ?Sized>(
    a: &mut Integrator<'_, A>,
    b: &mut Integrator<'_, B>,
    tol: &BigScalar,
    sample_dt: &BigScalar,
) -> Result<DivergenceReport, GalerkinError> {
    let ctx = finer(&a.config().ctx, &b.config().ctx);
    let start = ctx.convert(&a.time()).max(&ctx.convert(&b.time()));
    let end = ctx.convert(&a.partition().t_end).min(&ctx.convert(&b.partition().t_end));
    let mut search = DivergenceSearch::new(ctx, start.clone(), ctx.convert(tol), ctx.convert(sample_dt))?;
    let gap = |wa: &Trajectory, wb: &Trajectory, t: &BigScalar| -> Result<BigScalar, TrajectoryError> {
        Ok(vec_gap(&wa.evaluate(t)?, &wb.evaluate(t)?, &ctx))
    };
    // Windows reaching the first sample time.
    let mut wa = a.segment_until(&start)?;
    let mut wb = b.segment_until(&start)?;
    while let Some(t) = search.next_sample(&end) {
        if t > wa.t_end() {
            wa = a.segment_until(&t)?;
        }
        if t > wb.t_end() {
            wb = b.segment_until(&t)?;
        }
        let g = gap(&wa, &wb, &t)?;
        if let Some(bracket) = search.record(t, g) {
            let lo = bracket.lo().cloned();
            // The bisection range (lo, t] lies in the current windows unless a
            // window started after lo; in that case the previous window is gone,
            // but lo ≥ window start holds because each window starts at or
            // before the previous sample.
            if let Some(lo) = &lo {
                debug_assert!(*lo >= ctx.convert(&wa.t_start()) && *lo >= ctx.convert(&wb.t_start()));
            }
            let t_div = bracket.refine(|s| gap(&wa, &wb, s))?;
            return Ok(search.report(Some(t_div)));
        }
    }
    Ok(search.report(None))
}

/// Resumable solver state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub digits: u32,
    pub q: usize,
    pub partition: Partition,
    pub state: BigVec,
    pub prev: Option<Vec<BigScalar>>,
    pub stats: SolverStats,
    /// Caller data, e.g. an output file offset.
    pub extra: Vec<(String, String)>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    fn render(&self) -> String {
        let join = |v: &[BigScalar]| v.iter().map(|x| x.to_decimal()).collect::<Vec<_>>().join(" ");
        let p = &self.partition;
        let mut s = format!(
            "# lorenz-cg checkpoint\nversion={CHECKPOINT_VERSION}\ndigits={}\nq={}\nstep={}\n\
             partition={} {} {}\nstate={}\nprev={}\nstats={} {} {} {}\n",
            self.digits,
            self.q,
            self.step,
            p.t0.to_decimal(),
            p.dt.to_decimal(),
            p.t_end.to_decimal(),
            join(&self.state),
            self.prev.as_deref().map(join).unwrap_or_default(),
            self.stats.steps,
            self.stats.newton_iterations,
            self.stats.max_newton_iterations,
            self.stats.max_residual.to_decimal(),
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("extra.{k}={v}\n"));
        }
        s.push_str("end\n");
        s
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), GalerkinError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.render().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GalerkinError> {
        let text = fs::read_to_string(path)?;
        if !text.lines().any(|l| l == "end") {
            return Err(GalerkinError::Checkpoint("file is incomplete".into()));
        }
        let mut kv = HashMap::new();
        let mut extra = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && *l != "end") {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GalerkinError::Checkpoint(format!("bad line {line:?}")))?;
            match k.strip_prefix("extra.") {
                Some(k) => extra.push((k.to_string(), v.to_string())),
                None => {
                    kv.insert(k.to_string(), v.to_string());
                }
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| GalerkinError::Checkpoint(format!("missing {k}")));
        let int = |k: &str| -> Result<usize, GalerkinError> {
            get(k)?.parse().map_err(|_| GalerkinError::Checkpoint(format!("bad {k}")))
        };
        if int("version")? != CHECKPOINT_VERSION as usize {
            return Err(GalerkinError::Checkpoint(format!("unsupported version {}", get("version")?)));
        }
        let digits = int("digits")? as u32;
        let ctx = PrecisionContext::new(digits)?;
        let nums = |k: &str| -> Result<Vec<BigScalar>, GalerkinError> {
            Ok(get(k)?.split_whitespace().map(|s| ctx.parse(s)).collect::<Result<Vec<_>, _>>()?)
        };
        let part = nums("partition")?;
        if part.len() != 3 {
            return Err(GalerkinError::Checkpoint("bad partition".into()));
        }
        let partition = Partition::uniform(part[0].clone(), part[1].clone(), part[2].clone())?;
        let prev = nums("prev")?;
        let st: Vec<&str> = get("stats")?.split_whitespace().collect();
        if st.len() != 4 {
            return Err(GalerkinError::Checkpoint("bad stats".into()));
        }
        let p = |s: &str| s.parse::<usize>().map_err(|_| GalerkinError::Checkpoint("bad stats".into()));
        let stats = SolverStats {
            steps: p(st[0])?,
            newton_iterations: p(st[1])?,
            max_newton_iterations: p(st[2])?,
            max_residual: ctx.parse(st[3])?,
        };
        Ok(Checkpoint {
            step: int("step")?,
            digits,
            q: int("q")?,
            partition,
            state: nums("state")?.into(),
            prev: if prev.is_empty() { None } else { Some(prev) },
            stats,
            extra,
        })
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
