//! Computability model
//!
//! ```text
//! E ≈ [C1 ‖U(0) − u(0)‖ + C2(q) k^(2q) + C3(q) k^(−1/2) ε_mach] · 10^(γT)
//! ```
//!
//! with calibration from step-size sweeps, the optimal step that balances
//! the two error terms, and the resulting computability horizon.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::precision::{BigScalar, PrecisionContext, PrecisionError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Working precision of model arithmetic; the magnitudes involved are large
/// but only a handful of digits are meaningful.
pub const MODEL_DIGITS: u32 = 30;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("fit needs at least 2 positive points in the window, found {0}")]
    TooFewPoints(usize),
    #[error("fit input is not positive: ({x}, {y})")]
    NonPositive { x: String, y: String },
    #[error("calibration of q = {q}: {reason}")]
    Regime { q: usize, reason: String },
    #[error("target accuracy {target} must exceed machine epsilon {eps}")]
    Domain { target: String, eps: String },
    #[error("model file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error(transparent)]
    Precision(#[from] PrecisionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn model_ctx() -> PrecisionContext {
    PrecisionContext::new(MODEL_DIGITS).expect("valid digit count")
}

/// Final-time error of one run in a step-size sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub q: usize,
    pub dt: BigScalar,
    pub eps: BigScalar,
    pub t: BigScalar,
    pub error: BigScalar,
}

/// How the abscissa enters [`fit_loglog_slope`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    /// `log10 y` against `log10 x`.
    LogLog,
    /// `log10 y` against `x` (growth rates in decades per unit).
    SemiLog,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square deviation in `log10 y`.
    pub residual: f64,
    pub points: usize,
}

/// Least squares line through `(log10 x, log10 y)` (or `(x, log10 y)`),
/// keeping only points with `lo ≤ x ≤ hi`.
///
/// The regression runs on decimal logarithms in `f64`; only the logs need to
/// fit there, so values like `10^-400` are fine.
pub fn fit_loglog_slope(
    points: &[(BigScalar, BigScalar)],
    window: Option<(&BigScalar, &BigScalar)>,
    mode: FitMode,
) -> Result<LineFit, ModelError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in points {
        if let Some((lo, hi)) = window {
            let c = x.context();
            if *x < c.convert(lo) || *x > c.convert(hi) {
                continue;
            }
        }
        let zero = y.context().zero();
        let x_ok = mode == FitMode::SemiLog || *x > x.context().zero();
        if !(*y > zero) || !x_ok {
            return Err(ModelError::NonPositive { x: x.to_sci(6), y: y.to_sci(6) });
        }
        xs.push(match mode {
            FitMode::LogLog => x.log10_abs_f64(),
            FitMode::SemiLog => x.to_f64(),
        });
        ys.push(y.log10_abs_f64());
    }
    line_fit(&xs, &ys)
}

fn line_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit, ModelError> {
    let n = xs.len();
    if n < 2 {
        return Err(ModelError::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(ModelError::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LineFit { slope, intercept, residual: (ss / n as f64).sqrt(), points: n })
}

/// Constants of the model. Degrees without a calibrated entry fall back to
/// `c2_default` and `c3_base + c3_slope·q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModel {
    pub c1: BigScalar,
    pub c2: BTreeMap<usize, BigScalar>,
    pub c3: BTreeMap<usize, BigScalar>,
    pub c2_default: BigScalar,
    pub c3_base: BigScalar,
    pub c3_slope: BigScalar,
    /// Fitted discretization slopes (reported; evaluation uses `2q`).
    pub alpha: BTreeMap<usize, f64>,
    /// Fitted round-off slope (reported; evaluation uses `−1/2`).
    pub beta: f64,
    /// Decades of error growth per unit time.
    pub gamma: BigScalar,
}

impl ErrorModel {
    /// `C1 = 0.5`, `C2 = 0.001`, `C3 = 0.002 + 0.0005q`, `γ = 0.388`.
    pub fn paper() -> Self {
        let c = model_ctx();
        let p = |s: &str| c.parse(s).expect("literal");
        ErrorModel {
            c1: p("0.5"),
            c2: BTreeMap::new(),
            c3: BTreeMap::new(),
            c2_default: p("0.001"),
            c3_base: p("0.002"),
            c3_slope: p("0.0005"),
            alpha: BTreeMap::new(),
            beta: -0.5,
            gamma: p("0.388"),
        }
    }

    /// [`paper`](Self::paper) plus the per-degree values measured at `T = 40`
    /// for `q = 2..5`.
    pub fn paper_tables() -> Self {
        let mut m = Self::paper();
        let c = model_ctx();
        let rows = [
            (2, "0.000356", "0.0031", 4.04),
            (3, "0.000135", "0.0036", 5.46),
            (4, "0.000032", "0.0042", 8.15),
            (5, "0.000007", "0.0048", 10.00),
        ];
        for (q, c2, c3, a) in rows {
            m.c2.insert(q, c.parse(c2).expect("literal"));
            m.c3.insert(q, c.parse(c3).expect("literal"));
            m.alpha.insert(q, a);
        }
        m.beta = -0.49;
        m
    }

    pub fn context(&self) -> PrecisionContext {
        self.c1.context()
    }

    pub fn c2_for(&self, q: usize) -> BigScalar {
        self.c2.get(&q).cloned().unwrap_or_else(|| self.c2_default.clone())
    }

    pub fn c3_for(&self, q: usize) -> BigScalar {
        self.c3.get(&q).cloned().unwrap_or_else(|| &self.c3_base + &self.c3_slope.mul_i64(q as i64))
    }

    /// `10^(γT)`.
    pub fn growth(&self, t: &BigScalar) -> BigScalar {
        let c = self.context();
        c.from_i64(10).pow(&(&self.gamma * &c.convert(t)))
    }

    /// The bracketed error before growth.
    pub fn bracket(&self, data_err: &BigScalar, q: usize, dt: &BigScalar, eps: &BigScalar) -> BigScalar {
        let c = self.context();
        let dt = c.convert(dt);
        let disc = &self.c2_for(q) * &dt.powi(2 * q as i64);
        let comp = &(&self.c3_for(q) * &c.convert(eps)) / &dt.sqrt();
        &(&(&self.c1 * &c.convert(data_err)) + &disc) + &comp
    }

    /// Step size where the discretization and round-off terms are equal,
    /// `(C3 ε / C2)^(1/(2q + 1/2))`.
    pub fn optimal_timestep(&self, q: usize, eps: &BigScalar) -> BigScalar {
        let c = self.context();
        let base = &(&self.c3_for(q) * &c.convert(eps)) / &self.c2_for(q);
        base.pow(&(c.one() / (c.from_i64(4 * q as i64 + 1) / c.from_i64(2))))
    }

    /// Time at which the error at the optimal step reaches `target`.
    pub fn horizon(&self, q: usize, eps: &BigScalar, target: &BigScalar) -> Result<BigScalar, ModelError> {
        let c = self.context();
        let (eps, target) = (c.convert(eps), c.convert(target));
        if target <= eps {
            return Err(ModelError::Domain { target: target.to_sci(6), eps: eps.to_sci(6) });
        }
        let k = self.optimal_timestep(q, &eps);
        let b = self.bracket(&c.zero(), q, &k, &eps);
        Ok(&(&target / &b).log10() / &self.gamma)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = |x: &BigScalar| x.to_decimal();
        let _ = writeln!(s, "# lorenz-cg error model");
        let _ = writeln!(s, "version={MODEL_FORMAT_VERSION}");
        let _ = writeln!(s, "digits={}", self.context().digits());
        let _ = writeln!(s, "c1={}", d(&self.c1));
        let _ = writeln!(s, "gamma={}", d(&self.gamma));
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "c2_default={}", d(&self.c2_default));
        let _ = writeln!(s, "c3_base={}", d(&self.c3_base));
        let _ = writeln!(s, "c3_slope={}", d(&self.c3_slope));
        for (q, v) in &self.c2 {
            let _ = writeln!(s, "c2.{q}={}", d(v));
        }
        for (q, v) in &self.c3 {
            let _ = writeln!(s, "c3.{q}={}", d(v));
        }
        for (q, v) in &self.alpha {
            let _ = writeln!(s, "alpha.{q}={v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut m = ErrorModel::paper();
        m.c2.clear();
        m.c3.clear();
        m.alpha.clear();
        let mut ctx = model_ctx();
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| ModelError::Malformed { line: i + 1, msg: msg.to_string() };
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let num = |ctx: &PrecisionContext| ctx.parse(value).map_err(|_| bad("bad number"));
            let float = || value.parse::<f64>().map_err(|_| bad("bad number"));
            let degree = |k: &str| k.parse::<usize>().map_err(|_| bad("bad degree"));
            match key {
                "version" => {
                    let v: u32 = value.parse().map_err(|_| bad("bad version"))?;
                    if v != MODEL_FORMAT_VERSION {
                        return Err(ModelError::Version(v));
                    }
                    version = Some(v);
                }
                "digits" => {
                    ctx = PrecisionContext::new(value.parse().map_err(|_| bad("bad digits"))?)?;
                    m = ErrorModel { c2: BTreeMap::new(), c3: BTreeMap::new(), alpha: BTreeMap::new(), ..m.convert(&ctx) };
                }
                "c1" => m.c1 = num(&ctx)?,
                "gamma" => m.gamma = num(&ctx)?,
                "beta" => m.beta = float()?,
                "c2_default" => m.c2_default = num(&ctx)?,
                "c3_base" => m.c3_base = num(&ctx)?,
                "c3_slope" => m.c3_slope = num(&ctx)?,
                _ => {
                    if let Some(q) = key.strip_prefix("c2.") {
                        m.c2.insert(degree(q)?, num(&ctx)?);
                    } else if let Some(q) = key.strip_prefix("c3.") {
                        m.c3.insert(degree(q)?, num(&ctx)?);
                    } else if let Some(q) = key.strip_prefix("alpha.") {
                        m.alpha.insert(degree(q)?, float()?);
                    } else {
                        return Err(bad(&format!("unknown key {key:?}")));
                    }
                }
            }
        }
        if version.is_none() {
            return Err(ModelError::Malformed { line: 0, msg: "missing version".into() });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn convert(&self, ctx: &PrecisionContext) -> Self {
        let c = |x: &BigScalar| ctx.convert(x);
        ErrorModel {
            c1: c(&self.c1),
            c2: self.c2.iter().map(|(q, v)| (*q, c(v))).collect(),
            c3: self.c3.iter().map(|(q, v)| (*q, c(v))).collect(),
            c2_default: c(&self.c2_default),
            c3_base: c(&self.c3_base),
            c3_slope: c(&self.c3_slope),
            alpha: self.alpha.clone(),
            beta: self.beta,
            gamma: c(&self.gamma),
        }
    }
}

/// The model evaluated at `(q, k, ε_mach, T)`.
pub fn eval_model(
    model: &ErrorModel,
    data_err: &BigScalar,
    q: usize,
    dt: &BigScalar,
    eps: &BigScalar,
    t: &BigScalar,
) -> BigScalar {
    &model.bracket(data_err, q, dt, eps) * &model.growth(t)
}

/// `((2 + q/2) ε_mach)^(1/(2q + 1/2))`.
pub fn optimal_timestep(q: usize, eps: &BigScalar) -> BigScalar {
    let c = eps.context();
    let base = &(&c.from_i64(4 + q as i64) / &c.from_i64(2)) * eps;
    base.pow(&(c.from_i64(2) / c.from_i64(4 * q as i64 + 1)))
}

/// `T = 2.5 n_mach`, or with a target accuracy `ε`,
/// `T_ε = (n_mach + log10(ε/0.002)) / 0.4`, where `n_mach = −log10 ε_mach`.
pub fn computability(eps: &BigScalar, target: Option<&BigScalar>) -> Result<BigScalar, ModelError> {
    let c = eps.context();
    let n_mach = -eps.log10();
    match target {
        None => Ok(&n_mach * &(c.from_i64(5) / c.from_i64(2))),
        Some(target) => {
            let target = c.convert(target);
            if target <= *eps {
                return Err(ModelError::Domain { target: target.to_sci(6), eps: eps.to_sci(6) });
            }
            let shift = (&target / &c.parse("0.002")?).log10();
            Ok(&(&n_mach + &shift) / &c.parse("0.4")?)
        }
    }
}

/// Pessimistic a priori bound `e^(LT) ε`.
pub fn apriori_bound(l: &BigScalar, t: &BigScalar, eps: &BigScalar) -> BigScalar {
    let c = eps.context();
    &(&c.convert(l) * &c.convert(t)).exp() * eps
}

/// Splits a sweep (sorted by step) into its round-off and discretization
/// branches: the contiguous runs of falling and rising local slopes on
/// either side of the smallest error. The minimum itself joins neither.
pub fn split_regimes(points: &[SweepPoint]) -> Option<(Vec<SweepPoint>, Vec<SweepPoint>)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.dt.partial_cmp(&b.dt).expect("finite steps"));
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let lg = |p: &SweepPoint| p.error.log10_abs_f64();
    let low = (0..n).min_by(|&i, &j| lg(&pts[i]).total_cmp(&lg(&pts[j])))?;
    let mut left = low;
    while left > 0 && lg(&pts[left - 1]) > lg(&pts[left]) {
        left -= 1;
    }
    let mut right = low;
    while right + 1 < n && lg(&pts[right + 1]) > lg(&pts[right]) {
        right += 1;
    }
    if left == low || right == low {
        return None;
    }
    Some((pts[left..low].to_vec(), pts[low + 1..=right].to_vec()))
}

/// Fits the model constants to sweeps. Each degree needs both branches of
/// the error curve; `C2`, `C3` use the fixed exponents `2q` and `−1/2`.
/// `sd_growth` holds `(T, S_D(T))` samples for `C1`; without them the default
/// value 0.5 is kept.
pub fn calibrate(
    sweeps: &[SweepPoint],
    gamma: &BigScalar,
    sd_growth: &[(BigScalar, BigScalar)],
) -> Result<ErrorModel, ModelError> {
    let c = model_ctx();
    let mut model = ErrorModel::paper();
    model.gamma = c.convert(gamma);
    let mut groups: BTreeMap<usize, Vec<SweepPoint>> = BTreeMap::new();
    for p in sweeps {
        groups.entry(p.q).or_default().push(p.clone());
    }
    let gamma_f = model.gamma.to_f64();
    let mut betas = Vec::new();
    for (q, pts) in &groups {
        let q = *q;
        let (round, disc) = split_regimes(pts).ok_or_else(|| ModelError::Regime {
            q,
            reason: "no change of sign in the local slope (need a round-off and a discretization branch)".into(),
        })?;
        // log10(E) − γT removes the growth factor
        let scaled = |p: &SweepPoint| p.error.log10_abs_f64() - gamma_f * p.t.to_f64();
        let xy = |set: &[SweepPoint]| -> (Vec<f64>, Vec<f64>) {
            set.iter().map(|p| (p.dt.log10_abs_f64(), scaled(p))).unzip()
        };
        let (xd, yd) = xy(&disc);
        let (xr, yr) = xy(&round);
        if xd.len() >= 2 {
            model.alpha.insert(q, line_fit(&xd, &yd)?.slope);
        }
        if xr.len() >= 2 {
            betas.push(line_fit(&xr, &yr)?.slope);
        }
        let two_q = 2.0 * q as f64;
        let (c2, c3) = match joint_fit(&c, q, pts, &round, &disc, &model.gamma) {
            Some(v) => v,
            None => {
                let c2 = mean(xd.iter().zip(&yd).map(|(x, y)| y - two_q * x));
                let c3 = mean(
                    round.iter().zip(xr.iter().zip(&yr)).map(|(p, (x, y))| y + 0.5 * x - p.eps.log10_abs_f64()),
                );
                (pow10_f64(&c, c2)?, pow10_f64(&c, c3)?)
            }
        };
        model.c2.insert(q, c2);
        model.c3.insert(q, c3);
    }
    if !betas.is_empty() {
        model.beta = mean(betas.iter().copied());
    }
    if !sd_growth.is_empty() {
        let logs = sd_growth.iter().map(|(t, s)| s.log10_abs_f64() - gamma_f * t.to_f64());
        model.c1 = pow10_f64(&c, mean(logs))?;
    }
    Ok(model)
}

/// Relative least squares for `E·10^(−γT) ≈ C2 k^(2q) + C3 ε k^(−1/2)` over
/// both branches and the minimum. `None` if a constant comes out nonpositive.
fn joint_fit(
    c: &PrecisionContext,
    q: usize,
    all: &[SweepPoint],
    round: &[SweepPoint],
    disc: &[SweepPoint],
    gamma: &BigScalar,
) -> Option<(BigScalar, BigScalar)> {
    let lo = round.first()?.dt.clone();
    let hi = disc.last()?.dt.clone();
    let (mut aa, mut ab, mut bb, mut ra, mut rb) = (c.zero(), c.zero(), c.zero(), c.zero(), c.zero());
    for p in all.iter().filter(|p| p.dt >= lo && p.dt <= hi) {
        let dt = c.convert(&p.dt);
        let e = &c.convert(&p.error) / &c.from_i64(10).pow(&(gamma * &c.convert(&p.t)));
        let a = &dt.powi(2 * q as i64) / &e;
        let b = &(&c.convert(&p.eps) / &dt.sqrt()) / &e;
        aa.add_mul(&a, &a);
        ab.add_mul(&a, &b);
        bb.add_mul(&b, &b);
        ra += &a;
        rb += &b;
    }
    let det = &(&aa * &bb) - &(&ab * &ab);
    if det.is_zero() {
        return None;
    }
    let c2 = &(&(&ra * &bb) - &(&rb * &ab)) / &det;
    let c3 = &(&(&rb * &aa) - &(&ra * &ab)) / &det;
    (c2 > c.zero() && c3 > c.zero()).then_some((c2, c3))
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn pow10_f64(c: &PrecisionContext, e: f64) -> Result<BigScalar, ModelError> {
    Ok(c.from_i64(10).pow(&c.parse(&format!("{e:.17e}"))?))
}
