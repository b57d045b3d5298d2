//! Piecewise-polynomial solutions on a uniform partition: evaluation,
//! differentiation, divergence detection and a decimal-exact text format.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::precision::{BigScalar, BigVec, PrecisionContext, PrecisionError};
use crate::quadrature::{lagrange_eval, NodalBasis, QuadratureError};

pub const FORMAT_VERSION: u32 = 1;

/// Default spacing of gap samples in [`divergence_time`].
pub const DEFAULT_SAMPLE_DT: &str = "0.25";

/// Bisection halvings inside the bracketing sample interval.
pub const BISECTION_STEPS: u32 = 20;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("time {t} is outside the trajectory span [{start}, {end}]")]
    OutOfSpan { t: String, start: String, end: String },
    #[error("derivative order {order} exceeds polynomial degree {q}")]
    OrderTooHigh { order: usize, q: usize },
    #[error("trajectory spans do not overlap")]
    NoOverlap,
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("unsupported trajectory format version {found} (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("trajectory file is truncated: {0}")]
    Truncated(String),
    #[error("file holds {file} digits but the requested context has {context}")]
    PrecisionMismatch { file: u32, context: u32 },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("interval {interval} does not start at the end value of the previous interval")]
    Discontinuity { interval: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Precision(#[from] PrecisionError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Problem description carried with a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub problem: String,
    pub params: Vec<(String, BigScalar)>,
    pub u0: BigVec,
    /// Free-form `config.*` entries (solver settings, provenance).
    pub config: Vec<(String, String)>,
}

/// Uniform partition `t_n = t0 + n·dt` for `n < m`, with `t_m = t_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub t0: BigScalar,
    pub dt: BigScalar,
    pub t_end: BigScalar,
    pub m: usize,
}

impl Partition {
    /// Number of steps: `ceil((t_end − t0)/dt)`, except that a quotient within
    /// rounding distance of an integer counts as that integer.
    pub fn uniform(t0: BigScalar, dt: BigScalar, t_end: BigScalar) -> Result<Self, TrajectoryError> {
        let ctx = t0.context();
        if !(t_end > t0) {
            return Err(TrajectoryError::Invalid("empty time interval".into()));
        }
        if !(dt > ctx.zero()) {
            return Err(TrajectoryError::Invalid("time step must be positive".into()));
        }
        let ratio = &(&t_end - &t0) / &dt;
        let r = ratio.to_f64();
        if !r.is_finite() || r > 1e12 {
            return Err(TrajectoryError::Invalid(format!("too many steps ({r:e})")));
        }
        let nearest = r.round().max(1.0);
        let slack = ctx.eps().mul_i64(1000) * &ratio.max(&ctx.one());
        let m = if (&ratio - &ctx.from_f64(nearest)).abs() <= slack { nearest } else { r.ceil() };
        Ok(Partition { t0, dt, t_end, m: m as usize })
    }

    pub fn time(&self, n: usize) -> BigScalar {
        if n >= self.m {
            self.t_end.clone()
        } else {
            &self.t0 + &self.dt.mul_i64(n as i64)
        }
    }

    pub fn context(&self) -> PrecisionContext {
        self.t0.context()
    }
}

/// Result of [`Trajectory::derivative`].
#[derive(Clone, Debug)]
pub struct Derivative {
    pub value: BigVec,
    /// `t` sits on an interior partition point and the value is the
    /// left-interval derivative.
    pub one_sided: bool,
}

/// Continuous piecewise polynomial of degree `q` on a uniform partition.
///
/// Nodal values are stored node-major with shared interval endpoints, so
/// continuity holds by construction. A trajectory may cover only the
/// intervals `first..first + len` of its partition (a window).
#[derive(Clone, Debug)]
pub struct Trajectory {
    basis: Arc<NodalBasis>,
    dim: usize,
    partition: Partition,
    first: usize,
    len: usize,
    values: Vec<BigScalar>,
    meta: TrajectoryMeta,
}

impl Trajectory {
    /// `values` holds `(len·q + 1)·dim` scalars for intervals `first..first+len`.
    pub fn new(
        basis: Arc<NodalBasis>,
        dim: usize,
        partition: Partition,
        first: usize,
        values: Vec<BigScalar>,
        meta: TrajectoryMeta,
    ) -> Result<Self, TrajectoryError> {
        let q = basis.degree();
        if dim == 0 || q == 0 || values.len() < (q + 1) * dim || (values.len() / dim - 1) % q != 0 || values.len() % dim != 0 {
            return Err(TrajectoryError::Invalid(format!(
                "{} values do not fit degree {q}, dimension {dim}",
                values.len()
            )));
        }
        let len = (values.len() / dim - 1) / q;
        if first + len > partition.m {
            return Err(TrajectoryError::Invalid("more intervals than the partition holds".into()));
        }
        let bits = basis.context().bits();
        if partition.context().bits() != bits || values.iter().any(|v| v.context().bits() != bits) {
            return Err(TrajectoryError::Invalid("mixed precision contexts".into()));
        }
        Ok(Trajectory { basis, dim, partition, first, len, values, meta })
    }

    pub fn context(&self) -> PrecisionContext {
        self.basis.context()
    }

    pub fn q(&self) -> usize {
        self.basis.degree()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &Arc<NodalBasis> {
        &self.basis
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut TrajectoryMeta {
        &mut self.meta
    }

    /// Number of stored intervals.
    pub fn intervals(&self) -> usize {
        self.len
    }

    /// Partition index of the first stored interval.
    pub fn first_interval(&self) -> usize {
        self.first
    }

    /// Start time of stored interval `m` (local index); `m = intervals()` gives the end.
    pub fn node_time(&self, m: usize) -> BigScalar {
        self.partition.time(self.first + m)
    }

    pub fn t_start(&self) -> BigScalar {
        self.node_time(0)
    }

    pub fn t_end(&self) -> BigScalar {
        self.node_time(self.len)
    }

    /// Nodal values of stored interval `m`, node-major.
    pub fn interval_values(&self, m: usize) -> &[BigScalar] {
        let q = self.q();
        &self.values[m * q * self.dim..((m + 1) * q + 1) * self.dim]
    }

    pub fn values(&self) -> &[BigScalar] {
        &self.values
    }

    /// State at the end of the trajectory.
    pub fn final_state(&self) -> BigVec {
        self.values[self.values.len() - self.dim..].iter().cloned().collect()
    }

    pub fn initial_state(&self) -> BigVec {
        self.values[..self.dim].iter().cloned().collect()
    }

    /// Interval containing `t` (left-continuous: `t ∈ (t_m, t_{m+1}]`) and
    /// the local coordinate `τ ∈ [0, 1]`.
    pub fn locate(&self, t: &BigScalar) -> Result<(usize, BigScalar), TrajectoryError> {
        let ctx = self.context();
        let t = ctx.convert(t);
        let (start, end) = (self.t_start(), self.t_end());
        if t < start || t > end {
            return Err(TrajectoryError::OutOfSpan { t: t.to_sci(17), start: start.to_sci(17), end: end.to_sci(17) });
        }
        let guess = ((&t - &start) / &self.partition.dt).to_f64().floor();
        let mut m = if guess.is_finite() && guess > 0.0 { (guess as usize).min(self.len - 1) } else { 0 };
        while m > 0 && t <= self.node_time(m) {
            m -= 1;
        }
        while m + 1 < self.len && t > self.node_time(m + 1) {
            m += 1;
        }
        let a = self.node_time(m);
        let h = &self.node_time(m + 1) - &a;
        Ok((m, &(&t - &a) / &h))
    }

    pub fn evaluate(&self, t: &BigScalar) -> Result<BigVec, TrajectoryError> {
        let (m, tau) = self.locate(t)?;
        Ok(lagrange_eval(&self.basis, self.interval_values(m), self.dim, &tau))
    }

    /// `order`-th time derivative; `order ≤ q`.
    pub fn derivative(&self, t: &BigScalar, order: usize) -> Result<Derivative, TrajectoryError> {
        if order > self.q() {
            return Err(TrajectoryError::OrderTooHigh { order, q: self.q() });
        }
        self.derivative_unchecked(t, order)
    }

    /// As [`derivative`](Self::derivative) but returns zero for `order > q`.
    pub fn derivative_or_zero(&self, t: &BigScalar, order: usize) -> Result<Derivative, TrajectoryError> {
        if order > self.q() {
            let (m, tau) = self.locate(t)?;
            let one_sided = self.on_interior_node(m, &tau);
            return Ok(Derivative { value: BigVec::zeros(&self.context(), self.dim), one_sided });
        }
        self.derivative_unchecked(t, order)
    }

    fn on_interior_node(&self, m: usize, tau: &BigScalar) -> bool {
        let ctx = self.context();
        let global = self.first + m;
        (*tau == ctx.one() && global + 1 < self.partition.m) || (tau.is_zero() && global > 0)
    }

    fn derivative_unchecked(&self, t: &BigScalar, order: usize) -> Result<Derivative, TrajectoryError> {
        let (m, tau) = self.locate(t)?;
        let mut vals = self.interval_values(m).to_vec();
        for _ in 0..order {
            vals = self.basis.differentiate(&vals, self.dim);
        }
        let mut value = lagrange_eval(&self.basis, &vals, self.dim, &tau);
        if order > 0 {
            let h = &self.node_time(m + 1) - &self.node_time(m);
            let scale = h.powi(-(order as i64));
            value = value.scale(&scale);
        }
        Ok(Derivative { value, one_sided: order > 0 && self.on_interior_node(m, &tau) })
    }

    /// Writes the trajectory file.
    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        if self.first != 0 || self.len != self.partition.m {
            return Err(TrajectoryError::Invalid("only complete trajectories can be saved".into()));
        }
        let header = TrajectoryHeader::of(self);
        let mut w = TrajectoryWriter::create(path, &header)?;
        for m in 0..self.len {
            w.write_interval(m, self.interval_values(m))?;
        }
        w.finish()
    }

    /// Reads a trajectory at the precision recorded in the file.
    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        read_trajectory(path, None)
    }

    /// Reads a trajectory, refusing files whose precision differs from `ctx`.
    pub fn load_into(path: &Path, ctx: &PrecisionContext) -> Result<Self, TrajectoryError> {
        read_trajectory(path, Some(ctx))
    }
}

/// Everything in a trajectory file before the body.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryHeader {
    pub digits: u32,
    pub q: usize,
    pub dim: usize,
    pub partition: Partition,
    pub meta: TrajectoryMeta,
}

impl TrajectoryHeader {
    pub fn of(traj: &Trajectory) -> Self {
        TrajectoryHeader {
            digits: traj.context().digits(),
            q: traj.q(),
            dim: traj.dim,
            partition: traj.partition.clone(),
            meta: traj.meta.clone(),
        }
    }

    fn render(&self) -> String {
        let join = |v: &[BigScalar]| v.iter().map(|x| x.to_decimal()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        s.push_str("# lorenz-cg trajectory\n");
        s.push_str(&format!("version={FORMAT_VERSION}\n"));
        s.push_str(&format!("problem={}\n", self.meta.problem));
        s.push_str(&format!("digits={}\n", self.digits));
        s.push_str(&format!("q={}\n", self.q));
        s.push_str("basis=gauss-lobatto\n");
        s.push_str(&format!("M={}\n", self.partition.m));
        s.push_str(&format!("dim={}\n", self.dim));
        let params: Vec<String> =
            self.meta.params.iter().map(|(k, v)| format!("{k}:{}", v.to_decimal())).collect();
        s.push_str(&format!("params={}\n", params.join(" ")));
        s.push_str(&format!("u0={}\n", join(&self.meta.u0)));
        let p = &self.partition;
        s.push_str(&format!(
            "partition=uniform {} {} {}\n",
            p.t0.to_decimal(),
            p.dt.to_decimal(),
            p.t_end.to_decimal()
        ));
        for (k, v) in &self.meta.config {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        s.push_str("end_header\n");
        s
    }
}

/// Streams a trajectory file interval by interval.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
    header: TrajectoryHeader,
    next: usize,
    bytes: u64,
    sig: usize,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, header: &TrajectoryHeader) -> Result<Self, TrajectoryError> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        let text = header.render();
        out.write_all(text.as_bytes())?;
        Ok(TrajectoryWriter {
            out,
            header: header.clone(),
            next: 0,
            bytes: text.len() as u64,
            sig: PrecisionContext::new(header.digits)?.serial_digits(),
        })
    }

    /// Reopens a partially written file, discarding everything after `offset`
    /// (a value previously returned by [`bytes_written`](Self::bytes_written)).
    pub fn resume(path: &Path, header: &TrajectoryHeader, offset: u64, next_interval: usize) -> Result<Self, TrajectoryError> {
        let file = OpenOptions::new().write(true).open(path)?;
        if file.metadata()?.len() < offset {
            return Err(TrajectoryError::Truncated(format!("expected at least {offset} bytes to resume from")));
        }
        file.set_len(offset)?;
        let mut out = BufWriter::new(file);
        out.seek(SeekFrom::Start(offset))?;
        Ok(TrajectoryWriter {
            out,
            header: header.clone(),
            next: next_interval,
            bytes: offset,
            sig: PrecisionContext::new(header.digits)?.serial_digits(),
        })
    }

    pub fn write_interval(&mut self, m: usize, values: &[BigScalar]) -> Result<(), TrajectoryError> {
        let (q, dim) = (self.header.q, self.header.dim);
        if m != self.next || values.len() != (q + 1) * dim {
            return Err(TrajectoryError::Invalid(format!("unexpected interval {m} (next is {})", self.next)));
        }
        for i in 0..=q {
            for c in 0..dim {
                let line = format!("{m} {i} {c} {}\n", values[i * dim + c].to_sci(self.sig));
                self.out.write_all(line.as_bytes())?;
                self.bytes += line.len() as u64;
            }
        }
        self.next += 1;
        Ok(())
    }

    /// Bytes emitted so far (header plus complete intervals).
    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn intervals_written(&self) -> usize {
        self.next
    }

    pub fn flush(&mut self) -> Result<(), TrajectoryError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), TrajectoryError> {
        if self.next != self.header.partition.m {
            return Err(TrajectoryError::Invalid(format!(
                "wrote {} of {} intervals",
                self.next, self.header.partition.m
            )));
        }
        let count = self.header.partition.m * (self.header.q + 1) * self.header.dim;
        writeln!(self.out, "end {count}")?;
        self.out.flush()?;
        Ok(())
    }
}

fn malformed(line: usize, msg: impl Into<String>) -> TrajectoryError {
    TrajectoryError::Malformed { line, msg: msg.into() }
}

/// Parses the header block; returns the header and the number of lines read.
pub fn read_header(
    lines: &mut impl Iterator<Item = io::Result<String>>,
) -> Result<(TrajectoryHeader, usize), TrajectoryError> {
    let mut kv: Vec<(String, String)> = Vec::new();
    let mut n = 0;
    let mut closed = false;
    for line in lines.by_ref() {
        let line = line?;
        n += 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if line == "end_header" {
            closed = true;
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| malformed(n, "expected key=value"))?;
        kv.push((k.to_string(), v.to_string()));
    }
    if !closed {
        return Err(TrajectoryError::Truncated("header is incomplete".into()));
    }
    let get = |key: &str| -> Result<&str, TrajectoryError> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| TrajectoryError::Invalid(format!("missing header key {key}")))
    };
    let version = get("version")?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(TrajectoryError::Version { found: version.to_string(), expected: FORMAT_VERSION });
    }
    let num = |key: &str| -> Result<usize, TrajectoryError> {
        get(key)?.trim().parse().map_err(|_| TrajectoryError::Invalid(format!("bad value for {key}")))
    };
    let digits = num("digits")? as u32;
    let ctx = PrecisionContext::new(digits)?;
    let q = num("q")?;
    let m = num("M")?;
    let dim = num("dim")?;
    if get("basis")? != "gauss-lobatto" {
        return Err(TrajectoryError::Invalid(format!("unknown basis {}", get("basis")?)));
    }
    let mut params = Vec::new();
    for item in get("params")?.split_whitespace() {
        let (k, v) = item.split_once(':').ok_or_else(|| TrajectoryError::Invalid("bad params entry".into()))?;
        params.push((k.to_string(), ctx.parse(v)?));
    }
    let u0: BigVec = get("u0")?.split_whitespace().map(|s| ctx.parse(s)).collect::<Result<Vec<_>, _>>()?.into();
    let part: Vec<&str> = get("partition")?.split_whitespace().collect();
    if part.len() != 4 || part[0] != "uniform" {
        return Err(TrajectoryError::Invalid("partition must be 'uniform t0 dt end'".into()));
    }
    let partition = Partition::uniform(ctx.parse(part[1])?, ctx.parse(part[2])?, ctx.parse(part[3])?)?;
    if partition.m != m {
        return Err(TrajectoryError::Invalid(format!("partition has {} intervals, header says {m}", partition.m)));
    }
    let config = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let meta = TrajectoryMeta { problem: get("problem")?.to_string(), params, u0, config };
    Ok((TrajectoryHeader { digits, q, dim, partition, meta }, n))
}

fn read_trajectory(path: &Path, ctx: Option<&PrecisionContext>) -> Result<Trajectory, TrajectoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let (header, mut n) = read_header(&mut lines)?;
    if let Some(c) = ctx {
        if c.digits() != header.digits {
            return Err(TrajectoryError::PrecisionMismatch { file: header.digits, context: c.digits() });
        }
    }
    let pc = PrecisionContext::new(header.digits)?;
    let (q, dim, m_total) = (header.q, header.dim, header.partition.m);
    let expected = m_total * (q + 1) * dim;
    let mut values: Vec<BigScalar> = Vec::with_capacity((m_total * q + 1) * dim);
    let mut seen = 0usize;
    let mut footer = false;
    for line in lines {
        let line = line?;
        n += 1;
        if let Some(rest) = line.strip_prefix("end ") {
            let count: usize = rest.trim().parse().map_err(|_| malformed(n, "bad footer"))?;
            if count != expected || seen != expected {
                return Err(TrajectoryError::Truncated(format!("{seen} of {expected} records")));
            }
            footer = true;
            break;
        }
        let mut it = line.split_whitespace();
        let mut field = |name: &str| -> Result<usize, TrajectoryError> {
            it.next().and_then(|s| s.parse().ok()).ok_or_else(|| malformed(n, format!("bad {name}")))
        };
        let (mi, i, c) = (field("interval")?, field("node")?, field("component")?);
        let v = it.next().ok_or_else(|| malformed(n, "missing value"))?;
        let want = (seen / dim / (q + 1), (seen / dim) % (q + 1), seen % dim);
        if (mi, i, c) != want {
            return Err(malformed(n, format!("expected record {want:?}, found {:?}", (mi, i, c))));
        }
        let value = pc.parse(v).map_err(|e| malformed(n, e.to_string()))?;
        if i == 0 && mi > 0 {
            // shared endpoint: must repeat the previous interval's last node
            let idx = (mi * q) * dim + c;
            if values[idx] != value {
                return Err(TrajectoryError::Discontinuity { interval: mi });
            }
        } else {
            values.push(value);
        }
        seen += 1;
    }
    if !footer {
        return Err(TrajectoryError::Truncated(format!("{seen} of {expected} records, no footer")));
    }
    let basis = NodalBasis::lobatto(q, &pc)?;
    Trajectory::new(basis, dim, header.partition, 0, values, header.meta)
}

/// Outcome of a divergence search.
#[derive(Clone, Debug)]
pub struct DivergenceReport {
    /// First time the sup-gap exceeds `tol`, or `None` ("never").
    pub t_div: Option<BigScalar>,
    /// Largest gap seen at sample times before `t_div`.
    pub max_gap_before: BigScalar,
    pub tol: BigScalar,
    /// Gap at each regular sample time up to and including the first exceedance.
    pub samples: Vec<(BigScalar, BigScalar)>,
}

/// Componentwise sup-norm of `a(t) − b(t)` in the finer of the two contexts.
pub fn sup_gap(a: &Trajectory, b: &Trajectory, t: &BigScalar) -> Result<BigScalar, TrajectoryError> {
    let ctx = finer(&a.context(), &b.context());
    let ua = a.evaluate(t)?;
    let ub = b.evaluate(t)?;
    Ok(vec_gap(&ua, &ub, &ctx))
}

pub(crate) fn vec_gap(ua: &[BigScalar], ub: &[BigScalar], ctx: &PrecisionContext) -> BigScalar {
    let mut g = ctx.zero();
    for (x, y) in ua.iter().zip(ub) {
        g = g.max(&(&ctx.convert(x) - &ctx.convert(y)).abs());
    }
    g
}

pub(crate) fn finer(a: &PrecisionContext, b: &PrecisionContext) -> PrecisionContext {
    if a.bits() >= b.bits() {
        *a
    } else {
        *b
    }
}

/// Smallest sampled time where `‖a − b‖_∞ > tol`, refined by bisection.
pub fn divergence_time(
    a: &Trajectory,
    b: &Trajectory,
    tol: &BigScalar,
    sample_dt: &BigScalar,
) -> Result<DivergenceReport, TrajectoryError> {
    let ctx = finer(&a.context(), &b.context());
    let start = ctx.convert(&a.t_start()).max(&ctx.convert(&b.t_start()));
    let end = ctx.convert(&a.t_end()).min(&ctx.convert(&b.t_end()));
    if start > end {
        return Err(TrajectoryError::NoOverlap);
    }
    let mut search = DivergenceSearch::new(ctx, start, ctx.convert(tol), ctx.convert(sample_dt))?;
    while let Some(t) = search.next_sample(&end) {
        let g = sup_gap(a, b, &t)?;
        if let Some(bracket) = search.record(t, g) {
            let t_div = bracket.refine(|t| sup_gap(a, b, t))?;
            return Ok(search.report(Some(t_div)));
        }
    }
    Ok(search.report(None))
}

/// Incremental form of [`divergence_time`], for callers that produce the
/// trajectories piece by piece.
pub struct DivergenceSearch {
    ctx: PrecisionContext,
    start: BigScalar,
    tol: BigScalar,
    dt: BigScalar,
    j: i64,
    done: bool,
    last: Option<BigScalar>,
    max_gap: BigScalar,
    samples: Vec<(BigScalar, BigScalar)>,
}

/// Sample interval `(lo, hi]` with `gap(lo) ≤ tol < gap(hi)`.
pub struct Bracket {
    lo: Option<BigScalar>,
    hi: BigScalar,
    tol: BigScalar,
}

impl Bracket {
    pub fn lo(&self) -> Option<&BigScalar> {
        self.lo.as_ref()
    }

    pub fn hi(&self) -> &BigScalar {
        &self.hi
    }

    /// Bisects to `BISECTION_STEPS` halvings. The decision at each midpoint
    /// depends only on `gap(mid) > tol`, which makes the result monotone in `tol`.
    pub fn refine(
        self,
        mut gap: impl FnMut(&BigScalar) -> Result<BigScalar, TrajectoryError>,
    ) -> Result<BigScalar, TrajectoryError> {
        let Some(mut lo) = self.lo else { return Ok(self.hi) };
        let mut hi = self.hi;
        for _ in 0..BISECTION_STEPS {
            let mid = (&lo + &hi).div_i64(2);
            if gap(&mid)? > self.tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

impl DivergenceSearch {
    pub fn new(
        ctx: PrecisionContext,
        start: BigScalar,
        tol: BigScalar,
        sample_dt: BigScalar,
    ) -> Result<Self, TrajectoryError> {
        if !(tol > ctx.zero()) || !(sample_dt > ctx.zero()) {
            return Err(TrajectoryError::Invalid("tolerance and sample spacing must be positive".into()));
        }
        Ok(DivergenceSearch {
            ctx,
            start,
            tol,
            dt: sample_dt,
            j: 0,
            done: false,
            last: None,
            max_gap: ctx.zero(),
            samples: Vec::new(),
        })
    }

    /// Next sample time, `start + j·dt`, with `end` itself as the final sample.
    pub fn next_sample(&mut self, end: &BigScalar) -> Option<BigScalar> {
        if self.done {
            return None;
        }
        let t = &self.start + &self.dt.mul_i64(self.j);
        self.j += 1;
        if t >= *end {
            self.done = true;
            if let Some(last) = &self.last {
                if last >= end {
                    return None;
                }
            }
            return Some(end.clone());
        }
        Some(t)
    }

    /// Records a sample; returns the bracket on the first exceedance.
    pub fn record(&mut self, t: BigScalar, gap: BigScalar) -> Option<Bracket> {
        self.samples.push((t.clone(), gap.clone()));
        if gap > self.tol {
            self.done = true;
            return Some(Bracket { lo: self.last.take(), hi: t, tol: self.tol.clone() });
        }
        self.max_gap = self.max_gap.max(&gap);
        self.last = Some(t);
        None
    }

    pub fn report(self, t_div: Option<BigScalar>) -> DivergenceReport {
        DivergenceReport { t_div, max_gap_before: self.max_gap, tol: self.tol, samples: self.samples }
    }

    pub fn context(&self) -> PrecisionContext {
        self.ctx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(d: u32) -> PrecisionContext {
        PrecisionContext::new(d).unwrap()
    }

    fn meta(c: &PrecisionContext, dim: usize) -> TrajectoryMeta {
        TrajectoryMeta { problem: "test".into(), params: vec![("a".into(), c.ratio(1, 3))], u0: BigVec::zeros(c, dim), config: vec![] }
    }

    /// Samples `f` at the Lobatto nodes of each interval.
    fn from_fn(c: &PrecisionContext, q: usize, dt: &str, end: &str, f: impl Fn(&BigScalar) -> Vec<BigScalar>) -> Trajectory {
        let basis = NodalBasis::lobatto(q, c).unwrap();
        let p = Partition::uniform(c.zero(), c.parse(dt).unwrap(), c.parse(end).unwrap()).unwrap();
        let dim = f(&c.zero()).len();
        let mut values = Vec::new();
        for m in 0..p.m {
            let a = p.time(m);
            let h = &p.time(m + 1) - &a;
            let skip = if m == 0 { 0 } else { 1 };
            for x in &basis.nodes()[skip..] {
                values.extend(f(&(&a + &(&h * x))));
            }
        }
        Trajectory::new(basis, dim, p, 0, values, meta(c, dim)).unwrap()
    }

    #[test]
    fn partition_counts() {
        let c = ctx(30);
        let p = Partition::uniform(c.zero(), c.parse("0.1").unwrap(), c.one()).unwrap();
        assert_eq!(p.m, 10);
        assert_eq!(p.time(10), c.one());
        let p = Partition::uniform(c.zero(), c.parse("0.3").unwrap(), c.one()).unwrap();
        assert_eq!(p.m, 4);
        assert!(Partition::uniform(c.zero(), c.parse("0.1").unwrap(), c.zero()).is_err());
    }

    #[test]
    fn evaluate_polynomial_and_nodes() {
        let c = ctx(40);
        let tr = from_fn(&c, 3, "0.25", "1", |t| vec![t.powi(3) - t.clone(), c.from_i64(2)]);
        assert_eq!(tr.intervals(), 4);
        assert_eq!(tr.evaluate(&c.zero()).unwrap()[0], c.zero());
        let t = c.parse("0.61").unwrap();
        let v = tr.evaluate(&t).unwrap();
        assert!((&v[0] - &(t.powi(3) - t.clone())).abs() < c.pow10(-38));
        // interior partition point: left and right interval values coincide
        let tp = tr.node_time(2);
        let left = lagrange_eval(tr.basis(), tr.interval_values(1), 2, &c.one());
        let right = lagrange_eval(tr.basis(), tr.interval_values(2), 2, &c.zero());
        assert_eq!(left, right);
        assert_eq!(tr.evaluate(&tp).unwrap(), left);
        assert!(tr.evaluate(&c.parse("1.01").unwrap()).is_err());
        assert!(tr.evaluate(&c.parse("-0.01").unwrap()).is_err());
    }

    #[test]
    fn derivatives() {
        let c = ctx(40);
        let tr = from_fn(&c, 4, "0.5", "1", |t| vec![t.powi(4).mul_i64(3) + t.clone()]);
        let t = c.parse("0.3").unwrap();
        assert_eq!(tr.derivative(&t, 0).unwrap().value, tr.evaluate(&t).unwrap());
        let d1 = tr.derivative(&t, 1).unwrap();
        assert!(!d1.one_sided);
        assert!((&d1.value[0] - &(t.powi(3).mul_i64(12) + c.one())).abs() < c.pow10(-35));
        // 4th derivative of 3t⁴ is 3·4! = 72
        let d4 = tr.derivative(&t, 4).unwrap();
        assert!((&d4.value[0] - &c.from_i64(72)).abs() < c.pow10(-30));
        assert!(matches!(tr.derivative(&t, 5), Err(TrajectoryError::OrderTooHigh { .. })));
        assert!(tr.derivative_or_zero(&t, 5).unwrap().value[0].is_zero());
        assert!(tr.derivative(&c.parse("0.5").unwrap(), 1).unwrap().one_sided);
        assert!(!tr.derivative(&c.one(), 1).unwrap().one_sided);
    }

    #[test]
    fn linear_slope() {
        let c = ctx(30);
        let tr = from_fn(&c, 1, "0.1", "0.5", |t| vec![t.mul_i64(7) - c.one()]);
        for s in ["0", "0.05", "0.2", "0.5"] {
            let d = tr.derivative(&c.parse(s).unwrap(), 1).unwrap();
            assert!((&d.value[0] - &c.from_i64(7)).abs() < c.pow10(-27));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let c = ctx(64);
        let tr = from_fn(&c, 2, "0.4", "1.2", |t| vec![t.exp(), t.sqrt(), -(t * t)]);
        assert_eq!(tr.intervals(), 3);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.traj");
        let p2 = dir.path().join("b.traj");
        tr.save(&p1).unwrap();
        let back = Trajectory::load(&p1).unwrap();
        assert_eq!(back.values(), tr.values());
        assert_eq!(back.meta(), tr.meta());
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(matches!(
            Trajectory::load_into(&p1, &ctx(32)),
            Err(TrajectoryError::PrecisionMismatch { file: 64, context: 32 })
        ));
        Trajectory::load_into(&p1, &c).unwrap();
    }

    #[test]
    fn load_errors() {
        let c = ctx(20);
        let tr = from_fn(&c, 2, "0.5", "1", |t| vec![t.clone()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.traj");
        tr.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let cut = dir.path().join("cut.traj");
        std::fs::write(&cut, &text[..text.len() - 30]).unwrap();
        assert!(matches!(Trajectory::load(&cut), Err(TrajectoryError::Truncated(_))));

        let ver = dir.path().join("ver.traj");
        std::fs::write(&ver, text.replace("version=1", "version=9")).unwrap();
        assert!(matches!(Trajectory::load(&ver), Err(TrajectoryError::Version { .. })));

        // break continuity: change the repeated endpoint of interval 1
        let lines: Vec<&str> = text.lines().collect();
        let idx = lines.iter().position(|l| l.starts_with("1 0 0 ")).unwrap();
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[idx] = "1 0 0 0.123".into();
        let disc = dir.path().join("disc.traj");
        std::fs::write(&disc, broken.join("\n") + "\n").unwrap();
        assert!(matches!(Trajectory::load(&disc), Err(TrajectoryError::Discontinuity { interval: 1 })));

        broken[idx] = "1 0 zero 0.5".into();
        std::fs::write(&disc, broken.join("\n") + "\n").unwrap();
        assert!(matches!(Trajectory::load(&disc), Err(TrajectoryError::Malformed { .. })));
    }

    #[test]
    fn divergence_cases() {
        let c = ctx(30);
        let a = from_fn(&c, 2, "0.5", "10", |t| vec![t.clone(), c.one()]);
        let tol = c.pow10(-16);
        let sdt = c.parse("0.25").unwrap();
        assert!(divergence_time(&a, &a, &tol, &sdt).unwrap().t_div.is_none());

        let b = from_fn(&c, 2, "0.5", "10", |t| vec![t + &c.pow10(-10), c.one()]);
        let r = divergence_time(&a, &b, &tol, &sdt).unwrap();
        assert_eq!(r.t_div.unwrap(), c.zero());

        // gap grows like 1e-20·e^{2t}: crosses 1e-16 at t = 2 ln 10 ≈ 4.605
        let g = from_fn(&c, 6, "0.1", "10", |t| vec![t + &(c.pow10(-20) * (t.mul_i64(2)).exp()), c.one()]);
        let r = divergence_time(&a, &g, &tol, &sdt).unwrap();
        let td = r.t_div.unwrap().to_f64();
        assert!((td - 2.0 * 10f64.ln()).abs() < 1e-5, "{td}");
        assert!(r.max_gap_before <= tol);

        let r2 = divergence_time(&a, &g, &c.pow10(-14), &sdt).unwrap();
        assert!(r2.t_div.unwrap().to_f64() > td);
    }

    #[test]
    fn no_overlap() {
        let c = ctx(20);
        let a = from_fn(&c, 1, "0.5", "1", |t| vec![t.clone()]);
        let p = Partition::uniform(c.from_i64(2), c.parse("0.5").unwrap(), c.from_i64(3)).unwrap();
        let vals = vec![c.zero(); 3];
        let b = Trajectory::new(a.basis().clone(), 1, p, 0, vals, meta(&c, 1)).unwrap();
        let r = divergence_time(&a, &b, &c.one(), &c.one());
        assert!(matches!(r, Err(TrajectoryError::NoOverlap)));
    }

    #[test]
    fn window_offsets() {
        let c = ctx(25);
        let full = from_fn(&c, 2, "0.5", "3", |t| vec![t * t]);
        // intervals 2..4 as a window
        let q = 2;
        let vals = full.values()[2 * q..(4 * q + 1)].to_vec();
        let w = Trajectory::new(full.basis().clone(), 1, full.partition().clone(), 2, vals, full.meta().clone()).unwrap();
        assert_eq!(w.t_start(), c.one());
        assert_eq!(w.t_end(), c.from_i64(2));
        let t = c.parse("1.3").unwrap();
        assert_eq!(w.evaluate(&t).unwrap(), full.evaluate(&t).unwrap());
        assert!(w.evaluate(&c.parse("0.9").unwrap()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn divergence_monotone_in_tol(e1 in 10i64..18, de in 0i64..4, rate in 0.5f64..3.0) {
            let c = ctx(25);
            let a = from_fn(&c, 3, "0.25", "6", |t| vec![t.clone()]);
            let r = c.from_f64(rate);
            let b = from_fn(&c, 3, "0.25", "6", |t| vec![t + &(c.pow10(-20) * (&r * t).exp())]);
            let sdt = c.parse("0.5").unwrap();
            let lo = divergence_time(&a, &b, &c.pow10(-e1), &sdt).unwrap().t_div;
            let hi = divergence_time(&a, &b, &c.pow10(-e1 + de), &sdt).unwrap().t_div;
            match (lo, hi) {
                (Some(x), Some(y)) => proptest::prop_assert!(y >= x),
                (None, Some(_)) => proptest::prop_assert!(false),
                _ => {}
            }
        }
    }
}
