//! Experiment drivers behind the command line: each command takes an
//! [`ExperimentConfig`], runs, and returns a [`CommandOutput`] whose table
//! (or file) embeds the configuration that produced it.

mod config;
mod solve;
mod study;
mod sweep;
mod table;

pub use config::ExperimentConfig;
pub use solve::{cmd_pair_converge, cmd_solve, default_pair_tol, divergence_time_of};
pub use study::{cmd_calibrate, cmd_predict, cmd_quad_table, cmd_stability, sweep_points};
pub use sweep::{cmd_sweep_k, reference_key};
pub use table::{ResultTable, TABLE_MAGIC};

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjoint::AdjointError;
use crate::errormodel::ModelError;
use crate::galerkin::{GalerkinError, InitialGuess, SolverConfig};
use crate::precision::{BigScalar, BigVec, PrecisionContext, PrecisionError};
use crate::problem::{by_name, Lorenz, ProblemError};
use crate::quadrature::QuadratureError;
use crate::trajectory::{read_header, TrajectoryError};

pub const COMMANDS: [&str; 8] =
    ["solve", "pair-converge", "sweep-k", "stability", "calibrate", "predict", "quad-table", "replay"];

/// Keys that steer where and how a run executes but not what it computes.
/// They are left out of output headers so a replay elsewhere is byte-identical.
pub const RUNTIME_KEYS: [&str; 10] = [
    "out",
    "workers",
    "cache_dir",
    "checkpoint",
    "checkpoint_every",
    "resume",
    "unattended",
    "max_steps",
    "input",
    "config",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("calibration failure: {0}")]
    Calibration(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Solver(_) => 3,
            HarnessError::Calibration(_) => 4,
            HarnessError::Io(_) => 5,
        }
    }
}

impl From<PrecisionError> for HarnessError {
    fn from(e: PrecisionError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<ProblemError> for HarnessError {
    fn from(e: ProblemError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<QuadratureError> for HarnessError {
    fn from(e: QuadratureError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<TrajectoryError> for HarnessError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::Io(e) => HarnessError::Io(e.to_string()),
            TrajectoryError::Malformed { .. } | TrajectoryError::Truncated(_) | TrajectoryError::Version { .. } => {
                HarnessError::Io(e.to_string())
            }
            other => HarnessError::Solver(other.to_string()),
        }
    }
}

impl From<GalerkinError> for HarnessError {
    fn from(e: GalerkinError) -> Self {
        match e {
            GalerkinError::Config(m) => HarnessError::Config(m),
            GalerkinError::Io(e) => HarnessError::Io(e.to_string()),
            GalerkinError::Checkpoint(m) => HarnessError::Io(format!("checkpoint: {m}")),
            GalerkinError::Trajectory(t) => t.into(),
            other => HarnessError::Solver(other.to_string()),
        }
    }
}

impl From<AdjointError> for HarnessError {
    fn from(e: AdjointError) -> Self {
        match e {
            AdjointError::Config(m) => HarnessError::Config(m),
            AdjointError::Galerkin(g) => g.into(),
            other => HarnessError::Solver(other.to_string()),
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(e) => HarnessError::Io(e.to_string()),
            ModelError::Malformed { .. } | ModelError::Version(_) => HarnessError::Io(e.to_string()),
            ModelError::Domain { .. } | ModelError::Precision(_) => HarnessError::Config(e.to_string()),
            other => HarnessError::Calibration(other.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Progress sink shared by worker threads.
pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

/// What a command produced.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub table: Option<ResultTable>,
    /// Human-readable summary lines.
    pub report: Vec<String>,
    pub warnings: Vec<String>,
    /// Files written, including the table if `out` was given.
    pub files: Vec<PathBuf>,
}

/// Runs `command` and saves its table to `out` when both exist.
pub fn run(command: &str, cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let mut out = match command {
        "solve" => cmd_solve(cfg, log)?,
        "pair-converge" => cmd_pair_converge(cfg, log)?,
        "sweep-k" => cmd_sweep_k(cfg, log)?,
        "stability" => cmd_stability(cfg, log)?,
        "calibrate" => cmd_calibrate(cfg, log)?,
        "predict" => cmd_predict(cfg, log)?,
        "quad-table" => cmd_quad_table(cfg, log)?,
        "replay" => cmd_replay(cfg, log)?,
        other => return Err(HarnessError::Config(format!("unknown command {other:?} (expected one of {COMMANDS:?})"))),
    };
    if let (Some(t), Some(path)) = (&out.table, cfg.get("out")) {
        let path = PathBuf::from(path);
        t.save(&path)?;
        out.files.push(path);
    }
    Ok(out)
}

/// The configuration recorded in outputs: `cfg` with defaults filled in and
/// runtime keys removed.
pub(crate) fn recorded(cfg: &ExperimentConfig, defaults: &[(&str, String)]) -> ExperimentConfig {
    let mut r = ExperimentConfig::new();
    for (k, v) in defaults {
        r.set(k, v.clone());
    }
    let mut r = r.merged(cfg);
    for k in RUNTIME_KEYS {
        r.remove(k);
    }
    r
}

pub(crate) const COMMON_DEFAULTS: [(&str, &str); 6] =
    [("problem", "lorenz"), ("digits", "32"), ("q", "2"), ("dt", "0.01"), ("tmax", "10"), ("u0", "1,0,0")];

pub(crate) fn common_defaults() -> Vec<(&'static str, String)> {
    COMMON_DEFAULTS.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

/// Hex SHA-256 of the `key=value` lines.
pub(crate) fn digest(cfg: &ExperimentConfig) -> String {
    let mut h = Sha256::new();
    for line in cfg.to_lines() {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Problem, initial state and solver settings at one precision.
pub(crate) struct Setup {
    pub ctx: PrecisionContext,
    pub system: Lorenz,
    pub u0: BigVec,
    pub tmax: BigScalar,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, digits: u32) -> Result<Self, HarnessError> {
        let ctx = PrecisionContext::new(digits)?;
        let overrides: Vec<(String, String)> = cfg
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("param.").map(|p| (p.to_string(), v.to_string())))
            .collect();
        let system = by_name(cfg.str_or("problem", "lorenz"), &ctx, &overrides)?;
        let u0 = cfg.vector_or("u0", "1,0,0", &ctx)?;
        let tmax = cfg.scalar_or("tmax", "10", &ctx)?;
        Ok(Setup { ctx, system, u0, tmax })
    }

    pub fn solver(&self, cfg: &ExperimentConfig, q: usize, dt: &BigScalar) -> Result<SolverConfig, HarnessError> {
        let mut s = SolverConfig::new(self.ctx, q, dt.clone())?;
        if cfg.contains("residual_tol") {
            s.residual_tol = cfg.scalar("residual_tol", &self.ctx)?;
        }
        s.max_newton_iters = cfg.usize_or("max_newton_iters", s.max_newton_iters)?;
        if let Some(g) = cfg.get("guess") {
            s.guess = InitialGuess::parse(g)
                .ok_or_else(|| HarnessError::Config(format!("guess={g:?}: expected constant or extrapolate")))?;
        }
        s.validate()?;
        Ok(s)
    }
}

pub(crate) fn worker_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.usize_or("workers", 0)?)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

pub(crate) fn sci(x: &BigScalar) -> String {
    x.to_sci(12)
}

/// Re-runs the command recorded in an output file's header and reports
/// whether the regenerated output is byte-identical.
pub fn cmd_replay(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let input = PathBuf::from(cfg.require("input")?);
    let original = fs::read_to_string(&input).map_err(|e| io_err(&input, e))?;
    let first = original.lines().next().unwrap_or_default();
    let (command, recorded_cfg) = if first == TABLE_MAGIC {
        let t = ResultTable::parse(&original)?;
        (t.command, t.config)
    } else if first == "# lorenz-cg trajectory" {
        let f = fs::File::open(&input).map_err(|e| io_err(&input, e))?;
        let (header, _) = read_header(&mut BufReader::new(f).lines())?;
        let mut c = ExperimentConfig::new();
        let mut command = None;
        for (k, v) in &header.meta.config {
            if k == "command" {
                command = Some(v.clone());
            } else if let Some(k) = k.strip_prefix("experiment.") {
                c.set(k, v.clone());
            }
        }
        (command.ok_or_else(|| HarnessError::Config("trajectory header records no command".into()))?, c)
    } else if first == "# lorenz-cg error model" {
        let mut c = ExperimentConfig::new();
        let mut command = None;
        for line in original.lines() {
            if let Some(v) = line.strip_prefix("# command=") {
                command = Some(v.to_string());
            } else if let Some(kv) = line.strip_prefix("# config.") {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                c.set(k, v);
            }
        }
        (command.ok_or_else(|| HarnessError::Config("model file records no command".into()))?, c)
    } else {
        return Err(HarnessError::Config(format!("{} is not a lorenz-cg output file", input.display())));
    };
    if command == "replay" {
        return Err(HarnessError::Config("cannot replay a replay".into()));
    }
    let target = match cfg.get("out") {
        Some(p) => PathBuf::from(p),
        None => {
            let mut s = input.clone().into_os_string();
            s.push(".replay");
            PathBuf::from(s)
        }
    };
    if target == input {
        return Err(HarnessError::Config("replay output must differ from its input".into()));
    }
    let mut run_cfg = recorded_cfg.clone();
    for k in ["workers", "cache_dir"] {
        if let Some(v) = cfg.get(k) {
            run_cfg.set(k, v);
        }
    }
    run_cfg.set("out", target.to_string_lossy().to_string());
    log(&format!("replaying {command} from {}", input.display()));
    let mut out = run(&command, &run_cfg, log)?;
    let regenerated = fs::read_to_string(&target).map_err(|e| io_err(&target, e))?;
    let identical = regenerated == original;
    out.report.push(format!("replay of {command}: output {}", if identical { "identical" } else { "differs" }));
    if !identical {
        out.warnings.push(format!("{} and {} differ", input.display(), target.display()));
    }
    out.table = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            HarnessError::Config(String::new()).exit_code(),
            HarnessError::Solver(String::new()).exit_code(),
            HarnessError::Calibration(String::new()).exit_code(),
            HarnessError::Io(String::new()).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5]);
    }

    #[test]
    fn recorded_config_fills_defaults_and_drops_runtime_keys() {
        let cfg = ExperimentConfig::new().with("q", "4").with("out", "x.csv").with("workers", "3");
        let r = recorded(&cfg, &common_defaults());
        assert_eq!(r.get("q"), Some("4"));
        assert_eq!(r.get("digits"), Some("32"));
        assert!(!r.contains("out") && !r.contains("workers"));
        assert_eq!(digest(&r), digest(&r.clone()));
        assert_ne!(digest(&r), digest(&r.clone().with("q", "5")));
    }

    #[test]
    fn unknown_command() {
        let e = run("bogus", &ExperimentConfig::new(), &|_| {}).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn setup_applies_parameter_overrides() {
        let cfg = ExperimentConfig::new().with("param.r", "24.5").with("u0", "2,0,1");
        let s = Setup::new(&cfg, 20).unwrap();
        assert_eq!(s.system.params().r, s.ctx.parse("24.5").unwrap());
        assert_eq!(s.u0[0], s.ctx.from_i64(2));
        let bad = ExperimentConfig::new().with("param.rho", "1");
        assert!(matches!(Setup::new(&bad, 20), Err(HarnessError::Config(_))));
        let s = Setup::new(&ExperimentConfig::new().with("guess", "nope"), 20).unwrap();
        assert!(s.solver(&ExperimentConfig::new().with("guess", "nope"), 2, &s.ctx.parse("0.1").unwrap()).is_err());
    }
}
