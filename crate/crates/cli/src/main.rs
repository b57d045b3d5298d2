use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorenz_cg::harness::{self, ExperimentConfig, HarnessError};

/// Arbitrary-precision cG(q) integration of the Lorenz system, with
/// convergence, stability and computability studies.
#[derive(Parser, Debug)]
#[command(name = "lorenz-cg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Key=value experiment file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Significant decimal digits of the working precision.
    #[arg(long, global = true)]
    digits: Option<u32>,
    /// Polynomial degree of cG(q).
    #[arg(short = 'q', long = "order", global = true)]
    order: Option<usize>,
    /// Time step (sweep-k accepts a comma-separated list).
    #[arg(long, global = true)]
    dt: Option<String>,
    #[arg(long, global = true)]
    tmax: Option<String>,
    /// Initial state, comma-separated.
    #[arg(long, global = true, allow_hyphen_values = true)]
    u0: Option<String>,
    /// Divergence tolerance for pair-converge.
    #[arg(long, global = true)]
    tol: Option<String>,
    /// Output file (trajectory, table or model).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint_every: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Long-run mode: periodic checkpoints and automatic resume.
    #[arg(long, global = true)]
    unattended: bool,
    /// Any other setting, e.g. `--set ref_q=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate and write the trajectory.
    Solve,
    /// Divergence time between two degrees at a shared step.
    PairConverge {
        #[arg(long)]
        q_low: Option<usize>,
        #[arg(long)]
        q_high: Option<usize>,
    },
    /// Final-time error over a list of steps against a reference.
    SweepK {
        #[arg(long)]
        ref_q: Option<usize>,
        #[arg(long)]
        ref_digits: Option<u32>,
        #[arg(long)]
        ref_dt: Option<String>,
    },
    /// Dual stability factors at several final times.
    Stability {
        /// Comma-separated final times.
        #[arg(long)]
        t_list: Option<String>,
    },
    /// Fit the error model to sweep tables.
    Calibrate {
        /// Comma-separated sweep-k tables.
        #[arg(long, required = true)]
        inputs: String,
        #[arg(long)]
        gamma: Option<String>,
        /// Stability table supplying the growth rate.
        #[arg(long)]
        stability: Option<PathBuf>,
    },
    /// Optimal step and computability horizon from a model.
    Predict {
        /// `paper`, `paper-tables` or a model file.
        #[arg(long)]
        model: Option<String>,
        /// Accuracy for the horizon.
        #[arg(long)]
        target: Option<String>,
    },
    /// Gauss-Legendre or Gauss-Lobatto points and weights on [0, 1].
    QuadTable {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Rerun the experiment recorded in a file and compare the bytes.
    Replay { input: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::PairConverge { .. } => "pair-converge",
            Command::SweepK { .. } => "sweep-k",
            Command::Stability { .. } => "stability",
            Command::Calibrate { .. } => "calibrate",
            Command::Predict { .. } => "predict",
            Command::QuadTable { .. } => "quad-table",
            Command::Replay { .. } => "replay",
        }
    }

    fn settings(&self) -> Vec<(&'static str, Option<String>)> {
        let s = |v: &Option<usize>| v.map(|x| x.to_string());
        match self {
            Command::Solve => vec![],
            Command::PairConverge { q_low, q_high } => vec![("q_low", s(q_low)), ("q_high", s(q_high))],
            Command::SweepK { ref_q, ref_digits, ref_dt } => vec![
                ("ref_q", s(ref_q)),
                ("ref_digits", ref_digits.map(|d| d.to_string())),
                ("ref_dt", ref_dt.clone()),
            ],
            Command::Stability { t_list } => vec![("t_list", t_list.clone())],
            Command::Calibrate { inputs, gamma, stability } => vec![
                ("inputs", Some(inputs.clone())),
                ("gamma", gamma.clone()),
                ("stability", stability.as_ref().map(|p| p.display().to_string())),
            ],
            Command::Predict { model, target } => vec![("model", model.clone()), ("target", target.clone())],
            Command::QuadTable { family, n } => vec![("family", family.clone()), ("n", s(n))],
            Command::Replay { input } => vec![("input", Some(input.display().to_string()))],
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(),
    };
    for item in &c.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k.trim(), v.trim());
    }
    let flags = [
        ("problem", c.problem.clone()),
        ("digits", c.digits.map(|d| d.to_string())),
        ("q", c.order.map(|q| q.to_string())),
        ("dt", c.dt.clone()),
        ("tmax", c.tmax.clone()),
        ("u0", c.u0.clone()),
        ("tol", c.tol.clone()),
        ("out", c.out.as_ref().map(|p| p.display().to_string())),
        ("checkpoint_every", c.checkpoint_every.map(|n| n.to_string())),
        ("workers", c.workers.map(|n| n.to_string())),
        ("unattended", c.unattended.then(|| "true".to_string())),
    ];
    for (k, v) in flags.into_iter().chain(cli.command.settings()) {
        if let Some(v) = v {
            cfg.set(k, v);
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.common.quiet;
    let log = move |line: &str| {
        if !quiet {
            eprintln!("{line}");
        }
    };
    let result = build_config(&cli).and_then(|cfg| harness::run(cli.command.name(), &cfg, &log));
    match result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for line in &out.report {
                println!("{line}");
            }
            for f in &out.files {
                log(&format!("wrote {}", f.display()));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_of(args: &[&str]) -> ExperimentConfig {
        let cli = Cli::try_parse_from(std::iter::once("lorenz-cg").chain(args.iter().copied())).unwrap();
        build_config(&cli).unwrap()
    }

    #[test]
    fn flags_map_to_config_keys() {
        let cfg = config_of(&["pair-converge", "--digits", "24", "-q", "3", "--u0=-1,2,3", "--q-high", "5"]);
        assert_eq!(cfg.get("digits"), Some("24"));
        assert_eq!(cfg.get("q"), Some("3"));
        assert_eq!(cfg.get("u0"), Some("-1,2,3"));
        assert_eq!(cfg.get("q_high"), Some("5"));
        assert!(!cfg.contains("q_low"));
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("exp.cfg");
        std::fs::write(&file, "digits = 40\ntmax = 5\n").unwrap();
        let f = file.to_str().unwrap();
        let cfg = config_of(&["solve", "--config", f, "--set", "tmax=7", "--set", "guess=extrapolate", "--digits", "20"]);
        assert_eq!(cfg.get("digits"), Some("20"));
        assert_eq!(cfg.get("tmax"), Some("7"));
        assert_eq!(cfg.get("guess"), Some("extrapolate"));
    }

    #[test]
    fn malformed_set_is_a_config_error() {
        let cli = Cli::try_parse_from(["lorenz-cg", "solve", "--set", "oops"]).unwrap();
        assert_eq!(build_config(&cli).unwrap_err().exit_code(), 2);
    }
}
