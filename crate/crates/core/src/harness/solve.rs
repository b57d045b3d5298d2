use std::fs;
use std::path::PathBuf;

use super::{
    common_defaults, digest, io_err, recorded, sci, CommandOutput, ExperimentConfig, HarnessError, Log,
    ResultTable, Setup,
};
use crate::galerkin::{stream_divergence, Checkpoint, Integrator};
use crate::precision::{BigScalar, PrecisionContext};
use crate::trajectory::{TrajectoryHeader, TrajectoryWriter, DEFAULT_SAMPLE_DT};

/// Checkpoint cadence (steps) when `unattended` is set without an explicit one.
pub const UNATTENDED_CHECKPOINT_EVERY: usize = 1000;

/// Integrates one trajectory, streaming it to `out` if given.
///
/// With `checkpoint_every = n` the solver state is saved every `n` steps,
/// together with the byte offset of the trajectory file, and `resume=true`
/// continues from it. `max_steps` stops after that many steps in this
/// invocation (leaving a checkpoint), so long runs can be split up.
pub fn cmd_solve(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let rec = recorded(cfg, &common_defaults());
    let setup = Setup::new(&rec, rec.u32("digits")?)?;
    let ctx = setup.ctx;
    if !(setup.tmax > ctx.zero()) {
        return Err(HarnessError::Config("empty interval: tmax must be positive".into()));
    }
    let solver = setup.solver(&rec, rec.usize("q")?, &rec.scalar("dt", &ctx)?)?;
    let unattended = cfg.bool_or("unattended", false)?;
    let every = cfg.usize_or("checkpoint_every", if unattended { UNATTENDED_CHECKPOINT_EVERY } else { 0 })?;
    let out = cfg.get("out").map(PathBuf::from);
    let ckpt_path = match (cfg.get("checkpoint"), &out) {
        (Some(p), _) => Some(PathBuf::from(p)),
        (None, Some(o)) if every > 0 || unattended => Some(o.with_extension("ckpt")),
        (None, None) if every > 0 || unattended => {
            return Err(HarnessError::Config("checkpointing needs `checkpoint` or `out`".into()))
        }
        _ => None,
    };
    let resume = cfg.bool_or("resume", unattended)? && ckpt_path.as_ref().is_some_and(|p| p.exists());
    let max_steps = match cfg.get("max_steps") {
        Some(_) => Some(cfg.usize("max_steps")?),
        None => None,
    };
    let hash = digest(&rec);

    let (mut it, cp) = if resume {
        let path = ckpt_path.as_ref().expect("resume implies a checkpoint path");
        let cp = Checkpoint::load(path)?;
        if cp.extra("config_hash") != Some(hash.as_str()) {
            return Err(HarnessError::Config(format!(
                "checkpoint {} belongs to a different configuration",
                path.display()
            )));
        }
        (Integrator::resume(&setup.system, &cp, &solver)?, Some(cp))
    } else {
        (Integrator::new(&setup.system, &setup.u0, &ctx.zero(), &setup.tmax, &solver)?, None)
    };

    let mut meta = it.meta(Some(&setup.u0));
    meta.config.push(("command".into(), "solve".into()));
    for (k, v) in rec.iter() {
        meta.config.push((format!("experiment.{k}"), v.to_string()));
    }
    let header = TrajectoryHeader {
        digits: ctx.digits(),
        q: solver.q,
        dim: setup.u0.len(),
        partition: it.partition().clone(),
        meta,
    };
    let mut writer = match (&out, &cp) {
        (None, _) => None,
        (Some(p), None) => Some(TrajectoryWriter::create(p, &header)?),
        (Some(p), Some(cp)) => {
            let offset = extra_num(cp, "offset")?;
            Some(TrajectoryWriter::resume(p, &header, offset, cp.step)?)
        }
    };
    if let Some(cp) = &cp {
        log(&format!("resuming at step {} of {}", cp.step, it.total_steps()));
    }

    let save_checkpoint = |it: &Integrator<'_, _>, writer: &mut Option<TrajectoryWriter>| -> Result<(), HarnessError> {
        let Some(path) = &ckpt_path else { return Ok(()) };
        let mut cp = it.checkpoint();
        cp.extra.push(("config_hash".into(), hash.clone()));
        if let Some(w) = writer {
            w.flush()?;
            cp.extra.push(("offset".into(), w.bytes_written().to_string()));
        }
        cp.save(path)?;
        Ok(())
    };

    let mut this_run = 0usize;
    while !it.is_done() {
        if max_steps.is_some_and(|m| this_run >= m) {
            break;
        }
        let m = it.steps_done();
        let vals = it.step()?;
        if let Some(w) = &mut writer {
            w.write_interval(m, vals)?;
        }
        this_run += 1;
        if every > 0 && it.steps_done() % every == 0 && !it.is_done() {
            save_checkpoint(&it, &mut writer)?;
            log(&format!("checkpoint at step {} of {}", it.steps_done(), it.total_steps()));
        }
    }

    let mut res = CommandOutput::default();
    if it.is_done() {
        if let Some(w) = writer {
            w.finish()?;
        }
        if let Some(p) = &ckpt_path {
            if p.exists() {
                fs::remove_file(p).map_err(|e| io_err(p, e))?;
            }
        }
    } else {
        save_checkpoint(&it, &mut writer)?;
        res.report.push(format!(
            "paused at step {} of {} (t = {}); rerun with resume=true to continue",
            it.steps_done(),
            it.total_steps(),
            sci(&it.time())
        ));
    }
    if let Some(p) = &out {
        res.files.push(p.clone());
    }
    let sig = ctx.serial_digits();
    let st = it.stats();
    res.report.push(format!("t = {}", it.time().to_sci(sig)));
    let names = ["x", "y", "z"];
    for (i, v) in it.state().iter().enumerate() {
        let name = names.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("u{i}"));
        res.report.push(format!("{name} = {}", v.to_sci(sig)));
    }
    res.report.push(format!(
        "steps = {}, newton iterations = {} (max {} per step), max residual = {}",
        st.steps,
        st.newton_iterations,
        st.max_newton_iterations,
        st.max_residual.to_sci(6)
    ));
    Ok(res)
}

fn extra_num(cp: &Checkpoint, key: &str) -> Result<u64, HarnessError> {
    cp.extra(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| HarnessError::Io(format!("checkpoint lacks {key}; it was saved without an output file")))
}

/// `max(1e-16, 10^(2 − digits))`.
pub fn default_pair_tol(digits: u32) -> String {
    if digits >= 18 {
        "1e-16".to_string()
    } else {
        format!("1e{}", 2 - digits as i64)
    }
}

/// Runs cG(q_low) and cG(q_high) side by side and reports when they first
/// differ by more than `tol`. `digits_low`/`digits_high` optionally give the
/// two runs different precisions.
pub fn cmd_pair_converge(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let digits = cfg.u32_or("digits", 32)?;
    let mut defaults = common_defaults();
    defaults.retain(|(k, _)| *k != "q");
    defaults.extend([
        ("q_low", "2".to_string()),
        ("q_high", "4".to_string()),
        ("tol", default_pair_tol(digits)),
        ("sample_dt", DEFAULT_SAMPLE_DT.to_string()),
    ]);
    let rec = recorded(cfg, &defaults);
    let (q_low, q_high) = (rec.usize("q_low")?, rec.usize("q_high")?);
    if q_low > q_high {
        return Err(HarnessError::Config(format!("q_low = {q_low} must not exceed q_high = {q_high}")));
    }
    let d_low = rec.u32_or("digits_low", digits)?;
    let d_high = rec.u32_or("digits_high", digits)?;
    let lo = Setup::new(&rec, d_low)?;
    let hi = Setup::new(&rec, d_high)?;
    let ctx = if lo.ctx.bits() >= hi.ctx.bits() { lo.ctx } else { hi.ctx };
    let tol = rec.scalar("tol", &ctx)?;
    let sample_dt = rec.scalar("sample_dt", &ctx)?;
    let mut res = CommandOutput::default();
    let mut table = ResultTable::new("pair-converge", &rec, &["t", "gap"]);
    table.note("tol", rec.require("tol")?);

    if q_low == q_high && d_low == d_high {
        res.warnings.push("identical runs cannot diverge; reporting never without integrating".into());
        table.note("t_div", "never");
        res.report.push("t_div = never".into());
        res.table = Some(table);
        return Ok(res);
    }
    let cfg_lo = lo.solver(&rec, q_low, &rec.scalar("dt", &lo.ctx)?)?;
    let cfg_hi = hi.solver(&rec, q_high, &rec.scalar("dt", &hi.ctx)?)?;
    let zero = |c: &PrecisionContext| c.zero();
    let mut a = Integrator::new(&lo.system, &lo.u0, &zero(&lo.ctx), &lo.tmax, &cfg_lo)?;
    let mut b = Integrator::new(&hi.system, &hi.u0, &zero(&hi.ctx), &hi.tmax, &cfg_hi)?;
    log(&format!("pair cG({q_low})@{d_low} vs cG({q_high})@{d_high}, tol {}", sci(&tol)));
    let report = stream_divergence(&mut a, &mut b, &tol, &sample_dt)?;
    for (t, g) in &report.samples {
        table.push(vec![t.to_sci(10), sci(g)]);
    }
    let t_div = report.t_div.as_ref().map(|t| t.to_sci(10)).unwrap_or_else(|| "never".into());
    table.note("t_div", t_div.clone());
    table.note("max_gap_before", sci(&report.max_gap_before));
    res.report.push(format!("t_div = {t_div} (tol {})", rec.require("tol")?));
    res.report.push(format!("max gap before divergence = {}", sci(&report.max_gap_before)));
    res.table = Some(table);
    Ok(res)
}

/// Divergence time from a pair-converge table, `None` for "never".
pub fn divergence_time_of(t: &ResultTable, ctx: &PrecisionContext) -> Option<BigScalar> {
    t.note_value("t_div").and_then(|v| ctx.parse(v).ok())
}
