use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use super::{
    common_defaults, digest, io_err, recorded, sci, worker_pool, CommandOutput, ExperimentConfig, HarnessError, Log,
    ResultTable, Setup,
};
use crate::errormodel::{fit_loglog_slope, FitMode, LineFit};
use crate::galerkin::integrate_final;
use crate::precision::{BigScalar, BigVec, PrecisionContext};
use crate::trajectory::vec_gap;

/// An order-pair check must put the reference this far below the smallest
/// sweep error.
pub const REFERENCE_MARGIN: &str = "1e-3";

/// Steps swept when none are given.
pub const DEFAULT_SWEEP: &str = "0.1,0.05,0.025";

const SOLVER_KEYS: [&str; 3] = ["residual_tol", "max_newton_iters", "guess"];

/// Everything that determines a reference final state; its digest names
/// the cache file.
pub fn reference_key(cfg: &ExperimentConfig, q: usize, digits: u32, dt: &str) -> ExperimentConfig {
    let mut key = ExperimentConfig::new()
        .with("kind", "final-state")
        .with("version", env!("CARGO_PKG_VERSION"))
        .with("problem", cfg.str_or("problem", "lorenz"))
        .with("u0", cfg.str_or("u0", "1,0,0"))
        .with("tmax", cfg.str_or("tmax", "10"))
        .with("q", q.to_string())
        .with("digits", digits.to_string())
        .with("dt", dt);
    for (k, v) in cfg.iter() {
        if k.starts_with("param.") || SOLVER_KEYS.contains(&k) {
            key.set(k, v);
        }
    }
    key
}

fn cache_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    match cfg.get("cache_dir") {
        Some("none") => None,
        Some(p) => Some(PathBuf::from(p)),
        None => Some(std::env::temp_dir().join("lorenz-cg-cache")),
    }
}

/// Final state of the run described by `key`, from the cache if present.
fn reference_state(
    key: &ExperimentConfig,
    dir: Option<&PathBuf>,
    log: Log<'_>,
) -> Result<BigVec, HarnessError> {
    let digits = key.u32("digits")?;
    let setup = Setup::new(key, digits)?;
    let ctx = setup.ctx;
    let path = dir.map(|d| d.join(format!("ref-{}.txt", &digest(key)[..32])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        if let Some(state) = text.lines().find_map(|l| l.strip_prefix("state=")) {
            let parts: Vec<&str> = state.split_whitespace().collect();
            if let Ok(v) = ctx.vec_parse(&parts) {
                log(&format!("reference cG({}) at {digits} digits from cache", key.require("q")?));
                return Ok(v);
            }
        }
        log(&format!("ignoring unreadable cache file {}", p.display()));
    }
    let solver = setup.solver(key, key.usize("q")?, &key.scalar("dt", &ctx)?)?;
    log(&format!("computing reference cG({}) at {digits} digits, dt {}", solver.q, key.require("dt")?));
    let (state, _) = integrate_final(&setup.system, &setup.u0, &setup.tmax, &solver)?;
    if let (Some(d), Some(p)) = (dir, &path) {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        let mut text = String::from("# lorenz-cg reference\n");
        for line in key.to_lines() {
            text.push_str(&format!("# {line}\n"));
        }
        let vals: Vec<String> = state.iter().map(|v| v.to_decimal()).collect();
        text.push_str(&format!("state={}\n", vals.join(" ")));
        let tmp = p.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, p).map_err(|e| io_err(p, e))?;
    }
    Ok(state)
}

/// Short decimal for a scalar, trailing zeros trimmed.
fn short(x: &BigScalar) -> String {
    let s = x.to_sci(17);
    match s.split_once('e') {
        Some((m, e)) if m.contains('.') => {
            let m = m.trim_end_matches('0').trim_end_matches('.');
            format!("{m}e{e}")
        }
        _ => s,
    }
}

/// Errors of the branches either side of the smallest error: everything at
/// smaller steps, and larger steps up to the largest error (past it the
/// error has saturated).
pub(crate) fn v_branches(points: &[(BigScalar, BigScalar)]) -> (usize, Vec<usize>, Vec<usize>) {
    let imin = (0..points.len()).min_by(|&a, &b| points[a].1.partial_cmp(&points[b].1).unwrap()).unwrap_or(0);
    let imax = (imin..points.len()).max_by(|&a, &b| points[a].1.partial_cmp(&points[b].1).unwrap()).unwrap_or(imin);
    (imin, (0..=imin).collect(), (imin..=imax).collect())
}

fn window(cfg: &ExperimentConfig, key: &str, ctx: &PrecisionContext) -> Result<Option<(BigScalar, BigScalar)>, HarnessError> {
    let Some(v) = cfg.get(key) else { return Ok(None) };
    let bad = || HarnessError::Config(format!("{key}={v:?}: expected lo:hi"));
    let (lo, hi) = v.split_once(':').ok_or_else(bad)?;
    Ok(Some((ctx.parse(lo.trim()).map_err(|_| bad())?, ctx.parse(hi.trim()).map_err(|_| bad())?)))
}

fn note_fit(table: &mut ResultTable, name: &str, fit: &LineFit) {
    table.note(&format!("fit.{name}.slope"), format!("{:.6}", fit.slope));
    table.note(&format!("fit.{name}.intercept"), format!("{:.6}", fit.intercept));
    table.note(&format!("fit.{name}.residual"), format!("{:.6}", fit.residual));
    table.note(&format!("fit.{name}.points"), fit.points.to_string());
}

/// Final-time error against a reference for every step in the `dt` list.
///
/// The reference runs at `ref_q ≥ q + 3` and `ref_digits ≥ 2·digits`; its
/// step `ref_dt` defaults to half the smallest sweep step. A larger `ref_dt`
/// is accepted only when an order-pair companion run (`ref_q + 2`) shows the
/// reference error below 10⁻³ of the smallest sweep error.
///
/// Slopes of the two branches of the error curve are fitted either on the
/// automatic split around the minimum or on the windows `fit_disc=lo:hi`
/// and `fit_round=lo:hi`.
pub fn cmd_sweep_k(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let digits = cfg.u32_or("digits", 32)?;
    let q = cfg.usize_or("q", 2)?;
    let probe = PrecisionContext::new(digits)?;
    let mut defaults = common_defaults();
    for d in defaults.iter_mut().filter(|d| d.0 == "dt") {
        d.1 = DEFAULT_SWEEP.to_string();
    }
    let dts = recorded(cfg, &defaults).scalar_list("dt", &probe)?;
    if dts.iter().any(|k| !(*k > probe.zero())) {
        return Err(HarnessError::Config("sweep steps must be positive".into()));
    }
    let k_min = dts.iter().fold(dts[0].clone(), |a, b| a.min(b));
    defaults.extend([
        ("ref_q", (q + 3).to_string()),
        ("ref_digits", (2 * digits).max(64).to_string()),
        ("ref_dt", short(&k_min.div_i64(2))),
    ]);
    let rec = recorded(cfg, &defaults);
    let (ref_q, ref_digits) = (rec.usize("ref_q")?, rec.u32("ref_digits")?);
    if ref_q < q + 3 {
        return Err(HarnessError::Config(format!(
            "inadequate reference: ref_q = {ref_q} but a cG({q}) sweep needs ref_q >= {}",
            q + 3
        )));
    }
    if ref_digits < 2 * digits {
        return Err(HarnessError::Config(format!(
            "inadequate reference: ref_digits = {ref_digits} but a {digits}-digit sweep needs at least {}",
            2 * digits
        )));
    }
    let setup = Setup::new(&rec, digits)?;
    let ref_ctx = PrecisionContext::new(ref_digits)?;
    let ref_dt_str = rec.require("ref_dt")?.to_string();
    let ref_dt = rec.scalar("ref_dt", &ref_ctx)?;
    // slack absorbs the binary rounding of k_min at the sweep precision
    let half = &ref_ctx.convert(&k_min).div_i64(2) * &ref_ctx.parse("1.000001")?;
    let verify = ref_dt > half || rec.bool_or("verify_reference", false)?;

    let mut order: Vec<usize> = (0..dts.len()).collect();
    order.sort_by(|&a, &b| dts[a].partial_cmp(&dts[b]).unwrap());
    let dir = cache_dir(cfg);
    let pool = worker_pool(cfg)?;
    let ref_key = reference_key(&rec, ref_q, ref_digits, &ref_dt_str);
    let comp_key = reference_key(&rec, ref_q + 2, ref_digits, &ref_dt_str);

    let (refs, runs) = pool.install(|| {
        rayon::join(
            || -> Result<(BigVec, Option<BigVec>), HarnessError> {
                let (r, c) = rayon::join(
                    || reference_state(&ref_key, dir.as_ref(), log),
                    || verify.then(|| reference_state(&comp_key, dir.as_ref(), log)).transpose(),
                );
                Ok((r?, c?))
            },
            || {
                order
                    .par_iter()
                    .map(|&i| {
                        let k = &dts[i];
                        let solver = setup.solver(&rec, q, k)?;
                        let (state, stats) = integrate_final(&setup.system, &setup.u0, &setup.tmax, &solver)
                            .map_err(HarnessError::from)
                            .map_err(|e| match e {
                                HarnessError::Solver(m) => HarnessError::Solver(format!("dt = {}: {m}", sci(k))),
                                other => other,
                            })?;
                        log(&format!("cG({q}) dt = {} done ({} steps)", sci(k), stats.steps));
                        Ok((i, state, stats))
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()
            },
        )
    });
    let (reference, companion) = refs?;
    let runs = runs?;

    let names: Vec<String> = (0..setup.u0.len()).map(|i| ["x", "y", "z"].get(i).map(|s| s.to_string()).unwrap_or(format!("u{i}"))).collect();
    let mut columns = vec!["dt".to_string(), "steps".into(), "error".into(), "max_newton".into()];
    columns.extend(names.iter().cloned());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut table = ResultTable::new("sweep-k", &rec, &cols);
    let raw_dts = rec.list("dt")?;
    let sig = setup.ctx.serial_digits();
    let mut points = Vec::new();
    for (i, state, stats) in &runs {
        let err = vec_gap(state, &reference, &ref_ctx);
        let mut row = vec![raw_dts[*i].clone(), stats.steps.to_string(), sci(&err), stats.max_newton_iterations.to_string()];
        row.extend(state.iter().map(|v| v.to_sci(sig)));
        table.push(row);
        points.push((ref_ctx.convert(&dts[*i]), err));
    }

    let mut res = CommandOutput::default();
    table.note("reference", format!("cG({ref_q}) at {ref_digits} digits, dt {ref_dt_str}"));
    if let Some(comp) = &companion {
        let est = vec_gap(&reference, comp, &ref_ctx);
        table.note("reference_error_estimate", sci(&est));
        let min_err = points.iter().fold(points[0].1.clone(), |a, (_, e)| a.min(e));
        let limit = &min_err * &ref_ctx.parse(REFERENCE_MARGIN)?;
        if est > limit {
            return Err(HarnessError::Config(format!(
                "inadequate reference: cG({ref_q}) and cG({}) at dt {ref_dt_str} differ by {}, \
                 more than {REFERENCE_MARGIN} of the smallest sweep error {}; reduce ref_dt or raise ref_q",
                ref_q + 2,
                sci(&est),
                sci(&min_err)
            )));
        }
    }

    let (imin, round, disc) = v_branches(&points);
    table.note("min_error_dt", raw_dts[order[imin]].clone());
    table.note("min_error", sci(&points[imin].1));
    let pick = |idx: &[usize]| idx.iter().map(|&i| points[i].clone()).collect::<Vec<_>>();
    let fits = [
        ("disc", window(&rec, "fit_disc", &ref_ctx)?, pick(&disc)),
        ("round", window(&rec, "fit_round", &ref_ctx)?, pick(&round)),
    ];
    for (name, win, branch) in fits {
        let fit = match &win {
            Some((lo, hi)) => fit_loglog_slope(&points, Some((lo, hi)), FitMode::LogLog),
            None => fit_loglog_slope(&branch, None, FitMode::LogLog),
        };
        match fit {
            Ok(f) => {
                note_fit(&mut table, name, &f);
                res.report.push(format!("{name} branch slope {:.3} over {} points", f.slope, f.points));
            }
            Err(e) => res.warnings.push(format!("no {name} branch fit: {e}")),
        }
    }
    res.report.push(format!(
        "smallest error {} at dt = {}",
        sci(&points[imin].1),
        raw_dts[order[imin]]
    ));
    res.table = Some(table);
    Ok(res)
}
