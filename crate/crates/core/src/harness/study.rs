use std::fs;
use std::path::{Path, PathBuf};

use super::{
    io_err, recorded, sci, worker_pool, CommandOutput, ExperimentConfig, HarnessError, Log, ResultTable, Setup,
};
use crate::adjoint::{growth_series, DualConfig};
use crate::errormodel::{
    calibrate, computability, eval_model, fit_loglog_slope, optimal_timestep, ErrorModel, FitMode, SweepPoint,
    MODEL_DIGITS,
};
use crate::galerkin::integrate;
use crate::precision::{BigScalar, PrecisionContext};
use crate::quadrature::{gauss_legendre, gauss_lobatto};
use crate::trajectory::Trajectory;

const FACTORS: [&str; 4] = ["S_D", "S_G", "S_C", "S_C2"];

/// Stability factors for every final time in `t_list`, one dual solve each.
///
/// The primal comes from `primal=<trajectory file>` or is computed up to the
/// largest final time. With two or more final times the growth rate of
/// `S_C` (decades per unit time) is fitted and extrapolated to `extrapolate_t`.
pub fn cmd_stability(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let defaults: Vec<(&str, String)> = [
        ("problem", "lorenz"),
        ("digits", "64"),
        ("q", "5"),
        ("dt", "0.01"),
        ("u0", "1,0,0"),
        ("t_list", "10,20,30,40,50"),
        ("p", "0"),
        ("extrapolate_t", "1000"),
    ]
    .iter()
    .map(|(k, v)| (*k, v.to_string()))
    .collect();
    let rec = recorded(cfg, &defaults);
    let digits = rec.u32("digits")?;
    let probe = PrecisionContext::new(digits)?;
    let t_list = rec.scalar_list("t_list", &probe)?;
    if t_list.iter().any(|t| !(*t > probe.zero())) {
        return Err(HarnessError::Config("final times must be positive".into()));
    }
    let t_max = t_list.iter().fold(t_list[0].clone(), |a, b| a.max(b));
    let mut run_cfg = rec.clone();
    run_cfg.set("tmax", t_max.to_decimal());
    let setup = Setup::new(&run_cfg, digits)?;
    let ctx = setup.ctx;
    let pool = worker_pool(cfg)?;

    let primal = match rec.get("primal") {
        Some(path) => {
            let t = Trajectory::load_into(Path::new(path), &ctx)?;
            if t.t_end() < t_max {
                return Err(HarnessError::Config(format!(
                    "primal trajectory ends at {}, before the largest final time {}",
                    sci(&t.t_end()),
                    sci(&t_max)
                )));
            }
            t
        }
        None => {
            let solver = setup.solver(&rec, rec.usize("q")?, &rec.scalar("dt", &ctx)?)?;
            log(&format!("primal cG({}) on [0, {}] at {digits} digits", solver.q, sci(&t_max)));
            pool.install(|| integrate(&setup.system, &setup.u0, &t_max, &solver))?.0
        }
    };
    let mut dual = DualConfig::for_primal(&primal);
    dual.dual_q = rec.usize_or("dual_q", dual.dual_q)?;
    if rec.contains("dual_dt") {
        dual.dual_dt = rec.scalar("dual_dt", &ctx)?;
    }
    if rec.contains("z_t") {
        dual.z_t = rec.vector_or("z_t", "", &ctx)?;
    }
    let p = rec.usize("p")?;
    log(&format!("{} dual solves, dual cG({})", t_list.len(), dual.dual_q));
    let series = pool.install(|| growth_series(&setup.system, &primal, &t_list, &dual, p));

    let mut cols = vec!["T".to_string()];
    for f in FACTORS {
        cols.push(format!("{f}_mantissa"));
        cols.push(format!("{f}_exponent"));
    }
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = ResultTable::new("stability", &rec, &cols);
    let mut res = CommandOutput::default();
    let mut growth = Vec::new();
    for (t, r) in series {
        let f = r.map_err(|e| HarnessError::Solver(format!("final time {}: {e}", sci(&t))))?;
        let mut row = vec![t.to_sci(10)];
        for v in [&f.s_d, &f.s_g, &f.s_c, &f.s_c2] {
            let (m, e) = v.mantissa_exponent(8);
            row.push(m);
            row.push(e.to_string());
        }
        res.report.push(format!(
            "T = {}: S_D = {}, S_G = {}, S_C = {}, S_C2 = {}",
            t.to_sci(4),
            f.s_d.to_sci(4),
            f.s_g.to_sci(4),
            f.s_c.to_sci(4),
            f.s_c2.to_sci(4)
        ));
        table.push(row);
        growth.push((t, f.s_c));
    }
    if growth.len() >= 2 {
        let fit = fit_loglog_slope(&growth, None, FitMode::SemiLog).map_err(|e| HarnessError::Calibration(e.to_string()))?;
        let t_ex: f64 = rec.require("extrapolate_t")?.parse().map_err(|_| HarnessError::Config("extrapolate_t must be a number".into()))?;
        let ex = fit.intercept + fit.slope * t_ex;
        table.note("fit.rate", format!("{:.6}", fit.slope));
        table.note("fit.intercept", format!("{:.6}", fit.intercept));
        table.note("fit.residual", format!("{:.6}", fit.residual));
        table.note("extrapolated_log10_S_C", format!("{ex:.3}"));
        res.report.push(format!("S_C grows like 10^({:.4} T); log10 S_C({t_ex}) ~ {ex:.1}", fit.slope));
    }
    res.table = Some(table);
    Ok(res)
}

/// Sweep points from a `sweep-k` table; `eps = 10^-digits`, `t = tmax`.
pub fn sweep_points(table: &ResultTable) -> Result<Vec<SweepPoint>, HarnessError> {
    if table.command != "sweep-k" {
        return Err(HarnessError::Config(format!("expected a sweep-k table, got {}", table.command)));
    }
    let c = PrecisionContext::new(MODEL_DIGITS)?;
    let q = table.config.usize("q")?;
    let digits = table.config.u32("digits")?;
    let t = table.config.scalar("tmax", &c)?;
    let (Some(dts), Some(errs)) = (table.column("dt"), table.column("error")) else {
        return Err(HarnessError::Config("sweep table lacks dt or error columns".into()));
    };
    dts.iter()
        .zip(errs)
        .map(|(k, e)| {
            Ok(SweepPoint {
                q,
                dt: c.parse(k)?,
                eps: c.pow10(-(digits as i64)),
                t: t.clone(),
                error: c.parse(e)?,
            })
        })
        .collect()
}

fn stability_inputs(path: &Path, c: &PrecisionContext) -> Result<(Option<BigScalar>, Vec<(BigScalar, BigScalar)>), HarnessError> {
    let table = ResultTable::load(path)?;
    if table.command != "stability" {
        return Err(HarnessError::Config(format!("{} is not a stability table", path.display())));
    }
    let rate = table.note_value("fit.rate").map(|v| c.parse(v)).transpose()?;
    let (Some(ts), Some(ms), Some(es)) = (table.column("T"), table.column("S_D_mantissa"), table.column("S_D_exponent")) else {
        return Err(HarnessError::Config("stability table lacks S_D columns".into()));
    };
    let sd = ts
        .iter()
        .zip(ms.iter().zip(es))
        .map(|(t, (m, e))| Ok((c.parse(t)?, c.parse(&format!("{m}e{e}"))?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok((rate, sd))
}

/// Fits the error model to sweep tables (`inputs`, comma-separated paths).
/// `gamma` defaults to 0.388 or to the rate in a `stability` table, which
/// also supplies `S_D(T)` for `C1`.
pub fn cmd_calibrate(cfg: &ExperimentConfig, log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let rec = recorded(cfg, &[]);
    let c = PrecisionContext::new(MODEL_DIGITS)?;
    let mut points = Vec::new();
    for path in rec.list("inputs")? {
        let table = ResultTable::load(Path::new(&path))?;
        points.extend(sweep_points(&table)?);
    }
    let (rate, sd) = match rec.get("stability") {
        Some(p) => stability_inputs(Path::new(p), &c)?,
        None => (None, Vec::new()),
    };
    let gamma = match (rec.get("gamma"), rate) {
        (Some(_), _) => rec.scalar("gamma", &c)?,
        (None, Some(r)) => r,
        (None, None) => c.parse("0.388")?,
    };
    log(&format!("calibrating on {} sweep points, gamma {}", points.len(), gamma.to_sci(4)));
    let model = calibrate(&points, &gamma, &sd)?;
    let mut res = CommandOutput::default();
    res.report.push(format!("C1 = {}, gamma = {}, beta = {:.3}", model.c1.to_sci(4), model.gamma.to_sci(4), model.beta));
    for (q, c2) in &model.c2 {
        let alpha = model.alpha.get(q).map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
        res.report.push(format!("q = {q}: C2 = {}, C3 = {}, fitted slope {alpha}", c2.to_sci(4), model.c3_for(*q).to_sci(4)));
    }
    if let Some(out) = cfg.get("out") {
        let out = PathBuf::from(out);
        fs::write(&out, model_file(&model, &rec)).map_err(|e| io_err(&out, e))?;
        res.files.push(out);
    }
    Ok(res)
}

/// Model text with the calibration's provenance as comment lines.
pub(crate) fn model_file(model: &ErrorModel, rec: &ExperimentConfig) -> String {
    let text = model.to_text();
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let mut s = format!("{first}\n# version={}\n# command=calibrate\n", env!("CARGO_PKG_VERSION"));
    for line in rec.to_lines() {
        s.push_str(&format!("# config.{line}\n"));
    }
    s.push_str(rest);
    s
}

/// Optimal step, expected error and computability horizons for `q` at
/// `digits` (ε = 10^-digits), from `model=<file>`, `model=paper-tables`, or
/// the published constants (`model=paper`, the default).
pub fn cmd_predict(cfg: &ExperimentConfig, _log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let defaults: Vec<(&str, String)> =
        [("q", "5"), ("digits", "16"), ("data_err", "0")].iter().map(|(k, v)| (*k, v.to_string())).collect();
    let rec = recorded(cfg, &defaults);
    let model = match rec.get("model") {
        None | Some("paper") => ErrorModel::paper(),
        Some("paper-tables") => ErrorModel::paper_tables(),
        Some(p) => ErrorModel::load(Path::new(p))?,
    };
    let c = model.context();
    let q = rec.usize("q")?;
    if q == 0 {
        return Err(HarnessError::Config("q must be at least 1".into()));
    }
    let n = rec.u32("digits")?;
    let eps = c.pow10(-(n as i64));
    let mut table = ResultTable::new("predict", &rec, &["quantity", "value"]);
    let mut res = CommandOutput::default();
    let mut put = |table: &mut ResultTable, k: &str, v: String| {
        res.report.push(format!("{k} = {v}"));
        table.push(vec![k.to_string(), v]);
    };
    put(&mut table, "eps", eps.to_sci(6));
    put(&mut table, "optimal_dt", optimal_timestep(q, &eps).to_sci(6));
    let k_model = model.optimal_timestep(q, &eps);
    put(&mut table, "optimal_dt_model", k_model.to_sci(6));
    put(&mut table, "horizon", computability(&eps, None)?.to_sci(6));
    if rec.contains("target") {
        let target = rec.scalar("target", &c)?;
        put(&mut table, "horizon_target", computability(&eps, Some(&target))?.to_sci(6));
        put(&mut table, "horizon_model", model.horizon(q, &eps, &target)?.to_sci(6));
        table.note("horizon_model_prefactor", "the model's own bracket at its optimal step");
    }
    if rec.contains("tmax") {
        let dt = if rec.contains("dt") { rec.scalar("dt", &c)? } else { k_model };
        let t = rec.scalar("tmax", &c)?;
        let d = rec.scalar("data_err", &c)?;
        put(&mut table, "error_dt", dt.to_sci(6));
        put(&mut table, "error", eval_model(&model, &d, q, &dt, &eps, &t).to_sci(6));
    }
    res.table = Some(table);
    Ok(res)
}

/// Points and weights of an `n`-point Gauss-Legendre or Gauss-Lobatto rule on `[0, 1]`.
pub fn cmd_quad_table(cfg: &ExperimentConfig, _log: Log<'_>) -> Result<CommandOutput, HarnessError> {
    let defaults: Vec<(&str, String)> =
        [("family", "legendre"), ("n", "5"), ("digits", "32")].iter().map(|(k, v)| (*k, v.to_string())).collect();
    let rec = recorded(cfg, &defaults);
    let ctx = PrecisionContext::new(rec.u32("digits")?)?;
    let n = rec.usize("n")?;
    let rule = match rec.require("family")? {
        "legendre" => gauss_legendre(n, &ctx)?,
        "lobatto" => gauss_lobatto(n, &ctx)?,
        other => return Err(HarnessError::Config(format!("family={other:?}: expected legendre or lobatto"))),
    };
    let sig = ctx.serial_digits();
    let mut table = ResultTable::new("quad-table", &rec, &["i", "point", "weight"]);
    for (i, (x, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        table.push(vec![i.to_string(), x.to_sci(sig), w.to_sci(sig)]);
    }
    table.note("exactness_degree", rule.exactness_degree.to_string());
    let res = CommandOutput {
        report: vec![format!("{} {n}-point rule, exact to degree {}", rule.family, rule.exactness_degree)],
        table: Some(table),
        ..Default::default()
    };
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value<'a>(t: &'a ResultTable, k: &str) -> &'a str {
        let i = t.column("quantity").unwrap().iter().position(|q| *q == k).unwrap();
        &t.rows[i][1]
    }

    #[test]
    fn predict_default_horizons() {
        let cfg = ExperimentConfig::new().with("digits", "420").with("q", "100");
        let t = cmd_predict(&cfg, &|_| {}).unwrap().table.unwrap();
        let c = PrecisionContext::new(30).unwrap();
        let h = c.parse(value(&t, "horizon")).unwrap();
        assert!((&h - &c.from_i64(1050)).abs() < c.parse("1e-20").unwrap());
        let k: f64 = value(&t, "optimal_dt").parse().unwrap();
        assert!((k - 0.008).abs() < 0.0005, "{k}");
    }

    #[test]
    fn predict_rejects_target_below_eps() {
        let cfg = ExperimentConfig::new().with("digits", "16").with("target", "1e-20");
        assert!(matches!(cmd_predict(&cfg, &|_| {}), Err(HarnessError::Config(_))));
    }

    #[test]
    fn quad_table_rows() {
        let cfg = ExperimentConfig::new().with("family", "lobatto").with("n", "3").with("digits", "20");
        let t = cmd_quad_table(&cfg, &|_| {}).unwrap().table.unwrap();
        assert_eq!(t.rows.len(), 3);
        let c = PrecisionContext::new(20).unwrap();
        assert_eq!(c.parse(&t.rows[1][1]).unwrap(), c.parse("0.5").unwrap());
        assert_eq!(t.note_value("exactness_degree"), Some("3"));
        let bad = ExperimentConfig::new().with("family", "radau");
        assert!(cmd_quad_table(&bad, &|_| {}).is_err());
    }

    #[test]
    fn sweep_points_from_table() {
        let cfg = ExperimentConfig::new().with("q", "2").with("digits", "16").with("tmax", "10");
        let mut t = ResultTable::new("sweep-k", &cfg, &["dt", "error"]);
        t.push(vec!["0.1".into(), "1e-3".into()]);
        let p = sweep_points(&t).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].q, 2);
        assert_eq!(p[0].eps, PrecisionContext::new(MODEL_DIGITS).unwrap().pow10(-16));
        t.command = "stability".into();
        assert!(sweep_points(&t).is_err());
    }
}
