//! Browser bindings: a phase portrait, a two-precision divergence run and the
//! error model's predictions. Everything runs on the pure-Rust backend.

use lorenz_cg::errormodel::{optimal_timestep, ErrorModel};
use lorenz_cg::galerkin::{integrate, SolverConfig};
use lorenz_cg::precision::PrecisionContext;
use lorenz_cg::problem::Lorenz;
use lorenz_cg::trajectory::{divergence_time, Trajectory};
use wasm_bindgen::prelude::*;

/// Keeps a click from freezing the tab.
pub const MAX_STEPS: usize = 40_000;
pub const MAX_DIGITS: u32 = 120;

fn run(digits: u32, q: usize, dt: f64, tmax: f64) -> Result<Trajectory, String> {
    if !(dt > 0.0 && tmax > 0.0) {
        return Err("dt and tmax must be positive".into());
    }
    if digits > MAX_DIGITS {
        return Err(format!("at most {MAX_DIGITS} digits in the browser"));
    }
    let steps = (tmax / dt).ceil();
    if steps > MAX_STEPS as f64 {
        return Err(format!("{steps} steps; the demo allows {MAX_STEPS}"));
    }
    let c = PrecisionContext::new(digits).map_err(|e| e.to_string())?;
    let sys = Lorenz::classic(&c);
    let cfg = SolverConfig::new(c, q, c.parse(&dt.to_string()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let u0 = c.vec_parse(&["1", "0", "0"]).map_err(|e| e.to_string())?;
    let t = c.parse(&tmax.to_string()).map_err(|e| e.to_string())?;
    integrate(&sys, &u0, &t, &cfg).map(|r| r.0).map_err(|e| e.to_string())
}

/// Flat `[t, x, y, z, …]` at every partition point, starting from (1, 0, 0).
#[wasm_bindgen]
pub fn phase_portrait(digits: u32, q: usize, dt: f64, tmax: f64) -> Result<Vec<f64>, String> {
    let traj = run(digits, q, dt, tmax)?;
    let mut out = Vec::with_capacity((traj.intervals() + 1) * 4);
    for m in 0..=traj.intervals() {
        let t = traj.node_time(m);
        let u = traj.evaluate(&t).map_err(|e| e.to_string())?;
        out.push(t.to_f64());
        out.extend(u.iter().map(|x| x.to_f64()));
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct Divergence {
    times: Vec<f64>,
    log10_gaps: Vec<f64>,
    t_div: f64,
}

#[wasm_bindgen]
impl Divergence {
    /// Sample times of the gap series.
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn log10_gaps(&self) -> Vec<f64> {
        self.log10_gaps.clone()
    }

    /// NaN when the runs never separate by more than the tolerance.
    #[wasm_bindgen(getter)]
    pub fn t_div(&self) -> f64 {
        self.t_div
    }
}

/// The same cG(q) run at two precisions, compared every `sample_dt` until
/// the sup-norm gap first exceeds `10^tol_exp`.
#[wasm_bindgen]
pub fn divergence(
    digits_low: u32,
    digits_high: u32,
    q: usize,
    dt: f64,
    tmax: f64,
    tol_exp: i32,
    sample_dt: f64,
) -> Result<Divergence, String> {
    let a = run(digits_low, q, dt, tmax)?;
    let b = run(digits_high, q, dt, tmax)?;
    let c = PrecisionContext::new(digits_low.max(digits_high)).map_err(|e| e.to_string())?;
    let sample = c.parse(&sample_dt.to_string()).map_err(|e| e.to_string())?;
    let report = divergence_time(&a, &b, &c.pow10(tol_exp as i64), &sample).map_err(|e| e.to_string())?;
    let (times, log10_gaps) = report
        .samples
        .iter()
        .map(|(t, g)| (t.to_f64(), if g.is_zero() { f64::NEG_INFINITY } else { g.log10_abs_f64() }))
        .unzip();
    Ok(Divergence { times, log10_gaps, t_div: report.t_div.map_or(f64::NAN, |t| t.to_f64()) })
}

/// `[optimal step, horizon]` from the published constants at `n_mach` digits;
/// the horizon is where the predicted error reaches `10^target_exp`.
#[wasm_bindgen]
pub fn predict(q: usize, n_mach: u32, target_exp: i32) -> Result<Vec<f64>, String> {
    if q == 0 {
        return Err("q must be at least 1".into());
    }
    let model = ErrorModel::paper();
    let c = model.context();
    let eps = c.pow10(-(n_mach as i64));
    let k = optimal_timestep(q, &eps);
    let horizon = model.horizon(q, &eps, &c.pow10(target_exp as i64)).map_err(|e| e.to_string())?;
    Ok(vec![k.to_f64(), horizon.to_f64()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portrait_starts_at_initial_state() {
        let p = phase_portrait(20, 2, 0.05, 1.0).unwrap();
        assert_eq!(p.len(), 21 * 4);
        assert_eq!(&p[..4], &[0.0, 1.0, 0.0, 0.0]);
        assert!((p[80] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn limits_are_enforced() {
        assert!(phase_portrait(20, 2, 1e-4, 10.0).is_err());
        assert!(phase_portrait(500, 2, 0.1, 1.0).is_err());
        assert!(predict(0, 16, -3).is_err());
    }

    #[test]
    fn predictions_are_finite_and_ordered() {
        let lo = predict(4, 16, -3).unwrap();
        let hi = predict(4, 32, -3).unwrap();
        assert!(lo[0] > hi[0] && hi[1] > lo[1]);
    }
}
