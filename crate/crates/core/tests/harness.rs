use std::fs;
use std::path::Path;
use std::sync::Mutex;

use lorenz_cg::errormodel::{eval_model, ErrorModel, MODEL_DIGITS};
use lorenz_cg::galerkin::{integrate_final, SolverConfig};
use lorenz_cg::harness::{self, ExperimentConfig, HarnessError, ResultTable};
use lorenz_cg::precision::PrecisionContext;
use lorenz_cg::problem::Lorenz;
use lorenz_cg::trajectory::Trajectory;

fn quiet(_: &str) {}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_matches_order_pair_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.txt");
    let cfg = ExperimentConfig::new()
        .with("digits", "64")
        .with("q", "5")
        .with("dt", "0.001")
        .with("tmax", "10")
        .with("u0", "1,0,0")
        .with("out", path_str(&out));
    let res = harness::run("solve", &cfg, &quiet).unwrap();
    assert!(res.report.iter().any(|l| l.starts_with("steps = 10000")));
    let traj = Trajectory::load(&out).unwrap();
    let u = traj.final_state();

    let c = PrecisionContext::new(64).unwrap();
    let sys = Lorenz::classic(&c);
    let u0 = c.vec_parse(&["1", "0", "0"]).unwrap();
    let ten = c.from_i64(10);
    let run = |q| integrate_final(&sys, &u0, &ten, &SolverConfig::new(c, q, c.parse("0.005").unwrap()).unwrap()).unwrap().0;
    let (r8, r10) = (run(8), run(10));
    let tiny = c.parse("1e-20").unwrap();
    // the pair agreeing far below the tolerance certifies the reference
    assert!(r8.sub(&r10).norm_inf() < c.parse("1e-24").unwrap());
    assert!(u.sub(&r8).norm_inf() < tiny, "{}", u.sub(&r8).norm_inf());
}

#[test]
fn resumed_solve_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::new().with("digits", "32").with("q", "2").with("dt", "0.01").with("tmax", "2");
    let a = dir.path().join("a.txt");
    harness::run("solve", &base.clone().with("out", path_str(&a)), &quiet).unwrap();

    let b = dir.path().join("b.txt");
    let ck = dir.path().join("b.ckpt");
    let chunk = base
        .clone()
        .with("out", path_str(&b))
        .with("checkpoint", path_str(&ck))
        .with("checkpoint_every", "30")
        .with("max_steps", "70");
    let first = harness::run("solve", &chunk, &quiet).unwrap();
    assert!(first.report[0].starts_with("paused at step 70"));
    assert!(ck.exists());
    // a different configuration must not pick up this checkpoint
    let other = chunk.clone().with("q", "3").with("resume", "true");
    assert!(matches!(harness::run("solve", &other, &quiet), Err(HarnessError::Config(_))));
    let resumed = chunk.clone().with("resume", "true").with("max_steps", "1000");
    harness::run("solve", &resumed, &quiet).unwrap();
    assert!(!ck.exists());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn replay_regenerates_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("quad-table", ExperimentConfig::new().with("family", "lobatto").with("n", "6").with("digits", "40")),
        ("predict", ExperimentConfig::new().with("q", "4").with("digits", "32").with("tmax", "20").with("target", "1e-3")),
        ("solve", ExperimentConfig::new().with("digits", "24").with("q", "3").with("dt", "0.05").with("tmax", "1")),
        (
            "pair-converge",
            ExperimentConfig::new().with("digits", "16").with("q_low", "1").with("q_high", "2").with("dt", "0.02").with("tmax", "3"),
        ),
    ];
    for (i, (cmd, cfg)) in cases.into_iter().enumerate() {
        let out = dir.path().join(format!("out{i}.txt"));
        harness::run(cmd, &cfg.with("out", path_str(&out)), &quiet).unwrap();
        let again = dir.path().join(format!("again{i}.txt"));
        let replay = ExperimentConfig::new().with("input", path_str(&out)).with("out", path_str(&again));
        let r = harness::run("replay", &replay, &quiet).unwrap();
        assert!(r.report.last().unwrap().ends_with("identical"), "{cmd}: {:?}", r.report);
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    }
    let junk = dir.path().join("junk.txt");
    fs::write(&junk, "hello\n").unwrap();
    let e = harness::run("replay", &ExperimentConfig::new().with("input", path_str(&junk)), &quiet).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let missing = ExperimentConfig::new().with("input", path_str(&dir.path().join("nope")));
    assert_eq!(harness::run("replay", &missing, &quiet).unwrap_err().exit_code(), 5);
}

#[test]
fn sweep_recovers_second_order_and_caches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = ExperimentConfig::new()
        .with("q", "1")
        .with("digits", "32")
        .with("tmax", "1")
        .with("dt", "0.025,0.0125,0.00625,0.003125")
        .with("cache_dir", path_str(&cache));
    let lines = Mutex::new(Vec::new());
    let log = |s: &str| lines.lock().unwrap().push(s.to_string());
    let t1 = harness::run("sweep-k", &cfg, &log).unwrap().table.unwrap();
    assert_eq!(t1.column("dt").unwrap(), vec!["0.003125", "0.00625", "0.0125", "0.025"]);
    assert_eq!(t1.config.get("ref_dt"), Some("1.5625e-3"));
    let slope: f64 = t1.note_value("fit.disc.slope").unwrap().parse().unwrap();
    assert!((slope - 2.0).abs() < 0.2, "{slope}");
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);

    lines.lock().unwrap().clear();
    let t2 = harness::run("sweep-k", &cfg, &log).unwrap().table.unwrap();
    assert!(lines.lock().unwrap().iter().any(|l| l.contains("from cache")));
    assert_eq!(t1, t2);
}

#[test]
fn sweep_refuses_unverifiable_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new()
        .with("q", "2")
        .with("digits", "16")
        .with("tmax", "1")
        .with("dt", "0.05,0.025")
        .with("ref_q", "5")
        .with("ref_dt", "0.5")
        .with("cache_dir", path_str(dir.path()));
    match harness::run("sweep-k", &cfg, &quiet) {
        Err(HarnessError::Config(m)) => assert!(m.contains("inadequate reference"), "{m}"),
        other => panic!("{other:?}"),
    }
    // a coarse reference step is fine once the companion run vouches for it
    let ok = cfg.clone().with("ref_dt", "0.05");
    let t = harness::run("sweep-k", &ok, &quiet).unwrap().table.unwrap();
    assert!(t.note_value("reference_error_estimate").is_some());
}

#[test]
fn stability_table_and_rate_fit() {
    let base = ExperimentConfig::new().with("digits", "30").with("q", "3").with("dt", "0.02").with("p", "0");
    let two = harness::run("stability", &base.clone().with("t_list", "2,4"), &quiet).unwrap().table.unwrap();
    assert_eq!(two.rows.len(), 2);
    assert_eq!(two.columns[1], "S_D_mantissa");
    assert!(two.note_value("fit.rate").is_some());
    assert!(two.note_value("extrapolated_log10_S_C").is_some());
    let one = harness::run("stability", &base.with("t_list", "2"), &quiet).unwrap().table.unwrap();
    assert_eq!(one.rows.len(), 1);
    assert!(one.note_value("fit.rate").is_none());
    // the shared final time gives the same factors
    assert_eq!(one.rows[0], two.rows[0]);
}

#[test]
fn calibrate_recovers_synthetic_constants() {
    let dir = tempfile::tempdir().unwrap();
    let c = PrecisionContext::new(MODEL_DIGITS).unwrap();
    let truth = ErrorModel::paper_tables();
    let mut inputs = Vec::new();
    for q in [2usize, 4] {
        let cfg = ExperimentConfig::new().with("q", q.to_string()).with("digits", "16").with("tmax", "30");
        let mut t = ResultTable::new("sweep-k", &cfg, &["dt", "error"]);
        for e in -40..=-2 {
            let k = c.from_i64(10).pow(&c.ratio(e, 10));
            let err = eval_model(&truth, &c.zero(), q, &k, &c.pow10(-16), &c.from_i64(30));
            t.push(vec![k.to_decimal(), err.to_decimal()]);
        }
        let p = dir.path().join(format!("sweep{q}.csv"));
        t.save(&p).unwrap();
        inputs.push(path_str(&p));
    }
    let model_path = dir.path().join("model.txt");
    let cfg = ExperimentConfig::new().with("inputs", inputs.join(",")).with("out", path_str(&model_path));
    harness::run("calibrate", &cfg, &quiet).unwrap();
    let m = ErrorModel::load(&model_path).unwrap();
    let close = |a: &lorenz_cg::precision::BigScalar, b: &lorenz_cg::precision::BigScalar| {
        (&(a - b) / b).abs() < c.parse("1e-4").unwrap()
    };
    for q in [2, 4] {
        assert!(close(&m.c2_for(q), &truth.c2_for(q)), "C2({q}) = {}", m.c2_for(q));
        assert!(close(&m.c3_for(q), &truth.c3_for(q)), "C3({q}) = {}", m.c3_for(q));
    }
    // the model file replays to the same bytes
    let again = dir.path().join("again.txt");
    let r = harness::run(
        "replay",
        &ExperimentConfig::new().with("input", path_str(&model_path)).with("out", path_str(&again)),
        &quiet,
    )
    .unwrap();
    assert!(r.report.last().unwrap().ends_with("identical"));

    let missing = ExperimentConfig::new().with("inputs", path_str(&dir.path().join("nothing.csv")));
    assert_eq!(harness::run("calibrate", &missing, &quiet).unwrap_err().exit_code(), 5);
}

#[test]
fn calibrate_without_a_minimum_fails_with_calibration_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new().with("q", "2").with("digits", "16").with("tmax", "10");
    let mut t = ResultTable::new("sweep-k", &cfg, &["dt", "error"]);
    for (k, e) in [("0.1", "1e-2"), ("0.05", "1e-3"), ("0.025", "1e-4")] {
        t.push(vec![k.into(), e.into()]);
    }
    let p = dir.path().join("s.csv");
    t.save(&p).unwrap();
    let e = harness::run("calibrate", &ExperimentConfig::new().with("inputs", path_str(&p)), &quiet).unwrap_err();
    assert_eq!(e.exit_code(), 4, "{e}");
}
