use lorenz_cg::adjoint::{solve_dual, stability_factors, DualConfig};
use lorenz_cg::galerkin::{integrate, SolverConfig};
use lorenz_cg::precision::{BigScalar, PrecisionContext};
use lorenz_cg::problem::Lorenz;
use lorenz_cg::trajectory::{divergence_time, Trajectory};
use proptest::prelude::*;

fn ctx(d: u32) -> PrecisionContext {
    PrecisionContext::new(d).unwrap()
}

fn lorenz_run(c: PrecisionContext, q: usize, dt: &str, t: i64, u0: [&str; 3]) -> Trajectory {
    let sys = Lorenz::classic(&c);
    let cfg = SolverConfig::new(c, q, c.parse(dt).unwrap()).unwrap();
    integrate(&sys, &c.vec_parse(&u0).unwrap(), &c.from_i64(t), &cfg).unwrap().0
}

#[test]
fn lorenz_dual_order_pair_agrees_to_twenty_digits() {
    let c = ctx(64);
    let primal = lorenz_run(c, 5, "0.01", 10, ["1", "0", "0"]);
    let sys = Lorenz::classic(&c);
    let ten = c.from_i64(10);
    // cG(5) at the primal step leaves ~1e-13 (the dual decays to |z(0)| ~ 1
    // through cancellation); at k/8 its k^10 error drops below 1e-21
    let z0 = |q: usize| {
        let mut cfg = DualConfig::for_primal(&primal);
        cfg.dual_q = q;
        cfg.dual_dt = c.parse("0.00125").unwrap();
        solve_dual(&sys, &primal, &ten, &cfg).unwrap().initial_value()
    };
    let (a, b) = (z0(5), z0(8));
    let rel = &a.sub(&b).norm_inf() / &b.norm_inf();
    assert!(rel < c.parse("1e-20").unwrap(), "relative gap {}", rel.to_sci(4));
}

#[test]
fn order_pair_divergence_is_later_at_higher_precision() {
    // cG(3) against cG(5) at k = 0.01: at 8 digits the gap is round-off,
    // at 24 digits it is the ~1e-12 discretization error of cG(3)
    let t_div = |d: u32| {
        let c = ctx(d);
        let a = lorenz_run(c, 3, "0.01", 30, ["1", "0", "0"]);
        let b = lorenz_run(c, 5, "0.01", 30, ["1", "0", "0"]);
        divergence_time(&a, &b, &c.parse("1e-3").unwrap(), &c.parse("0.25").unwrap()).unwrap().t_div
    };
    let short = t_div(8).expect("8 digits diverge within 30 time units").to_f64();
    let long = t_div(24).expect("24 digits diverge within 30 time units").to_f64();
    assert!(short > 0.0 && long > short + 5.0, "{short} {long}");
}

#[test]
fn trajectory_file_round_trip_through_public_api() {
    let c = ctx(40);
    let t = lorenz_run(c, 3, "0.05", 1, ["1", "2", "3"]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    t.save(&p).unwrap();
    let back = Trajectory::load(&p).unwrap();
    assert_eq!(back.values(), t.values());
    let half = c.parse("0.5").unwrap();
    assert_eq!(back.evaluate(&half).unwrap(), t.evaluate(&half).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dual_is_linear_in_its_terminal_value(scale in 1i64..50, comp in 0usize..3) {
        let c = ctx(30);
        let primal = lorenz_run(c, 2, "0.05", 1, ["1", "0", "0"]);
        let sys = Lorenz::classic(&c);
        let one = c.one();
        let mut cfg = DualConfig::for_primal(&primal);
        cfg.z_t = lorenz_cg::precision::BigVec::zeros(&c, 3);
        cfg.z_t[comp] = c.one();
        let base = solve_dual(&sys, &primal, &one, &cfg).unwrap();
        let k = c.from_i64(scale);
        cfg.z_t = cfg.z_t.scale(&k);
        let scaled = solve_dual(&sys, &primal, &one, &cfg).unwrap();
        let diff = scaled.initial_value().sub(&base.initial_value().scale(&k)).norm_inf();
        let size = scaled.initial_value().norm_inf();
        prop_assert!(diff <= &size * &c.parse("1e-26").unwrap());
        let f = stability_factors(&scaled, 0).unwrap();
        let g = stability_factors(&base, 0).unwrap();
        let rel = |a: &BigScalar, b: &BigScalar| (&(a - &(b * &k)) / a).abs();
        prop_assert!(rel(&f.s_c, &g.s_c) < c.parse("1e-26").unwrap());
    }

    #[test]
    fn saved_trajectories_reload_exactly(x in -15i64..15, y in -15i64..15, z in 5i64..40, q in 1usize..4) {
        let c = ctx(24);
        let (xs, ys, zs) = (x.to_string(), y.to_string(), z.to_string());
        let t = lorenz_run(c, q, "0.1", 1, [&xs, &ys, &zs]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        t.save(&p).unwrap();
        let back = Trajectory::load(&p).unwrap();
        prop_assert_eq!(back.values(), t.values());
    }
}
