//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Expected values come from closed forms of the catalog systems (verified
//! in-line by independent oracles), with every tolerance pinned here.

use ostab::catalog;
use ostab::checks::{check_reb, check_res, check_rmeb, check_sit, reb_gains_from_rmeb, Verdict};
use ostab::gains::{compose_mes_gain, kl_factorize, verify_factorization};
use ostab::lyapunov::{
    build_value_function, comparison_domination_check, exp_decrease_check, sandwich_check,
    solve_comparison_ode, DecreaseProbeOpts, ValueFnParams,
};
use ostab::trajectory::{annulus_states, integrate, track_nearby};
use ostab::{
    DisturbanceStrategy, Ensemble, Error, KlEnvelope, RegionPredicate, ScalarGain, SimParams,
    StateGrid,
};
use ostab_cli::{run_command, Command};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn pass(criterion: usize, name: &str, detail: &str) {
    println!("ACCEPTANCE {criterion} ({name}): PASS - {detail}");
}

fn zero_signal() -> ostab::DisturbanceSignal {
    ostab::DisturbanceSignal::constant(Vec::new())
}

/// The spiral's closed-form solution.
fn spiral(xi: (f64, f64), t: f64) -> (f64, f64) {
    let e = t.exp();
    (
        e * (xi.0 * t.cos() + xi.1 * t.sin()),
        e * (-xi.0 * t.sin() + xi.1 * t.cos()),
    )
}

#[test]
fn criterion_1_spiral_trajectory_fidelity() {
    let sys = catalog::example_5_5();
    let start = Instant::now();
    let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), 2.0 * PI, 1e-3, 1e8).unwrap();
    let elapsed = start.elapsed();
    let mut max_err: f64 = 0.0;
    for k in 0..traj.len() {
        let (x1, x2) = spiral((1.0, 0.0), traj.time(k));
        max_err = max_err
            .max((traj.state(k)[0] - x1).abs())
            .max((traj.state(k)[1] - x2).abs());
    }
    assert!(max_err <= 1e-6, "max abs error {max_err}");
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "integration took {elapsed:?}, budget 1 s"
    );
    pass(
        1,
        "trajectory fidelity",
        &format!("max abs error {max_err:.3e} <= 1e-6 in {elapsed:?}"),
    );
}

#[test]
fn criterion_2_sit_certification_over_annulus() {
    let sys = catalog::example_5_5();
    let states = annulus_states(2, 0.1, 10.0, 1000, 2024).unwrap();
    assert_eq!(states.len(), 1000);
    for s in &states {
        let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
        assert!((0.1 - 1e-9..=10.0 + 1e-9).contains(&r));
    }
    let start = Instant::now();
    let params = SimParams::new(2024, 2.0 * PI).with_dt(1e-3);
    let ensemble = Ensemble::simulate(&sys, &states, &params).unwrap();
    let beta = KlEnvelope::exponential(ScalarGain::identity(), 2.0 * PI, 1.0);
    let report = check_sit(&ensemble, &beta, &ScalarGain::identity(), 1.0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.total_violations, 0, "{:?}", report.violations.first());
    assert_eq!(report.verdict, Verdict::Pass);
    assert!(report.binding_trajectories > 100, "sampling sanity");
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "run took {elapsed:?}, budget 30 s"
    );
    pass(
        2,
        "SIT certification",
        &format!(
            "0 violations over {} binding trajectories in {elapsed:?}",
            report.binding_trajectories
        ),
    );
}

#[test]
fn criterion_3_mes_falsification_unbounded_error() {
    let sys = catalog::example_5_5();
    let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), 15.0, 1e-3, 1e8).unwrap();
    for t_end in [5.0_f64, 10.0, 15.0] {
        let k_end = (t_end / 1e-3).round() as usize;
        let sup_y = traj.sup_error(k_end);
        let floor = (t_end - PI).exp();
        assert!(
            sup_y >= 0.99 * floor,
            "sup |y| over [0, {t_end}] = {sup_y}, needs >= 0.99 * {floor}"
        );
        assert_eq!(traj.sup_measurement(k_end), 1.0, "w is identically 1");
    }
    pass(
        3,
        "MES falsification",
        "error peaks clear e^(T - pi) at T = 5, 10, 15 while the measurement stays at 1",
    );
}

#[test]
fn criterion_4_value_function_oracle() {
    let sys = catalog::scalar_contraction();
    let positives: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    let mut axis: Vec<f64> = positives.iter().rev().map(|v| -v).collect();
    axis.extend(&positives);
    let grid = StateGrid::new(vec![axis]).unwrap();
    let region = RegionPredicate::origin();
    let params = ValueFnParams::new(ScalarGain::power(1.0, 2.0), 10.0, 7).with_dt(1e-3);
    let table = build_value_function(&sys, &region, &grid, &params).unwrap();

    let mut worst_rel: f64 = 0.0;
    for (i, point) in grid.points().enumerate() {
        let expected = point[0] * point[0];
        let rel = (table.values[i] - expected).abs() / expected;
        worst_rel = worst_rel.max(rel);
        assert!(
            rel <= 1e-3,
            "xi = {}: value {} vs oracle {expected}",
            point[0],
            table.values[i]
        );
    }

    let beta = KlEnvelope::exponential(ScalarGain::power(1.0, 2.0), 0.0, 1.0);
    let sandwich = sandwich_check(&table, &sys, &beta, 1.02).unwrap();
    assert!(sandwich.passed(), "sandwich: {sandwich:?}");

    let decrease = exp_decrease_check(
        &table,
        &sys,
        &region,
        &DecreaseProbeOpts {
            probes: 40,
            seed: 9,
            slack: 1.02,
            horizon: 5.0,
        },
    )
    .unwrap();
    assert!(
        decrease.passed(),
        "decrease violations: {:?} / {:?}",
        decrease.violations.first(),
        decrease.integral_violations.first()
    );
    pass(
        4,
        "value-function oracle",
        &format!(
            "worst relative error {worst_rel:.2e}; sandwich and exponential decrease clean at slack 1.02"
        ),
    );
}

#[test]
fn criterion_5_comparison_ode_suite() {
    // Linear rate: w(t) = e^{-t}.
    let lin = solve_comparison_ode(&ScalarGain::identity(), 1.0, 5.0, 1e-3, None).unwrap();
    let mut worst = 0.0_f64;
    for (t, v) in lin.times.iter().zip(&lin.values) {
        worst = worst.max((v - (-t).exp()).abs());
    }
    assert!(worst <= 1e-6, "linear comparison error {worst}");

    // Quadratic rate: w(t) = 1 / (1 + t).
    let quad = solve_comparison_ode(&ScalarGain::power(1.0, 2.0), 1.0, 5.0, 1e-3, None).unwrap();
    let mut worst_q = 0.0_f64;
    for (t, v) in quad.times.iter().zip(&quad.values) {
        worst_q = worst_q.max((v - 1.0 / (1.0 + t)).abs());
    }
    assert!(worst_q <= 1e-6, "quadratic comparison error {worst_q}");

    // Perturbed family: uniform gaps shrink monotonically in n.
    let mut last_gap = f64::INFINITY;
    for n in [10, 100, 1000] {
        let sol = solve_comparison_ode(&ScalarGain::identity(), 1.0, 5.0, 1e-3, Some(n)).unwrap();
        let gap = sol
            .values
            .iter()
            .zip(&lin.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < last_gap, "gap {gap} at n = {n} must shrink");
        last_gap = gap;
    }

    // Domination: the equality case passes...
    let dt = 1e-3;
    let v: Vec<f64> = (0..=5000).map(|k| (-(k as f64) * dt).exp()).collect();
    let eq = comparison_domination_check(&v, &ScalarGain::identity(), dt, 1.0, None).unwrap();
    assert!(eq.passed());

    // ...a staircase built from the quadrature oracle passes...
    let dt_stair = 1e-2;
    let mut stair = vec![1.0_f64];
    for _ in 0..400 {
        let prev = *stair.last().unwrap();
        stair.push(prev * (1.0 - 0.5 * dt_stair) / (1.0 + 0.5 * dt_stair));
    }
    let ok = comparison_domination_check(&stair, &ScalarGain::identity(), dt_stair, 1.0, None)
        .unwrap();
    assert!(ok.passed());

    // ...and inputs violating the integral decrease inequality are refused.
    let flat: Vec<f64> = (0..=300)
        .map(|k| (-((k as f64 * dt_stair).ceil())).exp())
        .collect();
    let refused = comparison_domination_check(&flat, &ScalarGain::identity(), dt_stair, 1.0, None);
    assert!(matches!(refused, Err(Error::PreconditionFailed { .. })));

    pass(
        5,
        "comparison ODE suite",
        &format!("ODE errors {worst:.2e} / {worst_q:.2e}; perturbed gaps shrink; domination gate works"),
    );
}

#[test]
fn criterion_6_gain_algebra() {
    // compose_mes_gain(2r, r^2, 3r, r) must equal max{3r, 4r^2} exactly.
    let gamma = compose_mes_gain(
        &ScalarGain::linear(2.0),
        &ScalarGain::power(1.0, 2.0),
        &ScalarGain::linear(3.0),
        &ScalarGain::identity(),
    )
    .unwrap();
    for i in 0..100 {
        let r = 0.04 * i as f64;
        let oracle = (3.0 * r).max(4.0 * (r * r));
        assert_eq!(gamma.evaluate(r).unwrap(), oracle, "r = {r}");
    }

    // Factorizing s e^{2 pi - t} at rate 2 passes on a 50x50 grid.
    let beta = KlEnvelope::exponential(ScalarGain::identity(), 2.0 * PI, 1.0);
    let (alpha1, alpha2) = kl_factorize(&beta, 2.0).unwrap();
    let s_grid = StateGrid::linspace(0.0, 10.0, 50);
    let t_grid = StateGrid::linspace(0.0, 10.0, 50);
    let report = verify_factorization(&beta, &alpha1, &alpha2, 2.0, &s_grid, &t_grid).unwrap();
    assert_eq!(report.checked, 2500);
    assert!(report.violations.is_empty(), "{:?}", report.violations.first());

    // Settle times of s e^{-t} match ln(r / eps).
    let unit = KlEnvelope::unit_exponential();
    let mut worst = 0.0_f64;
    for (r, eps) in [(1.0, 1.0), (std::f64::consts::E.powi(2), 1.0), (5.0, 0.1), (0.5, 0.25)] {
        let got = unit.settle_time(r, eps).unwrap();
        let oracle = (r / eps).ln().max(0.0);
        worst = worst.max((got - oracle).abs());
        assert!((got - oracle).abs() <= 1e-6, "r = {r}, eps = {eps}");
    }

    pass(
        6,
        "gain algebra",
        &format!("five-branch gain exact at 100 probes; factorization clean on 50x50; settle times within {worst:.2e}"),
    );
}

#[test]
fn criterion_7_cross_checker_consistency() {
    // (a) Gain-form RES reproduces SIT violation sets on every catalog
    // ensemble.
    let beta = KlEnvelope::exponential(ScalarGain::identity(), PI, 1.0);
    for (name, sys) in catalog::entries() {
        let states = annulus_states(sys.dim(), 0.2, 3.0, 8, 7).unwrap();
        let params = SimParams::new(7, 3.0)
            .with_dt(1e-3)
            .with_strategy(DisturbanceStrategy::Uniform);
        let ensemble = Ensemble::simulate(&sys, &states, &params).unwrap();
        for rho in [ScalarGain::identity(), ScalarGain::linear(0.5)] {
            let sit = check_sit(&ensemble, &beta, &rho, 1.0).unwrap();
            let res = check_res(
                &ensemble,
                &beta,
                &RegionPredicate::gain_form(rho.clone()),
                1.0,
            )
            .unwrap();
            assert_eq!(sit.verdict, res.verdict, "{name}");
            assert_eq!(sit.total_violations, res.total_violations, "{name}");
            let key =
                |v: &ostab::Violation| (v.trajectory, v.time.to_bits(), v.lhs.to_bits(), v.rhs.to_bits());
            assert_eq!(
                sit.violations.iter().map(key).collect::<Vec<_>>(),
                res.violations.iter().map(key).collect::<Vec<_>>(),
                "{name}"
            );
        }
    }

    // (b) Wherever RMEB passes, REB with the derived gains must not fail:
    // ten randomized ensembles with fixed seeds.
    let entries = catalog::entries();
    let mut rmeb_passes = 0;
    for seed in 0..10u64 {
        let (name, sys) = &entries[(seed % entries.len() as u64) as usize];
        let states = annulus_states(sys.dim(), 0.2, 3.0, 6, seed).unwrap();
        let params = SimParams::new(seed, 3.0)
            .with_dt(1e-3)
            .with_strategy(DisturbanceStrategy::Uniform);
        let ensemble = Ensemble::simulate(sys, &states, &params).unwrap();
        let rho1 = ScalarGain::linear(0.5 + 0.2 * (seed % 4) as f64);
        let sigma1 = ScalarGain::linear(4.0 + seed as f64);
        let sigma2 = ScalarGain::linear(3.0 + (seed % 3) as f64);
        let rmeb = check_rmeb(&ensemble, &rho1, &sigma1, &sigma2, 1.0).unwrap();
        if rmeb.verdict == Verdict::Pass {
            rmeb_passes += 1;
            let (rho2, sigma) = reb_gains_from_rmeb(&rho1, &sigma1, &sigma2).unwrap();
            let reb = check_reb(&ensemble, &rho2, &sigma, 1.0).unwrap();
            assert_ne!(
                reb.verdict,
                Verdict::Violated,
                "seed {seed} on {name}: derived REB gains failed where RMEB passed"
            );
        }
    }
    assert!(rmeb_passes >= 3, "only {rmeb_passes} RMEB passes; want >= 3");
    pass(
        7,
        "cross-checker consistency",
        &format!("RES == SIT on all catalog ensembles; REB follows RMEB on {rmeb_passes} passing runs"),
    );
}

#[test]
fn criterion_8_tracking_certificates() {
    let sys = catalog::disturbed_contraction(1.0);
    let horizon = 4.0;
    let dt = 1e-3;
    let mut worst_gap_err = 0.0_f64;
    for k in 0..50u64 {
        // Deterministic low-discrepancy pairs in [-2, 2].
        let x0 = -2.0 + 4.0 * ((k as f64 * 0.618_033_988_749_895) % 1.0);
        let p = -2.0 + 4.0 * ((k as f64 * 0.324_717_957_244_746 + 0.37) % 1.0);
        let signal = sys
            .sample_disturbance_signal(horizon, 0.25, DisturbanceStrategy::Uniform, 1000 + k)
            .unwrap();
        let traj = integrate(&sys, &[x0], &signal, horizon, dt, 1e8).unwrap();
        let report = track_nearby(&sys, &traj, &[p], 8, 500 + k, Some(1.0)).unwrap();
        assert!(
            report.certificate_found,
            "pair {k}: x0 = {x0}, p = {p}, best gap {}",
            report.max_normalized_gap
        );

        // Replay oracle: same signal from p gives gap |x0 - p| e^{-t} exactly.
        let replay = integrate(&sys, &[p], &signal, horizon, dt, 1e8).unwrap();
        for idx in (0..traj.len()).step_by(200) {
            let gap = (traj.state(idx)[0] - replay.state(idx)[0]).abs();
            let oracle = (x0 - p).abs() * (-traj.time(idx)).exp();
            worst_gap_err = worst_gap_err.max((gap - oracle).abs());
        }
    }
    assert!(worst_gap_err <= 1e-6, "replay gap error {worst_gap_err}");
    pass(
        8,
        "tracking certificates",
        &format!("50/50 certificates found; replay gap within {worst_gap_err:.2e} of the closed form"),
    );
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_into(command: Command, config: &Path, out: &Path) -> i32 {
    run_command(command, Some(config), Some(out), None)
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_9_byte_identical_reruns() {
    let cases = [
        (Command::Check, "sit_demo.json", 0),
        (Command::Check, "mes_demo.json", 1),
        (Command::Lyapunov, "lyapunov_oracle.json", 0),
        (Command::Gains, "gains_demo.json", 0),
        (Command::Simulate, "simulate_demo.json", 0),
    ];
    for (command, config_name, expected_code) in cases {
        let config = configs_dir().join(config_name);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let code_a = run_into(command, &config, dir_a.path());
        let code_b = run_into(command, &config, dir_b.path());
        assert_eq!(code_a, expected_code, "{config_name}: unexpected exit code");
        assert_eq!(code_b, expected_code, "{config_name}: rerun exit code");
        let snap_a = dir_snapshot(dir_a.path());
        let snap_b = dir_snapshot(dir_b.path());
        assert!(!snap_a.is_empty(), "{config_name}: no artifacts written");
        assert_eq!(
            snap_a.len(),
            snap_b.len(),
            "{config_name}: artifact sets differ"
        );
        for ((name_a, bytes_a), (name_b, bytes_b)) in snap_a.iter().zip(&snap_b) {
            assert_eq!(name_a, name_b, "{config_name}");
            assert_eq!(bytes_a, bytes_b, "{config_name}: {name_a} differs between runs");
        }
    }
    pass(
        9,
        "determinism",
        "byte-identical artifacts across reruns of all five demo configs",
    );
}
