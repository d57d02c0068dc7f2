use std::path::PathBuf;

use ias_core::fd::{central_difference, compare, fd_gradient, ipa_gradient, rel_err, sample_cost, Estimate};
use ias_core::output::write_trajectory_csv;
use ias_core::sweep::{
    classify_scenario, perturbation_study, replication_seeds, run_grid, sensitivity_at, Scenario,
};
use ias_core::{
    default_config, load_config, run_sample_path, run_with_gradient, EventKind, Error, GridRange,
    RunConfig, ThetaIndex, Tolerance, Verdict,
};

fn short(t: f64) -> RunConfig {
    let mut cfg = default_config();
    cfg.horizon_t = t;
    cfg
}

fn empty_populations() -> RunConfig {
    let mut cfg = default_config().deterministic();
    cfg.params.model.mu1 = 0.0;
    cfg.init.x1 = 0.0;
    cfg.init.x2 = 0.0;
    cfg
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("ias-core-{}-{name}", std::process::id()));
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn empty_populations_stay_empty_without_events() {
    let traj = run_sample_path(&empty_populations(), 0).unwrap();
    assert!(traj.events.is_empty());
    assert!(traj.samples.iter().all(|s| s.x1 == 0.0 && s.x2 == 0.0));
    assert_eq!(classify_scenario(&traj), Scenario::A);
}

#[test]
fn zero_initial_psa_cannot_normalize_the_cost() {
    let cfg = empty_populations();
    let err = run_with_gradient(&cfg, 0).unwrap().cost_value().unwrap_err();
    assert_eq!(err.category(), "config");
    let err = fd_gradient(&cfg, ThetaIndex::ALPHA1, 1e-6, &[0]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn same_seed_gives_byte_identical_trajectories() {
    let cfg = short(800.0);
    let csv = || {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &run_sample_path(&cfg, 42).unwrap()).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
    let mut other = Vec::new();
    write_trajectory_csv(&mut other, &run_sample_path(&cfg, 43).unwrap()).unwrap();
    assert_ne!(csv(), other);
}

#[test]
fn default_config_cycles() {
    let cfg = default_config();
    for seed in [0, 1] {
        let traj = run_sample_path(&cfg, seed).unwrap();
        assert!(traj.count(EventKind::Suspend) >= 3, "{} suspensions", traj.count(EventKind::Suspend));
        assert_eq!(classify_scenario(&traj), Scenario::C);
    }
}

#[test]
fn uncontrolled_growth_is_scenario_b() {
    // theta1 is never reached, so treatment stays on while CRC grows.
    let mut cfg = default_config().deterministic();
    cfg.theta_bounds = None;
    cfg.params.thresholds.theta1 = 0.01;
    let traj = run_sample_path(&cfg, 0).unwrap();
    assert!(traj.events.is_empty());
    assert!(traj.psa_max > 10.0 * cfg.params.thresholds.theta2);
    assert_eq!(classify_scenario(&traj), Scenario::B);
}

#[test]
fn preset_threshold_pairs_are_accepted() {
    let cfg = default_config();
    for (t1, t2) in [(1.5, 8.0), (7.5, 15.0)] {
        let c = cfg.with_thresholds(t1, t2);
        c.validate().unwrap();
        assert!(c.theta_bounds.unwrap().contains(&c.params.thresholds));
        run_sample_path(&c.deterministic(), 0).unwrap();
    }
}

#[test]
fn threshold_gradient_vanishes_without_events() {
    let mut cfg = short(100.0).deterministic();
    cfg.params.thresholds.theta1 = 1.0;
    let out = run_with_gradient(&cfg, 0).unwrap();
    assert!(out.trajectory.events.is_empty());
    let g = out.gradient().unwrap();
    assert_eq!(g[ThetaIndex::THETA1.slot()], 0.0);
    assert_eq!(g[ThetaIndex::THETA2.slot()], 0.0);
    assert!(g[ThetaIndex::ALPHA1.slot()] != 0.0);
}

#[test]
fn single_replication_equals_single_gradient() {
    let cfg = short(600.0);
    let s = sensitivity_at(&cfg, 1).unwrap();
    let seed = replication_seeds(cfg.seed, 1)[0];
    let g = ipa_gradient(&cfg, seed).unwrap();
    assert_eq!(s.grad_mean, g);
    assert_eq!(s.cost_mean, sample_cost(&cfg, seed).unwrap());
    assert_eq!((s.n_ok, s.n_diverged), (1, 0));
}

#[test]
fn one_cell_grid_equals_sensitivity_at() {
    let cfg = short(600.0);
    let th = cfg.params.thresholds;
    let grid = run_grid(&cfg, &GridRange::single(th.theta1), &GridRange::single(th.theta2), 3, 1).unwrap();
    assert_eq!(grid.records.len(), 1);
    let r = &grid.records[0];
    let s = sensitivity_at(&cfg, 3).unwrap();
    assert_eq!(r.cost_mean, s.cost_mean);
    assert_eq!(r.grad, [s.grad_mean[2], s.grad_mean[3], s.grad_mean[4], s.grad_mean[5]]);
    assert_eq!(r.scenario, s.scenario);
    assert_eq!(r.seed_base, cfg.seed);
}

#[test]
fn grid_skips_cells_with_inverted_thresholds() {
    let mut cfg = short(200.0);
    cfg.theta_bounds = None;
    let t1 = GridRange::new(5.5, 7.5, 1.0).unwrap();
    let t2 = GridRange::new(6.0, 8.0, 1.0).unwrap();
    let grid = run_grid(&cfg, &t1, &t2, 1, 1).unwrap();
    assert!(grid.records.iter().all(|r| r.theta1 < r.theta2));
    // theta1 = 5.5 keeps 3 cells, 6.5 keeps 2, 7.5 keeps 1.
    assert_eq!(grid.records.len(), 6);
    let empty = run_grid(&cfg, &GridRange::single(7.0), &GridRange::single(6.0), 1, 1);
    assert!(matches!(empty, Err(Error::Config(_))));
}

#[test]
fn perturbation_study_shape_and_baseline() {
    let cfg = short(1200.0);
    let percents = [-30.0, -15.0, 0.0, 15.0, 30.0];
    let rows = perturbation_study(&cfg, ThetaIndex::ALPHA1, &percents, 2).unwrap();
    assert_eq!(rows.len(), 5);
    let baseline = sensitivity_at(&cfg, 2).unwrap();
    let zero = rows.iter().find(|r| r.percent == 0.0).unwrap();
    assert_eq!(zero.scenario, baseline.scenario);
    assert_eq!(zero.cost_mean, baseline.cost_mean);
    assert!(perturbation_study(&cfg, ThetaIndex::THETA1, &[0.0], 1).is_err());
    assert!(perturbation_study(&cfg, ThetaIndex::ALPHA1, &[-100.0], 1).is_err());
}

#[test]
fn deterministic_fd_is_seed_independent() {
    let cfg = short(800.0).deterministic();
    let a = fd_gradient(&cfg, ThetaIndex::BETA1, 1e-6, &[1]).unwrap();
    let b = fd_gradient(&cfg, ThetaIndex::BETA1, 1e-6, &[99]).unwrap();
    assert_eq!(a.mean, b.mean);
    assert!(a.mean != 0.0);
}

#[test]
fn fd_rejects_inadmissible_perturbation() {
    let cfg = default_config();
    let bounds = cfg.theta_bounds.unwrap();
    let at_edge = cfg.with_thresholds(bounds.theta1_min, cfg.params.thresholds.theta2);
    let err = fd_gradient(&at_edge, ThetaIndex::THETA1, 1e-3, &[0]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn common_random_numbers_reduce_fd_variance() {
    let cfg = short(1500.0);
    let i = ThetaIndex::ALPHA1;
    let theta = cfg.params.theta(i);
    let delta = 1e-4 * theta;
    let seeds = replication_seeds(11, 12);
    let crn = fd_gradient(&cfg, i, delta, &seeds).unwrap();
    let independent: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let up = sample_cost(&cfg.with_theta(i, theta + delta), s).unwrap();
            let down = sample_cost(&cfg.with_theta(i, theta - delta), s ^ 0xDEAD_BEEF).unwrap();
            (up - down) / (2.0 * delta)
        })
        .collect();
    let independent = Estimate::from_values(independent).unwrap();
    assert!(crn.se * 10.0 < independent.se, "crn se {} vs independent se {}", crn.se, independent.se);
}

#[test]
fn fd_is_second_order_in_delta() {
    // Halving delta shrinks the central-difference error fourfold, and the
    // Richardson extrapolation lands on the IPA value.
    let cfg = default_config().deterministic();
    let ipa = ipa_gradient(&cfg, 0).unwrap();
    for i in [ThetaIndex::THETA1, ThetaIndex::ALPHA1, ThetaIndex::BETA2] {
        let theta = cfg.params.theta(i);
        let d: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|r| fd_gradient(&cfg, i, r * theta, &[0]).unwrap().mean)
            .collect();
        let ratio = (d[0] - d[1]) / (d[1] - d[2]);
        assert!((3.5..4.5).contains(&ratio), "{i}: ratio {ratio}");
        let extrapolated = (4.0 * d[2] - d[1]) / 3.0;
        assert!(rel_err(ipa[i.slot()], extrapolated) < 1e-4, "{i}: {} vs {extrapolated}", ipa[i.slot()]);
    }
}

#[test]
fn compare_arithmetic() {
    let one = |v: f64| Estimate::from_values(vec![v]).unwrap();
    let r = compare(ThetaIndex::ALPHA1, 1e-4, &one(1.0), &one(1.0005), Tolerance::Relative(1e-3)).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let r = compare(ThetaIndex::ALPHA1, 1e-4, &one(1.0), &one(1.1), Tolerance::Relative(1e-3)).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    let two = Estimate::from_values(vec![1.0, 2.0]).unwrap();
    assert!(compare(ThetaIndex::ALPHA1, 1e-4, &one(1.0), &two, Tolerance::Relative(1e-3)).is_err());
    assert_eq!(central_difference(3.0, 1e-4, |x| Ok(x * x)).unwrap().round(), 6.0);
}

#[test]
fn independent_replication_batches_agree() {
    let cfg = default_config();
    let a = sensitivity_at(&cfg, 100).unwrap();
    let mut other = cfg.clone();
    other.seed = 0x5EED;
    let b = sensitivity_at(&other, 100).unwrap();
    for s in [ThetaIndex::ALPHA1.slot(), ThetaIndex::BETA1.slot(), ThetaIndex::THETA2.slot()] {
        let se = (a.grad_se[s].powi(2) + b.grad_se[s].powi(2)).sqrt();
        assert!((a.grad_mean[s] - b.grad_mean[s]).abs() <= 2.0 * se, "slot {s}");
    }
    let se = (a.cost_se.powi(2) + b.cost_se.powi(2)).sqrt();
    assert!((a.cost_mean - b.cost_mean).abs() <= 2.0 * se);
}

#[test]
fn config_file_round_trip_and_defaults() {
    let cfg = default_config();
    let path = temp_file("full.json", &cfg.to_json_string());
    assert_eq!(load_config(&path).unwrap(), cfg);

    let mut tree: serde_json::Value = serde_json::from_str(&cfg.to_json_string()).unwrap();
    let obj = tree.as_object_mut().unwrap();
    obj.remove("horizon_T");
    obj.remove("noise");
    let path = temp_file("partial.json", &tree.to_string());
    let loaded = load_config(&path).unwrap();
    assert_eq!(loaded.horizon_t, 2500.0);
    assert_eq!(loaded.noise.std1, 0.001);
    assert_eq!(loaded.noise.std3, 0.0);

    tree["theta"] = serde_json::json!({"theta1": 9.0, "theta2": 8.0});
    let path = temp_file("inverted.json", &tree.to_string());
    let err = load_config(&path).unwrap_err();
    assert!(err.to_string().contains("theta1 < theta2 violated"), "{err}");

    let path = temp_file("empty.json", "");
    let err = load_config(&path).unwrap_err();
    assert!(err.to_string().contains("model.alpha1") && err.to_string().contains("init.x1"), "{err}");

    assert!(matches!(load_config("/nonexistent/ias.json"), Err(Error::Config(_))));
}

#[test]
fn shipped_example_config_loads() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    assert_eq!(load_config(path).unwrap(), default_config());
}
