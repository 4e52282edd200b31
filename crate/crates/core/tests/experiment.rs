use std::fs;
use std::path::Path;

use easloc::bo::initial_design;
use easloc::experiment::commands::{read_runs_csv, RUNS_HEADER};
use easloc::experiment::stats::Spread;
use easloc::experiment::{
    benchmark, ground_truth, loss_map, preprocess, run, ExperimentConfig, Layout, Mode, ModeAggregate,
};
use easloc::mesh::GeometryParams;
use easloc::Error;

/// 642-node ellipsoid, small basis, short budgets.
fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.geometry.synthetic = Some(GeometryParams::ellipsoid([20.0, 18.0, 30.0], 3));
    cfg.kernel.n_eig = Some(48);
    cfg.bo.max_acquisitions = 12;
    cfg.bo.gp_restarts = 3;
    cfg.benchmark.seeds = vec![0, 1];
    cfg.output.dir = dir.to_path_buf();
    cfg
}

fn prepared(dir: &Path) -> ExperimentConfig {
    let cfg = small_config(dir);
    preprocess(&cfg, &Layout::new(dir), false).unwrap();
    cfg
}

fn header_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_flow_writes_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepared(tmp.path());
    let layout = Layout::new(tmp.path());
    let hash = cfg.hash();

    let truth = ground_truth(&cfg).unwrap();
    assert_eq!(truth.hf_self_loss, 0.0);
    assert_eq!(truth.lf_correlations.len(), 12);
    assert!(truth.snap_distance > 0.0 && truth.snap_distance < 3.0);
    assert!(truth.lf_loss > 0.0);

    let sf = run(&cfg, Mode::Sf, 3).unwrap();
    assert_eq!(sf.initial_cost, 10.0);
    assert_eq!(sf.hf_evaluations, 10 + sf.iterations);
    assert_eq!(sf.lf_evaluations, 0);
    let run_dir = layout.run_dir("sf", 3);
    let audit = fs::read(run_dir.join("audit.csv")).unwrap();
    for f in ["audit.csv", "surrogate_map.svg", "loss_vs_iteration.svg"] {
        assert!(header_line(&run_dir.join(f)).contains(&format!("config_hash={hash}, seed=3")), "{f}");
    }
    assert!(fs::read_to_string(run_dir.join("summary.json")).unwrap().contains(&hash));

    let mf = run(&cfg, Mode::Mf, 3).unwrap();
    assert!((mf.initial_cost - 8.75).abs() < 1e-12);
    assert_eq!(mf.lf_evaluations, 35);
    assert_eq!(mf.hf_evaluations, 5 + mf.iterations);
    assert!((mf.total_cost - (mf.initial_cost + mf.iterations as f64)).abs() < 1e-9);

    // rerunning reproduces the audit byte for byte
    run(&cfg, Mode::Sf, 3).unwrap();
    assert_eq!(fs::read(run_dir.join("audit.csv")).unwrap(), audit);

    let report = benchmark(&cfg).unwrap();
    assert_eq!(report.failures(), 0);
    assert_eq!(report.rows.len(), 4);
    let bench = layout.benchmark_dir();
    let rows = read_runs_csv(&bench.join("runs.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    // aggregates recompute exactly from the per-run CSV
    for (mode, agg) in [(Mode::Sf, &report.sf), (Mode::Mf, &report.mf)] {
        let again = ModeAggregate::from_runs(mode, &rows);
        assert_eq!(again.cost, agg.cost);
        assert_eq!(again.iterations, agg.iterations);
        assert_eq!(again.convergence_rate, agg.convergence_rate);
    }
    // and each row's cost from the audit trail
    for r in &rows {
        let text = fs::read_to_string(bench.join(format!("audit/{}_seed{}.csv", r.mode.as_str(), r.seed))).unwrap();
        let last = text.lines().last().unwrap();
        let cum: f64 = last.split(',').nth(7).unwrap().parse().unwrap();
        assert_eq!(cum, r.total_cost);
    }
    let cmp = fs::read_to_string(bench.join("comparison.csv")).unwrap();
    let sf_line = cmp.lines().find(|l| l.starts_with("sf,")).unwrap();
    let median: f64 = sf_line.split(',').nth(7).unwrap().parse().unwrap();
    let costs: Vec<f64> = rows.iter().filter(|r| r.mode == Mode::Sf).map(|r| r.total_cost).collect();
    assert_eq!(median, Spread::of(&costs).unwrap().median);
    for f in ["runs.csv", "comparison.csv", "cost_boxplot.svg", "iterations_boxplot.svg"] {
        assert!(header_line(&bench.join(f)).contains(&format!("config_hash={hash}, seed=0 1")), "{f}");
    }
    assert!(fs::read_to_string(bench.join("runs.csv")).unwrap().contains(RUNS_HEADER));

    let lm = loss_map(&cfg).unwrap();
    // the sf and mf runs of seed 3
    assert_eq!(lm.certifications.len(), 2);
    let losses = fs::read_to_string(layout.loss_map_dir().join("lf_loss.csv")).unwrap();
    let min = losses
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("node"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min, lm.lf_min_loss);
}

#[test]
fn truth_in_initial_design_needs_no_acquisition() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    let seed = 11;
    let design = initial_design(642, cfg.bo.initial_size, seed).unwrap();
    cfg.truth.direction = None;
    cfg.truth.node = Some(design[4].0);
    ground_truth(&cfg).unwrap();
    let s = run(&cfg, Mode::Sf, seed).unwrap();
    assert!(s.converged);
    assert_eq!(s.iterations, 0);
    assert_eq!(s.total_cost, 10.0);
    assert_eq!(s.best_node, Some(design[4].0));
    assert_eq!(s.final_geodesic_error, Some(0.0));
}

#[test]
fn commands_require_their_prerequisites() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    assert!(matches!(ground_truth(&cfg), Err(Error::Artifact(_))));
    preprocess(&cfg, &Layout::new(tmp.path()), false).unwrap();
    assert!(matches!(run(&cfg, Mode::Sf, 0), Err(Error::Artifact(_))));
    ground_truth(&cfg).unwrap();
    // a changed truth makes the stored reference stale
    let mut moved = cfg.clone();
    moved.truth.direction = Some([0.0, 1.0, 0.0]);
    assert!(matches!(run(&moved, Mode::Sf, 0), Err(Error::Artifact(_))));
}

#[test]
fn short_seed_list_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.benchmark.seeds = vec![5];
    assert!(matches!(benchmark(&cfg), Err(Error::Config(_))));
}

#[test]
fn coordinate_truth_snaps_to_the_nearest_node() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    cfg.truth.direction = None;
    cfg.truth.coordinate = Some([0.0, 0.0, 31.0]);
    let t = ground_truth(&cfg).unwrap();
    assert_eq!(t.requested, Some([0.0, 0.0, 31.0]));
    let p = t.position;
    let d = ((p[0]).powi(2) + (p[1]).powi(2) + (p[2] - 31.0).powi(2)).sqrt();
    assert!((d - t.snap_distance).abs() < 1e-12);
    assert!(p[2] > 29.0);
}
