//! The experiment commands behind the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifacts::{
    build_meshes, csv_rows, ensure_writable, header, parse_f64, read_json, write_file, write_json, Layout, Prepared,
};
use super::config::ExperimentConfig;
use super::pipeline::{ForwardModel, LossProblem};
use super::stats::Spread;
use super::svg::{self, Marker, Point2};
use crate::bo::{audit_csv, run_mf_bo, run_sf_bo, BoConfig, BoResult, BoState, StopReason, Truth};
use crate::ecg::{ecg_loss, lead_correlations, read_ecg_csv, write_ecg_csv, EcgTrace, TimeGrid};
use crate::eikonal::geodesic_distances;
use crate::gp::mf::Fidelity;
use crate::gp::MaternKernel;
use crate::mesh::{save_mesh_titled, MeshFormat};
use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sf,
    Mf,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sf => "sf",
            Mode::Mf => "mf",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sf" => Ok(Mode::Sf),
            "mf" => Ok(Mode::Mf),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected sf or mf)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshReport {
    pub hf_nodes: usize,
    pub hf_elements: usize,
    pub lf_nodes: usize,
    pub lf_elements: usize,
    pub diameter: f64,
}

/// Writes the configured HF and LF meshes (VTK, fibers embedded).
pub fn gen_mesh(cfg: &ExperimentConfig) -> Result<MeshReport> {
    let layout = Layout::new(&cfg.output.dir);
    let dir = layout.mesh_dir();
    ensure_writable(&dir)?;
    let (hf, lf) = build_meshes(cfg)?;
    let title = format!("easloc mesh {}", header(&cfg.hash(), cfg.bo.seed));
    save_mesh_titled(&hf, &dir.join("hf.vtk"), MeshFormat::VtkLegacyAscii, &title)?;
    save_mesh_titled(&lf, &dir.join("lf.vtk"), MeshFormat::VtkLegacyAscii, &title)?;
    Ok(MeshReport {
        hf_nodes: hf.num_vertices(),
        hf_elements: hf.num_elements(),
        lf_nodes: lf.num_vertices(),
        lf_elements: lf.num_elements(),
        diameter: hf.diameter(),
    })
}

fn forward_models(cfg: &ExperimentConfig, p: &Prepared) -> Result<(ForwardModel, ForwardModel)> {
    let hf = ForwardModel::with_lead_fields(
        p.hf_mesh.clone(),
        cfg.eikonal,
        &cfg.conductivity,
        cfg.action_potential,
        p.hf_leads.clone(),
    )?;
    let lf = ForwardModel::with_lead_fields(
        p.lf_mesh.clone(),
        cfg.eikonal,
        &cfg.conductivity,
        cfg.action_potential,
        p.lf_leads.clone(),
    )?;
    Ok((hf, lf))
}

/// Ground-truth metadata written next to the reference ECG.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config_hash: String,
    pub reference_hash: String,
    pub seed: u64,
    pub node: usize,
    pub position: [f64; 3],
    /// Requested point before snapping to the nearest node, if any.
    pub requested: Option<[f64; 3]>,
    pub snap_distance: f64,
    pub lf_node: usize,
    pub max_activation_time: f64,
    pub dt: f64,
    pub steps: usize,
    pub lead_names: Vec<String>,
    /// Per-lead Pearson correlation of the LF and HF ECG at the truth.
    pub lf_correlations: Vec<f64>,
    pub lf_loss: f64,
    /// Loss of a fresh HF simulation at the truth against the reference.
    pub hf_self_loss: f64,
}

const REFERENCE: &str = "reference_ecg.csv";
const LF_AT_TRUTH: &str = "lf_ecg_at_truth.csv";
const TRUTH: &str = "truth.json";

/// Truth node from the config; snapping is reported as (node, requested
/// point, distance).
fn resolve_truth(cfg: &ExperimentConfig, p: &Prepared) -> Result<(NodeId, Option<[f64; 3]>, f64)> {
    let mesh = &p.hf_mesh;
    let t = &cfg.truth;
    if let Some(n) = t.node {
        return mesh.node(n).map(|id| (id, None, 0.0)).map_err(|e| Error::Config(format!("truth: {e}")));
    }
    let target = match (t.coordinate, t.direction) {
        (Some(c), _) => nalgebra::Vector3::from(c),
        (None, Some(d)) => {
            let (lo, hi) = mesh.bounding_box();
            let centre = (lo + hi) / 2.0;
            let half = (hi - lo) / 2.0;
            let dir = nalgebra::Vector3::from(d).normalize();
            centre + half.component_mul(&dir)
        }
        (None, None) => return Err(Error::Config("truth: no location given".into())),
    };
    let node = mesh.nearest_node(&target);
    let dist = (mesh.vertex(node) - target).norm();
    Ok((node, Some(target.into()), dist))
}

/// HF forward solve at the truth node; writes the reference ECG, the LF ECG
/// at the truth and the truth record.
pub fn ground_truth(cfg: &ExperimentConfig) -> Result<TruthRecord> {
    let layout = Layout::new(&cfg.output.dir);
    let dir = layout.ground_truth_dir();
    ensure_writable(&dir)?;
    let prepared = Prepared::load(cfg, &layout)?;
    let (node, requested, snap) = resolve_truth(cfg, &prepared)?;
    if requested.is_some() {
        log::info!("ground truth: snapped to node {} at distance {snap:.4} mm", node.0);
    }
    let (hf, lf) = forward_models(cfg, &prepared)?;
    let map = hf.activation(node).map_err(|e| e.context("ground-truth activation"))?;
    let grid = TimeGrid::covering(cfg.ecg.duration_factor * map.max_time(), cfg.ecg.dt)?;
    let reference = hf.ecg(node, grid)?;
    let problem = LossProblem::new(hf, Some(lf), reference.clone())?;
    let hf_self_loss = problem.hf_loss(node)?;
    let lf_ecg = problem.lf_ecg(node)?;
    let lf_correlations = lead_correlations(&lf_ecg, &reference)?;
    let lf_loss = ecg_loss(&lf_ecg, &reference)?;

    let hash = cfg.hash();
    let head = header(&hash, cfg.bo.seed);
    write_ecg_csv(&reference, &dir.join(REFERENCE), Some(&head))?;
    write_ecg_csv(&lf_ecg, &dir.join(LF_AT_TRUTH), Some(&head))?;
    let record = TruthRecord {
        config_hash: hash,
        reference_hash: cfg.reference_hash(),
        seed: cfg.bo.seed,
        node: node.0,
        position: prepared.hf_mesh.vertex(node).into(),
        requested,
        snap_distance: snap,
        lf_node: problem.lf_node(node).map_or(0, |n| n.0),
        max_activation_time: map.max_time(),
        dt: grid.dt,
        steps: grid.steps,
        lead_names: problem.hf.lead_fields().names().to_vec(),
        lf_correlations,
        lf_loss,
        hf_self_loss,
    };
    write_json(&dir.join(TRUTH), &record)?;
    Ok(record)
}

/// Everything a BO run needs, loaded once and shared across seeds.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub config_hash: String,
    pub layout: Layout,
    pub prepared: Prepared,
    pub kernel: MaternKernel,
    pub problem: LossProblem,
    pub truth: Truth,
    pub truth_record: TruthRecord,
}

impl Session {
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let layout = Layout::new(&cfg.output.dir);
        let prepared = Prepared::load(cfg, &layout)?;
        let gt = layout.ground_truth_dir();
        if !gt.join(TRUTH).is_file() || !gt.join(REFERENCE).is_file() {
            return Err(Error::Artifact(format!("no reference in {}; run `ground-truth` first", gt.display())));
        }
        let truth_record: TruthRecord = read_json(&gt.join(TRUTH))?;
        if truth_record.reference_hash != cfg.reference_hash() {
            return Err(Error::Artifact(format!(
                "reference in {} was built from another configuration; rerun `ground-truth`",
                gt.display()
            )));
        }
        let reference = read_ecg_csv(&gt.join(REFERENCE))?;
        let (hf, lf) = forward_models(cfg, &prepared)?;
        let problem = LossProblem::new(hf, Some(lf), reference)?;
        let mesh = &prepared.hf_mesh;
        let kernel = MaternKernel::new(prepared.hf_basis.clone(), cfg.kernel.nu, mesh.dim(), mesh.diameter())?;
        let truth = Truth::new(mesh, mesh.node(truth_record.node)?, cfg.bo.convergence)?;
        Ok(Session {
            cfg: cfg.clone(),
            config_hash: cfg.hash(),
            layout,
            prepared,
            kernel,
            problem,
            truth,
            truth_record,
        })
    }

    pub fn bo_config(&self, seed: u64) -> BoConfig {
        BoConfig { seed, ..self.cfg.bo.clone() }
    }

    /// One BO run; the trail survives failures.
    pub fn execute(&self, mode: Mode, seed: u64) -> BoResult {
        let bo = self.bo_config(seed);
        let mesh = &self.prepared.hf_mesh;
        let hf = |n: NodeId| self.problem.hf_loss(n);
        match mode {
            Mode::Sf => run_sf_bo(mesh, &self.kernel, hf, Some(&self.truth), &bo),
            Mode::Mf => run_mf_bo(mesh, &self.kernel, hf, |n| self.problem.lf_loss(n), Some(&self.truth), &bo),
        }
    }

    pub fn header(&self, seed: u64) -> String {
        header(&self.config_hash, seed)
    }

    pub fn initial_cost(&self, mode: Mode) -> f64 {
        let b = &self.cfg.bo;
        match mode {
            Mode::Sf => b.initial_size as f64,
            Mode::Mf => b.initial_hf as f64 + b.initial_lf as f64 * b.lf_cost_ratio,
        }
    }

    pub fn summarize(&self, mode: Mode, seed: u64, state: &BoState, error: Option<&Error>) -> RunSummary {
        let mesh = &self.prepared.hf_mesh;
        let has_hf = state.hf_evaluations() > 0;
        RunSummary {
            config_hash: self.config_hash.clone(),
            seed,
            mode,
            converged: state.converged,
            stop_reason: state.stop_reason,
            iterations: state.acquisitions,
            hf_evaluations: state.hf_evaluations(),
            lf_evaluations: state.lf_evaluations(),
            initial_cost: self.initial_cost(mode),
            total_cost: state.cost,
            best_node: has_hf.then_some(state.best_node.0),
            best_loss: has_hf.then_some(state.best_loss),
            best_position: has_hf.then(|| mesh.vertex(state.best_node).into()),
            truth_node: self.truth.node.0,
            final_geodesic_error: has_hf.then(|| self.truth.distance(state.best_node)),
            tolerance: self.truth.tolerance(),
            error: error.map(|e| e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Acquisitions after the initial design.
    pub iterations: usize,
    pub hf_evaluations: usize,
    pub lf_evaluations: usize,
    pub initial_cost: f64,
    pub total_cost: f64,
    pub best_node: Option<usize>,
    pub best_loss: Option<f64>,
    pub best_position: Option<[f64; 3]>,
    pub truth_node: usize,
    /// Geodesic distance from the best node to the truth (mm).
    pub final_geodesic_error: Option<f64>,
    pub tolerance: f64,
    pub error: Option<String>,
}

fn loss_scatter(state: &BoState, title: &str, comment: &str) -> String {
    let points: Vec<Point2> = state
        .records
        .iter()
        .map(|r| Point2 {
            x: r.iteration as f64,
            y: r.loss,
            color: if r.fidelity == Fidelity::High { "#1f77b4" } else { "#ff7f0e" },
        })
        .collect();
    svg::scatter(title, comment, "iteration (0 = initial design)", "loss", &points, &[("HF", "#1f77b4"), ("LF", "#ff7f0e")])
}

const AUDIT: &str = "audit.csv";
const SUMMARY: &str = "summary.json";

fn audit_comment(head: &str, mode: Mode) -> String {
    format!("{head}\nmode={}", mode.as_str())
}

/// Runs one BO loop and writes the audit CSV, the summary and the plots.
/// On failure the partial trail is still written before the error returns.
pub fn run(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<RunSummary> {
    let layout = Layout::new(&cfg.output.dir);
    let dir = layout.run_dir(mode.as_str(), seed);
    ensure_writable(&dir)?;
    let session = Session::open(cfg)?;
    let head = session.header(seed);
    let started = Instant::now();
    let (state, error) = match session.execute(mode, seed) {
        Ok(s) => (s, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    log::info!("{} run, seed {seed}: {:.2} s", mode.as_str(), started.elapsed().as_secs_f64());
    let summary = session.summarize(mode, seed, &state, error.as_ref());
    write_file(&dir.join(AUDIT), audit_csv(&state, Some(&audit_comment(&head, mode))))?;
    write_json(&dir.join(SUMMARY), &summary)?;
    let title = format!("{} BO, seed {seed}: loss per iteration", mode.as_str().to_uppercase());
    write_file(&dir.join("loss_vs_iteration.svg"), loss_scatter(&state, &title, &head))?;
    if let Some(post) = &state.last_posterior {
        let mut markers: Vec<Marker> = state
            .records
            .iter()
            .filter(|r| r.fidelity == Fidelity::High)
            .map(|r| Marker { node: r.node.0, color: "white", label: "evaluated" })
            .collect();
        markers.push(Marker { node: session.truth.node.0, color: "red", label: "truth" });
        let title = format!("{} surrogate mean of the loss, seed {seed}", mode.as_str().to_uppercase());
        let map = svg::mesh_map(&title, &head, &session.prepared.hf_mesh, &post.mean, &markers);
        write_file(&dir.join("surrogate_map.svg"), map)?;
    }
    match error {
        Some(e) => Err(e.context(format!("{} run with seed {seed}", mode.as_str()))),
        None => Ok(summary),
    }
}

/// Per-mode benchmark aggregate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub runs: usize,
    pub failed: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub cost: Option<Spread>,
    pub iterations: Option<Spread>,
}

impl ModeAggregate {
    /// Aggregates completed runs; failed runs only count toward `failed`.
    pub fn from_runs(mode: Mode, rows: &[BenchmarkRow]) -> Self {
        let mine: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let ok: Vec<&&BenchmarkRow> = mine.iter().filter(|r| r.error.is_none()).collect();
        let converged = ok.iter().filter(|r| r.converged).count();
        let cost: Vec<f64> = ok.iter().map(|r| r.total_cost).collect();
        let iterations: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
        ModeAggregate {
            mode,
            runs: mine.len(),
            failed: mine.len() - ok.len(),
            converged,
            convergence_rate: if mine.is_empty() { 0.0 } else { converged as f64 / mine.len() as f64 },
            cost: Spread::of(&cost),
            iterations: Spread::of(&iterations),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub seed: u64,
    pub mode: Mode,
    pub converged: bool,
    pub iterations: usize,
    pub hf_evaluations: usize,
    pub lf_evaluations: usize,
    pub total_cost: f64,
    pub final_geodesic_error: Option<f64>,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<BenchmarkRow>,
    pub sf: ModeAggregate,
    pub mf: ModeAggregate,
    pub wall_seconds: f64,
}

impl BenchmarkReport {
    pub fn failures(&self) -> usize {
        self.sf.failed + self.mf.failed
    }
}

pub const RUNS_HEADER: &str =
    "seed,mode,status,converged,iterations,hf_evaluations,lf_evaluations,total_cost,final_geodesic_error,wall_seconds";
pub const COMPARISON_HEADER: &str = "mode,runs,failed,converged,convergence_rate,cost_min,cost_q1,cost_median,cost_q3,cost_max,cost_iqr,iter_min,iter_q1,iter_median,iter_q3,iter_max,iter_iqr";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn comment_lines(out: &mut String, comment: &str) {
    for line in comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
}

pub fn runs_csv(rows: &[BenchmarkRow], comment: &str) -> String {
    let mut s = String::new();
    comment_lines(&mut s, comment);
    s.push_str(RUNS_HEADER);
    s.push('\n');
    for r in rows {
        let status = if r.error.is_some() { "failed" } else { "ok" };
        let _ = writeln!(
            s,
            "{},{},{status},{},{},{},{},{},{},{:.3}",
            r.seed,
            r.mode.as_str(),
            r.converged,
            r.iterations,
            r.hf_evaluations,
            r.lf_evaluations,
            r.total_cost,
            opt(r.final_geodesic_error),
            r.wall_seconds
        );
    }
    s
}

pub fn comparison_csv(aggs: &[&ModeAggregate], comment: &str) -> String {
    let mut s = String::new();
    comment_lines(&mut s, comment);
    s.push_str(COMPARISON_HEADER);
    s.push('\n');
    let spread = |sp: &Option<Spread>| match sp {
        Some(p) => format!("{},{},{},{},{},{}", p.min, p.q1, p.median, p.q3, p.max, p.iqr()),
        None => ",,,,,".to_string(),
    };
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            a.mode.as_str(),
            a.runs,
            a.failed,
            a.converged,
            a.convergence_rate,
            spread(&a.cost),
            spread(&a.iterations)
        );
    }
    s
}

/// Reads a benchmark `runs.csv` back into rows (errors become a marker).
pub fn read_runs_csv(path: &Path) -> Result<Vec<BenchmarkRow>> {
    let (header, rows) = csv_rows(path)?;
    if header.join(",") != RUNS_HEADER {
        return Err(Error::parse(path, 0, format!("expected header `{RUNS_HEADER}`")));
    }
    rows.into_iter()
        .map(|(ln, r)| {
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, ln, format!("invalid integer `{s}`")));
            let bool_ = |s: &str| s.parse::<bool>().map_err(|_| Error::parse(path, ln, format!("invalid flag `{s}`")));
            Ok(BenchmarkRow {
                seed: r[0].parse().map_err(|_| Error::parse(path, ln, "invalid seed"))?,
                mode: r[1].parse()?,
                converged: bool_(&r[3])?,
                iterations: int(&r[4])?,
                hf_evaluations: int(&r[5])?,
                lf_evaluations: int(&r[6])?,
                total_cost: parse_f64(path, ln, &r[7])?,
                final_geodesic_error: if r[8].is_empty() { None } else { Some(parse_f64(path, ln, &r[8])?) },
                wall_seconds: parse_f64(path, ln, &r[9])?,
                error: (r[2] == "failed").then(|| "failed".to_string()),
            })
        })
        .collect()
}

/// Matched-seed SF and MF runs over the configured seed list. Individual
/// failures are recorded and the sweep continues.
pub fn benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    let seeds = cfg.benchmark_seeds()?.to_vec();
    let layout = Layout::new(&cfg.output.dir);
    let dir = layout.benchmark_dir();
    let audit_dir = dir.join("audit");
    ensure_writable(&audit_dir)?;
    let session = Session::open(cfg)?;
    let started = Instant::now();
    let mut rows = Vec::new();
    for &seed in &seeds {
        for mode in [Mode::Sf, Mode::Mf] {
            let t = Instant::now();
            let (state, error) = match session.execute(mode, seed) {
                Ok(s) => (s, None),
                Err(f) => {
                    log::error!("{} seed {seed} failed: {}", mode.as_str(), f.error);
                    (f.partial, Some(f.error))
                }
            };
            let wall = t.elapsed().as_secs_f64();
            let path = audit_dir.join(format!("{}_seed{seed}.csv", mode.as_str()));
            write_file(&path, audit_csv(&state, Some(&audit_comment(&session.header(seed), mode))))?;
            let s = session.summarize(mode, seed, &state, error.as_ref());
            log::info!(
                "{} seed {seed}: converged={} iterations={} cost={:.3} ({wall:.2} s)",
                mode.as_str(),
                s.converged,
                s.iterations,
                s.total_cost
            );
            rows.push(BenchmarkRow {
                seed,
                mode,
                converged: s.converged,
                iterations: s.iterations,
                hf_evaluations: s.hf_evaluations,
                lf_evaluations: s.lf_evaluations,
                total_cost: s.total_cost,
                final_geodesic_error: s.final_geodesic_error,
                wall_seconds: wall,
                error: s.error,
            });
        }
    }
    let sf = ModeAggregate::from_runs(Mode::Sf, &rows);
    let mf = ModeAggregate::from_runs(Mode::Mf, &rows);
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let head = format!("config_hash={}, seed={}", session.config_hash, seed_list.join(" "));
    write_file(&dir.join("runs.csv"), runs_csv(&rows, &head))?;
    write_file(&dir.join("comparison.csv"), comparison_csv(&[&sf, &mf], &head))?;
    for (name, pick, label) in [
        ("cost_boxplot.svg", 0, "total cost (HF units)"),
        ("iterations_boxplot.svg", 1, "acquisitions"),
    ] {
        let groups: Vec<(&str, Spread)> = [("SF", &sf), ("MF", &mf)]
            .into_iter()
            .filter_map(|(n, a)| if pick == 0 { a.cost } else { a.iterations }.map(|s| (n, s)))
            .collect();
        let title = format!("{label} over {} matched seeds", seeds.len());
        write_file(&dir.join(name), svg::box_plot(&title, &head, label, &groups))?;
    }
    Ok(BenchmarkReport { seeds, rows, sf, mf, wall_seconds: started.elapsed().as_secs_f64() })
}

/// Exhaustive LF loss over every LF node.
#[derive(Clone, Debug)]
pub struct LossMap {
    pub losses: Vec<f64>,
    pub argmin: NodeId,
}

impl LossMap {
    pub fn compute(session: &Session) -> Result<Self> {
        let lf = session.problem.lf.as_ref().ok_or_else(|| Error::Config("no LF model".into()))?;
        let grid = session.problem.grid();
        let losses = (0..lf.mesh().num_vertices())
            .map(|i| {
                let ecg: EcgTrace = lf.ecg(NodeId(i), grid).map_err(|e| Error::Forward { node: i, source: Box::new(e) })?;
                ecg_loss(&ecg, &session.problem.reference)
            })
            .collect::<Result<Vec<f64>>>()?;
        let argmin = losses
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &l)| if l < b.1 { (i, l) } else { b })
            .0;
        Ok(LossMap { losses, argmin: NodeId(argmin) })
    }

    pub fn min_loss(&self) -> f64 {
        self.losses[self.argmin.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certification {
    pub best_node: usize,
    /// LF node nearest to the BO result.
    pub lf_node: usize,
    pub lf_loss_at_best: f64,
    pub lf_argmin: usize,
    pub lf_min_loss: f64,
    /// HF geodesic distance from the BO result to the LF argmin (mm).
    pub distance: f64,
    pub tolerance: f64,
    pub certified: bool,
}

/// Whether a BO result sits at, or within tolerance of, the LF global minimum.
pub fn certify(session: &Session, map: &LossMap, best_node: NodeId) -> Result<Certification> {
    let hf = &session.prepared.hf_mesh;
    let lf_node = session.problem.lf_node(best_node).ok_or_else(|| Error::Config("no LF model".into()))?;
    let target = hf.nearest_node(&session.prepared.lf_mesh.vertex(map.argmin));
    let distance = geodesic_distances(hf, best_node)?[target.0];
    let tolerance = session.truth.tolerance();
    Ok(Certification {
        best_node: best_node.0,
        lf_node: lf_node.0,
        lf_loss_at_best: map.losses[lf_node.0],
        lf_argmin: map.argmin.0,
        lf_min_loss: map.min_loss(),
        distance,
        tolerance,
        certified: lf_node == map.argmin || distance <= tolerance,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LossMapReport {
    pub lf_argmin: usize,
    pub lf_min_loss: f64,
    pub argmin_geodesic_error: f64,
    /// `(mode, seed, certification)` for every run summary found.
    pub certifications: Vec<(Mode, u64, Certification)>,
}

/// Writes the LF loss landscape and certifies every run found under
/// `runs/` against its global minimum.
pub fn loss_map(cfg: &ExperimentConfig) -> Result<LossMapReport> {
    let layout = Layout::new(&cfg.output.dir);
    let dir = layout.loss_map_dir();
    ensure_writable(&dir)?;
    let session = Session::open(cfg)?;
    let map = LossMap::compute(&session)?;
    let lf_mesh = &session.prepared.lf_mesh;
    let head = session.header(cfg.bo.seed);

    let mut csv = String::new();
    comment_lines(&mut csv, &head);
    csv.push_str("node,x,y,z,loss\n");
    for (i, l) in map.losses.iter().enumerate() {
        let p = lf_mesh.vertex(NodeId(i));
        let _ = writeln!(csv, "{i},{},{},{},{l}", p.x, p.y, p.z);
    }
    write_file(&dir.join("lf_loss.csv"), csv)?;
    let truth_lf = session.truth_record.lf_node;
    let markers = [
        Marker { node: map.argmin.0, color: "white", label: "global minimum" },
        Marker { node: truth_lf, color: "red", label: "truth" },
    ];
    let svg = svg::mesh_map("LF loss over all nodes", &head, lf_mesh, &map.losses, &markers);
    write_file(&dir.join("lf_loss_map.svg"), svg)?;

    let mut summaries: Vec<RunSummary> = Vec::new();
    if let Ok(entries) = fs::read_dir(layout.runs_dir()) {
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path().join(SUMMARY)).filter(|p| p.is_file()).collect();
        paths.sort();
        for p in paths {
            let s: RunSummary = read_json(&p)?;
            if s.config_hash == session.config_hash {
                summaries.push(s);
            } else {
                log::warn!("skipping {}: produced by another configuration", p.display());
            }
        }
    }
    let mut certifications = Vec::new();
    let mut cert_csv = String::new();
    comment_lines(&mut cert_csv, &head);
    cert_csv.push_str("mode,seed,best_node,lf_node,lf_loss_at_best,lf_argmin,lf_min_loss,distance,tolerance,certified\n");
    for s in summaries {
        let Some(best) = s.best_node else { continue };
        let c = certify(&session, &map, NodeId(best))?;
        let _ = writeln!(
            cert_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            s.mode.as_str(),
            s.seed,
            c.best_node,
            c.lf_node,
            c.lf_loss_at_best,
            c.lf_argmin,
            c.lf_min_loss,
            c.distance,
            c.tolerance,
            c.certified
        );
        certifications.push((s.mode, s.seed, c));
    }
    write_file(&dir.join("certification.csv"), cert_csv)?;
    let argmin_hf = session.prepared.hf_mesh.nearest_node(&lf_mesh.vertex(map.argmin));
    Ok(LossMapReport {
        lf_argmin: map.argmin.0,
        lf_min_loss: map.min_loss(),
        argmin_geodesic_error: session.truth.distance(argmin_hf),
        certifications,
    })
}
