//! On-disk layout, preprocessing artifacts and their freshness stamp.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{file_hash, ExperimentConfig};
use crate::ecg::{standard_electrodes, standard_leads, synthetic_lead_fields, Electrode, LeadFieldSet};
use crate::fem::{
    assemble_mass, assemble_stiffness, compute_eigenbasis, default_eigen_count, load_eigenbasis, save_eigenbasis,
    EigenBasis, EigenOptions, MassLumping,
};
use crate::mesh::{
    coarsen_mesh, generate_synthetic_geometry, load_mesh, save_mesh_titled, MeshFormat,
};
use crate::{Error, Result, SimplicialMesh};

/// Output directory layout.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn mesh_dir(&self) -> PathBuf {
        self.root.join("mesh")
    }

    pub fn preprocess_dir(&self) -> PathBuf {
        self.root.join("preprocess")
    }

    pub fn ground_truth_dir(&self) -> PathBuf {
        self.root.join("ground_truth")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, mode: &str, seed: u64) -> PathBuf {
        self.runs_dir().join(format!("{mode}_seed{seed}"))
    }

    pub fn benchmark_dir(&self) -> PathBuf {
        self.root.join("benchmark")
    }

    pub fn loss_map_dir(&self) -> PathBuf {
        self.root.join("loss_map")
    }
}

/// Metadata line carried by every output file.
pub fn header(config_hash: &str, seed: u64) -> String {
    format!("config_hash={config_hash}, seed={seed}")
}

/// Creates `dir` and proves it writable, so I/O problems surface before
/// any compute.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

/// HF and LF meshes as configured.
pub fn build_meshes(cfg: &ExperimentConfig) -> Result<(SimplicialMesh, SimplicialMesh)> {
    let g = &cfg.geometry;
    let from_file = |mesh: &Path, fibers: Option<&PathBuf>| -> Result<SimplicialMesh> {
        let format = MeshFormat::from_path(mesh)
            .ok_or_else(|| Error::Config(format!("{}: unknown mesh extension (use .off or .vtk)", mesh.display())))?;
        let m = load_mesh(mesh, format, fibers.map(PathBuf::as_path))?;
        match (fibers, g.fiber_rule) {
            (None, Some(rule)) => m.with_fiber_rule(rule),
            _ => Ok(m),
        }
    };
    let hf = match (&g.synthetic, &g.hf_mesh) {
        (Some(p), _) => generate_synthetic_geometry(p),
        (None, Some(path)) => from_file(path, g.hf_fibers.as_ref()),
        (None, None) => Err(Error::Config("no HF geometry configured".into())),
    }
    .map_err(|e| e.context("building HF mesh"))?;
    let lf = match &g.lf_mesh {
        Some(path) => from_file(path, g.lf_fibers.as_ref()),
        None => coarsen_mesh(&hf, g.lf_coarsen_factor),
    }
    .map_err(|e| e.context("building LF mesh"))?;
    Ok((hf, lf))
}

pub fn electrodes(cfg: &ExperimentConfig, hf: &SimplicialMesh) -> Vec<Electrode> {
    cfg.ecg.electrodes.clone().unwrap_or_else(|| standard_electrodes(hf))
}

/// Requested eigenpair count for an `n`-node mesh, clamped to `n`.
/// Returns the count and a warning when clamping happened.
pub fn eigen_count(cfg: &ExperimentConfig, n: usize, label: &str) -> (usize, Option<String>) {
    match cfg.kernel.n_eig {
        Some(k) if k > n => (
            n,
            Some(format!("warning: n_eig = {k} exceeds the {n} nodes of the {label} mesh; clamped to {n}")),
        ),
        Some(k) => (k, None),
        None => (default_eigen_count(n), None),
    }
}

const STAMP: &str = "stamp.json";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Stamp {
    config_hash: String,
    preprocess_hash: String,
    /// Artifact file name to content hash.
    files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PreprocessReport {
    pub up_to_date: bool,
    pub hf_nodes: usize,
    pub lf_nodes: usize,
    pub n_eig_hf: usize,
    pub n_eig_lf: usize,
    pub warnings: Vec<String>,
}

/// Fresh when the stamp matches the config and every artifact is intact.
fn stamp_is_fresh(dir: &Path, cfg: &ExperimentConfig) -> Option<Stamp> {
    let stamp: Stamp = read_json(&dir.join(STAMP)).ok()?;
    if stamp.preprocess_hash != cfg.preprocess_hash() {
        return None;
    }
    for (name, hash) in &stamp.files {
        if file_hash(&dir.join(name)).ok().as_ref() != Some(hash) {
            return None;
        }
    }
    Some(stamp)
}

fn lead_field_csv(leads: &LeadFieldSet, comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("node");
    for n in leads.names() {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    let f = leads.fields();
    for i in 0..f.nrows() {
        let _ = write!(s, "{i}");
        for k in 0..f.ncols() {
            let _ = write!(s, ",{}", f[(i, k)]);
        }
        s.push('\n');
    }
    s
}

fn electrodes_csv(el: &[Electrode], comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("name,x,y,z\n");
    for e in el {
        let p = e.position;
        let _ = writeln!(s, "{},{},{},{}", e.name, p[0], p[1], p[2]);
    }
    s
}

/// Data rows of a simple CSV (comments and the header removed).
pub(crate) fn csv_rows(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if header.is_none() {
            header = Some(cols);
        } else {
            rows.push((i + 1, cols));
        }
    }
    let header = header.ok_or_else(|| Error::parse(path, 0, "missing header row"))?;
    Ok((header, rows))
}

pub(crate) fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::parse(path, line, format!("invalid number `{s}`")))
}

fn read_electrodes(path: &Path) -> Result<Vec<Electrode>> {
    let (_, rows) = csv_rows(path)?;
    rows.into_iter()
        .map(|(ln, r)| {
            if r.len() != 4 {
                return Err(Error::parse(path, ln, "expected name,x,y,z"));
            }
            Ok(Electrode {
                name: r[0].clone(),
                position: [parse_f64(path, ln, &r[1])?, parse_f64(path, ln, &r[2])?, parse_f64(path, ln, &r[3])?],
            })
        })
        .collect()
}

fn read_lead_fields(path: &Path, electrodes: Vec<Electrode>) -> Result<LeadFieldSet> {
    let (header, rows) = csv_rows(path)?;
    if header.first().map(String::as_str) != Some("node") || header.len() < 2 {
        return Err(Error::parse(path, 0, "expected header `node,<lead names>`"));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut data = Vec::with_capacity(rows.len() * names.len());
    for (i, (ln, r)) in rows.iter().enumerate() {
        if r.len() != header.len() || r[0] != i.to_string() {
            return Err(Error::parse(path, *ln, "malformed lead-field row"));
        }
        for v in &r[1..] {
            data.push(parse_f64(path, *ln, v)?);
        }
    }
    let fields = DMatrix::from_row_slice(rows.len(), names.len(), &data);
    LeadFieldSet::new(names, electrodes, fields)
}

/// Loaded preprocessing artifacts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub hf_mesh: SimplicialMesh,
    pub lf_mesh: SimplicialMesh,
    pub hf_basis: Arc<EigenBasis>,
    pub lf_basis: Arc<EigenBasis>,
    pub hf_leads: LeadFieldSet,
    pub lf_leads: LeadFieldSet,
}

const HF_MESH: &str = "mesh_hf.vtk";
const LF_MESH: &str = "mesh_lf.vtk";
const HF_EIG: &str = "eigen_hf.bin";
const LF_EIG: &str = "eigen_lf.bin";
const HF_LEADS: &str = "leadfield_hf.csv";
const LF_LEADS: &str = "leadfield_lf.csv";
const ELECTRODES: &str = "electrodes.csv";
const LOG: &str = "preprocess.log";

/// Meshes (with fibers, from which the conduction tensors are rebuilt),
/// eigenbases and lead fields for both fidelities. A no-op when the stamp
/// is fresh, unless `force`.
pub fn preprocess(cfg: &ExperimentConfig, layout: &Layout, force: bool) -> Result<PreprocessReport> {
    let dir = layout.preprocess_dir();
    ensure_writable(&dir)?;
    if !force {
        if let Some(_stamp) = stamp_is_fresh(&dir, cfg) {
            let p = Prepared::load(cfg, layout)?;
            log::info!("preprocess: artifacts in {} are up-to-date", dir.display());
            return Ok(PreprocessReport {
                up_to_date: true,
                hf_nodes: p.hf_mesh.num_vertices(),
                lf_nodes: p.lf_mesh.num_vertices(),
                n_eig_hf: p.hf_basis.len(),
                n_eig_lf: p.lf_basis.len(),
                warnings: Vec::new(),
            });
        }
    }
    // an interrupted run must not leave a stale stamp behind
    let _ = fs::remove_file(dir.join(STAMP));
    let hash = cfg.hash();
    let head = header(&hash, cfg.bo.seed);
    let mut warnings = Vec::new();
    let mut log_lines = vec![head.clone()];

    let (hf, lf) = build_meshes(cfg)?;
    log_lines.push(format!("HF mesh: {} nodes, {} elements", hf.num_vertices(), hf.num_elements()));
    log_lines.push(format!("LF mesh: {} nodes, {} elements", lf.num_vertices(), lf.num_elements()));

    let mut bases = Vec::new();
    for (mesh, label) in [(&hf, "HF"), (&lf, "LF")] {
        let (k, warn) = eigen_count(cfg, mesh.num_vertices(), label);
        if let Some(w) = warn {
            log::warn!("{w}");
            log_lines.push(w.clone());
            warnings.push(w);
        }
        let a = assemble_stiffness(mesh)?;
        let m = assemble_mass(mesh, MassLumping::Consistent)?;
        let basis = compute_eigenbasis(&a, &m, k, &EigenOptions::default())
            .map_err(|e| e.context(format!("{label} eigenbasis")))?;
        log_lines.push(format!("{label} eigenbasis: {k} pairs, lambda_max = {}", basis.eigenvalues()[k - 1]));
        bases.push(basis);
    }

    let el = electrodes(cfg, &hf);
    let leads = standard_leads();
    let hf_leads = synthetic_lead_fields(&hf, &el, &leads).map_err(|e| e.context("HF lead fields"))?;
    let lf_leads = synthetic_lead_fields(&lf, &el, &leads).map_err(|e| e.context("LF lead fields"))?;

    let title = format!("easloc mesh {head}");
    save_mesh_titled(&hf, &dir.join(HF_MESH), MeshFormat::VtkLegacyAscii, &title)?;
    save_mesh_titled(&lf, &dir.join(LF_MESH), MeshFormat::VtkLegacyAscii, &title)?;
    save_eigenbasis(&bases[0], &dir.join(HF_EIG))?;
    save_eigenbasis(&bases[1], &dir.join(LF_EIG))?;
    write_file(&dir.join(HF_LEADS), lead_field_csv(&hf_leads, &head))?;
    write_file(&dir.join(LF_LEADS), lead_field_csv(&lf_leads, &head))?;
    write_file(&dir.join(ELECTRODES), electrodes_csv(&el, &head))?;
    log_lines.push(String::new());
    write_file(&dir.join(LOG), log_lines.join("\n"))?;

    let mut files = BTreeMap::new();
    for name in [HF_MESH, LF_MESH, HF_EIG, LF_EIG, HF_LEADS, LF_LEADS, ELECTRODES] {
        files.insert(name.to_string(), file_hash(&dir.join(name))?);
    }
    write_json(&dir.join(STAMP), &Stamp { config_hash: hash, preprocess_hash: cfg.preprocess_hash(), files })?;
    Ok(PreprocessReport {
        up_to_date: false,
        hf_nodes: hf.num_vertices(),
        lf_nodes: lf.num_vertices(),
        n_eig_hf: bases[0].len(),
        n_eig_lf: bases[1].len(),
        warnings,
    })
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig, layout: &Layout) -> Result<Self> {
        let dir = layout.preprocess_dir();
        if !dir.join(STAMP).is_file() {
            return Err(Error::Artifact(format!(
                "no preprocessed artifacts in {}; run `preprocess` first",
                dir.display()
            )));
        }
        if stamp_is_fresh(&dir, cfg).is_none() {
            return Err(Error::Artifact(format!(
                "artifacts in {} are stale or were built from another configuration; rerun `preprocess`",
                dir.display()
            )));
        }
        let hf_mesh = load_mesh(&dir.join(HF_MESH), MeshFormat::VtkLegacyAscii, None)?;
        let lf_mesh = load_mesh(&dir.join(LF_MESH), MeshFormat::VtkLegacyAscii, None)?;
        let hf_basis = Arc::new(load_eigenbasis(&dir.join(HF_EIG))?);
        let lf_basis = Arc::new(load_eigenbasis(&dir.join(LF_EIG))?);
        let el = read_electrodes(&dir.join(ELECTRODES))?;
        let hf_leads = read_lead_fields(&dir.join(HF_LEADS), el.clone())?;
        let lf_leads = read_lead_fields(&dir.join(LF_LEADS), el)?;
        for (mesh, basis, leads, label) in
            [(&hf_mesh, &hf_basis, &hf_leads, "HF"), (&lf_mesh, &lf_basis, &lf_leads, "LF")]
        {
            if basis.num_nodes() != mesh.num_vertices() || leads.num_nodes() != mesh.num_vertices() {
                return Err(Error::Artifact(format!("{label} artifacts disagree on the node count")));
            }
        }
        Ok(Prepared { hf_mesh, lf_mesh, hf_basis, lf_basis, hf_leads, lf_leads })
    }
}
