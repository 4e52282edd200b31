//! Forward ECG: traveling-wave transmembrane potential, synthetic lead fields
//! and the lead-field integral, plus the least-squares ECG mismatch.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::eikonal::ActivationMap;
use crate::fem::assemble_weighted_stiffness;
use crate::mesh::{NodeLocator, Point, SimplicialMesh};
use crate::{Error, Result};

/// Smooth upstroke `U(xi) = V0 + (V1 - V0)/2 (tanh(xi / w) + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPotentialParams {
    /// Resting potential (mV).
    pub v0: f64,
    /// Plateau potential (mV).
    pub v1: f64,
    /// Upstroke width (ms).
    pub width: f64,
}

impl Default for ActionPotentialParams {
    fn default() -> Self {
        ActionPotentialParams { v0: -80.0, v1: 20.0, width: 1.0 }
    }
}

impl ActionPotentialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v1 > self.v0) || !(self.width > 0.0) || !self.v0.is_finite() || !self.v1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "action potential needs v1 > v0 and width > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn action_potential(xi: f64, p: &ActionPotentialParams) -> f64 {
    p.v0 + 0.5 * (p.v1 - p.v0) * ((xi / p.width).tanh() + 1.0)
}

/// `V_m(x, t) = U(t - tau(x))` at every node.
pub fn transmembrane_field(map: &ActivationMap, t: f64, p: &ActionPotentialParams) -> Vec<f64> {
    map.times().iter().map(|tau| action_potential(t - tau, p)).collect()
}

/// `G_i = sigma_t I + (sigma_l - sigma_t) l l^T` (mS/mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntracellularConductivity {
    pub sigma_l: f64,
    pub sigma_t: f64,
}

impl Default for IntracellularConductivity {
    fn default() -> Self {
        IntracellularConductivity { sigma_l: 0.17, sigma_t: 0.019 }
    }
}

impl IntracellularConductivity {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0) || !(self.sigma_l >= self.sigma_t) {
            return Err(Error::InvalidParameter(format!(
                "conductivities need sigma_l >= sigma_t > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, fiber: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::identity() * self.sigma_t + fiber * fiber.transpose() * (self.sigma_l - self.sigma_t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub position: [f64; 3],
}

/// A lead is a weighted combination of electrode potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadDefinition {
    pub name: String,
    /// `(electrode index, weight)` pairs.
    pub weights: Vec<(usize, f64)>,
}

/// Limb electrodes RA, LA, LL and precordial V1..V6, in units of the mesh's
/// largest bounding-box half-extent relative to the box centre.
const STANDARD_ELECTRODES: [(&str, [f64; 3]); 9] = [
    ("RA", [-2.5, 0.0, 2.0]),
    ("LA", [2.5, 0.0, 2.0]),
    ("LL", [0.8, 0.0, -3.0]),
    ("V1", [-0.4, 1.6, 0.3]),
    ("V2", [0.3, 1.7, 0.3]),
    ("V3", [0.9, 1.6, 0.0]),
    ("V4", [1.4, 1.3, -0.3]),
    ("V5", [1.8, 0.7, -0.3]),
    ("V6", [2.0, 0.0, -0.3]),
];

/// Nine standard electrode sites placed around `mesh`.
pub fn standard_electrodes(mesh: &SimplicialMesh) -> Vec<Electrode> {
    let (lo, hi) = mesh.bounding_box();
    let centre = (lo + hi) * 0.5;
    let scale = ((hi - lo) * 0.5).max();
    STANDARD_ELECTRODES
        .iter()
        .map(|(name, p)| Electrode {
            name: name.to_string(),
            position: (centre + Vector3::from(*p) * scale).into(),
        })
        .collect()
}

/// The 12 clinical leads over [`standard_electrodes`]: Einthoven I-III,
/// augmented aVR/aVL/aVF and V1-V6 against the Wilson central terminal.
pub fn standard_leads() -> Vec<LeadDefinition> {
    let (ra, la, ll) = (0, 1, 2);
    let lead = |name: &str, w: Vec<(usize, f64)>| LeadDefinition { name: name.into(), weights: w };
    let third = 1.0 / 3.0;
    let mut leads = vec![
        lead("I", vec![(la, 1.0), (ra, -1.0)]),
        lead("II", vec![(ll, 1.0), (ra, -1.0)]),
        lead("III", vec![(ll, 1.0), (la, -1.0)]),
        lead("aVR", vec![(ra, 1.0), (la, -0.5), (ll, -0.5)]),
        lead("aVL", vec![(la, 1.0), (ra, -0.5), (ll, -0.5)]),
        lead("aVF", vec![(ll, 1.0), (ra, -0.5), (la, -0.5)]),
    ];
    for k in 0..6 {
        leads.push(lead(
            &format!("V{}", k + 1),
            vec![(3 + k, 1.0), (ra, -third), (la, -third), (ll, -third)],
        ));
    }
    leads
}

/// Per-node lead fields `Z_k`, one row per lead.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadFieldSet {
    names: Vec<String>,
    electrodes: Vec<Electrode>,
    /// `n_nodes x L`.
    fields: DMatrix<f64>,
}

impl LeadFieldSet {
    pub fn new(names: Vec<String>, electrodes: Vec<Electrode>, fields: DMatrix<f64>) -> Result<Self> {
        if names.is_empty() || names.len() != fields.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} lead names for {} lead fields",
                names.len(),
                fields.ncols()
            )));
        }
        if fields.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("lead field has non-finite values".into()));
        }
        Ok(LeadFieldSet { names, electrodes, fields })
    }

    pub fn num_leads(&self) -> usize {
        self.names.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.fields.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    /// `n_nodes x L` matrix, column `k` is `Z_k`.
    pub fn fields(&self) -> &DMatrix<f64> {
        &self.fields
    }

    pub fn field(&self, k: usize) -> Vec<f64> {
        self.fields.column(k).iter().copied().collect()
    }
}

/// Minimum allowed node-electrode distance (mm).
pub const MIN_ELECTRODE_DISTANCE: f64 = 1.0;

/// Point-electrode fields `Z_e(x) = 1 / (4 pi |x - e|)` combined per lead.
pub fn synthetic_lead_fields(
    mesh: &SimplicialMesh,
    electrodes: &[Electrode],
    leads: &[LeadDefinition],
) -> Result<LeadFieldSet> {
    let locator = NodeLocator::new(mesh.vertices());
    for e in electrodes {
        let p = Point::from(e.position);
        let nearest = locator.nearest(&p);
        let d = (mesh.vertex(nearest) - p).norm();
        if !(d > MIN_ELECTRODE_DISTANCE) {
            return Err(Error::InvalidParameter(format!(
                "electrode {} is {d:.3} mm from node {nearest} (minimum {MIN_ELECTRODE_DISTANCE} mm)",
                e.name
            )));
        }
    }
    let n = mesh.num_vertices();
    let mut fields = DMatrix::zeros(n, leads.len());
    let four_pi = 4.0 * std::f64::consts::PI;
    for (k, lead) in leads.iter().enumerate() {
        for &(idx, w) in &lead.weights {
            let e = electrodes.get(idx).ok_or_else(|| {
                Error::InvalidParameter(format!("lead {} references electrode {idx}", lead.name))
            })?;
            let p = Point::from(e.position);
            for (i, x) in mesh.vertices().iter().enumerate() {
                fields[(i, k)] += w / (four_pi * (x - p).norm());
            }
        }
    }
    LeadFieldSet::new(leads.iter().map(|l| l.name.clone()).collect(), electrodes.to_vec(), fields)
}

/// Uniform grid `t_j = j dt`, `j = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Smallest grid with spacing `dt` covering `[0, t_end]`.
    pub fn covering(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!("bad time grid: T = {t_end}, dt = {dt}")));
        }
        Ok(TimeGrid { dt, steps: (t_end / dt).ceil().max(1.0) as usize })
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Lead voltages on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgTrace {
    grid: TimeGrid,
    /// `values[k][j]` = lead `k` at `t_j`.
    values: Vec<Vec<f64>>,
}

impl EcgTrace {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("ECG trace without leads".into()));
        }
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::DimensionMismatch(format!(
                "every lead needs {} samples",
                grid.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("ECG trace has non-finite values".into()));
        }
        Ok(EcgTrace { grid, values })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_leads(&self) -> usize {
        self.values.len()
    }

    pub fn lead(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn leads(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Precomputed lead-field integral for one mesh: with P1 potentials,
/// `V_k(t) = sum_e |e| (G_e grad V_m) . grad Z_k = V_m(t)^T K_G Z_k`, so the
/// `n x L` matrix `W = K_G Z` turns each time step into a dot product.
#[derive(Clone, Debug)]
pub struct EcgOperator {
    weights: DMatrix<f64>,
    names: Vec<String>,
}

impl EcgOperator {
    pub fn new(mesh: &SimplicialMesh, cond: &IntracellularConductivity, leads: &LeadFieldSet) -> Result<Self> {
        cond.validate()?;
        if leads.num_nodes() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "lead fields have {} nodes, mesh has {}",
                leads.num_nodes(),
                mesh.num_vertices()
            )));
        }
        let k = assemble_weighted_stiffness(mesh, |e| cond.tensor(&mesh.fiber(e)))?;
        let n = mesh.num_vertices();
        let mut weights = DMatrix::zeros(n, leads.num_leads());
        for l in 0..leads.num_leads() {
            let z: Vec<f64> = leads.fields().column(l).iter().copied().collect();
            let kz = k.matvec(&z);
            weights.column_mut(l).copy_from_slice(&kz);
        }
        Ok(EcgOperator { weights, names: leads.names().to_vec() })
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn lead_names(&self) -> &[String] {
        &self.names
    }

    pub fn simulate(&self, map: &ActivationMap, ap: &ActionPotentialParams, grid: TimeGrid) -> Result<EcgTrace> {
        ap.validate()?;
        if map.len() != self.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "activation map has {} nodes, operator has {}",
                map.len(),
                self.num_nodes()
            )));
        }
        let n_leads = self.weights.ncols();
        let mut values = vec![vec![0.0; grid.len()]; n_leads];
        let mut vm = vec![0.0; map.len()];
        for j in 0..grid.len() {
            let t = grid.time(j);
            for (v, tau) in vm.iter_mut().zip(map.times()) {
                *v = action_potential(t - tau, ap);
            }
            for (k, lead) in values.iter_mut().enumerate() {
                lead[j] = self.weights.column(k).iter().zip(&vm).map(|(w, v)| w * v).sum();
            }
        }
        EcgTrace::new(grid, values)
    }
}

/// One-shot ECG synthesis; prefer [`EcgOperator`] for repeated calls.
pub fn compute_ecg(
    mesh: &SimplicialMesh,
    map: &ActivationMap,
    cond: &IntracellularConductivity,
    leads: &LeadFieldSet,
    ap: &ActionPotentialParams,
    grid: TimeGrid,
) -> Result<EcgTrace> {
    EcgOperator::new(mesh, cond, leads)?.simulate(map, ap, grid)
}

fn check_compatible(a: &EcgTrace, b: &EcgTrace) -> Result<()> {
    if a.grid != b.grid || a.num_leads() != b.num_leads() {
        return Err(Error::DimensionMismatch(format!(
            "ECG traces differ in grid or leads: {:?}/{} vs {:?}/{}",
            a.grid,
            a.num_leads(),
            b.grid,
            b.num_leads()
        )));
    }
    Ok(())
}

/// `sum_k int_0^T (V_k - V_ref_k)^2 dt`, trapezoidal in time.
pub fn ecg_loss(sim: &EcgTrace, reference: &EcgTrace) -> Result<f64> {
    check_compatible(sim, reference)?;
    let dt = sim.grid.dt;
    let mut total = 0.0;
    for (a, b) in sim.values.iter().zip(&reference.values) {
        let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
        let inner: f64 = sq[1..sq.len() - 1].iter().sum();
        total += dt * (inner + 0.5 * (sq[0] + sq[sq.len() - 1]));
    }
    Ok(total)
}

/// Pearson correlation; `NaN` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Per-lead Pearson correlation between two traces on the same grid.
pub fn lead_correlations(a: &EcgTrace, b: &EcgTrace) -> Result<Vec<f64>> {
    check_compatible(a, b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| pearson(x, y)).collect())
}

/// CSV with header `t,lead_1,...,lead_L`; `comment` lines are prefixed with
/// `# `.
pub fn write_ecg_csv(trace: &EcgTrace, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push('t');
    for k in 0..trace.num_leads() {
        let _ = write!(out, ",lead_{}", k + 1);
    }
    out.push('\n');
    for j in 0..trace.grid.len() {
        let _ = write!(out, "{}", trace.grid.time(j));
        for lead in &trace.values {
            let _ = write!(out, ",{}", lead[j]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ecg_csv(path: &Path) -> Result<EcgTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut header_cols = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header_cols.is_none() {
            let cols = line.split(',').count();
            if cols < 2 || !line.starts_with('t') {
                return Err(Error::parse(path, i + 1, "expected header `t,lead_1,...`"));
            }
            header_cols = Some(cols);
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if Some(vals.len()) != header_cols {
            return Err(Error::parse(path, i + 1, "row length differs from header"));
        }
        rows.push((i + 1, vals));
    }
    let cols = header_cols.ok_or_else(|| Error::parse(path, 0, "empty ECG file"))?;
    if rows.len() < 2 {
        return Err(Error::parse(path, 0, "ECG needs at least two time samples"));
    }
    let dt = rows[1].1[0] - rows[0].1[0];
    for (j, (line, r)) in rows.iter().enumerate() {
        if (r[0] - j as f64 * dt - rows[0].1[0]).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::parse(path, *line, "time grid is not uniform"));
        }
    }
    if rows[0].1[0] != 0.0 {
        return Err(Error::parse(path, rows[0].0, "time grid must start at 0"));
    }
    let grid = TimeGrid { dt, steps: rows.len() - 1 };
    let values = (1..cols).map(|k| rows.iter().map(|(_, r)| r[k]).collect()).collect();
    EcgTrace::new(grid, values)
}
