//! Gaussian-process regression over mesh nodes with eigenbasis kernels.
//!
//! Single-fidelity models live here; the two-fidelity autoregressive model is
//! in [`mf`]. Both are immutable once built: refitting produces a new model,
//! so a posterior can never be computed from a factorization that does not
//! match the model's data and hyperparameters.

pub mod kernel;
pub mod mf;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kernel::{KernelParams, MaternKernel};
pub use mf::{fit_mf, MfData, MfFitOptions, MfGpModel, MfHyper, MfRecord};

use crate::optim::{minimize_box, LbfgsConfig};
use crate::{Error, NodeId, Result};

/// Smallest noise variance, relative to the observation variance (or the mean
/// prior variance when factorizing).
pub const JITTER_FLOOR: f64 = 1e-10;
/// Largest relative jitter tried before a factorization is declared failed.
pub const JITTER_CEILING: f64 = 1e-4;

/// Kernel amplitude, length scale (mm) and observation noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub eta: f64,
    pub lengthscale: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn kernel_params(&self) -> KernelParams {
        KernelParams { eta: self.eta, lengthscale: self.lengthscale }
    }

    fn validate(&self) -> Result<()> {
        self.kernel_params().validate()?;
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {} must be >= 0", self.noise_var)));
        }
        Ok(())
    }
}

/// Affine map between raw observations and the model's internal scale:
/// `y = shift + scale * y_internal`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { shift: 0.0, scale: 1.0 };

    /// Zero mean, unit (population) variance. Constant data keeps scale 1.
    pub fn from_data(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs() && sd > 0.0 { sd } else { 1.0 };
        Standardization { shift: mean, scale }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }
}

/// Cholesky of `k`, adding diagonal jitter `JITTER_FLOOR * mean(diag)` and
/// growing it x10 up to `JITTER_CEILING * mean(diag)` on failure. Returns the
/// factor and the jitter actually added.
pub(crate) fn factor_with_jitter(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mean_diag = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = 0.0;
    loop {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((c, jitter));
            }
        }
        rel = if rel == 0.0 { JITTER_FLOOR } else { rel * 10.0 };
        if rel > JITTER_CEILING * (1.0 + 1e-9) {
            return Err(Error::Factorization(format!(
                "covariance of size {n} not positive definite with relative jitter up to {JITTER_CEILING:e}"
            )));
        }
    }
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `0.5 * sum_ij (K^-1 - a a^T)_ij dK_ij`, the NLML derivative for one
/// covariance direction given `W = K^-1 - a a^T`.
pub(crate) fn trace_term(w: &DMatrix<f64>, dk: &DMatrix<f64>) -> f64 {
    0.5 * w.iter().zip(dk.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// NLML value and `K^-1 - a a^T` for a covariance and (internal-scale)
/// targets.
pub(crate) fn nlml_core(k: &DMatrix<f64>, y: &DVector<f64>, want_w: bool) -> Result<(f64, DVector<f64>, Option<DMatrix<f64>>)> {
    let (c, _) = factor_with_jitter(k)?;
    let alpha = c.solve(y);
    let n = y.len() as f64;
    let value = 0.5 * log_det(&c) + 0.5 * y.dot(&alpha) + 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    let w = want_w.then(|| c.inverse() - &alpha * alpha.transpose());
    Ok((value, alpha, w))
}

fn sf_covariance(kernel: &MaternKernel, phi: &DMatrix<f64>, h: &GpHyper) -> (DMatrix<f64>, DMatrix<f64>) {
    let (w, dw) = kernel.unit_weights(h.lengthscale);
    let eta2 = h.eta * h.eta;
    let kf = kernel::weighted_gram(phi, &w, phi) * eta2;
    let dl = dl_matrix(phi, &dw) * eta2;
    (kf, dl)
}

/// `Phi diag(dw) Phi^T` for weight derivatives that may be negative.
pub(crate) fn dl_matrix(phi: &DMatrix<f64>, dw: &[f64]) -> DMatrix<f64> {
    let mut scaled = phi.clone();
    for (j, d) in dw.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*d);
    }
    scaled * phi.transpose()
}

fn add_diag(m: &mut DMatrix<f64>, v: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += v;
    }
}

fn check_data(nodes: &[NodeId], y: &[f64]) -> Result<()> {
    if nodes.is_empty() || nodes.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} nodes for {} observations", nodes.len(), y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("observations must be finite".into()));
    }
    Ok(())
}

/// Zero-mean NLML `0.5 log|K + s^2 I| + 0.5 y^T (K + s^2 I)^-1 y + N/2 log 2 pi`
/// on raw observations.
pub fn nlml(kernel: &MaternKernel, nodes: &[NodeId], y: &[f64], h: &GpHyper) -> Result<f64> {
    Ok(nlml_gradient(kernel, nodes, y, h)?.0)
}

/// NLML and its gradient with respect to `(log eta, log l, log noise_var)`.
pub fn nlml_gradient(kernel: &MaternKernel, nodes: &[NodeId], y: &[f64], h: &GpHyper) -> Result<(f64, [f64; 3])> {
    check_data(nodes, y)?;
    h.validate()?;
    let phi = kernel.features(nodes)?;
    sf_objective(kernel, &phi, &DVector::from_column_slice(y), h)
}

fn sf_objective(kernel: &MaternKernel, phi: &DMatrix<f64>, y: &DVector<f64>, h: &GpHyper) -> Result<(f64, [f64; 3])> {
    let (kf, dl) = sf_covariance(kernel, phi, h);
    let mut k = kf.clone();
    add_diag(&mut k, h.noise_var);
    let (value, _, w) = nlml_core(&k, y, true)?;
    let w = w.expect("requested");
    let d_eta = trace_term(&w, &(kf * 2.0));
    let d_l = trace_term(&w, &dl);
    let d_noise = 0.5 * w.trace() * h.noise_var;
    Ok((value, [d_eta, d_l, d_noise]))
}

/// Posterior means and latent-function variances at query nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GpFitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions {
            restarts: 8,
            seed: 0,
            lbfgs: LbfgsConfig { max_iterations: 150, gradient_tolerance: 1e-5, ..LbfgsConfig::default() },
        }
    }
}

/// Draws log-uniform restart points; restart 0 is the box centre in the
/// kernel coordinates and a small noise level.
pub(crate) fn restart_points(bounds: &[(f64, f64)], first: Vec<f64>, restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![first];
    while out.len() < restarts {
        out.push(bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect());
    }
    out.truncate(restarts);
    out
}

/// Lowest final value wins; ties go to the earliest restart.
pub(crate) fn best_restart<F>(starts: &[Vec<f64>], bounds: &[(f64, f64)], cfg: &LbfgsConfig, mut f: F) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut failures = Vec::new();
    for (i, x0) in starts.iter().enumerate() {
        match minimize_box(&mut f, x0, bounds, cfg) {
            Ok(m) => {
                log::debug!("restart {i}: value {} after {} iterations", m.value, m.iterations);
                if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
                    best = Some((m.x, m.value));
                }
            }
            Err(e) => failures.push(format!("restart {i}: {e}")),
        }
    }
    best.ok_or_else(|| Error::Fit(format!("all {} restarts failed: {}", starts.len(), failures.join("; "))))
}

/// Trained single-fidelity GP.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: MaternKernel,
    nodes: Vec<NodeId>,
    y: Vec<f64>,
    standardization: Standardization,
    /// Internal-scale hyperparameters.
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    weights: Vec<f64>,
    phi: DMatrix<f64>,
    nlml: f64,
    jitter: f64,
}

impl GpModel {
    /// Conditions on data with fixed hyperparameters given on the internal
    /// scale defined by `standardization`.
    pub fn condition(
        kernel: &MaternKernel,
        nodes: &[NodeId],
        y: &[f64],
        hyper: GpHyper,
        standardization: Standardization,
    ) -> Result<Self> {
        check_data(nodes, y)?;
        hyper.validate()?;
        let phi = kernel.features(nodes)?;
        let weights = kernel.spectral_weights(&hyper.kernel_params());
        let mut k = kernel::weighted_gram(&phi, &weights, &phi);
        add_diag(&mut k, hyper.noise_var);
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| standardization.forward(*v)));
        let (chol, jitter) = factor_with_jitter(&k)?;
        let alpha = chol.solve(&ys);
        let nlml = 0.5 * log_det(&chol) + 0.5 * ys.dot(&alpha) + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel {
            kernel: kernel.clone(),
            nodes: nodes.to_vec(),
            y: y.to_vec(),
            standardization,
            hyper,
            chol,
            alpha,
            weights,
            phi,
            nlml,
            jitter,
        })
    }

    /// Standardizes `y` and fits `(eta, l, noise)` by multi-start L-BFGS on
    /// the log parameters.
    pub fn fit(kernel: &MaternKernel, nodes: &[NodeId], y: &[f64], opts: &GpFitOptions) -> Result<Self> {
        check_data(nodes, y)?;
        if nodes.len() < 2 || opts.restarts == 0 {
            return Err(Error::InvalidParameter("fitting needs at least 2 observations and 1 restart".into()));
        }
        let st = Standardization::from_data(y);
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| st.forward(*v)));
        let var = ys.iter().map(|v| v * v).sum::<f64>() / ys.len() as f64;
        let bounds = sf_bounds(kernel, var);
        let phi = kernel.features(nodes)?;
        let first = vec![0.0, (0.25 * kernel.diameter()).ln(), (1e-3f64).ln().clamp(bounds[2].0, bounds[2].1)];
        let starts = restart_points(&bounds, first, opts.restarts, opts.seed);
        let (x, _) = best_restart(&starts, &bounds, &opts.lbfgs, |x| {
            let h = GpHyper { eta: x[0].exp(), lengthscale: x[1].exp(), noise_var: x[2].exp() };
            sf_objective(kernel, &phi, &ys, &h).map(|(v, g)| (v, g.to_vec()))
        })?;
        let h = GpHyper { eta: x[0].exp(), lengthscale: x[1].exp(), noise_var: x[2].exp() };
        GpModel::condition(kernel, nodes, y, h, st)
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    /// Hyperparameters on the internal (standardized) scale.
    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    /// Hyperparameters expressed in observation units.
    pub fn hyper_in_data_units(&self) -> GpHyper {
        let s = self.standardization.scale;
        GpHyper { eta: self.hyper.eta * s, lengthscale: self.hyper.lengthscale, noise_var: self.hyper.noise_var * s * s }
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    /// NLML of the internal-scale data at the model's hyperparameters.
    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn posterior(&self, query: &[NodeId]) -> Result<Posterior> {
        let phi_q = self.kernel.features(query)?;
        let cross = kernel::weighted_gram(&phi_q, &self.weights, &self.phi);
        let prior = kernel::weighted_row_norms(&phi_q, &self.weights);
        let eta2 = self.hyper.eta * self.hyper.eta;
        Ok(condition_gaussian(&self.chol, &self.alpha, &cross, &prior, eta2, self.standardization))
    }

    pub fn posterior_all(&self) -> Result<Posterior> {
        let all: Vec<NodeId> = (0..self.kernel.num_nodes()).map(NodeId).collect();
        self.posterior(&all)
    }

    pub fn to_record(&self) -> GpRecord {
        GpRecord {
            nodes: self.nodes.iter().map(|n| n.0).collect(),
            y: self.y.clone(),
            hyper: self.hyper,
            standardization: self.standardization,
            nu: self.kernel.nu(),
            num_eig: self.kernel.basis().len(),
        }
    }

    pub fn from_record(kernel: &MaternKernel, r: &GpRecord) -> Result<Self> {
        if r.num_eig != kernel.basis().len() || r.nu != kernel.nu() {
            return Err(Error::InvalidParameter("record was built with a different kernel".into()));
        }
        let nodes: Vec<NodeId> = r.nodes.iter().copied().map(NodeId).collect();
        GpModel::condition(kernel, &nodes, &r.y, r.hyper, r.standardization)
    }
}

/// Serializable model state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpRecord {
    pub nodes: Vec<usize>,
    pub y: Vec<f64>,
    pub hyper: GpHyper,
    pub standardization: Standardization,
    pub nu: f64,
    pub num_eig: usize,
}

fn sf_bounds(kernel: &MaternKernel, var: f64) -> Vec<(f64, f64)> {
    let d = kernel.diameter();
    let noise_hi = var.max(JITTER_FLOOR * 10.0);
    vec![
        ((1e-3f64).ln(), (1e3f64).ln()),
        ((0.01 * d).ln(), (2.0 * d).ln()),
        ((JITTER_FLOOR).ln(), noise_hi.ln()),
    ]
}

/// Gaussian conditioning given `chol(K)`, `alpha = K^-1 y`, the query/data
/// cross covariance and prior variances; returns data-unit outputs.
/// Negative variances from round-off are clamped to zero.
pub(crate) fn condition_gaussian(
    chol: &Cholesky<f64, Dyn>,
    alpha: &DVector<f64>,
    cross: &DMatrix<f64>,
    prior: &[f64],
    eta2: f64,
    st: Standardization,
) -> Posterior {
    let mean_s = cross * alpha;
    let mut v = cross.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let mut worst = 0.0f64;
    let variance = prior
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = p - v.column(i).norm_squared();
            if s < 0.0 {
                worst = worst.max(-s);
            }
            s.max(0.0) * st.scale * st.scale
        })
        .collect();
    if worst > 1e-8 * eta2 {
        log::warn!("posterior variance clamped by {worst:e} (> 1e-8 eta^2)");
    }
    Posterior { mean: mean_s.iter().map(|m| st.shift + st.scale * m).collect(), variance }
}
