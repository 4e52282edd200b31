//! Two-fidelity autoregressive GP: `f_H = rho f_L + delta` with independent
//! eigenbasis kernels for `f_L` and `delta`, both on the HF surface.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::kernel::{weighted_gram, weighted_row_norms, KernelParams, MaternKernel};
use super::{
    best_restart, condition_gaussian, dl_matrix, factor_with_jitter, nlml_core, restart_points, trace_term,
    GpFitOptions, Posterior, Standardization, JITTER_FLOOR,
};
use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fidelity {
    #[serde(rename = "LF")]
    Low,
    #[serde(rename = "HF")]
    High,
}

impl Fidelity {
    pub fn tag(self) -> &'static str {
        match self {
            Fidelity::Low => "LF",
            Fidelity::High => "HF",
        }
    }
}

/// LF and HF observations, both indexed by HF-mesh nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MfData {
    pub lf_nodes: Vec<NodeId>,
    pub lf_y: Vec<f64>,
    pub hf_nodes: Vec<NodeId>,
    pub hf_y: Vec<f64>,
}

impl MfData {
    fn validate(&self) -> Result<()> {
        if self.lf_nodes.len() != self.lf_y.len() || self.hf_nodes.len() != self.hf_y.len() {
            return Err(Error::DimensionMismatch("node and observation counts differ".into()));
        }
        if self.hf_nodes.is_empty() {
            return Err(Error::InvalidParameter("multi-fidelity model needs at least one HF observation".into()));
        }
        if self.lf_y.iter().chain(&self.hf_y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("observations must be finite".into()));
        }
        Ok(())
    }

    fn internal_targets(&self, st: &Standardization, rho: f64) -> DVector<f64> {
        let hf_shift = rho * st.shift;
        DVector::from_iterator(
            self.lf_y.len() + self.hf_y.len(),
            self.lf_y
                .iter()
                .map(|v| (v - st.shift) / st.scale)
                .chain(self.hf_y.iter().map(|v| (v - hf_shift) / st.scale)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfHyper {
    pub eta_l: f64,
    pub lengthscale_l: f64,
    pub eta_h: f64,
    pub lengthscale_h: f64,
    pub rho: f64,
    pub noise_l: f64,
    pub noise_h: f64,
}

impl MfHyper {
    fn validate(&self) -> Result<()> {
        KernelParams { eta: self.eta_l, lengthscale: self.lengthscale_l }.validate()?;
        KernelParams { eta: self.eta_h, lengthscale: self.lengthscale_h }.validate()?;
        if !self.rho.is_finite() || !(self.noise_l >= 0.0) || !(self.noise_h >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid multi-fidelity parameters {self:?}")));
        }
        Ok(())
    }

    /// Parameter vector `(log eta_L, log l_L, log eta_H, log l_H, rho, log s_L^2, log s_H^2)`.
    fn from_vec(x: &[f64]) -> Self {
        MfHyper {
            eta_l: x[0].exp(),
            lengthscale_l: x[1].exp(),
            eta_h: x[2].exp(),
            lengthscale_h: x[3].exp(),
            rho: x[4],
            noise_l: x[5].exp(),
            noise_h: x[6].exp(),
        }
    }
}

/// Blocks of the LF kernel and of the discrepancy kernel on the training set.
struct Blocks {
    a_ll: DMatrix<f64>,
    a_lh: DMatrix<f64>,
    a_hh: DMatrix<f64>,
    da_ll: DMatrix<f64>,
    da_lh: DMatrix<f64>,
    da_hh: DMatrix<f64>,
    b_hh: DMatrix<f64>,
    db_hh: DMatrix<f64>,
}

fn blocks(kernel: &MaternKernel, phi_l: &DMatrix<f64>, phi_h: &DMatrix<f64>, h: &MfHyper, grads: bool) -> Blocks {
    let (wl, dwl) = kernel.unit_weights(h.lengthscale_l);
    let (wh, dwh) = kernel.unit_weights(h.lengthscale_h);
    let (el, eh) = (h.eta_l * h.eta_l, h.eta_h * h.eta_h);
    let zero = |a: &DMatrix<f64>, b: &DMatrix<f64>| DMatrix::zeros(a.nrows(), b.nrows());
    let cross_d = |a: &DMatrix<f64>, b: &DMatrix<f64>, dw: &[f64], e: f64| {
        let mut s = a.clone();
        for (j, d) in dw.iter().enumerate() {
            s.column_mut(j).scale_mut(*d);
        }
        s * b.transpose() * e
    };
    Blocks {
        a_ll: weighted_gram(phi_l, &wl, phi_l) * el,
        a_lh: weighted_gram(phi_l, &wl, phi_h) * el,
        a_hh: weighted_gram(phi_h, &wl, phi_h) * el,
        da_ll: if grads { dl_matrix(phi_l, &dwl) * el } else { zero(phi_l, phi_l) },
        da_lh: if grads { cross_d(phi_l, phi_h, &dwl, el) } else { zero(phi_l, phi_h) },
        da_hh: if grads { dl_matrix(phi_h, &dwl) * el } else { zero(phi_h, phi_h) },
        b_hh: weighted_gram(phi_h, &wh, phi_h) * eh,
        db_hh: if grads { dl_matrix(phi_h, &dwh) * eh } else { zero(phi_h, phi_h) },
    }
}

/// Assemble `[[LL, LH], [HL, HH]]` from blocks.
fn joint(ll: &DMatrix<f64>, lh: &DMatrix<f64>, hh: &DMatrix<f64>) -> DMatrix<f64> {
    let (nl, nh) = (ll.nrows(), hh.nrows());
    let mut k = DMatrix::zeros(nl + nh, nl + nh);
    k.view_mut((0, 0), (nl, nl)).copy_from(ll);
    k.view_mut((0, nl), (nl, nh)).copy_from(lh);
    k.view_mut((nl, 0), (nh, nl)).copy_from(&lh.transpose());
    k.view_mut((nl, nl), (nh, nh)).copy_from(hh);
    k
}

fn noise_diag(k: &mut DMatrix<f64>, nl: usize, noise_l: f64, noise_h: f64) {
    for i in 0..k.nrows() {
        k[(i, i)] += if i < nl { noise_l } else { noise_h };
    }
}

/// Joint noise-free covariance `[[k_L, rho k_L], [rho k_L, rho^2 k_L + k_H]]`
/// over LF then HF inputs.
pub fn assemble_mf_covariance(
    kernel: &MaternKernel,
    lf_nodes: &[NodeId],
    hf_nodes: &[NodeId],
    h: &MfHyper,
) -> Result<DMatrix<f64>> {
    if hf_nodes.is_empty() {
        return Err(Error::InvalidParameter("empty HF block".into()));
    }
    h.validate()?;
    let b = blocks(kernel, &kernel.features(lf_nodes)?, &kernel.features(hf_nodes)?, h, false);
    Ok(joint(&b.a_ll, &(&b.a_lh * h.rho), &(&b.a_hh * (h.rho * h.rho) + &b.b_hh)))
}

fn mf_objective(
    kernel: &MaternKernel,
    phi_l: &DMatrix<f64>,
    phi_h: &DMatrix<f64>,
    data: &MfData,
    st: &Standardization,
    h: &MfHyper,
) -> Result<(f64, Vec<f64>)> {
    let nl = phi_l.nrows();
    let b = blocks(kernel, phi_l, phi_h, h, true);
    let r = h.rho;
    let mut k = joint(&b.a_ll, &(&b.a_lh * r), &(&b.a_hh * (r * r) + &b.b_hh));
    noise_diag(&mut k, nl, h.noise_l, h.noise_h);
    let y = data.internal_targets(st, r);
    let (value, alpha, w) = nlml_core(&k, &y, true)?;
    let w = w.expect("requested");
    let z_l = DMatrix::zeros(nl, nl);
    let z_lh = DMatrix::zeros(nl, phi_h.nrows());
    let g_eta_l = trace_term(&w, &(joint(&b.a_ll, &(&b.a_lh * r), &(&b.a_hh * (r * r))) * 2.0));
    let g_l_l = trace_term(&w, &joint(&b.da_ll, &(&b.da_lh * r), &(&b.da_hh * (r * r))));
    let g_eta_h = trace_term(&w, &joint(&z_l, &z_lh, &(&b.b_hh * 2.0)));
    let g_l_h = trace_term(&w, &joint(&z_l, &z_lh, &b.db_hh));
    let mean_term = -(st.shift / st.scale) * alpha.rows(nl, phi_h.nrows()).sum();
    let g_rho = trace_term(&w, &joint(&z_l, &b.a_lh, &(&b.a_hh * (2.0 * r)))) + mean_term;
    let diag = w.diagonal();
    let g_noise_l = 0.5 * diag.rows(0, nl).sum() * h.noise_l;
    let g_noise_h = 0.5 * diag.rows(nl, phi_h.nrows()).sum() * h.noise_h;
    Ok((value, vec![g_eta_l, g_l_l, g_eta_h, g_l_h, g_rho, g_noise_l, g_noise_h]))
}

/// Joint NLML and gradient in the log/`rho` parameter vector, on raw data
/// with zero prior means.
pub fn mf_nlml_gradient(kernel: &MaternKernel, data: &MfData, h: &MfHyper) -> Result<(f64, Vec<f64>)> {
    data.validate()?;
    h.validate()?;
    let phi_l = kernel.features(&data.lf_nodes)?;
    let phi_h = kernel.features(&data.hf_nodes)?;
    mf_objective(kernel, &phi_l, &phi_h, data, &Standardization::IDENTITY, h)
}

#[derive(Clone, Debug, Default)]
pub struct MfFitOptions {
    pub gp: GpFitOptions,
}

/// Trained two-fidelity model predicting the HF function.
#[derive(Clone, Debug)]
pub struct MfGpModel {
    kernel: MaternKernel,
    data: MfData,
    hyper: MfHyper,
    /// LF statistics; the HF prior mean is `rho * shift`.
    standardization: Standardization,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    phi_l: DMatrix<f64>,
    phi_h: DMatrix<f64>,
    nlml: f64,
}

impl MfGpModel {
    /// Conditions on data with fixed internal-scale hyperparameters. `N_L = 0`
    /// is allowed here.
    pub fn condition(kernel: &MaternKernel, data: &MfData, hyper: MfHyper, st: Standardization) -> Result<Self> {
        data.validate()?;
        hyper.validate()?;
        let phi_l = kernel.features(&data.lf_nodes)?;
        let phi_h = kernel.features(&data.hf_nodes)?;
        let b = blocks(kernel, &phi_l, &phi_h, &hyper, false);
        let r = hyper.rho;
        let mut k = joint(&b.a_ll, &(&b.a_lh * r), &(&b.a_hh * (r * r) + &b.b_hh));
        noise_diag(&mut k, phi_l.nrows(), hyper.noise_l, hyper.noise_h);
        let y = data.internal_targets(&st, r);
        let (chol, _) = factor_with_jitter(&k)?;
        let alpha = chol.solve(&y);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let nlml = 0.5 * logdet + 0.5 * y.dot(&alpha) + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(MfGpModel { kernel: kernel.clone(), data: data.clone(), hyper, standardization: st, chol, alpha, phi_l, phi_h, nlml })
    }

    pub fn hyper(&self) -> MfHyper {
        self.hyper
    }

    pub fn data(&self) -> &MfData {
        &self.data
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    /// HF posterior means and variances.
    pub fn posterior(&self, query: &[NodeId]) -> Result<Posterior> {
        let phi_q = self.kernel.features(query)?;
        let h = &self.hyper;
        let (wl, _) = self.kernel.unit_weights(h.lengthscale_l);
        let (wh, _) = self.kernel.unit_weights(h.lengthscale_h);
        let (el, eh) = (h.eta_l * h.eta_l, h.eta_h * h.eta_h);
        let wl: Vec<f64> = wl.iter().map(|w| w * el).collect();
        let whh: Vec<f64> = wl.iter().zip(&wh).map(|(a, b)| h.rho * h.rho * a + eh * b).collect();
        let (nl, nh) = (self.phi_l.nrows(), self.phi_h.nrows());
        let mut cross = DMatrix::zeros(query.len(), nl + nh);
        cross.view_mut((0, 0), (query.len(), nl)).copy_from(&(weighted_gram(&phi_q, &wl, &self.phi_l) * h.rho));
        cross.view_mut((0, nl), (query.len(), nh)).copy_from(&weighted_gram(&phi_q, &whh, &self.phi_h));
        let prior = weighted_row_norms(&phi_q, &whh);
        let st = Standardization { shift: h.rho * self.standardization.shift, scale: self.standardization.scale };
        Ok(condition_gaussian(&self.chol, &self.alpha, &cross, &prior, h.rho * h.rho * el + eh, st))
    }

    pub fn posterior_all(&self) -> Result<Posterior> {
        let all: Vec<NodeId> = (0..self.kernel.num_nodes()).map(NodeId).collect();
        self.posterior(&all)
    }

    pub fn to_record(&self) -> MfRecord {
        let obs = self
            .data
            .lf_nodes
            .iter()
            .zip(&self.data.lf_y)
            .map(|(n, y)| TaggedObservation { fidelity: Fidelity::Low, node: n.0, y: *y })
            .chain(
                self.data
                    .hf_nodes
                    .iter()
                    .zip(&self.data.hf_y)
                    .map(|(n, y)| TaggedObservation { fidelity: Fidelity::High, node: n.0, y: *y }),
            )
            .collect();
        MfRecord {
            observations: obs,
            hyper: self.hyper,
            standardization: self.standardization,
            nu: self.kernel.nu(),
            num_eig: self.kernel.basis().len(),
        }
    }

    pub fn from_record(kernel: &MaternKernel, r: &MfRecord) -> Result<Self> {
        if r.num_eig != kernel.basis().len() || r.nu != kernel.nu() {
            return Err(Error::InvalidParameter("record was built with a different kernel".into()));
        }
        let mut d = MfData::default();
        for o in &r.observations {
            match o.fidelity {
                Fidelity::Low => {
                    d.lf_nodes.push(NodeId(o.node));
                    d.lf_y.push(o.y);
                }
                Fidelity::High => {
                    d.hf_nodes.push(NodeId(o.node));
                    d.hf_y.push(o.y);
                }
            }
        }
        MfGpModel::condition(kernel, &d, r.hyper, r.standardization)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedObservation {
    pub fidelity: Fidelity,
    pub node: usize,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfRecord {
    pub observations: Vec<TaggedObservation>,
    pub hyper: MfHyper,
    pub standardization: Standardization,
    pub nu: f64,
    pub num_eig: usize,
}

/// Fits all seven parameters by multi-start L-BFGS, standardizing against LF
/// statistics. `rho` starts at 1 on every restart.
pub fn fit_mf(kernel: &MaternKernel, data: &MfData, opts: &MfFitOptions) -> Result<MfGpModel> {
    data.validate()?;
    if data.lf_nodes.is_empty() {
        return Err(Error::InvalidParameter("multi-fidelity fit needs at least one LF observation".into()));
    }
    if opts.gp.restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart required".into()));
    }
    let st = Standardization::from_data(&data.lf_y);
    let var_h = {
        let v: Vec<f64> = data.hf_y.iter().map(|y| (y - st.shift) / st.scale).collect();
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    };
    let d = kernel.diameter();
    let ln_eta = ((1e-3f64).ln(), (1e3f64).ln());
    let ln_l = ((0.01 * d).ln(), (2.0 * d).ln());
    let bounds = vec![
        ln_eta,
        ln_l,
        ln_eta,
        ln_l,
        (-5.0, 5.0),
        (JITTER_FLOOR.ln(), 1.0f64.max(10.0 * JITTER_FLOOR).ln()),
        (JITTER_FLOOR.ln(), var_h.max(1.0).ln()),
    ];
    let first = vec![0.0, (0.25 * d).ln(), (0.1f64).ln(), (0.25 * d).ln(), 1.0, (1e-3f64).ln(), (1e-3f64).ln()];
    let mut starts = restart_points(&bounds, first, opts.gp.restarts, opts.gp.seed);
    for s in &mut starts {
        s[4] = 1.0;
    }
    let phi_l = kernel.features(&data.lf_nodes)?;
    let phi_h = kernel.features(&data.hf_nodes)?;
    let (x, _) = best_restart(&starts, &bounds, &opts.gp.lbfgs, |x| {
        mf_objective(kernel, &phi_l, &phi_h, data, &st, &MfHyper::from_vec(x))
    })?;
    MfGpModel::condition(kernel, data, MfHyper::from_vec(&x), st)
}
