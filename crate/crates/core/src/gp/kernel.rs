//! Matérn-type kernel from a truncated Laplace–Beltrami eigenbasis:
//! `k(x, x') = (eta^2 / C) sum_i (1/l^2 + lambda_i)^(-alpha) psi_i(x) psi_i(x')`
//! with `C` chosen so the node-averaged prior variance is `eta^2`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fem::EigenBasis;
use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub eta: f64,
    pub lengthscale: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel needs eta, l > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Shared, immutable kernel definition. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct MaternKernel {
    basis: Arc<EigenBasis>,
    nu: f64,
    alpha: f64,
    diameter: f64,
    /// `sum_x psi_i(x)^2` per mode.
    sq_norms: Vec<f64>,
}

impl MaternKernel {
    /// `dim` is the manifold dimension, `alpha = nu + dim / 2`. `diameter`
    /// sets the length-scale search range.
    pub fn new(basis: Arc<EigenBasis>, nu: f64, dim: usize, diameter: f64) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidParameter("empty eigenbasis".into()));
        }
        if !(nu > 0.0) || !(diameter > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel needs nu > 0, diameter > 0 (got {nu}, {diameter})")));
        }
        let v = basis.vectors();
        let sq_norms = (0..basis.len()).map(|i| v.column(i).norm_squared()).collect();
        Ok(MaternKernel { basis, nu, alpha: nu + dim as f64 / 2.0, diameter, sq_norms })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn shared_basis(&self) -> Arc<EigenBasis> {
        Arc::clone(&self.basis)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn num_nodes(&self) -> usize {
        self.basis.num_nodes()
    }

    /// Per-mode weights for `eta = 1` and their derivative in `log l`.
    /// Computed in log space so large `alpha` with tiny `lambda_0` does not
    /// overflow; the common factor cancels against `C`.
    pub(crate) fn unit_weights(&self, lengthscale: f64) -> (Vec<f64>, Vec<f64>) {
        let inv2 = lengthscale.powi(-2);
        let logs: Vec<f64> = self
            .basis
            .eigenvalues()
            .iter()
            .map(|&l| -self.alpha * (inv2 + l.max(0.0)).ln())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        // d log s_i / d log l
        let g: Vec<f64> = self
            .basis
            .eigenvalues()
            .iter()
            .map(|&l| 2.0 * self.alpha * inv2 / (inv2 + l.max(0.0)))
            .collect();
        let n = self.num_nodes() as f64;
        let sq: f64 = s.iter().zip(&self.sq_norms).map(|(a, b)| a * b).sum();
        let sqg: f64 = s.iter().zip(&self.sq_norms).zip(&g).map(|((a, b), c)| a * b * c).sum();
        let c = sq / n;
        let mean_g = sqg / sq;
        let w: Vec<f64> = s.iter().map(|si| si / c).collect();
        let dw = w.iter().zip(&g).map(|(wi, gi)| wi * (gi - mean_g)).collect();
        (w, dw)
    }

    /// Mode weights `eta^2 s_i / C`.
    pub fn spectral_weights(&self, p: &KernelParams) -> Vec<f64> {
        let eta2 = p.eta * p.eta;
        self.unit_weights(p.lengthscale).0.into_iter().map(|w| w * eta2).collect()
    }

    pub(crate) fn check_nodes(&self, nodes: &[NodeId]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|n| {
                if n.0 < self.num_nodes() {
                    Ok(n.0)
                } else {
                    Err(Error::InvalidParameter(format!("node {} outside basis of {} nodes", n.0, self.num_nodes())))
                }
            })
            .collect()
    }

    /// `|nodes| x n_eig` eigenvector rows.
    pub fn features(&self, nodes: &[NodeId]) -> Result<DMatrix<f64>> {
        Ok(self.basis.features(&self.check_nodes(nodes)?))
    }

    pub fn matrix(&self, rows: &[NodeId], cols: &[NodeId], p: &KernelParams) -> Result<DMatrix<f64>> {
        p.validate()?;
        let w = self.spectral_weights(p);
        Ok(weighted_gram(&self.features(rows)?, &w, &self.features(cols)?))
    }

    /// Prior variances `k(x, x)`.
    pub fn diagonal(&self, nodes: &[NodeId], p: &KernelParams) -> Result<Vec<f64>> {
        p.validate()?;
        let w = self.spectral_weights(p);
        Ok(weighted_row_norms(&self.features(nodes)?, &w))
    }
}

/// `A diag(w) B^T`, formed as `(A W^1/2)(B W^1/2)^T` with fixed summation
/// order so that swapping `A` and `B` transposes the result bit-exactly.
pub(crate) fn weighted_gram(a: &DMatrix<f64>, w: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let root: Vec<f64> = w.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scale = |m: &DMatrix<f64>| {
        let mut out = m.transpose();
        for (j, r) in root.iter().enumerate() {
            out.row_mut(j).scale_mut(*r);
        }
        out
    };
    let (at, bt) = (scale(a), scale(b));
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        at.column(i).iter().zip(bt.column(j).iter()).map(|(x, y)| x * y).sum()
    })
}

/// `sum_j w_j a_ij^2` per row.
pub(crate) fn weighted_row_norms(a: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().zip(w).map(|(x, wj)| wj * x * x).sum())
        .collect()
}
