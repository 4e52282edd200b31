//! Smallest eigenpairs of the generalized problem `A v = lambda M v`.
//!
//! The sparse path runs a block Lanczos process on the shift-inverted
//! operator `(A + sigma M)^{-1} M`, which is self-adjoint in the M inner
//! product, keeps the basis fully M-orthonormal, and extracts Ritz pairs from
//! the projected operator. Blocks make exactly degenerate eigenvalues (sphere
//! multiplets) reachable. The dense path reduces to a
//! standard symmetric problem through a Cholesky factor of `M` and serves as
//! the oracle for small meshes.

use std::collections::VecDeque;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BandedCholesky, SparseSymMatrix};
use crate::{Error, Result};

/// Truncated eigenbasis with M-orthonormal eigenvectors, eigenvalues
/// ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    /// `n x n_eig`, column `i` is `psi_i` sampled at the nodes.
    vectors: DMatrix<f64>,
}

impl EigenBasis {
    pub fn new(eigenvalues: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if eigenvalues.len() != vectors.ncols() || eigenvalues.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues for {} eigenvectors",
                eigenvalues.len(),
                vectors.ncols()
            )));
        }
        Ok(EigenBasis { eigenvalues, vectors })
    }

    pub fn num_nodes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.vectors.column(i)
    }

    /// First `count` pairs only.
    pub fn truncated(&self, count: usize) -> EigenBasis {
        let count = count.clamp(1, self.len());
        EigenBasis {
            eigenvalues: self.eigenvalues[..count].to_vec(),
            vectors: self.vectors.columns(0, count).into_owned(),
        }
    }

    /// Rows of the eigenvector matrix for the given nodes (`|nodes| x n_eig`).
    pub fn features(&self, nodes: &[usize]) -> DMatrix<f64> {
        self.vectors.select_rows(nodes)
    }

    /// `max_i |A psi_i - lambda_i M psi_i| / |M psi_i|`, per pair.
    pub fn residuals(&self, a: &SparseSymMatrix, m: &SparseSymMatrix) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let v: Vec<f64> = self.vectors.column(i).iter().copied().collect();
                let av = a.matvec(&v);
                let mv = m.matvec(&v);
                let r: f64 = av
                    .iter()
                    .zip(&mv)
                    .map(|(x, y)| (x - self.eigenvalues[i] * y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                r / mv.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Accepted residual `|A psi - lambda M psi| / |M psi|`, relative to
    /// `max(|lambda_i|, lambda_1)`.
    pub tolerance: f64,
    pub block_size: usize,
    /// Spectral shift; defaults to `1 / total_mass`, well below the first
    /// nonzero eigenvalue of a closed surface.
    pub shift: Option<f64>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tolerance: 1e-6,
            block_size: 8,
            shift: None,
            seed: 0x5eed,
        }
    }
}

/// Default truncation `min(256, n / 4)`, at least one pair.
pub fn default_eigen_count(num_nodes: usize) -> usize {
    (num_nodes / 4).min(256).max(1)
}

pub fn compute_eigenbasis(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    n_eig: usize,
    opts: &EigenOptions,
) -> Result<EigenBasis> {
    let n = a.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "stiffness is {n}x{n}, mass is {0}x{0}",
            m.dim()
        )));
    }
    if n_eig == 0 || n_eig > n {
        return Err(Error::InvalidParameter(format!(
            "requested {n_eig} eigenpairs from a {n}-dimensional problem"
        )));
    }
    // Tiny problems are cheaper (and exact) through the dense path.
    if n <= 64 {
        return compute_eigenbasis_dense(a, m, n_eig);
    }
    let total_mass: f64 = m.values().iter().sum();
    let shift = opts.shift.unwrap_or(1.0 / total_mass);
    let chol = BandedCholesky::factor(&a.add_scaled(shift, m))?;
    let block = opts.block_size.max(1).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis = MOrthoBasis::new(n, m);
    let mut target = (2 * n_eig + 40).max(n_eig + 100).min(n);
    // Candidates waiting to enter the basis. Images of every accepted vector
    // are queued, so the basis stays a block Krylov space across extensions.
    let mut pending: VecDeque<Vec<f64>> = random_block(&mut rng, n, block).into();
    // op(v_j) for every basis column, in basis order
    let mut images: Vec<f64> = Vec::new();
    loop {
        while basis.len() < target {
            let take = block.min(target - basis.len()).min(pending.len().max(1));
            let mut batch: Vec<Vec<f64>> = pending.drain(..take.min(pending.len())).collect();
            while batch.len() < take {
                batch.push(random_vector(&mut rng, n));
            }
            let added = basis.extend(&batch, &mut rng);
            if added.is_empty() {
                break;
            }
            for v in &added {
                let mut w = m.matvec(v);
                chol.solve_in_place(&mut w);
                images.extend_from_slice(&w);
                pending.push_back(w);
            }
        }
        let (values, vectors) = shift_invert_ritz(&basis, &images, a, m, n_eig);
        let candidate = finalize(values, vectors)?;
        let res = candidate.residuals(a, m);
        let scale = candidate.eigenvalues.get(1).copied().unwrap_or(1.0).abs().max(f64::MIN_POSITIVE);
        let ok = res
            .iter()
            .zip(&candidate.eigenvalues)
            .all(|(r, l)| *r <= opts.tolerance * l.abs().max(scale));
        if ok {
            return Ok(candidate);
        }
        if basis.len() >= n {
            let max_residual = res.iter().copied().fold(0.0, f64::max);
            return Err(Error::EigenNonConvergence {
                max_residual,
                krylov_dim: basis.len(),
                residuals: res,
            });
        }
        log::debug!(
            "eigensolver: residuals above tolerance with {} vectors, extending",
            basis.len()
        );
        target = (target + target / 2).min(n);
    }
}

/// Dense reference solver: `M = L L^T`, eigen-decompose `L^-1 A L^-T`.
pub fn compute_eigenbasis_dense(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    n_eig: usize,
) -> Result<EigenBasis> {
    let n = a.dim();
    if n_eig == 0 || n_eig > n {
        return Err(Error::InvalidParameter(format!(
            "requested {n_eig} eigenpairs from a {n}-dimensional problem"
        )));
    }
    let chol = m
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("singular mass factor".into()))?;
    let c = &l_inv * a.to_dense() * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = idx[..n_eig].iter().map(|&i| eig.eigenvalues[i]).collect();
    let u = eig.eigenvectors.select_columns(&idx[..n_eig]);
    let vectors = l_inv.transpose() * u;
    finalize(values, vectors)
}

/// Sorts ascending and applies the sign convention (largest-magnitude entry
/// positive, first index on ties).
fn finalize(values: Vec<f64>, mut vectors: DMatrix<f64>) -> Result<EigenBasis> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    vectors = vectors.select_columns(&order);
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    EigenBasis::new(values, vectors)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn random_block(rng: &mut ChaCha8Rng, n: usize, b: usize) -> Vec<Vec<f64>> {
    (0..b).map(|_| random_vector(rng, n)).collect()
}

/// M-orthonormal basis `V` with cached `M V`.
struct MOrthoBasis<'a> {
    m: &'a SparseSymMatrix,
    n: usize,
    v: Vec<f64>,
    mv: Vec<f64>,
    cols: usize,
}

impl<'a> MOrthoBasis<'a> {
    fn new(n: usize, m: &'a SparseSymMatrix) -> Self {
        MOrthoBasis { m, n, v: Vec::new(), mv: Vec::new(), cols: 0 }
    }

    fn len(&self) -> usize {
        self.cols
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    fn mcol(&self, j: usize) -> &[f64] {
        &self.mv[j * self.n..(j + 1) * self.n]
    }

    /// Orthogonalizes each candidate against the basis (two classical
    /// Gram–Schmidt passes) and appends it; rank-deficient candidates are
    /// replaced by fresh random vectors. Returns the appended vectors.
    fn extend(&mut self, cands: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut added = Vec::new();
        for c in cands {
            if self.cols >= self.n {
                break;
            }
            let mut w = c.clone();
            let mut attempts = 0;
            loop {
                let before = self.m_norm(&w);
                for _ in 0..2 {
                    self.project_out(&mut w);
                }
                let after = self.m_norm(&w);
                if after > 1e-8 * before && after > 0.0 {
                    let inv = 1.0 / after;
                    w.iter_mut().for_each(|x| *x *= inv);
                    break;
                }
                attempts += 1;
                if attempts > 5 {
                    return added;
                }
                w = random_vector(rng, self.n);
            }
            let mw = self.m.matvec(&w);
            self.v.extend_from_slice(&w);
            self.mv.extend_from_slice(&mw);
            self.cols += 1;
            added.push(w);
        }
        added
    }

    fn m_norm(&self, w: &[f64]) -> f64 {
        self.m.quadratic_form(w).max(0.0).sqrt()
    }

    fn project_out(&self, w: &mut [f64]) {
        let coeffs: Vec<f64> = (0..self.cols)
            .map(|j| dot(self.mcol(j), w))
            .collect();
        for (j, c) in coeffs.iter().enumerate() {
            let col = self.col(j);
            for (wi, vi) in w.iter_mut().zip(col) {
                *wi -= c * vi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ritz pairs of the shift-inverted operator on the M-orthonormal basis:
/// eigenpairs of `V^T M op(V)`, largest first, with eigenvalues taken as
/// Rayleigh quotients of `A`. The projected operator is bounded by
/// `1 / sigma`, so high-frequency content of the basis cannot pollute the
/// wanted pairs.
fn shift_invert_ritz(
    basis: &MOrthoBasis<'_>,
    images: &[f64],
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    k: usize,
) -> (Vec<f64>, DMatrix<f64>) {
    let (n, cols) = (basis.n, basis.len());
    let v = DMatrix::from_column_slice(n, cols, &basis.v);
    let mv = DMatrix::from_column_slice(n, cols, &basis.mv);
    let w = DMatrix::from_column_slice(n, cols, &images[..n * cols]);
    let g = mv.transpose() * w;
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let k = k.min(cols);
    let y = v * eig.eigenvectors.select_columns(&idx[..k]);
    let values = y
        .column_iter()
        .map(|c| {
            let c = c.as_slice();
            a.quadratic_form(c) / m.quadratic_form(c)
        })
        .collect();
    (values, y)
}

const MAGIC: &[u8; 8] = b"EASEIG01";

/// Binary layout (little endian): magic, `n: u64`, `n_eig: u64`, eigenvalues,
/// then the `n x n_eig` eigenvector table row-major.
pub fn save_eigenbasis(basis: &EigenBasis, path: &Path) -> Result<()> {
    let (n, k) = (basis.num_nodes(), basis.len());
    let mut buf = Vec::with_capacity(24 + 8 * (k + n * k));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    for l in &basis.eigenvalues {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..n {
        for j in 0..k {
            buf.extend_from_slice(&basis.vectors[(i, j)].to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_eigenbasis(path: &Path) -> Result<EigenBasis> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 24 || &buf[..8] != MAGIC {
        return Err(Error::parse(path, 0, "not an eigenbasis file"));
    }
    let word = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let (n, k) = (word(8) as usize, word(16) as usize);
    if buf.len() != 24 + 8 * (k + n * k) {
        return Err(Error::parse(path, 0, "eigenbasis file has the wrong size"));
    }
    let f = |i: usize| f64::from_le_bytes(buf[24 + 8 * i..32 + 8 * i].try_into().unwrap());
    let values = (0..k).map(f).collect();
    let vectors = DMatrix::from_fn(n, k, |i, j| f(k + i * k + j));
    EigenBasis::new(values, vectors)
}

#[allow(dead_code)]
fn m_gram(basis: &EigenBasis, m: &SparseSymMatrix) -> DMatrix<f64> {
    let k = basis.len();
    let mut g = DMatrix::zeros(k, k);
    let mv: Vec<Vec<f64>> = (0..k)
        .map(|j| m.matvec(basis.vectors.column(j).as_slice()))
        .collect();
    for i in 0..k {
        let vi = DVector::from_column_slice(basis.vectors.column(i).as_slice());
        for j in 0..k {
            g[(i, j)] = vi.iter().zip(&mv[j]).map(|(a, b)| a * b).sum();
        }
    }
    g
}
