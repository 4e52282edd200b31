//! Banded Cholesky factorization behind a reverse Cuthill–McKee reordering.

use std::collections::VecDeque;

use super::SparseSymMatrix;
use crate::{Error, Result};

/// Reverse Cuthill–McKee permutation: `perm[k]` is the original index placed
/// at position `k`.
pub fn reverse_cuthill_mckee(pattern: &[Vec<usize>]) -> Vec<usize> {
    let n = pattern.len();
    let degree: Vec<usize> = pattern.iter().map(|r| r.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
        let start = pseudo_peripheral(pattern, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> =
                pattern[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_unstable_by_key(|&w| (degree[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Endpoint of repeated BFS sweeps, a cheap approximation of a peripheral node.
fn pseudo_peripheral(pattern: &[Vec<usize>], degree: &[usize], start: usize) -> usize {
    let mut current = start;
    let mut ecc = 0;
    loop {
        let levels = bfs_levels(pattern, current);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= ecc {
            return current;
        }
        ecc = max_level;
        current = (0..pattern.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
    }
}

fn bfs_levels(pattern: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut levels = vec![None; pattern.len()];
    levels[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = levels[v].unwrap();
        for &w in &pattern[v] {
            if levels[w].is_none() {
                levels[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    levels
}

/// Cholesky factor `P A P^T = L L^T` of a sparse SPD matrix stored in band
/// form after RCM reordering.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// `perm[k]` = original index at reordered position `k`.
    perm: Vec<usize>,
    /// Row-major band of L: entry `(i, j)` with `i - bw <= j <= i` lives at
    /// `i * (bw + 1) + (j + bw - i)`.
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseSymMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(&a.pattern());
        let mut inv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut bw = 0;
        for (i, j, _) in a.triplets() {
            bw = bw.max(inv[i].abs_diff(inv[j]));
        }
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for (i, j, v) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            if pj <= pi {
                band[pi * stride + (pj + bw - pi)] = v;
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * stride + (j + bw - i)];
                let ri = i * stride + bw - i;
                let rj = j * stride + bw - j;
                for k in klo..j {
                    s -= band[ri + k] * band[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Factorization(format!(
                            "matrix is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    band[ri + i] = s.sqrt();
                } else {
                    band[ri + j] = s / band[rj + j];
                }
            }
        }
        Ok(BandedCholesky { n, bw, perm, band })
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * stride + bw - i;
            let mut s = y[i];
            for k in lo..i {
                s -= self.band[ri + k] * y[k];
            }
            y[i] = s / self.band[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * stride + bw - i;
            y[i] /= self.band[ri + i];
            let yi = y[i];
            for k in i.saturating_sub(bw)..i {
                y[k] -= self.band[ri + k] * yi;
            }
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = y[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_mass, assemble_stiffness, MassLumping};
    use crate::mesh::{generate_synthetic_geometry, GeometryParams};

    #[test]
    fn rcm_is_a_permutation_and_shrinks_bandwidth() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 3)).unwrap();
        let a = assemble_stiffness(&m).unwrap();
        let perm = reverse_cuthill_mckee(&a.pattern());
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..m.num_vertices()).collect::<Vec<_>>());
        let natural = a.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap();
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let reordered = a.triplets().map(|(i, j, _)| inv[i].abs_diff(inv[j])).max().unwrap();
        assert!(reordered < natural, "{reordered} vs {natural}");
    }

    #[test]
    fn solves_shifted_laplacian() {
        let m = generate_synthetic_geometry(&GeometryParams::ellipsoid([1.0, 2.0, 1.5], 2)).unwrap();
        let a = assemble_stiffness(&m).unwrap();
        let mm = assemble_mass(&m, MassLumping::Consistent).unwrap();
        let k = a.add_scaled(0.3, &mm);
        let chol = BandedCholesky::factor(&k).unwrap();
        let x_true: Vec<f64> = (0..m.num_vertices()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = k.matvec(&x_true);
        chol.solve_in_place(&mut b);
        let err = b.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn singular_matrix_fails() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 1)).unwrap();
        let a = assemble_stiffness(&m).unwrap();
        // shift by a negative multiple of mass to make it indefinite
        let mm = assemble_mass(&m, MassLumping::Consistent).unwrap();
        assert!(BandedCholesky::factor(&a.add_scaled(-1.0, &mm)).is_err());
    }
}
