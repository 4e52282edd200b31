//! P1 finite elements on simplicial meshes and the Laplace–Beltrami
//! eigenbasis.

mod banded;
mod eigen;
mod sparse;

pub use banded::{reverse_cuthill_mckee, BandedCholesky};
pub use eigen::{
    compute_eigenbasis, compute_eigenbasis_dense, default_eigen_count, load_eigenbasis,
    save_eigenbasis, EigenBasis, EigenOptions,
};
pub use sparse::SparseSymMatrix;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::mesh::SimplicialMesh;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassLumping {
    #[default]
    Consistent,
    Lumped,
}

/// Stiffness matrix `A_ij = sum_e int grad N_i . grad N_j`.
pub fn assemble_stiffness(mesh: &SimplicialMesh) -> Result<SparseSymMatrix> {
    assemble_weighted_stiffness(mesh, |_| Matrix3::identity())
}

/// Stiffness matrix with a per-element symmetric tensor:
/// `sum_e int grad N_i . T_e grad N_j`.
pub fn assemble_weighted_stiffness(
    mesh: &SimplicialMesh,
    tensor: impl Fn(usize) -> Matrix3<f64>,
) -> Result<SparseSymMatrix> {
    let per = mesh.dim() + 1;
    let mut triplets = Vec::with_capacity(mesh.num_elements() * per * per);
    for e in 0..mesh.num_elements() {
        let (grads, measure) = mesh.shape_gradients(e);
        check_measure(e, measure)?;
        let t = tensor(e);
        let cell = mesh.element(e);
        for (i, gi) in grads.iter().enumerate() {
            let tg = t * gi;
            for (j, gj) in grads.iter().enumerate() {
                triplets.push((cell[i], cell[j], measure * tg.dot(gj)));
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_vertices(), triplets))
}

/// Mass matrix `M_ij = sum_e int N_i N_j`, consistent or row-sum lumped.
pub fn assemble_mass(mesh: &SimplicialMesh, lumping: MassLumping) -> Result<SparseSymMatrix> {
    let per = mesh.dim() + 1;
    // int N_i N_j = |e| (1 + delta_ij) / ((d+1)(d+2))
    let denom = (per * (per + 1)) as f64;
    let mut triplets = Vec::with_capacity(mesh.num_elements() * per * per);
    for e in 0..mesh.num_elements() {
        let measure = mesh.element_measure(e);
        check_measure(e, measure)?;
        let cell = mesh.element(e);
        for i in 0..per {
            match lumping {
                MassLumping::Consistent => {
                    for j in 0..per {
                        let w = if i == j { 2.0 } else { 1.0 };
                        triplets.push((cell[i], cell[j], measure * w / denom));
                    }
                }
                MassLumping::Lumped => triplets.push((cell[i], cell[i], measure / per as f64)),
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_vertices(), triplets))
}

fn check_measure(e: usize, measure: f64) -> Result<()> {
    if measure > 0.0 && measure.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateElement { element: e, measure })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_geometry, planar_sheet, GeometryParams, Point, SheetPattern};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_right_triangle() -> SimplicialMesh {
        let v = vec![Point::new(0., 0., 0.), Point::new(1., 0., 0.), Point::new(0., 1., 0.)];
        SimplicialMesh::new(v, vec![0, 1, 2], 2, None).unwrap()
    }

    #[test]
    fn stiffness_of_unit_right_triangle() {
        let a = assemble_stiffness(&unit_right_triangle()).unwrap().to_dense();
        let expected = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - 0.5 * expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_of_unit_right_triangle() {
        let m = assemble_mass(&unit_right_triangle(), MassLumping::Consistent).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { 2.0 } else { 1.0 };
                assert!((m[(i, j)] - 0.5 / 12.0 * w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_scale_invariant() {
        let m = generate_synthetic_geometry(&GeometryParams::ellipsoid([2.0, 1.0, 1.5], 2)).unwrap();
        let a = assemble_stiffness(&m).unwrap();
        let ones = vec![1.0; m.num_vertices()];
        assert!(a.matvec(&ones).iter().all(|r| r.abs() < 1e-12));
        assert!(a.max_asymmetry() < 1e-12);

        let scaled: Vec<Point> = m.vertices().iter().map(|p| p * 3.7).collect();
        let ms = SimplicialMesh::new(scaled, m.cells_flat().to_vec(), 2, None).unwrap();
        let as_ = assemble_stiffness(&ms).unwrap();
        let (d1, d2) = (a.to_dense(), as_.to_dense());
        assert!((d1 - d2).amax() < 1e-12);
    }

    #[test]
    fn mass_sums_to_area() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 3)).unwrap();
        let mm = assemble_mass(&m, MassLumping::Consistent).unwrap();
        let total: f64 = mm.values().iter().sum();
        let area = m.total_measure();
        assert!((total - area).abs() / area < 1e-10);
        assert!((total - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI) < 0.01);
    }

    #[test]
    fn lumped_mass_preserves_row_sums() {
        let m = planar_sheet(1.0, 2.0, 5, 7, SheetPattern::Alternating).unwrap();
        let c = assemble_mass(&m, MassLumping::Consistent).unwrap();
        let l = assemble_mass(&m, MassLumping::Lumped).unwrap();
        let ones = vec![1.0; m.num_vertices()];
        let (rc, rl) = (c.matvec(&ones), l.matvec(&ones));
        for (a, b) in rc.iter().zip(&rl) {
            assert!((a - b).abs() < 1e-14);
        }
        let d = l.to_dense();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if i != j {
                    assert_eq!(d[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn stiffness_psd_mass_pd_on_random_vectors() {
        let m = generate_synthetic_geometry(&GeometryParams::ellipsoid([3.0, 2.0, 1.0], 2)).unwrap();
        let a = assemble_stiffness(&m).unwrap();
        let mm = assemble_mass(&m, MassLumping::Consistent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random::<f64>() - 0.5).collect();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            assert!(a.quadratic_form(&u) >= -1e-10 * uu);
            assert!(mm.quadratic_form(&u) > 0.0);
        }
    }

    #[test]
    fn tetra_mass_sums_to_volume() {
        let v = vec![
            Point::new(0., 0., 0.),
            Point::new(1., 0., 0.),
            Point::new(0., 1., 0.),
            Point::new(0., 0., 1.),
        ];
        let m = SimplicialMesh::new(v, vec![0, 1, 2, 3], 3, None).unwrap();
        let mm = assemble_mass(&m, MassLumping::Consistent).unwrap();
        let total: f64 = mm.values().iter().sum();
        assert!((total - 1.0 / 6.0).abs() < 1e-15);
        let a = assemble_stiffness(&m).unwrap();
        assert!(a.matvec(&[1.0; 4]).iter().all(|r| r.abs() < 1e-14));
    }
}
