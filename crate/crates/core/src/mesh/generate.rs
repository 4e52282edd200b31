//! Synthetic geometries: geodesic spheres, ellipsoids and flat sheets.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Point, SimplicialMesh};
use crate::{Error, Result};

/// Rule used to generate per-element fiber directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum FiberRule {
    /// Circumferential direction around the mesh's principal axis.
    Azimuthal,
    /// A fixed direction, projected onto each element's tangent plane.
    FixedDirection { direction: [f64; 3] },
}

impl FiberRule {
    pub fn apply(&self, mesh: &SimplicialMesh) -> Vec<Vector3<f64>> {
        let center = mesh.centroid();
        let axis = mesh.principal_axis();
        (0..mesh.num_elements())
            .map(|e| {
                let raw = match *self {
                    FiberRule::Azimuthal => axis.cross(&(mesh.element_centroid(e) - center)),
                    FiberRule::FixedDirection { direction } => Vector3::from(direction),
                };
                tangent_unit(mesh, e, raw, axis)
            })
            .collect()
    }
}

/// Projects `raw` onto the tangent plane of element `e` (surfaces only) and
/// normalizes, falling back to the axis and finally the first edge when the
/// projection vanishes.
pub(crate) fn tangent_unit(
    mesh: &SimplicialMesh,
    e: usize,
    raw: Vector3<f64>,
    axis: Vector3<f64>,
) -> Vector3<f64> {
    let pts = mesh.element_points(e);
    let edge = pts[1] - pts[0];
    let scale = edge.norm();
    let project = |v: Vector3<f64>| -> Vector3<f64> {
        if mesh.dim() == 2 {
            let n = mesh.triangle_normal(e);
            v - n * n.dot(&v)
        } else {
            v
        }
    };
    for cand in [raw, axis, edge] {
        let p = project(cand);
        if p.norm() > 1e-8 * scale.max(cand.norm()) {
            let mut u = p.normalize();
            if mesh.dim() == 2 {
                // one more projection to kill rounding drift
                let n = mesh.triangle_normal(e);
                u = (u - n * n.dot(&u)).normalize();
            }
            return u;
        }
    }
    unreachable!("a non-degenerate element always has an in-plane edge")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Icosphere,
    EllipsoidShell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub kind: GeometryKind,
    /// Semi-axes (mm). An icosphere uses the first entry as its radius.
    pub radii: [f64; 3],
    /// Recursive-subdivision level; the face split frequency is `2^level`.
    #[serde(default)]
    pub subdivision: u32,
    /// Explicit face split frequency, overrides `subdivision` when set.
    #[serde(default)]
    pub frequency: Option<usize>,
    #[serde(default = "default_fiber_rule")]
    pub fiber_rule: FiberRule,
}

fn default_fiber_rule() -> FiberRule {
    FiberRule::Azimuthal
}

impl GeometryParams {
    pub fn icosphere(radius: f64, level: u32) -> Self {
        GeometryParams {
            kind: GeometryKind::Icosphere,
            radii: [radius; 3],
            subdivision: level,
            frequency: None,
            fiber_rule: FiberRule::Azimuthal,
        }
    }

    pub fn ellipsoid(radii: [f64; 3], level: u32) -> Self {
        GeometryParams {
            kind: GeometryKind::EllipsoidShell,
            radii,
            subdivision: level,
            frequency: None,
            fiber_rule: FiberRule::Azimuthal,
        }
    }

    pub fn frequency(&self) -> usize {
        self.frequency.unwrap_or(1usize << self.subdivision)
    }
}

/// Watertight triangulated sphere or ellipsoid with fibers from the rule.
pub fn generate_synthetic_geometry(params: &GeometryParams) -> Result<SimplicialMesh> {
    let radii = match params.kind {
        GeometryKind::Icosphere => [params.radii[0]; 3],
        GeometryKind::EllipsoidShell => params.radii,
    };
    if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(format!("radii must be positive, got {radii:?}")));
    }
    if params.subdivision > 10 {
        return Err(Error::InvalidParameter(format!(
            "subdivision level {} is too large",
            params.subdivision
        )));
    }
    let freq = params.frequency();
    if freq == 0 {
        return Err(Error::InvalidParameter("frequency must be at least 1".into()));
    }
    let (unit, tris) = unit_geodesic_sphere(freq);
    let vertices = unit
        .iter()
        .map(|p| Point::new(p.x * radii[0], p.y * radii[1], p.z * radii[2]))
        .collect();
    let mesh = SimplicialMesh::new(vertices, tris, 2, None)?;
    match params.fiber_rule {
        FiberRule::Azimuthal => Ok(mesh),
        rule => mesh.with_fiber_rule(rule),
    }
}

/// Geodesic sphere of radius `radius` from an icosahedron with each face
/// split `frequency` times per edge: `10 f^2 + 2` vertices, `20 f^2` faces.
pub fn geodesic_sphere(radius: f64, frequency: usize) -> Result<SimplicialMesh> {
    generate_synthetic_geometry(&GeometryParams {
        kind: GeometryKind::Icosphere,
        radii: [radius; 3],
        subdivision: 0,
        frequency: Some(frequency),
        fiber_rule: FiberRule::Azimuthal,
    })
}

fn icosahedron() -> (Vec<Point>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v = Vec::with_capacity(12);
    for &a in &[-1.0, 1.0] {
        for &b in &[-phi, phi] {
            v.push(Point::new(0.0, a, b));
            v.push(Point::new(a, b, 0.0));
            v.push(Point::new(b, 0.0, a));
        }
    }
    // Faces are exactly the vertex triples at mutual distance 2.
    let mut faces = Vec::with_capacity(20);
    let is_edge = |i: usize, j: usize| ((v[i] - v[j]).norm() - 2.0).abs() < 1e-9;
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                if is_edge(i, j) && is_edge(j, k) && is_edge(i, k) {
                    let n = (v[j] - v[i]).cross(&(v[k] - v[i]));
                    if n.dot(&(v[i] + v[j] + v[k])) > 0.0 {
                        faces.push([i, j, k]);
                    } else {
                        faces.push([i, k, j]);
                    }
                }
            }
        }
    }
    debug_assert_eq!(faces.len(), 20);
    (v, faces)
}

fn unit_geodesic_sphere(freq: usize) -> (Vec<Point>, Vec<usize>) {
    let (ico, faces) = icosahedron();
    let mut ids: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut verts: Vec<Point> = Vec::new();
    let mut tris = Vec::with_capacity(20 * freq * freq * 3);

    for face in &faces {
        // grid[i][j] -> vertex id for barycentric weights (f-i-j, i, j)
        let mut grid = vec![vec![0usize; freq + 1]; freq + 1];
        for i in 0..=freq {
            for j in 0..=freq - i {
                let w = [freq - i - j, i, j];
                let mut key: Vec<(usize, usize)> = face
                    .iter()
                    .zip(w)
                    .filter(|(_, wi)| *wi > 0)
                    .map(|(&vid, wi)| (vid, wi))
                    .collect();
                key.sort_unstable();
                let id = *ids.entry(key).or_insert_with(|| {
                    let p = (ico[face[0]] * w[0] as f64
                        + ico[face[1]] * w[1] as f64
                        + ico[face[2]] * w[2] as f64)
                        / freq as f64;
                    verts.push(p.normalize());
                    verts.len() - 1
                });
                grid[i][j] = id;
            }
        }
        for i in 0..freq {
            for j in 0..freq - i {
                tris.extend_from_slice(&[grid[i][j], grid[i + 1][j], grid[i][j + 1]]);
                if i + j + 1 < freq {
                    tris.extend_from_slice(&[grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
                }
            }
        }
    }
    (verts, tris)
}

/// Diagonal layout of the flat sheet triangulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SheetPattern {
    /// Every quad split along the same diagonal.
    Uniform,
    /// Diagonals alternate in a checkerboard ("union jack" without centres).
    Alternating,
    /// Rows shifted by half a cell, giving near-equilateral triangles.
    Equilateral,
}

/// Flat rectangular sheet `[0, width] x [0, height]` in the z = 0 plane with
/// `nx x ny` cells. Fibers default to the x axis.
pub fn planar_sheet(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    pattern: SheetPattern,
) -> Result<SimplicialMesh> {
    if nx == 0 || ny == 0 || !(width > 0.0) || !(height > 0.0) {
        return Err(Error::InvalidParameter("sheet needs positive size and cell counts".into()));
    }
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    let mut verts = Vec::new();
    let mut cells = Vec::new();
    match pattern {
        SheetPattern::Uniform | SheetPattern::Alternating => {
            for j in 0..=ny {
                for i in 0..=nx {
                    verts.push(Point::new(i as f64 * dx, j as f64 * dy, 0.0));
                }
            }
            let id = |i: usize, j: usize| j * (nx + 1) + i;
            for j in 0..ny {
                for i in 0..nx {
                    let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    if pattern == SheetPattern::Alternating && (i + j) % 2 == 1 {
                        cells.extend_from_slice(&[a, b, d, b, c, d]);
                    } else {
                        cells.extend_from_slice(&[a, b, c, a, c, d]);
                    }
                }
            }
        }
        SheetPattern::Equilateral => {
            // Odd rows carry an extra vertex so both borders stay straight.
            let mut rows: Vec<Vec<usize>> = Vec::with_capacity(ny + 1);
            for j in 0..=ny {
                let y = j as f64 * dy;
                let mut row = Vec::new();
                if j % 2 == 0 {
                    for i in 0..=nx {
                        row.push(verts.len());
                        verts.push(Point::new(i as f64 * dx, y, 0.0));
                    }
                } else {
                    row.push(verts.len());
                    verts.push(Point::new(0.0, y, 0.0));
                    for i in 0..nx {
                        row.push(verts.len());
                        verts.push(Point::new((i as f64 + 0.5) * dx, y, 0.0));
                    }
                    row.push(verts.len());
                    verts.push(Point::new(width, y, 0.0));
                }
                rows.push(row);
            }
            for j in 0..ny {
                let (even, odd) = if j % 2 == 0 {
                    (&rows[j], &rows[j + 1])
                } else {
                    (&rows[j + 1], &rows[j])
                };
                // even row: nx+1 points at i*dx; odd row: 0, (i+.5)dx, width
                for i in 0..nx {
                    // triangle pointing at the odd row between even[i], even[i+1]
                    let t = [even[i], even[i + 1], odd[i + 1]];
                    push_ccw(&verts, &mut cells, t);
                    // triangles between odd[i], odd[i+1] and even[i]
                    let t = [odd[i], odd[i + 1], even[i]];
                    push_ccw(&verts, &mut cells, t);
                }
                let t = [odd[nx], odd[nx + 1], even[nx]];
                push_ccw(&verts, &mut cells, t);
            }
        }
    }
    let n_el = cells.len() / 3;
    SimplicialMesh::new(verts, cells, 2, Some(vec![Vector3::x(); n_el]))
}

fn push_ccw(verts: &[Point], cells: &mut Vec<usize>, t: [usize; 3]) {
    let n = (verts[t[1]] - verts[t[0]]).cross(&(verts[t[2]] - verts[t[0]]));
    if n.z >= 0.0 {
        cells.extend_from_slice(&t);
    } else {
        cells.extend_from_slice(&[t[0], t[2], t[1]]);
    }
}
