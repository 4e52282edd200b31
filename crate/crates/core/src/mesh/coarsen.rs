//! Edge-collapse decimation of triangle surfaces.
//!
//! Shortest edges are collapsed to their midpoint until the vertex count has
//! dropped by `factor^2`, which on a quasi-uniform mesh scales the mean edge
//! length by `factor`. A collapse is rejected when it would break the link
//! condition, touch the boundary, flip or squash a triangle, or leave a vertex
//! of valence below three.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::generate::tangent_unit;
use super::{NodeLocator, Point, SimplicialMesh};
use crate::{Error, Result};

const MIN_VERTICES: usize = 8;

pub fn coarsen_mesh(mesh: &SimplicialMesh, target_edge_factor: f64) -> Result<SimplicialMesh> {
    if !(target_edge_factor >= 1.0) || !target_edge_factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target edge factor must be >= 1, got {target_edge_factor}"
        )));
    }
    if mesh.dim() != 2 {
        return Err(Error::InvalidParameter("coarsening supports triangle surfaces only".into()));
    }
    if mesh.num_vertices() < MIN_VERTICES {
        return Err(Error::InvalidMesh(format!(
            "cannot decimate a mesh with {} vertices (minimum {MIN_VERTICES})",
            mesh.num_vertices()
        )));
    }
    if target_edge_factor == 1.0 {
        return Ok(mesh.clone());
    }
    let target = ((mesh.num_vertices() as f64 / (target_edge_factor * target_edge_factor)).round()
        as usize)
        .max(MIN_VERTICES);

    let mut d = Decimator::new(mesh);
    d.run(target);
    if d.alive_vertices < MIN_VERTICES.min(mesh.num_vertices()) {
        return Err(Error::InvalidMesh("decimation collapsed the mesh".into()));
    }
    let (vertices, cells) = d.compact();

    let coarse = SimplicialMesh::new(vertices, cells, 2, None)?;
    // Fibers come from the nearest original element (by centroid).
    let centroids: Vec<Point> = (0..mesh.num_elements()).map(|e| mesh.element_centroid(e)).collect();
    let locator = NodeLocator::new(&centroids);
    let axis = coarse.principal_axis();
    let fibers = (0..coarse.num_elements())
        .map(|e| {
            let src = locator.nearest(&coarse.element_centroid(e)).0;
            tangent_unit(&coarse, e, mesh.fiber(src), axis)
        })
        .collect();
    coarse.with_fibers(fibers)
}

struct Decimator {
    pos: Vec<Point>,
    tris: Vec<[usize; 3]>,
    tri_alive: Vec<bool>,
    vert_alive: Vec<bool>,
    vert_tris: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    alive_vertices: usize,
}

impl Decimator {
    fn new(mesh: &SimplicialMesh) -> Self {
        let tris: Vec<[usize; 3]> = mesh.elements().map(|c| [c[0], c[1], c[2]]).collect();
        let n = mesh.num_vertices();
        let mut vert_tris = vec![Vec::new(); n];
        for (t, tri) in tris.iter().enumerate() {
            for &v in tri {
                vert_tris[v].push(t);
            }
        }
        // Boundary edges belong to exactly one triangle.
        let mut edge_count = std::collections::HashMap::new();
        for tri in &tris {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let mut boundary = vec![false; n];
        for ((a, b), c) in edge_count {
            if c == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        Decimator {
            pos: mesh.vertices().to_vec(),
            tri_alive: vec![true; tris.len()],
            tris,
            vert_alive: vec![true; n],
            vert_tris,
            boundary,
            alive_vertices: n,
        }
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vert_tris[v]
            .iter()
            .filter(|&&t| self.tri_alive[t])
            .flat_map(|&t| self.tris[t])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn push_edges(&self, heap: &mut BinaryHeap<Reverse<(u64, usize, usize)>>, v: usize) {
        for w in self.neighbors(v) {
            let (a, b) = (v.min(w), v.max(w));
            heap.push(Reverse(((self.pos[a] - self.pos[b]).norm().to_bits(), a, b)));
        }
    }

    fn run(&mut self, target: usize) {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            for w in self.neighbors(v) {
                if w > v {
                    heap.push(Reverse(((self.pos[v] - self.pos[w]).norm().to_bits(), v, w)));
                }
            }
        }
        while self.alive_vertices > target {
            let Some(Reverse((len_bits, a, b))) = heap.pop() else { break };
            if !self.vert_alive[a] || !self.vert_alive[b] {
                continue;
            }
            // stale entry: positions moved since it was pushed
            if (self.pos[a] - self.pos[b]).norm().to_bits() != len_bits {
                continue;
            }
            if self.try_collapse(a, b) {
                self.push_edges(&mut heap, a);
            }
        }
    }

    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        if self.boundary[a] || self.boundary[b] || self.alive_vertices <= MIN_VERTICES {
            return false;
        }
        let na = self.neighbors(a);
        if na.binary_search(&b).is_err() {
            return false;
        }
        let nb = self.neighbors(b);
        let shared: Vec<usize> = self.vert_tris[a]
            .iter()
            .filter(|&&t| self.tri_alive[t] && self.tris[t].contains(&b))
            .copied()
            .collect();
        let opposite: Vec<usize> = shared
            .iter()
            .map(|&t| *self.tris[t].iter().find(|&&v| v != a && v != b).unwrap())
            .collect();
        // link condition
        let common: Vec<usize> = na.iter().filter(|v| nb.binary_search(v).is_ok()).copied().collect();
        let mut opp_sorted = opposite.clone();
        opp_sorted.sort_unstable();
        if common != opp_sorted || shared.len() != 2 {
            return false;
        }
        // valence of the opposite vertices drops by one
        if opposite.iter().any(|&o| self.neighbors(o).len() <= 3) {
            return false;
        }
        if na.len() + nb.len() - 4 < 3 {
            return false;
        }

        let p = 0.5 * (self.pos[a] + self.pos[b]);
        for &v in &[a, b] {
            for &t in &self.vert_tris[v] {
                if !self.tri_alive[t] || shared.contains(&t) {
                    continue;
                }
                let tri = self.tris[t];
                let old = tri_normal(&self.pos, tri, None);
                let new = tri_normal(&self.pos, tri, Some((v, p)));
                let (lo, ln) = (old.norm(), new.norm());
                if ln <= 1e-3 * lo || old.dot(&new) <= 0.5 * lo * ln {
                    return false;
                }
                if min_angle_sin(&self.pos, tri, Some((v, p))) < 0.1 {
                    return false;
                }
            }
        }

        for &t in &shared {
            self.tri_alive[t] = false;
        }
        let moved: Vec<usize> = self.vert_tris[b].clone();
        for t in moved {
            if !self.tri_alive[t] {
                continue;
            }
            for v in self.tris[t].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vert_tris[a].push(t);
        }
        self.vert_tris[a].retain(|&t| self.tri_alive[t]);
        self.vert_tris[b].clear();
        self.pos[a] = p;
        self.vert_alive[b] = false;
        self.alive_vertices -= 1;
        true
    }

    fn compact(&self) -> (Vec<Point>, Vec<usize>) {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::with_capacity(self.alive_vertices);
        for (v, &alive) in self.vert_alive.iter().enumerate() {
            if alive {
                remap[v] = vertices.len();
                vertices.push(self.pos[v]);
            }
        }
        let cells = self
            .tris
            .iter()
            .zip(&self.tri_alive)
            .filter(|(_, &alive)| alive)
            .flat_map(|(t, _)| t.iter().map(|&v| remap[v]))
            .collect();
        (vertices, cells)
    }
}

fn corner(pos: &[Point], v: usize, moved: Option<(usize, Point)>) -> Point {
    match moved {
        Some((m, p)) if m == v => p,
        _ => pos[v],
    }
}

fn tri_normal(pos: &[Point], t: [usize; 3], moved: Option<(usize, Point)>) -> Point {
    let [a, b, c] = t.map(|v| corner(pos, v, moved));
    (b - a).cross(&(c - a))
}

/// Smallest sine of the three corner angles.
fn min_angle_sin(pos: &[Point], t: [usize; 3], moved: Option<(usize, Point)>) -> f64 {
    let p = t.map(|v| corner(pos, v, moved));
    let twice_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
    (0..3)
        .map(|k| {
            let e1 = (p[(k + 1) % 3] - p[k]).norm();
            let e2 = (p[(k + 2) % 3] - p[k]).norm();
            twice_area / (e1 * e2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_geometry, GeometryParams};

    #[test]
    fn unit_factor_is_identity() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 2)).unwrap();
        assert_eq!(coarsen_mesh(&m, 1.0).unwrap(), m);
    }

    #[test]
    fn halving_resolution_on_sphere() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 3)).unwrap();
        let c = coarsen_mesh(&m, 2.0).unwrap();
        let ratio = c.num_vertices() as f64 / m.num_vertices() as f64;
        assert!((0.2..=0.35).contains(&ratio), "vertex ratio {ratio}");
        let edge_ratio = c.mean_edge_length() / (2.0 * m.mean_edge_length());
        assert!((edge_ratio - 1.0).abs() <= 0.2, "edge ratio {edge_ratio}");
        // closed surface: Euler characteristic 2
        let chi = c.num_vertices() as i64 - c.edges().len() as i64 + c.num_elements() as i64;
        assert_eq!(chi, 2);
    }

    #[test]
    fn tiny_mesh_is_rejected() {
        // tetrahedral surface, 4 vertices
        let v = vec![
            Point::new(0., 0., 0.),
            Point::new(1., 0., 0.),
            Point::new(0., 1., 0.),
            Point::new(0., 0., 1.),
        ];
        let m = SimplicialMesh::new(v, vec![0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3], 2, None).unwrap();
        assert!(coarsen_mesh(&m, 2.0).is_err());
    }

    #[test]
    fn rejects_factor_below_one() {
        let m = generate_synthetic_geometry(&GeometryParams::icosphere(1.0, 2)).unwrap();
        assert!(coarsen_mesh(&m, 0.5).is_err());
    }
}
