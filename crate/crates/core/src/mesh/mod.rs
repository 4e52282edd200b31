//! Simplicial meshes embedded in 3D.
//!
//! A [`SimplicialMesh`] holds vertices, triangles (d = 2) or tetrahedra
//! (d = 3), and one unit fiber direction per element. Meshes are validated on
//! construction and immutable afterwards.

mod coarsen;
mod generate;
mod io;
mod locate;

pub use coarsen::coarsen_mesh;
pub use generate::{
    generate_synthetic_geometry, geodesic_sphere, planar_sheet, FiberRule, GeometryKind,
    GeometryParams, SheetPattern,
};
pub use io::{load_fibers, load_mesh, save_fibers, save_mesh, save_mesh_titled, save_vtk_point_data, MeshFormat};
pub use locate::NodeLocator;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::{Error, Result};

pub type Point = Vector3<f64>;

/// Tolerance on fiber unit norm.
pub const FIBER_NORM_TOL: f64 = 1e-9;
/// Maximum angle (rad) between a surface fiber and its triangle plane.
pub const FIBER_PLANE_TOL: f64 = 1e-6;

/// Index of a mesh vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplicialMesh {
    vertices: Vec<Point>,
    /// Flat connectivity, `dim + 1` indices per simplex.
    cells: Vec<usize>,
    dim: usize,
    fibers: Vec<Vector3<f64>>,
}

impl SimplicialMesh {
    /// Builds and validates a mesh. `cells` is flat with `dim + 1` entries per
    /// simplex. Missing fibers are filled with the azimuthal default rule.
    pub fn new(
        vertices: Vec<Point>,
        cells: Vec<usize>,
        dim: usize,
        fibers: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("unsupported dimension {dim}")));
        }
        let per = dim + 1;
        if cells.is_empty() || cells.len() % per != 0 {
            return Err(Error::InvalidMesh(format!(
                "connectivity length {} is not a positive multiple of {per}",
                cells.len()
            )));
        }
        let mut mesh = SimplicialMesh {
            vertices,
            cells,
            dim,
            fibers: Vec::new(),
        };
        mesh.check_topology()?;
        match fibers {
            Some(f) => {
                if f.len() != mesh.num_elements() {
                    return Err(Error::InvalidMesh(format!(
                        "{} fibers for {} elements",
                        f.len(),
                        mesh.num_elements()
                    )));
                }
                mesh.fibers = f;
            }
            None => mesh.fibers = FiberRule::Azimuthal.apply(&mesh),
        }
        mesh.check_fibers()?;
        Ok(mesh)
    }

    /// Same geometry with a new fiber field (validated).
    pub fn with_fibers(&self, fibers: Vec<Vector3<f64>>) -> Result<Self> {
        SimplicialMesh::new(self.vertices.clone(), self.cells.clone(), self.dim, Some(fibers))
    }

    /// Same geometry with fibers regenerated from `rule`.
    pub fn with_fiber_rule(&self, rule: FiberRule) -> Result<Self> {
        let fibers = rule.apply(self);
        self.with_fibers(fibers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, node: NodeId) -> Point {
        self.vertices[node.0]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let per = self.dim + 1;
        &self.cells[e * per..(e + 1) * per]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn cells_flat(&self) -> &[usize] {
        &self.cells
    }

    pub fn fibers(&self) -> &[Vector3<f64>] {
        &self.fibers
    }

    pub fn fiber(&self, e: usize) -> Vector3<f64> {
        self.fibers[e]
    }

    pub fn node(&self, index: usize) -> Result<NodeId> {
        if index < self.num_vertices() {
            Ok(NodeId(index))
        } else {
            Err(Error::InvalidParameter(format!(
                "node {index} out of range for mesh with {} vertices",
                self.num_vertices()
            )))
        }
    }

    /// Area (d = 2) or volume (d = 3) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        simplex_measure(&self.element_points(e))
    }

    pub fn element_points(&self, e: usize) -> Vec<Point> {
        self.element(e).iter().map(|&i| self.vertices[i]).collect()
    }

    pub fn element_centroid(&self, e: usize) -> Point {
        let pts = self.element(e);
        pts.iter().map(|&i| self.vertices[i]).sum::<Point>() / pts.len() as f64
    }

    /// Unit normal of triangle `e` (d = 2 only).
    pub fn triangle_normal(&self, e: usize) -> Vector3<f64> {
        let p = self.element(e);
        let (a, b, c) = (self.vertices[p[0]], self.vertices[p[1]], self.vertices[p[2]]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Gradients of the P1 shape functions of element `e`, one per vertex,
    /// together with the element measure.
    pub fn shape_gradients(&self, e: usize) -> (Vec<Vector3<f64>>, f64) {
        p1_gradients(&self.element_points(e))
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_measure(e)).sum()
    }

    /// Elements incident to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vertices()];
        for (e, cell) in self.elements().enumerate() {
            for &v in cell {
                out[v].push(e);
            }
        }
        out
    }

    /// Sorted, deduplicated vertex neighbours along mesh edges.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vertices()];
        for cell in self.elements() {
            for &a in cell {
                for &b in cell {
                    if a != b {
                        out[a].push(b);
                    }
                }
            }
        }
        for n in &mut out {
            n.sort_unstable();
            n.dedup();
        }
        out
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (a, nb) in self.vertex_neighbors().iter().enumerate() {
            edges.extend(nb.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        edges
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Largest Euclidean distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = best.max((a - b).norm_squared());
            }
        }
        best.sqrt()
    }

    pub fn centroid(&self) -> Point {
        self.vertices.iter().sum::<Point>() / self.vertices.len() as f64
    }

    /// Direction of largest spread of the vertex cloud, sign-normalized so
    /// the largest-magnitude component is positive.
    pub fn principal_axis(&self) -> Vector3<f64> {
        let c = self.centroid();
        let mut cov = Matrix3::zeros();
        for v in &self.vertices {
            let d = v - c;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let imax = eig.eigenvalues.imax();
        let mut axis: Vector3<f64> = eig.eigenvectors.column(imax).into_owned();
        if axis[axis.iamax()] < 0.0 {
            axis = -axis;
        }
        axis
    }

    /// Nearest vertex to `point`, ties broken by lowest index.
    pub fn nearest_node(&self, point: &Point) -> NodeId {
        NodeLocator::new(&self.vertices).nearest(point)
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(v) = self.vertices.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} has non-finite coordinates")));
        }
        for (e, cell) in self.elements().enumerate() {
            if let Some(&bad) = cell.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            let pts = self.element_points(e);
            let measure = simplex_measure(&pts);
            let mut longest = 0.0f64;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    longest = longest.max((pts[i] - pts[j]).norm());
                }
            }
            if !(measure > 1e-14 * longest.powi(self.dim as i32)) {
                return Err(Error::DegenerateElement { element: e, measure });
            }
        }
        let components = count_components(n, self.elements());
        if components != 1 {
            return Err(Error::InvalidMesh(format!(
                "mesh has {components} connected components (vertices unused by any element count as components)"
            )));
        }
        Ok(())
    }

    fn check_fibers(&self) -> Result<()> {
        let max_off_plane = FIBER_PLANE_TOL.sin();
        for (e, f) in self.fibers.iter().enumerate() {
            if (f.norm() - 1.0).abs() > FIBER_NORM_TOL {
                return Err(Error::InvalidMesh(format!(
                    "fiber of element {e} has norm {}",
                    f.norm()
                )));
            }
            if self.dim == 2 && f.dot(&self.triangle_normal(e)).abs() > max_off_plane {
                return Err(Error::InvalidMesh(format!(
                    "fiber of element {e} leaves the triangle plane"
                )));
            }
        }
        Ok(())
    }
}

fn count_components<'a>(n: usize, cells: impl Iterator<Item = &'a [usize]>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for cell in cells {
        let r0 = find(&mut parent, cell[0]);
        for &v in &cell[1..] {
            let r = find(&mut parent, v);
            if r != r0 {
                parent[r] = r0;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Area of a triangle or volume of a tetrahedron.
pub fn simplex_measure(pts: &[Point]) -> f64 {
    match pts.len() {
        3 => 0.5 * (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).norm(),
        4 => (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).dot(&(pts[3] - pts[0])).abs() / 6.0,
        k => panic!("simplex with {k} vertices"),
    }
}

/// P1 shape-function gradients and the simplex measure.
pub fn p1_gradients(pts: &[Point]) -> (Vec<Vector3<f64>>, f64) {
    match pts.len() {
        3 => {
            let n2 = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
            let twice_area = n2.norm();
            let n = n2 / twice_area;
            let grads = (0..3)
                .map(|i| n.cross(&(pts[(i + 2) % 3] - pts[(i + 1) % 3])) / twice_area)
                .collect();
            (grads, 0.5 * twice_area)
        }
        4 => {
            let jac = Matrix3::from_columns(&[pts[1] - pts[0], pts[2] - pts[0], pts[3] - pts[0]]);
            let vol = jac.determinant().abs() / 6.0;
            // Rows of J^{-1} are the gradients of the barycentrics 1..3.
            let inv = jac.try_inverse().unwrap_or_else(Matrix3::zeros);
            let g1: Vector3<f64> = inv.row(0).transpose();
            let g2: Vector3<f64> = inv.row(1).transpose();
            let g3: Vector3<f64> = inv.row(2).transpose();
            (vec![-(g1 + g2 + g3), g1, g2, g3], vol)
        }
        k => panic!("simplex with {k} vertices"),
    }
}
