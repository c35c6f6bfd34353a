//! Triangle meshes, oriented boxes and the operators derived from mesh
//! connectivity.

mod adjacency;
mod obb;
pub mod obj;
mod shapes;

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use adjacency::{AdjacencyOperator, Normalization};

pub use obb::{fit_obb, mesh_cuboid, mesh_structure, ObbNode, OBB_EXTENT_FLOOR};
pub use shapes::{icosphere, superquadric};

pub type Point3 = [f64; 3];

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

/// Indexed triangle mesh with its derived edge set and vertex neighborhoods.
///
/// Edges are stored as `(min, max)` pairs sorted lexicographically, so every
/// operator built from them is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} {f:?} references a vertex >= {n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} {f:?} repeats a vertex")));
            }
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }

        let mut edges: Vec<[usize; 2]> = faces
            .iter()
            .flat_map(|&[a, b, c]| [[a, b], [b, c], [c, a]])
            .map(|[a, b]| [a.min(b), a.max(b)])
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for &[a, b] in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        Ok(Self {
            vertices,
            faces,
            edges,
            neighbors,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Sorted neighbor set N(p).
    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.neighbors[p]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    /// Positions as an `n x 3` matrix.
    pub fn vertex_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.vertices.len(), 3), |(i, j)| self.vertices[i][j])
    }

    pub fn with_vertex_matrix(&self, m: &Array2<f64>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::Dimension {
                op: "with_vertex_matrix",
                left: m.dim(),
                right: (self.vertices.len(), 3),
            });
        }
        let verts = m.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
        self.with_vertices(verts)
    }

    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Concatenates meshes into one (disconnected) mesh.
    pub fn merge(meshes: &[TriangleMesh]) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in meshes {
            let offset = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(
                m.faces
                    .iter()
                    .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
            );
        }
        Self::new(vertices, faces)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Volume enclosed by a closed mesh, positive when faces wind outward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    /// Closed 2-manifold check: every edge borders exactly two faces, with
    /// opposite orientations.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(usize, usize), i32> = HashMap::new();
        for &[a, b, c] in &self.faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *directed.entry((u, v)).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(u, v), &count)| count == 1 && directed.get(&(v, u)) == Some(&1))
    }

    /// One round of 1-to-4 midpoint subdivision.
    pub fn subdivide(&self) -> Subdivision {
        Subdivision::new(self)
    }

    pub fn subdivide_n(&self, rounds: usize) -> TriangleMesh {
        (0..rounds).fold(self.clone(), |m, _| m.subdivide().mesh)
    }

    pub fn edge_difference_operator(&self) -> SparseMatrix {
        edge_difference_operator(self.vertices.len(), &self.edges)
    }

    pub fn laplacian_operator(&self) -> SparseMatrix {
        laplacian_operator(self.vertices.len(), &self.edges)
    }
}

/// Sparse `|E| x n` matrix whose rows are `p_a - p_b` for each edge `(a, b)`.
pub fn edge_difference_operator(n: usize, edges: &[[usize; 2]]) -> SparseMatrix {
    let triplets: Vec<_> = edges
        .iter()
        .enumerate()
        .flat_map(|(e, &[a, b])| [(e, a, 1.0), (e, b, -1.0)])
        .collect();
    SparseMatrix::from_triplets(edges.len(), n, &triplets)
}

/// Sparse `n x n` matrix mapping positions to Laplacian coordinates
/// `p - mean(N(p))` over the graph given by `edges`. Rows of isolated vertices
/// are empty.
pub fn laplacian_operator(n: usize, edges: &[[usize; 2]]) -> SparseMatrix {
    let mut neighbors = vec![Vec::new(); n];
    for &[a, b] in edges {
        if a != b {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    let mut triplets = Vec::new();
    for (p, nbrs) in neighbors.iter_mut().enumerate() {
        nbrs.sort_unstable();
        nbrs.dedup();
        if nbrs.is_empty() {
            continue;
        }
        triplets.push((p, p, 1.0));
        let w = 1.0 / nbrs.len() as f64;
        triplets.extend(nbrs.iter().map(|&q| (p, q, -w)));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Result of midpoint subdivision: the refined mesh plus the linear map that
/// carries per-vertex data from the coarse to the refined mesh.
///
/// Original vertices keep their indices; the vertex for edge `e` is `n + e`.
#[derive(Debug, Clone)]
pub struct Subdivision {
    pub mesh: TriangleMesh,
    pub operator: SparseMatrix,
}

impl Subdivision {
    fn new(coarse: &TriangleMesh) -> Self {
        let n = coarse.vertex_count();
        let edge_index: HashMap<[usize; 2], usize> = coarse
            .edges
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, n + i))
            .collect();
        let mid = |a: usize, b: usize| edge_index[&[a.min(b), a.max(b)]];

        let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        for (e, &[a, b]) in coarse.edges.iter().enumerate() {
            triplets.push((n + e, a, 0.5));
            triplets.push((n + e, b, 0.5));
        }
        let total = n + coarse.edges.len();
        let operator = SparseMatrix::from_triplets(total, n, &triplets);
        // positions go through the operator so they match the tape's unpooling bit for bit
        let vertices: Vec<Point3> = operator
            .mul_dense(coarse.vertex_matrix().view())
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();

        let mut faces = Vec::with_capacity(coarse.faces.len() * 4);
        for &[a, b, c] in &coarse.faces {
            let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
            faces.push([a, ab, ca]);
            faces.push([ab, b, bc]);
            faces.push([ca, bc, c]);
            faces.push([ab, bc, ca]);
        }

        let mesh = TriangleMesh::new(vertices, faces).expect("subdivision of a valid mesh is valid");
        Subdivision { mesh, operator }
    }
}


#[cfg(test)]
mod tests {
    use super::test_meshes::*;
    use super::*;

    #[test]
    fn rejects_bad_faces() {
        let v = vec![[0.0; 3]; 3];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn edges_are_sorted_unique_pairs() {
        let m = tetrahedron();
        assert_eq!(
            m.edges(),
            &[[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
        );
        for p in 0..4 {
            for &q in m.neighbors(p) {
                assert!(m.neighbors(q).contains(&p));
            }
        }
    }

    #[test]
    fn triangle_subdivides_into_four() {
        let s = triangle().subdivide();
        assert_eq!(s.mesh.vertex_count(), 6);
        assert_eq!(s.mesh.face_count(), 4);
        assert_eq!(s.mesh.vertices()[3], [0.5, 0.0, 0.0]);
        assert!((s.mesh.surface_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn subdivision_preserves_euler_and_closure() {
        let m = tetrahedron();
        assert!(m.is_watertight());
        let s = m.subdivide().mesh;
        assert_eq!(s.vertex_count(), 4 + 6);
        assert_eq!(s.face_count(), 16);
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.is_watertight());
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        assert!(!triangle().is_watertight());
    }

    #[test]
    fn laplacian_of_path_center() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let delta = m.laplacian_operator().mul_dense(m.vertex_matrix().view());
        // vertex 0 sits at the mean of its neighbours
        assert_eq!(delta.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }
}
