use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{cross, dot, Point3, TriangleMesh};
use crate::error::{Error, Result};

/// Smallest half-extent a fitted box may have.
pub const OBB_EXTENT_FLOOR: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Oriented bounding box, optionally grouping child boxes.
///
/// `axes[i]` is the unit direction of the box's `i`-th local axis and
/// `extents[i]` the half-length along it. Leaves carry geometry; internal
/// nodes only group their children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObbJson", into = "ObbJson")]
pub struct ObbNode {
    center: Point3,
    axes: [Point3; 3],
    extents: Point3,
    children: Vec<ObbNode>,
}

#[derive(Serialize, Deserialize)]
struct ObbJson {
    center: [f64; 3],
    axes: [f64; 9],
    extents: [f64; 3],
    #[serde(default)]
    children: Vec<ObbNode>,
}

impl TryFrom<ObbJson> for ObbNode {
    type Error = Error;

    fn try_from(raw: ObbJson) -> Result<Self> {
        let a = raw.axes;
        let node = ObbNode::new(
            raw.center,
            [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
            raw.extents,
        )?;
        Ok(node.with_children(raw.children))
    }
}

impl From<ObbNode> for ObbJson {
    fn from(node: ObbNode) -> Self {
        let [r0, r1, r2] = node.axes;
        ObbJson {
            center: node.center,
            axes: [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]],
            extents: node.extents,
            children: node.children,
        }
    }
}

impl ObbNode {
    pub fn new(center: Point3, axes: [Point3; 3], extents: Point3) -> Result<Self> {
        if center.iter().chain(axes.iter().flatten()).chain(&extents).any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox("non-finite component".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot(axes[i], axes[j]) - expected).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidBox(format!("axes not orthonormal: {axes:?}")));
                }
            }
        }
        if extents.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidBox(format!("extents must be positive: {extents:?}")));
        }
        Ok(Self {
            center,
            axes,
            extents,
            children: Vec::new(),
        })
    }

    pub fn axis_aligned(center: Point3, extents: Point3) -> Result<Self> {
        Self::new(
            center,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            extents,
        )
    }

    /// Builds a grouping node: its own box is the axis-aligned hull of the
    /// children's corners.
    pub fn group(children: Vec<ObbNode>) -> Result<Self> {
        let corners: Vec<Point3> = children.iter().flat_map(|c| c.leaf_corners()).collect();
        if corners.is_empty() {
            return Err(Error::EmptyInput("group with no children"));
        }
        let mut lo = corners[0];
        let mut hi = corners[0];
        for c in &corners {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
        let extents = [0, 1, 2].map(|k| (0.5 * (hi[k] - lo[k])).max(OBB_EXTENT_FLOOR));
        Ok(Self::axis_aligned(center, extents)?.with_children(children))
    }

    pub fn with_children(mut self, children: Vec<ObbNode>) -> Self {
        self.children = children;
        self
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn axes(&self) -> [Point3; 3] {
        self.axes
    }

    pub fn extents(&self) -> Point3 {
        self.extents
    }

    pub fn children(&self) -> &[ObbNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&ObbNode> {
        if self.is_leaf() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    /// Maps box-local coordinates in `[-1, 1]^3` to world space.
    pub fn to_world(&self, local: Point3) -> Point3 {
        let mut p = self.center;
        for i in 0..3 {
            let s = local[i] * self.extents[i];
            for k in 0..3 {
                p[k] += s * self.axes[i][k];
            }
        }
        p
    }

    /// Whether `p` lies in the box grown by `margin` along every axis.
    pub fn contains(&self, p: Point3, margin: f64) -> bool {
        let d = super::sub(p, self.center);
        (0..3).all(|i| dot(d, self.axes[i]).abs() <= self.extents[i] + margin)
    }

    fn leaf_corners(&self) -> Vec<Point3> {
        self.leaves()
            .into_iter()
            .flat_map(|leaf| (0..8).map(move |bits| leaf.to_world(corner_local(bits))))
            .collect()
    }
}

fn corner_local(bits: usize) -> Point3 {
    [0, 1, 2].map(|k| if bits >> k & 1 == 1 { 1.0 } else { -1.0 })
}

/// Closed triangulated surface of a box, refined by `subdivisions` rounds of
/// midpoint subdivision.
///
/// Each rectangular face is split along a fixed diagonal; winding is
/// counter-clockwise seen from outside.
pub fn mesh_cuboid(node: &ObbNode, subdivisions: usize) -> TriangleMesh {
    let vertices: Vec<Point3> = (0..8).map(corner_local).collect();
    let index = |p: [f64; 3]| -> usize {
        (0..3).map(|k| usize::from(p[k] > 0.0) << k).sum()
    };
    let mut faces = Vec::with_capacity(12);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [-1.0, 1.0] {
            // counter-clockwise around +axis in the (u, v) plane
            let quad = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(su, sv)| {
                let mut p = [0.0; 3];
                p[axis] = side;
                p[u] = su;
                p[v] = sv;
                index(p)
            });
            let [a, b, c, d] = quad;
            if side > 0.0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, c, b]);
                faces.push([a, d, c]);
            }
        }
    }
    let unit = TriangleMesh::new(vertices, faces).expect("cube tessellation is valid");
    unit.subdivide_n(subdivisions)
        .map_vertices(|p| node.to_world(p))
}

/// Meshes every leaf box of a structure tree and concatenates the results.
pub fn mesh_structure(tree: &ObbNode, subdivisions: usize) -> TriangleMesh {
    let parts: Vec<TriangleMesh> = tree
        .leaves()
        .into_iter()
        .map(|leaf| mesh_cuboid(leaf, subdivisions))
        .collect();
    TriangleMesh::merge(&parts).expect("merged box meshes are valid")
}

/// Oriented bounding box from the principal axes of the point covariance.
///
/// Eigenvalue ties keep axis index order; every half-extent is at least
/// [`OBB_EXTENT_FLOOR`].
pub fn fit_obb(points: &[Point3]) -> Result<ObbNode> {
    if points.is_empty() {
        return Err(Error::EmptyInput("fit_obb needs at least one point"));
    }
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + Vector3::from(*p))
        / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut axes = [[0.0; 3]; 3];
    for (slot, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col).normalize();
        let mut axis = [v[0], v[1], v[2]];
        // sign convention: largest-magnitude component positive
        let lead = (0..3)
            .max_by(|&a, &b| axis[a].abs().partial_cmp(&axis[b].abs()).unwrap())
            .unwrap();
        if axis[lead] < 0.0 {
            axis = axis.map(|c| -c);
        }
        axes[slot] = axis;
    }
    axes[2] = cross(axes[0], axes[1]);
    // re-orthonormalize against accumulated roundoff
    let n2 = dot(axes[2], axes[2]).sqrt();
    axes[2] = axes[2].map(|c| c / n2);
    let dot01 = dot(axes[0], axes[1]);
    axes[1] = [0, 1, 2].map(|k| axes[1][k] - dot01 * axes[0][k]);
    let n1 = dot(axes[1], axes[1]).sqrt();
    axes[1] = axes[1].map(|c| c / n1);

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for i in 0..3 {
            let s = dot(*p, axes[i]);
            lo[i] = lo[i].min(s);
            hi[i] = hi[i].max(s);
        }
    }
    let mut center = [0.0; 3];
    for i in 0..3 {
        let mid = 0.5 * (lo[i] + hi[i]);
        for k in 0..3 {
            center[k] += mid * axes[i][k];
        }
    }
    let extents = [0, 1, 2].map(|i| (0.5 * (hi[i] - lo[i])).max(OBB_EXTENT_FLOOR));
    ObbNode::new(center, axes, extents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> ObbNode {
        ObbNode::axis_aligned([0.0; 3], [0.5; 3]).unwrap()
    }

    #[test]
    fn cube_counts() {
        let m = mesh_cuboid(&unit_cube(), 0);
        assert_eq!((m.vertex_count(), m.face_count()), (8, 12));
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_watertight());
        let m1 = mesh_cuboid(&unit_cube(), 1);
        assert_eq!((m1.vertex_count(), m1.face_count()), (26, 48));
    }

    #[test]
    fn cube_corners_at_half() {
        let m = mesh_cuboid(&unit_cube(), 0);
        for v in m.vertices() {
            assert!(v.iter().all(|&c| c == 0.5 || c == -0.5));
        }
    }

    #[test]
    fn cube_normals_point_outward() {
        let node = ObbNode::new(
            [1.0, 2.0, 3.0],
            [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            [0.3, 0.7, 1.1],
        )
        .unwrap();
        let m = mesh_cuboid(&node, 1);
        for f in m.faces() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            let normal = cross(super::super::sub(b, a), super::super::sub(c, a));
            let centroid = [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / 3.0);
            assert!(dot(normal, super::super::sub(centroid, node.center())) > 0.0);
        }
        assert!((m.surface_area() - 8.0 * (0.3 * 0.7 + 0.7 * 1.1 + 0.3 * 1.1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_boxes() {
        assert!(ObbNode::axis_aligned([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(ObbNode::new([0.0; 3], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [1.0; 3]).is_err());
    }

    #[test]
    fn fit_unit_cube_corners() {
        let pts: Vec<Point3> = (0..8)
            .map(|b| [0, 1, 2].map(|k| f64::from(b >> k & 1)))
            .collect();
        let obb = fit_obb(&pts).unwrap();
        for k in 0..3 {
            assert!((obb.center()[k] - 0.5).abs() < 1e-12);
            assert!((obb.extents()[k] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_segment_floors_minor_extents() {
        let pts = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let obb = fit_obb(&pts).unwrap();
        assert!((obb.extents()[0] - 0.5).abs() < 1e-12);
        assert!((obb.axes()[0][0].abs() - 1.0).abs() < 1e-12);
        assert_eq!(obb.extents()[1], OBB_EXTENT_FLOOR);
        assert_eq!(obb.extents()[2], OBB_EXTENT_FLOOR);
    }

    #[test]
    fn fit_single_point() {
        let obb = fit_obb(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(obb.center(), [1.0, -2.0, 3.0]);
        assert_eq!(obb.extents(), [OBB_EXTENT_FLOOR; 3]);
    }

    #[test]
    fn fit_empty_is_error() {
        assert!(matches!(fit_obb(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn json_layout() {
        let tree = ObbNode::group(vec![unit_cube(), ObbNode::axis_aligned([0.0, 2.0, 0.0], [0.5; 3]).unwrap()]).unwrap();
        let json = serde_json::to_value(&tree).unwrap();
        assert_eq!(json["axes"].as_array().unwrap().len(), 9);
        assert_eq!(json["children"].as_array().unwrap().len(), 2);
        let back: ObbNode = serde_json::from_value(json).unwrap();
        assert_eq!(back, tree);
        assert_eq!(mesh_structure(&back, 0).vertex_count(), 16);
    }

    #[test]
    fn json_rejects_bad_axes() {
        let raw = r#"{"center":[0,0,0],"axes":[1,0,0,1,0,0,0,0,1],"extents":[1,1,1],"children":[]}"#;
        assert!(serde_json::from_str::<ObbNode>(raw).is_err());
    }
}
