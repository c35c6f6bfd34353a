use super::{norm, Point3, TriangleMesh};

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn normalized(p: Point3) -> Point3 {
    let n = norm(p);
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Unit-radius icosphere: an icosahedron refined `subdivisions` times, each
/// round projecting the new midpoints back onto the sphere.
///
/// Has `10 * 4^s + 2` vertices; winding is outward.
pub fn icosphere(subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .map(normalized)
    .to_vec();
    let mut mesh = TriangleMesh::new(vertices, ICOSAHEDRON_FACES.to_vec()).expect("icosahedron is valid");
    for _ in 0..subdivisions {
        mesh = mesh.subdivide().mesh.map_vertices(normalized);
    }
    mesh
}

/// Radially projects every vertex of a mesh surrounding the origin onto the
/// superquadric `|x/a|^p + |y/b|^p + |z/c|^p = 1`.
///
/// `p = 2` gives an ellipsoid; larger exponents approach the box with
/// half-extents `semi_axes`.
pub fn superquadric(sphere: &TriangleMesh, semi_axes: Point3, exponent: f64) -> TriangleMesh {
    sphere.map_vertices(|v| {
        let s: f64 = (0..3).map(|k| (v[k] / semi_axes[k]).abs().powf(exponent)).sum();
        let scale = s.powf(-1.0 / exponent);
        [v[0] * scale, v[1] * scale, v[2] * scale]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_radius() {
        for (s, v) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let m = icosphere(s);
            assert_eq!(m.vertex_count(), v);
            assert_eq!(m.face_count(), 20 * 4usize.pow(s as u32));
            assert_eq!(m.euler_characteristic(), 2);
            assert!(m.is_watertight());
            assert!(m.vertices().iter().all(|&p| (norm(p) - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn icosphere_winds_outward() {
        let m = icosphere(2);
        // 4π/3 in the limit; an inscribed polyhedron is slightly smaller
        let v = m.signed_volume();
        assert!(v > 4.0 && v < 4.0 * std::f64::consts::PI / 3.0, "{v}");
    }

    #[test]
    fn superquadric_satisfies_its_equation() {
        let m = superquadric(&icosphere(2), [1.0, 0.5, 0.25], 4.0);
        for p in m.vertices() {
            let s = (p[0] / 1.0).abs().powi(4) + (p[1] / 0.5).abs().powi(4) + (p[2] / 0.25).abs().powi(4);
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (lo, hi) = m.bounds().unwrap();
        assert!((hi[0] - 1.0).abs() < 1e-12 && (lo[2] + 0.25).abs() < 1e-12);
    }
}
