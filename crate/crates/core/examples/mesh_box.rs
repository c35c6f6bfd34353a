//! Fits an oriented box to a point cloud, meshes it, and prints the OBJ.
//!
//! ```text
//! cargo run --example mesh_box -- [subdivisions]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdnet::mesh::{fit_obb, mesh_cuboid, obj};

fn main() -> stdnet::Result<()> {
    let subdivisions = std::env::args().nth(1).map_or(0, |s| s.parse().expect("subdivisions"));

    // a slab stretched along (1, 1, 0)
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<[f64; 3]> = (0..500)
        .map(|_| {
            let (a, b, c) = (rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.1..0.1));
            [a + b, a - b, c]
        })
        .collect();
    let obb = fit_obb(&points)?;
    eprintln!("center {:?}", obb.center());
    eprintln!("axes {:?}", obb.axes());
    eprintln!("half extents {:?}", obb.extents());

    let mesh = mesh_cuboid(&obb, subdivisions);
    eprintln!(
        "{} vertices, {} faces, watertight: {}",
        mesh.vertex_count(),
        mesh.face_count(),
        mesh.is_watertight()
    );
    print!("{}", obj::to_string(&mesh));
    Ok(())
}
