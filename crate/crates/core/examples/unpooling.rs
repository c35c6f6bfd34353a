//! Midpoint unpooling of a meshed cube: vertex, edge and face counts per
//! round and the preserved Euler characteristic.

use stdnet::mesh::{mesh_cuboid, ObbNode};

fn main() -> stdnet::Result<()> {
    let cube = ObbNode::axis_aligned([0.0; 3], [0.5; 3])?;
    let mut mesh = mesh_cuboid(&cube, 0);
    println!("round  V     E     F     V-E+F");
    for round in 0..4 {
        println!(
            "{round:<6} {:<5} {:<5} {:<5} {}",
            mesh.vertex_count(),
            mesh.edge_count(),
            mesh.face_count(),
            mesh.euler_characteristic()
        );
        let next = mesh.subdivide();
        assert_eq!(next.mesh.vertex_count(), mesh.vertex_count() + mesh.edge_count());
        assert_eq!(next.mesh.face_count(), 4 * mesh.face_count());
        mesh = next.mesh;
    }
    Ok(())
}
