//! Area-weighted surface sampling: face frequencies on a two-triangle
//! mesh with a 1:3 area ratio and the sample mean of a single triangle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdnet::losses::{draw_samples, sample_points};
use stdnet::mesh::TriangleMesh;

fn main() -> stdnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let strip = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]],
        vec![[0, 1, 2], [1, 3, 4]],
    )?;
    println!("face areas {:.3} {:.3}", strip.face_area(0), strip.face_area(1));
    let draws = draw_samples(&strip, 100_000, &mut rng)?;
    let first = draws.iter().filter(|o| o.face == 0).count();
    println!(
        "face 0 drawn {first} times, face 1 drawn {} times (ratio {:.3})",
        draws.len() - first,
        (draws.len() - first) as f64 / first as f64
    );

    let tri = TriangleMesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 1.0]], vec![[0, 1, 2]])?;
    let pts = sample_points(&tri, 50_000, &mut rng)?;
    let mean = pts.mean_axis(ndarray::Axis(0)).expect("non-empty");
    println!("sample mean {:.4} {:.4} {:.4}, centroid 0.6667 0.3333 0.3333", mean[0], mean[1], mean[2]);
    Ok(())
}
