//! Trains a small network on the two-box chair fixture and writes the
//! three block outputs as OBJ files.
//!
//! ```text
//! cargo run --release --example deform_chair -- <out-dir> [iterations]
//! ```

use std::path::PathBuf;

use stdnet::mesh::obj;
use stdnet::tagcn::DeformationNetwork;
use stdnet::train::{make_fixtures, train, TrainConfig};

fn main() -> stdnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "chair-out".into()));
    let iterations = args.next().map_or(200, |s| s.parse().expect("iterations"));

    let config = TrainConfig {
        iterations,
        channels: 64,
        layers_per_block: 6,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let pairs = make_fixtures("two-box-chair", 0)?;
    let net = DeformationNetwork::new(config.network_config())?;
    let outcome = train(net, &pairs, &config)?;
    println!(
        "chamfer {:.4} -> {:.4} (best at iteration {})",
        outcome.initial_val_cd(),
        outcome.best_val_cd,
        outcome.best_iteration
    );

    std::fs::create_dir_all(&out)?;
    let meshes = outcome.best.deform(&pairs[0].source.mesh())?;
    for (i, mesh) in meshes.iter().enumerate() {
        let path = out.join(format!("chair.block{}.obj", i + 1));
        std::fs::write(&path, obj::to_string(mesh))?;
        println!("{} ({} vertices)", path.display(), mesh.vertex_count());
    }
    std::fs::write(out.join("chair.target.obj"), obj::to_string(&pairs[0].target))?;
    Ok(())
}
