//! Trains the default network to deform a cube into a sphere and reports
//! the validation chamfer before and after.
//!
//! ```text
//! cargo run --release --example train_cube_to_sphere -- [iterations] [hops]
//! ```

use std::time::Instant;

use stdnet::tagcn::DeformationNetwork;
use stdnet::train::{make_fixtures, train, TrainConfig};

fn main() -> stdnet::Result<()> {
    env_logger::init();
    let iterations = std::env::args().nth(1).map_or(Ok(2000), |s| s.parse()).expect("iterations");
    let hops = std::env::args().nth(2).map_or(Ok(2), |s| s.parse()).expect("hops");
    let config = TrainConfig {
        iterations,
        hops,
        ..TrainConfig::default()
    };
    let pairs = make_fixtures("cube-to-sphere", config.seed)?;
    let net = DeformationNetwork::new(config.network_config())?;
    println!("{} parameters", net.parameter_count());

    let start = Instant::now();
    let outcome = train(net, &pairs, &config)?;
    let elapsed = start.elapsed();
    if let Some(e) = &outcome.failure {
        eprintln!("stopped early: {e}");
    }
    for row in outcome.curve.iter().filter(|r| r.val_cd.is_some() && r.iteration % 100 == 0) {
        println!(
            "iter {:5}  L_all {:10.4}  l_cd {:10.4}  val_cd {:10.4}",
            row.iteration,
            row.l_all,
            row.l_cd,
            row.val_cd.unwrap_or(f64::NAN)
        );
    }
    println!(
        "chamfer {:.4} -> {:.4} (ratio {:.4}), best at iteration {}, {:.1}s",
        outcome.initial_val_cd(),
        outcome.final_val_cd(),
        outcome.final_val_cd() / outcome.initial_val_cd(),
        outcome.best_iteration,
        elapsed.as_secs_f64()
    );
    Ok(())
}
