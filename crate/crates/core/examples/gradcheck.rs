//! Runs the finite-difference gradient suite and prints one line per check.
//!
//! ```text
//! cargo run --example gradcheck -- [seed]
//! ```

use stdnet::cli::gradcheck_suite;

fn main() -> stdnet::Result<()> {
    let seed = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    let suite = gradcheck_suite(seed, 1e-4)?;
    for (name, report) in &suite.checks {
        println!(
            "{name:<22} {:>5} coords  max rel err {:.2e}  {}",
            report.coordinates,
            report.max_relative_error,
            if report.passed { "ok" } else { "FAIL" }
        );
    }
    println!("overall: {}", if suite.passed { "pass" } else { "fail" });
    Ok(())
}
