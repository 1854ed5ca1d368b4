//! A full evaluation scenario: decimation against compression at the same
//! storage budget, written as CSV.
//!
//! Run with `cargo run --release --example experiment [seed]`.

use stra::experiment::{run_experiment, Scenario};

fn main() -> stra::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for scenario in [Scenario::DecimVsComp, Scenario::AdaptiveVsUniform] {
        println!("# {}: {}", scenario.name(), scenario.description());
        let report = run_experiment(&scenario.config(seed))?;
        println!("# {} reference tracks", report.reference.len());
        report.write_csv(std::io::stdout().lock(), true)?;
    }
    Ok(())
}
