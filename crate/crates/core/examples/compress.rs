//! Uniform and region-adaptive compression of a synthetic vortex stack,
//! with the per-region error report.
//!
//! Run with `cargo run --release --example compress`.

use stra::codec::{compress, decompress, verify, CompressConfig, RegionSource};
use stra::experiment::compact_refinement;
use stra::synth::{gen_synthetic, SynthConfig};

fn main() -> stra::Result<()> {
    let (stack, _) = gen_synthetic(&SynthConfig::default())?;
    println!("stack: {} slices of {:?}", stack.len(), stack.slices()[0].dims());

    let tau0 = 1e-3;
    let configs = [
        ("uniform tau0", CompressConfig::uniform(tau0)),
        ("uniform 20 tau0", CompressConfig::uniform(20.0 * tau0)),
        (
            "adaptive",
            CompressConfig::adaptive(tau0, f64::INFINITY, 1).with_regions(RegionSource::Detect(compact_refinement())),
        ),
    ];
    println!("{:<16} {:>7} {:>9} {:>11} {:>11} {:>11}", "config", "CR", "tau1", "roi", "buffer", "background");
    for (name, cfg) in configs {
        let c = compress(&stack, &cfg)?;
        let e = verify(&stack, &c.blob)?;
        println!(
            "{name:<16} {:>7.2} {:>9.2e} {:>11.2e} {:>11.2e} {:>11.2e}",
            c.report.ratio(),
            c.report.tau1,
            e.max_roi,
            e.max_buffer,
            e.max_background
        );
        let back = decompress(&c.blob)?;
        assert_eq!(back.len(), stack.len());
    }
    Ok(())
}
