//! Compressing a time series as one 3D block instead of slice by slice.
//!
//! Run with `cargo run --release --example temporal`.

use stra::codec::{compress, CompressConfig, TemporalStack};
use stra::synth::advected_stack;

fn main() -> stra::Result<()> {
    let stack = advected_stack([65, 65], 32, [0.45, 0.3], 7)?;
    let raw = (stack.values() * 4) as f64;
    for tau in [1e-1, 1e-2, 1e-3, 1e-4] {
        let cfg = CompressConfig::uniform(tau);
        let joint = compress(&stack, &cfg)?.report.compressed_bytes;
        let mut per_slice = 0;
        for s in stack.slices() {
            per_slice += compress(&TemporalStack::single(s.clone()), &cfg)?.report.compressed_bytes;
        }
        println!(
            "tau {tau:.0e}: joint CR {:6.2}, per-slice CR {:6.2}, gain {:+.0}%",
            raw / joint as f64,
            raw / per_slice as f64,
            100.0 * (per_slice as f64 / joint as f64 - 1.0)
        );
    }
    Ok(())
}
