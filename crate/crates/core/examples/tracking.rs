//! Vortex tracking on synthetic data and comparison against a reduced
//! version of the same data.
//!
//! Run with `cargo run --release --example tracking`.

use stra::codec::{compress, decompress, CompressConfig};
use stra::synth::{gen_synthetic, SynthConfig};
use stra::track::{classify, frechet, track_slices, PointMetric, StitchParams, Thresholds};

fn main() -> stra::Result<()> {
    let (stack, truth) = gen_synthetic(&SynthConfig::default())?;
    let params = StitchParams::default();
    let tracks = track_slices(stack.slices().iter().enumerate(), 0.8, &params)?;
    println!("{} generator paths, {} tracks found", truth.len(), tracks.len());
    for tr in &tracks {
        let d = truth
            .iter()
            .map(|t| frechet(tr, t, PointMetric::Euclidean))
            .collect::<stra::Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        println!("  t {:>2}..{:>2}: {} points, Frechet to nearest path {d:.2}", tr.first_t().unwrap(), tr.last_t().unwrap(), tr.len());
    }

    for tau in [1e-2, 1e-1, 3e-1] {
        let c = compress(&stack, &CompressConfig::uniform(tau))?;
        let back = decompress(&c.blob)?;
        let reduced = track_slices(back.slices().iter().enumerate(), 0.8, &params)?;
        let scores = classify(&reduced, &tracks, &Thresholds::default(), PointMetric::Euclidean);
        let classes: Vec<String> = scores.iter().map(|s| format!("{:?}", s.class)).collect();
        println!("CR {:5.1}: {}", c.report.ratio(), classes.join(" "));
    }
    Ok(())
}
