//! Critical-region detection on a filament field: heatmap, layered
//! refinement and buffer zone.
//!
//! Run with `cargo run --example roi_detect`.

use stra::mask::Label;
use stra::roi::{coefficient_heatmap, detect_rois, dilate_buffer, RefinementConfig};
use stra::synth::filament_field;
use stra::decompose;

fn main() -> stra::Result<()> {
    let field = filament_field([129, 129], 6, 3)?;
    let pyramid = decompose(&field)?;
    let heat = coefficient_heatmap(&pyramid);

    for spec in ["8:90:99", "3:90:99", "1:90:99", "16:95:99,8:90:99,4:90:99"] {
        let config: RefinementConfig = spec.parse()?;
        let mask = detect_rois(&heat, &config)?;
        let zone = dilate_buffer(&mask, 2, pyramid.hierarchy())?;
        let n = mask.len() as f64;
        println!(
            "{spec:<26} RoI {:5.1}%  with buffer {:5.1}%  protected coefficients {:5.1}%",
            100.0 * mask.count(Label::Roi) as f64 / n,
            100.0 * (n - zone.mask().count(Label::Background) as f64) / n,
            100.0 * zone.protected().iter().filter(|&&p| p).count() as f64 / n,
        );
    }

    // coarse picture of the single-layer mask with width 8
    let mask = detect_rois(&heat, &"8:90:99".parse()?)?;
    for i in (0..129).step_by(4) {
        let row: String = (0..129)
            .step_by(2)
            .map(|j| if mask.labels()[i * 129 + j] == Label::Roi { '#' } else { '.' })
            .collect();
        println!("{row}");
    }
    Ok(())
}
