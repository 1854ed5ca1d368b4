//! Multilevel decomposition of a 2D field, exact reconstruction, and the
//! exponential decay of a single coefficient's footprint.
//!
//! Run with `cargo run --example transform`.

use stra::kernel::{calibration, impulse_response, shell_amplitudes, DECAY_BASE};
use stra::{decompose, recompose, Field};

fn main() -> stra::Result<()> {
    let u = Field::from_fn(&[65, 65], |i| {
        let (x, y) = (i[0] as f64 / 64.0, i[1] as f64 / 64.0);
        (6.0 * x).sin() * (4.0 * y).cos() + 0.3 * (25.0 * x * y).sin()
    })?;
    let pyramid = decompose(&u)?;
    let h = pyramid.hierarchy();
    println!("grid {:?}, {} levels", h.dims(), h.levels());

    let map = h.level_map();
    for l in 0..=h.levels() {
        let (n, peak) = pyramid
            .coeffs()
            .iter()
            .zip(&map)
            .filter(|(_, &lv)| lv as usize == l)
            .fold((0, 0.0f64), |(n, m), (c, _)| (n + 1, m.max(c.abs())));
        println!("  level {l}: {n:>5} coefficients, largest |c| = {peak:.3e}");
    }

    let back = recompose(&pyramid);
    let err = u.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("reconstruction max error {err:.2e}");

    // one unit coefficient on the finest level, sampled along its row
    let node = [31, 31];
    let response = impulse_response(&[65, 65], h.levels(), &node)?;
    let amps = shell_amplitudes(&response, h.levels(), &node, 5);
    println!("impulse footprint, distance d in coarse spacings:");
    for d in 2..amps.len() {
        if let (Some(prev), Some(a)) = (amps[d - 1], amps[d]) {
            println!("  d = {d}: |u| = {a:.3e}, ratio to d-1 = {:.4} (1/(2+sqrt 3) = {:.4})", a / prev, 1.0 / DECAY_BASE);
        }
    }
    for nd in 1..=3 {
        let cal = calibration(nd)?;
        println!("{nd}D: C_d = {:.4}, mean slope {:.4}", cal.scale, cal.mean_slope());
    }
    Ok(())
}
