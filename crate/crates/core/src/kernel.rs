//! Error footprint of a single quantized coefficient.
//!
//! A unit error on a level-`l` coefficient recomposes to a field that decays
//! like `(2 + √3)^(-d)`, with `d` the Chebyshev distance measured in
//! level-`(l-1)` spacings. The scale factor `C_d` in front of that law is
//! measured here from impulse responses rather than derived.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::field::{ravel, unravel_into, Field};
use crate::hierarchy::GridHierarchy;
use crate::transform::{interpolate_line, recompose, transfer_line, CoeffPyramid, MassSolver};

/// Per-spacing attenuation base `2 + √3`.
pub const DECAY_BASE: f64 = 3.732_050_807_568_877_2;

/// Multiplier applied on top of the largest observed normalised amplitude.
pub const SAFETY_FACTOR: f64 = 1.25;

/// Largest distance (in coarse spacings) used by the calibration.
pub const MAX_DISTANCE: usize = 5;

/// Recomposition of a pyramid holding a single `1` at `node`, which must lie
/// in `N*_level`.
pub fn impulse_response(dims: &[usize], level: usize, node: &[usize]) -> Result<Field> {
    let h = GridHierarchy::new(dims, &vec![1.0; dims.len()])?;
    if node.len() != dims.len() || node.iter().zip(dims).any(|(&i, &n)| i >= n) {
        return Err(Error::InvalidInput(format!("node {node:?} outside grid {dims:?}")));
    }
    if level > h.levels() || h.node_level(node) != level {
        return Err(Error::InvalidInput(format!(
            "node {node:?} is not a level-{level} node"
        )));
    }
    let mut p = CoeffPyramid::zeros(h);
    p.coeffs_mut()[ravel(node, dims)] = 1.0;
    Ok(recompose(&p))
}

/// Chebyshev distance between two finest-grid nodes in level-`(l-1)` spacings.
pub fn coarse_distance(h: &GridHierarchy, level: usize, x: &[usize], y: &[usize]) -> f64 {
    let cheb = x.iter().zip(y).map(|(&a, &b)| a.abs_diff(b)).max().unwrap_or(0);
    cheb as f64 / (2 * h.stride(level)) as f64
}

/// `A(d)`: largest `|response|` over nodes exactly `d` coarse spacings from
/// `node`, for `d = 0..=max_d`. Distances that leave the grid yield `None`.
pub fn shell_amplitudes(
    response: &Field,
    level: usize,
    node: &[usize],
    max_d: usize,
) -> Vec<Option<f64>> {
    let h = GridHierarchy::new(response.dims(), response.spacing()).expect("dyadic response");
    let step = 2 * h.stride(level);
    let mut out = vec![None; max_d + 1];
    let mut idx = vec![0; response.ndim()];
    for (flat, v) in response.data().iter().enumerate() {
        unravel_into(flat, response.dims(), &mut idx);
        let cheb = idx.iter().zip(node).map(|(&a, &b)| a.abs_diff(b)).max().unwrap();
        if cheb % step != 0 || cheb / step > max_d {
            continue;
        }
        let slot = &mut out[cheb / step];
        *slot = Some(slot.unwrap_or(0.0f64).max(v.abs()));
    }
    out
}

/// Least-squares slope of `ln A(d)` against `d` over `d = 1..=MAX_DISTANCE`.
pub fn decay_slope(amplitudes: &[Option<f64>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = amplitudes
        .iter()
        .enumerate()
        .skip(1)
        .take(MAX_DISTANCE)
        .filter_map(|(d, a)| a.filter(|&a| a > 0.0).map(|a| (d as f64, a.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// One sampled impulse used by the calibration.
#[derive(Debug, Clone)]
pub struct KernelSample {
    pub ndim: usize,
    pub level: usize,
    pub node: Vec<usize>,
    /// Axes along which `node` has odd level index.
    pub odd_axes: Vec<usize>,
    pub amplitudes: Vec<Option<f64>>,
    pub slope: Option<f64>,
    /// `max_y |response(y)| · (2+√3)^d(x,y)` over `1 <= d <= MAX_DISTANCE`.
    pub normalized_peak: f64,
}

/// Calibrated kernel constants for one dimensionality.
///
/// `scale` describes the tail of the footprint (one coarse spacing and
/// beyond); the coefficient's own node is covered by `level_gain`.
#[derive(Debug, Clone)]
pub struct DecayCalibration {
    pub ndim: usize,
    /// `C_d`, including [`SAFETY_FACTOR`].
    pub scale: f64,
    /// Geometric mean of `A(d+1)/A(d)` over all samples and `d = 1..5`.
    pub ratio: f64,
    pub samples: Vec<KernelSample>,
    /// Worst case of `sum_x |response_x(y)|` over one level, see [`level_gain`].
    pub level_gain: f64,
}

impl DecayCalibration {
    /// Mean fitted slope over the samples.
    pub fn mean_slope(&self) -> f64 {
        let s: Vec<f64> = self.samples.iter().filter_map(|s| s.slope).collect();
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Grid used to calibrate each dimensionality.
pub fn calibration_dims(ndim: usize) -> Vec<usize> {
    match ndim {
        1 => vec![257],
        2 => vec![129, 129],
        _ => vec![65; ndim],
    }
}

/// Smallest level-grid line that keeps a centred impulse's tail, out to
/// `MAX_DISTANCE` coarse spacings, clear of the boundary rows.
pub const MIN_CALIBRATION_LINE: usize = 33;

/// Levels sampled during calibration: up to the three finest whose grids
/// have at least [`MIN_CALIBRATION_LINE`] nodes on every axis.
pub fn calibration_levels(h: &GridHierarchy) -> Vec<usize> {
    (1..=h.levels())
        .rev()
        .filter(|&l| h.level_dims(l).iter().all(|&n| n >= MIN_CALIBRATION_LINE))
        .take(3)
        .collect()
}

/// A node of `N*_level` near the grid centre with odd level index exactly
/// on `odd_axes`.
pub fn central_node(h: &GridHierarchy, level: usize, odd_axes: &[usize]) -> Vec<usize> {
    let ldims = h.level_dims(level);
    let s = h.stride(level);
    ldims
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            let c = (n - 1) / 2;
            let want_odd = odd_axes.contains(&a);
            let i = if (c % 2 == 1) == want_odd { c } else { c + 1 };
            i * s
        })
        .collect()
}

/// Runs the impulse calibration for `ndim` axes. Deterministic.
pub fn calibrate(ndim: usize) -> Result<DecayCalibration> {
    if !(1..=3).contains(&ndim) {
        return Err(Error::InvalidInput(format!("cannot calibrate {ndim} axes")));
    }
    let dims = calibration_dims(ndim);
    let h = GridHierarchy::new(&dims, &vec![1.0; ndim])?;
    let mut samples = Vec::new();
    let mut log_ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    let mut peak = 0.0f64;
    for level in calibration_levels(&h) {
        for mask in 1usize..(1 << ndim) {
            let odd_axes: Vec<usize> = (0..ndim).filter(|a| mask >> a & 1 == 1).collect();
            let node = central_node(&h, level, &odd_axes);
            let response = impulse_response(&dims, level, &node)?;
            let amplitudes = shell_amplitudes(&response, level, &node, MAX_DISTANCE);
            for w in amplitudes[1..].windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    if a > 0.0 && b > 0.0 {
                        log_ratio_sum += (b / a).ln();
                        ratio_count += 1;
                    }
                }
            }
            let mut normalized_peak = 0.0f64;
            let mut idx = vec![0; ndim];
            for (flat, v) in response.data().iter().enumerate() {
                unravel_into(flat, &dims, &mut idx);
                let d = coarse_distance(&h, level, &node, &idx);
                if (1.0..=MAX_DISTANCE as f64).contains(&d) {
                    normalized_peak = normalized_peak.max(v.abs() * DECAY_BASE.powf(d));
                }
            }
            peak = peak.max(normalized_peak);
            samples.push(KernelSample {
                ndim,
                level,
                node,
                odd_axes,
                slope: decay_slope(&amplitudes),
                amplitudes,
                normalized_peak,
            });
        }
    }
    Ok(DecayCalibration {
        ndim,
        scale: peak * SAFETY_FACTOR,
        ratio: (log_ratio_sum / ratio_count.max(1) as f64).exp(),
        samples,
        level_gain: level_gain(ndim),
    })
}

/// Line lengths covered by [`level_gain`].
const GAIN_LINE_LENGTHS: [usize; 8] = [3, 5, 9, 17, 33, 65, 129, 257];

/// Per-axis statistics of the 1D factor of a level-`l` impulse response at
/// one target node: `(sum over all sources, sum over even sources, own value, odd)`.
fn line_profiles(n: usize) -> Vec<(f64, f64, f64, bool)> {
    let m = n.div_ceil(2);
    let solver = MassSolver::new(m, 2.0);
    // factors[x][y]: interpolated L2 correction caused by a unit detail at x
    let factors: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut delta = vec![0.0; n];
            delta[x] = 1.0;
            let mut w = vec![0.0; m];
            transfer_line(&delta, &mut w, 1.0);
            solver.solve(&mut w);
            let mut g = vec![0.0; n];
            interpolate_line(&w, &mut g);
            g
        })
        .collect();
    (0..n)
        .map(|y| {
            let all: f64 = factors.iter().map(|g| g[y].abs()).sum();
            let even: f64 = factors.iter().step_by(2).map(|g| g[y].abs()).sum();
            (all, even, factors[y][y], y % 2 == 1)
        })
        .collect()
}

/// Largest amplification of one level's quantization errors at any node.
///
/// A unit detail at `x` recomposes to `e_x - prod_a g_a(x_a, ·)` with `g_a`
/// the 1D correction factor along axis `a`, so for a target `y`
/// `sum_{x in N*_l} |r_x(y)| = prod_a S_a - prod_a E_a + [y in N*_l](|1 - P| - |P|)`
/// where `S_a`/`E_a` sum `|g_a|` over all/even sources and `P = prod_a g_a(y_a, y_a)`.
/// Finer levels only interpolate, which cannot raise the maximum. The
/// result is exact over every line length up to 257 and any mix of lengths.
pub fn level_gain(ndim: usize) -> f64 {
    let mut profiles: Vec<(f64, f64, f64, bool)> = GAIN_LINE_LENGTHS
        .iter()
        .flat_map(|&n| line_profiles(n))
        .collect();
    profiles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    profiles.dedup_by(|a, b| {
        (a.0 - b.0).abs() < 1e-13 && (a.1 - b.1).abs() < 1e-13 && (a.2 - b.2).abs() < 1e-13 && a.3 == b.3
    });
    let mut best = 1.0f64;
    let k = profiles.len();
    let mut choice = vec![0usize; ndim];
    loop {
        let mut s = 1.0;
        let mut e = 1.0;
        let mut p = 1.0;
        let mut fine = false;
        for &c in &choice {
            let (all, even, own, odd) = profiles[c];
            s *= all;
            e *= even;
            p *= own;
            fine |= odd;
        }
        let mut total = s - e;
        if fine {
            total += (1.0 - p).abs() - p.abs();
        }
        best = best.max(total);
        // odometer over profile choices
        let mut axis = 0;
        loop {
            if axis == ndim {
                return best;
            }
            choice[axis] += 1;
            if choice[axis] < k {
                break;
            }
            choice[axis] = 0;
            axis += 1;
        }
    }
}

/// Cached calibration for `ndim` axes.
pub fn calibration(ndim: usize) -> Result<&'static DecayCalibration> {
    static CACHE: [OnceLock<DecayCalibration>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    if !(1..=3).contains(&ndim) {
        return Err(Error::InvalidInput(format!("cannot calibrate {ndim} axes")));
    }
    let cell = &CACHE[ndim - 1];
    if let Some(c) = cell.get() {
        return Ok(c);
    }
    let c = calibrate(ndim)?;
    Ok(cell.get_or_init(|| c))
}

/// Cached `C_d`.
pub fn scale_factor(ndim: usize) -> Result<f64> {
    calibration(ndim).map(|c| c.scale)
}

/// Constant used to size quantization bins: `max(C_d, level gain)`.
pub fn quantization_gain(ndim: usize) -> Result<f64> {
    calibration(ndim).map(|c| c.scale.max(c.level_gain))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_constant() {
        assert!((DECAY_BASE - (2.0 + 3f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn impulse_rejects_coarse_node() {
        // index 4 of a 9-node grid belongs to level 1, not level 3
        assert!(impulse_response(&[9], 3, &[4]).is_err());
        assert!(impulse_response(&[9], 1, &[4]).is_ok());
        assert!(impulse_response(&[9], 3, &[9]).is_err());
    }

    #[test]
    fn impulse_is_bounded_and_peaks_near_node() {
        for (dims, level) in [(vec![65], 6), (vec![129], 7)] {
            let node = [dims[0] / 2 + 1];
            let r = impulse_response(&dims, level, &node).unwrap();
            assert!(r.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            let at = r.get(&node);
            assert!(at > 0.5 && at < 1.0, "{at}");
        }
    }

    #[test]
    fn one_d_decay_rate() {
        let h = GridHierarchy::new(&[257], &[1.0]).unwrap();
        for level in [8, 7, 6] {
            let node = central_node(&h, level, &[0]);
            let r = impulse_response(&[257], level, &node).unwrap();
            let amps = shell_amplitudes(&r, level, &node, MAX_DISTANCE);
            let slope = decay_slope(&amps).unwrap();
            let target = -DECAY_BASE.ln();
            assert!((slope - target).abs() <= 0.15 * target.abs(), "level {level}: {slope}");
        }
    }

    #[test]
    fn slope_of_exact_geometric_sequence() {
        let amps: Vec<Option<f64>> = (0..=5).map(|d| Some(3.0 * DECAY_BASE.powi(-d))).collect();
        assert!((decay_slope(&amps).unwrap() + DECAY_BASE.ln()).abs() < 1e-12);
    }

    /// Sum over every level-`l` source of `|response_x(y)|`, maximised over `y`,
    /// by recomposing each impulse separately.
    fn brute_force_gain(dims: &[usize], level: usize) -> f64 {
        let h = GridHierarchy::new(dims, &vec![1.0; dims.len()]).unwrap();
        let n: usize = dims.iter().product();
        let mut sums = vec![0.0; n];
        let mut idx = vec![0; dims.len()];
        for flat in 0..n {
            unravel_into(flat, dims, &mut idx);
            if h.node_level(&idx) != level {
                continue;
            }
            let r = impulse_response(dims, level, &idx).unwrap();
            for (s, v) in sums.iter_mut().zip(r.data()) {
                *s += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    #[test]
    fn level_gain_bounds_brute_force() {
        for (dims, ndim) in [(vec![33], 1), (vec![17, 17], 2), (vec![9, 17], 2), (vec![9, 9, 9], 3)] {
            let gain = level_gain(ndim);
            let h = GridHierarchy::new(&dims, &vec![1.0; ndim]).unwrap();
            for level in 1..=h.levels() {
                let brute = brute_force_gain(&dims, level);
                assert!(brute <= gain + 1e-9, "{dims:?} level {level}: {brute} > {gain}");
            }
        }
        // interior of a large enough grid gets close to the bound
        let brute = brute_force_gain(&[33, 33], 5);
        assert!(brute >= 0.95 * level_gain(2), "{brute}");
        assert!((level_gain(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_scale_shrinks_with_dimension() {
        let c: Vec<f64> = (1..=3).map(|d| calibration(d).unwrap().scale).collect();
        assert!(c[0] >= c[1] && c[1] >= c[2], "{c:?}");
        for d in 1..=3 {
            let cal = calibration(d).unwrap();
            let r = 1.0 / DECAY_BASE;
            assert!((cal.ratio - r).abs() / r <= 0.15);
            assert!(cal.samples.iter().all(|s| s.slope.is_some()));
        }
    }

    #[test]
    fn calibration_is_deterministic() {
        let a = calibrate(2).unwrap();
        let b = calibrate(2).unwrap();
        assert_eq!(a.scale.to_bits(), b.scale.to_bits());
        assert_eq!(a.level_gain.to_bits(), b.level_gain.to_bits());
        assert!(calibrate(0).is_err() && calibrate(4).is_err());
    }
}
