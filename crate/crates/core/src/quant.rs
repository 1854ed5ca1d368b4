//! Region-adaptive linear-scaling quantization.
//!
//! Each level gets an equal share `tau / (L + 1)` of the error budget. A
//! unit coefficient error at one level reaches any node with total weight at
//! most the quantization gain `G_d`, so a bin of `2 tau / (G_d (L + 1))`
//! keeps every level's contribution within its share.

use crate::error::{Error, Result};
use crate::kernel::quantization_gain;
use crate::mask::RegionMask;
use crate::roi::{BoundMap, BufferZone, NormMode};
use crate::transform::CoeffPyramid;

/// Largest `|coefficient / bin|` accepted before quantization fails.
pub const MAX_QUANT: f64 = 4.0e18;

/// Bin widths for protected and background coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinWidths {
    pub protected: f64,
    pub background: f64,
}

impl BinWidths {
    pub fn for_bounds(bounds: &BoundMap, levels: usize, ndim: usize) -> Result<Self> {
        let width = |tau: f64| -> Result<f64> {
            let bin = match bounds.norm() {
                NormMode::Max => 2.0 * tau / (quantization_gain(ndim)? * (levels + 1) as f64),
                // uniform error of width b has RMS b / sqrt(12); levels add in quadrature
                NormMode::Rms => 12f64.sqrt() * tau / ((levels + 1) as f64).sqrt(),
            };
            if !(bin > 0.0) || !bin.is_finite() {
                return Err(Error::Config(format!("nonpositive bin width {bin} for tau {tau}")));
            }
            Ok(bin)
        };
        Ok(Self {
            protected: width(bounds.tau0())?,
            background: width(bounds.tau1())?,
        })
    }

    pub fn get(&self, protected: bool) -> f64 {
        if protected {
            self.protected
        } else {
            self.background
        }
    }
}

/// Integer coefficients together with everything needed to dequantize them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPyramid {
    pub(crate) q: Vec<i64>,
    pub(crate) zone: BufferZone,
    pub(crate) pyramid_dims: Vec<usize>,
    pub(crate) spacing: Vec<f64>,
    pub(crate) orig_dims: Vec<usize>,
    pub(crate) bounds: BoundMap,
    pub(crate) bins: BinWidths,
}

impl QuantizedPyramid {
    pub fn values(&self) -> &[i64] {
        &self.q
    }

    pub fn mask(&self) -> &RegionMask {
        self.zone.mask()
    }

    pub fn zone(&self) -> &BufferZone {
        &self.zone
    }

    pub fn dims(&self) -> &[usize] {
        &self.pyramid_dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn orig_dims(&self) -> &[usize] {
        &self.orig_dims
    }

    pub fn bounds(&self) -> &BoundMap {
        &self.bounds
    }

    pub fn bins(&self) -> BinWidths {
        self.bins
    }
}

/// Midpoint rule: the nearest integer, halves rounded away from zero.
pub fn quantize_value(c: f64, bin: f64) -> i64 {
    (c / bin).round() as i64
}

/// Quantizes every coefficient with the bin of its region class.
pub fn quantize(pyramid: &CoeffPyramid, zone: &BufferZone, bounds: &BoundMap) -> Result<QuantizedPyramid> {
    let h = pyramid.hierarchy();
    if zone.mask().dims() != h.dims() {
        return Err(Error::ShapeMismatch(format!(
            "buffer zone dims {:?} vs pyramid {:?}",
            zone.mask().dims(),
            h.dims()
        )));
    }
    let bins = BinWidths::for_bounds(bounds, h.levels(), h.ndim())?;
    let q = pyramid
        .coeffs()
        .iter()
        .zip(zone.protected())
        .map(|(&c, &p)| {
            let bin = bins.get(p);
            let r = c / bin;
            if !r.is_finite() || r.abs() > MAX_QUANT {
                return Err(Error::InvalidInput(format!(
                    "coefficient {c} does not fit bin {bin}"
                )));
            }
            Ok(quantize_value(c, bin))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedPyramid {
        q,
        zone: zone.clone(),
        pyramid_dims: h.dims().to_vec(),
        spacing: h.spacing().to_vec(),
        orig_dims: pyramid.orig_dims().to_vec(),
        bounds: *bounds,
        bins,
    })
}

/// `qcoeff * bin` for every coefficient.
pub fn dequantize(qp: &QuantizedPyramid) -> Result<CoeffPyramid> {
    let h = crate::hierarchy::GridHierarchy::new(&qp.pyramid_dims, &qp.spacing)?;
    let coeffs = qp
        .q
        .iter()
        .zip(qp.zone.protected())
        .map(|(&v, &p)| v as f64 * qp.bins.get(p))
        .collect();
    Ok(CoeffPyramid::new(coeffs, h)?.with_orig_dims(&qp.orig_dims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::GridHierarchy;
    use crate::mask::RegionMask;
    use crate::roi::dilate_buffer;
    use crate::transform::decompose;
    use crate::Field;

    fn uniform_zone(dims: &[usize]) -> (GridHierarchy, BufferZone) {
        let h = GridHierarchy::new(dims, &vec![1.0; dims.len()]).unwrap();
        let z = dilate_buffer(&RegionMask::all_roi(dims), 0, &h).unwrap();
        (h, z)
    }

    #[test]
    fn midpoint_rule() {
        assert_eq!(quantize_value(0.49, 1.0), 0);
        assert_eq!(quantize_value(0.51, 1.0), 1);
        assert_eq!(quantize_value(-0.51, 1.0), -1);
        assert_eq!(quantize_value(2.5 * 0.3, 0.3), 3);
    }

    #[test]
    fn zero_pyramid_quantizes_to_zero() {
        let (h, z) = uniform_zone(&[9, 9]);
        let p = CoeffPyramid::zeros(h);
        let b = BoundMap::uniform(1e-3, NormMode::Max).unwrap();
        assert!(quantize(&p, &z, &b).unwrap().values().iter().all(|&v| v == 0));
    }

    #[test]
    fn quantization_error_within_half_bin() {
        let f = Field::from_fn(&[17, 17], |i| ((i[0] * 7 + i[1] * 3) as f64).sin()).unwrap();
        let p = decompose(&f).unwrap();
        let (_, z) = uniform_zone(&[17, 17]);
        let b = BoundMap::uniform(1e-2, NormMode::Max).unwrap();
        let q = quantize(&p, &z, &b).unwrap();
        let back = dequantize(&q).unwrap();
        let bin = q.bins().protected;
        for (c, d) in p.coeffs().iter().zip(back.coeffs()) {
            assert!((c - d).abs() <= bin / 2.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bins_follow_budget_split() {
        let b = BoundMap::new(1e-3, 1.0, 1, NormMode::Max, crate::kernel::scale_factor(2).unwrap()).unwrap();
        let w = BinWidths::for_bounds(&b, 4, 2).unwrap();
        let g = quantization_gain(2).unwrap();
        assert!((w.protected - 2e-3 / (g * 5.0)).abs() < 1e-18);
        assert!((w.background / w.protected - b.tau1() / b.tau0()).abs() < 1e-9);
    }

    #[test]
    fn overflowing_coefficient_is_rejected() {
        let (h, z) = uniform_zone(&[5]);
        let mut p = CoeffPyramid::zeros(h);
        p.coeffs_mut()[1] = 1e300;
        let b = BoundMap::uniform(1e-3, NormMode::Max).unwrap();
        assert!(quantize(&p, &z, &b).is_err());
    }
}
