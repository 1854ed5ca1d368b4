//! Public compression API: temporal stacking, the compress pipeline and its
//! inverse.

use std::time::{Duration, Instant};

use crate::blob::{BlobHeader, CompressedBlob};
use crate::entropy::{decode_symbols, encode_symbols, Backend};
use crate::error::{Error, Result};
use crate::field::{ravel, unravel_into, DType, Field, MAX_DIMS};
use crate::hierarchy::GridHierarchy;
use crate::kernel::scale_factor;
use crate::mask::{Label, RegionMask};
use crate::quant::{dequantize, quantize, BinWidths, QuantizedPyramid};
use crate::roi::{coefficient_heatmap, detect_rois, dilate_buffer, BoundMap, NormMode, RefinementConfig};
use crate::transform::{decompose, recompose, CoeffPyramid};

/// `T` consecutive slices compressed jointly, time being the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStack {
    slices: Vec<Field>,
}

impl TemporalStack {
    pub fn new(slices: Vec<Field>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidInput("a stack needs at least one slice".into()))?;
        if slices
            .iter()
            .any(|s| s.dims() != first.dims() || s.spacing() != first.spacing())
        {
            return Err(Error::ShapeMismatch("slices differ in dims or spacing".into()));
        }
        if slices.len() > 1 && first.ndim() + 1 > MAX_DIMS {
            return Err(Error::InvalidInput(format!(
                "stacking {}-axis slices would exceed {MAX_DIMS} axes",
                first.ndim()
            )));
        }
        Ok(Self { slices })
    }

    pub fn single(field: Field) -> Self {
        Self { slices: vec![field] }
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<Field> {
        self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Number of values across all slices.
    pub fn values(&self) -> usize {
        self.slices.iter().map(Field::len).sum()
    }

    /// One field; with `T > 1` time is appended as a unit-spacing last axis.
    pub fn to_field(&self) -> Field {
        if self.slices.len() == 1 {
            return self.slices[0].clone();
        }
        let t = self.slices.len();
        let first = &self.slices[0];
        let mut dims = first.dims().to_vec();
        dims.push(t);
        let mut spacing = first.spacing().to_vec();
        spacing.push(1.0);
        let mut data = vec![0.0; first.len() * t];
        for (k, s) in self.slices.iter().enumerate() {
            for (i, &v) in s.data().iter().enumerate() {
                data[i * t + k] = v;
            }
        }
        Field::with_spacing(data, &dims, &spacing).expect("stack dims are valid")
    }

    /// Splits a field whose last axis holds `t` time slices.
    pub fn from_field(field: &Field, t: usize) -> Result<Self> {
        if t <= 1 {
            return Ok(Self::single(field.clone()));
        }
        let dims = field.dims();
        if dims.len() < 2 || dims[dims.len() - 1] != t {
            return Err(Error::ShapeMismatch(format!(
                "last axis of {dims:?} is not {t} time slices"
            )));
        }
        let sdims = &dims[..dims.len() - 1];
        let sspacing = &field.spacing()[..dims.len() - 1];
        let n: usize = sdims.iter().product();
        let slices = (0..t)
            .map(|k| {
                let data = (0..n).map(|i| field.data()[i * t + k]).collect();
                Field::with_spacing(data, sdims, sspacing)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(slices)
    }
}

/// Where region labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionSource {
    /// Same bound everywhere (`tau1` is ignored).
    Uniform,
    /// Detect regions from the coefficients.
    Detect(RefinementConfig),
    /// Use a precomputed mask over the stacked grid (original or padded extents).
    Mask(RegionMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressConfig {
    pub tau0: f64,
    /// Requested background bound; capped by the buffer width.
    pub tau1: f64,
    pub r_bz: usize,
    pub norm: NormMode,
    pub regions: RegionSource,
    pub backend: Backend,
    /// Element type of the uncompressed data, used for the compression ratio.
    pub source_dtype: DType,
}

impl CompressConfig {
    pub fn uniform(tau: f64) -> Self {
        Self {
            tau0: tau,
            tau1: tau,
            r_bz: 0,
            norm: NormMode::Max,
            regions: RegionSource::Uniform,
            backend: Backend::Deflate,
            source_dtype: DType::F32,
        }
    }

    pub fn adaptive(tau0: f64, tau1: f64, r_bz: usize) -> Self {
        Self {
            tau0,
            tau1,
            r_bz,
            regions: RegionSource::Detect(RefinementConfig::default()),
            ..Self::uniform(tau0)
        }
    }

    pub fn with_regions(mut self, regions: RegionSource) -> Self {
        self.regions = regions;
        self
    }

    pub fn with_norm(mut self, norm: NormMode) -> Self {
        self.norm = norm;
        self
    }
}

/// Wall-clock split of one compress call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    /// Heatmap, detection and buffer construction.
    pub detection: Duration,
    pub total: Duration,
}

impl Timing {
    pub fn detection_fraction(&self) -> f64 {
        let t = self.total.as_secs_f64();
        if t > 0.0 {
            self.detection.as_secs_f64() / t
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressReport {
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
    pub tau1_requested: f64,
    pub tau1: f64,
    pub roi_nodes: usize,
    pub buffer_nodes: usize,
    pub timing: Timing,
}

impl CompressReport {
    pub fn ratio(&self) -> f64 {
        self.raw_bytes as f64 / self.compressed_bytes as f64
    }

    pub fn tau1_capped(&self) -> bool {
        self.tau1 < self.tau1_requested
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub blob: CompressedBlob,
    pub report: CompressReport,
}

/// Extends a mask over original extents to padded extents by edge replication.
fn pad_mask(mask: &RegionMask, orig: &[usize], dims: &[usize]) -> Result<RegionMask> {
    if mask.dims() == dims {
        return Ok(mask.clone());
    }
    if mask.dims() != orig {
        return Err(Error::ShapeMismatch(format!(
            "mask dims {:?} match neither {orig:?} nor {dims:?}",
            mask.dims()
        )));
    }
    let n: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    let labels = (0..n)
        .map(|flat| {
            unravel_into(flat, dims, &mut idx);
            for (i, &o) in idx.iter_mut().zip(orig) {
                *i = (*i).min(o - 1);
            }
            mask.labels()[ravel(&idx, orig)]
        })
        .collect();
    RegionMask::new(labels, dims)
}

/// A decomposed stack, reusable across compress settings.
#[derive(Debug, Clone)]
pub struct PreparedStack {
    pyramid: CoeffPyramid,
    slices: usize,
    values: usize,
    decompose_time: Duration,
}

impl PreparedStack {
    pub fn new(stack: &TemporalStack) -> Result<Self> {
        let start = Instant::now();
        let field = stack.to_field().pad_to_dyadic()?;
        let pyramid = decompose(&field)?;
        Ok(Self {
            pyramid,
            slices: stack.len(),
            values: stack.values(),
            decompose_time: start.elapsed(),
        })
    }

    pub fn pyramid(&self) -> &CoeffPyramid {
        &self.pyramid
    }

    /// ROI mask over the padded grid.
    pub fn detect(&self, refinement: &RefinementConfig) -> Result<RegionMask> {
        detect_rois(&coefficient_heatmap(&self.pyramid), refinement)
    }

    pub fn compress(&self, config: &CompressConfig) -> Result<Compressed> {
        let h = self.pyramid.hierarchy();
        // one-time calibration stays out of the timing
        let c_d = scale_factor(h.ndim())?;
        let start = Instant::now();
        let (bounds, zone) = match &config.regions {
            RegionSource::Uniform => {
                let b = BoundMap::uniform(config.tau0, config.norm)?;
                (b, dilate_buffer(&RegionMask::all_roi(h.dims()), 0, h)?)
            }
            regions => {
                let b = BoundMap::new(config.tau0, config.tau1, config.r_bz, config.norm, c_d)?;
                let mask = match regions {
                    RegionSource::Detect(rc) => self.detect(rc)?,
                    RegionSource::Mask(m) => pad_mask(m, self.pyramid.orig_dims(), h.dims())?,
                    RegionSource::Uniform => unreachable!(),
                };
                (b, dilate_buffer(&mask, config.r_bz, h)?)
            }
        };
        let detection = start.elapsed();

        let q = quantize(&self.pyramid, &zone, &bounds)?;
        let blob = encode(&q, self.slices, config.backend);
        let total = self.decompose_time + start.elapsed();

        let report = CompressReport {
            raw_bytes: self.values * config.source_dtype.size(),
            compressed_bytes: blob.len(),
            tau1_requested: config.tau1,
            tau1: bounds.tau1(),
            roi_nodes: zone.mask().count(Label::Roi),
            buffer_nodes: zone.mask().count(Label::Buffer),
            timing: Timing { detection, total },
        };
        Ok(Compressed { blob, report })
    }
}

/// Pads, decomposes, labels regions, quantizes and encodes.
pub fn compress(stack: &TemporalStack, config: &CompressConfig) -> Result<Compressed> {
    PreparedStack::new(stack)?.compress(config)
}

/// Serializes a quantized pyramid.
pub fn encode(q: &QuantizedPyramid, slices: usize, backend: Backend) -> CompressedBlob {
    CompressedBlob {
        header: BlobHeader {
            dims: q.dims().to_vec(),
            orig_dims: q.orig_dims().to_vec(),
            spacing: q.spacing().to_vec(),
            levels: levels_of(q.dims()),
            norm: q.bounds().norm(),
            tau0: q.bounds().tau0(),
            tau1: q.bounds().tau1(),
            r_bz: q.bounds().r_bz(),
            slices,
            backend,
            bin_protected: q.bins().protected,
            bin_background: q.bins().background,
        },
        mask_rle: q.mask().encode_rle(),
        payload: encode_symbols(q.values(), backend),
    }
}

fn levels_of(dims: &[usize]) -> usize {
    GridHierarchy::new(dims, &vec![1.0; dims.len()]).map_or(0, |h| h.levels())
}

/// Parses the mask and payload of a blob and rebuilds the protected sets.
pub fn decode(blob: &CompressedBlob) -> Result<QuantizedPyramid> {
    let hd = &blob.header;
    let h = GridHierarchy::new(&hd.dims, &hd.spacing)?;
    if h.levels() != hd.levels {
        return Err(Error::Framing(format!(
            "header says {} levels, dims give {}",
            hd.levels,
            h.levels()
        )));
    }
    let mask = RegionMask::decode_rle(&blob.mask_rle, &hd.dims)?;
    let zone = dilate_buffer(&mask, hd.r_bz, &h)?;
    if zone.mask() != &mask {
        return Err(Error::Framing("stored mask is not a dilated ROI mask".into()));
    }
    let q = decode_symbols(&blob.payload, hd.backend)?;
    if q.len() != mask.len() {
        return Err(Error::Framing(format!(
            "payload has {} coefficients, grid has {}",
            q.len(),
            mask.len()
        )));
    }
    let bounds = BoundMap::from_parts(hd.tau0, hd.tau1, hd.r_bz, hd.norm)?;
    Ok(QuantizedPyramid {
        q,
        zone,
        pyramid_dims: hd.dims.clone(),
        spacing: hd.spacing.clone(),
        orig_dims: hd.orig_dims.clone(),
        bounds,
        bins: BinWidths {
            protected: hd.bin_protected,
            background: hd.bin_background,
        },
    })
}

/// Reconstructs the padded field on the full dyadic grid.
pub fn decompress_padded(blob: &CompressedBlob) -> Result<Field> {
    Ok(recompose(&dequantize(&decode(blob)?)?))
}

pub fn decompress(blob: &CompressedBlob) -> Result<TemporalStack> {
    let field = decompress_padded(blob)?.crop_to_original();
    TemporalStack::from_field(&field, blob.header.slices)
}

/// Measured error per region class after a round trip.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorReport {
    pub max_roi: f64,
    pub max_buffer: f64,
    pub max_background: f64,
    pub rms_protected: f64,
    pub rms_background: f64,
    pub rms_total: f64,
}

impl ErrorReport {
    /// Largest error over ROI and BUFFER nodes.
    pub fn max_protected(&self) -> f64 {
        self.max_roi.max(self.max_buffer)
    }

    /// Whether the report meets `bounds` in its norm; the background check
    /// allows leakage of `c_d * tau1 * (2+√3)^-R_bz`.
    pub fn meets(&self, bounds: &BoundMap, c_d: f64) -> bool {
        let leak = c_d * bounds.tau1() * crate::kernel::DECAY_BASE.powi(-(bounds.r_bz() as i32));
        match bounds.norm() {
            NormMode::Max => {
                self.max_protected() <= bounds.tau0() && self.max_background <= bounds.tau1() + leak
            }
            NormMode::Rms => {
                self.rms_protected <= bounds.tau0() && self.rms_background <= bounds.tau1() + leak
            }
        }
    }
}

/// Compares `original` and `reconstructed` over the stored labels of `blob`
/// (both as stacked, cropped fields).
pub fn verify(original: &TemporalStack, blob: &CompressedBlob) -> Result<ErrorReport> {
    let recon = decompress(blob)?.to_field();
    let orig = original.to_field();
    if orig.dims() != recon.dims() {
        return Err(Error::ShapeMismatch("reconstruction dims differ".into()));
    }
    let mask = RegionMask::decode_rle(&blob.mask_rle, &blob.header.dims)?;
    let dims = blob.header.dims.clone();
    let mut idx = vec![0; dims.len()];
    let mut r = ErrorReport::default();
    let (mut sp, mut np, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (flat, (a, b)) in orig.data().iter().zip(recon.data()).enumerate() {
        unravel_into(flat, orig.dims(), &mut idx);
        let e = (a - b).abs();
        match mask.labels()[ravel(&idx, &dims)] {
            Label::Roi => r.max_roi = r.max_roi.max(e),
            Label::Buffer => r.max_buffer = r.max_buffer.max(e),
            Label::Background => r.max_background = r.max_background.max(e),
        }
        if mask.labels()[ravel(&idx, &dims)] == Label::Background {
            sb += e * e;
            nb += 1;
        } else {
            sp += e * e;
            np += 1;
        }
    }
    let rms = |s: f64, n: usize| if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
    r.rms_protected = rms(sp, np);
    r.rms_background = rms(sb, nb);
    r.rms_total = rms(sp + sb, np + nb);
    Ok(r)
}
