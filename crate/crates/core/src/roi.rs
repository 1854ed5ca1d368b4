//! Critical-region detection from multilevel coefficients.
//!
//! Detection works on a finest-grid heatmap of coefficient magnitudes and a
//! layered two-step refinement: each layer partitions the active area into
//! bins, tags bins above a global percentile of all bin scores, then rescues
//! cells that the global pass missed entirely with a per-cell percentile.
//! Tagged bins are re-partitioned by the next layer.
//!
//! Detected regions are then grown into buffer zones that decide which
//! coefficients are quantized with the tight bound.

use crate::error::{Error, Result};
use crate::field::{strides, Field, MAX_DIMS};
use crate::hierarchy::GridHierarchy;
use crate::kernel::DECAY_BASE;
use crate::mask::{Label, RegionMask};
use crate::transform::CoeffPyramid;

/// Finest-grid map of the largest `|coefficient|` over levels `l >= 1`,
/// each level contributing the value of its `N*_l` node nearest to `y`
/// (Euclidean index distance, ties to the lower flat index).
pub fn coefficient_heatmap(pyramid: &CoeffPyramid) -> Field {
    let h = pyramid.hierarchy();
    let dims = h.dims();
    let nd = dims.len();
    let fs = strides(dims);
    let coeffs = pyramid.coeffs();
    let n_last = dims[nd - 1];
    let mut heat = vec![0.0f64; coeffs.len()];
    let mut idx = vec![0usize; nd - 1];
    for l in 1..=h.levels() {
        let s = h.stride(l);
        let axes: Vec<AxisRounding> = (0..nd).map(|a| AxisRounding::new(dims[a], s, fs[a])).collect();
        let last = &axes[nd - 1];
        idx.iter_mut().for_each(|i| *i = 0);
        // rows sharing the rounded prefix pick identical nodes
        let mut picked = vec![0.0f64; n_last];
        let mut cached = None;
        for row in heat.chunks_exact_mut(n_last) {
            let mut off = 0;
            let mut odd = false;
            let mut best: Option<(usize, isize)> = None;
            for (a, &i) in idx.iter().enumerate() {
                off += axes[a].offset[i];
                odd |= axes[a].odd[i];
                let c = axes[a].step[i];
                if best.is_none_or(|b| closer(c, b)) {
                    best = Some(c);
                }
            }
            if odd && s == 1 {
                // every node of the row is its own pick
                for (out, c) in row.iter_mut().zip(&coeffs[off..off + n_last]) {
                    *out = out.max(c.abs());
                }
            } else if cached != Some((off, odd, best)) {
                cached = Some((off, odd, best));
                for (y, out) in picked.iter_mut().enumerate() {
                    let mut node = off + last.offset[y];
                    if !(odd || last.odd[y]) {
                        let c = last.step[y];
                        let pick = match best {
                            Some(b) if !closer(c, b) => b.1,
                            _ => c.1,
                        };
                        node = node.wrapping_add_signed(pick);
                    }
                    *out = coeffs[node].abs();
                }
            }
            if !(odd && s == 1) {
                for (out, &v) in row.iter_mut().zip(&picked) {
                    *out = out.max(v);
                }
            }
            for a in (0..nd - 1).rev() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
    Field::with_spacing(heat, dims, h.spacing()).expect("pyramid dims are valid")
}

/// Whether neighbour step `a` beats `b`: larger index offset from the
/// coarse node first, then the lower flat index.
fn closer(a: (usize, isize), b: (usize, isize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Per-axis rounding of finest indices onto the level grid of stride `s`.
struct AxisRounding {
    /// Flat offset of the rounded node.
    offset: Vec<usize>,
    /// Whether the rounded level index is odd.
    odd: Vec<bool>,
    /// `(|y - g s|, signed flat step)` to the neighbour along this axis
    /// that lies towards `y` (the lower one when `y` sits on the node).
    step: Vec<(usize, isize)>,
}

impl AxisRounding {
    fn new(n: usize, s: usize, stride: usize) -> Self {
        let mut r = Self {
            offset: Vec::with_capacity(n),
            odd: Vec::with_capacity(n),
            step: Vec::with_capacity(n),
        };
        for y in 0..n {
            let g = (y + (s - 1) / 2) / s;
            let delta = y as isize - (g * s) as isize;
            let dir = match delta.signum() {
                0 if g > 0 => -1,
                0 => 1,
                d => d,
            };
            r.offset.push(g * s * stride);
            r.odd.push(g % 2 == 1);
            r.step.push((delta.unsigned_abs(), dir * (s * stride) as isize));
        }
        r
    }
}

/// One refinement layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// Bin width in nodes, applied to every axis.
    pub bin_width: usize,
    /// Global percentile in `(0, 100)`.
    pub global_percentile: f64,
    /// Per-cell percentile in `(0, 100)`.
    pub local_percentile: f64,
}

impl LayerSpec {
    pub fn new(bin_width: usize, global_percentile: f64, local_percentile: f64) -> Self {
        Self {
            bin_width,
            global_percentile,
            local_percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementConfig {
    pub layers: Vec<LayerSpec>,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            layers: vec![LayerSpec::new(4, 90.0, 50.0), LayerSpec::new(2, 75.0, 50.0)],
        }
    }
}

/// Parses `width:global:local` layers separated by commas, coarsest first,
/// for example `16:95:99,8:90:99`.
impl std::str::FromStr for RefinementConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .map(|part| {
                let bad = || Error::Config(format!("bad layer '{part}', expected width:global:local"));
                let f: Vec<&str> = part.trim().split(':').collect();
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(LayerSpec::new(
                    f[0].parse().map_err(|_| bad())?,
                    f[1].parse().map_err(|_| bad())?,
                    f[2].parse().map_err(|_| bad())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let config = Self { layers };
        config.validate()?;
        Ok(config)
    }
}

impl RefinementConfig {
    pub fn single(bin_width: usize, global_percentile: f64, local_percentile: f64) -> Self {
        Self {
            layers: vec![LayerSpec::new(bin_width, global_percentile, local_percentile)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("refinement needs at least one layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bin_width == 0 {
                return Err(Error::Config(format!("layer {i}: bin width must be >= 1")));
            }
            for p in [layer.global_percentile, layer.local_percentile] {
                if !(p > 0.0 && p < 100.0) {
                    return Err(Error::Config(format!(
                        "layer {i}: percentile {p} outside (0, 100)"
                    )));
                }
            }
            if i > 0 && layer.bin_width > self.layers[i - 1].bin_width {
                return Err(Error::Config(format!(
                    "layer {i}: bin width {} exceeds the previous layer's {}",
                    layer.bin_width,
                    self.layers[i - 1].bin_width
                )));
            }
        }
        Ok(())
    }
}

/// Nearest-rank percentile of `values` (need not be sorted).
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    let k = rank.clamp(1, values.len()) - 1;
    // local cells are tiny; keep them off the heap
    let mut small = [0.0; 32];
    let mut large = Vec::new();
    let v = if values.len() <= small.len() {
        small[..values.len()].copy_from_slice(values);
        &mut small[..values.len()]
    } else {
        large.extend_from_slice(values);
        &mut large[..]
    };
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Axis-aligned half-open box of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bin {
    nd: usize,
    lo: [usize; MAX_DIMS],
    hi: [usize; MAX_DIMS],
}

impl Bin {
    fn new(lo: &[usize], hi: &[usize]) -> Self {
        let mut b = Bin { nd: lo.len(), lo: [0; MAX_DIMS], hi: [0; MAX_DIMS] };
        b.lo[..lo.len()].copy_from_slice(lo);
        b.hi[..hi.len()].copy_from_slice(hi);
        b
    }

    fn lo(&self) -> &[usize] {
        &self.lo[..self.nd]
    }

    fn hi(&self) -> &[usize] {
        &self.hi[..self.nd]
    }
}

/// Summed-volume table for O(2^d) box sums.
struct BoxSums {
    strides: Vec<usize>,
    table: Vec<f64>,
}

impl BoxSums {
    fn new(values: &[f64], dims: &[usize]) -> Self {
        let ext: Vec<usize> = dims.iter().map(|n| n + 1).collect();
        let es = strides(&ext);
        let mut table = vec![0.0; ext.iter().product()];
        // rows are copied as running sums, which covers the last axis
        for_each_row(dims, &vec![0; dims.len()], dims, |flat, idx| {
            let pos: usize = idx.iter().zip(&es).map(|(&i, &s)| (i + 1) * s).sum::<usize>() + 1;
            let n = dims[dims.len() - 1];
            let mut acc = 0.0;
            for (t, v) in table[pos..pos + n].iter_mut().zip(&values[flat..flat + n]) {
                acc += v;
                *t = acc;
            }
        });
        for a in 0..ext.len() - 1 {
            let inner = es[a];
            let block = ext[a] * inner;
            for chunk in table.chunks_exact_mut(block) {
                for k in 1..ext[a] {
                    let (done, rest) = chunk.split_at_mut(k * inner);
                    let prev = &done[(k - 1) * inner..];
                    for (t, p) in rest[..inner].iter_mut().zip(prev) {
                        *t += p;
                    }
                }
            }
        }
        Self { strides: es, table }
    }

    fn sum(&self, bin: &Bin) -> f64 {
        let d = bin.nd;
        let mut lo = [0; MAX_DIMS];
        let mut hi = [0; MAX_DIMS];
        for a in 0..d {
            lo[a] = bin.lo[a] * self.strides[a];
            hi[a] = bin.hi[a] * self.strides[a];
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut pos = 0;
            for a in 0..d {
                pos += if corner >> a & 1 == 1 { lo[a] } else { hi[a] };
            }
            // an odd number of low corners subtracts
            if corner.count_ones() & 1 == 1 {
                total -= self.table[pos];
            } else {
                total += self.table[pos];
            }
        }
        total
    }
}

/// Calls `f(flat, prefix)` for every row of the box `[lo, hi)` of a grid
/// with `dims`, where `flat` is the row's first node and `prefix` its
/// indices along all but the last axis.
fn for_each_row(dims: &[usize], lo: &[usize], hi: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let nd = dims.len();
    if lo.iter().zip(hi).any(|(l, h)| l >= h) {
        return;
    }
    let mut fs = [1; MAX_DIMS];
    for a in (0..nd - 1).rev() {
        fs[a] = fs[a + 1] * dims[a + 1];
    }
    let mut idx = [0; MAX_DIMS];
    idx[..nd - 1].copy_from_slice(&lo[..nd - 1]);
    let idx = &mut idx[..nd - 1];
    loop {
        let flat: usize = idx.iter().zip(&fs).map(|(&i, &s)| i * s).sum::<usize>() + lo[nd - 1];
        f(flat, idx);
        let mut a = nd - 1;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < hi[a] {
                break;
            }
            idx[a] = lo[a];
        }
    }
}

/// Splits `region` into bins of `width` nodes per axis; partial bins at the
/// high end are kept. Also returns each bin's grid coordinates.
fn partition(region: &Bin, width: usize, mut f: impl FnMut(Bin, &[usize])) {
    let nd = region.nd;
    let mut counts = [0; MAX_DIMS];
    for a in 0..nd {
        counts[a] = (region.hi[a] - region.lo[a]).div_ceil(width);
        if counts[a] == 0 {
            return;
        }
    }
    let mut g = [0; MAX_DIMS];
    loop {
        let mut bin = *region;
        for a in 0..nd {
            bin.lo[a] = region.lo[a] + g[a] * width;
            bin.hi[a] = (bin.lo[a] + width).min(region.hi[a]);
        }
        f(bin, &g[..nd]);
        let mut a = nd;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            g[a] += 1;
            if g[a] < counts[a] {
                break;
            }
            g[a] = 0;
        }
    }
}

/// Runs the global and local passes of one layer. Bins are grouped by
/// parent cell: cell `c` owns `scores[ends[c - 1]..ends[c]]`.
fn tag_layer(scores: &[f64], ends: &[usize], layer: &LayerSpec) -> Vec<bool> {
    let mut tagged = vec![false; scores.len()];
    if scores.is_empty() {
        return tagged;
    }
    let global = nearest_rank(scores, layer.global_percentile);
    for (t, &s) in tagged.iter_mut().zip(scores) {
        *t = s > 0.0 && s >= global;
    }
    let mut start = 0;
    for &end in ends {
        let cell = start..end;
        start = end;
        if cell.is_empty() || tagged[cell.clone()].iter().any(|&t| t) {
            continue;
        }
        let local = nearest_rank(&scores[cell.clone()], layer.local_percentile);
        for b in cell {
            tagged[b] = scores[b] > 0.0 && scores[b] >= local;
        }
    }
    tagged
}

/// Two-step layered refinement over a heatmap. Returns a mask with ROI and
/// background labels only.
pub fn detect_rois(heat: &Field, config: &RefinementConfig) -> Result<RegionMask> {
    config.validate()?;
    let dims = heat.dims();
    let sums = if heat.data().iter().all(|&v| v >= 0.0) {
        BoxSums::new(heat.data(), dims)
    } else {
        let magnitudes: Vec<f64> = heat.data().iter().map(|v| v.abs()).collect();
        BoxSums::new(&magnitudes, dims)
    };
    let domain = Bin::new(&vec![0; dims.len()], dims);

    // layer 1: parent cells group 2 x ... x 2 neighbouring bins
    let first = &config.layers[0];
    let cell_counts: Vec<usize> = dims
        .iter()
        .map(|&n| n.div_ceil(first.bin_width).div_ceil(2))
        .collect();
    let mut cells = vec![Vec::new(); cell_counts.iter().product()];
    partition(&domain, first.bin_width, |b, g| {
        let c = g.iter().zip(&cell_counts).fold(0, |acc, (&i, &n)| acc * n + i / 2);
        cells[c].push(b);
    });
    let mut ends = Vec::with_capacity(cells.len());
    let mut bins = Vec::new();
    for cell in cells {
        bins.extend(cell);
        ends.push(bins.len());
    }

    let mut layers = config.layers.iter();
    loop {
        let layer = layers.next().expect("validated non-empty");
        let scores: Vec<f64> = bins.iter().map(|b| sums.sum(b)).collect();
        let tagged = tag_layer(&scores, &ends, layer);
        let active = bins.iter().zip(&tagged).filter(|(_, &t)| t).map(|(b, _)| b);
        let Some(next) = layers.as_slice().first() else {
            bins = active.copied().collect();
            break;
        };
        let mut children = Vec::with_capacity(bins.len());
        ends.clear();
        for parent in active {
            partition(parent, next.bin_width, |b, _| children.push(b));
            ends.push(children.len());
        }
        bins = children;
    }

    let mut roi = vec![false; heat.len()];
    let nd = dims.len();
    for bin in &bins {
        let width = bin.hi[nd - 1] - bin.lo[nd - 1];
        for_each_row(dims, bin.lo(), bin.hi(), |flat, _| {
            roi[flat..flat + width].iter_mut().for_each(|r| *r = true);
        });
    }
    RegionMask::from_roi(&roi, dims)
}

/// Exact Chebyshev (chessboard) distance in nodes to the nearest `true`
/// entry; `u32::MAX` when there is none.
///
/// Two raster passes over a grid padded by one node per side, each
/// relaxing against the half of the `3^d - 1` neighbours already visited.
pub fn chessboard_distance(seeds: &[bool], dims: &[usize]) -> Vec<u32> {
    const INF: u32 = u32::MAX / 2;
    if !seeds.iter().any(|&s| s) {
        return vec![u32::MAX; seeds.len()];
    }
    let nd = dims.len();
    assert!(nd <= MAX_DIMS, "at most {MAX_DIMS} axes");
    // one cell of INF padding on every side keeps the sweeps branch-free
    let pdims: Vec<usize> = dims.iter().map(|n| n + 2).collect();
    let ps = strides(&pdims);
    let n_last = dims[nd - 1];
    let (n0, n1) = match nd {
        1 => (1, 1),
        2 => (1, dims[0]),
        _ => (dims[0], dims[1]),
    };
    let base = |i0: usize, i1: usize| match nd {
        1 => 1,
        2 => (i1 + 1) * ps[0] + 1,
        _ => (i0 + 1) * ps[0] + (i1 + 1) * ps[1] + 1,
    };
    // step to the neighbouring row along the middle and outer prefix axes
    let (s1, s0) = match nd {
        1 => (0, 0),
        2 => (ps[0], 0),
        _ => (ps[1], ps[0]),
    };

    let total: usize = pdims.iter().product();
    let mut dist = vec![INF; total];
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            let (b, r) = (base(i0, i1), i0 * n1 + i1);
            for (d, &s) in dist[b..b + n_last].iter_mut().zip(&seeds[r * n_last..(r + 1) * n_last]) {
                if s {
                    *d = 0;
                }
            }
        }
    }
    // w1: 3-wide minimum along the last axis of finished rows; w2: the
    // 3x3 minimum over the middle and last axes of finished planes
    let mut w1 = vec![INF; total];
    let mut w2 = if nd == 3 { vec![INF; total] } else { Vec::new() };
    let mut near = vec![INF; n_last];
    for forward in [true, false] {
        let dir: isize = if forward { 1 } else { -1 };
        let order = |n: usize, k: usize| if forward { k } else { n - 1 - k };
        for k0 in 0..n0 {
            let i0 = order(n0, k0);
            for k1 in 0..n1 {
                let i1 = order(n1, k1);
                let b = base(i0, i1);
                match nd {
                    1 => near.fill(INF),
                    2 => near.copy_from_slice(&w1[b.wrapping_add_signed(-dir * s1 as isize)..][..n_last]),
                    _ => {
                        let outer = &w2[b.wrapping_add_signed(-dir * s0 as isize)..][..n_last];
                        let middle = &w1[b.wrapping_add_signed(-dir * s1 as isize)..][..n_last];
                        for ((m, &o), &i) in near.iter_mut().zip(outer).zip(middle) {
                            *m = o.min(i);
                        }
                    }
                }
                let row = &mut dist[b..b + n_last];
                for (d, &m) in row.iter_mut().zip(near.iter()) {
                    *d = (*d).min(m + 1);
                }
                let mut prev = INF;
                let mut scan = |d: &mut u32| {
                    prev = (*d).min(prev + 1);
                    *d = prev;
                };
                if forward {
                    row.iter_mut().for_each(&mut scan);
                } else {
                    row.iter_mut().rev().for_each(&mut scan);
                }
                let full = &dist[b - 1..b + n_last + 1];
                for (w, t) in w1[b..b + n_last].iter_mut().zip(full.windows(3)) {
                    *w = t[0].min(t[1]).min(t[2]);
                }
            }
            if nd == 3 {
                for i1 in 0..n1 {
                    let b = base(i0, i1);
                    let (lo, mid, hi) = (&w1[b - s1..][..n_last], &w1[b..][..n_last], &w1[b + s1..][..n_last]);
                    for (((w, &x), &y), &z) in w2[b..b + n_last].iter_mut().zip(lo).zip(mid).zip(hi) {
                        *w = x.min(y).min(z);
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(seeds.len());
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            let b = base(i0, i1);
            out.extend_from_slice(&dist[b..b + n_last]);
        }
    }
    out
}

/// ROI mask grown by a buffer zone, plus the coefficients quantized with
/// the tight bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferZone {
    mask: RegionMask,
    protected: Vec<bool>,
    r_bz: usize,
}

impl BufferZone {
    /// Finest-grid labels: ROI, BUFFER and background.
    pub fn mask(&self) -> &RegionMask {
        &self.mask
    }

    /// One flag per finest node: whether the coefficient stored there (at
    /// the node's own level) is protected.
    pub fn protected(&self) -> &[bool] {
        &self.protected
    }

    pub fn r_bz(&self) -> usize {
        self.r_bz
    }

    /// Protected nodes belonging to level `l`.
    pub fn protected_at_level(&self, h: &GridHierarchy, l: usize) -> Vec<usize> {
        let levels = h.level_map();
        self.protected
            .iter()
            .zip(&levels)
            .enumerate()
            .filter_map(|(i, (&p, &lv))| (p && lv as usize == l).then_some(i))
            .collect()
    }
}

/// Finest-grid radius (in nodes) of the BUFFER shell: `R_bz` spacings of level `L-1`.
pub fn buffer_radius(r_bz: usize) -> usize {
    2 * r_bz
}

/// Radius around the ROI within which level-`l` coefficients are protected:
/// `R_bz` level-`(l-1)` spacings beyond the BUFFER shell.
pub fn protection_radius(h: &GridHierarchy, l: usize, r_bz: usize) -> usize {
    r_bz * 2 * h.stride(l) + buffer_radius(r_bz)
}

/// Grows the ROI labels of `mask` into a buffer zone of width `r_bz`.
///
/// Existing BUFFER labels in `mask` are ignored, so the operation is
/// idempotent. Coarsest-level (`N_0`) coefficients are always protected.
pub fn dilate_buffer(mask: &RegionMask, r_bz: usize, h: &GridHierarchy) -> Result<BufferZone> {
    if mask.dims() != h.dims() {
        return Err(Error::ShapeMismatch(format!(
            "mask dims {:?} vs grid {:?}",
            mask.dims(),
            h.dims()
        )));
    }
    let roi = mask.roi();
    let dist = chessboard_distance(&roi, h.dims());
    let shell = buffer_radius(r_bz) as u32;
    let labels: Vec<Label> = roi
        .iter()
        .zip(&dist)
        .map(|(&r, &d)| match (r, d) {
            (true, _) => Label::Roi,
            (false, d) if r_bz > 0 && d <= shell => Label::Buffer,
            _ => Label::Background,
        })
        .collect();
    let radii: Vec<u32> = (0..=h.levels())
        .map(|l| if l == 0 { u32::MAX } else { protection_radius(h, l, r_bz) as u32 })
        .collect();
    let protected = h
        .level_map()
        .iter()
        .zip(&dist)
        .map(|(&l, &d)| l == 0 || d <= radii[l as usize])
        .collect();
    Ok(BufferZone {
        mask: RegionMask::new(labels, h.dims())?,
        protected,
        r_bz,
    })
}

/// Error norm the bounds refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Pointwise bound, guaranteed.
    Max,
    /// Root-mean-square target, best effort.
    Rms,
}

impl NormMode {
    pub fn code(self) -> u8 {
        match self {
            NormMode::Max => 0,
            NormMode::Rms => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(NormMode::Max),
            1 => Ok(NormMode::Rms),
            _ => Err(Error::Framing(format!("unknown norm mode {c}"))),
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" | "linf" => Ok(NormMode::Max),
            "rms" | "l2" => Ok(NormMode::Rms),
            other => Err(Error::Config(format!("unknown norm '{other}'"))),
        }
    }
}

/// Largest background bound compatible with `tau0` and a buffer of `r_bz`
/// coarse spacings: `min(requested, (2+√3)^r_bz · tau0 / c_d)`, never below `tau0`.
pub fn derive_tau1(tau0: f64, r_bz: usize, c_d: f64, requested: f64) -> Result<f64> {
    if !(tau0 > 0.0) || !tau0.is_finite() {
        return Err(Error::Config(format!("tau0 must be positive, got {tau0}")));
    }
    if !(c_d > 0.0) {
        return Err(Error::Config(format!("scale factor must be positive, got {c_d}")));
    }
    let cap = tau1_cap(tau0, r_bz, c_d);
    Ok(requested.min(cap).max(tau0))
}

pub fn tau1_cap(tau0: f64, r_bz: usize, c_d: f64) -> f64 {
    DECAY_BASE.powi(r_bz as i32) * tau0 / c_d
}

/// Error bounds for the two region classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundMap {
    tau0: f64,
    tau1: f64,
    r_bz: usize,
    norm: NormMode,
}

impl BoundMap {
    /// Validates `requested_tau1 >= tau0` and applies the [`derive_tau1`] cap.
    pub fn new(tau0: f64, requested_tau1: f64, r_bz: usize, norm: NormMode, c_d: f64) -> Result<Self> {
        if requested_tau1 < tau0 {
            return Err(Error::Config(format!(
                "tau1 ({requested_tau1}) must not be below tau0 ({tau0})"
            )));
        }
        let tau1 = derive_tau1(tau0, r_bz, c_d, requested_tau1)?;
        Ok(Self {
            tau0,
            tau1,
            r_bz,
            norm,
        })
    }

    /// Same bound everywhere.
    pub fn uniform(tau: f64, norm: NormMode) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            tau0: tau,
            tau1: tau,
            r_bz: 0,
            norm,
        })
    }

    /// Rebuilds stored bounds without re-deriving the cap.
    pub(crate) fn from_parts(tau0: f64, tau1: f64, r_bz: usize, norm: NormMode) -> Result<Self> {
        if !(tau0 > 0.0) || !(tau1 >= tau0) {
            return Err(Error::Framing(format!("invalid bounds tau0={tau0} tau1={tau1}")));
        }
        Ok(Self {
            tau0,
            tau1,
            r_bz,
            norm,
        })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn r_bz(&self) -> usize {
        self.r_bz
    }

    pub fn norm(&self) -> NormMode {
        self.norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::unravel_into;
    use proptest::prelude::*;

    #[test]
    fn layer_specs_parse() {
        let rc: RefinementConfig = "16:95:99, 8:90:99".parse().unwrap();
        assert_eq!(rc.layers, vec![LayerSpec::new(16, 95.0, 99.0), LayerSpec::new(8, 90.0, 99.0)]);
        assert!("4:90".parse::<RefinementConfig>().is_err());
        assert!("2:90:50,4:90:50".parse::<RefinementConfig>().is_err());
        assert!("4:100:50".parse::<RefinementConfig>().is_err());
    }
    use crate::field::ravel;
    use crate::transform::decompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-node evaluation of the heatmap rule.
    fn reference_heatmap(pyramid: &CoeffPyramid) -> Field {
        let h = pyramid.hierarchy();
        let dims = h.dims();
        let fs = strides(dims);
        let coeffs = pyramid.coeffs();
        let n = coeffs.len();
        let ndim = dims.len();
        let mut heat = vec![0.0f64; n];
        let mut y = vec![0usize; ndim];
        let mut g = vec![0usize; ndim];
        for l in 1..=h.levels() {
            let s = h.stride(l);
            let ldims = h.level_dims(l);
            for (flat, out) in heat.iter_mut().enumerate() {
                unravel_into(flat, dims, &mut y);
                for a in 0..ndim {
                    g[a] = (y[a] + (s - 1) / 2) / s;
                }
                let node = if g.iter().any(|&i| i % 2 == 1) {
                    Some(g.iter().zip(&fs).map(|(&i, &st)| i * s * st).sum::<usize>())
                } else {
                    nearest_fine_neighbor(&y, &g, &ldims, s, &fs)
                };
                if let Some(node) = node {
                    *out = out.max(coeffs[node].abs());
                }
            }
        }
        Field::with_spacing(heat, dims, h.spacing()).expect("pyramid dims are valid")
    }

    /// `g` is a level-`l` node on the coarser grid; return the closest of its
    /// axis neighbours, which all lie in `N*_l`.
    fn nearest_fine_neighbor(
        y: &[usize],
        g: &[usize],
        ldims: &[usize],
        s: usize,
        fs: &[usize],
    ) -> Option<usize> {
        let base: usize = g.iter().zip(fs).map(|(&i, &st)| i * s * st).sum();
        let dist2_base: i64 = y
            .iter()
            .zip(g)
            .map(|(&yi, &gi)| {
                let d = yi as i64 - (gi * s) as i64;
                d * d
            })
            .sum();
        let mut best: Option<(i64, usize)> = None;
        for a in 0..y.len() {
            let ga = (g[a] * s) as i64;
            let ya = y[a] as i64;
            let old = (ya - ga) * (ya - ga);
            for step in [-1i64, 1] {
                let gi = g[a] as i64 + step;
                if gi < 0 || gi >= ldims[a] as i64 {
                    continue;
                }
                let pos = gi * s as i64;
                let d2 = dist2_base - old + (ya - pos) * (ya - pos);
                let flat = (base as i64 + step * (s * fs[a]) as i64) as usize;
                let better = match best {
                    None => true,
                    Some((bd, bf)) => d2 < bd || (d2 == bd && flat < bf),
                };
                if better {
                    best = Some((d2, flat));
                }
            }
        }
        best.map(|(_, f)| f)
    }

    #[test]
    fn heatmap_matches_direct_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for dims in [vec![17], vec![9, 9], vec![17, 5], vec![5, 9, 17], vec![9, 9, 9]] {
            let h = GridHierarchy::new(&dims, &vec![1.0; dims.len()]).unwrap();
            let n = dims.iter().product();
            let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = CoeffPyramid::new(coeffs, h).unwrap();
            assert_eq!(coefficient_heatmap(&p), reference_heatmap(&p), "{dims:?}");
        }
    }

    #[test]
    fn heatmap_of_constant_is_zero() {
        let f = Field::from_fn(&[17, 9], |_| 2.0).unwrap();
        let heat = coefficient_heatmap(&decompose(&f).unwrap());
        assert!(heat.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn heatmap_single_coefficient_footprint() {
        let h = GridHierarchy::new(&[17, 17], &[1.0, 1.0]).unwrap();
        let mut p = CoeffPyramid::zeros(h.clone());
        // level-3 node (odd level index along axis 0, stride 2)
        let x = [6usize, 8];
        assert_eq!(h.node_level(&x), 3);
        p.coeffs_mut()[ravel(&x, &[17, 17])] = -1.5;
        let heat = coefficient_heatmap(&p);
        // brute force: y maps to x when x is the nearest level-3 fine node
        for i in 0..17 {
            for j in 0..17 {
                let mut best = (i64::MAX, usize::MAX);
                for gi in (0..17).step_by(2) {
                    for gj in (0..17).step_by(2) {
                        if h.node_level(&[gi, gj]) != 3 {
                            continue;
                        }
                        let d = (i as i64 - gi as i64).pow(2) + (j as i64 - gj as i64).pow(2);
                        let flat = gi * 17 + gj;
                        if d < best.0 || (d == best.0 && flat < best.1) {
                            best = (d, flat);
                        }
                    }
                }
                let expect = if best.1 == ravel(&x, &[17, 17]) { 1.5 } else { 0.0 };
                assert_eq!(heat.get(&[i, j]), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn heatmap_argmax_near_largest_detail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Field::from_fn(&[33, 33], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let p = decompose(&f).unwrap();
        let levels = p.hierarchy().level_map();
        let (argmax_coeff, _) = p
            .coeffs()
            .iter()
            .zip(&levels)
            .enumerate()
            .filter(|(_, (_, &l))| l >= 1)
            .fold((0, 0.0), |acc, (i, (c, _))| if c.abs() > acc.1 { (i, c.abs()) } else { acc });
        let heat = coefficient_heatmap(&p);
        let argmax_heat = heat
            .data()
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        let a = crate::field::unravel(argmax_coeff, &[33, 33]);
        let b = crate::field::unravel(argmax_heat, &[33, 33]);
        assert!(a.iter().zip(&b).all(|(x, y)| x.abs_diff(*y) <= 1), "{a:?} {b:?}");
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(nearest_rank(&v, 20.0), 1.0);
        assert_eq!(nearest_rank(&v, 50.0), 3.0);
        assert_eq!(nearest_rank(&v, 99.0), 5.0);
        assert_eq!(nearest_rank(&v, 0.1), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(RefinementConfig::default().validate().is_ok());
        assert!(RefinementConfig { layers: vec![] }.validate().is_err());
        assert!(RefinementConfig::single(0, 50.0, 50.0).validate().is_err());
        assert!(RefinementConfig::single(2, 100.0, 50.0).validate().is_err());
        let grow = RefinementConfig {
            layers: vec![LayerSpec::new(2, 50.0, 50.0), LayerSpec::new(4, 50.0, 50.0)],
        };
        assert!(grow.validate().is_err());
    }

    #[test]
    fn zero_heat_gives_empty_mask() {
        let heat = Field::zeros(&[16, 16]).unwrap();
        let m = detect_rois(&heat, &RefinementConfig::default()).unwrap();
        assert_eq!(m.count(Label::Roi), 0);
    }

    #[test]
    fn spike_tags_its_bin() {
        let mut heat = Field::zeros(&[17, 17]).unwrap();
        heat.data_mut()[ravel(&[9, 6], &[17, 17])] = 3.0;
        let m = detect_rois(&heat, &RefinementConfig::single(4, 99.0, 99.0)).unwrap();
        let roi = m.roi();
        for i in 0..17 {
            for j in 0..17 {
                let inside = (8..12).contains(&i) && (4..8).contains(&j);
                assert_eq!(roi[i * 17 + j], inside);
            }
        }
    }

    #[test]
    fn bin_wider_than_domain_is_single_bin() {
        let mut heat = Field::zeros(&[5, 5]).unwrap();
        heat.data_mut()[3] = 1.0;
        let m = detect_rois(&heat, &RefinementConfig::single(64, 50.0, 50.0)).unwrap();
        assert_eq!(m.count(Label::Roi), 25);
    }

    #[test]
    fn local_pass_rescues_weak_cluster() {
        // two clusters in different parent cells; strong one is 10x stronger
        let dims = [32, 32];
        let heat = Field::from_fn(&dims, |i| {
            let strong = i[0] < 8 && i[1] < 8;
            let weak = (20..28).contains(&i[0]) && (20..28).contains(&i[1]);
            if strong {
                10.0 + (i[0] + i[1]) as f64 * 0.01
            } else if weak {
                1.0 + (i[0] * i[1]) as f64 * 0.001
            } else {
                0.0
            }
        })
        .unwrap();
        let cfg = RefinementConfig::single(4, 95.0, 50.0);
        // direct computation: bin scores and the global threshold
        let mut scores = Vec::new();
        for bi in 0..8 {
            for bj in 0..8 {
                let mut s = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        s += heat.get(&[bi * 4 + i, bj * 4 + j]);
                    }
                }
                scores.push(s);
            }
        }
        let global = nearest_rank(&scores, 95.0);
        assert!(global > 16.0 * 1.1, "global threshold only admits strong bins");
        let m = detect_rois(&heat, &cfg).unwrap();
        let roi = m.roi();
        let weak_tagged = (20..28).any(|i| (20..28).any(|j| roi[i * 32 + j]));
        let strong_tagged = (0..8).any(|i| (0..8).any(|j| roi[i * 32 + j]));
        assert!(strong_tagged && weak_tagged);
    }

    #[test]
    fn raising_global_percentile_never_grows_global_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let heat = Field::from_fn(&[33, 33], |_| rng.gen_range(0.0f64..1.0).powi(4)).unwrap();
        let sums = BoxSums::new(heat.data(), &[33, 33]);
        let mut scores = Vec::new();
        partition(&Bin::new(&[0, 0], &[33, 33]), 3, |b, _| scores.push(sums.sum(&b)));
        let mut prev = vec![true; scores.len()];
        for p in [10.0, 30.0, 50.0, 70.0, 90.0, 99.0] {
            let tagged = tag_layer(&scores, &[], &LayerSpec::new(3, p, 50.0));
            assert!(tagged.iter().zip(&prev).all(|(&t, &q)| !t || q));
            prev = tagged;
        }
    }

    #[test]
    fn box_sums_match_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = [7, 5, 6];
        let f = Field::from_fn(&dims, |_| rng.gen_range(0.0..1.0)).unwrap();
        let sums = BoxSums::new(f.data(), &dims);
        let bin = Bin::new(&[1, 0, 2], &[5, 3, 6]);
        let mut direct = 0.0;
        for i in 1..5 {
            for j in 0..3 {
                for k in 2..6 {
                    direct += f.get(&[i, j, k]);
                }
            }
        }
        assert!((sums.sum(&bin) - direct).abs() < 1e-12);
    }

    #[test]
    fn chessboard_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dims in [vec![23], vec![9, 13], vec![9, 7, 5], vec![4, 11, 6]] {
            for density in [0.005, 0.03, 0.3] {
                let n: usize = dims.iter().product();
                let seeds: Vec<bool> = (0..n).map(|_| rng.gen_bool(density)).collect();
                let dist = chessboard_distance(&seeds, &dims);
                let pts: Vec<Vec<usize>> = (0..n)
                    .filter(|&i| seeds[i])
                    .map(|i| crate::field::unravel(i, &dims))
                    .collect();
                for flat in 0..n {
                    let y = crate::field::unravel(flat, &dims);
                    let brute = pts
                        .iter()
                        .map(|z| z.iter().zip(&y).map(|(a, b)| a.abs_diff(*b)).max().unwrap())
                        .min()
                        .map_or(u32::MAX, |d| d as u32);
                    assert_eq!(dist[flat], brute, "{dims:?} at {y:?}");
                }
            }
        }
    }

    #[test]
    fn zero_width_adds_no_buffer() {
        let h = GridHierarchy::new(&[17, 17], &[1.0, 1.0]).unwrap();
        let mut roi = vec![false; 289];
        roi[8 * 17 + 8] = true;
        let z = dilate_buffer(&RegionMask::from_roi(&roi, &[17, 17]).unwrap(), 0, &h).unwrap();
        assert_eq!(z.mask().count(Label::Buffer), 0);
        assert_eq!(z.mask().count(Label::Roi), 1);
    }

    #[test]
    fn protected_sets_by_level_1d() {
        let h = GridHierarchy::new(&[65], &[1.0]).unwrap();
        let mut roi = vec![false; 65];
        roi[31] = true;
        let r_bz = 2;
        let z = dilate_buffer(&RegionMask::from_roi(&roi, &[65]).unwrap(), r_bz, &h).unwrap();
        // direct enumeration: buffer shell of 2*R_bz nodes, level-l protection
        // reaches R_bz level-(l-1) spacings past it
        for (y, label) in z.mask().labels().iter().enumerate() {
            let d = y.abs_diff(31);
            let expect = if d == 0 {
                Label::Roi
            } else if d <= 2 * r_bz {
                Label::Buffer
            } else {
                Label::Background
            };
            assert_eq!(*label, expect, "node {y}");
        }
        for l in 1..=h.levels() {
            let reach = r_bz * 2 * h.stride(l) + 2 * r_bz;
            for y in h.level_indices(l, 0) {
                if h.node_level(&[y]) != l {
                    continue;
                }
                assert_eq!(z.protected()[y], y.abs_diff(31) <= reach, "level {l} node {y}");
            }
        }
        assert_eq!(h.levels(), 6);
        let finest: Vec<usize> = z.protected_at_level(&h, 6);
        assert!(finest.iter().all(|&y| y.abs_diff(31) <= 8));
        let level1 = z.protected_at_level(&h, 1);
        assert!(level1.iter().all(|&y| y.abs_diff(31) <= 2 * (1 << 6) + 4));
        assert!(z.protected_at_level(&h, 0).len() == 2);
    }

    #[test]
    fn dilation_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = GridHierarchy::new(&[33, 17], &[1.0, 1.0]).unwrap();
        let roi: Vec<bool> = (0..33 * 17).map(|_| rng.gen_bool(0.02)).collect();
        let once = dilate_buffer(&RegionMask::from_roi(&roi, &[33, 17]).unwrap(), 2, &h).unwrap();
        let twice = dilate_buffer(once.mask(), 2, &h).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn tau1_cap_cases() {
        assert_eq!(derive_tau1(1e-3, 0, 1.0, 1.0).unwrap(), 1e-3);
        let cap = derive_tau1(1e-3, 2, 1.0, 1e6).unwrap();
        assert!((cap - 1.3928203230275509e-2).abs() < 1e-15);
        assert_eq!(derive_tau1(1e-3, 2, 1.0, 5e-3).unwrap(), 5e-3);
        assert!(derive_tau1(0.0, 1, 1.0, 1.0).is_err());
        assert!(derive_tau1(-1.0, 1, 1.0, 1.0).is_err());
        // never below tau0
        assert_eq!(derive_tau1(1e-3, 0, 2.0, 1.0).unwrap(), 1e-3);
    }

    #[test]
    fn bound_map_rejects_inverted_bounds() {
        assert!(BoundMap::new(1e-2, 1e-3, 1, NormMode::Max, 0.5).is_err());
        let b = BoundMap::new(1e-3, 1.0, 1, NormMode::Max, 0.5).unwrap();
        assert!((b.tau1() - DECAY_BASE * 1e-3 / 0.5).abs() < 1e-15);
    }

    fn heat_2d() -> impl Strategy<Value = Field> {
        (3usize..24, 3usize..24, any::<u64>()).prop_map(|(a, b, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // sparse spikes on zeros, so ties and empty cells both occur
            Field::from_fn(&[a, b], |_| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { 0.0 }).unwrap()
        })
    }

    proptest! {
        #[test]
        fn global_pass_monotone(heat in heat_2d(), w in 1usize..5, p in 1.0f64..98.0, dp in 0.5f64..40.0) {
            let sums = BoxSums::new(heat.data(), heat.dims());
            let mut scores = Vec::new();
            partition(&Bin::new(&[0, 0], heat.dims()), w, |b, _| scores.push(sums.sum(&b)));
            let low = tag_layer(&scores, &[], &LayerSpec::new(w, p, 50.0));
            let high = tag_layer(&scores, &[], &LayerSpec::new(w, (p + dp).min(99.9), 50.0));
            prop_assert!(high.iter().zip(&low).all(|(&h, &l)| !h || l));
        }

        #[test]
        fn every_nonzero_cell_keeps_a_bin(heat in heat_2d(), w in 1usize..4, p in 50.0f64..99.9) {
            let roi = detect_rois(&heat, &RefinementConfig::single(w, p, 99.0)).unwrap().roi();
            let dims = heat.dims();
            for ci in (0..dims[0]).step_by(2 * w) {
                for cj in (0..dims[1]).step_by(2 * w) {
                    let cell = |f: &dyn Fn(usize) -> bool| {
                        (ci..(ci + 2 * w).min(dims[0])).any(|i| (cj..(cj + 2 * w).min(dims[1])).any(|j| f(i * dims[1] + j)))
                    };
                    if cell(&|k| heat.data()[k] > 0.0) {
                        prop_assert!(cell(&|k| roi[k]));
                    }
                }
            }
        }

        #[test]
        fn later_layers_refine_earlier_ones(heat in heat_2d(), p in 30.0f64..95.0) {
            let first = LayerSpec::new(4, p, 50.0);
            let coarse = detect_rois(&heat, &RefinementConfig { layers: vec![first.clone()] }).unwrap().roi();
            let fine = detect_rois(&heat, &RefinementConfig { layers: vec![first, LayerSpec::new(2, 60.0, 50.0)] })
                .unwrap()
                .roi();
            prop_assert!(fine.iter().zip(&coarse).all(|(&f, &c)| !f || c));
        }

        #[test]
        fn dilation_idempotent(heat in heat_2d(), r_bz in 0usize..4) {
            let dims = [17, 17];
            let roi: Vec<bool> = (0..289).map(|k| heat.data().get(k).is_some_and(|&v| v > 0.5)).collect();
            let h = GridHierarchy::new(&dims, &[1.0, 1.0]).unwrap();
            let once = dilate_buffer(&RegionMask::from_roi(&roi, &dims).unwrap(), r_bz, &h).unwrap();
            let twice = dilate_buffer(once.mask(), r_bz, &h).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
