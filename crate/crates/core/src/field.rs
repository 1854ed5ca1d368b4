//! N-dimensional field container, dyadic padding and raw I/O.
//!
//! Data is stored flat in C order (last axis fastest). All arithmetic is
//! done in `f64`; 32-bit inputs are widened on load.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Largest supported number of axes.
pub const MAX_DIMS: usize = 3;

/// A scalar field sampled on a uniform tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    data: Vec<f64>,
    dims: Vec<usize>,
    spacing: Vec<f64>,
    orig_dims: Vec<usize>,
}

impl Field {
    /// Builds a field with unit spacing.
    pub fn new(data: Vec<f64>, dims: &[usize]) -> Result<Self> {
        Self::with_spacing(data, dims, &vec![1.0; dims.len()])
    }

    pub fn with_spacing(data: Vec<f64>, dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(Error::InvalidInput(format!(
                "field must have 1 to {MAX_DIMS} axes, got {}",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} spacings for {} axes",
                spacing.len(),
                dims.len()
            )));
        }
        if let Some(h) = spacing.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidInput(format!("spacing must be positive, got {h}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} hold {n} nodes but data has {}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            dims: dims.to_vec(),
            spacing: spacing.to_vec(),
            orig_dims: dims.to_vec(),
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; dims.iter().product()], dims)
    }

    /// Builds a field by evaluating `f` at every multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for flat in 0..n {
            unravel_into(flat, dims, &mut idx);
            data.push(f(&idx));
        }
        Self::new(data, dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn orig_dims(&self) -> &[usize] {
        &self.orig_dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn set_orig_dims(&mut self, orig: Vec<usize>) {
        debug_assert_eq!(orig.len(), self.dims.len());
        self.orig_dims = orig;
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[ravel(idx, &self.dims)]
    }

    /// True when every axis already has `2^k + 1` nodes, `k >= 1`.
    pub fn is_dyadic(&self) -> bool {
        self.dims.iter().all(|&n| dyadic_exponent(n).is_some())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Pads every axis up to the next `2^k + 1` by replicating the last slab.
    ///
    /// The returned field remembers the input extents in `orig_dims`.
    pub fn pad_to_dyadic(&self) -> Result<Field> {
        if let Some((axis, &len)) = self.dims.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::InvalidInput(format!(
                "axis {axis} has {len} nodes; at least 2 are required"
            )));
        }
        let new_dims: Vec<usize> = self.dims.iter().map(|&n| next_dyadic(n)).collect();
        if new_dims == self.dims {
            let mut out = self.clone();
            out.orig_dims = self.dims.clone();
            return Ok(out);
        }
        let mut src = vec![0usize; self.ndim()];
        let out = Field::from_fn(&new_dims, |idx| {
            for (s, (&i, &n)) in src.iter_mut().zip(idx.iter().zip(&self.dims)) {
                *s = i.min(n - 1);
            }
            self.data[ravel(&src, &self.dims)]
        })?;
        Ok(Field {
            spacing: self.spacing.clone(),
            orig_dims: self.dims.clone(),
            ..out
        })
    }

    /// Returns the leading `orig_dims` block.
    pub fn crop_to_original(&self) -> Field {
        if self.orig_dims == self.dims {
            return self.clone();
        }
        let n: usize = self.orig_dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; self.ndim()];
        for flat in 0..n {
            unravel_into(flat, &self.orig_dims, &mut idx);
            data.push(self.data[ravel(&idx, &self.dims)]);
        }
        Field {
            data,
            dims: self.orig_dims.clone(),
            spacing: self.spacing.clone(),
            orig_dims: self.orig_dims.clone(),
        }
    }

    /// Reads raw little-endian floats. `dims` is supplied out of band.
    pub fn read_raw<R: Read>(mut reader: R, dims: &[usize], dtype: DType) -> Result<Field> {
        let n: usize = dims.iter().product();
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        if buf.len() != n * dtype.size() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bytes for shape {dims:?} as {dtype:?}, found {}",
                n * dtype.size(),
                buf.len()
            )));
        }
        Field::new(decode_raw(&buf, dtype), dims)
    }

    pub fn write_raw<W: Write>(&self, mut writer: W, dtype: DType) -> Result<()> {
        writer.write_all(&encode_raw(&self.data, dtype))?;
        Ok(())
    }
}

/// Element type of raw binary files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(DType::F32),
            "f64" | "float64" => Ok(DType::F64),
            other => Err(Error::Config(format!("unknown dtype '{other}'"))),
        }
    }
}

pub fn decode_raw(buf: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

pub fn encode_raw(values: &[f64], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Returns `k` when `n == 2^k + 1` and `k >= 1`.
pub fn dyadic_exponent(n: usize) -> Option<u32> {
    if n < 3 {
        return None;
    }
    let m = n - 1;
    m.is_power_of_two().then(|| m.trailing_zeros())
}

/// Smallest `2^k + 1 >= n` with `k >= 1`.
pub fn next_dyadic(n: usize) -> usize {
    if n <= 3 {
        return 3;
    }
    (n - 1).next_power_of_two() + 1
}

pub fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

pub fn unravel_into(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(dims).rev() {
        *o = flat % n;
        flat /= n;
    }
}

pub fn unravel(flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    unravel_into(flat, dims, &mut out);
    out
}

/// Row-major strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_sizes() {
        assert_eq!(next_dyadic(2), 3);
        assert_eq!(next_dyadic(5), 5);
        assert_eq!(next_dyadic(6), 9);
        assert_eq!(next_dyadic(4), 5);
        assert_eq!(next_dyadic(33), 33);
        assert_eq!(next_dyadic(34), 65);
        assert_eq!(dyadic_exponent(9), Some(3));
        assert_eq!(dyadic_exponent(2), None);
        assert_eq!(dyadic_exponent(6), None);
    }

    #[test]
    fn pad_identity_when_dyadic() {
        let f = Field::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], &[5]).unwrap();
        let p = f.pad_to_dyadic().unwrap();
        assert_eq!(p.dims(), &[5]);
        assert_eq!(p.data(), f.data());
    }

    #[test]
    fn pad_replicates_last_entry() {
        let f = Field::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[6]).unwrap();
        let p = f.pad_to_dyadic().unwrap();
        assert_eq!(p.dims(), &[9]);
        assert_eq!(p.orig_dims(), &[6]);
        assert_eq!(&p.data()[..6], f.data());
        assert_eq!(&p.data()[6..], &[6.0, 6.0, 6.0]);
    }

    #[test]
    fn pad_2d_corners_take_nearest_edge() {
        let f = Field::from_fn(&[6, 4], |i| (10 * i[0] + i[1]) as f64).unwrap();
        let p = f.pad_to_dyadic().unwrap();
        assert_eq!(p.dims(), &[9, 5]);
        // index arithmetic: padded (i, j) reads original (min(i, 5), min(j, 3))
        for i in 0..9 {
            for j in 0..5 {
                let expect = (10 * i.min(5) + j.min(3)) as f64;
                assert_eq!(p.get(&[i, j]), expect);
            }
        }
        assert_eq!(p.get(&[8, 4]), 53.0);
        assert_eq!(p.get(&[0, 4]), 3.0);
        assert_eq!(p.get(&[8, 0]), 50.0);
    }

    #[test]
    fn pad_rejects_tiny_axis() {
        let f = Field::new(vec![1.0], &[1]).unwrap();
        assert!(matches!(f.pad_to_dyadic(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn crop_cases() {
        let f = Field::from_fn(&[6, 4], |i| (i[0] * 7 + i[1] * 3) as f64 * 0.25).unwrap();
        assert_eq!(f.pad_to_dyadic().unwrap().crop_to_original(), f);
        assert_eq!(f.crop_to_original(), f);

        let mut g = Field::from_fn(&[9], |i| i[0] as f64).unwrap();
        g.set_orig_dims(vec![6]);
        assert_eq!(g.crop_to_original().data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn invalid_construction() {
        assert!(Field::new(vec![0.0; 3], &[4]).is_err());
        assert!(Field::new(vec![], &[]).is_err());
        assert!(Field::with_spacing(vec![0.0; 4], &[4], &[0.0]).is_err());
        assert!(Field::new(vec![0.0; 16], &[2, 2, 2, 2]).is_err());
    }

    #[test]
    fn raw_roundtrip_f32() {
        let f = Field::from_fn(&[3, 4], |i| i[0] as f64 - 0.5 * i[1] as f64).unwrap();
        let mut buf = Vec::new();
        f.write_raw(&mut buf, DType::F32).unwrap();
        assert_eq!(buf.len(), 48);
        let g = Field::read_raw(&buf[..], &[3, 4], DType::F32).unwrap();
        assert_eq!(f, g);
        assert!(Field::read_raw(&buf[..], &[3, 5], DType::F32).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pad_crop_roundtrip(dims in prop::collection::vec(2usize..12, 1..=3), seed in any::<u64>()) {
                let f = Field::from_fn(&dims, |i| {
                    let h = i.iter().fold(seed, |a, &x| a.wrapping_mul(6364136223846793005).wrapping_add(x as u64 + 1));
                    (h >> 11) as f64 / (1u64 << 53) as f64
                }).unwrap();
                let p = f.pad_to_dyadic().unwrap();
                prop_assert!(p.is_dyadic());
                prop_assert_eq!(p.crop_to_original(), f);
            }
        }
    }
}
