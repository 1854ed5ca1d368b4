//! Per-node region labels and their run-length encoding.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Buffer = 1,
    Roi = 2,
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Background),
            1 => Ok(Label::Buffer),
            2 => Ok(Label::Roi),
            _ => Err(Error::Framing(format!("invalid mask label {v}"))),
        }
    }
}

/// Finest-grid classification of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    labels: Vec<Label>,
    dims: Vec<usize>,
}

impl RegionMask {
    pub fn new(labels: Vec<Label>, dims: &[usize]) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for dims {dims:?}",
                labels.len()
            )));
        }
        Ok(Self {
            labels,
            dims: dims.to_vec(),
        })
    }

    pub fn background(dims: &[usize]) -> Self {
        Self {
            labels: vec![Label::Background; dims.iter().product()],
            dims: dims.to_vec(),
        }
    }

    pub fn all_roi(dims: &[usize]) -> Self {
        Self {
            labels: vec![Label::Roi; dims.iter().product()],
            dims: dims.to_vec(),
        }
    }

    /// Marks every node where `roi` is true as ROI, the rest as background.
    pub fn from_roi(roi: &[bool], dims: &[usize]) -> Result<Self> {
        Self::new(
            roi.iter()
                .map(|&r| if r { Label::Roi } else { Label::Background })
                .collect(),
            dims,
        )
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn roi(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Label::Roi).collect()
    }

    /// Copy with only the ROI labels kept.
    pub fn roi_only(&self) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .map(|&l| if l == Label::Roi { Label::Roi } else { Label::Background })
                .collect(),
            dims: self.dims.clone(),
        }
    }

    /// Raw `u8` grid, one byte per node.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|&l| l as u8).collect()
    }

    pub fn from_bytes(bytes: &[u8], dims: &[usize]) -> Result<Self> {
        let labels = bytes.iter().map(|&b| Label::try_from(b)).collect::<Result<_>>()?;
        Self::new(labels, dims)
    }

    /// Run-length encoding: `(label: u8, run: LEB128 varint)` pairs.
    pub fn encode_rle(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut iter = self.labels.iter().peekable();
        while let Some(&label) = iter.next() {
            let mut run = 1u64;
            while iter.peek() == Some(&&label) {
                iter.next();
                run += 1;
            }
            out.push(label as u8);
            write_varint(&mut out, run);
        }
        out
    }

    pub fn decode_rle(bytes: &[u8], dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        let mut labels = Vec::with_capacity(n);
        let mut pos = 0;
        while pos < bytes.len() {
            let label = Label::try_from(bytes[pos])?;
            pos += 1;
            let run = read_varint(bytes, &mut pos)? as usize;
            if run == 0 || labels.len() + run > n {
                return Err(Error::Framing("mask run overflows the grid".into()));
            }
            labels.extend(std::iter::repeat_n(label, run));
        }
        if labels.len() != n {
            return Err(Error::Framing(format!(
                "mask covers {} of {n} nodes",
                labels.len()
            )));
        }
        Self::new(labels, dims)
    }
}

pub(crate) fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub(crate) fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *bytes
            .get(*pos)
            .ok_or_else(|| Error::Framing("truncated varint".into()))?;
        *pos += 1;
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Framing("varint too long".into()))
}
