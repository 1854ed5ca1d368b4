//! The `.stra` container.
//!
//! All integers and floats are little-endian:
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic            | `b"STRA"`       |
//! | version          | u16             |
//! | d                | u8              |
//! | dims             | d x u32         |
//! | orig_dims        | d x u32         |
//! | spacings         | d x f64         |
//! | L                | u8              |
//! | norm mode        | u8              |
//! | tau0, tau1       | f64, f64        |
//! | R_bz             | u32             |
//! | time slices T    | u32             |
//! | backend id       | u8              |
//! | bin widths       | f64, f64        |
//! | mask-RLE length  | u64             |
//! | payload length   | u64             |
//! | CRC-32           | u32             |
//!
//! The checksum covers every header byte before it plus the mask and
//! payload sections that follow.

use std::io::{Read, Write};
use std::path::Path;

use crate::entropy::Backend;
use crate::error::{Error, Result};
use crate::field::MAX_DIMS;
use crate::roi::NormMode;

pub const MAGIC: &[u8; 4] = b"STRA";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobHeader {
    pub dims: Vec<usize>,
    pub orig_dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub levels: usize,
    pub norm: NormMode,
    pub tau0: f64,
    pub tau1: f64,
    pub r_bz: usize,
    pub slices: usize,
    pub backend: Backend,
    pub bin_protected: f64,
    pub bin_background: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlob {
    pub header: BlobHeader,
    pub mask_rle: Vec<u8>,
    pub payload: Vec<u8>,
}

impl CompressedBlob {
    fn header_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(h.dims.len() as u8);
        for &n in h.dims.iter().chain(&h.orig_dims) {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for &s in &h.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(h.levels as u8);
        out.push(h.norm.code());
        out.extend_from_slice(&h.tau0.to_le_bytes());
        out.extend_from_slice(&h.tau1.to_le_bytes());
        out.extend_from_slice(&(h.r_bz as u32).to_le_bytes());
        out.extend_from_slice(&(h.slices as u32).to_le_bytes());
        out.push(h.backend.id());
        out.extend_from_slice(&h.bin_protected.to_le_bytes());
        out.extend_from_slice(&h.bin_background.to_le_bytes());
        out.extend_from_slice(&(self.mask_rle.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        let mut crc = crc32fast::Hasher::new();
        crc.update(&out);
        crc.update(&self.mask_rle);
        crc.update(&self.payload);
        out.extend_from_slice(&crc.finalize().to_le_bytes());
        out.extend_from_slice(&self.mask_rle);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Serialized size in bytes.
    pub fn len(&self) -> usize {
        self.header_bytes().len() + 4 + self.mask_rle.len() + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Framing("not a STRA stream".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Framing(format!("unsupported version {version}")));
        }
        let d = r.u8()? as usize;
        if !(1..=MAX_DIMS).contains(&d) {
            return Err(Error::Framing(format!("invalid axis count {d}")));
        }
        let mut dims = Vec::with_capacity(d);
        for _ in 0..d {
            dims.push(r.u32()? as usize);
        }
        let mut orig_dims = Vec::with_capacity(d);
        for _ in 0..d {
            orig_dims.push(r.u32()? as usize);
        }
        let mut spacing = Vec::with_capacity(d);
        for _ in 0..d {
            spacing.push(r.f64()?);
        }
        let levels = r.u8()? as usize;
        let norm = r.u8()?;
        let tau0 = r.f64()?;
        let tau1 = r.f64()?;
        let r_bz = r.u32()? as usize;
        let slices = r.u32()? as usize;
        let backend = r.u8()?;
        let bin_protected = r.f64()?;
        let bin_background = r.f64()?;
        let mask_len = r.u64()?;
        let payload_len = r.u64()?;
        let header_end = r.pos;
        let stored = r.u32()?;
        let expected = (r.pos as u64)
            .checked_add(mask_len)
            .and_then(|v| v.checked_add(payload_len));
        if expected != Some(bytes.len() as u64) {
            return Err(Error::Framing(format!(
                "section lengths {mask_len} + {payload_len} do not match a {}-byte stream",
                bytes.len()
            )));
        }
        let body = r.pos;
        let mut crc = crc32fast::Hasher::new();
        crc.update(&bytes[..header_end]);
        crc.update(&bytes[body..]);
        let computed = crc.finalize();
        if computed != stored {
            return Err(Error::Checksum { stored, computed });
        }
        // content checks only after the checksum, so corruption reports as such
        let norm = NormMode::from_code(norm)?;
        let backend = Backend::from_id(backend)?;
        if dims.iter().zip(&orig_dims).any(|(&n, &o)| o == 0 || o > n) {
            return Err(Error::Framing(format!("orig dims {orig_dims:?} exceed {dims:?}")));
        }
        if !(bin_protected > 0.0 && bin_background > 0.0) {
            return Err(Error::Framing("nonpositive bin width".into()));
        }
        let mask_end = body + mask_len as usize;
        Ok(Self {
            header: BlobHeader {
                dims,
                orig_dims,
                spacing,
                levels,
                norm,
                tau0,
                tau1,
                r_bz,
                slices,
                backend,
                bin_protected,
                bin_background,
            },
            mask_rle: bytes[body..mask_end].to_vec(),
            payload: bytes[mask_end..].to_vec(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Framing("truncated header".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CompressedBlob {
        CompressedBlob {
            header: BlobHeader {
                dims: vec![9, 17],
                orig_dims: vec![7, 17],
                spacing: vec![0.5, 2.0],
                levels: 3,
                norm: NormMode::Max,
                tau0: 1e-3,
                tau1: 4e-3,
                r_bz: 2,
                slices: 1,
                backend: Backend::Deflate,
                bin_protected: 1e-4,
                bin_background: 4e-4,
            },
            mask_rle: vec![0, 0x99, 0x01],
            payload: (0..40).collect(),
        }
    }

    #[test]
    fn roundtrip() {
        let b = sample();
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), b.len());
        assert_eq!(CompressedBlob::from_bytes(&bytes).unwrap(), b);
    }

    #[test]
    fn fixed_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"STRA");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &9u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &7u32.to_le_bytes());
        assert_eq!(&bytes[23..31], &0.5f64.to_le_bytes());
    }

    #[test]
    fn truncation_is_framing_error() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 20, bytes.len() - 1] {
            assert!(matches!(CompressedBlob::from_bytes(&bytes[..cut]), Err(Error::Framing(_))));
        }
    }

    #[test]
    fn payload_flip_is_checksum_error() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x10;
        assert!(matches!(CompressedBlob::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let bytes = sample().to_bytes();
        for i in 0..bytes.len() * 8 {
            let mut c = bytes.clone();
            c[i / 8] ^= 1 << (i % 8);
            assert!(CompressedBlob::from_bytes(&c).is_err(), "bit {i}");
        }
    }
}
