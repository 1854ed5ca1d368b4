//! Canonical Huffman coding of integer symbols followed by a deflate pass.
//!
//! Values with magnitude up to [`DIRECT_LIMIT`] get their own code. Larger
//! values are sent as an escape code plus a zigzag varint in a side stream.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::mask::{read_varint, write_varint};

/// Largest magnitude coded directly.
pub const DIRECT_LIMIT: i64 = 1 << 12;

/// Longest permitted code.
pub const MAX_CODE_LEN: u8 = 30;

/// Table id of the escape symbol. Direct values use `zigzag(v) + 1`.
const ESCAPE: u64 = 0;

/// Lossless byte compressor applied after Huffman coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Store,
    Deflate,
}

impl Backend {
    pub fn id(self) -> u8 {
        match self {
            Backend::Store => 0,
            Backend::Deflate => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Backend::Store),
            1 => Ok(Backend::Deflate),
            _ => Err(Error::Framing(format!("unknown backend id {id}"))),
        }
    }

    pub fn pack(self, bytes: &[u8]) -> Vec<u8> {
        match self {
            Backend::Store => bytes.to_vec(),
            Backend::Deflate => {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
                enc.write_all(bytes).expect("writing to a Vec cannot fail");
                enc.finish().expect("writing to a Vec cannot fail")
            }
        }
    }

    pub fn unpack(self, bytes: &[u8]) -> Result<Vec<u8>> {
        match self {
            Backend::Store => Ok(bytes.to_vec()),
            Backend::Deflate => {
                let mut out = Vec::new();
                DeflateDecoder::new(bytes)
                    .read_to_end(&mut out)
                    .map_err(|e| Error::Framing(format!("deflate stream: {e}")))?;
                Ok(out)
            }
        }
    }
}

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn symbol_id(v: i64) -> u64 {
    if v.unsigned_abs() <= DIRECT_LIMIT as u64 {
        zigzag(v) + 1
    } else {
        ESCAPE
    }
}

/// Huffman code lengths for `freqs` (all nonzero), capped at `max_len`.
fn code_lengths(freqs: &[u64], max_len: u8) -> Vec<u8> {
    if freqs.len() == 1 {
        return vec![1];
    }
    let mut weights = freqs.to_vec();
    loop {
        let lens = unbounded_lengths(&weights);
        if lens.iter().all(|&l| l <= max_len) {
            return lens;
        }
        for w in &mut weights {
            *w = w.div_ceil(2);
        }
    }
}

fn unbounded_lengths(weights: &[u64]) -> Vec<u8> {
    let n = weights.len();
    // nodes 0..n are leaves, the rest internal; parent links give depths
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let mut depth = vec![0u8; 2 * n - 1];
    for i in (0..2 * n - 2).rev() {
        depth[i] = depth[parent[i]].saturating_add(1);
    }
    depth.truncate(n);
    depth
}

/// Canonical codes for `(symbol, length)` pairs sorted by length then symbol.
fn canonical_codes(table: &[(u64, u8)]) -> Vec<u32> {
    let mut codes = Vec::with_capacity(table.len());
    let mut code = 0u32;
    let mut prev_len = table.first().map_or(0, |t| t.1);
    for &(_, len) in table {
        code <<= len - prev_len;
        codes.push(code);
        code += 1;
        prev_len = len;
    }
    codes
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self { bytes: Vec::new(), acc: 0, nbits: 0 }
    }

    fn put(&mut self, code: u32, len: u8) {
        self.acc = (self.acc << len) | u64::from(code);
        self.nbits += u32::from(len);
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn bit(&mut self) -> Result<u32> {
        let byte = self
            .bytes
            .get(self.pos / 8)
            .ok_or_else(|| Error::Framing("bitstream ended early".into()))?;
        let b = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(u32::from(b))
    }
}

/// Huffman-codes `values` into a self-contained byte string (before the
/// backend pass).
pub fn huffman_encode(values: &[i64]) -> Vec<u8> {
    let mut freq: BTreeMap<u64, u64> = BTreeMap::new();
    for &v in values {
        *freq.entry(symbol_id(v)).or_default() += 1;
    }
    let symbols: Vec<u64> = freq.keys().copied().collect();
    let lens = if symbols.is_empty() {
        Vec::new()
    } else {
        code_lengths(&freq.values().copied().collect::<Vec<_>>(), MAX_CODE_LEN)
    };
    let mut table: Vec<(u64, u8)> = symbols.into_iter().zip(lens).collect();
    table.sort_by_key(|&(s, l)| (l, s));
    let codes = canonical_codes(&table);
    let lookup: BTreeMap<u64, (u32, u8)> = table
        .iter()
        .zip(&codes)
        .map(|(&(s, l), &c)| (s, (c, l)))
        .collect();

    let mut escapes = Vec::new();
    let mut bits = BitWriter::new();
    for &v in values {
        let id = symbol_id(v);
        let (code, len) = lookup[&id];
        bits.put(code, len);
        if id == ESCAPE {
            write_varint(&mut escapes, zigzag(v));
        }
    }

    let mut out = Vec::new();
    write_varint(&mut out, values.len() as u64);
    write_varint(&mut out, table.len() as u64);
    for &(s, l) in &table {
        write_varint(&mut out, s);
        out.push(l);
    }
    write_varint(&mut out, escapes.len() as u64);
    out.extend_from_slice(&escapes);
    out.extend_from_slice(&bits.finish());
    out
}

pub fn huffman_decode(bytes: &[u8]) -> Result<Vec<i64>> {
    let mut pos = 0;
    let n = read_varint(bytes, &mut pos)? as usize;
    let table_len = read_varint(bytes, &mut pos)? as usize;
    if table_len > bytes.len() {
        return Err(Error::Framing("code table longer than stream".into()));
    }
    let mut table = Vec::with_capacity(table_len);
    for _ in 0..table_len {
        let s = read_varint(bytes, &mut pos)?;
        let l = *bytes
            .get(pos)
            .ok_or_else(|| Error::Framing("truncated code table".into()))?;
        pos += 1;
        if l == 0 || l > MAX_CODE_LEN {
            return Err(Error::Framing(format!("invalid code length {l}")));
        }
        table.push((s, l));
    }
    if table.windows(2).any(|w| (w[0].1, w[0].0) >= (w[1].1, w[1].0)) {
        return Err(Error::Framing("code table not in canonical order".into()));
    }
    let kraft: f64 = table.iter().map(|&(_, l)| 0.5f64.powi(i32::from(l))).sum();
    if kraft > 1.0 + 1e-12 {
        return Err(Error::Framing("code lengths oversubscribed".into()));
    }
    if n > 0 && table.is_empty() {
        return Err(Error::Framing("symbols without a code table".into()));
    }
    let esc_len = read_varint(bytes, &mut pos)? as usize;
    let esc_end = pos
        .checked_add(esc_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Framing("escape stream overruns payload".into()))?;
    let escapes = &bytes[pos..esc_end];
    let mut esc_pos = 0;

    // per-length first code, first table index and count
    let max_len = table.last().map_or(0, |t| t.1) as usize;
    let codes = canonical_codes(&table);
    let mut first_code = vec![0u32; max_len + 1];
    let mut first_index = vec![0usize; max_len + 1];
    let mut count = vec![0u32; max_len + 1];
    for (i, (&(_, l), &c)) in table.iter().zip(&codes).enumerate().rev() {
        let l = l as usize;
        first_code[l] = c;
        first_index[l] = i;
        count[l] += 1;
    }

    let mut reader = BitReader { bytes: &bytes[esc_end..], pos: 0 };
    let mut out = Vec::with_capacity(n.min(bytes.len() * 8));
    for _ in 0..n {
        let mut code = 0u32;
        let mut len = 0usize;
        let id = loop {
            code = (code << 1) | reader.bit()?;
            len += 1;
            if len > max_len {
                return Err(Error::Framing("invalid code in bitstream".into()));
            }
            if count[len] > 0 && code >= first_code[len] && code - first_code[len] < count[len] {
                break table[first_index[len] + (code - first_code[len]) as usize].0;
            }
        };
        let v = if id == ESCAPE {
            unzigzag(read_varint(escapes, &mut esc_pos)?)
        } else {
            unzigzag(id - 1)
        };
        out.push(v);
    }
    Ok(out)
}

/// Huffman coding plus the backend pass.
pub fn encode_symbols(values: &[i64], backend: Backend) -> Vec<u8> {
    backend.pack(&huffman_encode(values))
}

pub fn decode_symbols(bytes: &[u8], backend: Backend) -> Result<Vec<i64>> {
    huffman_decode(&backend.unpack(bytes)?)
}

/// Shannon entropy in bits per symbol.
pub fn shannon_entropy(values: &[i64]) -> f64 {
    let mut freq: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        *freq.entry(v).or_default() += 1;
    }
    let n = values.len() as f64;
    freq.values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}
