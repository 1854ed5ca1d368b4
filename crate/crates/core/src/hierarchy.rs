//! Nested dyadic grid bookkeeping.
//!
//! Level `L` is the finest grid (the field itself). Level `l - 1` keeps the
//! even-indexed nodes of level `l` along every axis, so in finest-grid index
//! units level `l` has stride `2^(L - l)`. With mixed axis lengths the joint
//! depth is the smallest axis exponent; longer axes keep more than two nodes
//! at level 0.

use crate::error::{Error, Result};
use crate::field::{dyadic_exponent, unravel_into};

#[derive(Debug, Clone, PartialEq)]
pub struct GridHierarchy {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    levels: usize,
}

impl GridHierarchy {
    pub fn new(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if dims.len() != spacing.len() {
            return Err(Error::ShapeMismatch("dims and spacing differ in length".into()));
        }
        let mut levels = u32::MAX;
        for (axis, &len) in dims.iter().enumerate() {
            let k = dyadic_exponent(len).ok_or(Error::NonDyadic { axis, len })?;
            levels = levels.min(k);
        }
        Ok(Self {
            dims: dims.to_vec(),
            spacing: spacing.to_vec(),
            levels: levels as usize,
        })
    }

    /// Index of the finest level, `L`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Finest-grid index stride of level `l`.
    pub fn stride(&self, l: usize) -> usize {
        1 << (self.levels - l)
    }

    /// Node counts per axis on level `l`.
    pub fn level_dims(&self, l: usize) -> Vec<usize> {
        let s = self.stride(l);
        self.dims.iter().map(|&n| (n - 1) / s + 1).collect()
    }

    /// Physical spacing `h_l` per axis.
    pub fn level_spacing(&self, l: usize) -> Vec<f64> {
        let s = self.stride(l) as f64;
        self.spacing.iter().map(|h| h * s).collect()
    }

    /// The level `l` with `idx` in `N*_l = N_l \ N_(l-1)` (`N*_0 = N_0`).
    pub fn node_level(&self, idx: &[usize]) -> usize {
        let tz = idx
            .iter()
            .map(|&i| if i == 0 { u32::MAX } else { i.trailing_zeros() })
            .min()
            .unwrap_or(u32::MAX) as usize;
        self.levels - tz.min(self.levels)
    }

    /// Level of every finest node, in flat order.
    pub fn level_map(&self) -> Vec<u8> {
        let cap = self.levels as u32;
        let tz = |i: usize| if i == 0 { cap } else { i.trailing_zeros().min(cap) };
        let last: Vec<u32> = (0..self.dims[self.ndim() - 1]).map(tz).collect();
        let mut out = Vec::with_capacity(self.dims.iter().product());
        let mut idx = vec![0; self.ndim() - 1];
        let rows: usize = self.dims[..self.ndim() - 1].iter().product();
        for r in 0..rows {
            unravel_into(r, &self.dims[..self.ndim() - 1], &mut idx);
            let prefix = idx.iter().map(|&i| tz(i)).min().unwrap_or(cap);
            out.extend(last.iter().map(|&t| (cap - t.min(prefix)) as u8));
        }
        out
    }

    /// Finest-grid indices of the nodes on level `l`, per axis.
    pub fn level_indices(&self, l: usize, axis: usize) -> Vec<usize> {
        (0..self.dims[axis]).step_by(self.stride(l)).collect()
    }
}
