//! Multilevel decomposition: multilinear interpolation residuals plus an
//! L² projection correction of the coarse values.
//!
//! One level step on a line with fine spacing `h` and coarse spacing
//! `H = 2h`:
//!
//! 1. details `δ[j] = u[j] - (u[j-1] + u[j+1]) / 2` at odd `j`;
//! 2. load `b = R·M_fine·δ`, i.e. `b[i] = 5h/6·δ[2i] + h/2·(δ[2i±1]) + h/12·(δ[2i±2])`
//!    (boundary weight of `δ[2i]` halves to `5h/12`);
//! 3. solve the coarse mass system `M·w = b` (diagonal `2H/3`, `H/3` at the
//!    ends, off-diagonal `H/6`);
//! 4. coarse values `u[2i] + w[i]`.
//!
//! In several dimensions the interpolant, the load and the mass solve are
//! tensor products, applied as 1D sweeps along axis 0, 1, 2 in that order.
//! Details are zero at coarse nodes in 1D, so the `δ[2i]` terms only matter
//! for multi-dimensional lines.

use crate::error::{Error, Result};
use crate::field::{strides, unravel_into, Field};
use crate::hierarchy::GridHierarchy;

/// Multilevel coefficients laid out on the finest grid.
///
/// The entry at a node of `N*_l` (l >= 1) is that node's level-`l`
/// coefficient; entries on `N_0` hold the coarsest-level values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPyramid {
    coeffs: Vec<f64>,
    hierarchy: GridHierarchy,
    orig_dims: Vec<usize>,
}

impl CoeffPyramid {
    pub fn new(coeffs: Vec<f64>, hierarchy: GridHierarchy) -> Result<Self> {
        let n: usize = hierarchy.dims().iter().product();
        if coeffs.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for {} nodes",
                coeffs.len(),
                n
            )));
        }
        let orig_dims = hierarchy.dims().to_vec();
        Ok(Self {
            coeffs,
            hierarchy,
            orig_dims,
        })
    }

    pub fn zeros(hierarchy: GridHierarchy) -> Self {
        let n = hierarchy.dims().iter().product();
        let orig_dims = hierarchy.dims().to_vec();
        Self {
            coeffs: vec![0.0; n],
            hierarchy,
            orig_dims,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn hierarchy(&self) -> &GridHierarchy {
        &self.hierarchy
    }

    pub fn orig_dims(&self) -> &[usize] {
        &self.orig_dims
    }

    pub fn with_orig_dims(mut self, orig: &[usize]) -> Self {
        self.orig_dims = orig.to_vec();
        self
    }
}

/// Precomputed Thomas factorisation of the coarse 1D mass matrix.
#[derive(Debug, Clone)]
pub(crate) struct MassSolver {
    off: f64,
    c_prime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl MassSolver {
    /// `n` coarse nodes with spacing `h`.
    pub(crate) fn new(n: usize, h: f64) -> Self {
        debug_assert!(n >= 2);
        let off = h / 6.0;
        let diag = |i: usize| if i == 0 || i == n - 1 { h / 3.0 } else { 2.0 * h / 3.0 };
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut pivot = diag(0);
        inv_pivot[0] = 1.0 / pivot;
        c_prime[0] = off / pivot;
        for i in 1..n {
            pivot = diag(i) - off * c_prime[i - 1];
            inv_pivot[i] = 1.0 / pivot;
            c_prime[i] = off / pivot;
        }
        Self {
            off,
            c_prime,
            inv_pivot,
        }
    }

    /// Solves `M x = rhs` in place.
    pub(crate) fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.off * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.c_prime[i] * x[i + 1];
        }
    }
}

/// Load on the coarse nodes induced by fine-level details along one line.
pub(crate) fn transfer_line(delta: &[f64], out: &mut [f64], h: f64) {
    let n = delta.len();
    let m = out.len();
    debug_assert_eq!(m, n.div_ceil(2));
    for (i, b) in out.iter_mut().enumerate() {
        let c = 2 * i;
        let center = if i == 0 || i == m - 1 { 5.0 * h / 12.0 } else { 5.0 * h / 6.0 };
        let mut acc = center * delta[c];
        if c >= 1 {
            acc += 0.5 * h * delta[c - 1];
        }
        if c + 1 < n {
            acc += 0.5 * h * delta[c + 1];
        }
        if c >= 2 {
            acc += h / 12.0 * delta[c - 2];
        }
        if c + 2 < n {
            acc += h / 12.0 * delta[c + 2];
        }
        *b = acc;
    }
}

pub(crate) fn interpolate_line(coarse: &[f64], out: &mut [f64]) {
    for (i, &c) in coarse.iter().enumerate() {
        out[2 * i] = c;
        if i + 1 < coarse.len() {
            out[2 * i + 1] = 0.5 * (c + coarse[i + 1]);
        }
    }
}

/// Applies `f` to every line along `axis`, producing lines of length `out_len`.
fn map_lines(
    src: &[f64],
    dims: &[usize],
    axis: usize,
    out_len: usize,
    mut f: impl FnMut(&[f64], &mut [f64]),
) -> Vec<f64> {
    let n = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * out_len * inner];
    let mut line_in = vec![0.0; n];
    let mut line_out = vec![0.0; out_len];
    for o in 0..outer {
        let src_base = o * n * inner;
        let dst_base = o * out_len * inner;
        for k in 0..inner {
            for (i, v) in line_in.iter_mut().enumerate() {
                *v = src[src_base + i * inner + k];
            }
            f(&line_in, &mut line_out);
            for (j, v) in line_out.iter().enumerate() {
                out[dst_base + j * inner + k] = *v;
            }
        }
    }
    out
}

/// Same as [`map_lines`] with equal input and output length, in place.
fn map_lines_in_place(data: &mut [f64], dims: &[usize], axis: usize, mut f: impl FnMut(&mut [f64])) {
    let n = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut line = vec![0.0; n];
    for o in 0..outer {
        let base = o * n * inner;
        for k in 0..inner {
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[base + i * inner + k];
            }
            f(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[base + i * inner + k] = *v;
            }
        }
    }
}

/// Finest-grid flat index of every node of level `l`, in level-`l` C order.
pub(crate) fn level_positions(h: &GridHierarchy, l: usize) -> Vec<usize> {
    let ldims = h.level_dims(l);
    let fstrides = strides(h.dims());
    let s = h.stride(l);
    let n: usize = ldims.iter().product();
    let mut idx = vec![0; ldims.len()];
    (0..n)
        .map(|flat| {
            unravel_into(flat, &ldims, &mut idx);
            idx.iter().zip(&fstrides).map(|(&i, &st)| i * s * st).sum()
        })
        .collect()
}

/// Whether each node of level `l` (compact order) also lies on level `l - 1`.
fn coarse_flags(ldims: &[usize]) -> Vec<bool> {
    let n: usize = ldims.iter().product();
    let mut idx = vec![0; ldims.len()];
    (0..n)
        .map(|flat| {
            unravel_into(flat, ldims, &mut idx);
            idx.iter().all(|i| i % 2 == 0)
        })
        .collect()
}

fn gather_even(u: &[f64], fine: &[usize], coarse: &[usize]) -> Vec<f64> {
    let fs = strides(fine);
    let n: usize = coarse.iter().product();
    let mut idx = vec![0; coarse.len()];
    (0..n)
        .map(|flat| {
            unravel_into(flat, coarse, &mut idx);
            u[idx.iter().zip(&fs).map(|(&i, &st)| 2 * i * st).sum::<usize>()]
        })
        .collect()
}

/// Tensor multilinear interpolant on the level with `fine` dims.
fn interpolate(coarse_vals: &[f64], coarse: &[usize]) -> Vec<f64> {
    let mut cur = coarse_vals.to_vec();
    let mut dims = coarse.to_vec();
    for axis in 0..dims.len() {
        let out_len = 2 * dims[axis] - 1;
        cur = map_lines(&cur, &dims, axis, out_len, interpolate_line);
        dims[axis] = out_len;
    }
    cur
}

/// L² correction `w` on the coarse grid from fine details.
fn correction(delta: &[f64], fine: &[usize], fine_spacing: &[f64], solvers: &[MassSolver]) -> Vec<f64> {
    let mut cur = delta.to_vec();
    let mut dims = fine.to_vec();
    for axis in 0..dims.len() {
        let out_len = dims[axis].div_ceil(2);
        let h = fine_spacing[axis];
        cur = map_lines(&cur, &dims, axis, out_len, |d, b| transfer_line(d, b, h));
        dims[axis] = out_len;
    }
    for (axis, solver) in solvers.iter().enumerate() {
        map_lines_in_place(&mut cur, &dims, axis, |line| solver.solve(line));
    }
    cur
}

fn solvers_for(h: &GridHierarchy, l: usize) -> Vec<MassSolver> {
    let cd = h.level_dims(l - 1);
    let ch = h.level_spacing(l - 1);
    cd.iter().zip(&ch).map(|(&n, &s)| MassSolver::new(n, s)).collect()
}

/// One 1D level step: returns `(coarse values, details at odd nodes)`.
pub fn decompose_1d_level(u: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = u.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "a level needs an odd node count >= 3, got {n}"
        )));
    }
    let coarse: Vec<f64> = u.iter().step_by(2).copied().collect();
    let mut interp = vec![0.0; n];
    interpolate_line(&coarse, &mut interp);
    let delta: Vec<f64> = u.iter().zip(&interp).map(|(a, b)| a - b).collect();
    let mut w = vec![0.0; coarse.len()];
    transfer_line(&delta, &mut w, h);
    MassSolver::new(coarse.len(), 2.0 * h).solve(&mut w);
    let details = delta.iter().skip(1).step_by(2).copied().collect();
    let coarse = coarse.iter().zip(&w).map(|(c, w)| c + w).collect();
    Ok((coarse, details))
}

/// Forward multilevel transform of a dyadic field.
pub fn decompose(field: &Field) -> Result<CoeffPyramid> {
    let h = GridHierarchy::new(field.dims(), field.spacing())?;
    let mut coeffs = vec![0.0; field.len()];
    let mut u = field.data().to_vec();
    for l in (1..=h.levels()).rev() {
        let fine = h.level_dims(l);
        let coarse = h.level_dims(l - 1);
        let base = gather_even(&u, &fine, &coarse);
        let interp = interpolate(&base, &coarse);
        let flags = coarse_flags(&fine);
        let delta: Vec<f64> = u
            .iter()
            .zip(&interp)
            .zip(&flags)
            .map(|((v, i), &c)| if c { 0.0 } else { v - i })
            .collect();
        let w = correction(&delta, &fine, &h.level_spacing(l), &solvers_for(&h, l));
        for ((pos, d), &c) in level_positions(&h, l).into_iter().zip(&delta).zip(&flags) {
            if !c {
                coeffs[pos] = *d;
            }
        }
        u = base.iter().zip(&w).map(|(b, w)| b + w).collect();
    }
    for (pos, v) in level_positions(&h, 0).into_iter().zip(u) {
        coeffs[pos] = v;
    }
    Ok(CoeffPyramid {
        coeffs,
        hierarchy: h,
        orig_dims: field.orig_dims().to_vec(),
    })
}

/// Inverse of [`decompose`].
pub fn recompose(pyramid: &CoeffPyramid) -> Field {
    let h = &pyramid.hierarchy;
    let c = &pyramid.coeffs;
    let mut u: Vec<f64> = level_positions(h, 0).into_iter().map(|p| c[p]).collect();
    for l in 1..=h.levels() {
        let fine = h.level_dims(l);
        let coarse = h.level_dims(l - 1);
        let flags = coarse_flags(&fine);
        let delta: Vec<f64> = level_positions(h, l)
            .into_iter()
            .zip(&flags)
            .map(|(p, &is_coarse)| if is_coarse { 0.0 } else { c[p] })
            .collect();
        let w = correction(&delta, &fine, &h.level_spacing(l), &solvers_for(h, l));
        let base: Vec<f64> = u.iter().zip(&w).map(|(v, w)| v - w).collect();
        let interp = interpolate(&base, &coarse);
        u = interp.iter().zip(&delta).map(|(i, d)| i + d).collect();
    }
    let mut f = Field::with_spacing(u, h.dims(), h.spacing()).expect("hierarchy dims are consistent");
    f.set_orig_dims(pyramid.orig_dims.clone());
    f
}
