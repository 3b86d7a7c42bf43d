//! Small vector helpers and the chunked GEMM kernels shared by forward and backward passes.
//!
//! Chunk boundaries are fixed constants, so every reduction runs in the same order no
//! matter how many worker threads execute the chunks.

use rayon::prelude::*;

/// Rows of samples per forward task.
pub const SAMPLE_CHUNK: usize = 256;
/// Neurons per backward task.
pub const NEURON_CHUNK: usize = 16;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm3_cubed(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs().powi(3)).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn relu(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

/// ReLU derivative with `σ'(0) = 0`.
pub fn relu_deriv(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `Z = X Wᵀ` for row-major `X` (m×d) and `W` (p×d); returns row-major `Z` (m×p).
pub fn xw_t(x: &[f64], w: &[f64], m: usize, d: usize, p: usize) -> Vec<f64> {
    let mut z = vec![0.0; m * p];
    if m == 0 || p == 0 {
        return z;
    }
    z.par_chunks_mut(SAMPLE_CHUNK * p).enumerate().for_each(|(c, zc)| {
        let rows = zc.len() / p;
        let xs = &x[c * SAMPLE_CHUNK * d..(c * SAMPLE_CHUNK + rows) * d];
        // SAFETY: slice lengths match the dimensions and strides passed below.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                p,
                1.0,
                xs.as_ptr(),
                d as isize,
                1,
                w.as_ptr(),
                1,
                d as isize,
                0.0,
                zc.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    });
    z
}

/// `G = Dᵀ X` for row-major `D` (m×p) and `X` (m×d); returns row-major `G` (p×d).
pub fn dt_x(dm: &[f64], x: &[f64], m: usize, d: usize, p: usize) -> Vec<f64> {
    let mut g = vec![0.0; p * d];
    if m == 0 || p == 0 {
        return g;
    }
    g.par_chunks_mut(NEURON_CHUNK * d).enumerate().for_each(|(c, gc)| {
        let j0 = c * NEURON_CHUNK;
        let rows = gc.len() / d;
        // SAFETY: `dm[j0..]` addresses columns j0..j0+rows of D with row stride p.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                m,
                d,
                1.0,
                dm.as_ptr().add(j0),
                1,
                p as isize,
                x.as_ptr(),
                d as isize,
                1,
                0.0,
                gc.as_mut_ptr(),
                d as isize,
                1,
            );
        }
    });
    g
}
