//! Submanifold 3×3×3 sparse convolution: outputs live exactly on the input's
//! active voxels and absent neighbors contribute zero.

use rand::Rng;
use rayon::prelude::*;

use super::{grid_to_features, features_to_grid, Features, Real, Rulebook, KERNEL_VOLUME, NO_NEIGHBOR};
use crate::error::{Error, Result};
use crate::voxgrid::SparseVoxelGrid;

/// Kernel `[3, 3, 3, c_in, c_out]` (row-major) and bias `[c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseConvWeights<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> SparseConvWeights<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel: vec![T::zero(); KERNEL_VOLUME * c_in * c_out],
            bias: vec![T::zero(); c_out],
        }
    }

    /// Uniform fan-in scaled initialization, zero bias.
    pub fn random(c_in: usize, c_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (3.0 / (KERNEL_VOLUME * c_in.max(1)) as f64).sqrt();
        let mut w = Self::zeros(c_in, c_out);
        for v in &mut w.kernel {
            *v = T::lit(rng.random_range(-bound..bound));
        }
        w
    }

    /// Center tap is the identity, everything else zero.
    pub fn identity(c: usize) -> Self {
        let mut w = Self::zeros(c, c);
        for ch in 0..c {
            *w.tap_mut(13, ch, ch) = T::one();
        }
        w
    }

    #[inline]
    pub fn tap(&self, offset: usize, ci: usize, co: usize) -> T {
        self.kernel[(offset * self.c_in + ci) * self.c_out + co]
    }

    #[inline]
    pub fn tap_mut(&mut self, offset: usize, ci: usize, co: usize) -> &mut T {
        &mut self.kernel[(offset * self.c_in + ci) * self.c_out + co]
    }

    pub fn cast<U: Real>(&self) -> SparseConvWeights<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(f64::NAN))).collect();
        SparseConvWeights {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: c(&self.kernel),
            bias: c(&self.bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kernel.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Features<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv_forward<T: Real>(x: &Features<T>, rb: &Rulebook, w: &SparseConvWeights<T>) -> Result<Features<T>> {
    if x.cols() != w.c_in {
        return Err(Error::ChannelMismatch {
            expected: w.c_in,
            found: x.cols(),
        });
    }
    if x.rows() != rb.len() {
        return Err(Error::Shape(format!("{} feature rows for {} voxels", x.rows(), rb.len())));
    }
    let (cin, cout) = (w.c_in, w.c_out);
    let mut out = Features::zeros(x.rows(), cout);
    if cout == 0 {
        return Ok(out);
    }
    out.data_mut().par_chunks_mut(cout).enumerate().for_each(|(i, acc)| {
        acc.copy_from_slice(&w.bias);
        for (o, &j) in rb.neighbors(i).iter().enumerate() {
            if j == NO_NEIGHBOR {
                continue;
            }
            let xin = x.row(j as usize);
            let base = o * cin * cout;
            for (ci, &xv) in xin.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let wrow = &w.kernel[base + ci * cout..base + (ci + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xv * wv;
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of `Σ dy ⊙ conv(x)` with respect to input, kernel and bias.
pub fn conv_backward<T: Real>(
    x: &Features<T>,
    rb: &Rulebook,
    w: &SparseConvWeights<T>,
    dy: &Features<T>,
) -> Result<ConvGrads<T>> {
    if dy.cols() != w.c_out || dy.rows() != x.rows() || x.cols() != w.c_in {
        return Err(Error::Shape(format!(
            "conv backward: input {}×{}, upstream {}×{}, weights {}→{}",
            x.rows(),
            x.cols(),
            dy.rows(),
            dy.cols(),
            w.c_in,
            w.c_out
        )));
    }
    let (cin, cout) = (w.c_in, w.c_out);
    let n = x.rows();

    let mut bias = vec![T::zero(); cout];
    for i in 0..n {
        for (b, &g) in bias.iter_mut().zip(dy.row(i)) {
            *b += g;
        }
    }

    // Neighbor relations are symmetric, so the input gradient is a gather:
    // dx[j] = Σ_o W[26 - o] · dy[neighbor_o(j)].
    let mut dx = Features::zeros(n, cin);
    if cin > 0 {
        dx.data_mut().par_chunks_mut(cin).enumerate().for_each(|(j, acc)| {
            for (o, &i) in rb.neighbors(j).iter().enumerate() {
                if i == NO_NEIGHBOR {
                    continue;
                }
                let g = dy.row(i as usize);
                let base = (KERNEL_VOLUME - 1 - o) * cin * cout;
                for (ci, a) in acc.iter_mut().enumerate() {
                    let wrow = &w.kernel[base + ci * cout..base + (ci + 1) * cout];
                    let mut s = T::zero();
                    for (&wv, &gv) in wrow.iter().zip(g) {
                        s += wv * gv;
                    }
                    *a += s;
                }
            }
        });
    }

    let mut kernel = vec![T::zero(); KERNEL_VOLUME * cin * cout];
    if cin * cout > 0 {
        kernel.par_chunks_mut(cin * cout).enumerate().for_each(|(o, acc)| {
            for i in 0..n {
                let j = rb.neighbors(i)[o];
                if j == NO_NEIGHBOR {
                    continue;
                }
                let g = dy.row(i);
                for (ci, &xv) in x.row(j as usize).iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    for (a, &gv) in acc[ci * cout..(ci + 1) * cout].iter_mut().zip(g) {
                        *a += xv * gv;
                    }
                }
            }
        });
    }

    Ok(ConvGrads { input: dx, kernel, bias })
}

/// Submanifold convolution of a vector-valued grid.
pub fn sparse_conv3d<T: Real>(input: &SparseVoxelGrid<Vec<T>>, w: &SparseConvWeights<T>) -> Result<SparseVoxelGrid<Vec<T>>> {
    let (coords, mut feats) = grid_to_features(input)?;
    if coords.is_empty() {
        return Ok(input.empty_like());
    }
    if feats.cols() == 0 && w.c_in == 0 {
        feats = Features::zeros(coords.len(), 0);
    }
    let rb = Rulebook::build(&coords);
    let out = conv_forward(&feats, &rb, w)?;
    Ok(features_to_grid(input, &coords, &out))
}
