//! Neural primitives on sparse voxel sets with hand-written backward passes.
//!
//! The hot paths work on [`Features`] matrices (one row per active voxel)
//! plus a [`Rulebook`] of neighbor indices. Grid-level wrappers such as
//! [`sparse_conv3d`] and [`gru_cell`] accept [`SparseVoxelGrid`]s directly.

mod conv;
mod dense;
pub mod gradcheck;
mod gru;
mod mlp;
mod weights;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::voxgrid::{SparseVoxelGrid, VoxelCoord};

pub use dense::{dense_conv3d, dense_oracle_instance, dense_oracle_suite};
pub use conv::{conv_backward, conv_forward, sparse_conv3d, ConvGrads, SparseConvWeights};
pub use gru::{gru_backward, gru_cell, gru_forward, GruCache, GruGrads, GruWeights};
pub use mlp::{mlp_backward, mlp_backward_pre, mlp_forward, mlp_forward_batch, Linear, MlpCache, MlpGrads, MlpWeights};
pub use weights::{check_tensor_name, load_weights, read_weights, save_weights, write_weights, Tensor, WeightSet};

/// Scalar type for network evaluation (f32 in the pipeline, f64 for
/// gradient checks).
pub trait Real: Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static {
    fn lit(x: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Row-major matrix with one row per active voxel.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Features<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Features<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "feature matrix size");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_vec(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `[a, b]` channel concatenation.
    pub fn concat_cols(a: &Self, b: &Self) -> Self {
        assert_eq!(a.rows, b.rows, "row count mismatch in concatenation");
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for i in 0..a.rows {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Self::from_vec(a.rows, cols, data)
    }

    /// Splits the columns at `k` into `([.., k), [k, ..))`.
    pub fn split_cols(&self, k: usize) -> (Self, Self) {
        assert!(k <= self.cols);
        let mut a = Vec::with_capacity(self.rows * k);
        let mut b = Vec::with_capacity(self.rows * (self.cols - k));
        for i in 0..self.rows {
            let r = self.row(i);
            a.extend_from_slice(&r[..k]);
            b.extend_from_slice(&r[k..]);
        }
        (Self::from_vec(self.rows, k, a), Self::from_vec(self.rows, self.cols - k, b))
    }

    pub fn cast<U: Real>(&self) -> Features<U> {
        Features::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
        )
    }
}

pub(crate) const NO_NEIGHBOR: u32 = u32::MAX;
pub const KERNEL_VOLUME: usize = 27;

/// Index of kernel offset `(di, dj, dk)`, each in `-1..=1`.
#[inline]
pub fn offset_index(di: i32, dj: i32, dk: i32) -> usize {
    (((di + 1) * 3 + (dj + 1)) * 3 + (dk + 1)) as usize
}

pub fn kernel_offsets() -> impl Iterator<Item = (usize, VoxelCoord)> {
    (0..KERNEL_VOLUME).map(|o| {
        let o_i = o as i32;
        (o, VoxelCoord::new(o_i / 9 - 1, (o_i / 3) % 3 - 1, o_i % 3 - 1))
    })
}

/// For each active voxel, the row index of each of its 27 neighbors (or
/// none). Shared by every submanifold layer over the same active set.
#[derive(Clone, Debug)]
pub struct Rulebook {
    neighbors: Vec<[u32; KERNEL_VOLUME]>,
}

impl Rulebook {
    pub fn build(coords: &[VoxelCoord]) -> Self {
        let index: rustc_hash::FxHashMap<VoxelCoord, u32> =
            coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        let offsets: Vec<_> = kernel_offsets().map(|(_, d)| d).collect();
        let neighbors = coords
            .iter()
            .map(|c| {
                let mut n = [NO_NEIGHBOR; KERNEL_VOLUME];
                for (o, d) in offsets.iter().enumerate() {
                    if let Some(&j) = index.get(&(*c + *d)) {
                        n[o] = j;
                    }
                }
                n
            })
            .collect();
        Self { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    #[inline]
    pub(crate) fn neighbors(&self, i: usize) -> &[u32; KERNEL_VOLUME] {
        &self.neighbors[i]
    }
}

/// Flattens a vector-valued grid into coordinates plus a feature matrix.
pub fn grid_to_features<T: Real>(grid: &SparseVoxelGrid<Vec<T>>) -> Result<(Vec<VoxelCoord>, Features<T>)> {
    let coords: Vec<VoxelCoord> = grid.coords().copied().collect();
    let cols = grid.values().next().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(coords.len() * cols);
    for v in grid.values() {
        if v.len() != cols {
            return Err(Error::ChannelMismatch {
                expected: cols,
                found: v.len(),
            });
        }
        data.extend_from_slice(v);
    }
    let rows = coords.len();
    Ok((coords, Features::from_vec(rows, cols, data)))
}

pub fn features_to_grid<T: Real, Q>(
    like: &SparseVoxelGrid<Q>,
    coords: &[VoxelCoord],
    feats: &Features<T>,
) -> SparseVoxelGrid<Vec<T>> {
    let mut out = like.empty_like();
    out.extend(coords.iter().enumerate().map(|(i, c)| (*c, feats.row(i).to_vec())));
    out
}
