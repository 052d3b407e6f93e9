//! Supervision losses with their gradients.
//!
//! Occupancy uses mean binary cross-entropy over all evaluated voxels; the
//! SDF term is a mean ℓ1 between log-transformed values, `T(x) = sign(x) ·
//! ln(1 + |x|)`, over ground-truth occupied voxels only.

use crate::error::{Error, Result};
use crate::nnops::Real;
use crate::voxgrid::{SparseVoxelGrid, TsdfVoxel};

pub const PROB_EPS: f64 = 1e-7;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::VoxelSetMismatch(format!("{a} predictions for {b} targets")));
    }
    Ok(())
}

#[inline]
pub fn log_transform<T: Real>(x: T) -> T {
    x.signum() * x.abs().ln_1p()
}

/// Mean BCE and its gradient with respect to each prediction.
pub fn occupancy_loss_grad<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    same_len(pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let n = T::lit(pred.len() as f64);
    let (lo, hi) = (T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(gt) {
        let pc = p.max(lo).min(hi);
        total += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        let g = if p < lo || p > hi {
            T::zero()
        } else {
            (pc - y) / (pc * (T::one() - pc))
        };
        grad.push(g / n);
    }
    Ok((total / n, grad))
}

pub fn occupancy_loss<T: Real>(pred: &[T], gt: &[T]) -> Result<T> {
    occupancy_loss_grad(pred, gt).map(|(l, _)| l)
}

/// Mean log-ℓ1 over voxels where `mask` is set, and the gradient with
/// respect to each prediction (zero off the mask).
pub fn sdf_loss_grad<T: Real>(pred: &[T], gt: &[T], mask: &[bool]) -> Result<(T, Vec<T>)> {
    same_len(pred.len(), gt.len())?;
    same_len(pred.len(), mask.len())?;
    let count = mask.iter().filter(|m| **m).count();
    let mut grad = vec![T::zero(); pred.len()];
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let n = T::lit(count as f64);
    let mut total = T::zero();
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        let d = log_transform(pred[i]) - log_transform(gt[i]);
        total += d.abs();
        let dt = T::one() / (T::one() + pred[i].abs());
        grad[i] = d.signum() * dt / n;
        if d == T::zero() {
            grad[i] = T::zero();
        }
    }
    Ok((total / n, grad))
}

pub fn sdf_loss<T: Real>(pred: &[T], gt: &[T], mask: &[bool]) -> Result<T> {
    sdf_loss_grad(pred, gt, mask).map(|(l, _)| l)
}

/// Pairs up predictions and targets on identical voxel sets.
fn aligned<'a>(
    pred: &'a SparseVoxelGrid<TsdfVoxel>,
    gt: &'a SparseVoxelGrid<TsdfVoxel>,
) -> Result<Vec<(&'a TsdfVoxel, &'a TsdfVoxel)>> {
    same_len(pred.len(), gt.len())?;
    pred.iter()
        .map(|(c, p)| {
            gt.get(c)
                .map(|g| (p, g))
                .ok_or_else(|| Error::VoxelSetMismatch(format!("voxel {c:?} has no target")))
        })
        .collect()
}

/// Grid form: BCE on `o` against the targets' occupancy (1 where `gt.o ≥ 0.5`).
pub fn occupancy_loss_grid(pred: &SparseVoxelGrid<TsdfVoxel>, gt: &SparseVoxelGrid<TsdfVoxel>) -> Result<f64> {
    let pairs = aligned(pred, gt)?;
    let p: Vec<f64> = pairs.iter().map(|(p, _)| f64::from(p.o)).collect();
    let y: Vec<f64> = pairs.iter().map(|(_, g)| if g.o >= 0.5 { 1.0 } else { 0.0 }).collect();
    occupancy_loss(&p, &y)
}

pub fn sdf_loss_grid(pred: &SparseVoxelGrid<TsdfVoxel>, gt: &SparseVoxelGrid<TsdfVoxel>) -> Result<f64> {
    let pairs = aligned(pred, gt)?;
    let p: Vec<f64> = pairs.iter().map(|(p, _)| f64::from(p.x)).collect();
    let y: Vec<f64> = pairs.iter().map(|(_, g)| f64::from(g.x)).collect();
    let m: Vec<bool> = pairs.iter().map(|(_, g)| g.o >= 0.5).collect();
    sdf_loss(&p, &y, &m)
}
