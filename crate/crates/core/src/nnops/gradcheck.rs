//! Central-difference checks of the analytic backward passes.
//!
//! Every check builds a random double-precision instance, reduces the op's
//! output to a scalar `L = Σ c ⊙ y` with random upstream weights `c`, and
//! compares `∂L/∂θ` from the backward pass against
//! `(L(θ + h) − L(θ − h)) / 2h` for inputs and parameters.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    conv_backward, conv_forward, gru_backward, gru_forward, mlp_backward, mlp_forward_batch, Features, GruWeights,
    MlpWeights, Rulebook, SparseConvWeights,
};
use crate::pipeline::loss::{occupancy_loss_grad, sdf_loss_grad};
use crate::voxgrid::VoxelCoord;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradCheckOp {
    SparseConv,
    Mlp,
    Gru,
    OccupancyLoss,
    SdfLoss,
}

impl GradCheckOp {
    pub const ALL: [GradCheckOp; 5] = [
        GradCheckOp::SparseConv,
        GradCheckOp::Mlp,
        GradCheckOp::Gru,
        GradCheckOp::OccupancyLoss,
        GradCheckOp::SdfLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckOp::SparseConv => "sparse_conv3d",
            GradCheckOp::Mlp => "mlp_forward",
            GradCheckOp::Gru => "gru_cell",
            GradCheckOp::OccupancyLoss => "occupancy_loss",
            GradCheckOp::SdfLoss => "sdf_loss",
        }
    }
}

impl fmt::Display for GradCheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradCheckOp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `f` around `params`.
/// `limit` caps how many coordinates are probed (chosen with `rng`).
pub fn check_coordinates(
    params: &mut [f64],
    analytic: &[f64],
    h: f64,
    limit: Option<usize>,
    rng: &mut impl Rng,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let idx: Vec<usize> = match limit {
        Some(k) if k < params.len() => {
            let mut v = sample(rng, params.len(), k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..params.len()).collect(),
    };
    let mut worst = 0f64;
    for i in idx {
        let x0 = params[i];
        params[i] = x0 + h;
        let fp = f(params);
        params[i] = x0 - h;
        let fm = f(params);
        params[i] = x0;
        worst = worst.max(relative_error(analytic[i], (fp - fm) / (2.0 * h)));
    }
    worst
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random distinct coordinates inside `[0, side)³`, sorted.
fn random_coords(rng: &mut impl Rng, side: i32, fill: f64) -> Vec<VoxelCoord> {
    let mut out = Vec::new();
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                if rng.random_bool(fill) {
                    out.push(VoxelCoord::new(i, j, k));
                }
            }
        }
    }
    if out.is_empty() {
        out.push(VoxelCoord::new(0, 0, 0));
    }
    out
}

/// Flat parameter vector helpers for a conv weight.
fn conv_flat(w: &SparseConvWeights<f64>) -> Vec<f64> {
    w.kernel.iter().chain(&w.bias).copied().collect()
}

fn conv_unflat(w: &mut SparseConvWeights<f64>, p: &[f64]) {
    let k = w.kernel.len();
    w.kernel.copy_from_slice(&p[..k]);
    let b = w.bias.len();
    w.bias.copy_from_slice(&p[k..k + b]);
}

fn check_conv(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let coords = random_coords(rng, 4, 0.45);
    let rb = Rulebook::build(&coords);
    let (cin, cout) = (3, 2);
    let mut w = SparseConvWeights::<f64>::random(cin, cout, 1.0, rng);
    w.bias = uniform(rng, cout, -0.5, 0.5);
    let x = Features::from_vec(coords.len(), cin, uniform(rng, coords.len() * cin, -1.0, 1.0));
    let c = Features::from_vec(coords.len(), cout, uniform(rng, coords.len() * cout, -1.0, 1.0));
    let g = conv_backward(&x, &rb, &w, &c).unwrap();

    let mut xp = x.data().to_vec();
    let mut worst = check_coordinates(&mut xp, g.input.data(), h, None, rng, |p| {
        let xi = Features::from_vec(coords.len(), cin, p.to_vec());
        dot(conv_forward(&xi, &rb, &w).unwrap().data(), c.data())
    });
    let mut wp = conv_flat(&w);
    let analytic: Vec<f64> = g.kernel.iter().chain(&g.bias).copied().collect();
    let mut wt = w.clone();
    worst = worst.max(check_coordinates(&mut wp, &analytic, h, None, rng, |p| {
        conv_unflat(&mut wt, p);
        dot(conv_forward(&x, &rb, &wt).unwrap().data(), c.data())
    }));
    worst
}

fn mlp_flat(w: &MlpWeights<f64>) -> Vec<f64> {
    w.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
}

fn mlp_unflat(w: &mut MlpWeights<f64>, p: &[f64]) {
    let mut off = 0;
    for l in &mut w.layers {
        let n = l.weight.len();
        l.weight.copy_from_slice(&p[off..off + n]);
        off += n;
        let m = l.bias.len();
        l.bias.copy_from_slice(&p[off..off + m]);
        off += m;
    }
}

fn check_mlp(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let (rows, dim) = (6, 8);
    let mut w = MlpWeights::<f64>::random(dim, &[10], rng);
    for l in &mut w.layers {
        l.bias = uniform(rng, l.out_dim, -0.3, 0.3);
    }
    let x = Features::from_vec(rows, dim, uniform(rng, rows * dim, -1.0, 1.0));
    let c = Features::from_vec(rows, 2, uniform(rng, rows * 2, -1.0, 1.0));
    let cache = mlp_forward_batch(&x, &w).unwrap();
    let g = mlp_backward(&cache, &w, &c).unwrap();

    let mut xp = x.data().to_vec();
    let mut worst = check_coordinates(&mut xp, g.input.data(), h, None, rng, |p| {
        let xi = Features::from_vec(rows, dim, p.to_vec());
        dot(mlp_forward_batch(&xi, &w).unwrap().output.data(), c.data())
    });
    let gw = MlpWeights { layers: g.layers };
    let mut wp = mlp_flat(&w);
    let mut wt = w.clone();
    worst = worst.max(check_coordinates(&mut wp, &mlp_flat(&gw), h, None, rng, |p| {
        mlp_unflat(&mut wt, p);
        dot(mlp_forward_batch(&x, &wt).unwrap().output.data(), c.data())
    }));
    worst
}

fn check_gru(rng: &mut ChaCha8Rng, h: f64, limit: Option<usize>) -> f64 {
    let coords = random_coords(rng, 3, 0.6);
    let rb = Rulebook::build(&coords);
    let n = coords.len();
    let (hid, geo) = (4, 4);
    let mut w = GruWeights::<f64>::random(hid, geo, rng);
    for gate in [&mut w.w_z, &mut w.w_r, &mut w.w_h] {
        gate.bias = uniform(rng, hid, -0.5, 0.5);
    }
    let hp = Features::from_vec(n, hid, uniform(rng, n * hid, -1.0, 1.0));
    let gf = Features::from_vec(n, geo, uniform(rng, n * geo, -1.0, 1.0));
    let c = Features::from_vec(n, hid, uniform(rng, n * hid, -1.0, 1.0));
    let cache = gru_forward(&hp, &gf, &rb, &w).unwrap();
    let g = gru_backward(&cache, &rb, &w, &c).unwrap();
    let eval = |hp: &Features<f64>, gf: &Features<f64>, w: &GruWeights<f64>| {
        dot(gru_forward(hp, gf, &rb, w).unwrap().h.data(), c.data())
    };

    let mut p = hp.data().to_vec();
    let mut worst = check_coordinates(&mut p, g.h_prev.data(), h, limit, rng, |p| {
        eval(&Features::from_vec(n, hid, p.to_vec()), &gf, &w)
    });
    let mut p = gf.data().to_vec();
    worst = worst.max(check_coordinates(&mut p, g.g.data(), h, limit, rng, |p| {
        eval(&hp, &Features::from_vec(n, geo, p.to_vec()), &w)
    }));
    for (gate, grad) in [(0, &g.w_z), (1, &g.w_r), (2, &g.w_h)] {
        let mut wt = w.clone();
        let mut p = conv_flat(match gate {
            0 => &w.w_z,
            1 => &w.w_r,
            _ => &w.w_h,
        });
        worst = worst.max(check_coordinates(&mut p, &conv_flat(grad), h, limit, rng, |p| {
            let slot = match gate {
                0 => &mut wt.w_z,
                1 => &mut wt.w_r,
                _ => &mut wt.w_h,
            };
            conv_unflat(slot, p);
            eval(&hp, &gf, &wt)
        }));
    }
    worst
}

fn check_occupancy(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let n = 16;
    let mut pred = uniform(rng, n, 0.05, 0.95);
    let gt: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let (_, grad) = occupancy_loss_grad(&pred, &gt).unwrap();
    check_coordinates(&mut pred, &grad, h, None, rng, |p| occupancy_loss_grad(p, &gt).unwrap().0)
}

fn check_sdf(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let n = 16;
    let gt = uniform(rng, n, -1.0, 1.0);
    // Keep predictions away from the |·| kink at pred = gt.
    let mut pred: Vec<f64> = gt
        .iter()
        .map(|g| {
            let d = rng.random_range(0.05..0.6) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (g + d).clamp(-1.0, 1.0)
        })
        .collect();
    for (p, g) in pred.iter_mut().zip(&gt) {
        if (*p - g).abs() < 0.01 {
            *p = if *g > 0.0 { g - 0.3 } else { g + 0.3 };
        }
    }
    let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let (_, grad) = sdf_loss_grad(&pred, &gt, &mask).unwrap();
    check_coordinates(&mut pred, &grad, h, None, rng, |p| sdf_loss_grad(p, &gt, &mask).unwrap().0)
}

/// Max relative error over one seeded random instance of `op`.
pub fn grad_check(op: GradCheckOp, seed: u64, h: f64) -> f64 {
    grad_check_limited(op, seed, h, None)
}

/// Like [`grad_check`], probing at most `limit` coordinates per tensor.
pub fn grad_check_limited(op: GradCheckOp, seed: u64, h: f64, limit: Option<usize>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    match op {
        GradCheckOp::SparseConv => check_conv(&mut rng, h),
        GradCheckOp::Mlp => check_mlp(&mut rng, h),
        GradCheckOp::Gru => check_gru(&mut rng, h, limit),
        GradCheckOp::OccupancyLoss => check_occupancy(&mut rng, h),
        GradCheckOp::SdfLoss => check_sdf(&mut rng, h),
    }
}

/// Worst error over `instances` seeds starting at `seed`.
pub fn grad_check_suite(op: GradCheckOp, instances: usize, seed: u64, h: f64, limit: Option<usize>) -> f64 {
    (0..instances as u64)
        .map(|i| grad_check_limited(op, seed + i, h, limit))
        .fold(0.0, f64::max)
}
