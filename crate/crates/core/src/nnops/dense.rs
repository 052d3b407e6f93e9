//! Dense 3-D convolution on a full lattice, used as an independent reference
//! for the sparse engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conv_forward, Features, Rulebook, SparseConvWeights};
use crate::voxgrid::VoxelCoord;

/// Zero-padded "same" convolution of a dense `[n, n, n, c_in]` volume
/// (i slowest). Kernel tap `(a, b, c)` with `a, b, c ∈ {0, 1, 2}` reads the
/// input at offset `(a - 1, b - 1, c - 1)`.
pub fn dense_conv3d(input: &[f64], n: usize, w: &SparseConvWeights<f64>) -> Vec<f64> {
    let (cin, cout) = (w.c_in, w.c_out);
    assert_eq!(input.len(), n * n * n * cin, "dense input size");
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let mut out = vec![0.0; n * n * n * cout];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let o = &mut out[idx(i, j, k) * cout..(idx(i, j, k) + 1) * cout];
                o.copy_from_slice(&w.bias);
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            let (ii, jj, kk) = (i + a, j + b, k + c);
                            if ii < 1 || jj < 1 || kk < 1 || ii > n || jj > n || kk > n {
                                continue;
                            }
                            let src = idx(ii - 1, jj - 1, kk - 1) * cin;
                            let tap = (a * 3 + b) * 3 + c;
                            for ci in 0..cin {
                                let x = input[src + ci];
                                for (co, v) in o.iter_mut().enumerate() {
                                    *v += x * w.kernel[(tap * cin + ci) * cout + co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// One random sparse instance on an `n³` lattice: max |sparse − dense| over
/// the occupied sites, with the dense input zero elsewhere.
pub fn dense_oracle_instance(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.random_range(1..=4);
    let cout = rng.random_range(1..=4);
    let fill = rng.random_range(0.05..0.9);
    let mut w = SparseConvWeights::<f64>::random(cin, cout, 1.0, &mut rng);
    w.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let mut dense = vec![0.0; n * n * n * cin];
    let mut coords = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if rng.random_bool(fill) {
                    let at = ((i * n + j) * n + k) * cin;
                    for c in 0..cin {
                        let v = rng.random_range(-1.0..1.0);
                        dense[at + c] = v;
                        rows.push(v);
                    }
                    coords.push(VoxelCoord::new(i as i32, j as i32, k as i32));
                }
            }
        }
    }
    if coords.is_empty() {
        return 0.0;
    }
    let x = Features::from_vec(coords.len(), cin, rows);
    let sparse = conv_forward(&x, &Rulebook::build(&coords), &w).expect("consistent shapes");
    let reference = dense_conv3d(&dense, n, &w);
    let mut worst = 0.0f64;
    for (r, c) in coords.iter().enumerate() {
        let at = ((c.i as usize * n + c.j as usize) * n + c.k as usize) * cout;
        for co in 0..cout {
            worst = worst.max((sparse.row(r)[co] - reference[at + co]).abs());
        }
    }
    worst
}

/// Worst difference over `instances` seeds, lattice sides cycling 1..=`max_side`.
pub fn dense_oracle_suite(instances: usize, seed: u64, max_side: usize) -> f64 {
    (0..instances)
        .map(|i| dense_oracle_instance(seed + i as u64, 1 + i % max_side))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_center_tap() {
        let mut w = SparseConvWeights::<f64>::zeros(1, 1);
        *w.tap_mut(13, 0, 0) = 2.0;
        w.bias[0] = 0.5;
        assert_eq!(dense_conv3d(&[3.0], 1, &w), vec![6.5]);
    }

    #[test]
    fn neighbor_offset_direction() {
        // Tap (2, 1, 1) reads the +i neighbor.
        let mut w = SparseConvWeights::<f64>::zeros(1, 1);
        w.kernel[(2 * 3 + 1) * 3 + 1] = 1.0;
        let out = dense_conv3d(&[1.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2, &w);
        assert_eq!(out[0], 0.0);
        let mut input = vec![0.0; 8];
        input[4] = 7.0; // (1, 0, 0)
        assert_eq!(dense_conv3d(&input, 2, &w)[0], 7.0);
    }

    #[test]
    fn sparse_matches_dense() {
        assert!(dense_oracle_suite(24, 0, 8) < 1e-12);
    }
}
