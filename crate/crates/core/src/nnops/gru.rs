//! Convolutional GRU over sparse voxels.
//!
//! ```text
//! z  = σ(conv([H_prev, G], W_z))
//! r  = σ(conv([H_prev, G], W_r))
//! H~ = tanh(conv([r ⊙ H_prev, G], W_h))
//! H  = (1 - z) ⊙ H_prev + z ⊙ H~
//! ```

use rand::Rng;

use super::{
    conv_backward, conv_forward, features_to_grid, grid_to_features, sigmoid, ConvGrads, Features, Real, Rulebook,
    SparseConvWeights,
};
use crate::error::{Error, Result};
use crate::voxgrid::SparseVoxelGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights<T> {
    pub w_z: SparseConvWeights<T>,
    pub w_r: SparseConvWeights<T>,
    pub w_h: SparseConvWeights<T>,
}

impl<T: Real> GruWeights<T> {
    pub fn new(w_z: SparseConvWeights<T>, w_r: SparseConvWeights<T>, w_h: SparseConvWeights<T>) -> Result<Self> {
        let w = Self { w_z, w_r, w_h };
        w.validate()?;
        Ok(w)
    }

    pub fn random(hidden: usize, geo: usize, rng: &mut impl Rng) -> Self {
        let c_in = hidden + geo;
        Self {
            w_z: SparseConvWeights::random(c_in, hidden, 1.0, rng),
            w_r: SparseConvWeights::random(c_in, hidden, 1.0, rng),
            w_h: SparseConvWeights::random(c_in, hidden, 1.0, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ci, co) = (self.w_z.c_in, self.w_z.c_out);
        for w in [&self.w_r, &self.w_h] {
            if (w.c_in, w.c_out) != (ci, co) {
                return Err(Error::Shape(format!(
                    "GRU gates disagree: {ci}→{co} vs {}→{}",
                    w.c_in, w.c_out
                )));
            }
        }
        if ci < co {
            return Err(Error::Shape(format!("GRU input width {ci} smaller than hidden width {co}")));
        }
        for w in [&self.w_z, &self.w_r, &self.w_h] {
            if w.kernel.len() != 27 * ci * co || w.bias.len() != co {
                return Err(Error::Shape("GRU gate buffers have wrong sizes".into()));
            }
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.w_z.c_out
    }

    pub fn geo(&self) -> usize {
        self.w_z.c_in - self.w_z.c_out
    }

    pub fn cast<U: Real>(&self) -> GruWeights<U> {
        GruWeights {
            w_z: self.w_z.cast(),
            w_r: self.w_r.cast(),
            w_h: self.w_h.cast(),
        }
    }
}

/// Forward intermediates for [`gru_backward`].
#[derive(Clone, Debug)]
pub struct GruCache<T> {
    h_prev: Features<T>,
    hg: Features<T>,
    rhg: Features<T>,
    pub z: Features<T>,
    pub r: Features<T>,
    pub h_tilde: Features<T>,
    pub h: Features<T>,
}

/// Gradients; the weight-shaped fields hold `∂L/∂W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruGrads<T> {
    pub h_prev: Features<T>,
    pub g: Features<T>,
    pub w_z: SparseConvWeights<T>,
    pub w_r: SparseConvWeights<T>,
    pub w_h: SparseConvWeights<T>,
}

pub fn gru_forward<T: Real>(
    h_prev: &Features<T>,
    g: &Features<T>,
    rb: &Rulebook,
    w: &GruWeights<T>,
) -> Result<GruCache<T>> {
    w.validate()?;
    let hid = w.hidden();
    if h_prev.cols() != hid {
        return Err(Error::ChannelMismatch {
            expected: hid,
            found: h_prev.cols(),
        });
    }
    if g.cols() != w.geo() {
        return Err(Error::ChannelMismatch {
            expected: w.geo(),
            found: g.cols(),
        });
    }
    let hg = Features::concat_cols(h_prev, g);
    let z = conv_forward(&hg, rb, &w.w_z)?.map(sigmoid);
    let r = conv_forward(&hg, rb, &w.w_r)?.map(sigmoid);
    let rh = r.zip_map(h_prev, |a, b| a * b);
    let rhg = Features::concat_cols(&rh, g);
    let h_tilde = conv_forward(&rhg, rb, &w.w_h)?.map(|v| v.tanh());
    let mut h = Features::zeros(h_prev.rows(), hid);
    for (i, o) in h.data_mut().iter_mut().enumerate() {
        let zi = z.data()[i];
        *o = (T::one() - zi) * h_prev.data()[i] + zi * h_tilde.data()[i];
    }
    Ok(GruCache {
        h_prev: h_prev.clone(),
        hg,
        rhg,
        z,
        r,
        h_tilde,
        h,
    })
}

impl<T: Real> ConvGrads<T> {
    /// Parameter gradients in weight layout.
    pub fn kernel_bias(self) -> SparseConvWeights<T> {
        let c_out = self.bias.len();
        let c_in = if c_out == 0 { 0 } else { self.kernel.len() / (27 * c_out) };
        SparseConvWeights {
            c_in,
            c_out,
            kernel: self.kernel,
            bias: self.bias,
        }
    }
}

pub fn gru_backward<T: Real>(
    cache: &GruCache<T>,
    rb: &Rulebook,
    w: &GruWeights<T>,
    d_h: &Features<T>,
) -> Result<GruGrads<T>> {
    let hid = w.hidden();
    if d_h.rows() != cache.h.rows() || d_h.cols() != hid {
        return Err(Error::Shape(format!(
            "GRU backward: upstream {}×{}, expected {}×{hid}",
            d_h.rows(),
            d_h.cols(),
            cache.h.rows()
        )));
    }
    let one = T::one();
    let (z, r, ht, hp) = (&cache.z, &cache.r, &cache.h_tilde, &cache.h_prev);

    let mut d_hprev = Features::from_vec(d_h.rows(), hid, d_h.data().iter().zip(z.data()).map(|(&d, &zi)| d * (one - zi)).collect());
    let d_pre_h = Features::from_vec(
        d_h.rows(),
        hid,
        (0..d_h.data().len())
            .map(|i| d_h.data()[i] * z.data()[i] * (one - ht.data()[i] * ht.data()[i]))
            .collect(),
    );
    let d_pre_z = Features::from_vec(
        d_h.rows(),
        hid,
        (0..d_h.data().len())
            .map(|i| {
                let zi = z.data()[i];
                d_h.data()[i] * (ht.data()[i] - hp.data()[i]) * zi * (one - zi)
            })
            .collect(),
    );

    let gh = conv_backward(&cache.rhg, rb, &w.w_h, &d_pre_h)?;
    let (d_rh, mut d_g) = gh.input.split_cols(hid);
    let d_pre_r = Features::from_vec(
        d_h.rows(),
        hid,
        (0..d_h.data().len())
            .map(|i| {
                let ri = r.data()[i];
                d_rh.data()[i] * hp.data()[i] * ri * (one - ri)
            })
            .collect(),
    );
    for (i, v) in d_hprev.data_mut().iter_mut().enumerate() {
        *v += d_rh.data()[i] * r.data()[i];
    }

    let gz = conv_backward(&cache.hg, rb, &w.w_z, &d_pre_z)?;
    let gr = conv_backward(&cache.hg, rb, &w.w_r, &d_pre_r)?;
    for gi in [&gz.input, &gr.input] {
        let (dh, dg) = gi.split_cols(hid);
        d_hprev.add_assign(&dh);
        d_g.add_assign(&dg);
    }
    Ok(GruGrads {
        h_prev: d_hprev,
        g: d_g,
        w_z: gz.kernel_bias(),
        w_r: gr.kernel_bias(),
        w_h: gh.kernel_bias(),
    })
}

/// Runs the cell on `g`'s voxels. Hidden voxels missing from `h_prev` start
/// at zero; `h_prev` voxels outside `g` are ignored.
pub fn gru_cell<T: Real>(
    g: &SparseVoxelGrid<Vec<T>>,
    h_prev: &SparseVoxelGrid<Vec<T>>,
    w: &GruWeights<T>,
) -> Result<SparseVoxelGrid<Vec<T>>> {
    let (coords, gf) = grid_to_features(g)?;
    if coords.is_empty() {
        return Ok(g.empty_like());
    }
    if gf.cols() != w.geo() {
        return Err(Error::ChannelMismatch {
            expected: w.geo(),
            found: gf.cols(),
        });
    }
    let hid = w.hidden();
    let shift = if h_prev.is_empty() {
        crate::voxgrid::VoxelCoord::new(0, 0, 0)
    } else {
        h_prev.lattice_offset(g)?
    };
    let mut hp = Features::zeros(coords.len(), hid);
    for (i, c) in coords.iter().enumerate() {
        if let Some(v) = h_prev.get(&(*c + shift)) {
            if v.len() != hid {
                return Err(Error::ChannelMismatch {
                    expected: hid,
                    found: v.len(),
                });
            }
            hp.row_mut(i).copy_from_slice(v);
        }
    }
    let rb = Rulebook::build(&coords);
    let cache = gru_forward(&hp, &gf, &rb, w)?;
    Ok(features_to_grid(g, &coords, &cache.h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::VoxelCoord;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize, c: usize) -> SparseVoxelGrid<Vec<f64>> {
        let mut g = SparseVoxelGrid::new(3, 0.04, Vector3::zeros());
        while g.len() < n {
            let coord = VoxelCoord::new(rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..3));
            g.insert(coord, (0..c).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        g
    }

    fn forced(bias_z: f64, rng: &mut ChaCha8Rng) -> GruWeights<f64> {
        let mut w = GruWeights::random(4, 4, rng);
        w.w_z.kernel.iter_mut().for_each(|v| *v = 0.0);
        w.w_z.bias.iter_mut().for_each(|v| *v = bias_z);
        w
    }

    #[test]
    fn z_zero_keeps_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(&mut rng, 10, 4);
        let h = random_grid(&mut rng, 12, 4);
        let w = forced(-1000.0, &mut rng);
        let out = gru_cell(&g, &h, &w).unwrap();
        for (c, v) in out.iter() {
            match h.get(c) {
                Some(hv) => assert_eq!(v, hv),
                None => assert!(v.iter().all(|x| *x == 0.0), "{v:?}"),
            }
        }
    }

    #[test]
    fn z_one_gives_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_grid(&mut rng, 10, 4);
        let h = random_grid(&mut rng, 12, 4);
        let w = forced(1000.0, &mut rng);
        let (coords, gf) = grid_to_features(&g).unwrap();
        let mut hp = Features::zeros(coords.len(), 4);
        for (i, c) in coords.iter().enumerate() {
            if let Some(v) = h.get(c) {
                hp.row_mut(i).copy_from_slice(v);
            }
        }
        let cache = gru_forward(&hp, &gf, &Rulebook::build(&coords), &w).unwrap();
        assert_eq!(cache.h, cache.h_tilde);
    }

    #[test]
    fn empty_hidden_and_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = random_grid(&mut rng, 15, 4);
        let w = GruWeights::random(4, 4, &mut rng);
        let empty = g.empty_like();
        let out = gru_cell(&g, &empty, &w).unwrap();
        let (coords, gf) = grid_to_features(&g).unwrap();
        let cache = gru_forward(&Features::zeros(coords.len(), 4), &gf, &Rulebook::build(&coords), &w).unwrap();
        for (i, c) in coords.iter().enumerate() {
            let want: Vec<f64> = (0..4).map(|k| cache.z.row(i)[k] * cache.h_tilde.row(i)[k]).collect();
            for (a, b) in out.get(c).unwrap().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(cache.z.data().iter().chain(cache.r.data()).all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = random_grid(&mut rng, 3, 3);
        let w = GruWeights::random(4, 4, &mut rng);
        assert!(matches!(
            gru_cell(&g, &g.empty_like(), &w),
            Err(Error::ChannelMismatch { expected: 4, found: 3 })
        ));
    }
}
