//! Per-level network weights and their forward/backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FusionConfig;
use crate::error::{Error, Result};
use crate::featvol::StubBackbone;
use crate::nnops::{
    conv_backward, conv_forward, gru_backward, gru_forward, mlp_backward_pre, mlp_forward_batch, Features, GruCache,
    GruWeights, Linear, MlpCache, MlpWeights, Rulebook, SparseConvWeights, Tensor, WeightSet,
};
use crate::voxgrid::NUM_LEVELS;

/// Width of the level input: backbone channels, mean camera depth, view
/// fraction, plus the upsampled `(o, x)` of the previous level.
pub fn level_input_dim(channels: usize, level: u8) -> usize {
    channels + 2 + if level > 1 { 2 } else { 0 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelWeights {
    pub geo: Vec<SparseConvWeights<f32>>,
    pub gru: GruWeights<f32>,
    pub mlp: MlpWeights<f32>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: FusionConfig,
    pub backbone: StubBackbone,
    pub levels: Vec<LevelWeights>,
}

fn conv_tensors(set: &mut WeightSet, prefix: &str, w: &SparseConvWeights<f32>) -> Result<()> {
    set.insert(format!("{prefix}.kernel"), Tensor::new(vec![3, 3, 3, w.c_in, w.c_out], w.kernel.clone())?)?;
    set.insert(format!("{prefix}.bias"), Tensor::new(vec![w.c_out], w.bias.clone())?)
}

fn conv_from(set: &WeightSet, prefix: &str, c_in: usize, c_out: usize) -> Result<SparseConvWeights<f32>> {
    Ok(SparseConvWeights {
        c_in,
        c_out,
        kernel: set.require(&format!("{prefix}.kernel"), &[3, 3, 3, c_in, c_out])?.data.clone(),
        bias: set.require(&format!("{prefix}.bias"), &[c_out])?.data.clone(),
    })
}

impl Model {
    pub fn seeded(config: &FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = StubBackbone::seeded(config.backbone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e7e1);
        let g = config.geo_channels;
        let levels = (1..=NUM_LEVELS)
            .map(|l| {
                let in_dim = level_input_dim(config.channels[l as usize - 1], l);
                let geo = (0..config.geo_layers)
                    .map(|n| SparseConvWeights::random(if n == 0 { in_dim } else { g }, g, 2f64.sqrt(), &mut rng))
                    .collect();
                LevelWeights {
                    geo,
                    gru: GruWeights::random(g, g, &mut rng),
                    mlp: MlpWeights::random(g, &config.mlp_hidden, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            backbone,
            levels,
        })
    }

    /// Loads every tensor the configuration needs; shapes are checked by name.
    pub fn from_weights(config: &FusionConfig, set: &WeightSet) -> Result<Self> {
        config.validate()?;
        let backbone = StubBackbone::from_weights(config.backbone(), set)?;
        let g = config.geo_channels;
        let mut levels = Vec::new();
        for l in 1..=NUM_LEVELS {
            let in_dim = level_input_dim(config.channels[l as usize - 1], l);
            let geo = (0..config.geo_layers)
                .map(|n| conv_from(set, &format!("level{l}.geo_conv{n}"), if n == 0 { in_dim } else { g }, g))
                .collect::<Result<Vec<_>>>()?;
            let gate = |name: &str| conv_from(set, &format!("level{l}.gru.{name}"), 2 * g, g);
            let gru = GruWeights::new(gate("W_z")?, gate("W_r")?, gate("W_h")?)?;
            let mut dims = vec![g];
            dims.extend_from_slice(&config.mlp_hidden);
            dims.push(2);
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(j, d)| {
                    let p = format!("level{l}.mlp.layer{j}");
                    Ok(Linear {
                        in_dim: d[0],
                        out_dim: d[1],
                        weight: set.require(&format!("{p}.weight"), &[d[1], d[0]])?.data.clone(),
                        bias: set.require(&format!("{p}.bias"), &[d[1]])?.data.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            levels.push(LevelWeights {
                geo,
                gru,
                mlp: MlpWeights::new(layers)?,
            });
        }
        let expected = Self {
            config: config.clone(),
            backbone,
            levels,
        };
        // Extra tensors usually mean the file was written for another configuration.
        let names = expected.export()?;
        if let Some(extra) = set.names().find(|n| names.get(n).is_none()) {
            return Err(Error::UnknownTensor(extra.to_string()));
        }
        Ok(expected)
    }

    pub fn export(&self) -> Result<WeightSet> {
        let mut set = WeightSet::new();
        self.backbone.export(&mut set)?;
        for (i, lw) in self.levels.iter().enumerate() {
            let l = i + 1;
            for (n, w) in lw.geo.iter().enumerate() {
                conv_tensors(&mut set, &format!("level{l}.geo_conv{n}"), w)?;
            }
            conv_tensors(&mut set, &format!("level{l}.gru.W_z"), &lw.gru.w_z)?;
            conv_tensors(&mut set, &format!("level{l}.gru.W_r"), &lw.gru.w_r)?;
            conv_tensors(&mut set, &format!("level{l}.gru.W_h"), &lw.gru.w_h)?;
            for (j, layer) in lw.mlp.layers.iter().enumerate() {
                let p = format!("level{l}.mlp.layer{j}");
                set.insert(format!("{p}.weight"), Tensor::new(vec![layer.out_dim, layer.in_dim], layer.weight.clone())?)?;
                set.insert(format!("{p}.bias"), Tensor::new(vec![layer.out_dim], layer.bias.clone())?)?;
            }
        }
        Ok(set)
    }

    pub fn level(&self, l: u8) -> &LevelWeights {
        &self.levels[l as usize - 1]
    }

    pub fn level_mut(&mut self, l: u8) -> &mut LevelWeights {
        &mut self.levels[l as usize - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|lw| {
            lw.geo.iter().all(SparseConvWeights::is_finite)
                && lw.gru.w_z.is_finite()
                && lw.gru.w_r.is_finite()
                && lw.gru.w_h.is_finite()
                && lw.mlp.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
        })
    }
}

/// Activations of the geometric conv stack; `acts[0]` is the input and
/// `acts[n + 1] = relu(conv_n(acts[n]))`.
pub fn geo_forward(w: &[SparseConvWeights<f32>], x: Features<f32>, rb: &Rulebook) -> Result<Vec<Features<f32>>> {
    let mut acts = vec![x];
    for conv in w {
        let y = conv_forward(acts.last().expect("non-empty"), rb, conv)?.map(|v| v.max(0.0));
        acts.push(y);
    }
    Ok(acts)
}

/// Returns per-layer parameter gradients given `∂L/∂acts.last()`.
pub fn geo_backward(
    w: &[SparseConvWeights<f32>],
    acts: &[Features<f32>],
    rb: &Rulebook,
    d_out: Features<f32>,
) -> Result<Vec<SparseConvWeights<f32>>> {
    let mut grads = vec![None; w.len()];
    let mut d = d_out;
    for n in (0..w.len()).rev() {
        let dy = d.zip_map(&acts[n + 1], |g, a| if a > 0.0 { g } else { 0.0 });
        let cg = conv_backward(&acts[n], rb, &w[n], &dy)?;
        d = cg.input.clone();
        grads[n] = Some(cg.kernel_bias());
    }
    Ok(grads.into_iter().map(|g| g.expect("filled")).collect())
}

/// Everything the backward pass of one level needs.
pub struct LevelCache {
    pub acts: Vec<Features<f32>>,
    pub gru: Option<GruCache<f32>>,
    pub mlp: MlpCache<f32>,
}

/// Forward pass of one level with zero prior hidden state: geo stack, then
/// the GRU when `use_gru`, then the head.
pub fn level_forward(w: &LevelWeights, x: Features<f32>, rb: &Rulebook, use_gru: bool) -> Result<LevelCache> {
    let acts = geo_forward(&w.geo, x, rb)?;
    let g = acts.last().expect("non-empty");
    let (gru, fused) = if use_gru {
        let h0 = Features::zeros(g.rows(), w.gru.hidden());
        let cache = gru_forward(&h0, g, rb, &w.gru)?;
        let h = cache.h.clone();
        (Some(cache), h)
    } else {
        (None, g.clone())
    };
    let mlp = mlp_forward_batch(&fused, &w.mlp)?;
    Ok(LevelCache { acts, gru, mlp })
}

/// Gradients of one level given `∂L/∂(logit, raw)` per row.
pub fn level_backward(w: &LevelWeights, cache: &LevelCache, rb: &Rulebook, d_pre: Features<f32>) -> Result<LevelWeights> {
    let mg = mlp_backward_pre(&cache.mlp, &w.mlp, d_pre)?;
    let (d_geo, gru) = match &cache.gru {
        Some(gc) => {
            let gg = gru_backward(gc, rb, &w.gru, &mg.input)?;
            (gg.g, GruWeights::new(gg.w_z, gg.w_r, gg.w_h)?)
        }
        None => {
            let h = w.gru.hidden();
            let zero = || SparseConvWeights::zeros(2 * h, h);
            (mg.input, GruWeights::new(zero(), zero(), zero())?)
        }
    };
    let geo = geo_backward(&w.geo, &cache.acts, rb, d_geo)?;
    Ok(LevelWeights {
        geo,
        gru,
        mlp: MlpWeights { layers: mg.layers },
    })
}

fn axpy(dst: &mut [f32], a: f32, src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn conv_axpy(dst: &mut SparseConvWeights<f32>, a: f32, g: &SparseConvWeights<f32>) {
    axpy(&mut dst.kernel, a, &g.kernel);
    axpy(&mut dst.bias, a, &g.bias);
}

impl LevelWeights {
    /// `self += a · grad`, tensor by tensor.
    pub fn add_scaled(&mut self, a: f32, grad: &LevelWeights) {
        for (w, g) in self.geo.iter_mut().zip(&grad.geo) {
            conv_axpy(w, a, g);
        }
        conv_axpy(&mut self.gru.w_z, a, &grad.gru.w_z);
        conv_axpy(&mut self.gru.w_r, a, &grad.gru.w_r);
        conv_axpy(&mut self.gru.w_h, a, &grad.gru.w_h);
        for (w, g) in self.mlp.layers.iter_mut().zip(&grad.mlp.layers) {
            axpy(&mut w.weight, a, &g.weight);
            axpy(&mut w.bias, a, &g.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnops::{check_tensor_name, mlp_backward};
    use crate::voxgrid::VoxelCoord;
    use rand::Rng;

    #[test]
    fn export_import_round_trip() {
        let cfg = FusionConfig::toy();
        let m = Model::seeded(&cfg, 3).unwrap();
        let set = m.export().unwrap();
        for name in set.names() {
            check_tensor_name(name).unwrap();
        }
        let back = Model::from_weights(&cfg, &set).unwrap();
        assert_eq!(back.levels, m.levels);
        assert_eq!(back.export().unwrap(), set);
    }

    #[test]
    fn incompatible_weights_are_named() {
        let m = Model::seeded(&FusionConfig::toy(), 3).unwrap();
        let set = m.export().unwrap();
        let other = FusionConfig {
            geo_channels: 4,
            ..FusionConfig::toy()
        };
        match Model::from_weights(&other, &set) {
            Err(Error::TensorShape { name, .. }) => assert!(name.starts_with("level1.geo_conv0")),
            r => panic!("unexpected {r:?}"),
        }
        let deeper = FusionConfig {
            geo_layers: 1,
            ..FusionConfig::toy()
        };
        assert!(matches!(Model::from_weights(&deeper, &set), Err(Error::UnknownTensor(n)) if n.contains("geo_conv1")));
    }

    #[test]
    fn pre_activation_backward_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = MlpWeights::<f64>::random(4, &[5], &mut rng);
        let x = Features::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let cache = mlp_forward_batch(&x, &w).unwrap();
        let d = Features::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
        let a = mlp_backward(&cache, &w, &d).unwrap();
        let mut pre = Features::zeros(3, 2);
        for r in 0..3 {
            let (o, xx) = (cache.output.row(r)[0], cache.output.row(r)[1]);
            pre.row_mut(r).copy_from_slice(&[d.row(r)[0] * o * (1.0 - o), d.row(r)[1] * (1.0 - xx * xx)]);
        }
        let b = mlp_backward_pre(&cache, &w, pre).unwrap();
        assert_eq!(a, b);
    }

    /// Finite differences through the whole level (f32, loose tolerance).
    #[test]
    fn level_gradient_spot_check() {
        let cfg = FusionConfig::toy();
        let m = Model::seeded(&cfg, 5).unwrap();
        let w = m.level(2).clone();
        let coords: Vec<VoxelCoord> = (0..3)
            .flat_map(|i| (0..3).flat_map(move |j| (0..2).map(move |k| VoxelCoord::new(i, j, k))))
            .collect();
        let rb = Rulebook::build(&coords);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cols = level_input_dim(cfg.channels[1], 2);
        let x = Features::from_vec(
            coords.len(),
            cols,
            (0..coords.len() * cols).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        // L = Σ (o + x) over voxels.
        let loss = |w: &LevelWeights| -> f64 {
            let c = level_forward(w, x.clone(), &rb, true).unwrap();
            c.mlp.output.data().iter().map(|&v| f64::from(v)).sum()
        };
        let c = level_forward(&w, x.clone(), &rb, true).unwrap();
        let mut d_pre = c.mlp.output.map(|_| 0.0);
        for r in 0..coords.len() {
            let (o, xx) = (c.mlp.output.row(r)[0], c.mlp.output.row(r)[1]);
            d_pre.row_mut(r).copy_from_slice(&[o * (1.0 - o), 1.0 - xx * xx]);
        }
        let g = level_backward(&w, &c, &rb, d_pre).unwrap();
        let h = 1e-3f32;
        let probe = |get: &dyn Fn(&mut LevelWeights) -> &mut f32, analytic: f32| {
            let (mut p, mut q) = (w.clone(), w.clone());
            *get(&mut p) += h;
            *get(&mut q) -= h;
            let num = (loss(&p) - loss(&q)) / (2.0 * h as f64);
            let err = (num - analytic as f64).abs() / num.abs().max(analytic.abs() as f64).max(1e-2);
            assert!(err < 2e-2, "numeric {num} analytic {analytic}");
        };
        probe(&|w| &mut w.mlp.layers[0].bias[1], g.mlp.layers[0].bias[1]);
        probe(&|w| &mut w.gru.w_h.bias[0], g.gru.w_h.bias[0]);
        probe(&|w| &mut w.gru.w_z.bias[2], g.gru.w_z.bias[2]);
        probe(&|w| &mut w.geo[0].kernel[13 * 12 * 8 + 3], g.geo[0].kernel[13 * 12 * 8 + 3]);
        probe(&|w| &mut w.geo[1].bias[4], g.geo[1].bias[4]);
    }
}
