//! Full-batch gradient descent on synthetic fragments.
//!
//! Level-l candidates are the children of ground-truth occupied level-(l-1)
//! voxels (teacher forcing), so the voxel sets are fixed and computed once.
//! The previous level's `(o, x)` input comes from the current predictions
//! but is not differentiated through. Each fragment starts from an empty
//! hidden state.

use rustc_hash::FxHashMap;

use super::gt::{ground_truth_coords, observable};
use super::level_input;
use super::loss::{occupancy_loss, sdf_loss_grad};
use super::model::{level_backward, level_forward, LevelWeights, Model};
use super::FusionMethod;
use crate::camera::Fragment;
use crate::error::{Error, Result};
use crate::featvol::{build_feature_volume, dense_candidates, VolumeParams};
use crate::nnops::{grid_to_features, Features, Rulebook};
use crate::synth::SceneSpec;
use crate::voxgrid::{VoxelCoord, NUM_LEVELS};

/// Fixed voxel set, inputs and targets of one level.
#[derive(Clone, Debug)]
pub struct TrainLevel {
    pub coords: Vec<VoxelCoord>,
    rb: Rulebook,
    /// Level input without the previous-level columns.
    base: Features<f32>,
    /// Row of each voxel's parent in the previous level.
    parent_row: Vec<usize>,
    pub gt_o: Vec<f32>,
    pub gt_x: Vec<f32>,
    pub occupied: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct TrainFragment {
    pub levels: Vec<TrainLevel>,
}

/// Builds the teacher-forced voxel sets and targets. Voxels hidden from all
/// views by more than `lambda` are labeled empty.
pub fn prepare_fragment(fragment: &Fragment, spec: &SceneSpec, model: &Model) -> Result<TrainFragment> {
    let cfg = &model.config;
    let pyramids = super::extract_pyramids(fragment, model)?;
    let params = VolumeParams {
        finest_voxel: cfg.voxel_size,
        d_max: cfg.d_max,
    };
    let mut levels: Vec<TrainLevel> = Vec::new();
    for l in 1..=NUM_LEVELS {
        let candidates = match levels.last() {
            None => dense_candidates(fragment, l, cfg.voxel_size),
            Some(p) => p
                .coords
                .iter()
                .zip(&p.occupied)
                .filter(|(_, o)| **o)
                .flat_map(|(c, _)| c.children())
                .collect(),
        };
        let fv = build_feature_volume(fragment, &pyramids, l, &candidates, params)?;
        let (coords, feats) = grid_to_features(&fv)?;
        let base = if coords.is_empty() {
            Features::zeros(0, 0)
        } else {
            level_input(&coords, feats, fragment.frames.len(), None)?
        };
        let parent_row = match levels.last() {
            None => Vec::new(),
            Some(p) => {
                let index: FxHashMap<VoxelCoord, usize> = p.coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
                coords.iter().map(|c| index[&c.parent()]).collect()
            }
        };
        let gt = ground_truth_coords(spec, &fv, &coords, cfg.lambda);
        let seen: Vec<bool> = coords
            .iter()
            .map(|c| observable(fragment, &fv.voxel_center(*c), cfg.lambda, cfg.d_max))
            .collect();
        let occupied: Vec<bool> = gt.iter().zip(&seen).map(|(g, s)| g.o == 1.0 && *s).collect();
        levels.push(TrainLevel {
            rb: Rulebook::build(&coords),
            coords,
            base,
            parent_row,
            gt_o: occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
            gt_x: gt.iter().map(|g| g.x).collect(),
            occupied,
        });
    }
    Ok(TrainFragment { levels })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f32,
}

/// Total loss summed over levels and fragments, with gradients when `grads`
/// is given.
fn loss_and_grads(
    model: &Model,
    fragments: &[TrainFragment],
    mut grads: Option<&mut [LevelWeights]>,
) -> Result<f64> {
    let use_gru = model.config.fusion == FusionMethod::Gru;
    let mut total = 0.0f64;
    for frag in fragments {
        let mut prev_out: Option<Features<f32>> = None;
        for (li, lev) in frag.levels.iter().enumerate() {
            let n = lev.coords.len();
            if n == 0 {
                break;
            }
            let x = match &prev_out {
                None => lev.base.clone(),
                Some(p) => {
                    let mut px = Features::zeros(n, 2);
                    for (r, &pr) in lev.parent_row.iter().enumerate() {
                        px.row_mut(r).copy_from_slice(p.row(pr));
                    }
                    Features::concat_cols(&lev.base, &px)
                }
            };
            let w = &model.levels[li];
            let cache = level_forward(w, x, &lev.rb, use_gru)?;
            let out = &cache.mlp.output;
            let o: Vec<f32> = (0..n).map(|r| out.row(r)[0]).collect();
            let xs: Vec<f32> = (0..n).map(|r| out.row(r)[1]).collect();
            let l_occ = occupancy_loss(&o, &lev.gt_o)?;
            let (l_sdf, g_sdf) = sdf_loss_grad(&xs, &lev.gt_x, &lev.occupied)?;
            total += f64::from(l_occ) + f64::from(l_sdf);
            if let Some(g) = grads.as_deref_mut() {
                // BCE through the sigmoid is differentiated in logit space,
                // which stays informative when the sigmoid saturates in f32.
                let mut d_pre = Features::zeros(n, 2);
                for r in 0..n {
                    let d_logit = (o[r] - lev.gt_o[r]) / n as f32;
                    d_pre.row_mut(r).copy_from_slice(&[d_logit, g_sdf[r] * (1.0 - xs[r] * xs[r])]);
                }
                let lg = level_backward(w, &cache, &lev.rb, d_pre)?;
                g[li].add_scaled(1.0, &lg);
            }
            prev_out = Some(cache.mlp.output);
        }
    }
    Ok(total)
}

/// Current total loss without updating anything.
pub fn evaluate_loss(model: &Model, fragments: &[TrainFragment]) -> Result<f64> {
    loss_and_grads(model, fragments, None)
}

fn zero_like(w: &LevelWeights) -> LevelWeights {
    let mut z = w.clone();
    z.add_scaled(-1.0, w);
    z
}

/// Plain gradient descent on BCE + log-ℓ1 summed over levels. Returns the
/// loss measured before each step's update; the backbone stays fixed.
pub fn train_toy(fragments: &[TrainFragment], model: &mut Model, opts: TrainOptions) -> Result<Vec<f64>> {
    let mut history = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut grads: Vec<LevelWeights> = model.levels.iter().map(zero_like).collect();
        let loss = loss_and_grads(model, fragments, Some(&mut grads))?;
        if !loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        history.push(loss);
        for (w, g) in model.levels.iter_mut().zip(&grads) {
            w.add_scaled(-opts.lr, g);
        }
        if !model.is_finite() {
            return Err(Error::Diverged(step));
        }
        if step % 50 == 0 {
            log::debug!("step {step}: loss {loss:.5}");
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{compute_fbv, Pose};
    use crate::pipeline::FusionConfig;
    use crate::synth::{render_frames, Primitive};
    use nalgebra::{Point3, Vector3};

    fn setup() -> (SceneSpec, Fragment, FusionConfig) {
        let mut spec = SceneSpec::demo_room();
        spec.primitives = vec![Primitive::Sphere {
            center: [0.0, 0.0, 0.4],
            radius: 0.3,
        }];
        spec.camera.width = 64;
        spec.camera.height = 48;
        let poses: Vec<Pose> = [[0.9, 0.0, 0.8], [0.8, 0.4, 0.8], [0.6, 0.7, 0.8]]
            .iter()
            .map(|e| Pose::look_at(Point3::from(*e), Point3::new(0.0, 0.0, 0.4), Vector3::z()))
            .collect();
        let cfg = FusionConfig {
            d_max: 1.2,
            geo_layers: 1,
            ..FusionConfig::toy()
        };
        let frames = render_frames(&spec, &poses, cfg.d_max).unwrap();
        let fbv = compute_fbv(&frames, cfg.d_max, 0.16);
        (
            spec,
            Fragment {
                frames,
                fbv,
                fragment_index: 0,
            },
            cfg,
        )
    }

    #[test]
    fn teacher_forced_sets_nest() {
        let (spec, frag, cfg) = setup();
        let m = Model::seeded(&cfg, 0).unwrap();
        let t = prepare_fragment(&frag, &spec, &m).unwrap();
        assert_eq!(t.levels.len(), 3);
        for pair in t.levels.windows(2) {
            let occ: rustc_hash::FxHashSet<VoxelCoord> =
                pair[0].coords.iter().zip(&pair[0].occupied).filter(|(_, o)| **o).map(|(c, _)| *c).collect();
            assert!(!pair[1].coords.is_empty());
            assert!(pair[1].coords.iter().all(|c| occ.contains(&c.parent())));
        }
        assert!(t.levels[2].occupied.iter().any(|o| *o));
    }

    #[test]
    fn zero_rate_keeps_loss() {
        let (spec, frag, cfg) = setup();
        let mut m = Model::seeded(&cfg, 0).unwrap();
        let t = prepare_fragment(&frag, &spec, &m).unwrap();
        let h = train_toy(&[t], &mut m, TrainOptions { steps: 3, lr: 0.0 }).unwrap();
        assert!(h[0] > 0.0);
        assert!(h.iter().all(|v| *v == h[0]));
    }

    #[test]
    fn descent_is_deterministic_and_decreases() {
        let (spec, frag, cfg) = setup();
        let run = || {
            let mut m = Model::seeded(&cfg, 0).unwrap();
            let t = prepare_fragment(&frag, &spec, &m).unwrap();
            train_toy(&[t], &mut m, TrainOptions { steps: 20, lr: 0.5 }).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.last().unwrap() < &a[0], "{a:?}");
    }

    #[test]
    fn divergence_reports_step() {
        let (spec, frag, cfg) = setup();
        let mut m = Model::seeded(&cfg, 0).unwrap();
        let t = prepare_fragment(&frag, &spec, &m).unwrap();
        let r = train_toy(&[t], &mut m, TrainOptions { steps: 50, lr: 1e30 });
        assert!(matches!(r, Err(Error::Diverged(_))), "{r:?}");
    }
}
