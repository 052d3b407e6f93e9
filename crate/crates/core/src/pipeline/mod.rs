//! Coarse-to-fine fragment reconstruction with fused hidden state.

pub mod config;
pub mod gt;
pub mod loss;
pub mod model;
pub mod train;

use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{assemble_fragments, Fragment, Frame};
use crate::error::{Error, Result};
use crate::featvol::{build_feature_volume, dense_candidates, FeaturePyramid, VolumeParams};
use crate::meshing::{marching_cubes, IsoSample, McParams, TriangleMesh};
use crate::nnops::{features_to_grid, grid_to_features, gru_cell, mlp_forward_batch, Features, Rulebook};
use crate::voxgrid::{
    extract_region, level_voxel_size, replace_region, sparsify, upsample2x, SparseVoxelGrid, TsdfVoxel, VoxelCoord,
    NUM_LEVELS,
};

pub use config::{FusionArea, FusionConfig, FusionMethod};
pub use model::{LevelWeights, Model};
pub use train::{prepare_fragment, train_toy, TrainFragment, TrainOptions};

/// Cap on the running weight of linearly fused voxels.
pub const LINEAR_MAX_WEIGHT: f32 = 255.0;

/// Global TSDF voxel with the fragment index that last wrote it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlobalVoxel {
    pub o: f32,
    pub x: f32,
    pub weight: f32,
    pub updated: u32,
}

impl IsoSample for GlobalVoxel {
    fn iso_value(&self, theta: f32) -> Option<f32> {
        (self.o >= theta).then_some(self.x)
    }
}

/// Persistent state across fragments. All grids are anchored at the world
/// origin.
#[derive(Clone, Debug)]
pub struct ReconState {
    /// Hidden features per level (index 0 is level 1).
    pub hidden: Vec<SparseVoxelGrid<Vec<f32>>>,
    pub global: SparseVoxelGrid<GlobalVoxel>,
    pub fragments: u32,
}

impl ReconState {
    pub fn new(finest_voxel: f64) -> Self {
        Self {
            hidden: (1..=NUM_LEVELS)
                .map(|l| SparseVoxelGrid::new(l, level_voxel_size(finest_voxel, l), Vector3::zeros()))
                .collect(),
            global: SparseVoxelGrid::new(NUM_LEVELS, finest_voxel, Vector3::zeros()),
            fragments: 0,
        }
    }

    pub fn extract_mesh(&self, theta: f32) -> TriangleMesh {
        marching_cubes(&self.global, McParams { iso: 0.0, theta })
    }

    /// Level-3 TSDF view of the global volume.
    pub fn global_tsdf(&self) -> SparseVoxelGrid<TsdfVoxel> {
        self.global.map(|_, v| TsdfVoxel::new(v.o, v.x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: u8,
    pub candidates: usize,
    /// Candidates seen by at least one view.
    pub visible: usize,
    pub survivors: usize,
}

/// Wall-clock milliseconds per stage; per-level arrays are indexed by level − 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub backbone: f64,
    pub unproject: [f64; 3],
    pub sparse_conv: [f64; 3],
    pub fusion: [f64; 3],
    pub head: [f64; 3],
    pub integrate: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        let s = |a: &[f64; 3]| a.iter().sum::<f64>();
        self.backbone + s(&self.unproject) + s(&self.sparse_conv) + s(&self.fusion) + s(&self.head) + self.integrate
    }
}

#[derive(Clone, Debug)]
pub struct FragmentOutput {
    /// Sparsified level-3 prediction, anchored at the fragment's FBV.
    pub volume: SparseVoxelGrid<TsdfVoxel>,
    pub levels: Vec<LevelStats>,
    pub times: StageTimes,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Feature volume rows become `[F, mean z, count / views]`, with the parent's
/// `(o, x)` appended above level 1. Feature and depth columns are
/// standardized over the fragment's voxels at this level.
fn level_input(
    coords: &[VoxelCoord],
    mut feats: Features<f32>,
    n_views: usize,
    prev: Option<&SparseVoxelGrid<TsdfVoxel>>,
) -> Result<Features<f32>> {
    let c = feats.cols();
    for r in 0..feats.rows() {
        feats.row_mut(r)[c - 1] /= n_views as f32;
    }
    standardize_columns(&mut feats, c - 1);
    let Some(prev) = prev else {
        return Ok(feats);
    };
    let mut px = Features::zeros(coords.len(), 2);
    for (r, coord) in coords.iter().enumerate() {
        let p = prev
            .get(&coord.parent())
            .ok_or_else(|| Error::Shape(format!("voxel {coord:?} has no parent at the previous level")))?;
        px.row_mut(r).copy_from_slice(&[p.o, p.x]);
    }
    Ok(Features::concat_cols(&feats, &px))
}

/// Shifts and scales the first `k` columns to zero mean and unit deviation.
fn standardize_columns(f: &mut Features<f32>, k: usize) {
    let n = f.rows();
    if n == 0 {
        return;
    }
    let c = f.cols();
    for col in 0..k {
        let mean = (0..n).map(|r| f64::from(f.data()[r * c + col])).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (f64::from(f.data()[r * c + col]) - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var.sqrt() + 1e-5);
        for r in 0..n {
            let v = &mut f.data_mut()[r * c + col];
            *v = ((f64::from(*v) - mean) * inv) as f32;
        }
    }
}

pub fn extract_pyramids(fragment: &Fragment, model: &Model) -> Result<Vec<FeaturePyramid>> {
    fragment.frames.par_iter().map(|f| model.backbone.extract(f)).collect()
}

/// Average fusion: `H ← (count·H + G) / (count + 1)`, count kept as the last
/// channel of the stored vector.
fn average_fuse(
    coords: &[VoxelCoord],
    g: &Features<f32>,
    h_local: &SparseVoxelGrid<Vec<f32>>,
) -> Result<(Features<f32>, Vec<Vec<f32>>)> {
    let c = g.cols();
    let mut fused = Features::zeros(g.rows(), c);
    let mut stored = Vec::with_capacity(g.rows());
    for (r, coord) in coords.iter().enumerate() {
        let (prev, count) = match h_local.get(coord) {
            Some(v) if v.len() == c + 1 => (&v[..c], v[c]),
            Some(v) => {
                return Err(Error::ChannelMismatch {
                    expected: c + 1,
                    found: v.len(),
                })
            }
            None => (&[][..], 0.0),
        };
        let out = fused.row_mut(r);
        for (k, o) in out.iter_mut().enumerate() {
            let hp = prev.get(k).copied().unwrap_or(0.0);
            *o = (count * hp + g.row(r)[k]) / (count + 1.0);
        }
        let mut s = out.to_vec();
        s.push(count + 1.0);
        stored.push(s);
    }
    Ok((fused, stored))
}

/// Runs the three levels on one fragment, updates the hidden state and
/// integrates the level-3 survivors into the global volume.
pub fn reconstruct_fragment(fragment: &Fragment, state: &mut ReconState, model: &Model) -> Result<FragmentOutput> {
    let cfg = &model.config;
    let mut times = StageTimes::default();
    let mut levels = Vec::new();
    let t = Instant::now();
    let pyramids = extract_pyramids(fragment, model)?;
    times.backbone = ms(t);
    let params = VolumeParams {
        finest_voxel: cfg.voxel_size,
        d_max: cfg.d_max,
    };
    let n_views = fragment.frames.len();
    let fragment_id = state.fragments;
    state.fragments += 1;
    let mut prev: Option<SparseVoxelGrid<TsdfVoxel>> = None;
    for l in 1..=NUM_LEVELS {
        let li = l as usize - 1;
        let lw = model.level(l);
        let t = Instant::now();
        let candidates = match &prev {
            None => dense_candidates(fragment, l, cfg.voxel_size),
            Some(p) => upsample2x(p)?.coords().copied().collect(),
        };
        let fv = build_feature_volume(fragment, &pyramids, l, &candidates, params)?;
        times.unproject[li] = ms(t);
        let mut stats = LevelStats {
            level: l,
            candidates: candidates.len(),
            visible: fv.len(),
            survivors: 0,
        };
        if fv.is_empty() {
            levels.push(stats);
            let vs = level_voxel_size(cfg.voxel_size, NUM_LEVELS);
            return Ok(FragmentOutput {
                volume: SparseVoxelGrid::new(NUM_LEVELS, vs, fragment.fbv.min_corner),
                levels,
                times,
            });
        }
        let (coords, feats) = grid_to_features(&fv)?;
        let x = level_input(&coords, feats, n_views, prev.as_ref())?;

        let t = Instant::now();
        let rb = Rulebook::build(&coords);
        let g = model::geo_forward(&lw.geo, x, &rb)?.pop().expect("non-empty");
        times.sparse_conv[li] = ms(t);

        let t = Instant::now();
        let (fused, stored) = match cfg.fusion {
            FusionMethod::Gru => {
                let h_local = extract_region(&state.hidden[li], &fragment.fbv)?;
                let g_grid = features_to_grid(&fv, &coords, &g);
                let h = gru_cell(&g_grid, &h_local, &lw.gru)?;
                let (_, hf) = grid_to_features(&h)?;
                let stored = coords.iter().map(|c| h.get(c).expect("same voxels").clone()).collect();
                (hf, Some(stored))
            }
            FusionMethod::Average => {
                let h_local = extract_region(&state.hidden[li], &fragment.fbv)?;
                let (f, s) = average_fuse(&coords, &g, &h_local)?;
                (f, Some(s))
            }
            FusionMethod::LinearTsdf => (g, None),
        };
        times.fusion[li] = ms(t);

        let t = Instant::now();
        let out = mlp_forward_batch(&fused, &lw.mlp)?.output;
        let mut pred = fv.empty_like::<TsdfVoxel>();
        pred.extend(coords.iter().enumerate().map(|(r, c)| (*c, TsdfVoxel::new(out.row(r)[0], out.row(r)[1]))));
        let kept = sparsify(&pred, cfg.theta);
        times.head[li] = ms(t);
        stats.survivors = kept.len();
        levels.push(stats);

        let t = Instant::now();
        if let Some(stored) = stored {
            let mut local = fv.empty_like::<Vec<f32>>();
            let write = coords
                .iter()
                .zip(stored)
                .filter(|(c, _)| cfg.area == FusionArea::Fbv || kept.contains(c));
            local.extend(write.map(|(c, s)| (*c, s)));
            replace_region(&mut state.hidden[li], &local)?;
        }
        times.fusion[li] += ms(t);
        prev = Some(kept);
    }
    let volume = prev.expect("three levels ran");
    let t = Instant::now();
    integrate_global(&volume, state, cfg.fusion, fragment_id)?;
    times.integrate = ms(t);
    Ok(FragmentOutput { volume, levels, times })
}

/// Replaces global voxels with the fragment's (GRU / average modes) or folds
/// them in with a running average (linear mode).
pub fn integrate_global(
    local: &SparseVoxelGrid<TsdfVoxel>,
    state: &mut ReconState,
    method: FusionMethod,
    fragment_id: u32,
) -> Result<()> {
    if local.level() != NUM_LEVELS {
        return Err(Error::LatticeMisaligned(format!(
            "integration needs a level-{NUM_LEVELS} volume, got level {}",
            local.level()
        )));
    }
    let offset = state.global.lattice_offset(local)?;
    for (c, v) in local.iter() {
        let gc = *c + offset;
        match method {
            FusionMethod::LinearTsdf => {
                let e = state.global.entry(gc).or_default();
                let w = e.weight;
                e.o = (w * e.o + v.o) / (w + 1.0);
                e.x = (w * e.x + v.x) / (w + 1.0);
                e.weight = (w + 1.0).min(LINEAR_MAX_WEIGHT);
                e.updated = fragment_id;
            }
            FusionMethod::Gru | FusionMethod::Average => {
                state.global.insert(
                    gc,
                    GlobalVoxel {
                        o: v.o,
                        x: v.x,
                        weight: 1.0,
                        updated: fragment_id,
                    },
                );
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct FragmentReport {
    pub index: usize,
    pub frames: Vec<usize>,
    pub fbv_min: [f64; 3],
    pub fbv_side: f64,
    pub levels: Vec<LevelStats>,
    pub output_voxels: usize,
    pub global_voxels: usize,
    /// Triangle count of the mesh extracted after this fragment, when enabled.
    pub mesh_triangles: Option<usize>,
    /// Wall-clock fields are left out of serialized reports so that they
    /// stay byte-identical across runs.
    #[serde(skip)]
    pub mesh_ms: Option<f64>,
    #[serde(skip)]
    pub times: StageTimes,
}

#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub state: ReconState,
    pub fragments: Vec<FragmentReport>,
    pub keyframes: usize,
}

/// Streams `frames` through key-frame selection and fragment reconstruction.
/// With `mesh_each`, the global mesh is re-extracted after every fragment.
pub fn reconstruct_sequence(frames: impl IntoIterator<Item = Frame>, model: &Model, mesh_each: bool) -> Result<SequenceRun> {
    let cfg = &model.config;
    let mut state = ReconState::new(cfg.voxel_size);
    let mut reports = Vec::new();
    let mut keyframes = 0;
    for frag in assemble_fragments(frames, cfg.fragment_params()) {
        keyframes += frag.frames.len();
        let out = reconstruct_fragment(&frag, &mut state, model)?;
        let (mesh_triangles, mesh_ms) = if mesh_each {
            let t = Instant::now();
            let m = state.extract_mesh(cfg.theta);
            (Some(m.triangles.len()), Some(ms(t)))
        } else {
            (None, None)
        };
        log::info!(
            "fragment {}: {} frames, {} output voxels, {} global",
            frag.fragment_index,
            frag.frames.len(),
            out.volume.len(),
            state.global.len()
        );
        reports.push(FragmentReport {
            index: frag.fragment_index,
            frames: frag.frames.iter().map(|f| f.index).collect(),
            fbv_min: frag.fbv.min_corner.into(),
            fbv_side: frag.fbv.side_length,
            levels: out.levels,
            output_voxels: out.volume.len(),
            global_voxels: state.global.len(),
            mesh_triangles,
            mesh_ms,
            times: out.times,
        });
    }
    Ok(SequenceRun {
        state,
        fragments: reports,
        keyframes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{compute_fbv, Pose};
    use crate::synth::{render_frames, SceneSpec};
    use nalgebra::Point3;

    fn fragment(eyes: &[[f64; 3]], d_max: f64) -> Fragment {
        let mut spec = SceneSpec::demo_room();
        spec.camera.width = 64;
        spec.camera.height = 48;
        let poses: Vec<Pose> = eyes
            .iter()
            .map(|e| Pose::look_at(Point3::from(*e), Point3::new(0.0, 0.0, 0.3), Vector3::z()))
            .collect();
        let frames = render_frames(&spec, &poses, 3.0).unwrap();
        let fbv = compute_fbv(&frames, d_max, 0.16);
        Fragment {
            frames,
            fbv,
            fragment_index: 0,
        }
    }

    fn small_cfg(fusion: FusionMethod, area: FusionArea) -> FusionConfig {
        FusionConfig {
            fusion,
            area,
            d_max: 1.5,
            ..FusionConfig::toy()
        }
    }

    fn frag_a() -> Fragment {
        fragment(&[[1.2, 0.0, 1.2], [1.1, 0.4, 1.2], [1.0, 0.7, 1.2]], 1.5)
    }

    fn frag_b() -> Fragment {
        fragment(&[[-1.2, 0.0, 1.2], [-1.1, -0.4, 1.2], [-1.0, -0.7, 1.2]], 1.5)
    }

    /// Biased so that every voxel survives and levels 2-3 get candidates.
    fn dense_model(cfg: &FusionConfig) -> Model {
        let mut m = Model::seeded(cfg, 7).unwrap();
        for lw in &mut m.levels {
            lw.mlp.layers.last_mut().unwrap().bias[0] = 50.0;
        }
        m
    }

    #[test]
    fn coarse_to_fine_nesting() {
        let cfg = small_cfg(FusionMethod::Gru, FusionArea::Fbv);
        let m = Model::seeded(&cfg, 1).unwrap();
        let mut m2 = m.clone();
        // Keep roughly half the voxels at every level.
        for lw in &mut m2.levels {
            lw.mlp.layers.last_mut().unwrap().bias[0] = 0.3;
        }
        let f = frag_a();
        let mut st = ReconState::new(cfg.voxel_size);
        let out = reconstruct_fragment(&f, &mut st, &m2).unwrap();
        assert_eq!(out.levels.len(), 3);
        let n1 = f.fbv.cells_per_side(0.16);
        assert_eq!(out.levels[0].candidates, (n1 as usize).pow(3));
        for w in out.levels.windows(2) {
            assert_eq!(w[1].candidates, 8 * w[0].survivors);
            assert!(w[1].visible <= w[1].candidates);
        }
        assert!(out.volume.values().all(|v| v.o >= cfg.theta && v.x.abs() <= 1.0));
        assert_eq!(st.fragments, 1);
        assert_eq!(st.global.len(), out.volume.len());
    }

    #[test]
    fn blind_fragment_is_empty() {
        let cfg = FusionConfig {
            d_max: 0.001,
            ..small_cfg(FusionMethod::Gru, FusionArea::Fbv)
        };
        let m = Model::seeded(&cfg, 1).unwrap();
        let mut f = frag_a();
        f.fbv = compute_fbv(&f.frames, 0.001, 0.16);
        let mut st = ReconState::new(cfg.voxel_size);
        let out = reconstruct_fragment(&f, &mut st, &m).unwrap();
        assert!(out.volume.is_empty());
        assert_eq!(st.fragments, 1);
        assert!(st.global.is_empty() && st.hidden.iter().all(|h| h.is_empty()));
    }

    /// With z ≡ 1 and r ≡ 0 the cell output is H̃ computed from G alone, so
    /// prior hidden state cannot matter.
    #[test]
    fn open_gates_ignore_hidden_state() {
        let cfg = small_cfg(FusionMethod::Gru, FusionArea::Fbv);
        let mut m = dense_model(&cfg);
        for lw in &mut m.levels {
            for (w, b) in [(&mut lw.gru.w_z, 1000.0), (&mut lw.gru.w_r, -1000.0)] {
                w.kernel.iter_mut().for_each(|v| *v = 0.0);
                w.bias.iter_mut().for_each(|v| *v = b);
            }
        }
        let mut fresh = ReconState::new(cfg.voxel_size);
        let a = reconstruct_fragment(&frag_a(), &mut fresh, &m).unwrap();
        let mut used = ReconState::new(cfg.voxel_size);
        reconstruct_fragment(&frag_b(), &mut used, &m).unwrap();
        for h in &mut used.hidden {
            h.iter_mut().for_each(|(_, v)| v.iter_mut().for_each(|x| *x = 0.9));
        }
        let b = reconstruct_fragment(&frag_a(), &mut used, &m).unwrap();
        assert!(!a.volume.is_empty());
        assert_eq!(a.volume.cells(), b.volume.cells());
    }

    #[test]
    fn z_zero_freezes_seen_voxels() {
        let cfg = small_cfg(FusionMethod::Gru, FusionArea::Fbv);
        let mut m = dense_model(&cfg);
        let mut st = ReconState::new(cfg.voxel_size);
        reconstruct_fragment(&frag_a(), &mut st, &m).unwrap();
        let before = st.hidden.clone();
        for lw in &mut m.levels {
            lw.gru.w_z.kernel.iter_mut().for_each(|v| *v = 0.0);
            lw.gru.w_z.bias.iter_mut().for_each(|v| *v = -1000.0);
        }
        reconstruct_fragment(&frag_a(), &mut st, &m).unwrap();
        for (b, a) in before.iter().zip(&st.hidden) {
            assert!(!b.is_empty());
            for (c, v) in b.iter() {
                assert_eq!(a.get(c), Some(v));
            }
        }
    }

    #[test]
    fn occ_area_writes_survivors_only() {
        let cfg = small_cfg(FusionMethod::Gru, FusionArea::Occ);
        let mut m = Model::seeded(&cfg, 1).unwrap();
        for lw in &mut m.levels {
            lw.mlp.layers.last_mut().unwrap().bias[0] = 0.3;
        }
        let mut st = ReconState::new(cfg.voxel_size);
        let out = reconstruct_fragment(&frag_a(), &mut st, &m).unwrap();
        for (l, s) in out.levels.iter().enumerate() {
            assert_eq!(st.hidden[l].len(), s.survivors);
        }
        let fbv_cfg = FusionConfig {
            area: FusionArea::Fbv,
            ..cfg
        };
        let m_fbv = Model { config: fbv_cfg, ..m };
        let mut st2 = ReconState::new(0.04);
        let out2 = reconstruct_fragment(&frag_a(), &mut st2, &m_fbv).unwrap();
        assert_eq!(st2.hidden[0].len(), out2.levels[0].visible);
    }

    #[test]
    fn average_fusion_counts() {
        let cfg = small_cfg(FusionMethod::Average, FusionArea::Fbv);
        let m = dense_model(&cfg);
        let mut st = ReconState::new(cfg.voxel_size);
        reconstruct_fragment(&frag_a(), &mut st, &m).unwrap();
        let first = st.hidden[0].clone();
        reconstruct_fragment(&frag_a(), &mut st, &m).unwrap();
        // The same features twice: mean unchanged, count 2.
        for (c, v) in first.iter() {
            let w = st.hidden[0].get(c).unwrap();
            assert_eq!(v.len(), cfg.geo_channels + 1);
            assert_eq!(w[cfg.geo_channels], 2.0);
            for k in 0..cfg.geo_channels {
                assert!((w[k] - v[k]).abs() < 1e-6);
            }
        }
    }

    fn local_tsdf(values: &[(VoxelCoord, f32)]) -> SparseVoxelGrid<TsdfVoxel> {
        let mut g = SparseVoxelGrid::new(3, 0.04, Vector3::new(0.16, 0.0, -0.32));
        g.extend(values.iter().map(|(c, x)| (*c, TsdfVoxel::new(0.9, *x))));
        g
    }

    #[test]
    fn replacement_integration() {
        let mut st = ReconState::new(0.04);
        let a = local_tsdf(&[(VoxelCoord::new(0, 0, 0), 0.2), (VoxelCoord::new(1, 0, 0), 0.5)]);
        let b = local_tsdf(&[(VoxelCoord::new(5, 5, 5), 0.1)]);
        integrate_global(&a, &mut st, FusionMethod::Gru, 0).unwrap();
        integrate_global(&b, &mut st, FusionMethod::Gru, 1).unwrap();
        assert_eq!(st.global.len(), 3);
        let snapshot = st.global.clone();
        integrate_global(&b, &mut st, FusionMethod::Gru, 1).unwrap();
        assert_eq!(st.global.cells(), snapshot.cells());
        let c = local_tsdf(&[(VoxelCoord::new(0, 0, 0), -0.1)]);
        integrate_global(&c, &mut st, FusionMethod::Gru, 2).unwrap();
        let g = st.global.get(&VoxelCoord::new(4, 0, -8)).unwrap();
        assert_eq!((g.x, g.updated), (-0.1, 2));
    }

    #[test]
    fn linear_integration_averages() {
        let mut st = ReconState::new(0.04);
        integrate_global(&local_tsdf(&[(VoxelCoord::new(0, 0, 0), 0.2)]), &mut st, FusionMethod::LinearTsdf, 0).unwrap();
        integrate_global(&local_tsdf(&[(VoxelCoord::new(0, 0, 0), -0.1)]), &mut st, FusionMethod::LinearTsdf, 1).unwrap();
        let g = st.global.get(&VoxelCoord::new(4, 0, -8)).unwrap();
        assert!((g.x - 0.05).abs() < 1e-7 && g.weight == 2.0);
    }

    #[test]
    fn misaligned_integration_fails() {
        let mut st = ReconState::new(0.04);
        let mut g = SparseVoxelGrid::new(3, 0.04, Vector3::new(0.01, 0.0, 0.0));
        g.insert(VoxelCoord::new(0, 0, 0), TsdfVoxel::new(1.0, 0.0));
        assert!(matches!(
            integrate_global(&g, &mut st, FusionMethod::Gru, 0),
            Err(Error::LatticeMisaligned(_))
        ));
        let coarse = SparseVoxelGrid::<TsdfVoxel>::new(2, 0.08, Vector3::zeros());
        assert!(integrate_global(&coarse, &mut st, FusionMethod::Gru, 0).is_err());
    }

    #[test]
    fn sequence_is_deterministic() {
        let cfg = small_cfg(FusionMethod::Gru, FusionArea::Fbv);
        let m = dense_model(&cfg);
        let frames = {
            let mut f = frag_a().frames;
            f.extend(frag_b().frames);
            for (i, fr) in f.iter_mut().enumerate() {
                fr.index = i;
            }
            f
        };
        let cfg2 = FusionConfig {
            n_views: 3,
            t_max: 0.0,
            r_max_deg: 0.0,
            keyframe_mode: crate::camera::KeyframeMode::Disjunction,
            ..cfg
        };
        let m = Model { config: cfg2, ..m };
        let a = reconstruct_sequence(frames.clone(), &m, true).unwrap();
        let b = reconstruct_sequence(frames, &m, false).unwrap();
        assert_eq!(a.fragments.len(), 2);
        assert_eq!(a.state.global.cells(), b.state.global.cells());
        let (ma, mb) = (a.state.extract_mesh(0.5), b.state.extract_mesh(0.5));
        assert_eq!(ma.vertices, mb.vertices);
        // Global voxels all come from some fragment output.
        assert!(a.state.global.values().all(|v| v.updated < 2));
    }
}
