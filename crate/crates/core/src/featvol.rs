//! Image features and their unprojection into per-level voxel volumes.
//!
//! The backbone is a fixed stub: each pyramid level average-pools the input
//! image by its stride, passes the pooled channels through unchanged and
//! appends `C_l - c_in` channels from a 3×3 convolution (replicate padding,
//! ReLU) with seeded or loaded weights.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Fragment, Frame};
use crate::error::{Error, Result};
use crate::nnops::{Tensor, WeightSet};
use crate::raster::Raster;
use crate::voxgrid::{level_voxel_size, SparseVoxelGrid, VoxelCoord, NUM_LEVELS};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Output channels per level (coarse to fine).
    pub channels: [usize; 3],
    /// Pooling stride per level relative to the input image.
    pub strides: [usize; 3],
    /// Channels of the input image.
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: [24, 32, 48],
            strides: [16, 8, 4],
            in_channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv2d {
    c_in: usize,
    c_out: usize,
    /// `[3, 3, c_in, c_out]`
    kernel: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv2d {
    fn apply(&self, img: &Raster) -> Raster {
        let (w, h) = (img.width(), img.height());
        let mut out = Raster::new(w, h, self.c_out);
        if self.c_out == 0 {
            return out;
        }
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        out.data_mut().par_chunks_mut(w * self.c_out).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let acc = &mut row[x * self.c_out..(x + 1) * self.c_out];
                acc.copy_from_slice(&self.bias);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let px = img.pixel(clamp(x as isize + dx as isize - 1, w), clamp(y as isize + dy as isize - 1, h));
                        let base = (dy * 3 + dx) * self.c_in * self.c_out;
                        for (ci, &v) in px.iter().enumerate() {
                            let wr = &self.kernel[base + ci * self.c_out..base + (ci + 1) * self.c_out];
                            for (a, &wv) in acc.iter_mut().zip(wr) {
                                *a += v * wv;
                            }
                        }
                    }
                }
                for a in acc.iter_mut() {
                    *a = a.max(0.0);
                }
            }
        });
        out
    }
}

/// Deterministic feature extractor standing in for a learned CNN.
#[derive(Clone, Debug, PartialEq)]
pub struct StubBackbone {
    config: BackboneConfig,
    convs: Vec<Conv2d>,
}

impl StubBackbone {
    pub fn seeded(config: BackboneConfig, seed: u64) -> Result<Self> {
        Self::check(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = config
            .channels
            .iter()
            .map(|&c| {
                let extra = c - config.in_channels;
                let bound = (3.0 / (9 * config.in_channels.max(1)) as f32).sqrt();
                Conv2d {
                    c_in: config.in_channels,
                    c_out: extra,
                    kernel: (0..9 * config.in_channels * extra).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: (0..extra).map(|_| rng.random_range(-0.1..0.1)).collect(),
                }
            })
            .collect();
        Ok(Self { config, convs })
    }

    fn check(config: &BackboneConfig) -> Result<()> {
        if config.channels.iter().any(|&c| c < config.in_channels) {
            return Err(Error::Config(format!(
                "feature channels {:?} must be at least the {} input channels",
                config.channels, config.in_channels
            )));
        }
        if config.strides.contains(&0) {
            return Err(Error::Config("backbone strides must be positive".into()));
        }
        Ok(())
    }

    /// Loads `stub.conv{K}.{kernel,bias}` for K = 0, 1, 2.
    pub fn from_weights(config: BackboneConfig, set: &WeightSet) -> Result<Self> {
        Self::check(&config)?;
        let mut convs = Vec::new();
        for (k, &c) in config.channels.iter().enumerate() {
            let extra = c - config.in_channels;
            let ci = config.in_channels;
            let kernel = set.require(&format!("stub.conv{k}.kernel"), &[3, 3, ci, extra])?.data.clone();
            let bias = set.require(&format!("stub.conv{k}.bias"), &[extra])?.data.clone();
            convs.push(Conv2d {
                c_in: ci,
                c_out: extra,
                kernel,
                bias,
            });
        }
        Ok(Self { config, convs })
    }

    pub fn export(&self, set: &mut WeightSet) -> Result<()> {
        for (k, c) in self.convs.iter().enumerate() {
            set.insert(format!("stub.conv{k}.kernel"), Tensor::new(vec![3, 3, c.c_in, c.c_out], c.kernel.clone())?)?;
            set.insert(format!("stub.conv{k}.bias"), Tensor::new(vec![c.c_out], c.bias.clone())?)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn extract(&self, frame: &Frame) -> Result<FeaturePyramid> {
        let img = &frame.image;
        if img.channels() != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                found: img.channels(),
            });
        }
        let maps = (0..NUM_LEVELS as usize)
            .map(|l| {
                let pooled = avg_pool(img, self.config.strides[l]);
                let extra = self.convs[l].apply(&pooled);
                concat_channels(&pooled, &extra)
            })
            .collect();
        Ok(FeaturePyramid {
            maps,
            strides: self.config.strides,
        })
    }
}

pub fn extract_features(frame: &Frame, backbone: &StubBackbone) -> Result<FeaturePyramid> {
    backbone.extract(frame)
}

/// Mean over non-overlapping `s × s` blocks; trailing partial blocks dropped.
pub fn avg_pool(img: &Raster, s: usize) -> Raster {
    let (w, h, c) = (img.width() / s, img.height() / s, img.channels());
    let mut out = Raster::new(w.max(1), h.max(1), c);
    let (w, h) = (out.width(), out.height());
    let inv = 1.0 / (s * s) as f32;
    for y in 0..h {
        for x in 0..w {
            let acc = out.pixel_mut(x, y);
            let mut n = 0usize;
            for yy in y * s..((y + 1) * s).min(img.height()) {
                for xx in x * s..((x + 1) * s).min(img.width()) {
                    for (a, &v) in acc.iter_mut().zip(img.pixel(xx, yy)) {
                        *a += v;
                    }
                    n += 1;
                }
            }
            let norm = if n == s * s { inv } else { 1.0 / n.max(1) as f32 };
            acc.iter_mut().for_each(|a| *a *= norm);
        }
    }
    out
}

fn concat_channels(a: &Raster, b: &Raster) -> Raster {
    let c = a.channels() + b.channels();
    let mut data = Vec::with_capacity(a.width() * a.height() * c);
    for y in 0..a.height() {
        for x in 0..a.width() {
            data.extend_from_slice(a.pixel(x, y));
            data.extend_from_slice(b.pixel(x, y));
        }
    }
    Raster::from_vec(a.width(), a.height(), c, data)
}

/// Per-level 2-D feature maps of one frame, coarse to fine.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub maps: Vec<Raster>,
    pub strides: [usize; 3],
}

impl FeaturePyramid {
    /// Bilinear sample of level `l` (1-based) at image pixel `(u, v)`.
    pub fn sample_into(&self, level: u8, u: f64, v: f64, out: &mut [f32]) {
        let i = usize::from(level - 1);
        let s = self.strides[i] as f64;
        let off = (s - 1.0) * 0.5;
        self.maps[i].sample_bilinear_into((u - off) / s, (v - off) / s, out);
    }

    pub fn channels(&self, level: u8) -> usize {
        self.maps[usize::from(level - 1)].channels()
    }
}

/// Geometry shared by all feature volumes of one fragment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeParams {
    pub finest_voxel: f64,
    pub d_max: f64,
}

/// Unprojects the fragment's pyramids onto `candidates` (local coordinates
/// of the level-`level` lattice anchored at the fragment's FBV).
///
/// Each output vector is `[mean features (C_l), mean camera depth, view
/// count]`. A view contributes when the voxel center projects inside its
/// image at camera depth in `(0, d_max]`. Voxels seen by no view are left
/// out.
pub fn build_feature_volume(
    fragment: &Fragment,
    pyramids: &[FeaturePyramid],
    level: u8,
    candidates: &[VoxelCoord],
    params: VolumeParams,
) -> Result<SparseVoxelGrid<Vec<f32>>> {
    if pyramids.len() != fragment.frames.len() {
        return Err(Error::Shape(format!(
            "{} pyramids for {} frames",
            pyramids.len(),
            fragment.frames.len()
        )));
    }
    let vs = level_voxel_size(params.finest_voxel, level);
    let mut grid = SparseVoxelGrid::new(level, vs, fragment.fbv.min_corner);
    let Some(first) = pyramids.first() else {
        return Ok(grid);
    };
    let c = first.channels(level);
    if let Some(p) = pyramids.iter().find(|p| p.channels(level) != c) {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: p.channels(level),
        });
    }
    let cells: Vec<Option<Vec<f32>>> = candidates
        .par_iter()
        .map(|&coord| {
            let p = grid.voxel_center(coord);
            unproject_voxel(fragment, pyramids, level, &p, c, params.d_max)
        })
        .collect();
    grid.extend(
        candidates
            .iter()
            .zip(cells)
            .filter_map(|(coord, v)| v.map(|v| (*coord, v))),
    );
    Ok(grid)
}

fn unproject_voxel(
    fragment: &Fragment,
    pyramids: &[FeaturePyramid],
    level: u8,
    p: &Point3<f64>,
    c: usize,
    d_max: f64,
) -> Option<Vec<f32>> {
    // Per-view samples are summed in sorted order so the mean does not
    // depend on view order.
    let mut samples: Vec<f32> = Vec::new();
    let mut depths: Vec<f64> = Vec::new();
    for (frame, pyr) in fragment.frames.iter().zip(pyramids) {
        let pc = frame.pose.to_camera(p);
        if !(pc.z > 0.0 && pc.z <= d_max) {
            continue;
        }
        let (u, v) = frame.intrinsics.project(&pc);
        if !frame.intrinsics.in_image(u, v) {
            continue;
        }
        let at = samples.len();
        samples.resize(at + c, 0.0);
        pyr.sample_into(level, u, v, &mut samples[at..]);
        depths.push(pc.z);
    }
    let count = depths.len();
    if count == 0 {
        return None;
    }
    let mut out = vec![0f32; c + 2];
    let mut column = Vec::with_capacity(count);
    for (ch, o) in out[..c].iter_mut().enumerate() {
        column.clear();
        column.extend(samples.iter().skip(ch).step_by(c.max(1)).copied());
        column.sort_unstable_by(f32::total_cmp);
        *o = column.iter().sum::<f32>() / count as f32;
    }
    depths.sort_unstable_by(f64::total_cmp);
    out[c] = (depths.iter().sum::<f64>() / count as f64) as f32;
    out[c + 1] = count as f32;
    Some(out)
}

/// All voxels of the level-`level` lattice inside the fragment's FBV.
pub fn dense_candidates(fragment: &Fragment, level: u8, finest_voxel: f64) -> Vec<VoxelCoord> {
    let n = fragment.fbv.cells_per_side(level_voxel_size(finest_voxel, level));
    let mut out = Vec::with_capacity((n as usize).pow(3));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(VoxelCoord::new(i, j, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::camera::{compute_fbv, Intrinsics, Pose};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn frame(pose: Pose, value: f32) -> Frame {
        let k = Intrinsics::from_fov(64, 48, 90.0);
        Frame::new(0, pose, k, Raster::filled(64, 48, 3, value), None).unwrap()
    }

    fn fragment(frames: Vec<Frame>) -> Fragment {
        let fbv = compute_fbv(&frames, 3.0, 0.16);
        Fragment {
            frames,
            fbv,
            fragment_index: 0,
        }
    }

    fn small_config() -> BackboneConfig {
        BackboneConfig {
            channels: [4, 5, 6],
            strides: [16, 8, 4],
            in_channels: 3,
        }
    }

    fn scalar_pyramid(value: f32) -> FeaturePyramid {
        let m = Raster::filled(8, 6, 1, value);
        FeaturePyramid {
            maps: vec![m.clone(), m.clone(), m],
            strides: [16, 8, 4],
        }
    }

    #[test]
    fn constant_image_gives_constant_maps() {
        let bb = StubBackbone::seeded(small_config(), 3).unwrap();
        let p = bb.extract(&frame(Pose::identity(), 0.7)).unwrap();
        for m in &p.maps {
            let first = m.pixel(0, 0).to_vec();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    assert_eq!(m.pixel(x, y), first.as_slice());
                }
            }
        }
    }

    #[test]
    fn pyramid_sizes() {
        let bb = StubBackbone::seeded(BackboneConfig::default(), 0).unwrap();
        let k = Intrinsics::from_fov(640, 480, 60.0);
        let f = Frame::new(0, Pose::identity(), k, Raster::new(640, 480, 3), None).unwrap();
        let p = bb.extract(&f).unwrap();
        let dims: Vec<_> = p.maps.iter().map(|m| (m.width(), m.height(), m.channels())).collect();
        assert_eq!(dims, vec![(40, 30, 24), (80, 60, 32), (160, 120, 48)]);
        assert_eq!(p, bb.extract(&f).unwrap());
    }

    #[test]
    fn weight_round_trip() {
        let bb = StubBackbone::seeded(small_config(), 9).unwrap();
        let mut set = WeightSet::new();
        bb.export(&mut set).unwrap();
        assert_eq!(StubBackbone::from_weights(small_config(), &set).unwrap(), bb);
    }

    #[test]
    fn mean_of_three_views() {
        let frames: Vec<Frame> = (0..3).map(|_| frame(Pose::identity(), 0.0)).collect();
        let frag = fragment(frames);
        let pyrs = vec![scalar_pyramid(1.0), scalar_pyramid(2.0), scalar_pyramid(3.0)];
        // A voxel straight ahead of the cameras.
        let vs = 0.16;
        let target = Point3::new(0.0, 0.0, 1.0);
        let coord = SparseVoxelGrid::<()>::new(1, vs, frag.fbv.min_corner).voxel_at(&target);
        let vol = build_feature_volume(&frag, &pyrs, 1, &[coord], VolumeParams { finest_voxel: 0.04, d_max: 3.0 }).unwrap();
        let v = vol.get(&coord).unwrap();
        assert_eq!(v[0], 2.0);
        assert_eq!(v[2], 3.0);
    }

    #[test]
    fn behind_camera_is_absent() {
        let frag = fragment(vec![frame(Pose::identity(), 0.0)]);
        let grid = SparseVoxelGrid::<()>::new(1, 0.16, frag.fbv.min_corner);
        let behind = grid.voxel_at(&Point3::new(0.0, 0.0, -1.0));
        let vol = build_feature_volume(&frag, &[scalar_pyramid(1.0)], 1, &[behind], VolumeParams { finest_voxel: 0.04, d_max: 3.0 })
            .unwrap();
        assert!(vol.is_empty());
    }

    #[test]
    fn constant_map_single_view() {
        let frag = fragment(vec![frame(Pose::identity(), 0.0)]);
        let cands = dense_candidates(&frag, 1, 0.04);
        let vol = build_feature_volume(&frag, &[scalar_pyramid(0.25)], 1, &cands, VolumeParams { finest_voxel: 0.04, d_max: 3.0 })
            .unwrap();
        assert!(!vol.is_empty());
        for v in vol.values() {
            assert!((v[0] - 0.25).abs() < 1e-6);
            assert_eq!(v[2], 1.0);
        }
    }

    proptest! {
        #[test]
        fn view_permutation_and_duplication(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bb = StubBackbone::seeded(small_config(), 5).unwrap();
            let frames: Vec<Frame> = (0..3)
                .map(|_| {
                    let eye = Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
                    let target = Point3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 2.0);
                    let mut f = frame(Pose::look_at(eye, target, -Vector3::y()), 0.0);
                    for (n, v) in f.image.data_mut().iter_mut().enumerate() {
                        *v = ((n * 7919 + seed as usize) % 101) as f32 / 101.0;
                    }
                    f
                })
                .collect();
            let pyrs: Vec<_> = frames.iter().map(|f| bb.extract(f).unwrap()).collect();
            let frag = fragment(frames.clone());
            let params = VolumeParams { finest_voxel: 0.04, d_max: 3.0 };
            let cands = dense_candidates(&frag, 1, 0.04);
            let base = build_feature_volume(&frag, &pyrs, 1, &cands, params).unwrap();

            let perm = [2usize, 0, 1];
            let frag_p = Fragment { frames: perm.iter().map(|&i| frames[i].clone()).collect(), ..frag.clone() };
            let pyrs_p: Vec<_> = perm.iter().map(|&i| pyrs[i].clone()).collect();
            let permuted = build_feature_volume(&frag_p, &pyrs_p, 1, &cands, params).unwrap();
            prop_assert_eq!(base.len(), permuted.len());
            for (c, v) in base.iter() {
                prop_assert_eq!(v, permuted.get(c).unwrap());
            }

            let frag_d = Fragment { frames: frames.iter().chain(&frames).cloned().collect(), ..frag.clone() };
            let pyrs_d: Vec<_> = pyrs.iter().chain(&pyrs).cloned().collect();
            let doubled = build_feature_volume(&frag_d, &pyrs_d, 1, &cands, params).unwrap();
            let c = pyrs[0].channels(1);
            for (coord, v) in base.iter() {
                let w = doubled.get(coord).unwrap();
                prop_assert_eq!(w[c + 1], 2.0 * v[c + 1]);
                for (a, b) in v[..=c].iter().zip(&w[..=c]) {
                    prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
                }
                prop_assert!(cands.contains(coord));
            }
        }

        #[test]
        fn weight_matches_recount(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<Frame> = (0..4)
                .map(|_| {
                    let eye = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
                    frame(Pose::look_at(eye, Point3::new(0.0, 0.0, 2.0), -Vector3::y()), 0.0)
                })
                .collect();
            let frag = fragment(frames);
            let pyrs: Vec<_> = (0..4).map(|_| scalar_pyramid(1.0)).collect();
            let cands = dense_candidates(&frag, 1, 0.04);
            let vol = build_feature_volume(&frag, &pyrs, 1, &cands, VolumeParams { finest_voxel: 0.04, d_max: 3.0 }).unwrap();
            for (coord, v) in vol.iter() {
                let p = vol.voxel_center(*coord);
                // Independent recount with the pinhole model written out.
                let n = frag.frames.iter().filter(|f| {
                    let q = f.pose.rotation.transpose() * (p.coords - f.pose.translation);
                    let k = &f.intrinsics;
                    let u = k.fx * q.x / q.z + k.cx;
                    let w = k.fy * q.y / q.z + k.cy;
                    q.z > 0.0 && q.z <= 3.0 && u >= -0.5 && w >= -0.5 && u <= 63.5 && w <= 47.5
                }).count();
                prop_assert_eq!(v[2], n as f32);
            }
        }
    }
}
