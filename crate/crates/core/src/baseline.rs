//! Classical running-average TSDF fusion of depth maps.

use nalgebra::Vector3;
use rayon::prelude::*;
use rustc_hash::FxHashSet;

use crate::camera::{Frame, Intrinsics, Pose};
use crate::meshing::IsoSample;
use crate::raster::Raster;
use crate::voxgrid::{SparseVoxelGrid, VoxelCoord, VoxelPayload, KIND_WEIGHTED_TSDF, NUM_LEVELS};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightedTsdfVoxel {
    /// Normalized SDF in [-1, 1].
    pub tsdf: f32,
    pub weight: f32,
}

impl IsoSample for WeightedTsdfVoxel {
    fn iso_value(&self, _: f32) -> Option<f32> {
        (self.weight > 0.0).then_some(self.tsdf)
    }
}

impl VoxelPayload for WeightedTsdfVoxel {
    fn kind(&self) -> u32 {
        KIND_WEIGHTED_TSDF
    }
    fn encode(&self, out: &mut Vec<f32>) {
        out.extend([self.tsdf, self.weight]);
    }
    fn width_for(kind: u32) -> Option<usize> {
        (kind == KIND_WEIGHTED_TSDF).then_some(2)
    }
    fn decode(_: u32, v: &[f32]) -> Self {
        Self { tsdf: v[0], weight: v[1] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    /// Truncation distance in meters.
    pub lambda: f64,
    pub d_max: f64,
    pub voxel_size: f64,
    pub w_max: f32,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            lambda: 0.12,
            d_max: 3.0,
            voxel_size: crate::voxgrid::FINEST_VOXEL_SIZE,
            w_max: 255.0,
        }
    }
}

/// Normalized projective SDF of world point `p` in one depth view, or `None`
/// when the view says nothing about it.
pub fn projective_sdf(p: &nalgebra::Point3<f64>, depth: &Raster, pose: &Pose, k: &Intrinsics, lambda: f64, d_max: f64) -> Option<f32> {
    let pc = pose.to_camera(p);
    if pc.z <= 0.0 || pc.z > d_max {
        return None;
    }
    let (u, v) = k.project(&pc);
    if !k.in_image(u, v) {
        return None;
    }
    let (x, y) = (u.round().max(0.0) as usize, v.round().max(0.0) as usize);
    let (x, y) = (x.min(depth.width() - 1), y.min(depth.height() - 1));
    let d = f64::from(depth.at(x, y, 0));
    if d <= 0.0 {
        return None;
    }
    let sdf = d - pc.z;
    if sdf < -lambda {
        return None;
    }
    Some((sdf / lambda).clamp(-1.0, 1.0) as f32)
}

/// Folds one depth map into every allocated voxel it observes.
pub fn integrate_depth(grid: &mut SparseVoxelGrid<WeightedTsdfVoxel>, depth: &Raster, pose: &Pose, k: &Intrinsics, params: &FusionParams) {
    let coords: Vec<VoxelCoord> = grid.coords().copied().collect();
    let samples: Vec<Option<f32>> = coords
        .par_iter()
        .map(|c| projective_sdf(&grid.voxel_center(*c), depth, pose, k, params.lambda, params.d_max))
        .collect();
    for (c, s) in coords.iter().zip(samples) {
        if let Some(s) = s {
            let v = grid.get_mut(c).expect("allocated");
            v.tsdf = (v.tsdf * v.weight + s) / (v.weight + 1.0);
            v.weight = (v.weight + 1.0).min(params.w_max);
        }
    }
}

/// Allocates voxels along every valid pixel ray for camera depths in
/// `[d - λ - voxel, d + λ]`.
pub fn allocate_band(grid: &mut SparseVoxelGrid<WeightedTsdfVoxel>, depth: &Raster, pose: &Pose, k: &Intrinsics, params: &FusionParams) {
    let vs = grid.voxel_size();
    let step = 0.5 * vs;
    let rows: Vec<Vec<VoxelCoord>> = (0..depth.height())
        .into_par_iter()
        .map(|y| {
            let mut seen = FxHashSet::default();
            let mut out = Vec::new();
            for x in 0..depth.width() {
                let d = f64::from(depth.at(x, y, 0));
                if d <= 0.0 || d > params.d_max {
                    continue;
                }
                let ray: Vector3<f64> = k.unproject(x as f64, y as f64, 1.0);
                let (z0, z1) = ((d - params.lambda - vs).max(step), d + params.lambda);
                let n = ((z1 - z0) / step).ceil() as usize;
                for s in 0..=n {
                    let z = (z0 + s as f64 * step).min(z1);
                    let c = grid.voxel_at(&pose.to_world(&(ray * z)));
                    if seen.insert(c) {
                        out.push(c);
                    }
                }
            }
            out
        })
        .collect();
    for c in rows.into_iter().flatten() {
        grid.entry(c).or_default();
    }
}

/// Fuses every frame's depth, in order, into a fresh finest-level grid
/// anchored at the world origin. Frames without depth are skipped.
pub fn fuse_sequence<'a>(frames: impl IntoIterator<Item = &'a Frame>, params: &FusionParams) -> SparseVoxelGrid<WeightedTsdfVoxel> {
    let mut grid = SparseVoxelGrid::new(NUM_LEVELS, params.voxel_size, Vector3::zeros());
    for f in frames {
        let Some(depth) = &f.depth else { continue };
        allocate_band(&mut grid, depth, &f.pose, &f.intrinsics, params);
        integrate_depth(&mut grid, depth, &f.pose, &f.intrinsics, params);
    }
    grid.retain(|_, v| v.weight > 0.0);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshing::{marching_cubes, McParams};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn cam() -> Intrinsics {
        Intrinsics::from_fov(40, 30, 60.0)
    }

    fn plane_frame(z: f32) -> Frame {
        let k = cam();
        let depth = Raster::filled(40, 30, 1, z);
        Frame::new(0, Pose::identity(), k, Raster::new(40, 30, 3), Some(depth)).unwrap()
    }

    fn single_voxel() -> (SparseVoxelGrid<WeightedTsdfVoxel>, VoxelCoord) {
        let mut g = SparseVoxelGrid::new(3, 0.04, Vector3::zeros());
        let c = g.voxel_at(&Point3::new(0.0, 0.0, 1.0));
        g.insert(c, WeightedTsdfVoxel::default());
        (g, c)
    }

    #[test]
    fn running_mean() {
        let (mut g, c) = single_voxel();
        let p = FusionParams::default();
        let z = g.voxel_center(c).z;
        // Depths chosen so s = 0.2 then 0.4.
        for s in [0.2, 0.4] {
            let depth = Raster::filled(40, 30, 1, (z + s * p.lambda) as f32);
            integrate_depth(&mut g, &depth, &Pose::identity(), &cam(), &p);
        }
        let v = g.get(&c).unwrap();
        assert!((v.tsdf - 0.3).abs() < 1e-5 && v.weight == 2.0, "{v:?}");
    }

    #[test]
    fn behind_truncation_is_untouched() {
        let (mut g, c) = single_voxel();
        let z = g.voxel_center(c).z;
        let depth = Raster::filled(40, 30, 1, (z - 0.5) as f32);
        integrate_depth(&mut g, &depth, &Pose::identity(), &cam(), &FusionParams::default());
        assert_eq!(*g.get(&c).unwrap(), WeightedTsdfVoxel::default());
    }

    #[test]
    fn weight_saturates() {
        let (mut g, c) = single_voxel();
        let p = FusionParams { w_max: 3.0, ..Default::default() };
        let depth = Raster::filled(40, 30, 1, 1.05);
        for _ in 0..10 {
            integrate_depth(&mut g, &depth, &Pose::identity(), &cam(), &p);
        }
        assert_eq!(g.get(&c).unwrap().weight, 3.0);
    }

    #[test]
    fn plane_zero_crossing() {
        let g = fuse_sequence([&plane_frame(2.0)], &FusionParams::default());
        let m = marching_cubes(&g, McParams::default());
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v[2] - 2.0).abs() < 0.02, "{v:?}");
        }
    }

    #[test]
    fn repeated_frame_keeps_values() {
        let f = plane_frame(2.0);
        let once = fuse_sequence([&f], &FusionParams::default());
        let thrice = fuse_sequence([&f, &f, &f], &FusionParams::default());
        assert_eq!(once.len(), thrice.len());
        for (c, v) in once.iter() {
            let w = thrice.get(c).unwrap();
            assert!((v.tsdf - w.tsdf).abs() < 1e-6);
            assert_eq!(w.weight, 3.0 * v.weight);
        }
    }

    #[test]
    fn invalid_depth_gives_empty_grid() {
        assert!(fuse_sequence([&plane_frame(0.0)], &FusionParams::default()).is_empty());
    }

    proptest! {
        #[test]
        fn order_invariant_and_bounded(d in proptest::collection::vec(1.0f32..2.5, 3)) {
            let p = FusionParams::default();
            let frames: Vec<Frame> = d.iter().map(|&z| plane_frame(z)).collect();
            let mut grids = Vec::new();
            for perm in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
                // Same allocation for every order so only integration order varies.
                let mut g = SparseVoxelGrid::new(3, p.voxel_size, Vector3::zeros());
                for f in &frames {
                    allocate_band(&mut g, f.depth.as_ref().unwrap(), &f.pose, &f.intrinsics, &p);
                }
                for &i in &perm {
                    let f = &frames[i];
                    integrate_depth(&mut g, f.depth.as_ref().unwrap(), &f.pose, &f.intrinsics, &p);
                }
                grids.push(g);
            }
            for (c, v) in grids[0].iter() {
                prop_assert!(v.tsdf.abs() <= 1.0);
                for g in &grids[1..] {
                    let w = g.get(c).unwrap();
                    prop_assert!((v.tsdf - w.tsdf).abs() < 1e-5);
                    prop_assert_eq!(v.weight, w.weight);
                }
            }
        }
    }
}
