//! Supervision targets from the analytic scene.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::baseline::projective_sdf;
use crate::camera::{Fbv, Fragment};
use crate::synth::{scene_sdf, SceneSpec};
use crate::voxgrid::{level_voxel_size, SparseVoxelGrid, TsdfVoxel, VoxelCoord};

/// Target for one voxel center: occupied iff `|sdf| < lambda`, `x` is the
/// clamped normalized SDF.
pub fn ground_truth_at(spec: &SceneSpec, p: &Point3<f64>, lambda: f64) -> TsdfVoxel {
    let d = scene_sdf(spec, p);
    let o = if d.abs() < lambda { 1.0 } else { 0.0 };
    TsdfVoxel::new(o, (d / lambda).clamp(-1.0, 1.0) as f32)
}

/// Targets for `coords` of `grid`'s lattice.
pub fn ground_truth_coords<P: Sync>(
    spec: &SceneSpec,
    grid: &SparseVoxelGrid<P>,
    coords: &[VoxelCoord],
    lambda: f64,
) -> Vec<TsdfVoxel> {
    coords
        .par_iter()
        .map(|c| ground_truth_at(spec, &grid.voxel_center(*c), lambda))
        .collect()
}

/// Dense targets over the level-`level` lattice of `fbv`.
pub fn ground_truth_volume(spec: &SceneSpec, fbv: &Fbv, level: u8, finest: f64, lambda: f64) -> SparseVoxelGrid<TsdfVoxel> {
    let vs = level_voxel_size(finest, level);
    let n = fbv.cells_per_side(vs);
    let mut grid = SparseVoxelGrid::new(level, vs, fbv.min_corner);
    let coords: Vec<VoxelCoord> = (0..n)
        .flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| VoxelCoord::new(i, j, k))))
        .collect();
    let values = ground_truth_coords(spec, &grid, &coords, lambda);
    grid.extend(coords.into_iter().zip(values));
    grid
}

/// True when some view's depth map says the point is in front of, or within
/// `lambda` behind, the observed surface. Points failing this are hidden
/// from every view and cannot be inferred from the fragment.
pub fn observable(fragment: &Fragment, p: &Point3<f64>, lambda: f64, d_max: f64) -> bool {
    fragment.frames.iter().any(|f| {
        f.depth
            .as_ref()
            .is_some_and(|d| projective_sdf(p, d, &f.pose, &f.intrinsics, lambda, d_max).is_some())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Primitive;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn sphere() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.5,
            }],
            ..SceneSpec::demo_room()
        }
    }

    #[test]
    fn targets() {
        let s = sphere();
        let v = ground_truth_at(&s, &Point3::new(0.5, 0.0, 0.0), 0.12);
        assert_eq!((v.o, v.x), (1.0, 0.0));
        let v = ground_truth_at(&s, &Point3::new(0.62, 0.0, 0.0), 0.12);
        assert_eq!((v.o, v.x), (0.0, 1.0));
        let v = ground_truth_at(&s, &Point3::new(0.0, 0.44, 0.0), 0.12);
        assert_eq!(v.o, 1.0);
        assert_relative_eq!(v.x, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn dense_volume() {
        let fbv = Fbv {
            min_corner: Vector3::repeat(-0.64),
            side_length: 1.28,
        };
        let g = ground_truth_volume(&sphere(), &fbv, 2, 0.04, 0.12);
        assert_eq!(g.len(), 16 * 16 * 16);
        assert!(g.iter().all(|(c, v)| {
            let r = g.voxel_center(*c).coords.norm();
            (v.o == 1.0) == ((r - 0.5).abs() < 0.12) && v.x.abs() <= 1.0
        }));
    }
}
