//! Analytic synthetic scenes: signed distance, depth rendering, ground-truth
//! meshes and scripted camera paths.

use std::path::Path;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{save_depth_png, write_intrinsics, write_trajectory, Frame, Intrinsics, Pose, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::meshing::{marching_cubes, write_mesh, McParams, MeshFormat, TriangleMesh};
use crate::raster::{depth_feature_image, Raster};
use crate::voxgrid::{SparseVoxelGrid, TsdfVoxel, VoxelCoord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Box rotated by `yaw_deg` about the world z axis.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
    },
    /// Solid where `offset - thickness <= n·p <= offset`, `n` normalized.
    PlaneSlab {
        normal: [f64; 3],
        offset: f64,
        thickness: f64,
    },
}

impl Primitive {
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (p - Point3::from(*center)).norm() - radius,
            Primitive::Box {
                center,
                half_extents,
                yaw_deg,
            } => {
                let r = Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw_deg.to_radians());
                let q = r * (p - Point3::from(*center));
                let d = q.abs() - Vector3::from(*half_extents);
                d.sup(&Vector3::zeros()).norm() + d.max().min(0.0)
            }
            Primitive::PlaneSlab {
                normal,
                offset,
                thickness,
            } => {
                let s = Vector3::from(*normal).normalize().dot(&p.coords);
                (s - offset).max(offset - thickness - s)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::PlaneSlab { normal, thickness, .. } => *thickness > 0.0 && Vector3::from(*normal).norm() > 1e-9,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Scene(format!("degenerate primitive {self:?}")))
        }
    }

    /// Center of a bounded primitive.
    fn center(&self) -> Option<Point3<f64>> {
        match self {
            Primitive::Sphere { center, .. } | Primitive::Box { center, .. } => Some(Point3::from(*center)),
            Primitive::PlaneSlab { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn center(&self) -> Point3<f64> {
        Point3::from((Vector3::from(self.min) + Vector3::from(self.max)) * 0.5)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            hfov_deg: 60.0,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Orbit,
    ScanLine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Orbit radius (m), measured horizontally from the target.
    pub radius: f64,
    /// Camera height above z = 0 (m).
    pub height: f64,
    /// Look-at point; defaults to the centroid of the bounded primitives.
    pub target: Option<[f64; 3]>,
    /// Total orbit sweep in degrees.
    pub arc_deg: f64,
    /// Scan-line: frames per block between yaw flips.
    pub keyframe_every: usize,
    pub yaw_amp_deg: f64,
    /// Scan-line: camera translation per frame (m).
    pub step: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Orbit,
            radius: 1.2,
            height: 1.4,
            target: None,
            arc_deg: 360.0,
            keyframe_every: 4,
            yaw_amp_deg: 10.0,
            step: 0.04,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub room_bounds: Bounds,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    /// Standard deviation of additive depth noise (m).
    #[serde(default)]
    pub depth_noise: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Scene("scene needs at least one primitive".into()));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        let b = &self.room_bounds;
        if (0..3).any(|a| b.max[a] <= b.min[a]) {
            return Err(Error::Scene("room_bounds max must exceed min".into()));
        }
        if self.depth_noise < 0.0 {
            return Err(Error::Scene("depth_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    /// Mean center of spheres and boxes, or the room center without any.
    pub fn centroid(&self) -> Point3<f64> {
        let centers: Vec<_> = self.primitives.iter().filter_map(Primitive::center).collect();
        if centers.is_empty() {
            return self.room_bounds.center();
        }
        Point3::from(centers.iter().map(|c| c.coords).sum::<Vector3<f64>>() / centers.len() as f64)
    }

    /// A closed room (floor and four walls) holding a sphere and a yawed box.
    pub fn demo_room() -> Self {
        let slab = |normal: [f64; 3], offset: f64| Primitive::PlaneSlab {
            normal,
            offset,
            thickness: 0.2,
        };
        Self {
            primitives: vec![
                slab([0.0, 0.0, 1.0], 0.0),
                slab([1.0, 0.0, 0.0], -1.6),
                slab([-1.0, 0.0, 0.0], -1.6),
                slab([0.0, 1.0, 0.0], -1.6),
                slab([0.0, -1.0, 0.0], -1.6),
                Primitive::Sphere {
                    center: [0.35, 0.3, 0.25],
                    radius: 0.35,
                },
                Primitive::Box {
                    center: [-0.4, -0.25, 0.25],
                    half_extents: [0.3, 0.2, 0.25],
                    yaw_deg: 30.0,
                },
            ],
            room_bounds: Bounds {
                min: [-1.6, -1.6, 0.0],
                max: [1.6, 1.6, 1.6],
            },
            seed: 0,
            camera: CameraSpec::default(),
            trajectory: TrajectorySpec::default(),
            depth_noise: 0.0,
        }
    }
}

/// Signed distance to the union of all primitives, negative inside.
pub fn scene_sdf(spec: &SceneSpec, p: &Point3<f64>) -> f64 {
    spec.primitives.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
}

/// Surface hit tolerance of the sphere tracer (m).
pub const HIT_TOLERANCE: f64 = 1e-4;
const MAX_STEPS: usize = 512;

/// Distance along unit ray `dir` from `origin` to the first surface, if any
/// within `max_t`.
pub fn trace_ray(spec: &SceneSpec, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let d = scene_sdf(spec, &(origin + dir * t));
        if d < HIT_TOLERANCE {
            return Some(refine_hit(spec, origin, dir, t));
        }
        t += d;
        if t > max_t {
            return None;
        }
    }
    None
}

/// Keeps stepping after a hit; grazing rays otherwise stop short of the surface.
fn refine_hit(spec: &SceneSpec, origin: &Point3<f64>, dir: &Vector3<f64>, mut t: f64) -> f64 {
    for _ in 0..64 {
        let d = scene_sdf(spec, &(origin + dir * t));
        if d < 1e-9 {
            break;
        }
        t += d;
    }
    t
}

/// Camera-frame z depth per pixel; 0 where the ray misses or the hit lies
/// beyond `d_max`.
pub fn render_gt_depth(spec: &SceneSpec, pose: &Pose, k: &Intrinsics, d_max: f64) -> Raster {
    let (w, h) = (k.width as usize, k.height as usize);
    let origin = pose.center();
    let mut data = vec![0f32; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let ray_cam = k.unproject(x as f64, y as f64, 1.0);
            let len = ray_cam.norm();
            let dir = pose.rotation * (ray_cam / len);
            // z = t / len along a unit ray.
            if let Some(t) = trace_ray(spec, &origin, &dir, d_max * len) {
                let z = t / len;
                if z > 0.0 && z <= d_max {
                    *out = z as f32;
                }
            }
        }
    });
    Raster::from_vec(w, h, 1, data)
}

/// Adds zero-mean Gaussian noise with deviation `sigma` to valid pixels.
pub fn add_depth_noise(depth: &mut Raster, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in depth.data_mut() {
        if *d > 0.0 {
            *d = (f64::from(*d) + normal.sample(&mut rng)).max(1e-3) as f32;
        }
    }
}

/// Truncation used for sampling ground-truth meshes, in voxels.
const GT_TRUNCATION_VOXELS: f64 = 3.0;

/// Ground-truth mesh of the part of the scene inside `[min, max]`, sampled on
/// a lattice with voxel size `voxel_size` anchored at `min`.
pub fn gt_mesh_region(spec: &SceneSpec, voxel_size: f64, min: Vector3<f64>, max: Vector3<f64>) -> TriangleMesh {
    let lambda = GT_TRUNCATION_VOXELS * voxel_size;
    let n = (max - min).map(|e| (e / voxel_size).ceil().max(0.0) as i32);
    let mut grid = SparseVoxelGrid::new(3, voxel_size, min);
    let slabs: Vec<Vec<(VoxelCoord, TsdfVoxel)>> = (0..n.x)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in 0..n.y {
                for k in 0..n.z {
                    let c = VoxelCoord::new(i, j, k);
                    let p = min + (Vector3::new(f64::from(i), f64::from(j), f64::from(k)).add_scalar(0.5)) * voxel_size;
                    let d = scene_sdf(spec, &Point3::from(p));
                    if d.abs() < lambda {
                        out.push((c, TsdfVoxel::new(1.0, (d / lambda) as f32)));
                    }
                }
            }
            out
        })
        .collect();
    grid.extend(slabs.into_iter().flatten());
    marching_cubes(&grid, McParams::default())
}

/// Ground-truth mesh over the room bounds.
pub fn gt_mesh(spec: &SceneSpec, voxel_size: f64) -> TriangleMesh {
    let b = &spec.room_bounds;
    // One voxel of margin so surfaces on the bounds are still bracketed.
    let pad = Vector3::repeat(voxel_size);
    gt_mesh_region(spec, voxel_size, Vector3::from(b.min) - pad, Vector3::from(b.max) + pad)
}

fn up() -> Vector3<f64> {
    Vector3::z()
}

/// Deterministic camera path. Orbits circle the target at `radius` and
/// `height`, spaced evenly over `arc_deg`. Scan lines translate along +x by
/// `step` per frame, looking toward +y and down, and flip the yaw between
/// `±yaw_amp_deg` every `keyframe_every` frames.
pub fn scripted_trajectory(spec: &SceneSpec, traj: &TrajectorySpec, n_frames: usize) -> Vec<Pose> {
    let target = traj.target.map(Point3::from).unwrap_or_else(|| spec.centroid());
    match traj.kind {
        TrajectoryKind::Orbit => (0..n_frames)
            .map(|i| {
                let a = (traj.arc_deg * i as f64 / n_frames as f64).to_radians();
                let eye = Point3::new(
                    target.x + traj.radius * a.cos(),
                    target.y + traj.radius * a.sin(),
                    traj.height,
                );
                Pose::look_at(eye, target, up())
            })
            .collect(),
        TrajectoryKind::ScanLine => {
            let total = traj.step * n_frames.saturating_sub(1) as f64;
            let y = target.y - traj.radius;
            let k = traj.keyframe_every.max(1);
            (0..n_frames)
                .map(|i| {
                    let x = target.x - 0.5 * total + traj.step * i as f64;
                    let eye = Point3::new(x, y, traj.height);
                    let look = Pose::look_at(eye, Point3::new(x, target.y, target.z), up());
                    let sign = if (i / k).is_multiple_of(2) { 1.0 } else { -1.0 };
                    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), sign * traj.yaw_amp_deg.to_radians());
                    Pose {
                        rotation: yaw.matrix() * look.rotation,
                        translation: look.translation,
                    }
                })
                .collect()
        }
    }
}

/// Renders depth for each pose and wraps it into frames whose backbone input
/// is the depth feature image.
pub fn render_frames(spec: &SceneSpec, poses: &[Pose], d_max: f64) -> Result<Vec<Frame>> {
    let k = spec.camera.intrinsics();
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut depth = render_gt_depth(spec, pose, &k, d_max);
            add_depth_noise(&mut depth, spec.depth_noise, spec.seed.wrapping_add(i as u64));
            Frame::new(i, *pose, k, depth_feature_image(&depth), Some(depth))
        })
        .collect()
}

/// Files written by [`write_dataset`], relative to the output directory.
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const DEPTH_DIR: &str = "depth";
pub const GT_MESH_FILE: &str = "gt.ply";
pub const SCENE_FILE: &str = "scene.json";
pub const DEPTH_SCALE: f64 = 1000.0;

/// Writes trajectory, intrinsics, 16-bit depth PNGs, the scene spec and the
/// ground-truth mesh into `dir`, which must exist.
pub fn write_dataset(spec: &SceneSpec, frames: &[Frame], gt: &TriangleMesh, dir: &Path) -> Result<()> {
    let entries: Vec<TrajectoryEntry> = frames
        .iter()
        .map(|f| TrajectoryEntry {
            index: f.index,
            pose: f.pose,
        })
        .collect();
    write_trajectory(&dir.join(TRAJECTORY_FILE), &entries)?;
    if let Some(f) = frames.first() {
        write_intrinsics(&dir.join(INTRINSICS_FILE), &f.intrinsics)?;
    }
    let depth_dir = dir.join(DEPTH_DIR);
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    for f in frames {
        if let Some(d) = &f.depth {
            save_depth_png(d, &depth_dir.join(format!("{:06}.png", f.index)), DEPTH_SCALE)?;
        }
    }
    let scene = dir.join(SCENE_FILE);
    std::fs::write(&scene, spec.to_json()).map_err(|e| Error::io(&scene, e))?;
    write_mesh(gt, &dir.join(GT_MESH_FILE), MeshFormat::Ply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{relative_motion, select_keyframe, KeyframeMode};
    use proptest::prelude::*;
    use rand::Rng;

    fn sphere_scene(r: f64) -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius: r,
            }],
            room_bounds: Bounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
            seed: 0,
            camera: CameraSpec::default(),
            trajectory: TrajectorySpec::default(),
            depth_noise: 0.0,
        }
    }

    #[test]
    fn primitive_distances() {
        let s = sphere_scene(0.5);
        assert_eq!(scene_sdf(&s, &Point3::new(1.0, 0.0, 0.0)), 0.5);
        assert_eq!(scene_sdf(&s, &Point3::origin()), -0.5);
        let mut two = s.clone();
        two.primitives.push(Primitive::Sphere {
            center: [2.0, 0.0, 0.0],
            radius: 0.3,
        });
        let p = Point3::new(1.1, 0.0, 0.0);
        assert!((scene_sdf(&two, &p) - 0.6f64.min(0.6)).abs() < 1e-12);
        let b = Primitive::Box {
            center: [0.0; 3],
            half_extents: [1.0, 0.5, 0.25],
            yaw_deg: 90.0,
        };
        // Yawed by 90°, the long axis runs along y.
        assert!((b.sdf(&Point3::new(0.0, 1.5, 0.0)) - 0.5).abs() < 1e-12);
        assert!((b.sdf(&Point3::new(0.0, 0.0, 0.0)) + 0.25).abs() < 1e-12);
        let slab = Primitive::PlaneSlab {
            normal: [0.0, 0.0, 2.0],
            offset: 0.0,
            thickness: 0.2,
        };
        assert!((slab.sdf(&Point3::new(3.0, 1.0, 0.5)) - 0.5).abs() < 1e-12);
        assert!((slab.sdf(&Point3::new(0.0, 0.0, -0.1)) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = SceneSpec::demo_room();
        assert_eq!(SceneSpec::from_json(&s.to_json()).unwrap(), s);
        let minimal = r#"{"primitives":[{"type":"sphere","center":[0,0,0],"radius":1}],
            "room_bounds":{"min":[-2,-2,-2],"max":[2,2,2]}}"#;
        let m = SceneSpec::from_json(minimal).unwrap();
        assert_eq!(m.camera, CameraSpec::default());
        let empty = r#"{"primitives":[],"room_bounds":{"min":[0,0,0],"max":[1,1,1]}}"#;
        assert!(matches!(SceneSpec::from_json(empty), Err(Error::Scene(_))));
        let neg = r#"{"primitives":[{"type":"sphere","center":[0,0,0],"radius":-1}],"room_bounds":{"min":[0,0,0],"max":[1,1,1]}}"#;
        assert!(SceneSpec::from_json(neg).is_err());
    }

    #[test]
    fn lipschitz_on_demo_room() {
        let s = SceneSpec::demo_room();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pt = || Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..2.0));
        for _ in 0..10_000 {
            let (p, q) = (pt(), pt());
            assert!((scene_sdf(&s, &p) - scene_sdf(&s, &q)).abs() <= (p - q).norm() + 1e-12);
        }
    }

    fn plane_at(z: f64) -> SceneSpec {
        let mut s = sphere_scene(0.1);
        s.primitives = vec![Primitive::PlaneSlab {
            normal: [0.0, 0.0, -1.0],
            offset: -z,
            thickness: 0.5,
        }];
        s
    }

    #[test]
    fn plane_depth_is_z() {
        let s = plane_at(2.0);
        let k = Intrinsics::from_fov(41, 31, 60.0);
        let d = render_gt_depth(&s, &Pose::identity(), &k, 3.0);
        assert!((d.at(20, 15, 0) - 2.0).abs() < 1e-3);
        // Off-axis pixels report the same z.
        assert!((d.at(0, 0, 0) - 2.0).abs() < 1e-3);
        assert!((d.at(40, 30, 0) - 2.0).abs() < 1e-3);
        let far = render_gt_depth(&plane_at(5.0), &Pose::identity(), &k, 3.0);
        assert!(far.data().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn sphere_depth_matches_ray_intersection() {
        let mut s = sphere_scene(0.5);
        s.primitives = vec![Primitive::Sphere {
            center: [0.1, -0.2, 2.0],
            radius: 0.5,
        }];
        let k = Intrinsics::from_fov(48, 36, 60.0);
        let d = render_gt_depth(&s, &Pose::identity(), &k, 3.0);
        let c = Vector3::new(0.1, -0.2, 2.0);
        let mut hits = 0;
        for y in 0..36 {
            for x in 0..48 {
                let ray = k.unproject(x as f64, y as f64, 1.0);
                let dir = ray.normalize();
                let b = dir.dot(&c);
                let disc = b * b - (c.norm_squared() - 0.25);
                let got = f64::from(d.at(x, y, 0));
                if disc > 1e-3 {
                    let t = b - disc.sqrt();
                    let z = t * dir.z;
                    assert!((got - z).abs() < 1e-3, "{x},{y}: {got} vs {z}");
                    hits += 1;
                } else if disc < -1e-3 {
                    assert_eq!(got, 0.0);
                }
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn gt_sphere_and_box_accuracy() {
        let s = sphere_scene(0.5);
        let m = gt_mesh(&s, 0.02);
        let mean = m.vertices.iter().map(|v| (Vector3::from(v.map(f64::from)).norm() - 0.5).abs()).sum::<f64>()
            / m.vertices.len() as f64;
        assert!(mean < 0.01, "{mean}");

        let mut b = s.clone();
        let prim = Primitive::Box {
            center: [0.05, 0.0, -0.1],
            half_extents: [0.4, 0.3, 0.2],
            yaw_deg: 20.0,
        };
        b.primitives = vec![prim.clone()];
        let m = gt_mesh(&b, 0.04);
        let mean = (0..m.vertices.len()).map(|i| prim.sdf(&m.vertex(i as u32)).abs()).sum::<f64>() / m.vertices.len() as f64;
        assert!(mean < 0.02, "{mean}");
    }

    #[test]
    fn empty_region_has_no_surface() {
        let m = gt_mesh_region(&sphere_scene(0.2), 0.04, Vector3::repeat(5.0), Vector3::repeat(6.0));
        assert!(m.is_empty());
    }

    #[test]
    fn orbit_geometry() {
        let s = sphere_scene(0.5);
        let traj = TrajectorySpec {
            radius: 2.0,
            height: 0.0,
            target: Some([0.0; 3]),
            ..Default::default()
        };
        let poses = scripted_trajectory(&s, &traj, 4);
        let expected = [[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]];
        for (p, e) in poses.iter().zip(expected) {
            let c = p.center();
            assert!((c.x - e[0]).abs() < 1e-12 && (c.y - e[1]).abs() < 1e-12);
            assert!((c.coords.norm() - 2.0).abs() < 1e-12);
            // Optical axis points at the target.
            let axis = p.rotation * Vector3::z();
            assert!((axis + c.coords / 2.0).norm() < 1e-12);
        }
        assert_eq!(scripted_trajectory(&s, &traj, 1).len(), 1);
    }

    #[test]
    fn orbit_keyframes_every_fifth_of_hundred() {
        let s = SceneSpec::demo_room();
        let poses = scripted_trajectory(&s, &TrajectorySpec::default(), 100);
        let mut last = poses[0];
        let mut keys = vec![0];
        for (i, p) in poses.iter().enumerate().skip(1) {
            if select_keyframe(&last, p, 0.1, 15.0, KeyframeMode::Conjunction) {
                keys.push(i);
                last = *p;
            }
        }
        assert_eq!(keys[..4], [0, 5, 10, 15]);
    }

    #[test]
    fn scan_line_flips_every_block() {
        let s = SceneSpec::demo_room();
        let traj = TrajectorySpec {
            kind: TrajectoryKind::ScanLine,
            keyframe_every: 4,
            ..Default::default()
        };
        let poses = scripted_trajectory(&s, &traj, 16);
        for i in 1..16 {
            let m = relative_motion(&poses[i - 1], &poses[i]);
            let flip = i % 4 == 0;
            assert_eq!(m.rotation_deg > 15.0, flip, "frame {i}");
        }
        let m = relative_motion(&poses[0], &poses[4]);
        assert!(m.translation > 0.1 && m.rotation_deg > 15.0);
    }

    #[test]
    fn noise_is_seeded() {
        let mut a = Raster::filled(8, 8, 1, 2.0);
        let mut b = a.clone();
        add_depth_noise(&mut a, 0.01, 3);
        add_depth_noise(&mut b, 0.01, 3);
        assert_eq!(a, b);
        assert!(a.data().iter().any(|&z| z != 2.0));
    }

    proptest! {
        #[test]
        fn union_is_min(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let s = SceneSpec::demo_room();
            let p = Point3::new(x, y, z);
            let m = s.primitives.iter().map(|q| q.sdf(&p)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(scene_sdf(&s, &p), m);
        }
    }
}
