//! Pinhole cameras, key-frame selection and fragment assembly.
//!
//! Camera frames follow the usual computer-vision convention: x right, y
//! down, z forward. A [`Pose`] maps camera-frame points to the world frame.
//! Pixel centers sit at integer coordinates, so the image spans
//! `[-0.5, width - 0.5] × [-0.5, height - 0.5]`.

mod ingest;

use log::warn;
use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub use ingest::{
    ingest_sequence, load_depth_png, parse_intrinsics, parse_trajectory, read_intrinsics, read_trajectory,
    save_depth_png, write_intrinsics, write_trajectory, IngestConfig, TrajectoryEntry,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Symmetric camera with the given horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = f64::from(width) * 0.5 / (hfov_deg.to_radians() * 0.5).tan();
        Self {
            fx: f,
            fy: f,
            cx: (f64::from(width) - 1.0) * 0.5,
            cy: (f64::from(height) - 1.0) * 0.5,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..f64::from(self.width)).contains(&self.cx)
            && (0.0..f64::from(self.height)).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Camera(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Projects a camera-frame point to pixel coordinates (no bounds check).
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame point at z-depth `z` along pixel `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    #[inline]
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u <= f64::from(self.width) - 0.5 && v <= f64::from(self.height) - 0.5
    }

    /// The four image-plane corners, in pixels.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (w, h) = (f64::from(self.width) - 0.5, f64::from(self.height) - 0.5);
        [(-0.5, -0.5), (w, -0.5), (w, h), (-0.5, h)]
    }
}

/// Rigid transform from the camera frame to the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err >= 1e-6 || rotation.determinant() <= 0.0 {
            return Err(Error::Camera(format!("rotation is not orthonormal (error {err:e})")));
        }
        Ok(Self { rotation, translation })
    }

    /// From a translation and a (possibly slightly unnormalized) quaternion
    /// given as `x, y, z, w`.
    pub fn from_quaternion(translation: Vector3<f64>, q: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    /// Quaternion `x, y, z, w` of the rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        [q.i, q.j, q.k, q.w]
    }

    /// Camera at `eye` looking at `target`, with `up` as the world up hint.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Self {
        let f = (target - eye).normalize();
        let mut right = f.cross(&up);
        if right.norm() < 1e-9 {
            right = f.cross(&Vector3::x());
        }
        let right = right.normalize();
        let down = f.cross(&right);
        Self {
            rotation: Matrix3::from_columns(&[right, down, f]),
            translation: eye.coords,
        }
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p_cam + self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p_world: &Point3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p_world.coords - self.translation))
    }
}

/// Translation norm (meters) and rotation angle (degrees) between two poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeMotion {
    pub translation: f64,
    pub rotation_deg: f64,
}

pub fn relative_motion(a: &Pose, b: &Pose) -> RelativeMotion {
    let rel = a.inverse().compose(b);
    let r = &rel.rotation;
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    RelativeMotion {
        translation: rel.translation.norm(),
        rotation_deg: s.atan2(c).to_degrees(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KeyframeMode {
    /// Both thresholds must be exceeded.
    #[default]
    Conjunction,
    /// Either threshold suffices.
    Disjunction,
}

impl std::str::FromStr for KeyframeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "and" | "conjunction" => Ok(Self::Conjunction),
            "or" | "disjunction" => Ok(Self::Disjunction),
            _ => Err(Error::Config(format!("unknown key-frame mode `{s}`"))),
        }
    }
}

pub fn select_keyframe(last: &Pose, candidate: &Pose, t_max: f64, r_max_deg: f64, mode: KeyframeMode) -> bool {
    let m = relative_motion(last, candidate);
    let (dt, dr) = (m.translation > t_max, m.rotation_deg > r_max_deg);
    match mode {
        KeyframeMode::Conjunction => dt && dr,
        KeyframeMode::Disjunction => dt || dr,
    }
}

/// One input image with its camera.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    /// Backbone input: grayscale or depth-derived feature channels.
    pub image: Raster,
    /// Metric depth, when the source provides it (0 = invalid).
    pub depth: Option<Raster>,
}

impl Frame {
    pub fn new(index: usize, pose: Pose, intrinsics: Intrinsics, image: Raster, depth: Option<Raster>) -> Result<Self> {
        let dims = (intrinsics.width as usize, intrinsics.height as usize);
        for (what, r) in [("image", Some(&image)), ("depth", depth.as_ref())] {
            if let Some(r) = r {
                if (r.width(), r.height()) != dims {
                    return Err(Error::Image {
                        index,
                        msg: format!("{what} is {}×{}, intrinsics say {}×{}", r.width(), r.height(), dims.0, dims.1),
                    });
                }
            }
        }
        Ok(Self {
            index,
            pose,
            intrinsics,
            image,
            depth,
        })
    }
}

/// Cubic, grid-aligned region that encloses a fragment's view frustums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fbv {
    pub min_corner: Vector3<f64>,
    pub side_length: f64,
}

impl Fbv {
    pub fn max_corner(&self) -> Vector3<f64> {
        self.min_corner.add_scalar(self.side_length)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= self.min_corner[a] && p[a] <= hi[a])
    }

    /// Number of voxels of size `voxel_size` along one side.
    pub fn cells_per_side(&self, voxel_size: f64) -> i32 {
        (self.side_length / voxel_size).round() as i32
    }
}

/// The five frustum corners (camera center plus four far-plane corners).
pub fn frustum_corners(pose: &Pose, k: &Intrinsics, d_max: f64) -> [Point3<f64>; 5] {
    let c = k.corners();
    let far = |i: usize| pose.to_world(&k.unproject(c[i].0, c[i].1, d_max));
    [pose.center(), far(0), far(1), far(2), far(3)]
}

/// Smallest grid-aligned cube around the union of the frames' frustums.
///
/// # Panics
/// Panics when `frames` is empty.
pub fn compute_fbv(frames: &[Frame], d_max: f64, coarse_voxel: f64) -> Fbv {
    assert!(!frames.is_empty(), "compute_fbv needs at least one frame");
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for f in frames {
        for p in frustum_corners(&f.pose, &f.intrinsics, d_max) {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
    }
    let side = (hi - lo).max();
    let center = (lo + hi) * 0.5;
    let eps = 1e-9;
    let mut min_corner = Vector3::zeros();
    let mut cells = 0i64;
    for a in 0..3 {
        let m = ((center[a] - side * 0.5) / coarse_voxel + eps).floor();
        min_corner[a] = m * coarse_voxel;
        let need = ((hi[a] - min_corner[a]) / coarse_voxel - eps).ceil() as i64;
        cells = cells.max(need);
    }
    Fbv {
        min_corner,
        side_length: cells.max(1) as f64 * coarse_voxel,
    }
}

/// A window of key frames reconstructed jointly.
#[derive(Clone, Debug)]
pub struct Fragment {
    pub frames: Vec<Frame>,
    pub fbv: Fbv,
    pub fragment_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FragmentParams {
    pub n_views: usize,
    pub t_max: f64,
    pub r_max_deg: f64,
    pub d_max: f64,
    pub coarse_voxel: f64,
    pub mode: KeyframeMode,
}

/// Incremental key-frame selection and fragment windowing.
#[derive(Debug)]
pub struct FragmentAssembler {
    params: FragmentParams,
    last_key: Option<Pose>,
    window: Vec<Frame>,
    emitted: usize,
    keyframes: usize,
}

impl FragmentAssembler {
    pub fn new(params: FragmentParams) -> Self {
        assert!(params.n_views >= 2, "fragments need at least two views");
        Self {
            params,
            last_key: None,
            window: Vec::with_capacity(params.n_views),
            emitted: 0,
            keyframes: 0,
        }
    }

    /// Number of key frames selected so far.
    pub fn keyframe_count(&self) -> usize {
        self.keyframes
    }

    fn make_fragment(&mut self) -> Fragment {
        let frames = std::mem::take(&mut self.window);
        let fbv = compute_fbv(&frames, self.params.d_max, self.params.coarse_voxel);
        let f = Fragment {
            frames,
            fbv,
            fragment_index: self.emitted,
        };
        self.emitted += 1;
        f
    }

    /// Feeds one frame; returns a fragment when a window fills up.
    pub fn push(&mut self, frame: Frame) -> Option<Fragment> {
        let is_key = match &self.last_key {
            None => true,
            Some(last) => select_keyframe(last, &frame.pose, self.params.t_max, self.params.r_max_deg, self.params.mode),
        };
        if !is_key {
            return None;
        }
        self.last_key = Some(frame.pose);
        self.keyframes += 1;
        self.window.push(frame);
        (self.window.len() == self.params.n_views).then(|| self.make_fragment())
    }

    /// Flushes a trailing window of at least two key frames.
    pub fn finish(&mut self) -> Option<Fragment> {
        if self.keyframes < 2 {
            warn!("only {} key frame(s) selected; no fragment produced", self.keyframes);
        }
        if self.window.len() >= 2 {
            Some(self.make_fragment())
        } else {
            self.window.clear();
            None
        }
    }
}

/// Streams fragments out of a frame sequence.
pub fn assemble_fragments<I>(frames: I, params: FragmentParams) -> impl Iterator<Item = Fragment>
where
    I: IntoIterator<Item = Frame>,
{
    let mut asm = FragmentAssembler::new(params);
    let mut frames = frames.into_iter();
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        for f in frames.by_ref() {
            if let Some(frag) = asm.push(f) {
                return Some(frag);
            }
        }
        done = true;
        asm.finish()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rz(deg: f64) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).into_inner()
    }

    fn frame(pose: Pose, k: Intrinsics) -> Frame {
        let img = Raster::new(k.width as usize, k.height as usize, 1);
        Frame::new(0, pose, k, img, None).unwrap()
    }

    #[test]
    fn relative_motion_examples() {
        let a = Pose::identity();
        let m = relative_motion(&a, &a);
        assert_eq!((m.translation, m.rotation_deg), (0.0, 0.0));

        let b = Pose::new(Matrix3::identity(), Vector3::new(0.3, 0.0, 0.0)).unwrap();
        let m = relative_motion(&a, &b);
        assert_abs_diff_eq!(m.translation, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rotation_deg, 0.0, epsilon = 1e-12);

        let c = Pose::new(rz(90.0), Vector3::zeros()).unwrap();
        let m = relative_motion(&a, &c);
        assert_abs_diff_eq!(m.translation, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rotation_deg, 90.0, epsilon = 1e-9);
    }

    fn motion_pose(dt: f64, dr: f64) -> Pose {
        Pose::new(rz(dr), Vector3::new(dt, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn keyframe_predicate() {
        let a = Pose::identity();
        let both = motion_pose(0.15, 20.0);
        assert!(select_keyframe(&a, &both, 0.1, 15.0, KeyframeMode::Conjunction));
        let small = motion_pose(0.05, 5.0);
        assert!(!select_keyframe(&a, &small, 0.1, 15.0, KeyframeMode::Conjunction));
        assert!(!select_keyframe(&a, &small, 0.1, 15.0, KeyframeMode::Disjunction));
        let trans_only = motion_pose(0.15, 5.0);
        assert!(!select_keyframe(&a, &trans_only, 0.1, 15.0, KeyframeMode::Conjunction));
        assert!(select_keyframe(&a, &trans_only, 0.1, 15.0, KeyframeMode::Disjunction));
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
        assert!(Pose::new(-Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn fbv_of_single_camera() {
        // 90° field of view in both directions.
        let k = Intrinsics::new(50.0, 50.0, 49.5, 49.5, 100, 100).unwrap();
        let f = frame(Pose::identity(), k);
        let fbv = compute_fbv(std::slice::from_ref(&f), 3.0, 0.16);
        assert_abs_diff_eq!(fbv.side_length, 6.08, epsilon = 1e-9);
        for p in frustum_corners(&f.pose, &k, 3.0) {
            assert!(fbv.contains(&p), "{p:?} outside {fbv:?}");
        }
        let lo = fbv.min_corner;
        assert!(lo.x <= -3.0 && lo.y <= -3.0 && lo.z <= 0.0);

        let dup = compute_fbv(&[f.clone(), f.clone()], 3.0, 0.16);
        assert_eq!(dup, fbv);

        let moved = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let two = compute_fbv(&[f, frame(moved, k)], 3.0, 0.16);
        assert!(two.side_length >= fbv.side_length);
    }

    fn orbit_frames(n: usize, every: usize) -> Vec<Frame> {
        // Camera turns 20° and moves 0.2 m on every `every`-th frame only.
        let k = Intrinsics::from_fov(8, 6, 60.0);
        let mut out = vec![];
        let mut steps = 0;
        for i in 0..n {
            if i > 0 && i % every == 0 {
                steps += 1;
            }
            let p = Pose::new(rz(20.0 * steps as f64), Vector3::new(0.2 * steps as f64, 0.0, 0.0)).unwrap();
            let mut f = frame(p, k);
            f.index = i;
            out.push(f);
        }
        out
    }

    fn params(n: usize) -> FragmentParams {
        FragmentParams {
            n_views: n,
            t_max: 0.1,
            r_max_deg: 15.0,
            d_max: 3.0,
            coarse_voxel: 0.16,
            mode: KeyframeMode::Conjunction,
        }
    }

    #[test]
    fn assemble_scripted_orbit() {
        let frags: Vec<_> = assemble_fragments(orbit_frames(100, 5), params(9)).collect();
        let idx: Vec<Vec<usize>> = frags.iter().map(|f| f.frames.iter().map(|fr| fr.index).collect()).collect();
        assert_eq!(idx[0], (0..9).map(|i| i * 5).collect::<Vec<_>>());
        assert_eq!(idx[1], (9..18).map(|i| i * 5).collect::<Vec<_>>());
        assert_eq!(idx[2], vec![90, 95]);
        assert_eq!(frags.len(), 3);
    }

    #[test]
    fn static_camera_yields_nothing() {
        let k = Intrinsics::from_fov(8, 6, 60.0);
        let frames: Vec<_> = (0..20).map(|_| frame(Pose::identity(), k)).collect();
        assert_eq!(assemble_fragments(frames, params(9)).count(), 0);
    }

    #[test]
    fn exactly_n_keyframes_is_one_fragment() {
        let frags: Vec<_> = assemble_fragments(orbit_frames(9, 1), params(9)).collect();
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].frames.len(), 9);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
        )
            .prop_filter("nonzero quaternion", |q| q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3 > 1e-3)
            .prop_map(|(a, b, c, d, x, y, z)| Pose::from_quaternion(Vector3::new(x, y, z), [a, b, c, d]))
    }

    proptest! {
        #[test]
        fn keyframe_monotone(dt in 0.0f64..0.5, dr in 0.0f64..60.0, ddt in 0.0f64..0.5, ddr in 0.0f64..60.0) {
            let a = Pose::identity();
            for mode in [KeyframeMode::Conjunction, KeyframeMode::Disjunction] {
                let lo = select_keyframe(&a, &motion_pose(dt, dr), 0.1, 15.0, mode);
                let hi = select_keyframe(&a, &motion_pose(dt + ddt, (dr + ddr).min(179.0)), 0.1, 15.0, mode);
                prop_assert!(!lo || hi);
            }
        }

        #[test]
        fn fbv_contains_all_corners(poses in proptest::collection::vec(arb_pose(), 1..5)) {
            let k = Intrinsics::from_fov(64, 48, 70.0);
            let frames: Vec<_> = poses.iter().map(|p| frame(*p, k)).collect();
            let fbv = compute_fbv(&frames, 3.0, 0.16);
            for f in &frames {
                for p in frustum_corners(&f.pose, &k, 3.0) {
                    prop_assert!(fbv.contains(&p));
                }
            }
            for a in 0..3 {
                let m = fbv.min_corner[a] / 0.16;
                prop_assert!((m - m.round()).abs() < 1e-6);
            }
            let n = fbv.side_length / 0.16;
            prop_assert!((n - n.round()).abs() < 1e-6);
        }

        #[test]
        fn relative_motion_symmetric(a in arb_pose(), b in arb_pose()) {
            let ab = relative_motion(&a, &b);
            let ba = relative_motion(&b, &a);
            prop_assert!((ab.translation - ba.translation).abs() < 1e-9);
            prop_assert!((ab.rotation_deg - ba.rotation_deg).abs() < 1e-7);
            prop_assert!((0.0..=180.0).contains(&ab.rotation_deg));
        }

        #[test]
        fn fragments_disjoint_and_increasing(every in 1usize..4, n in 2usize..6) {
            let frags: Vec<_> = assemble_fragments(orbit_frames(40, every), params(n)).collect();
            let all: Vec<usize> = frags.iter().flat_map(|f| f.frames.iter().map(|fr| fr.index)).collect();
            prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
