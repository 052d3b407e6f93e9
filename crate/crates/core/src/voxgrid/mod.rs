//! Multi-level sparse voxel grids.
//!
//! Every grid sits on a world-anchored lattice: voxel `(i, j, k)` covers the
//! cube `origin + [i, i+1) × [j, j+1) × [k, k+1) · voxel_size` and its value
//! is sampled at the cube center. Level 3 is the finest level; each coarser
//! level doubles the voxel size.

mod io;

use indexmap::IndexMap;
use nalgebra::{Point3, Vector3};
use rustc_hash::FxBuildHasher;

use crate::camera::Fbv;
use crate::error::{Error, Result};

pub use io::{
    read_grid, read_grid_from, write_grid, write_grid_to, VoxelPayload, KIND_FEATURE_FLAG, KIND_SCALAR, KIND_TSDF,
    KIND_WEIGHTED_TSDF,
};

/// Finest voxel size in meters.
pub const FINEST_VOXEL_SIZE: f64 = 0.04;
/// Number of coarse-to-fine levels.
pub const NUM_LEVELS: u8 = 3;

pub type CellMap<P> = IndexMap<VoxelCoord, P, FxBuildHasher>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelCoord {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn offset(self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    pub fn parent(self) -> Self {
        Self::new(self.i.div_euclid(2), self.j.div_euclid(2), self.k.div_euclid(2))
    }

    pub fn children(self) -> impl Iterator<Item = VoxelCoord> {
        (0..8).map(move |n| {
            Self::new(
                2 * self.i + (n & 1),
                2 * self.j + ((n >> 1) & 1),
                2 * self.k + ((n >> 2) & 1),
            )
        })
    }
}

impl std::ops::Add for VoxelCoord {
    type Output = VoxelCoord;
    fn add(self, o: VoxelCoord) -> VoxelCoord {
        VoxelCoord::new(self.i + o.i, self.j + o.j, self.k + o.k)
    }
}

impl std::ops::Sub for VoxelCoord {
    type Output = VoxelCoord;
    fn sub(self, o: VoxelCoord) -> VoxelCoord {
        VoxelCoord::new(self.i - o.i, self.j - o.j, self.k - o.k)
    }
}

/// Voxel size of `level` given the finest voxel size.
pub fn level_voxel_size(finest: f64, level: u8) -> f64 {
    debug_assert!((1..=NUM_LEVELS).contains(&level));
    finest * f64::from(1u32 << (NUM_LEVELS - level))
}

/// Occupancy score and normalized SDF predicted for one voxel.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TsdfVoxel {
    /// Probability that the voxel lies inside the truncation band.
    pub o: f32,
    /// SDF divided by the truncation distance, in [-1, 1].
    pub x: f32,
}

impl TsdfVoxel {
    pub fn new(o: f32, x: f32) -> Self {
        Self {
            o: o.clamp(0.0, 1.0),
            x: x.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseVoxelGrid<P> {
    level: u8,
    voxel_size: f64,
    origin: Vector3<f64>,
    cells: CellMap<P>,
}

impl<P> SparseVoxelGrid<P> {
    pub fn new(level: u8, voxel_size: f64, origin: Vector3<f64>) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        Self {
            level,
            voxel_size,
            origin,
            cells: CellMap::default(),
        }
    }

    /// Empty grid with the same lattice as `self`.
    pub fn empty_like<Q>(&self) -> SparseVoxelGrid<Q> {
        SparseVoxelGrid::new(self.level, self.voxel_size, self.origin)
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, c: &VoxelCoord) -> Option<&P> {
        self.cells.get(c)
    }

    pub fn get_mut(&mut self, c: &VoxelCoord) -> Option<&mut P> {
        self.cells.get_mut(c)
    }

    pub fn contains(&self, c: &VoxelCoord) -> bool {
        self.cells.contains_key(c)
    }

    pub fn insert(&mut self, c: VoxelCoord, p: P) -> Option<P> {
        self.cells.insert(c, p)
    }

    pub fn entry(&mut self, c: VoxelCoord) -> indexmap::map::Entry<'_, VoxelCoord, P> {
        self.cells.entry(c)
    }

    pub fn remove(&mut self, c: &VoxelCoord) -> Option<P> {
        self.cells.swap_remove(c)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&VoxelCoord, &P) -> bool) {
        self.cells.retain(|c, p| keep(c, p));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelCoord, &P)> {
        self.cells.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&VoxelCoord, &mut P)> {
        self.cells.iter_mut()
    }

    pub fn coords(&self) -> impl Iterator<Item = &VoxelCoord> {
        self.cells.keys()
    }

    pub fn values(&self) -> impl Iterator<Item = &P> {
        self.cells.values()
    }

    /// Coordinates in ascending lexicographic order.
    pub fn sorted_coords(&self) -> Vec<VoxelCoord> {
        let mut v: Vec<_> = self.cells.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn cells(&self) -> &CellMap<P> {
        &self.cells
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&VoxelCoord, &P) -> Q) -> SparseVoxelGrid<Q> {
        let mut out = self.empty_like();
        out.cells.reserve(self.len());
        for (c, p) in self.iter() {
            out.cells.insert(*c, f(c, p));
        }
        out
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, c: VoxelCoord) -> Point3<f64> {
        let vs = self.voxel_size;
        Point3::new(
            self.origin.x + (f64::from(c.i) + 0.5) * vs,
            self.origin.y + (f64::from(c.j) + 0.5) * vs,
            self.origin.z + (f64::from(c.k) + 0.5) * vs,
        )
    }

    /// Voxel whose cube contains world point `p`.
    pub fn voxel_at(&self, p: &Point3<f64>) -> VoxelCoord {
        let rel = (p.coords - self.origin) / self.voxel_size;
        VoxelCoord::new(
            rel.x.floor() as i32,
            rel.y.floor() as i32,
            rel.z.floor() as i32,
        )
    }

    /// Integer offset `o` such that coordinate `c` in `other` is coordinate
    /// `c + o` in `self`. Fails when the lattices do not coincide.
    pub fn lattice_offset<Q>(&self, other: &SparseVoxelGrid<Q>) -> Result<VoxelCoord> {
        let rel = (self.voxel_size - other.voxel_size).abs() / self.voxel_size;
        if rel > 1e-9 {
            return Err(Error::LatticeMisaligned(format!(
                "voxel sizes {} and {} differ",
                self.voxel_size, other.voxel_size
            )));
        }
        lattice_steps(other.origin - self.origin, self.voxel_size)
    }
}

impl<P> Extend<(VoxelCoord, P)> for SparseVoxelGrid<P> {
    fn extend<I: IntoIterator<Item = (VoxelCoord, P)>>(&mut self, iter: I) {
        self.cells.extend(iter);
    }
}

/// Expresses a world-space displacement as a whole number of voxels.
pub(crate) fn lattice_steps(delta: Vector3<f64>, voxel_size: f64) -> Result<VoxelCoord> {
    let mut out = [0i32; 3];
    for a in 0..3 {
        let steps = delta[a] / voxel_size;
        let r = steps.round();
        if (steps - r).abs() > 1e-6 {
            return Err(Error::LatticeMisaligned(format!(
                "origin offset {:.9} m is not a multiple of voxel size {} m",
                delta[a], voxel_size
            )));
        }
        out[a] = r as i32;
    }
    Ok(VoxelCoord::new(out[0], out[1], out[2]))
}

/// Keeps the voxels whose occupancy is at least `theta`.
pub fn sparsify(grid: &SparseVoxelGrid<TsdfVoxel>, theta: f32) -> SparseVoxelGrid<TsdfVoxel> {
    debug_assert!(theta > 0.0 && theta < 1.0);
    let mut out = grid.empty_like();
    out.extend(grid.iter().filter(|(_, v)| v.o >= theta).map(|(c, v)| (*c, *v)));
    out
}

/// Nearest-neighbor 2× upsampling: every voxel spawns its eight children.
pub fn upsample2x<P: Clone>(grid: &SparseVoxelGrid<P>) -> Result<SparseVoxelGrid<P>> {
    if grid.level >= NUM_LEVELS {
        return Err(Error::FinestLevel);
    }
    let mut out = SparseVoxelGrid::new(grid.level + 1, grid.voxel_size * 0.5, grid.origin);
    out.cells.reserve(grid.len() * 8);
    for (c, p) in grid.iter() {
        for child in c.children() {
            out.cells.insert(child, p.clone());
        }
    }
    Ok(out)
}

/// Copies the voxels whose centers fall inside `fbv` into a grid anchored at
/// the volume's min corner.
pub fn extract_region<P: Clone>(global: &SparseVoxelGrid<P>, fbv: &Fbv) -> Result<SparseVoxelGrid<P>> {
    let mut local = SparseVoxelGrid::new(global.level, global.voxel_size, fbv.min_corner);
    let offset = local.lattice_offset(global)?;
    let n = fbv.cells_per_side(global.voxel_size);
    let inside = |c: VoxelCoord| {
        (0..n).contains(&c.i) && (0..n).contains(&c.j) && (0..n).contains(&c.k)
    };
    for (c, p) in global.iter() {
        let lc = *c + offset;
        if inside(lc) {
            local.cells.insert(lc, p.clone());
        }
    }
    Ok(local)
}

/// Writes every voxel of `local` into `global`, overwriting existing values.
pub fn replace_region<P: Clone>(global: &mut SparseVoxelGrid<P>, local: &SparseVoxelGrid<P>) -> Result<()> {
    let offset = global.lattice_offset(local)?;
    for (c, p) in local.iter() {
        global.cells.insert(*c + offset, p.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tsdf_grid(os: &[f32]) -> SparseVoxelGrid<TsdfVoxel> {
        let mut g = SparseVoxelGrid::new(1, 0.16, Vector3::zeros());
        for (n, &o) in os.iter().enumerate() {
            g.insert(VoxelCoord::new(n as i32, 0, 0), TsdfVoxel::new(o, 0.0));
        }
        g
    }

    #[test]
    fn level_sizes() {
        assert_eq!(level_voxel_size(0.04, 3), 0.04);
        assert_eq!(level_voxel_size(0.04, 2), 0.08);
        assert_eq!(level_voxel_size(0.04, 1), 0.16);
    }

    #[test]
    fn sparsify_keeps_equal_threshold() {
        let g = sparsify(&tsdf_grid(&[0.7, 0.4, 0.5]), 0.5);
        let mut kept: Vec<f32> = g.values().map(|v| v.o).collect();
        kept.sort_by(f32::total_cmp);
        assert_eq!(kept, vec![0.5, 0.7]);
        assert_eq!(sparsify(&tsdf_grid(&[1.0; 4]), 0.5).len(), 4);
        assert!(sparsify(&tsdf_grid(&[0.0; 4]), 0.5).is_empty());
    }

    #[test]
    fn upsample_single_cell() {
        let mut g = SparseVoxelGrid::new(1, 0.16, Vector3::zeros());
        g.insert(VoxelCoord::new(1, 0, 0), 7u8);
        let up = upsample2x(&g).unwrap();
        assert_eq!(up.level(), 2);
        assert_eq!(up.voxel_size(), 0.08);
        let mut got = up.sorted_coords();
        got.sort();
        let mut want = vec![];
        for i in 2..4 {
            for j in 0..2 {
                for k in 0..2 {
                    want.push(VoxelCoord::new(i, j, k));
                }
            }
        }
        assert_eq!(got, want);
        assert!(up.values().all(|&v| v == 7));
    }

    #[test]
    fn upsample_children_share_parent_center() {
        let mut g = SparseVoxelGrid::new(2, 0.08, Vector3::new(0.32, -0.16, 0.0));
        let c = VoxelCoord::new(-3, 5, 2);
        g.insert(c, ());
        let up = upsample2x(&g).unwrap();
        let parent = g.voxel_center(c);
        let mean = up
            .coords()
            .map(|cc| up.voxel_center(*cc).coords)
            .fold(Vector3::zeros(), |a, b| a + b)
            / 8.0;
        assert!((mean - parent.coords).norm() < 1e-12);
        assert!(up.coords().all(|cc| cc.parent() == c));
    }

    #[test]
    fn upsample_rejects_finest_and_keeps_empty() {
        let g: SparseVoxelGrid<()> = SparseVoxelGrid::new(3, 0.04, Vector3::zeros());
        assert!(matches!(upsample2x(&g), Err(Error::FinestLevel)));
        let e: SparseVoxelGrid<()> = SparseVoxelGrid::new(1, 0.16, Vector3::zeros());
        assert!(upsample2x(&e).unwrap().is_empty());
    }

    #[test]
    fn extract_and_replace() {
        let mut global = SparseVoxelGrid::new(1, 0.16, Vector3::zeros());
        global.insert(VoxelCoord::new(0, 0, 0), 1);
        global.insert(VoxelCoord::new(2, 0, 0), 2);
        global.insert(VoxelCoord::new(9, 0, 0), 3);
        let fbv = Fbv {
            min_corner: Vector3::zeros(),
            side_length: 0.48,
        };
        let local = extract_region(&global, &fbv).unwrap();
        assert_eq!(local.len(), 2);

        let far = Fbv {
            min_corner: Vector3::new(16.0, 16.0, 16.0),
            side_length: 0.48,
        };
        assert!(extract_region(&global, &far).unwrap().is_empty());

        let all = Fbv {
            min_corner: Vector3::new(-0.32, -0.32, -0.32),
            side_length: 3.2,
        };
        let shifted = extract_region(&global, &all).unwrap();
        assert_eq!(shifted.len(), 3);
        assert_eq!(shifted.get(&VoxelCoord::new(11, 2, 2)), Some(&3));

        let mut empty = global.empty_like();
        replace_region(&mut empty, &local).unwrap();
        assert_eq!(empty.len(), 2);
        replace_region(&mut empty, &local).unwrap();
        assert_eq!(empty.len(), 2);
    }

    #[test]
    fn replace_overwrites_and_checks_alignment() {
        let mut global = SparseVoxelGrid::new(3, 0.04, Vector3::zeros());
        global.insert(VoxelCoord::new(1, 1, 1), 0.2f32);
        global.insert(VoxelCoord::new(5, 5, 5), 0.9f32);
        let mut local = SparseVoxelGrid::new(3, 0.04, Vector3::new(0.04, 0.04, 0.04));
        local.insert(VoxelCoord::new(0, 0, 0), -0.1f32);
        replace_region(&mut global, &local).unwrap();
        assert_eq!(global.get(&VoxelCoord::new(1, 1, 1)), Some(&-0.1));
        assert_eq!(global.get(&VoxelCoord::new(5, 5, 5)), Some(&0.9));

        let skewed = SparseVoxelGrid::<f32>::new(3, 0.04, Vector3::new(0.01, 0.0, 0.0));
        assert!(matches!(
            replace_region(&mut global, &skewed),
            Err(Error::LatticeMisaligned(_))
        ));
    }

    fn coord() -> impl Strategy<Value = VoxelCoord> {
        (-20i32..20, -20i32..20, -20i32..20).prop_map(|(i, j, k)| VoxelCoord::new(i, j, k))
    }

    proptest! {
        #[test]
        fn sparsify_idempotent(os in proptest::collection::vec(0.0f32..=1.0, 0..40), theta in 0.05f32..0.95) {
            let g = tsdf_grid(&os);
            let once = sparsify(&g, theta);
            let twice = sparsify(&once, theta);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn upsample_count_and_children(cs in proptest::collection::hash_set(coord(), 0..30)) {
            let mut g = SparseVoxelGrid::new(1, 0.16, Vector3::zeros());
            for c in &cs { g.insert(*c, ()); }
            let up = upsample2x(&g).unwrap();
            prop_assert_eq!(up.len(), 8 * g.len());
            for c in up.coords() {
                prop_assert!(g.contains(&c.parent()));
            }
        }

        #[test]
        fn extract_replace_extract_identity(
            cs in proptest::collection::hash_set(coord(), 0..40),
            oi in -5i32..5, oj in -5i32..5, ok in -5i32..5,
        ) {
            let mut g = SparseVoxelGrid::new(2, 0.08, Vector3::zeros());
            for (n, c) in cs.iter().enumerate() { g.insert(*c, n); }
            let fbv = Fbv {
                min_corner: Vector3::new(f64::from(oi), f64::from(oj), f64::from(ok)) * 0.16,
                side_length: 0.16 * 10.0,
            };
            let local = extract_region(&g, &fbv).unwrap();
            let mut fresh = g.empty_like();
            replace_region(&mut fresh, &local).unwrap();
            let again = extract_region(&fresh, &fbv).unwrap();
            prop_assert_eq!(local.len(), again.len());
            for (c, p) in local.iter() {
                prop_assert_eq!(again.get(c), Some(p));
            }
        }

        #[test]
        fn world_round_trip(i in -(1i32 << 20)..(1 << 20), j in -(1i32 << 20)..(1 << 20), k in -(1i32 << 20)..(1 << 20)) {
            let g: SparseVoxelGrid<()> = SparseVoxelGrid::new(3, 0.04, Vector3::new(-1.28, 0.64, 2.0));
            let c = VoxelCoord::new(i, j, k);
            prop_assert_eq!(g.voxel_at(&g.voxel_center(c)), c);
        }
    }
}
