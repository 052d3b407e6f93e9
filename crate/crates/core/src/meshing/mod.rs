//! Marching cubes over sparse voxel grids, mesh files and depth rendering.

mod io;
mod render;
mod table;

use nalgebra::{Point3, Vector3};
use rustc_hash::FxHashMap;

use crate::voxgrid::{SparseVoxelGrid, TsdfVoxel, VoxelCoord};

pub use io::{read_mesh, write_mesh, MeshFormat};
pub use render::render_depth;

/// Triangle soup with shared vertices, in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertex(&self, i: u32) -> Point3<f64> {
        let v = self.vertices[i as usize];
        Point3::new(f64::from(v[0]), f64::from(v[1]), f64::from(v[2]))
    }

    /// Corner positions of triangle `t`.
    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertex(a), self.vertex(b), self.vertex(c)]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| triangle_area(&self.triangle(t))).sum()
    }

    /// Area-weighted vertex normals; isolated vertices get `+z`.
    pub fn compute_normals(&mut self) {
        let mut acc = vec![Vector3::<f64>::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let n = (b - a).cross(&(c - a));
            for &i in &self.triangles[t] {
                acc[i as usize] += n;
            }
        }
        self.normals = Some(
            acc.into_iter()
                .map(|n| {
                    let n = n.try_normalize(1e-20).unwrap_or_else(Vector3::z);
                    [n.x as f32, n.y as f32, n.z as f32]
                })
                .collect(),
        );
    }

    /// Keeps triangles whose three vertices satisfy `keep`; drops unused
    /// vertices.
    pub fn filter_vertices(&self, keep: impl Fn(&Point3<f64>) -> bool) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = TriangleMesh::default();
        let normals = self.normals.as_ref();
        let mut out_normals = Vec::new();
        for tri in &self.triangles {
            if !tri.iter().all(|&i| keep(&self.vertex(i))) {
                continue;
            }
            let mapped = tri.map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = out.vertices.len() as u32;
                    out.vertices.push(self.vertices[i as usize]);
                    if let Some(n) = normals {
                        out_normals.push(n[i as usize]);
                    }
                }
                *slot
            });
            out.triangles.push(mapped);
        }
        if normals.is_some() {
            out.normals = Some(out_normals);
        }
        out
    }

    /// Every index is in range and every vertex finite.
    pub fn validate(&self) -> crate::Result<()> {
        let n = self.vertices.len();
        for t in &self.triangles {
            for &i in t {
                if i as usize >= n {
                    return Err(crate::Error::IndexOutOfRange {
                        index: i as usize,
                        count: n,
                    });
                }
            }
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(crate::Error::MeshFormat("non-finite vertex".into()));
        }
        Ok(())
    }
}

pub fn triangle_area(t: &[Point3<f64>; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// Value used for iso-surface extraction, or `None` when the voxel should
/// count as missing.
pub trait IsoSample {
    fn iso_value(&self, theta: f32) -> Option<f32>;
}

impl IsoSample for TsdfVoxel {
    fn iso_value(&self, theta: f32) -> Option<f32> {
        (self.o >= theta).then_some(self.x)
    }
}

impl IsoSample for f32 {
    fn iso_value(&self, _: f32) -> Option<f32> {
        Some(*self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McParams {
    pub iso: f32,
    /// Occupancy below which TSDF voxels are ignored.
    pub theta: f32,
}

impl Default for McParams {
    fn default() -> Self {
        Self { iso: 0.0, theta: 0.5 }
    }
}

/// Offset of cube corner `n` (bit 0 → i, bit 1 → j, bit 2 → k).
#[inline]
fn corner_offset(n: usize) -> VoxelCoord {
    VoxelCoord::new((n & 1) as i32, ((n >> 1) & 1) as i32, ((n >> 2) & 1) as i32)
}

/// Extracts the `iso` level set. Each cube joins eight neighboring voxel
/// centers and is skipped unless all eight are present; triangles face the
/// side where values exceed `iso`.
pub fn marching_cubes<P: IsoSample>(grid: &SparseVoxelGrid<P>, params: McParams) -> TriangleMesh {
    let table = table::cases();
    let edges = table::edges();
    let mut mesh = TriangleMesh::default();
    // (lower corner, axis) → vertex index
    let mut edge_vertex: FxHashMap<(VoxelCoord, u8), u32> = FxHashMap::default();
    let value = |c: VoxelCoord| grid.get(&c).and_then(|p| p.iso_value(params.theta));

    for base in grid.sorted_coords() {
        let mut vals = [0f32; 8];
        let mut complete = true;
        for (n, v) in vals.iter_mut().enumerate() {
            match value(base + corner_offset(n)) {
                Some(x) => *v = x,
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        let case = vals
            .iter()
            .enumerate()
            .fold(0usize, |acc, (n, &v)| acc | (usize::from(v < params.iso) << n));
        let tris = &table[case];
        if tris.is_empty() {
            continue;
        }
        let mut vertex_of = |e: u8| -> u32 {
            let (a, b, axis) = edges[e as usize];
            let key = (base + corner_offset(a), axis);
            *edge_vertex.entry(key).or_insert_with(|| {
                let (va, vb) = (f64::from(vals[a]), f64::from(vals[b]));
                let t = if va == vb { 0.5 } else { (f64::from(params.iso) - va) / (vb - va) };
                let pa = grid.voxel_center(base + corner_offset(a));
                let pb = grid.voxel_center(base + corner_offset(b));
                let p = pa + (pb - pa) * t;
                mesh.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
                (mesh.vertices.len() - 1) as u32
            })
        };
        for tri in tris {
            let idx = tri.map(&mut vertex_of);
            mesh.triangles.push(idx);
        }
    }
    mesh
}

/// TSDF samples of a sphere on a level-3 lattice around `center`, keeping
/// voxels within `lambda` of the surface with full occupancy.
pub fn sphere_tsdf_grid(radius: f64, vs: f64, lambda: f64, center: Vector3<f64>) -> SparseVoxelGrid<TsdfVoxel> {
    let n = ((radius + 2.0 * lambda) / vs).ceil() as i32;
    let origin = Vector3::repeat(-(n as f64) * vs) + center;
    let mut g = SparseVoxelGrid::new(3, vs, origin);
    for i in 0..2 * n {
        for j in 0..2 * n {
            for k in 0..2 * n {
                let c = VoxelCoord::new(i, j, k);
                let d = (g.voxel_center(c).coords - center).norm() - radius;
                if d.abs() < lambda {
                    g.insert(c, TsdfVoxel::new(1.0, (d / lambda) as f32));
                }
            }
        }
    }
    g
}

/// Mean and max of `| ‖v − center‖ − radius |` over the mesh vertices.
pub fn radial_errors(mesh: &TriangleMesh, center: &Vector3<f64>, radius: f64) -> (f64, f64) {
    let errs: Vec<f64> = (0..mesh.vertices.len())
        .map(|i| ((mesh.vertex(i as u32).coords - center).norm() - radius).abs())
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    (mean, errs.iter().cloned().fold(0.0, f64::max))
}
