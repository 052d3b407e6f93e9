use rayon::prelude::*;

use super::TriangleMesh;
use crate::camera::{Intrinsics, Pose};
use crate::raster::Raster;

/// Triangles with a vertex closer than this are dropped.
const NEAR: f64 = 1e-3;

struct Projected {
    uv: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area: f64,
    min: [f64; 2],
    max: [f64; 2],
}

/// Z-buffer rasterization of `mesh` seen from `pose`. Depth is camera-frame z,
/// interpolated perspective-correctly at pixel centers; 0 marks no hit.
pub fn render_depth(mesh: &TriangleMesh, pose: &Pose, k: &Intrinsics) -> Raster {
    let (w, h) = (k.width as usize, k.height as usize);
    let cam: Vec<_> = (0..mesh.vertices.len()).map(|i| pose.to_camera(&mesh.vertex(i as u32))).collect();
    let tris: Vec<Projected> = mesh
        .triangles
        .iter()
        .filter_map(|t| {
            let p = t.map(|i| cam[i as usize]);
            if p.iter().any(|v| v.z <= NEAR) {
                return None;
            }
            let uv = p.map(|v| {
                let (u, v) = k.project(&v);
                [u, v]
            });
            let area = edge(&uv[0], &uv[1], &uv[2]);
            if area.abs() < 1e-12 {
                return None;
            }
            let min = [0, 1].map(|a| uv.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min));
            let max = [0, 1].map(|a| uv.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max));
            if max[0] < 0.0 || max[1] < 0.0 || min[0] > (w - 1) as f64 || min[1] > (h - 1) as f64 {
                return None;
            }
            Some(Projected {
                uv,
                inv_z: p.map(|v| 1.0 / v.z),
                area,
                min,
                max,
            })
        })
        .collect();

    let mut depth = vec![0f32; w * h];
    depth.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let yf = y as f64;
        let mut best = vec![f64::INFINITY; w];
        for t in tris.iter().filter(|t| t.min[1] <= yf && t.max[1] >= yf) {
            let x0 = t.min[0].ceil().max(0.0) as usize;
            let x1 = t.max[0].floor().min((w - 1) as f64);
            if x1 < 0.0 {
                continue;
            }
            for x in x0..=x1 as usize {
                let q = [x as f64, yf];
                let b0 = edge(&t.uv[1], &t.uv[2], &q) / t.area;
                let b1 = edge(&t.uv[2], &t.uv[0], &q) / t.area;
                let b2 = 1.0 - b0 - b1;
                let eps = -1e-9;
                if b0 < eps || b1 < eps || b2 < eps {
                    continue;
                }
                let z = 1.0 / (b0 * t.inv_z[0] + b1 * t.inv_z[1] + b2 * t.inv_z[2]);
                if z < best[x] {
                    best[x] = z;
                }
            }
        }
        for (out, b) in row.iter_mut().zip(best) {
            if b.is_finite() {
                *out = b as f32;
            }
        }
    });
    Raster::from_vec(w, h, 1, depth)
}

#[inline]
fn edge(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshing::{marching_cubes, McParams};
    use crate::voxgrid::{SparseVoxelGrid, TsdfVoxel, VoxelCoord};
    use nalgebra::Vector3;

    fn cam() -> Intrinsics {
        Intrinsics::from_fov(64, 48, 60.0)
    }

    #[test]
    fn quad_at_two_meters() {
        let mesh = TriangleMesh {
            vertices: vec![[-5.0, -5.0, 2.0], [5.0, -5.0, 2.0], [5.0, 5.0, 2.0], [-5.0, 5.0, 2.0]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        };
        let d = render_depth(&mesh, &Pose::identity(), &cam());
        assert!(d.data().iter().all(|&z| (z - 2.0).abs() < 1e-6));
    }

    #[test]
    fn empty_mesh_renders_zero() {
        let d = render_depth(&TriangleMesh::default(), &Pose::identity(), &cam());
        assert!(d.data().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn tilted_plane_is_perspective_correct() {
        // Plane z = 2 + 0.5 x spans the view with two large triangles.
        let f = |x: f32, y: f32| [x, y, 2.0 + 0.5 * x];
        let mesh = TriangleMesh {
            vertices: vec![f(-2.0, -2.0), f(2.0, -2.0), f(2.0, 2.0), f(-2.0, 2.0)],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        };
        let k = cam();
        let d = render_depth(&mesh, &Pose::identity(), &k);
        for (x, y) in [(3usize, 5usize), (32, 24), (60, 40)] {
            // Ray (a, b, 1)·z meets the plane at z = 2 / (1 - 0.5 a).
            let a = (x as f64 - k.cx) / k.fx;
            let want = 2.0 / (1.0 - 0.5 * a);
            assert!((f64::from(d.at(x, y, 0)) - want).abs() < 1e-5, "{x},{y}");
        }
    }

    #[test]
    fn nearest_surface_wins() {
        let quad = |z: f32| [[-5.0, -5.0, z], [5.0, -5.0, z], [5.0, 5.0, z], [-5.0, 5.0, z]];
        let mut vertices = quad(3.0).to_vec();
        vertices.extend(quad(1.5));
        let mesh = TriangleMesh {
            vertices,
            triangles: vec![[0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6]],
            normals: None,
        };
        let d = render_depth(&mesh, &Pose::identity(), &cam());
        assert!(d.data().iter().all(|&z| (z - 1.5).abs() < 1e-6));
    }

    #[test]
    fn sphere_center_pixel() {
        let (vs, lambda, r) = (0.04, 0.12, 0.5);
        let center = Vector3::new(0.0, 0.0, 2.0);
        let n = 20;
        let mut g = SparseVoxelGrid::new(3, vs, center - Vector3::repeat(n as f64 * vs));
        for i in 0..2 * n {
            for j in 0..2 * n {
                for k in 0..2 * n {
                    let c = VoxelCoord::new(i, j, k);
                    let d = (g.voxel_center(c).coords - center).norm() - r;
                    if d.abs() < lambda {
                        g.insert(c, TsdfVoxel::new(1.0, (d / lambda) as f32));
                    }
                }
            }
        }
        let mesh = marching_cubes(&g, McParams::default());
        let k = Intrinsics::from_fov(65, 49, 60.0);
        let d = render_depth(&mesh, &Pose::identity(), &k);
        assert!((d.at(32, 24, 0) - 1.5).abs() < 0.02, "{}", d.at(32, 24, 0));
    }
}
