//! Mesh and depth-map quality metrics.

use std::io::Write;
use std::path::Path;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::camera::Frame;
use crate::error::{Error, MeshSide, Result};
use crate::meshing::{render_depth, triangle_area, TriangleMesh};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics3D {
    pub acc: f64,
    pub comp: f64,
    pub prec: f64,
    pub recall: f64,
    pub fscore: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eval3dParams {
    pub tau: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for Eval3dParams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            n_samples: 200_000,
            seed: 0,
        }
    }
}

pub fn fscore(prec: f64, recall: f64) -> f64 {
    if prec + recall > 0.0 {
        2.0 * prec * recall / (prec + recall)
    } else {
        0.0
    }
}

/// `n` points drawn uniformly by area.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += triangle_area(&mesh.triangle(t));
        cdf.push(total);
    }
    if total <= 0.0 {
        // Zero-area meshes fall back to their vertices.
        return (0..mesh.vertices.len().min(n)).map(|i| mesh.vertex(i as u32)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let t = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            Point3::from(a.coords * (1.0 - su) + b.coords * (su * (1.0 - v)) + c.coords * (su * v))
        })
        .collect()
}

/// Exact nearest-neighbor distances through a uniform hash grid searched in
/// growing Chebyshev shells.
pub struct PointIndex {
    cell: f64,
    cells: FxHashMap<[i64; 3], Vec<Point3<f64>>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl PointIndex {
    pub fn new(points: &[Point3<f64>], cell: f64) -> Self {
        let mut cells: FxHashMap<[i64; 3], Vec<Point3<f64>>> = FxHashMap::default();
        let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
        for p in points {
            let k = Self::key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(*p);
        }
        Self { cell, cells, lo, hi }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / cell).floor() as i64)
    }

    /// Distance to the closest indexed point, infinite when empty.
    pub fn nearest(&self, q: &Point3<f64>) -> f64 {
        if self.cells.is_empty() {
            return f64::INFINITY;
        }
        let k = Self::key(q, self.cell);
        // Beyond this shell every cell lies outside the occupied box.
        let max_r = (0..3).map(|a| (k[a] - self.lo[a]).abs().max((self.hi[a] - k[a]).abs())).max().unwrap_or(0);
        let mut best2 = f64::INFINITY;
        for r in 0..=max_r {
            self.visit_shell(k, r, |pts| {
                for p in pts {
                    best2 = best2.min((p - q).norm_squared());
                }
            });
            let reach = r as f64 * self.cell;
            if best2 <= reach * reach {
                break;
            }
        }
        best2.sqrt()
    }

    fn visit_shell(&self, k: [i64; 3], r: i64, mut f: impl FnMut(&[Point3<f64>])) {
        let mut cell = |i: i64, j: i64, l: i64| {
            let key = [k[0] + i, k[1] + j, k[2] + l];
            if (0..3).any(|a| key[a] < self.lo[a] || key[a] > self.hi[a]) {
                return;
            }
            if let Some(p) = self.cells.get(&key) {
                f(p);
            }
        };
        if r == 0 {
            cell(0, 0, 0);
            return;
        }
        for i in -r..=r {
            for j in -r..=r {
                if i.abs() == r || j.abs() == r {
                    for l in -r..=r {
                        cell(i, j, l);
                    }
                } else {
                    cell(i, j, -r);
                    cell(i, j, r);
                }
            }
        }
    }
}

/// Accuracy, completeness, precision, recall and F-score between two meshes
/// from area-uniform surface samples.
pub fn eval_3d(pred: &TriangleMesh, gt: &TriangleMesh, params: &Eval3dParams) -> Result<Metrics3D> {
    if pred.is_empty() {
        return Err(Error::EmptyMesh(MeshSide::Predicted));
    }
    if gt.is_empty() {
        return Err(Error::EmptyMesh(MeshSide::GroundTruth));
    }
    let ps = sample_surface(pred, params.n_samples, params.seed);
    let gs = sample_surface(gt, params.n_samples, params.seed);
    Ok(metrics_from_samples(&ps, &gs, params.tau))
}

pub fn metrics_from_samples(pred: &[Point3<f64>], gt: &[Point3<f64>], tau: f64) -> Metrics3D {
    let cell = tau.max(1e-3);
    let (pi, gi) = (PointIndex::new(pred, cell), PointIndex::new(gt, cell));
    let d_pred: Vec<f64> = pred.par_iter().map(|p| gi.nearest(p)).collect();
    let d_gt: Vec<f64> = gt.par_iter().map(|p| pi.nearest(p)).collect();
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len().max(1) as f64;
    let within = |d: &[f64]| d.iter().filter(|&&x| x < tau).count() as f64 / d.len().max(1) as f64;
    let (prec, recall) = (within(&d_pred), within(&d_gt));
    Metrics3D {
        acc: mean(&d_pred),
        comp: mean(&d_gt),
        prec,
        recall,
        fscore: fscore(prec, recall),
        tau,
    }
}

/// Triangles whose centroid is seen by some frame: it projects into the image
/// in front of the camera and within `tol` of that frame's depth.
pub fn crop_to_observed(mesh: &TriangleMesh, frames: &[Frame], tol: f64) -> TriangleMesh {
    let visible = |p: &Point3<f64>| {
        frames.iter().any(|f| {
            let Some(depth) = &f.depth else { return false };
            let pc = f.pose.to_camera(p);
            if pc.z <= 0.0 {
                return false;
            }
            let (u, v) = f.intrinsics.project(&pc);
            if !f.intrinsics.in_image(u, v) {
                return false;
            }
            let (x, y) = (
                (u.round().max(0.0) as usize).min(depth.width() - 1),
                (v.round().max(0.0) as usize).min(depth.height() - 1),
            );
            let d = f64::from(depth.at(x, y, 0));
            d > 0.0 && (d - pc.z).abs() < tol
        })
    };
    let keep: Vec<bool> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let [a, b, c] = mesh.triangle(t);
            visible(&Point3::from((a.coords + b.coords + c.coords) / 3.0))
        })
        .collect();
    let kept = TriangleMesh {
        vertices: mesh.vertices.clone(),
        triangles: mesh.triangles.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| *t).collect(),
        normals: mesh.normals.clone(),
    };
    // Re-indexes and drops vertices no longer referenced.
    kept.filter_vertices(|_| true)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics2D {
    pub abs_rel: f64,
    pub abs_diff: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub sc_inv: f64,
    pub delta_125: f64,
    pub comp: f64,
}

pub const MIN_DEPTH: f64 = 1e-3;

/// Depth-map errors over pixels where both maps are valid; `comp` is the
/// share of valid ground-truth pixels that the prediction covers.
pub fn eval_2d(pred: &Raster, gt: &Raster, min_depth: f64) -> Result<Metrics2D> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "pred {}×{} vs gt {}×{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut n_gt, mut n) = (0usize, 0usize);
    let mut s = [0f64; 8];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (f64::from(p), f64::from(g));
        if g <= min_depth {
            continue;
        }
        n_gt += 1;
        if p <= 0.0 {
            continue;
        }
        n += 1;
        let e = p - g;
        let d = p.ln() - g.ln();
        s[0] += e.abs() / g;
        s[1] += e.abs();
        s[2] += e * e / g;
        s[3] += e * e;
        s[4] += d * d;
        s[5] += d;
        s[6] += f64::from(u8::from((p / g).max(g / p) < 1.25));
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let m = s.map(|x| x / n as f64);
    Ok(Metrics2D {
        abs_rel: m[0],
        abs_diff: m[1],
        sq_rel: m[2],
        rmse: m[3].sqrt(),
        rmse_log: m[4].sqrt(),
        sc_inv: (m[4] - m[5] * m[5]).max(0.0).sqrt(),
        delta_125: m[6],
        comp: n as f64 / n_gt as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub metrics: Metrics2D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub metrics_3d: Metrics3D,
    /// Mean over evaluated frames that overlap the ground truth.
    pub metrics_2d: Option<Metrics2D>,
    pub frames: Vec<FrameMetrics>,
    /// Evaluated frames whose rendering covers no valid ground-truth pixel.
    pub frames_without_overlap: Vec<usize>,
    pub interval: usize,
}

/// Positions `0, interval, 2·interval, …` of a sequence of length `len`;
/// always at least the first.
pub fn sample_positions(len: usize, interval: usize) -> Vec<usize> {
    (0..len.max(1)).step_by(interval.max(1)).take_while(|&i| i < len || i == 0).collect()
}

pub fn mean_metrics(ms: &[Metrics2D]) -> Option<Metrics2D> {
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    let sum = |f: fn(&Metrics2D) -> f64| ms.iter().map(f).sum::<f64>() / n;
    Some(Metrics2D {
        abs_rel: sum(|m| m.abs_rel),
        abs_diff: sum(|m| m.abs_diff),
        sq_rel: sum(|m| m.sq_rel),
        rmse: sum(|m| m.rmse),
        rmse_log: sum(|m| m.rmse_log),
        sc_inv: sum(|m| m.sc_inv),
        delta_125: sum(|m| m.delta_125),
        comp: sum(|m| m.comp),
    })
}

/// Renders `recon` at every `interval`-th frame and compares against that
/// frame's depth, then scores the meshes in 3-D.
pub fn eval_sequence(recon: &TriangleMesh, gt: &TriangleMesh, frames: &[Frame], interval: usize, params: &Eval3dParams) -> Result<SequenceReport> {
    let metrics_3d = eval_3d(recon, gt, params)?;
    let mut out = Vec::new();
    let mut without = Vec::new();
    for pos in sample_positions(frames.len(), interval) {
        let Some(f) = frames.get(pos) else { continue };
        let Some(gt_depth) = &f.depth else { continue };
        let rendered = render_depth(recon, &f.pose, &f.intrinsics);
        match eval_2d(&rendered, gt_depth, MIN_DEPTH) {
            Ok(m) => out.push(FrameMetrics { index: f.index, metrics: m }),
            Err(Error::NoValidPixels) => without.push(f.index),
            Err(e) => return Err(e),
        }
    }
    let metrics_2d = mean_metrics(&out.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(SequenceReport {
        metrics_3d,
        metrics_2d,
        frames: out,
        frames_without_overlap: without,
        interval,
    })
}

/// Per-frame 2-D metrics as CSV rows.
pub fn write_frames_csv<W: Write>(frames: &[FrameMetrics], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    csv.write_record(["index", "abs_rel", "abs_diff", "sq_rel", "rmse", "rmse_log", "sc_inv", "delta_125", "comp"])
        .map_err(err)?;
    for f in frames {
        let m = &f.metrics;
        let row = [m.abs_rel, m.abs_diff, m.sq_rel, m.rmse, m.rmse_log, m.sc_inv, m.delta_125, m.comp];
        let mut rec = vec![f.index.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        csv.write_record(&rec).map_err(err)?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn save_frames_csv(frames: &[FrameMetrics], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_frames_csv(frames, f)
}
