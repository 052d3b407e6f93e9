//! Per-stage timing of sequence reconstruction and a sparse-conv scaling
//! sweep.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{assemble_fragments, Frame};
use crate::error::{Error, Result};
use crate::nnops::{conv_forward, Features, Rulebook, SparseConvWeights};
use crate::pipeline::{reconstruct_fragment, Model, ReconState};
use crate::voxgrid::VoxelCoord;

/// Per-fragment timings in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub encode: f64,
    pub unproject: [f64; 3],
    pub sparse_conv: [f64; 3],
    pub gru: [f64; 3],
    pub head: [f64; 3],
    pub integrate: f64,
    pub meshing: f64,
    /// Wall clock around the whole fragment, measured separately.
    pub total: f64,
    pub key_frames: usize,
}

impl StageTiming {
    pub fn ms_per_keyframe(&self) -> f64 {
        self.total / self.key_frames as f64
    }

    /// Named stages in report order.
    pub fn stages(&self) -> Vec<(String, f64)> {
        let mut v = vec![("encode".to_string(), self.encode)];
        for l in 0..3 {
            v.push((format!("level{}.unproject", l + 1), self.unproject[l]));
            v.push((format!("level{}.sparse_conv", l + 1), self.sparse_conv[l]));
            v.push((format!("level{}.gru", l + 1), self.gru[l]));
            v.push((format!("level{}.head", l + 1), self.head[l]));
        }
        v.push(("integrate".into(), self.integrate));
        v.push(("meshing".into(), self.meshing));
        v
    }

    fn add(&mut self, o: &StageTiming) {
        self.encode += o.encode;
        for l in 0..3 {
            self.unproject[l] += o.unproject[l];
            self.sparse_conv[l] += o.sparse_conv[l];
            self.gru[l] += o.gru[l];
            self.head[l] += o.head[l];
        }
        self.integrate += o.integrate;
        self.meshing += o.meshing;
        self.total += o.total;
        self.key_frames += o.key_frames;
    }
}

/// Median and interquartile range; the range is absent for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub iqr: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn spread(samples: &[f64]) -> Spread {
    assert!(!samples.is_empty(), "spread of no samples");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Spread {
        median: quantile(&s, 0.5),
        iqr: (s.len() > 1).then(|| quantile(&s, 0.75) - quantile(&s, 0.25)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: String,
    pub median_ms: f64,
    pub iqr_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub lattice_side: usize,
    pub occupied: usize,
    pub median_ms: f64,
    pub iqr_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub fragments: usize,
    pub key_frames: usize,
    /// Sequence-wide stage sums, summarized over repeats.
    pub stages: Vec<StageRow>,
    pub total: Spread,
    /// Median total divided by the key-frame count.
    pub ms_per_keyframe: f64,
    /// Per-fragment timings of the repeat with the median total.
    pub per_fragment: Vec<StageTiming>,
    pub sweep: Vec<SweepPoint>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Reconstructs the sequence once, meshing after every fragment.
pub fn time_sequence(frames: &[Frame], model: &Model) -> Result<Vec<StageTiming>> {
    let mut state = ReconState::new(model.config.voxel_size);
    let mut out = Vec::new();
    for frag in assemble_fragments(frames.iter().cloned(), model.config.fragment_params()) {
        let t = Instant::now();
        let r = reconstruct_fragment(&frag, &mut state, model)?;
        let tm = Instant::now();
        let mesh = state.extract_mesh(model.config.theta);
        let meshing = ms(tm);
        let total = ms(t);
        std::hint::black_box(mesh);
        let s = r.times;
        out.push(StageTiming {
            encode: s.backbone,
            unproject: s.unproject,
            sparse_conv: s.sparse_conv,
            gru: s.fusion,
            head: s.head,
            integrate: s.integrate,
            meshing,
            total,
            key_frames: frag.frames.len(),
        });
    }
    Ok(out)
}

/// Times `repeats` full passes and summarizes each stage by median and IQR.
pub fn run_benchmark(frames: &[Frame], model: &Model, repeats: usize, sweep: &[usize]) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let runs: Vec<Vec<StageTiming>> = (0..repeats).map(|_| time_sequence(frames, model)).collect::<Result<_>>()?;
    let sums: Vec<StageTiming> = runs
        .iter()
        .map(|r| {
            let mut s = StageTiming::default();
            r.iter().for_each(|t| s.add(t));
            s
        })
        .collect();
    let names: Vec<String> = StageTiming::default().stages().into_iter().map(|(n, _)| n).collect();
    let stages = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let samples: Vec<f64> = sums.iter().map(|s| s.stages()[i].1).collect();
            let sp = spread(&samples);
            StageRow {
                stage: name.clone(),
                median_ms: sp.median,
                iqr_ms: sp.iqr,
            }
        })
        .collect();
    let totals: Vec<f64> = sums.iter().map(|s| s.total).collect();
    let total = spread(&totals);
    let key_frames = sums[0].key_frames;
    // The repeat whose total is closest to the median.
    let rep = (0..repeats)
        .min_by(|&a, &b| (totals[a] - total.median).abs().total_cmp(&(totals[b] - total.median).abs()))
        .expect("non-empty");
    let sweep = if sweep.is_empty() {
        Vec::new()
    } else {
        sparse_conv_sweep(sweep, SWEEP_FRACTION, model.config.geo_channels, repeats.max(3), model.config.seed)?
    };
    Ok(BenchReport {
        repeats,
        fragments: runs[0].len(),
        key_frames,
        stages,
        total,
        ms_per_keyframe: if key_frames == 0 { 0.0 } else { total.median / key_frames as f64 },
        per_fragment: runs[rep].clone(),
        sweep,
    })
}

/// Occupied fraction of the sweep lattices.
pub const SWEEP_FRACTION: f64 = 0.1;

/// Default sweep: occupied-voxel counts doubling from 8k.
pub const DEFAULT_SWEEP: [usize; 4] = [8_000, 16_000, 32_000, 64_000];

/// Times one submanifold conv layer on random sparse volumes. Each point
/// picks the cubic lattice whose size times `fraction` matches the requested
/// occupied count.
pub fn sparse_conv_sweep(occupied: &[usize], fraction: f64, channels: usize, repeats: usize, seed: u64) -> Result<Vec<SweepPoint>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("sweep fraction must lie in (0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = SparseConvWeights::<f32>::random(channels, channels, 1.0, &mut rng);
    occupied
        .iter()
        .map(|&n| {
            let side = ((n as f64 / fraction).cbrt().ceil() as usize).max(1);
            let cells = side.pow(3);
            let n = n.min(cells);
            let coords: Vec<VoxelCoord> = sample(&mut rng, cells, n)
                .into_iter()
                .map(|i| VoxelCoord::new((i % side) as i32, (i / side % side) as i32, (i / (side * side)) as i32))
                .collect();
            let x = Features::from_vec(n, channels, (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect());
            let rb = Rulebook::build(&coords);
            let times: Vec<f64> = (0..repeats)
                .map(|_| {
                    let t = Instant::now();
                    let y = conv_forward(&x, &rb, &w);
                    let e = ms(t);
                    std::hint::black_box(y).map(|_| e)
                })
                .collect::<Result<_>>()?;
            let sp = spread(&times);
            Ok(SweepPoint {
                lattice_side: side,
                occupied: n,
                median_ms: sp.median,
                iqr_ms: sp.iqr,
            })
        })
        .collect()
}

pub fn write_stage_csv<W: Write>(report: &BenchReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    wr.write_record(["stage", "median_ms", "iqr_ms"]).map_err(err)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for row in &report.stages {
        wr.write_record([row.stage.clone(), format!("{:.4}", row.median_ms), fmt(row.iqr_ms)])
            .map_err(err)?;
    }
    wr.write_record(["total".to_string(), format!("{:.4}", report.total.median), fmt(report.total.iqr)])
        .map_err(err)?;
    wr.write_record(["ms_per_keyframe".to_string(), format!("{:.4}", report.ms_per_keyframe), String::new()])
        .map_err(err)?;
    wr.flush().map_err(|e| Error::Config(format!("csv: {e}")))
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    wr.write_record(["lattice_side", "occupied", "median_ms", "iqr_ms"]).map_err(err)?;
    for p in points {
        wr.write_record([
            p.lattice_side.to_string(),
            p.occupied.to_string(),
            format!("{:.4}", p.median_ms),
            p.iqr_ms.map(|x| format!("{x:.4}")).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Writes `bench.json`, `bench_stages.csv` and, with a sweep, `bench_sweep.csv`.
pub fn save_report(report: &BenchReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let json = dir.join("bench.json");
    std::fs::write(&json, serde_json::to_string_pretty(report).expect("report serializes")).map_err(|e| Error::io(&json, e))?;
    written.push(json);
    let stages = dir.join("bench_stages.csv");
    let f = std::fs::File::create(&stages).map_err(|e| Error::io(&stages, e))?;
    write_stage_csv(report, f)?;
    written.push(stages);
    if !report.sweep.is_empty() {
        let sweep = dir.join("bench_sweep.csv");
        let f = std::fs::File::create(&sweep).map_err(|e| Error::io(&sweep, e))?;
        write_sweep_csv(&report.sweep, f)?;
        written.push(sweep);
    }
    Ok(written)
}
