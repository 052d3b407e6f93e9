//! Command-line front end.

mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::baseline::{fuse_sequence, FusionParams};
use crate::bench::{run_benchmark, save_report, DEFAULT_SWEEP};
use crate::camera::{ingest_sequence, Frame, IngestConfig};
use crate::meshing::{marching_cubes, read_mesh, write_mesh, McParams, MeshFormat, TriangleMesh};
use crate::metrics::{eval_3d, eval_sequence, save_frames_csv, Eval3dParams};
use crate::nnops::{load_weights, save_weights};
use crate::pipeline::{
    prepare_fragment, reconstruct_sequence, train_toy, FusionArea, FusionConfig, FusionMethod, Model, TrainOptions,
};
use crate::synth::{
    gt_mesh, render_frames, scripted_trajectory, write_dataset, SceneSpec, TrajectoryKind, DEPTH_DIR, DEPTH_SCALE,
    INTRINSICS_FILE, SCENE_FILE, TRAJECTORY_FILE,
};

pub use selftest::{run_selftest, SelftestCheck};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "voxfuse", version, about = "Incremental sparse volumetric reconstruction")]
pub struct Cli {
    /// Fusion config file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step [default: 0, or the scene seed for synth].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset from a scene description.
    Synth(SynthArgs),
    /// Run the learned pipeline (or the depth-fusion baseline) on a dataset.
    Reconstruct(ReconstructArgs),
    /// Classical TSDF fusion of the dataset's depth maps.
    FuseDepth(FuseDepthArgs),
    /// Score a mesh against ground truth in 3-D and, with --data, in 2-D.
    Eval(EvalArgs),
    /// Per-stage timing report and sparse-convolution scaling sweep.
    Bench(BenchArgs),
    /// Gradient checks, dense convolution oracle and marching-cubes sphere.
    Selftest(SelftestArgs),
    /// Fit weights to one synthetic dataset (needs its scene.json).
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    /// Overrides the trajectory kind in the scene file.
    #[arg(long, value_enum)]
    pub trajectory: Option<TrajectoryKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Tsdf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Weight file; a model seeded from --seed is used without it.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output mesh (.ply or .obj).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fusion: Option<FusionMethod>,
    #[arg(long)]
    pub area: Option<FusionArea>,
    /// Key frames per fragment.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Only extract the mesh once, after the last fragment.
    #[arg(long)]
    pub no_per_fragment_mesh: bool,
}

#[derive(Debug, Args)]
pub struct FuseDepthArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Dataset for the 2-D depth metrics.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub interval: usize,
    /// F-score threshold in meters.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Report path (JSON); per-frame CSV and manifest go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset to time; the built-in demo room is rendered without it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Occupied-voxel counts for the sparse-convolution sweep.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
    pub sweep_voxels: Vec<usize>,
    /// Output directory for bench.json and the CSV tables.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Accepted for symmetry with other commands and ignored: the checks use
    /// seeded weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output weight file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lr: f32,
    /// Number of leading fragments to fit.
    #[arg(long, default_value_t = 1)]
    pub fragments: usize,
}

/// Record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(mut self, key: &str, path: &Path) -> Self {
        self.inputs.insert(key.into(), path.display().to_string());
        self
    }

    fn output(mut self, key: &str, path: &Path) -> Self {
        self.outputs.insert(key.into(), path.display().to_string());
        self
    }

    fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `dir/stem.suffix` next to `path`, e.g. `mesh.ply` → `mesh.manifest.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn refuse_existing(paths: &[&Path], force: bool) -> anyhow::Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        bail!("refusing to overwrite {} (use --force)", p.display());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))
        }
        _ => Ok(()),
    }
}

/// Frames of a dataset directory laid out as written by `synth`.
pub fn load_dataset(dir: &Path) -> anyhow::Result<Vec<Frame>> {
    if !dir.is_dir() {
        bail!("dataset not found: {}", dir.display());
    }
    let frames = ingest_sequence(
        &dir.join(TRAJECTORY_FILE),
        &dir.join(INTRINSICS_FILE),
        &dir.join(DEPTH_DIR),
        IngestConfig {
            depth_scale: DEPTH_SCALE,
        },
    )?
    .collect::<crate::Result<Vec<_>>>()?;
    Ok(frames)
}

fn load_config(cli: &Cli) -> anyhow::Result<FusionConfig> {
    let mut cfg = match &cli.config {
        Some(p) => FusionConfig::load(p)?,
        None => FusionConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn build_model(cfg: &FusionConfig, weights: Option<&Path>) -> anyhow::Result<Model> {
    Ok(match weights {
        Some(p) => Model::from_weights(cfg, &load_weights(p)?)
            .with_context(|| format!("weights {} do not fit the config", p.display()))?,
        None => Model::seeded(cfg, cfg.seed)?,
    })
}

fn config_value(cfg: &FusionConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

/// Parses arguments, runs the command and maps errors to a nonzero status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Runs one parsed command. `Ok(false)` means the command ran but reported
/// a failed check.
pub fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        // A global pool can only be built once per process; later calls in
        // the same process keep the first setting.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a).map(|_| true),
        Command::Reconstruct(a) => cmd_reconstruct(cli, a).map(|_| true),
        Command::FuseDepth(a) => cmd_fuse_depth(cli, a).map(|_| true),
        Command::Eval(a) => cmd_eval(cli, a).map(|_| true),
        Command::Bench(a) => cmd_bench(cli, a).map(|_| true),
        Command::Selftest(a) => cmd_selftest(cli, a),
        Command::Train(a) => cmd_train(cli, a).map(|_| true),
    }
}

fn emit(cli: &Cli, summary: Value, human: impl FnOnce()) {
    if cli.json {
        println!("{summary}");
    } else {
        human();
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    if !a.spec.is_file() {
        bail!("spec not found: {}", a.spec.display());
    }
    let mut spec = SceneSpec::load(&a.spec)?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(kind) = a.trajectory {
        spec.trajectory.kind = kind;
    }
    if a.frames == 0 {
        bail!("--frames must be at least 1");
    }
    if a.out.exists() {
        let non_empty = std::fs::read_dir(&a.out)
            .with_context(|| format!("reading {}", a.out.display()))?
            .next()
            .is_some();
        if non_empty && !cli.force {
            bail!("output directory {} is not empty (use --force)", a.out.display());
        }
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cfg = load_config(cli)?;
    let poses = scripted_trajectory(&spec, &spec.trajectory, a.frames);
    let frames = render_frames(&spec, &poses, cfg.d_max)?;
    let gt = gt_mesh(&spec, cfg.voxel_size / 2.0);
    write_dataset(&spec, &frames, &gt, &a.out)?;
    let manifest = RunManifest::new("synth", spec.seed, json!({ "frames": a.frames, "d_max": cfg.d_max, "gt_voxel": cfg.voxel_size / 2.0 }))
        .input("spec", &a.spec)
        .output("dataset", &a.out);
    manifest.save(&a.out.join(MANIFEST_FILE))?;
    emit(
        cli,
        json!({ "frames": frames.len(), "gt_triangles": gt.triangles.len(), "out": a.out }),
        || println!("wrote {} frames and a {}-triangle ground-truth mesh to {}", frames.len(), gt.triangles.len(), a.out.display()),
    );
    Ok(())
}

/// Baseline depth fusion: running-average TSDF plus marching cubes.
pub fn fuse_depth(frames: &[Frame], cfg: &FusionConfig) -> TriangleMesh {
    let params = FusionParams {
        lambda: cfg.lambda,
        d_max: cfg.d_max,
        voxel_size: cfg.voxel_size,
        ..FusionParams::default()
    };
    let grid = fuse_sequence(frames, &params);
    marching_cubes(&grid, McParams::default())
}

fn write_baseline(cli: &Cli, data: &Path, out: &Path, command: &str) -> anyhow::Result<()> {
    let manifest_path = sibling(out, "manifest.json");
    refuse_existing(&[out, &manifest_path], cli.force)?;
    let cfg = load_config(cli)?;
    let frames = load_dataset(data)?;
    let mesh = fuse_depth(&frames, &cfg);
    ensure_parent(out)?;
    write_mesh(&mesh, out, MeshFormat::from_path(out)?)?;
    RunManifest::new(command, cfg.seed, config_value(&cfg))
        .input("data", data)
        .output("mesh", out)
        .save(&manifest_path)?;
    emit(
        cli,
        json!({ "frames": frames.len(), "triangles": mesh.triangles.len(), "mesh": out }),
        || println!("fused {} depth maps into {} triangles: {}", frames.len(), mesh.triangles.len(), out.display()),
    );
    Ok(())
}

fn cmd_fuse_depth(cli: &Cli, a: &FuseDepthArgs) -> anyhow::Result<()> {
    write_baseline(cli, &a.data, &a.out, "fuse-depth")
}

fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs) -> anyhow::Result<()> {
    if a.baseline == Some(Baseline::Tsdf) {
        return write_baseline(cli, &a.data, &a.out, "reconstruct --baseline tsdf");
    }
    let stats_path = sibling(&a.out, "fragments.json");
    let manifest_path = sibling(&a.out, "manifest.json");
    refuse_existing(&[&a.out, &stats_path, &manifest_path], cli.force)?;
    let mut cfg = load_config(cli)?;
    if let Some(f) = a.fusion {
        cfg.fusion = f;
    }
    if let Some(ar) = a.area {
        cfg.area = ar;
    }
    if let Some(n) = a.views {
        cfg.n_views = n;
    }
    cfg.validate()?;
    let model = build_model(&cfg, a.weights.as_deref())?;
    let frames = load_dataset(&a.data)?;
    let run = reconstruct_sequence(frames, &model, !a.no_per_fragment_mesh)?;
    if run.fragments.is_empty() {
        log::warn!("no fragment was completed; writing an empty mesh");
    }
    let mesh = run.state.extract_mesh(cfg.theta);
    ensure_parent(&a.out)?;
    write_mesh(&mesh, &a.out, MeshFormat::from_path(&a.out)?)?;
    write_json(
        &stats_path,
        &json!({ "keyframes": run.keyframes, "fragments": run.fragments, "triangles": mesh.triangles.len() }),
    )?;
    let mut manifest = RunManifest::new("reconstruct", cfg.seed, config_value(&cfg)).input("data", &a.data);
    if let Some(w) = &a.weights {
        manifest = manifest.input("weights", w);
    }
    if let Some(c) = &cli.config {
        manifest = manifest.input("config", c);
    }
    manifest.output("mesh", &a.out).output("fragments", &stats_path).save(&manifest_path)?;
    emit(
        cli,
        json!({ "fragments": run.fragments.len(), "keyframes": run.keyframes, "triangles": mesh.triangles.len(), "mesh": a.out }),
        || {
            println!(
                "{} fragments from {} key frames, {} triangles: {}",
                run.fragments.len(),
                run.keyframes,
                mesh.triangles.len(),
                a.out.display()
            )
        },
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<()> {
    for (what, p) in [("predicted mesh", &a.pred), ("ground-truth mesh", &a.gt)] {
        if !p.is_file() {
            bail!("{what} not found: {}", p.display());
        }
    }
    let pred = read_mesh(&a.pred)?;
    let gt = read_mesh(&a.gt)?;
    let params = Eval3dParams {
        tau: a.tau,
        seed: cli.seed.unwrap_or(0),
        ..Eval3dParams::default()
    };
    let (report, frames) = match &a.data {
        Some(d) => {
            let frames = load_dataset(d)?;
            let r = eval_sequence(&pred, &gt, &frames, a.interval, &params)?;
            (serde_json::to_value(&r)?, Some(r.frames))
        }
        None => (json!({ "metrics_3d": eval_3d(&pred, &gt, &params)? }), None),
    };
    if let Some(out) = &a.out {
        let csv_path = sibling(out, "frames.csv");
        let manifest_path = sibling(out, "manifest.json");
        refuse_existing(&[out, &csv_path, &manifest_path], cli.force)?;
        ensure_parent(out)?;
        write_json(out, &report)?;
        let mut m = RunManifest::new("eval", params.seed, json!({ "tau": a.tau, "interval": a.interval, "samples": params.n_samples }))
            .input("pred", &a.pred)
            .input("gt", &a.gt)
            .output("report", out);
        if let Some(d) = &a.data {
            m = m.input("data", d);
        }
        if let Some(f) = &frames {
            save_frames_csv(f, &csv_path)?;
            m = m.output("frames", &csv_path);
        }
        m.save(&manifest_path)?;
    }
    emit(cli, report.clone(), || {
        let m = &report["metrics_3d"];
        println!(
            "acc {:.4}  comp {:.4}  prec {:.4}  recall {:.4}  fscore {:.4}",
            m["acc"].as_f64().unwrap_or(f64::NAN),
            m["comp"].as_f64().unwrap_or(f64::NAN),
            m["prec"].as_f64().unwrap_or(f64::NAN),
            m["recall"].as_f64().unwrap_or(f64::NAN),
            m["fscore"].as_f64().unwrap_or(f64::NAN),
        );
        if let Some(m2) = report.get("metrics_2d").filter(|v| !v.is_null()) {
            println!(
                "abs_rel {:.4}  rmse {:.4}  delta<1.25 {:.4}",
                m2["abs_rel"].as_f64().unwrap_or(f64::NAN),
                m2["rmse"].as_f64().unwrap_or(f64::NAN),
                m2["delta_125"].as_f64().unwrap_or(f64::NAN),
            );
        }
    });
    Ok(())
}

/// The default benchmark sequence: the demo room seen from a 60-frame orbit.
pub fn demo_sequence(cfg: &FusionConfig, frames: usize) -> anyhow::Result<Vec<Frame>> {
    let spec = SceneSpec::demo_room();
    let poses = scripted_trajectory(&spec, &spec.trajectory, frames);
    Ok(render_frames(&spec, &poses, cfg.d_max)?)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> anyhow::Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    if a.out.exists() && !cli.force && std::fs::read_dir(&a.out)?.next().is_some() {
        bail!("output directory {} is not empty (use --force)", a.out.display());
    }
    let cfg = load_config(cli)?;
    let model = build_model(&cfg, a.weights.as_deref())?;
    let frames = match &a.data {
        Some(d) => load_dataset(d)?,
        None => demo_sequence(&cfg, 60)?,
    };
    let report = run_benchmark(&frames, &model, a.repeats, &a.sweep_voxels)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let written = save_report(&report, &a.out)?;
    let mut m = RunManifest::new("bench", cfg.seed, config_value(&cfg));
    if let Some(d) = &a.data {
        m = m.input("data", d);
    }
    for p in &written {
        let key = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        m = m.output(&key, p);
    }
    m.save(&a.out.join(MANIFEST_FILE))?;
    emit(cli, serde_json::to_value(&report)?, || {
        for s in &report.stages {
            println!("{:<22} {:>10.3} ms", s.stage, s.median_ms);
        }
        println!("{:<22} {:>10.3} ms", "total", report.total.median);
        println!("{:<22} {:>10.3} ms", "per key frame", report.ms_per_keyframe);
        for p in &report.sweep {
            println!("sparse conv {:>7} voxels {:>10.3} ms", p.occupied, p.median_ms);
        }
    });
    Ok(())
}

fn cmd_selftest(cli: &Cli, a: &SelftestArgs) -> anyhow::Result<bool> {
    if let Some(w) = &a.weights {
        log::info!("selftest ignores --weights {}", w.display());
    }
    let checks = run_selftest();
    let passed = checks.iter().all(|c| c.passed);
    emit(cli, json!({ "passed": passed, "checks": checks }), || {
        for c in &checks {
            println!(
                "{} {:<28} {:.3e} (limit {:.1e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
    });
    if !passed {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        eprintln!("selftest failed: {}", failed.join(", "));
    }
    Ok(passed)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let loss_path = sibling(&a.out, "loss.csv");
    let manifest_path = sibling(&a.out, "manifest.json");
    refuse_existing(&[&a.out, &loss_path, &manifest_path], cli.force)?;
    let scene_path = a.data.join(SCENE_FILE);
    if !scene_path.is_file() {
        bail!("training needs {} for ground truth", scene_path.display());
    }
    let spec = SceneSpec::load(&scene_path)?;
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let mut model = Model::seeded(&cfg, cfg.seed)?;
    let frames = load_dataset(&a.data)?;
    let fragments: Vec<_> = crate::camera::assemble_fragments(frames, cfg.fragment_params())
        .take(a.fragments.max(1))
        .collect();
    if fragments.is_empty() {
        bail!("dataset yields no complete fragment");
    }
    let prepared = fragments
        .iter()
        .map(|f| prepare_fragment(f, &spec, &model))
        .collect::<crate::Result<Vec<_>>>()?;
    let history = train_toy(
        &prepared,
        &mut model,
        TrainOptions {
            steps: a.steps,
            lr: a.lr,
        },
    )?;
    ensure_parent(&a.out)?;
    save_weights(&model.export()?, &a.out)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in history.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.8}\n"));
    }
    std::fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;
    RunManifest::new("train", cfg.seed, config_value(&cfg))
        .input("data", &a.data)
        .output("weights", &a.out)
        .output("loss", &loss_path)
        .save(&manifest_path)?;
    let first = history.first().copied().unwrap_or(f64::NAN);
    let last = history.last().copied().unwrap_or(f64::NAN);
    emit(
        cli,
        json!({ "steps": a.steps, "fragments": prepared.len(), "initial_loss": first, "final_loss": last, "weights": a.out }),
        || println!("{} steps on {} fragment(s): loss {first:.4} -> {last:.4}", a.steps, prepared.len()),
    );
    Ok(())
}
