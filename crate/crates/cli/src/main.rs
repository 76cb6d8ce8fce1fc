use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use panoptic_core::dataset::Dataset;
use panoptic_core::evaluation::{format_report, MIN_THING_VERTICES};
use panoptic_core::meshing::{read_ply, write_sidecar};
use panoptic_core::synthetic_world::{demo_scene, write_dataset};
use panoptic_core::{evaluate_mesh, export_ply, replay_frames, run_replay, PanopticEncoding, RunConfig, SceneSpec};

/// Environment variable holding the log filter, e.g. `info` or `panoptic_core=debug`.
const LOG_ENV: &str = "PANOPTIC_LOG";

#[derive(Parser)]
#[command(name = "panoptic", version, about = "Online volumetric panoptic mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a dataset and write mesh, sidecar, metrics and timings.
    Replay(RunArgs),
    /// Render a synthetic scene into the dataset format.
    GenScene(GenArgs),
    /// Score a labeled PLY mesh against a dataset's ground truth.
    Eval(EvalArgs),
    /// Replay a dataset and write only the labeled mesh.
    MeshExport(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML). Relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (`replay`) or PLY path (`mesh-export`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Process at most N frames.
    #[arg(long, value_name = "N")]
    frames: Option<usize>,
    /// Disable CRF regularization.
    #[arg(long)]
    no_crf: bool,
    /// Maximum blocks per CRF submap.
    #[arg(long, value_name = "K")]
    max_blocks: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    /// Scene description (TOML); the built-in demo room when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Render only the first N trajectory views.
    #[arg(long, value_name = "N")]
    frames: Option<usize>,
    /// Ground-truth surface samples per square meter.
    #[arg(long, default_value_t = 2500.0)]
    gt_density: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vertex association radius in meters.
    #[arg(long, default_value_t = 0.048)]
    radius: f64,
    #[arg(long, default_value_t = MIN_THING_VERTICES)]
    min_vertices: usize,
}

impl RunArgs {
    fn resolve(&self, default_out: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let Some(dataset) = &self.dataset else {
                    bail!("either --config or --dataset is required");
                };
                RunConfig::new(dataset, default_out)
            }
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.frames {
            cfg.frames = Some(n);
        }
        if self.no_crf {
            cfg.regularize = false;
        }
        if let Some(k) = self.max_blocks {
            cfg.crf.max_blocks_per_submap = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn replay(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve("out")?;
    let report = run_replay(&cfg).with_context(|| format!("replaying {}", cfg.dataset.display()))?;
    let m = &report.metrics;
    println!(
        "frames {}/{} ({} skipped), {} blocks, {} instances, mesh {} vertices / {} triangles",
        m.frames_processed, m.frames_total, m.frames_skipped, m.blocks, m.instances, m.mesh_vertices, m.mesh_triangles
    );
    if let Some(e) = &m.evaluation {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "PQ {}  SQ {}  RQ {}  mIoU {}",
            f(e.panoptic.pq),
            f(e.panoptic.sq),
            f(e.panoptic.rq),
            f(e.semantic.mean)
        );
    }
    println!("outputs written to {}", cfg.output.display());
    Ok(())
}

fn mesh_export(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve("mesh.ply")?;
    let dataset = Dataset::open(&cfg.dataset).with_context(|| format!("opening {}", cfg.dataset.display()))?;
    let mut replay = replay_frames(&cfg, &dataset)?;
    let mesh = replay.mapper.extract_mesh();
    let schema = dataset.schema();
    let enc = PanopticEncoding::new(schema);
    let out = &cfg.output;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    export_ply(&mesh, &enc, out)?;
    let sidecar = out.with_extension("labels.txt");
    write_sidecar(&mesh, replay.mapper.registry(), schema, &enc, &sidecar)?;
    println!("{} vertices, {} triangles -> {}", mesh.vertex_count(), mesh.triangle_count(), out.display());
    Ok(())
}

fn gen_scene(args: &GenArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => demo_scene(),
    };
    if let Some(s) = args.seed {
        spec.noise.seed = s;
    }
    let summary = write_dataset(&spec, &args.out, args.frames, args.gt_density)?;
    println!(
        "{} frames, {} ground-truth points -> {}",
        summary.frames,
        summary.ground_truth_points,
        args.out.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let dataset = Dataset::open(&args.dataset).with_context(|| format!("opening {}", args.dataset.display()))?;
    let schema = dataset.schema();
    let Some(gt) = dataset.ground_truth()? else {
        bail!("{} has no ground truth", args.dataset.display());
    };
    let mesh = read_ply(&args.mesh, &PanopticEncoding::new(schema)).with_context(|| format!("reading {}", args.mesh.display()))?;
    let report = evaluate_mesh(&mesh, &gt, schema, args.radius, args.min_vertices)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(p) => {
            write_file(p, &json)?;
            print!("{}", format_report(&report, schema));
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Replay(a) => replay(a),
        Command::GenScene(a) => gen_scene(a),
        Command::Eval(a) => eval(a),
        Command::MeshExport(a) => mesh_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
