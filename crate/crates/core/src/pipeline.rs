//! Frame-by-frame mapping driver and dataset replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_mesh, EvaluationReport, MIN_THING_VERTICES};
use crate::frontend::{fuse_panoptic, SegmentationFrame};
use crate::integration::{integrate_frame, IntegrationConfig, IntegrationStats};
use crate::map::{LabelSchema, MapConfig, VolumetricMap};
use crate::meshing::{export_ply, extract_mesh, write_sidecar, LabeledMesh, PanopticEncoding};
use crate::registry::InstanceRegistry;
use crate::regularization::{regularize, CrfConfig, RegularizationStats};
use crate::tracking::{render_reference_labels, track_labels, TrackingConfig, TrackingResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LabelFusion,
    ReferenceGeneration,
    Tracking,
    Integration,
    ProbabilityIntegration,
    Regularization,
    Meshing,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::LabelFusion,
        Stage::ReferenceGeneration,
        Stage::Tracking,
        Stage::Integration,
        Stage::ProbabilityIntegration,
        Stage::Regularization,
        Stage::Meshing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::LabelFusion => "label_fusion",
            Stage::ReferenceGeneration => "reference_generation",
            Stage::Tracking => "tracking",
            Stage::Integration => "integration",
            Stage::ProbabilityIntegration => "probability_integration",
            Stage::Regularization => "regularization",
            Stage::Meshing => "meshing",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub calls: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Wall-clock samples per stage.
#[derive(Clone, Debug, Default)]
pub struct StageTimings {
    samples: BTreeMap<Stage, Vec<Duration>>,
}

impl StageTimings {
    pub fn record(&mut self, stage: Stage, d: Duration) {
        self.samples.entry(stage).or_default().push(d);
    }

    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }

    pub fn summary(&self) -> BTreeMap<&'static str, StageSummary> {
        Stage::ALL
            .iter()
            .map(|&s| {
                let v = self.samples.get(&s).map(Vec::as_slice).unwrap_or(&[]);
                let ms: Vec<f64> = v.iter().map(|d| d.as_secs_f64() * 1e3).collect();
                let total: f64 = ms.iter().sum();
                let summary = StageSummary {
                    calls: ms.len(),
                    total_ms: total,
                    mean_ms: if ms.is_empty() { 0.0 } else { total / ms.len() as f64 },
                    max_ms: ms.iter().copied().fold(0.0, f64::max),
                };
                (s.name(), summary)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,calls,total_ms,mean_ms,max_ms\n");
        let summary = self.summary();
        for stage in Stage::ALL {
            let t = &summary[stage.name()];
            let _ = writeln!(s, "{},{},{:.3},{:.3},{:.3}", stage.name(), t.calls, t.total_ms, t.mean_ms, t.max_ms);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameReport {
    pub tracking: TrackingResult,
    pub integration: IntegrationStats,
}

/// The online mapping system: map, instance registry and stage configs.
#[derive(Clone, Debug)]
pub struct Mapper {
    schema: LabelSchema,
    map: VolumetricMap,
    registry: InstanceRegistry,
    integration: IntegrationConfig,
    tracking: TrackingConfig,
    crf: CrfConfig,
    timings: StageTimings,
    frames: usize,
}

impl Mapper {
    pub fn new(
        schema: LabelSchema,
        map: MapConfig,
        integration: IntegrationConfig,
        tracking: TrackingConfig,
        crf: CrfConfig,
    ) -> Result<Self> {
        integration.validate()?;
        tracking.validate()?;
        crf.validate()?;
        Ok(Mapper {
            schema,
            map: VolumetricMap::new(map)?,
            registry: InstanceRegistry::new(),
            integration,
            tracking,
            crf,
            timings: StageTimings::default(),
            frames: 0,
        })
    }

    pub fn with_defaults(schema: LabelSchema) -> Result<Self> {
        Self::new(schema, MapConfig::default(), IntegrationConfig::default(), TrackingConfig::default(), CrfConfig::default())
    }

    /// Fuse, track and integrate one frame.
    pub fn process(&mut self, cam: &CameraFrame, seg: &SegmentationFrame) -> Result<FrameReport> {
        seg.validate(&self.schema)?;
        if (seg.width, seg.height) != (cam.width, cam.height) {
            return Err(Error::DimensionMismatch {
                what: "segmentation frame",
                expected: (cam.width, cam.height),
                found: (seg.width, seg.height),
            });
        }
        let t = &mut self.timings;
        let raw = t.time(Stage::LabelFusion, || fuse_panoptic(seg, &self.schema))?;
        let reference = t.time(Stage::ReferenceGeneration, || render_reference_labels(&self.map, cam));
        let tracking = t.time(Stage::Tracking, || track_labels(&raw, &reference, &mut self.map, &self.tracking))?;
        let integration = t.time(Stage::Integration, || integrate_frame(&mut self.map, cam, &tracking.resolved, &self.integration))?;
        t.time(Stage::ProbabilityIntegration, || self.registry.integrate(&tracking.assignment, seg))?;
        self.frames += 1;
        Ok(FrameReport { tracking, integration })
    }

    pub fn regularize(&mut self) -> Result<RegularizationStats> {
        let crf = self.crf;
        let map = &mut self.map;
        self.timings.time(Stage::Regularization, || regularize(map, &crf))
    }

    pub fn extract_mesh(&mut self) -> LabeledMesh {
        let (map, registry) = (&self.map, &self.registry);
        self.timings.time(Stage::Meshing, || extract_mesh(map, registry))
    }

    pub fn map(&self) -> &VolumetricMap {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut VolumetricMap {
        &mut self.map
    }

    pub fn registry(&self) -> &InstanceRegistry {
        &self.registry
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    pub fn frames_processed(&self) -> usize {
        self.frames
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Regularize after every this many processed frames; 0 disables periodic runs.
    pub regularize_every: usize,
    /// Extract a mesh after every this many processed frames; 0 disables periodic runs.
    pub mesh_every: usize,
    /// Regularize once more before the final mesh.
    pub regularize_at_end: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { regularize_every: 0, mesh_every: 0, regularize_at_end: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Association radius in meters; twice the voxel size when absent.
    pub radius: Option<f64>,
    pub min_vertices: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { radius: None, min_vertices: MIN_THING_VERTICES }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Recorded in the run report; replay itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
    /// Process at most this many frames.
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default = "enabled")]
    pub regularize: bool,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub crf: CrfConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn enabled() -> bool {
    true
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            output: output.into(),
            seed: 0,
            frames: None,
            regularize: true,
            map: MapConfig::default(),
            integration: IntegrationConfig::default(),
            tracking: TrackingConfig::default(),
            crf: CrfConfig::default(),
            schedule: Schedule::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            if cfg.dataset.is_relative() {
                cfg.dataset = base.join(&cfg.dataset);
            }
            if cfg.output.is_relative() {
                cfg.output = base.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.integration.validate()?;
        self.tracking.validate()?;
        self.crf.validate()?;
        if let Some(r) = self.evaluation.radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("evaluation radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Deterministic content of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub frames_total: usize,
    pub frames_processed: usize,
    pub frames_skipped: usize,
    pub blocks: usize,
    pub instances: usize,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub regularization: Vec<RegularizationStats>,
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub timings: BTreeMap<&'static str, StageSummary>,
    pub elapsed_ms: f64,
}

pub const MESH_FILE: &str = "mesh.ply";
pub const SIDECAR_FILE: &str = "mesh_labels.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";

/// Mapper state after replaying a dataset's frames.
#[derive(Clone, Debug)]
pub struct Replay {
    pub mapper: Mapper,
    pub frames_total: usize,
    pub frames_skipped: usize,
    pub regularization: Vec<RegularizationStats>,
}

/// Feed the dataset's frames through a fresh mapper following the config's
/// schedule. Unreadable frames are skipped and counted.
pub fn replay_frames(cfg: &RunConfig, dataset: &Dataset) -> Result<Replay> {
    let mut mapper = Mapper::new(dataset.schema().clone(), cfg.map, cfg.integration, cfg.tracking, cfg.crf)?;
    let total = cfg.frames.map_or(dataset.len(), |n| n.min(dataset.len()));
    let mut skipped = 0usize;
    let mut reg_stats = Vec::new();

    for i in 0..total {
        let (cam, seg) = match dataset.load_frame(i) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping frame {i}: {e}");
                skipped += 1;
                continue;
            }
        };
        let report = mapper.process(&cam, &seg).map_err(|e| e.in_frame(i))?;
        log::debug!(
            "frame {i}: {} pixels integrated, {} new instances",
            report.integration.pixels_integrated,
            report.tracking.new_instances.len()
        );
        let done = mapper.frames_processed();
        if cfg.regularize && cfg.schedule.regularize_every > 0 && done % cfg.schedule.regularize_every == 0 {
            let stats = mapper.regularize()?;
            log::info!("frame {i}: regularized {} submaps, {} labels changed", stats.submaps, stats.labels_changed);
            reg_stats.push(stats);
        }
        if cfg.schedule.mesh_every > 0 && done % cfg.schedule.mesh_every == 0 {
            let mesh = mapper.extract_mesh();
            log::info!("frame {i}: mesh with {} vertices", mesh.vertex_count());
        }
    }
    if cfg.regularize && cfg.schedule.regularize_at_end && mapper.frames_processed() > 0 {
        reg_stats.push(mapper.regularize()?);
    }
    Ok(Replay { mapper, frames_total: total, frames_skipped: skipped, regularization: reg_stats })
}

/// Replay a dataset through the mapper and write mesh, sidecar, timings and
/// (with ground truth) metrics into the output directory.
pub fn run_replay(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dataset = Dataset::open(&cfg.dataset)?;
    let schema = dataset.schema().clone();
    let Replay { mut mapper, frames_total: total, frames_skipped: skipped, regularization: reg_stats } =
        replay_frames(cfg, &dataset)?;
    let mesh = mapper.extract_mesh();

    fs::create_dir_all(&cfg.output)?;
    let encoding = PanopticEncoding::new(&schema);
    export_ply(&mesh, &encoding, &cfg.output.join(MESH_FILE))?;
    write_sidecar(&mesh, mapper.registry(), &schema, &encoding, &cfg.output.join(SIDECAR_FILE))?;

    let evaluation = match dataset.ground_truth()? {
        Some(gt) => {
            let radius = cfg.evaluation.radius.unwrap_or(2.0 * cfg.map.voxel_size);
            let report = evaluate_mesh(&mesh, &gt, &schema, radius, cfg.evaluation.min_vertices)?;
            fs::write(cfg.output.join(METRICS_TABLE_FILE), crate::evaluation::format_report(&report, &schema))?;
            Some(report)
        }
        None => None,
    };

    let metrics = RunMetrics {
        frames_total: total,
        frames_processed: mapper.frames_processed(),
        frames_skipped: skipped,
        blocks: mapper.map().block_count(),
        instances: mapper.registry().len(),
        mesh_vertices: mesh.vertex_count(),
        mesh_triangles: mesh.triangle_count(),
        regularization: reg_stats,
        evaluation,
    };
    fs::write(cfg.output.join(METRICS_FILE), serde_json::to_string_pretty(&metrics)?)?;
    fs::write(cfg.output.join(TIMINGS_FILE), mapper.timings().to_csv())?;
    let report = RunReport {
        seed: cfg.seed,
        metrics,
        timings: mapper.timings().summary(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    fs::write(cfg.output.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic_world::{demo_scene, write_dataset};

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::from_toml("dataset = \"d\"\noutput = \"o\"\n[crf]\nw1 = 3.0\n").unwrap();
        assert_eq!(cfg.crf.w1, 3.0);
        assert_eq!(cfg.crf.w2, 15.0);
        assert_eq!(cfg.map.voxel_size, 0.024);
        assert!(RunConfig::from_toml("dataset = \"d\"\noutput = \"o\"\ncolour = 1\n").is_err());
        assert!(RunConfig::from_toml("dataset = \"d\"\noutput = \"o\"\n[crf]\nw3 = 1.0\n").is_err());
        assert!(RunConfig::from_toml("dataset = \"d\"\noutput = \"o\"\n[map]\ntruncation = 0.01\n").is_err());
        assert!(RunConfig::from_toml("output = \"o\"\n").is_err());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_dataset(&demo_scene(), &data, Some(0), 100.0).unwrap();
        let report = run_replay(&RunConfig::new(&data, dir.path().join("out"))).unwrap();
        assert_eq!(report.metrics.frames_processed, 0);
        assert_eq!(report.metrics.mesh_vertices, 0);
        assert!(dir.path().join("out").join(MESH_FILE).exists());
    }

    #[test]
    fn short_replay_with_corrupt_frame() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_dataset(&demo_scene(), &data, Some(4), 400.0).unwrap();
        fs::write(data.join("color").join("000002.png"), b"not a png").unwrap();
        let mut cfg = RunConfig::new(&data, dir.path().join("out"));
        cfg.schedule.regularize_every = 2;
        let report = run_replay(&cfg).unwrap();
        assert_eq!(report.metrics.frames_skipped, 1);
        assert_eq!(report.metrics.frames_processed, 3);
        assert!(report.metrics.mesh_vertices > 0);
        assert!(report.metrics.evaluation.is_some());
        let csv = fs::read_to_string(dir.path().join("out").join(TIMINGS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.contains("tracking,3,"));
    }
}
