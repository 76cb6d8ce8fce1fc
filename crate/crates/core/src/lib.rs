//! Online volumetric panoptic mapping.
//!
//! Depth, color and per-pixel panoptic labels are fused into a spatially
//! hashed TSDF map. Object instance IDs are tracked against the map,
//! labels are regularized with a fully connected CRF, and labeled meshes are
//! extracted with marching cubes.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod integration;
pub mod map;
pub mod meshing;
pub mod pipeline;
pub mod registry;
pub mod regularization;
pub mod synthetic_world;
pub mod tracking;

pub use camera::{CameraFrame, Intrinsics};
pub use error::{Error, Result};
pub use evaluation::{evaluate_mesh, EvaluationReport, LabeledPointSet};
pub use frontend::{fuse_panoptic, Detection, PanopticImage, SegmentationFrame};
pub use integration::{integrate_frame, IntegrationConfig, WeightMode};
pub use map::{ClassId, ClassInfo, ClassKind, InstanceId, LabelSchema, MapConfig, PanopticLabel, VolumetricMap, Voxel};
pub use meshing::{export_ply, extract_mesh, LabeledMesh, PanopticEncoding};
pub use pipeline::{replay_frames, run_replay, Mapper, RunConfig};
pub use registry::InstanceRegistry;
pub use regularization::{regularize, CrfConfig, RegularizationStats};
pub use synthetic_world::{render_frame, SceneSpec};
pub use tracking::{render_reference_labels, track_labels, TrackingConfig};
