//! Procedural labeled scenes rendered into RGB-D and segmentation frames.
//!
//! A scene is an axis-aligned room (floor, walls, optional ceiling) holding
//! boxes and spheres. Each thing primitive is one ground-truth instance,
//! numbered from 1 in file order, boxes first. Rendering is analytic, so depth
//! and labels are exact before the noise model is applied.

mod geometry;
mod render;
mod sampling;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{rigid_from_matrix, Intrinsics};
use crate::dataset;
use crate::error::{Error, Result};
use crate::map::{ClassId, ClassInfo, InstanceId, LabelSchema};

pub use render::{render_frame, RenderedFrame};
pub use sampling::{ground_truth_points, visible_points};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub floor: ClassId,
    pub wall: ClassId,
    /// Open top when absent.
    #[serde(default)]
    pub ceiling: Option<ClassId>,
    #[serde(default = "default_floor_color")]
    pub floor_color: [u8; 3],
    #[serde(default = "default_wall_color")]
    pub wall_color: [u8; 3],
    #[serde(default = "default_wall_color")]
    pub ceiling_color: [u8; 3],
}

fn default_floor_color() -> [u8; 3] {
    [120, 90, 60]
}

fn default_wall_color() -> [u8; 3] {
    [210, 210, 200]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub class: ClassId,
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// Rotation about the vertical axis, radians.
    #[serde(default)]
    pub yaw: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub class: ClassId,
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Trajectory {
    /// Circles `center` looking at `target`; more than one turn revisits views.
    Orbit {
        center: [f64; 3],
        target: [f64; 3],
        radius: f64,
        height: f64,
        #[serde(default)]
        height_amplitude: f64,
        turns: f64,
        frames: usize,
        #[serde(default)]
        start_angle: f64,
    },
    /// Camera-to-world matrices, row-major.
    Explicit { poses: Vec<[f64; 16]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Depth standard deviation is `depth_sigma · z²`.
    pub depth_sigma: f64,
    /// Fraction of labeled tiles relabeled to another segment.
    pub label_flip_rate: f64,
    /// Side of the square tiles flipped together, pixels.
    pub flip_patch: usize,
    /// Positive erodes instance masks by this many pixels, negative dilates.
    pub mask_erosion: i32,
    pub confidence: [f64; 2],
    /// Probability mass moved from the true class to the other thing classes.
    pub class_noise: f64,
    pub permute_ids: bool,
    /// Instances with fewer pixels are not detected.
    pub min_mask_area: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            seed: 0,
            depth_sigma: 0.0,
            label_flip_rate: 0.0,
            flip_patch: 1,
            mask_erosion: 0,
            confidence: [0.9, 1.0],
            class_noise: 0.0,
            permute_ids: true,
            min_mask_area: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub classes: Vec<ClassInfo>,
    pub room: Room,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    pub camera: CameraSpec,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub noise: NoiseSpec,
}

/// Camera-to-world pose at `eye` looking at `target` with world `+z` up.
/// Camera axes: `x` right, `y` down, `z` forward.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Result<Isometry3<f64>> {
    let forward = (target - eye)
        .try_normalize(1e-9)
        .ok_or_else(|| Error::invalid("look-at target coincides with the eye"))?;
    let right = forward
        .cross(&Vector3::z())
        .try_normalize(1e-9)
        .ok_or_else(|| Error::invalid("look-at direction is vertical"))?;
    let down = forward.cross(&right);
    let r = Matrix3::from_columns(&[right, down, forward]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(Isometry3::from_parts(Translation3::from(eye.coords), rotation))
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::new(self.classes.iter().cloned())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.camera.intrinsics()
    }

    pub fn validate(&self) -> Result<()> {
        let schema = self.schema()?;
        self.intrinsics().validate()?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(Error::Config("camera resolution must be positive".into()));
        }
        let (lo, hi) = (self.room.min, self.room.max);
        if (0..3).any(|i| !(lo[i] < hi[i])) {
            return Err(Error::Config("room min must be below max on every axis".into()));
        }
        for (what, c) in [("floor", Some(self.room.floor)), ("wall", Some(self.room.wall)), ("ceiling", self.room.ceiling)] {
            if let Some(c) = c {
                if !schema.is_stuff(c) {
                    return Err(Error::Config(format!("room {what} class {c} is not a stuff class")));
                }
            }
        }
        let inside = |p: [f64; 3], margin: [f64; 3]| (0..3).all(|i| p[i] - margin[i] >= lo[i] - 1e-9 && p[i] + margin[i] <= hi[i] + 1e-9);
        for (i, b) in self.boxes.iter().enumerate() {
            if !schema.is_thing(b.class) {
                return Err(Error::Config(format!("box {i} class {} is not a thing class", b.class)));
            }
            if b.size.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config(format!("box {i} has non-positive size")));
            }
            let (c, s) = (b.yaw.cos().abs(), b.yaw.sin().abs());
            let half = [
                0.5 * (b.size[0] * c + b.size[1] * s),
                0.5 * (b.size[0] * s + b.size[1] * c),
                0.5 * b.size[2],
            ];
            if !inside(b.center, half) {
                return Err(Error::Config(format!("box {i} extends outside the room")));
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if !schema.is_thing(s.class) {
                return Err(Error::Config(format!("sphere {i} class {} is not a thing class", s.class)));
            }
            if !(s.radius > 0.0) || !inside(s.center, [s.radius; 3]) {
                return Err(Error::Config(format!("sphere {i} must have positive radius and lie inside the room")));
            }
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.label_flip_rate) || !(0.0..=1.0).contains(&n.class_noise) {
            return Err(Error::Config("noise rates must lie in [0, 1]".into()));
        }
        if !(n.depth_sigma >= 0.0) || n.flip_patch == 0 {
            return Err(Error::Config("depth_sigma must be non-negative and flip_patch positive".into()));
        }
        if !(0.0 <= n.confidence[0] && n.confidence[0] <= n.confidence[1] && n.confidence[1] <= 1.0) {
            return Err(Error::Config("confidence range must satisfy 0 <= lo <= hi <= 1".into()));
        }
        match &self.trajectory {
            Trajectory::Orbit { radius, turns, .. } => {
                if !(*radius >= 0.0 && turns.is_finite()) {
                    return Err(Error::Config("orbit radius must be non-negative".into()));
                }
            }
            Trajectory::Explicit { poses } => {
                for (i, p) in poses.iter().enumerate() {
                    rigid_from_matrix(&Matrix4::from_row_slice(p))
                        .map_err(|e| Error::Config(format!("trajectory pose {i}: {e}")))?;
                }
            }
        }
        self.poses().map(|_| ())
    }

    pub fn frame_count(&self) -> usize {
        match &self.trajectory {
            Trajectory::Orbit { frames, .. } => *frames,
            Trajectory::Explicit { poses } => poses.len(),
        }
    }

    pub fn poses(&self) -> Result<Vec<Isometry3<f64>>> {
        match &self.trajectory {
            Trajectory::Orbit {
                center,
                target,
                radius,
                height,
                height_amplitude,
                turns,
                frames,
                start_angle,
            } => (0..*frames)
                .map(|i| {
                    let theta = start_angle + std::f64::consts::TAU * turns * i as f64 / (*frames).max(1) as f64;
                    let eye = Point3::new(
                        center[0] + radius * theta.cos(),
                        center[1] + radius * theta.sin(),
                        center[2] + height + height_amplitude * (2.0 * theta).sin(),
                    );
                    look_at(eye, Point3::from(*target))
                })
                .collect(),
            Trajectory::Explicit { poses } => poses.iter().map(|p| rigid_from_matrix(&Matrix4::from_row_slice(p))).collect(),
        }
    }

    /// Ground-truth instance ID to thing class.
    pub fn instance_classes(&self) -> BTreeMap<InstanceId, ClassId> {
        self.boxes
            .iter()
            .map(|b| b.class)
            .chain(self.spheres.iter().map(|s| s.class))
            .enumerate()
            .map(|(i, c)| (InstanceId(i as u32 + 1), c))
            .collect()
    }
}

/// Summary of a generated sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratedDataset {
    pub frames: usize,
    pub ground_truth_points: usize,
}

/// Render the trajectory (optionally its first `frames` views) into the
/// on-disk dataset format, with ground-truth points visible from those views
/// sampled at `gt_density` points per square meter.
pub fn write_dataset(spec: &SceneSpec, root: &Path, frames: Option<usize>, gt_density: f64) -> Result<GeneratedDataset> {
    spec.validate()?;
    let mut poses = spec.poses()?;
    if let Some(n) = frames {
        poses.truncate(n);
    }
    std::fs::create_dir_all(root)?;
    dataset::write_header(root, &spec.intrinsics(), &poses, &spec.schema()?)?;
    std::fs::write(root.join("scene.toml"), spec.to_toml())?;
    for (i, pose) in poses.iter().enumerate() {
        let f = render_frame(spec, pose, i as u64)?;
        dataset::write_frame(root, i, &f.camera, &f.segmentation)?;
    }
    let all = ground_truth_points(spec, gt_density)?;
    let seen = visible_points(spec, &poses, &all, 1)?;
    dataset::write_ground_truth(&root.join(dataset::GROUND_TRUTH_FILE), &seen)?;
    Ok(GeneratedDataset { frames: poses.len(), ground_truth_points: seen.len() })
}

/// Small furnished room used by tests, benches and the default CLI scene.
pub fn demo_scene() -> SceneSpec {
    SceneSpec::from_toml(DEMO_SCENE).expect("demo scene is valid")
}

pub const DEMO_SCENE: &str = r#"
[[classes]]
id = 1
name = "wall"
kind = "stuff"

[[classes]]
id = 2
name = "floor"
kind = "stuff"

[[classes]]
id = 3
name = "chair"
kind = "thing"

[[classes]]
id = 4
name = "table"
kind = "thing"

[[classes]]
id = 5
name = "ball"
kind = "thing"

[room]
min = [-1.5, -1.5, 0.0]
max = [1.5, 1.5, 2.2]
floor = 2
wall = 1

[[boxes]]
class = 4
center = [0.3, 0.2, 0.35]
size = [0.8, 0.5, 0.7]
yaw = 0.3
color = [150, 60, 40]

[[boxes]]
class = 3
center = [-0.6, -0.5, 0.25]
size = [0.4, 0.4, 0.5]
color = [40, 120, 180]

[[spheres]]
class = 5
center = [-0.5, 0.6, 0.3]
radius = 0.3
color = [230, 200, 40]

[camera]
width = 160
height = 120
fx = 130.0
fy = 130.0
cx = 79.5
cy = 59.5

[trajectory]
kind = "orbit"
center = [0.0, 0.0, 0.0]
target = [0.0, 0.0, 0.4]
radius = 1.1
height = 1.4
height_amplitude = 0.15
turns = 1.25
frames = 40

[noise]
seed = 7
permute_ids = true
"#;
