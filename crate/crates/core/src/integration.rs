//! Raycasting integration of depth, color and panoptic labels.
//!
//! Each valid pixel casts a ray from the sensor origin to its back-projected
//! point. Voxels inside the truncation band around that point receive a
//! weighted-average TSDF and color update, and the increment/decrement label
//! rule:
//!
//! * same label: `W_L += w`
//! * different label, `w <= W_L`: `W_L -= w`
//! * different label, `w > W_L`: label replaced, `W_L = w - W_L`

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::frontend::PanopticImage;
use crate::map::{BlockIndex, GlobalIndex, MapConfig, PanopticLabel, VolumetricMap, Voxel, VoxelBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Constant,
    /// `1 / z²` in the measured depth.
    Quadric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    /// Pixels whose back-projected point is farther than this from the sensor are skipped.
    pub max_ray_length: f64,
    pub weight_mode: WeightMode,
    /// Behind-surface band as a fraction of the map truncation distance.
    pub behind_band: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            max_ray_length: 5.0,
            weight_mode: WeightMode::Quadric,
            behind_band: 1.0,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_ray_length > 0.0) {
            return Err(Error::Config(format!("max_ray_length must be positive, got {}", self.max_ray_length)));
        }
        if !(self.behind_band > 0.0 && self.behind_band <= 1.0) {
            return Err(Error::Config(format!("behind_band must be in (0, 1], got {}", self.behind_band)));
        }
        Ok(())
    }
}

/// Signed distance from voxel center `v` to the surface point `p` measured
/// along the ray from `s`, positive on the sensor side, clamped to
/// `±truncation`.
pub fn compute_projective_distance(v: &Point3<f64>, p: &Point3<f64>, s: &Point3<f64>, truncation: f64) -> f64 {
    let ray = p - s;
    let len = ray.norm();
    if len == 0.0 {
        return truncation;
    }
    let d = (p - v).dot(&ray) / len;
    d.clamp(-truncation, truncation)
}

pub fn compute_weight(depth: f64, mode: WeightMode) -> Result<f64> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    Ok(match mode {
        WeightMode::Constant => 1.0,
        WeightMode::Quadric => 1.0 / (depth * depth),
    })
}

/// One measurement applied to one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub distance: f32,
    pub weight: f32,
    pub color: [f32; 3],
    pub label: PanopticLabel,
}

/// Apply a single observation to a voxel.
pub fn update_voxel(voxel: &mut Voxel, obs: &Observation, truncation: f32) {
    let w = obs.weight;
    if w <= 0.0 {
        return;
    }
    let prev = voxel.weight;
    let total = prev + w;
    voxel.tsdf = ((prev * voxel.tsdf + w * obs.distance) / total).clamp(-truncation, truncation);
    for c in 0..3 {
        voxel.color[c] = ((prev * voxel.color[c] + w * obs.color[c]) / total).clamp(0.0, 255.0);
    }
    voxel.weight = total;

    if voxel.label == obs.label {
        voxel.label_weight += w;
    } else if w > voxel.label_weight {
        voxel.label = obs.label;
        voxel.label_weight = w - voxel.label_weight;
    } else {
        voxel.label_weight -= w;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IntegrationStats {
    pub pixels_integrated: usize,
    pub pixels_skipped: usize,
    pub voxel_updates: usize,
    pub blocks_allocated: usize,
}

/// Voxels visited by the ray from `s` through `p`, within `front` meters
/// before and `behind` meters after `p`, sampled at half-voxel steps.
pub fn ray_voxels(grid: &MapConfig, s: &Point3<f64>, p: &Point3<f64>, front: f64, behind: f64, out: &mut Vec<GlobalIndex>) {
    out.clear();
    let ray = p - s;
    let len = ray.norm();
    if len == 0.0 {
        return;
    }
    let dir = ray / len;
    let start = (len - front).max(0.0);
    let end = len + behind;
    let step = grid.voxel_size * 0.5;
    let steps = ((end - start) / step).ceil() as usize;
    for i in 0..=steps {
        let t = (start + i as f64 * step).min(end);
        let g = grid.world_to_global(&(s + dir * t));
        if out.last() != Some(&g) {
            out.push(g);
        }
    }
}

/// Integrate one posed frame with its consistency-resolved labels.
pub fn integrate_frame(
    map: &mut VolumetricMap,
    cam: &CameraFrame,
    resolved: &PanopticImage,
    cfg: &IntegrationConfig,
) -> Result<IntegrationStats> {
    cfg.validate()?;
    cam.validate()?;
    if (resolved.width, resolved.height) != (cam.width, cam.height) {
        return Err(Error::DimensionMismatch {
            what: "resolved label image",
            expected: (cam.width, cam.height),
            found: (resolved.width, resolved.height),
        });
    }
    let grid = *map.config();
    let truncation = grid.truncation;
    let behind = truncation * cfg.behind_band;
    let s = cam.sensor_origin();
    let blocks_before = map.block_count();
    let mut stats = IntegrationStats::default();
    let mut visited = Vec::new();

    for row in 0..cam.height {
        for col in 0..cam.width {
            let i = row * cam.width + col;
            let Some(p) = cam.back_project(col, row) else {
                stats.pixels_skipped += 1;
                continue;
            };
            if (p - s).norm() > cfg.max_ray_length {
                stats.pixels_skipped += 1;
                continue;
            }
            let w = compute_weight(cam.depth[i] as f64, cfg.weight_mode)? as f32;
            let color = cam.color[i].map(f32::from);
            let label = resolved.labels[i];
            ray_voxels(&grid, &s, &p, truncation, behind, &mut visited);

            let mut current: Option<(BlockIndex, &mut VoxelBlock)> = None;
            for &g in &visited {
                let d = compute_projective_distance(&grid.global_center(g), &p, &s, truncation);
                if d < -behind {
                    continue;
                }
                let (b, local) = grid.split_global(g);
                if current.as_ref().map(|(cb, _)| *cb) != Some(b) {
                    current = Some((b, map.get_or_allocate_block(b)?));
                }
                let block = &mut current.as_mut().expect("block cached above").1;
                let obs = Observation {
                    distance: d as f32,
                    weight: w,
                    color,
                    label,
                };
                update_voxel(block.voxel_mut(local), &obs, truncation as f32);
                stats.voxel_updates += 1;
            }
            stats.pixels_integrated += 1;
        }
    }
    stats.blocks_allocated = map.block_count() - blocks_before;
    Ok(stats)
}
