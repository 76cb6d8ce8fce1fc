use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Isometry3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::frontend::{Detection, PanopticImage, SegmentationFrame};
use crate::map::{ClassId, InstanceId, PanopticLabel};

use super::SceneSpec;

/// One rendered view: sensor data, noisy segmentation and exact labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub camera: CameraFrame,
    pub segmentation: SegmentationFrame,
    /// Exact labels with ground-truth instance IDs.
    pub ground_truth: PanopticImage,
    /// Frame-local detection ID to ground-truth instance.
    pub local_to_gt: BTreeMap<InstanceId, InstanceId>,
}

/// Render view `index` of the scene at `pose`. The noise stream depends only
/// on the scene seed and `index`.
pub fn render_frame(spec: &SceneSpec, pose: &Isometry3<f64>, index: u64) -> Result<RenderedFrame> {
    let (w, h) = (spec.camera.width, spec.camera.height);
    let k = spec.intrinsics();
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    rng.set_stream(index);

    let mut depth = vec![0.0f32; n];
    let mut color = vec![[0u8; 3]; n];
    let mut gt = vec![PanopticLabel::Unknown; n];
    let origin = pose.translation.vector.into();
    if spec.is_free(&origin) {
        for row in 0..h {
            for col in 0..w {
                let d_cam = Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
                if let Some(hit) = spec.cast(&origin, &(pose.rotation * d_cam)) {
                    let i = row * w + col;
                    depth[i] = hit.t as f32;
                    color[i] = hit.color;
                    gt[i] = hit.label;
                }
            }
        }
    } else {
        log::warn!("camera for frame {index} is outside the free space of the scene");
    }

    let noise = &spec.noise;
    if noise.depth_sigma > 0.0 {
        for z in depth.iter_mut().filter(|z| **z > 0.0) {
            let sigma = noise.depth_sigma * f64::from(*z) * f64::from(*z);
            let dz = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
            *z = (f64::from(*z) + dz).max(0.0) as f32;
        }
    }

    let mut labels = morph_instances(&gt, w, h, noise.mask_erosion);
    let instance_class = spec.instance_classes();
    let schema = spec.schema()?;
    if noise.label_flip_rate > 0.0 {
        let mut candidates: Vec<PanopticLabel> = schema.stuff_classes().map(PanopticLabel::Stuff).collect();
        let visible: BTreeSet<InstanceId> = labels.iter().filter_map(|l| l.instance()).collect();
        candidates.extend(visible.into_iter().map(PanopticLabel::Instance));
        flip_tiles(&mut labels, &gt, w, h, noise.flip_patch, noise.label_flip_rate, &candidates, &mut rng);
    }

    let mut areas: BTreeMap<InstanceId, usize> = BTreeMap::new();
    for id in labels.iter().filter_map(|l| l.instance()) {
        *areas.entry(id).or_default() += 1;
    }
    let detected: Vec<InstanceId> = areas.iter().filter(|(_, &a)| a >= noise.min_mask_area).map(|(&id, _)| id).collect();
    let mut local_ids: Vec<u32> = (1..=detected.len() as u32).collect();
    if noise.permute_ids {
        local_ids.shuffle(&mut rng);
        let offset = rng.gen_range(0..50u32);
        local_ids.iter_mut().for_each(|id| *id += offset);
    } else {
        local_ids = detected.iter().map(|id| id.0).collect();
    }
    let gt_to_local: BTreeMap<InstanceId, InstanceId> =
        detected.iter().zip(&local_ids).map(|(&g, &l)| (g, InstanceId(l))).collect();

    let thing_classes: Vec<ClassId> = schema.thing_classes().collect();
    let mut detections = Vec::with_capacity(detected.len());
    for &g in &detected {
        let class = instance_class[&g];
        let confidence = if noise.confidence[0] < noise.confidence[1] {
            rng.gen_range(noise.confidence[0]..=noise.confidence[1])
        } else {
            noise.confidence[0]
        };
        let others: Vec<ClassId> = thing_classes.iter().copied().filter(|&c| c != class).collect();
        let mut distribution = BTreeMap::new();
        if others.is_empty() || noise.class_noise == 0.0 {
            distribution.insert(class, 1.0);
        } else {
            distribution.insert(class, 1.0 - noise.class_noise);
            for c in others.iter() {
                distribution.insert(*c, noise.class_noise / others.len() as f64);
            }
        }
        detections.push(Detection { id: gt_to_local[&g], confidence, distribution });
    }
    detections.sort_by_key(|d| d.id);

    let mut class_map = vec![ClassId(0); n];
    let mut instance_map = vec![None; n];
    for i in 0..n {
        match labels[i] {
            PanopticLabel::Stuff(c) => class_map[i] = c,
            PanopticLabel::Instance(g) => {
                if let Some(&local) = gt_to_local.get(&g) {
                    class_map[i] = instance_class[&g];
                    instance_map[i] = Some(local);
                }
            }
            PanopticLabel::Unknown => {}
        }
    }

    let camera = CameraFrame::new(k, *pose, w, h, depth, color)?;
    let segmentation = SegmentationFrame { width: w, height: h, class_map, instance_map, detections };
    debug_assert!(segmentation.validate(&schema).is_ok());
    Ok(RenderedFrame {
        camera,
        segmentation,
        ground_truth: PanopticImage { width: w, height: h, labels: gt },
        local_to_gt: gt_to_local.into_iter().map(|(g, l)| (l, g)).collect(),
    })
}

/// Erode (positive) or dilate (negative) every instance mask. Eroded pixels
/// become unknown; dilation claims non-instance pixels for the lowest
/// neighbouring instance ID.
fn morph_instances(labels: &[PanopticLabel], w: usize, h: usize, amount: i32) -> Vec<PanopticLabel> {
    if amount == 0 {
        return labels.to_vec();
    }
    let r = amount.unsigned_abs() as i64;
    let at = |c: i64, r_: i64| -> Option<PanopticLabel> {
        (c >= 0 && r_ >= 0 && c < w as i64 && r_ < h as i64).then(|| labels[r_ as usize * w + c as usize])
    };
    let mut out = labels.to_vec();
    for row in 0..h as i64 {
        for col in 0..w as i64 {
            let me = labels[row as usize * w + col as usize];
            let window = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)));
            if amount > 0 {
                if me.instance().is_some() && window.clone().any(|(dx, dy)| at(col + dx, row + dy) != Some(me)) {
                    out[row as usize * w + col as usize] = PanopticLabel::Unknown;
                }
            } else if me.instance().is_none() && me != PanopticLabel::Unknown {
                if let Some(id) = window.filter_map(|(dx, dy)| at(col + dx, row + dy).and_then(|l| l.instance())).min() {
                    out[row as usize * w + col as usize] = PanopticLabel::Instance(id);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn flip_tiles(
    labels: &mut [PanopticLabel],
    gt: &[PanopticLabel],
    w: usize,
    h: usize,
    patch: usize,
    rate: f64,
    candidates: &[PanopticLabel],
    rng: &mut ChaCha8Rng,
) {
    for ty in (0..h).step_by(patch) {
        for tx in (0..w).step_by(patch) {
            if !rng.gen_bool(rate) {
                continue;
            }
            let center = gt[(ty + patch / 2).min(h - 1) * w + (tx + patch / 2).min(w - 1)];
            let choices: Vec<PanopticLabel> = candidates.iter().copied().filter(|&c| c != center).collect();
            let Some(&target) = choices.choose(rng) else { continue };
            for y in ty..(ty + patch).min(h) {
                for x in tx..(tx + patch).min(w) {
                    if gt[y * w + x] != PanopticLabel::Unknown {
                        labels[y * w + x] = target;
                    }
                }
            }
        }
    }
}
