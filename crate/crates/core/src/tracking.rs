//! Instance ID tracking against the live map.
//!
//! Detector instance IDs are only meaningful within a single frame. Each
//! frame is matched against a reference label image rendered from the map
//! by IoU, and matched instances inherit the persistent map ID.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::frontend::PanopticImage;
use crate::map::{InstanceId, PanopticLabel, VolumetricMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// A raw instance is associated with a map instance only if their IoU
    /// strictly exceeds this value.
    pub iou_threshold: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig { iou_threshold: 0.25 }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!("iou_threshold {} outside [0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// Label image obtained by looking up the map label at each pixel's
/// back-projected depth point.
pub fn render_reference_labels(map: &VolumetricMap, cam: &CameraFrame) -> PanopticImage {
    let mut out = PanopticImage::unknown(cam.width, cam.height);
    if map.is_empty() {
        return out;
    }
    for row in 0..cam.height {
        for col in 0..cam.width {
            if let Some(p) = cam.back_project(col, row) {
                out.labels[row * cam.width + col] = map.label_at(&p);
            }
        }
    }
    out
}

/// IoU between every (reference instance, raw instance) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct IouTable {
    /// Reference instance IDs, ascending.
    pub reference: Vec<InstanceId>,
    /// Raw instance IDs, ascending.
    pub raw: Vec<InstanceId>,
    /// Row-major `reference.len() × raw.len()`.
    values: Vec<f64>,
    /// Pixel area of each raw instance, aligned with `raw`.
    pub raw_areas: Vec<usize>,
}

impl IouTable {
    pub fn get(&self, reference: InstanceId, raw: InstanceId) -> Option<f64> {
        let r = self.reference.binary_search(&reference).ok()?;
        let c = self.raw.binary_search(&raw).ok()?;
        Some(self.values[r * self.raw.len() + c])
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.raw.len() + c]
    }
}

pub fn compute_iou_matrix(raw: &PanopticImage, reference: &PanopticImage) -> Result<IouTable> {
    raw.check_same_size(reference, "reference label image")?;
    let raw_areas = raw.instance_areas();
    let ref_areas = reference.instance_areas();
    let mut intersections: HashMap<(InstanceId, InstanceId), usize> = HashMap::new();
    for (a, b) in reference.labels.iter().zip(&raw.labels) {
        if let (Some(r), Some(z)) = (a.instance(), b.instance()) {
            *intersections.entry((r, z)).or_insert(0) += 1;
        }
    }
    let reference_ids: Vec<_> = ref_areas.keys().copied().collect();
    let raw_ids: Vec<_> = raw_areas.keys().copied().collect();
    let mut values = Vec::with_capacity(reference_ids.len() * raw_ids.len());
    for (r, &ra) in &ref_areas {
        for (z, &za) in &raw_areas {
            let inter = intersections.get(&(*r, *z)).copied().unwrap_or(0);
            let union = ra + za - inter;
            values.push(inter as f64 / union as f64);
        }
    }
    Ok(IouTable {
        reference: reference_ids,
        raw: raw_ids,
        values,
        raw_areas: raw_areas.into_values().collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResult {
    /// Consistency-resolved labels: stuff passes through, instances carry map IDs.
    pub resolved: PanopticImage,
    /// Frame-local instance ID → map instance ID.
    pub assignment: BTreeMap<InstanceId, InstanceId>,
    /// Raw instances that received a freshly allocated map ID.
    pub new_instances: Vec<InstanceId>,
}

/// Associate raw instances with reference instances.
///
/// Raw instances are visited in descending mask area (ties: ascending ID).
/// Each takes the reference instance of maximal IoU (ties: ascending ID) if
/// that IoU exceeds the threshold and the reference instance has not been
/// taken by a larger mask; otherwise it gets a new map ID.
pub fn track_labels(
    raw: &PanopticImage,
    reference: &PanopticImage,
    map: &mut VolumetricMap,
    cfg: &TrackingConfig,
) -> Result<TrackingResult> {
    let table = compute_iou_matrix(raw, reference)?;
    let mut order: Vec<usize> = (0..table.raw.len()).collect();
    order.sort_by(|&a, &b| table.raw_areas[b].cmp(&table.raw_areas[a]).then(table.raw[a].cmp(&table.raw[b])));

    let mut consumed = BTreeSet::new();
    let mut assignment = BTreeMap::new();
    let mut new_instances = Vec::new();
    for c in order {
        let z = table.raw[c];
        let mut best: Option<(usize, f64)> = None;
        for r in 0..table.reference.len() {
            let u = table.at(r, c);
            if best.is_none_or(|(_, b)| u > b) {
                best = Some((r, u));
            }
        }
        let matched = best
            .filter(|&(r, u)| u > cfg.iou_threshold && !consumed.contains(&r))
            .map(|(r, _)| r);
        let target = match matched {
            Some(r) => {
                consumed.insert(r);
                table.reference[r]
            }
            None => {
                new_instances.push(z);
                map.allocate_instance_id()
            }
        };
        assignment.insert(z, target);
    }

    let labels = raw
        .labels
        .iter()
        .map(|&l| match l {
            PanopticLabel::Stuff(_) => l,
            PanopticLabel::Instance(z) => PanopticLabel::Instance(assignment[&z]),
            PanopticLabel::Unknown => PanopticLabel::Unknown,
        })
        .collect();
    Ok(TrackingResult {
        resolved: PanopticImage {
            width: raw.width,
            height: raw.height,
            labels,
        },
        assignment,
        new_instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::map::{ClassId, MapConfig};
    use nalgebra::{Isometry3, Point3, Vector3};

    fn image(width: usize, labels: Vec<PanopticLabel>) -> PanopticImage {
        PanopticImage { width, height: labels.len() / width, labels }
    }

    fn inst(z: u32) -> PanopticLabel {
        PanopticLabel::Instance(InstanceId(z))
    }

    const U: PanopticLabel = PanopticLabel::Unknown;

    /// 20×20 image with instance `z` covering `cols × rows` starting at (`c0`, `r0`).
    fn rect(z: u32, c0: usize, r0: usize, cols: usize, rows: usize) -> Vec<(usize, PanopticLabel)> {
        let mut out = Vec::new();
        for r in r0..r0 + rows {
            for c in c0..c0 + cols {
                out.push((r * 20 + c, inst(z)));
            }
        }
        out
    }

    fn paint(parts: &[Vec<(usize, PanopticLabel)>]) -> PanopticImage {
        let mut labels = vec![U; 400];
        for part in parts {
            for &(i, l) in part {
                labels[i] = l;
            }
        }
        image(20, labels)
    }

    fn fresh_map() -> VolumetricMap {
        VolumetricMap::new(MapConfig::default()).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = image(2, vec![inst(1), inst(1), U, U]);
        let t = compute_iou_matrix(&a, &a).unwrap();
        assert_eq!(t.get(InstanceId(1), InstanceId(1)), Some(1.0));

        let b = image(2, vec![U, U, inst(2), inst(2)]);
        let t = compute_iou_matrix(&a, &b).unwrap();
        assert_eq!(t.get(InstanceId(2), InstanceId(1)), Some(0.0));

        // 100 px vs 100 px, overlapping 50 px
        let raw = paint(&[rect(1, 0, 0, 10, 10)]);
        let reference = paint(&[rect(9, 5, 0, 10, 10)]);
        let t = compute_iou_matrix(&raw, &reference).unwrap();
        assert!((t.get(InstanceId(9), InstanceId(1)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let a = PanopticImage::unknown(3, 2);
        let b = PanopticImage::unknown(2, 3);
        assert!(compute_iou_matrix(&a, &b).is_err());
    }

    #[test]
    fn matched_instance_inherits_reference_id() {
        let mut map = fresh_map();
        for _ in 0..5 {
            map.allocate_instance_id();
        }
        let raw = paint(&[rect(1, 0, 0, 10, 10)]);
        let reference = paint(&[rect(4, 0, 0, 10, 9)]);
        let out = track_labels(&raw, &reference, &mut map, &TrackingConfig::default()).unwrap();
        assert_eq!(out.assignment, [(InstanceId(1), InstanceId(4))].into());
        assert!(out.new_instances.is_empty());
        assert_eq!(map.peek_next_instance_id(), InstanceId(6));
    }

    #[test]
    fn unmatched_instance_gets_new_id() {
        let mut map = fresh_map();
        let raw = paint(&[rect(1, 0, 0, 10, 10)]);
        let reference = paint(&[]);
        let out = track_labels(&raw, &reference, &mut map, &TrackingConfig::default()).unwrap();
        assert_eq!(out.assignment, [(InstanceId(1), InstanceId(1))].into());
        assert_eq!(out.new_instances, vec![InstanceId(1)]);
        assert_eq!(out.resolved.labels[0], inst(1));
    }

    #[test]
    fn exclusive_association_goes_to_larger_mask() {
        let mut map = fresh_map();
        for _ in 0..7 {
            map.allocate_instance_id();
        }
        // reference instance 7 covers 10×10; raw 1 overlaps 60 px of it (IoU 0.6),
        // raw 2 is smaller and overlaps with IoU 0.5.
        let reference = paint(&[rect(7, 0, 0, 10, 10)]);
        let raw = paint(&[rect(1, 0, 0, 10, 6), rect(2, 0, 6, 10, 4)]);
        let table = compute_iou_matrix(&raw, &reference).unwrap();
        assert!((table.get(InstanceId(7), InstanceId(1)).unwrap() - 0.6).abs() < 1e-12);
        assert!((table.get(InstanceId(7), InstanceId(2)).unwrap() - 0.4).abs() < 1e-12);

        let raw = paint(&[rect(2, 0, 0, 10, 6), rect(1, 0, 6, 10, 4)]);
        let out = track_labels(&raw, &reference, &mut map, &TrackingConfig { iou_threshold: 0.3 }).unwrap();
        assert_eq!(out.assignment[&InstanceId(2)], InstanceId(7));
        assert_eq!(out.assignment[&InstanceId(1)], InstanceId(8));
    }

    /// Enumerate every processing order consistent with the rule and check
    /// the greedy result on small random cases.
    #[test]
    fn greedy_rule_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut raw = vec![U; 36];
            let mut reference = vec![U; 36];
            for px in 0..36 {
                if rng.gen_bool(0.7) {
                    raw[px] = inst(rng.gen_range(1..4));
                }
                if rng.gen_bool(0.7) {
                    reference[px] = inst(rng.gen_range(10..13));
                }
            }
            let raw = image(6, raw);
            let reference = image(6, reference);
            let mut map = fresh_map();
            for _ in 0..20 {
                map.allocate_instance_id();
            }
            let cfg = TrackingConfig { iou_threshold: 0.2 };
            let out = track_labels(&raw, &reference, &mut map, &cfg).unwrap();

            // independent oracle: recount IoU directly from pixel sets
            let areas = raw.instance_areas();
            let mut order: Vec<_> = areas.iter().map(|(z, a)| (*a, *z)).collect();
            order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let refs: BTreeSet<_> = reference.labels.iter().filter_map(|l| l.instance()).collect();
            let mut taken = BTreeSet::new();
            let mut next = 21;
            for (_, z) in order {
                let mut best = None;
                for &r in &refs {
                    let a: BTreeSet<usize> = (0..36).filter(|&i| reference.labels[i] == inst(r.0)).collect();
                    let b: BTreeSet<usize> = (0..36).filter(|&i| raw.labels[i] == inst(z.0)).collect();
                    let u = a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
                    if best.is_none_or(|(_, bu)| u > bu) {
                        best = Some((r, u));
                    }
                }
                let expect = match best {
                    Some((r, u)) if u > 0.2 && !taken.contains(&r) => {
                        taken.insert(r);
                        r
                    }
                    _ => {
                        next += 1;
                        InstanceId(next - 1)
                    }
                };
                assert_eq!(out.assignment[&z], expect);
            }
            let targets: BTreeSet<_> = out.assignment.values().collect();
            assert_eq!(targets.len(), out.assignment.len(), "assignment must be injective");
        }
    }

    #[test]
    fn threshold_above_one_always_allocates() {
        let mut map = fresh_map();
        let raw = paint(&[rect(1, 0, 0, 5, 5), rect(2, 10, 10, 5, 5)]);
        let out = track_labels(&raw, &raw.clone(), &mut map, &TrackingConfig { iou_threshold: 1.0 }).unwrap();
        assert_eq!(out.new_instances.len(), 2);
    }

    #[test]
    fn stuff_passes_through() {
        let mut map = fresh_map();
        let wall = PanopticLabel::Stuff(ClassId(1));
        let raw = image(3, vec![wall, inst(5), U]);
        let out = track_labels(&raw, &PanopticImage::unknown(3, 1), &mut map, &TrackingConfig::default()).unwrap();
        assert_eq!(out.resolved.labels, vec![wall, inst(1), U]);
    }

    fn camera(width: usize, height: usize, depth: f32) -> CameraFrame {
        let k = Intrinsics { fx: 40.0, fy: 40.0, cx: (width as f64 - 1.0) / 2.0, cy: (height as f64 - 1.0) / 2.0 };
        CameraFrame::new(k, Isometry3::identity(), width, height, vec![depth; width * height], vec![[0; 3]; width * height])
            .unwrap()
    }

    #[test]
    fn reference_rendering() {
        let map = fresh_map();
        let cam = camera(5, 5, 1.0);
        assert!(render_reference_labels(&map, &cam).labels.iter().all(|l| l.is_unknown()));

        // a labeled voxel at a known point; camera at the origin looking down +z
        let mut map = fresh_map();
        let target = Point3::new(0.05, -0.02, 1.0);
        let g = map.world_to_global(&target);
        let (b, _) = map.split_global(g);
        map.get_or_allocate_block(b).unwrap();
        map.voxel_mut(g).unwrap().label = inst(3);

        // pixel whose ray passes through the target at depth 1.0
        let k = Intrinsics { fx: 40.0, fy: 40.0, cx: 2.0, cy: 2.0 };
        let (u, v) = k.project(&target).unwrap();
        let k = Intrinsics { cx: 2.0 - (u - 2.0), cy: 2.0 - (v - 2.0), ..k };
        let (u, v) = k.project(&target).unwrap();
        assert!((u - 2.0).abs() < 1e-9 && (v - 2.0).abs() < 1e-9);
        let mut cam = camera(5, 5, 1.0);
        cam.intrinsics = k;
        cam.depth[12] = 1.0;
        cam.depth[0] = 0.0;
        let out = render_reference_labels(&map, &cam);
        assert_eq!(out.get(2, 2), inst(3));
        assert_eq!(out.get(0, 0), U);

        // translated camera
        let pose = Isometry3::translation(1.0, 0.0, 0.0);
        cam.pose = pose;
        let shifted = pose.inverse() * target;
        assert!(shifted.coords.dot(&Vector3::z()) > 0.0);
        assert_eq!(render_reference_labels(&map, &cam).get(2, 2), U);
    }
}
