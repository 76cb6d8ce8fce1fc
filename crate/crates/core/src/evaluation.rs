//! Vertex-level panoptic quality and semantic IoU.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::Point3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{ClassId, LabelSchema, PanopticLabel};
use crate::meshing::LabeledMesh;

pub const MIN_THING_VERTICES: usize = 100;

/// Ground-truth (or predicted) labels attached to points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPointSet {
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<PanopticLabel>,
    /// Semantic class per point, `None` for unknown.
    pub classes: Vec<Option<ClassId>>,
}

impl LabeledPointSet {
    pub fn new(points: Vec<Point3<f64>>, labels: Vec<PanopticLabel>, classes: Vec<Option<ClassId>>) -> Result<Self> {
        if points.len() != labels.len() || points.len() != classes.len() {
            return Err(Error::invalid(format!(
                "point set sizes differ: {} points, {} labels, {} classes",
                points.len(),
                labels.len(),
                classes.len()
            )));
        }
        Ok(LabeledPointSet { points, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Point3<f64>, label: PanopticLabel, class: Option<ClassId>) {
        self.points.push(point);
        self.labels.push(label);
        self.classes.push(class);
    }
}

/// Transfer mesh labels onto ground-truth points: each point takes the nearest
/// vertex within `radius`, or unknown. Ties go to the lower vertex index.
pub fn associate_vertices(pred: &LabeledMesh, gt: &LabeledPointSet, radius: f64) -> Result<LabeledPointSet> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("association radius must be positive, got {radius}")));
    }
    let cell = |p: &Point3<f64>| [(p.x / radius).floor() as i64, (p.y / radius).floor() as i64, (p.z / radius).floor() as i64];
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let verts: Vec<Point3<f64>> = pred
        .vertices
        .iter()
        .map(|v| Point3::new(f64::from(v[0]), f64::from(v[1]), f64::from(v[2])))
        .collect();
    for (i, v) in verts.iter().enumerate() {
        grid.entry(cell(v)).or_default().push(i as u32);
    }
    let r2 = radius * radius;
    let mut out = LabeledPointSet::default();
    for p in &gt.points {
        let c = cell(p);
        let mut best: Option<(f64, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                    for &i in ids {
                        let d2 = (verts[i as usize] - p).norm_squared();
                        if d2 <= r2 && best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, i)) => out.push(*p, pred.labels[i as usize], pred.classes[i as usize]),
            None => out.push(*p, PanopticLabel::Unknown, None),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassQuality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PanopticQuality {
    /// Means over classes present in the ground truth; `None` when it has no labeled points.
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub pq_things: Option<f64>,
    pub pq_stuff: Option<f64>,
    pub per_class: BTreeMap<ClassId, ClassQuality>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Segment {
    Stuff,
    Instance(u32),
}

type SegmentKey = (ClassId, Segment);

fn segment(label: PanopticLabel, class: Option<ClassId>) -> Option<(ClassId, Segment)> {
    match (label, class) {
        (PanopticLabel::Stuff(c), _) => Some((c, Segment::Stuff)),
        (PanopticLabel::Instance(id), Some(c)) => Some((c, Segment::Instance(id.0))),
        _ => None,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Panoptic quality over aligned per-point labels.
///
/// Ground-truth unknown points are excluded. Predicted thing segments with
/// fewer than `min_vertices` points are dropped before matching.
pub fn panoptic_quality(
    pred: &LabeledPointSet,
    gt: &LabeledPointSet,
    schema: &LabelSchema,
    min_vertices: usize,
) -> Result<PanopticQuality> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("{} predicted vs {} ground-truth points", pred.len(), gt.len())));
    }
    let mut gt_area: BTreeMap<(ClassId, Segment), usize> = BTreeMap::new();
    let mut pred_area: BTreeMap<(ClassId, Segment), usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(SegmentKey, SegmentKey), usize> = BTreeMap::new();
    for i in 0..gt.len() {
        let Some(g) = segment(gt.labels[i], gt.classes[i]) else { continue };
        *gt_area.entry(g).or_default() += 1;
        if let Some(p) = segment(pred.labels[i], pred.classes[i]) {
            *pred_area.entry(p).or_default() += 1;
            if p.0 == g.0 {
                *overlap.entry((g, p)).or_default() += 1;
            }
        }
    }
    pred_area.retain(|(_, s), area| matches!(s, Segment::Stuff) || *area >= min_vertices);

    let mut report = PanopticQuality::default();
    let gt_classes: Vec<ClassId> = {
        let mut c: Vec<ClassId> = gt_area.keys().map(|k| k.0).collect();
        c.dedup();
        c
    };
    for &class in &gt_classes {
        let mut tp = 0usize;
        let mut iou_sum = 0.0;
        let mut matched_pred = 0usize;
        for (&(g, p), &inter) in overlap.range(((class, Segment::Stuff), (ClassId(0), Segment::Stuff))..) {
            if g.0 != class {
                break;
            }
            let Some(&pa) = pred_area.get(&p) else { continue };
            let union = gt_area[&g] + pa - inter;
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                tp += 1;
                matched_pred += 1;
                iou_sum += iou;
            }
        }
        let n_gt = gt_area.keys().filter(|k| k.0 == class).count();
        let n_pred = pred_area.keys().filter(|k| k.0 == class).count();
        let fp = n_pred - matched_pred;
        let fn_ = n_gt - tp;
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let sq = if tp > 0 { iou_sum / tp as f64 } else { 0.0 };
        let rq = if denom > 0.0 { tp as f64 / denom } else { 0.0 };
        let pq = sq * rq;
        report.per_class.insert(class, ClassQuality { pq, sq, rq, tp, fp, fn_ });
    }
    report.pq = mean(report.per_class.values().map(|q| q.pq));
    report.sq = mean(report.per_class.values().map(|q| q.sq));
    report.rq = mean(report.per_class.values().map(|q| q.rq));
    report.pq_things = mean(report.per_class.iter().filter(|(c, _)| schema.is_thing(**c)).map(|(_, q)| q.pq));
    report.pq_stuff = mean(report.per_class.iter().filter(|(c, _)| schema.is_stuff(**c)).map(|(_, q)| q.pq));
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SemanticIou {
    /// Every class present in either labeling.
    pub per_class: BTreeMap<ClassId, f64>,
    /// Mean over classes present in the ground truth.
    pub mean: Option<f64>,
}

/// Per-class IoU over points with a known ground-truth class.
pub fn semantic_iou(pred: &[Option<ClassId>], gt: &[Option<ClassId>]) -> Result<SemanticIou> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("{} predicted vs {} ground-truth classes", pred.len(), gt.len())));
    }
    let mut inter: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut gt_count: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<ClassId, usize> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        let Some(g) = g else { continue };
        *gt_count.entry(*g).or_default() += 1;
        if let Some(p) = p {
            *pred_count.entry(*p).or_default() += 1;
            if p == g {
                *inter.entry(*g).or_default() += 1;
            }
        }
    }
    let mut out = SemanticIou::default();
    for &c in gt_count.keys().chain(pred_count.keys()) {
        let i = inter.get(&c).copied().unwrap_or(0);
        let u = gt_count.get(&c).copied().unwrap_or(0) + pred_count.get(&c).copied().unwrap_or(0) - i;
        out.per_class.insert(c, if u > 0 { i as f64 / u as f64 } else { 0.0 });
    }
    out.mean = mean(gt_count.keys().map(|c| out.per_class[c]));
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub points: usize,
    pub matched_points: usize,
    pub panoptic: PanopticQuality,
    pub semantic: SemanticIou,
}

/// Associate, then compute both metric families.
pub fn evaluate_mesh(
    mesh: &LabeledMesh,
    gt: &LabeledPointSet,
    schema: &LabelSchema,
    radius: f64,
    min_vertices: usize,
) -> Result<EvaluationReport> {
    let pred = associate_vertices(mesh, gt, radius)?;
    Ok(EvaluationReport {
        points: gt.len(),
        matched_points: pred.labels.iter().filter(|l| !l.is_unknown()).count(),
        panoptic: panoptic_quality(&pred, gt, schema, min_vertices)?,
        semantic: semantic_iou(&pred.classes, &gt.classes)?,
    })
}

/// Plain-text table of per-class metrics.
pub fn format_report(report: &EvaluationReport, schema: &LabelSchema) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>6} {:>6} {:>6} {:>6} {:>4} {:>4} {:>4}", "class", "PQ", "SQ", "RQ", "IoU", "TP", "FP", "FN");
    for info in schema.classes() {
        let q = report.panoptic.per_class.get(&info.id);
        let iou = report.semantic.per_class.get(&info.id).copied();
        if q.is_none() && iou.is_none() {
            continue;
        }
        let q = q.copied().unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>6} {:>6} {:>6} {:>4} {:>4} {:>4}",
            info.name,
            pct(Some(q.pq)),
            pct(Some(q.sq)),
            pct(Some(q.rq)),
            pct(iou),
            q.tp,
            q.fp,
            q.fn_
        );
    }
    let p = &report.panoptic;
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>6} {:>6} {:>6}",
        "mean",
        pct(p.pq),
        pct(p.sq),
        pct(p.rq),
        pct(report.semantic.mean)
    );
    let _ = writeln!(s, "PQ things {}  PQ stuff {}", pct(p.pq_things), pct(p.pq_stuff));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{ClassInfo, ClassKind, InstanceId};
    use proptest::prelude::*;

    const WALL: ClassId = ClassId(1);
    const FLOOR: ClassId = ClassId(2);
    const CHAIR: ClassId = ClassId(3);

    fn schema() -> LabelSchema {
        LabelSchema::new([
            ClassInfo { id: WALL, name: "wall".into(), kind: ClassKind::Stuff },
            ClassInfo { id: FLOOR, name: "floor".into(), kind: ClassKind::Stuff },
            ClassInfo { id: CHAIR, name: "chair".into(), kind: ClassKind::Thing },
        ])
        .unwrap()
    }

    fn points(labels: &[(PanopticLabel, Option<ClassId>)]) -> LabeledPointSet {
        LabeledPointSet::new(
            (0..labels.len()).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            labels.iter().map(|l| l.0).collect(),
            labels.iter().map(|l| l.1).collect(),
        )
        .unwrap()
    }

    fn inst(id: u32) -> (PanopticLabel, Option<ClassId>) {
        (PanopticLabel::Instance(InstanceId(id)), Some(CHAIR))
    }

    fn stuff(c: ClassId) -> (PanopticLabel, Option<ClassId>) {
        (PanopticLabel::Stuff(c), Some(c))
    }

    #[test]
    fn perfect_prediction() {
        let mut l = vec![stuff(WALL); 50];
        l.extend(vec![inst(1); 120]);
        l.extend(vec![inst(2); 130]);
        let gt = points(&l);
        let q = panoptic_quality(&gt, &gt, &schema(), 100).unwrap();
        for c in q.per_class.values() {
            assert_eq!((c.pq, c.sq, c.rq), (1.0, 1.0, 1.0));
        }
        assert_eq!(q.pq, Some(1.0));
    }

    #[test]
    fn missed_instance() {
        let gt = points(&vec![inst(1); 150]);
        let pred = points(&vec![(PanopticLabel::Unknown, None); 150]);
        let q = panoptic_quality(&pred, &gt, &schema(), 100).unwrap();
        let c = q.per_class[&CHAIR];
        assert_eq!((c.pq, c.rq, c.fn_), (0.0, 0.0, 1));
    }

    #[test]
    fn partial_overlap_example() {
        // GT 200 points, prediction covers 150 of them plus 50 extra: IoU 150 / 250
        let mut g = vec![inst(1); 200];
        g.extend(vec![stuff(WALL); 50]);
        let mut p = vec![(PanopticLabel::Unknown, None); 50];
        p.extend(vec![inst(7); 150]);
        p.extend(vec![inst(7); 50]);
        let q = panoptic_quality(&points(&p), &points(&g), &schema(), 100).unwrap();
        let c = q.per_class[&CHAIR];
        assert!((c.pq - 0.6).abs() < 1e-12 && (c.sq - 0.6).abs() < 1e-12 && c.rq == 1.0);
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn small_predicted_things_ignored() {
        let mut g = vec![inst(1); 300];
        g.extend(vec![stuff(WALL); 60]);
        let mut p = vec![inst(5); 300];
        p.extend(vec![inst(6); 60]);
        let q = panoptic_quality(&points(&p), &points(&g), &schema(), 100).unwrap();
        assert_eq!(q.per_class[&CHAIR].fp, 0);
        let q = panoptic_quality(&points(&p), &points(&g), &schema(), 10).unwrap();
        assert_eq!(q.per_class[&CHAIR].fp, 1);
    }

    #[test]
    fn unknown_gt_points_excluded() {
        let mut g = vec![stuff(WALL); 100];
        g.extend(vec![(PanopticLabel::Unknown, None); 100]);
        let p = vec![stuff(WALL); 200];
        let q = panoptic_quality(&points(&p), &points(&g), &schema(), 100).unwrap();
        assert_eq!(q.per_class[&WALL].pq, 1.0);
        let empty = points(&[(PanopticLabel::Unknown, None)]);
        assert_eq!(panoptic_quality(&empty, &empty, &schema(), 100).unwrap().pq, None);
    }

    #[test]
    fn semantic_examples() {
        let gt: Vec<Option<ClassId>> = [vec![Some(WALL); 50], vec![Some(FLOOR); 50]].concat();
        let pred = vec![Some(WALL); 100];
        let s = semantic_iou(&pred, &gt).unwrap();
        assert_eq!(s.per_class[&WALL], 0.5);
        assert_eq!(s.per_class[&FLOOR], 0.0);
        assert_eq!(s.mean, Some(0.25));
        assert!(!s.per_class.contains_key(&CHAIR));
        assert_eq!(semantic_iou(&gt, &gt).unwrap().mean, Some(1.0));
    }

    fn mesh_from(points: &[[f32; 3]], labels: &[PanopticLabel]) -> LabeledMesh {
        LabeledMesh {
            vertices: points.to_vec(),
            triangles: vec![],
            colors: vec![[0; 3]; points.len()],
            labels: labels.to_vec(),
            classes: labels.iter().map(|l| if let PanopticLabel::Stuff(c) = l { Some(*c) } else { None }).collect(),
        }
    }

    #[test]
    fn association_radius() {
        let gt = points(&[stuff(WALL), stuff(FLOOR)]);
        let verts: Vec<[f32; 3]> = gt.points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
        let labels = vec![PanopticLabel::Stuff(WALL), PanopticLabel::Stuff(FLOOR)];
        let r = 0.1;
        let same = associate_vertices(&mesh_from(&verts, &labels), &gt, r).unwrap();
        assert_eq!(same.labels, labels);
        let shifted: Vec<[f32; 3]> = verts.iter().map(|v| [v[0], v[1] + 0.05, v[2]]).collect();
        assert_eq!(associate_vertices(&mesh_from(&shifted, &labels), &gt, r).unwrap().labels, labels);
        let far: Vec<[f32; 3]> = verts.iter().map(|v| [v[0], v[1] + 0.2, v[2]]).collect();
        let out = associate_vertices(&mesh_from(&far, &labels), &gt, r).unwrap();
        assert!(out.labels.iter().all(|l| l.is_unknown()));
        let out = associate_vertices(&LabeledMesh::default(), &gt, r).unwrap();
        assert!(out.labels.iter().all(|l| l.is_unknown()));
        assert!(associate_vertices(&LabeledMesh::default(), &gt, 0.0).is_err());
    }

    fn label_strategy() -> impl Strategy<Value = (PanopticLabel, Option<ClassId>)> {
        prop_oneof![
            Just((PanopticLabel::Unknown, None)),
            Just(stuff(WALL)),
            Just(stuff(FLOOR)),
            (1u32..5).prop_map(inst),
        ]
    }

    proptest! {
        #[test]
        fn identities_and_ranges(
            pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..400),
            shift in 1u32..50,
        ) {
            let p: Vec<_> = pairs.iter().map(|x| x.0).collect();
            let g: Vec<_> = pairs.iter().map(|x| x.1).collect();
            let q = panoptic_quality(&points(&p), &points(&g), &schema(), 3).unwrap();
            for c in q.per_class.values() {
                prop_assert!((c.pq - c.sq * c.rq).abs() < 1e-12);
                for v in [c.pq, c.sq, c.rq] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let relabel = |v: &Vec<(PanopticLabel, Option<ClassId>)>| -> Vec<_> {
                v.iter().map(|&(l, c)| match l {
                    PanopticLabel::Instance(i) => (PanopticLabel::Instance(InstanceId(100 + shift * 7 - i.0)), c),
                    _ => (l, c),
                }).collect()
            };
            let q2 = panoptic_quality(&points(&relabel(&p)), &points(&g), &schema(), 3).unwrap();
            prop_assert_eq!(&q, &q2);
            let q3 = panoptic_quality(&points(&p), &points(&relabel(&g)), &schema(), 3).unwrap();
            prop_assert_eq!(&q, &q3);
            let s = semantic_iou(&p.iter().map(|x| x.1).collect::<Vec<_>>(), &g.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
            for v in s.per_class.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
