//! Fully connected CRF over voxel panoptic labels.
//!
//! Nodes are observed voxels near the surface. Unary potentials come from the
//! label confidence stored during integration, pairwise potentials are a
//! Potts model with an appearance kernel (position and color) and a
//! smoothness kernel (position only). Inference is mean-field, either exact
//! over all pairs or with permutohedral-lattice filtering.

mod division;
pub mod lattice;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{BlockIndex, GlobalIndex, PanopticLabel, VolumetricMap};

pub use division::divide_map;
use lattice::Permutohedral;

pub const PROBABILITY_FLOOR: f64 = 1e-10;
pub const BRUTE_FORCE_MAX_NODES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfConfig {
    /// Weight of the appearance kernel.
    pub w1: f64,
    /// Weight of the smoothness kernel.
    pub w2: f64,
    /// Spatial bandwidth in meters.
    pub theta_alpha: f64,
    /// Color bandwidth in 8-bit color units.
    pub theta_beta: f64,
    pub iterations: usize,
    pub max_blocks_per_submap: usize,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            w1: 10.0,
            w2: 15.0,
            theta_alpha: 0.05,
            theta_beta: 20.0,
            iterations: 5,
            max_blocks_per_submap: 25,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::Config("kernel weights must be non-negative".into()));
        }
        if !(self.theta_alpha > 0.0 && self.theta_beta > 0.0) {
            return Err(Error::Config("kernel bandwidths must be positive".into()));
        }
        if self.max_blocks_per_submap == 0 {
            return Err(Error::Config("max_blocks_per_submap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfNode {
    pub global: GlobalIndex,
    pub position: Point3<f64>,
    /// 8-bit scale, not quantized.
    pub color: [f64; 3],
    pub label: PanopticLabel,
    pub label_weight: f64,
    pub weight: f64,
}

/// Unary row over `m` labels for a node whose current label sits at `current`.
pub fn build_unary(label_weight: f64, weight: f64, current: usize, m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::invalid(format!("unary needs at least two labels, got {m}")));
    }
    if !(weight > 0.0) {
        return Err(Error::invalid(format!("unary needs a positive TSDF weight, got {weight}")));
    }
    if current >= m {
        return Err(Error::invalid(format!("current label index {current} out of range for {m} labels")));
    }
    let p_current = (0.5 * (1.0 + label_weight / weight)).clamp(0.0, 1.0);
    let p_other = (1.0 - p_current) / (m - 1) as f64;
    Ok((0..m)
        .map(|l| {
            let p = if l == current { p_current } else { p_other };
            -p.max(PROBABILITY_FLOOR).ln()
        })
        .collect())
}

/// Appearance and smoothness kernel values `(k1, k2)` between two nodes.
pub fn pairwise_kernels(a: &CrfNode, b: &CrfNode, cfg: &CrfConfig) -> (f64, f64) {
    let dp2 = (a.position - b.position).norm_squared();
    let dc2: f64 = a.color.iter().zip(&b.color).map(|(x, y)| (x - y) * (x - y)).sum();
    let k2 = (-dp2 / (2.0 * cfg.theta_alpha * cfg.theta_alpha)).exp();
    let k1 = (-dp2 / (2.0 * cfg.theta_alpha * cfg.theta_alpha) - dc2 / (2.0 * cfg.theta_beta * cfg.theta_beta)).exp();
    (k1, k2)
}

/// One CRF inference problem.
#[derive(Clone, Debug)]
pub struct CrfSubmap {
    pub blocks: Vec<BlockIndex>,
    nodes: Vec<CrfNode>,
    labels: Vec<PanopticLabel>,
    current: Vec<usize>,
    /// `N × M`, empty when fewer than two labels are present.
    unary: Vec<f64>,
}

impl CrfSubmap {
    pub fn new(blocks: Vec<BlockIndex>, nodes: Vec<CrfNode>) -> Result<Self> {
        if let Some(n) = nodes.iter().find(|n| !(n.weight > 0.0)) {
            return Err(Error::invalid(format!("CRF node {:?} has non-positive weight", n.global)));
        }
        let mut labels: Vec<PanopticLabel> = nodes.iter().map(|n| n.label).collect();
        labels.sort_unstable();
        labels.dedup();
        let index: BTreeMap<PanopticLabel, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let current: Vec<usize> = nodes.iter().map(|n| index[&n.label]).collect();
        let m = labels.len();
        let mut unary = Vec::new();
        if m >= 2 {
            unary.reserve(nodes.len() * m);
            for (n, &c) in nodes.iter().zip(&current) {
                unary.extend(build_unary(n.label_weight, n.weight, c, m)?);
            }
        }
        Ok(CrfSubmap { blocks, nodes, labels, current, unary })
    }

    pub fn nodes(&self) -> &[CrfNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distinct labels, sorted.
    pub fn label_set(&self) -> &[PanopticLabel] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn unary(&self) -> &[f64] {
        &self.unary
    }

    fn current_labels(&self) -> Vec<PanopticLabel> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    fn position_features(&self, cfg: &CrfConfig) -> Vec<f64> {
        self.nodes
            .iter()
            .flat_map(|n| (n.position.coords / cfg.theta_alpha).iter().copied().collect::<Vec<_>>())
            .collect()
    }

    fn appearance_features(&self, cfg: &CrfConfig) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.nodes.len() * 6);
        for n in &self.nodes {
            f.extend((n.position.coords / cfg.theta_alpha).iter());
            f.extend(n.color.iter().map(|c| c / cfg.theta_beta));
        }
        f
    }
}

/// Final marginals and labels of a mean-field run.
#[derive(Clone, Debug)]
pub struct MeanFieldOutput {
    pub labels: Vec<PanopticLabel>,
    /// `N × M` marginals over the submap's label set.
    pub q: Vec<f64>,
}

fn softmax_neg(row: &mut [f64]) {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (-(*v - min)).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn argmax_labels(submap: &CrfSubmap, q: &[f64]) -> Vec<PanopticLabel> {
    let m = submap.labels.len();
    q.chunks(m)
        .zip(&submap.current)
        .map(|(row, &cur)| {
            let mut best = cur;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            submap.labels[best]
        })
        .collect()
}

/// Shared fixed-point loop; `message` fills `N × M` with `Σ_j Σ_m w_m k_m(i, j) Q_j`.
fn mean_field<F>(submap: &CrfSubmap, cfg: &CrfConfig, mut message: F) -> MeanFieldOutput
where
    F: FnMut(&[f64], &mut [f64]),
{
    let m = submap.labels.len();
    if m < 2 || submap.is_empty() {
        let q = if m == 1 { vec![1.0; submap.len()] } else { Vec::new() };
        return MeanFieldOutput { labels: submap.current_labels(), q };
    }
    let mut q = submap.unary.clone();
    q.chunks_mut(m).for_each(softmax_neg);
    let mut msg = vec![0.0; q.len()];
    for _ in 0..cfg.iterations {
        message(&q, &mut msg);
        for ((qrow, mrow), urow) in q.chunks_mut(m).zip(msg.chunks(m)).zip(submap.unary.chunks(m)) {
            let total: f64 = mrow.iter().sum();
            for l in 0..m {
                qrow[l] = urow[l] + (total - mrow[l]);
            }
            softmax_neg(qrow);
        }
    }
    MeanFieldOutput { labels: argmax_labels(submap, &q), q }
}

/// Exact mean-field with all `O(N²)` pairwise terms.
pub fn mean_field_brute(submap: &CrfSubmap, cfg: &CrfConfig) -> Result<MeanFieldOutput> {
    let n = submap.len();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::TooLarge { nodes: n, cap: BRUTE_FORCE_MAX_NODES });
    }
    let m = submap.labels.len();
    let pos = submap.position_features(cfg);
    let col: Vec<f64> = submap.nodes.iter().flat_map(|n| n.color.map(|c| c / cfg.theta_beta)).collect();
    let (w1, w2) = (cfg.w1, cfg.w2);
    Ok(mean_field(submap, cfg, |q, out| {
        out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            row.fill(0.0);
            let pi = &pos[3 * i..3 * i + 3];
            let ci = &col[3 * i..3 * i + 3];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let pj = &pos[3 * j..3 * j + 3];
                let dp2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2);
                if dp2 > 80.0 {
                    continue;
                }
                let cj = &col[3 * j..3 * j + 3];
                let dc2 = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
                let k2 = (-0.5 * dp2).exp();
                let k1 = k2 * (-0.5 * dc2).exp();
                let c = w1 * k1 + w2 * k2;
                for (o, qj) in row.iter_mut().zip(&q[j * m..(j + 1) * m]) {
                    *o += c * qj;
                }
            }
        });
    }))
}

/// Mean-field with messages from permutohedral-lattice Gaussian filtering.
pub fn mean_field_fast(submap: &CrfSubmap, cfg: &CrfConfig) -> MeanFieldOutput {
    let m = submap.labels.len();
    if m < 2 || submap.is_empty() || (cfg.w1 == 0.0 && cfg.w2 == 0.0) {
        return mean_field(submap, cfg, |_, out| out.fill(0.0));
    }
    let appearance = (cfg.w1 > 0.0).then(|| Permutohedral::new(&submap.appearance_features(cfg), 6));
    let smoothness = (cfg.w2 > 0.0).then(|| Permutohedral::new(&submap.position_features(cfg), 3));
    let mut scratch = vec![0.0; submap.len() * m];
    mean_field(submap, cfg, |q, out| {
        out.fill(0.0);
        for (lat, w) in [(&appearance, cfg.w1), (&smoothness, cfg.w2)] {
            if let Some(lat) = lat {
                lat.filter(q, m, &mut scratch);
                for (o, s) in out.iter_mut().zip(&scratch) {
                    *o += w * s;
                }
            }
        }
    })
}

/// Inference backend selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Brute,
    Lattice,
}

/// Collect CRF nodes of the given blocks: observed voxels with `|tsdf| < truncation`.
pub fn build_submap(map: &VolumetricMap, blocks: &[BlockIndex]) -> Result<CrfSubmap> {
    let trunc = map.truncation() as f32;
    let mut nodes = Vec::new();
    for &b in blocks {
        let Some(block) = map.block(b) else { continue };
        for (i, v) in block.voxels().iter().enumerate() {
            if v.weight > 0.0 && v.tsdf.abs() < trunc {
                let global = block.global(i);
                nodes.push(CrfNode {
                    global,
                    position: map.global_center(global),
                    color: v.color.map(f64::from),
                    label: v.label,
                    label_weight: f64::from(v.label_weight),
                    weight: f64::from(v.weight),
                });
            }
        }
    }
    CrfSubmap::new(blocks.to_vec(), nodes)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegularizationStats {
    pub submaps: usize,
    /// Submaps with fewer than two labels.
    pub submaps_skipped: usize,
    pub nodes: usize,
    pub labels_changed: usize,
    /// Label count scope used for the unary approximation.
    pub label_count_scope: &'static str,
    pub max_labels_per_submap: usize,
    #[serde(skip)]
    pub elapsed_ms: f64,
}

/// Divide the map, run inference per submap and write argmax labels back.
/// Label weights are left untouched.
pub fn regularize(map: &mut VolumetricMap, cfg: &CrfConfig) -> Result<RegularizationStats> {
    regularize_with(map, cfg, Backend::Lattice)
}

pub fn regularize_with(map: &mut VolumetricMap, cfg: &CrfConfig, backend: Backend) -> Result<RegularizationStats> {
    cfg.validate()?;
    let start = Instant::now();
    let groups = divide_map(map, cfg.max_blocks_per_submap);
    let snapshot: &VolumetricMap = map;
    let results: Vec<Result<(CrfSubmap, MeanFieldOutput)>> = groups
        .par_iter()
        .map(|g| {
            let submap = build_submap(snapshot, g)?;
            let out = match backend {
                Backend::Brute => mean_field_brute(&submap, cfg)?,
                Backend::Lattice => mean_field_fast(&submap, cfg),
            };
            Ok((submap, out))
        })
        .collect();

    let mut stats = RegularizationStats {
        submaps: groups.len(),
        label_count_scope: "per-submap",
        ..Default::default()
    };
    for r in results {
        let (submap, out) = r?;
        stats.nodes += submap.len();
        stats.max_labels_per_submap = stats.max_labels_per_submap.max(submap.label_count());
        if submap.label_count() < 2 {
            stats.submaps_skipped += 1;
            continue;
        }
        for (node, &label) in submap.nodes.iter().zip(&out.labels) {
            if label != node.label {
                if let Some(v) = map.voxel_mut(node.global) {
                    v.label = label;
                    stats.labels_changed += 1;
                }
            }
        }
    }
    stats.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(stats)
}
