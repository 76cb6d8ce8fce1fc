//! Confidence-weighted thing-class evidence per map instance.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frontend::SegmentationFrame;
use crate::map::{ClassId, InstanceId};

/// Running sums for one instance: `Σ p(O)·p(l|O)` per class and `Σ p(O)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClassEvidence {
    pub numerator: BTreeMap<ClassId, f64>,
    pub denominator: f64,
}

impl ClassEvidence {
    pub fn add(&mut self, confidence: f64, distribution: &BTreeMap<ClassId, f64>) {
        for (&class, &p) in distribution {
            *self.numerator.entry(class).or_insert(0.0) += confidence * p;
        }
        self.denominator += confidence;
    }

    /// Normalized class distribution, `None` while no confidence mass has arrived.
    pub fn distribution(&self) -> Option<BTreeMap<ClassId, f64>> {
        (self.denominator > 0.0).then(|| {
            self.numerator
                .iter()
                .map(|(&c, &n)| (c, n / self.denominator))
                .collect()
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InstanceRegistry {
    entries: BTreeMap<InstanceId, ClassEvidence>,
}

impl InstanceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: InstanceId) -> Option<&ClassEvidence> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, &ClassEvidence)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accumulate this frame's detections under their tracked map IDs.
    pub fn integrate(&mut self, assignment: &BTreeMap<InstanceId, InstanceId>, frame: &SegmentationFrame) -> Result<()> {
        for (&local, &map_id) in assignment {
            let det = frame
                .detection(local)
                .ok_or_else(|| Error::invalid(format!("no detection for assigned instance {local}")))?;
            self.entries.entry(map_id).or_default().add(det.confidence, &det.distribution);
        }
        Ok(())
    }

    pub fn distribution(&self, id: InstanceId) -> Option<BTreeMap<ClassId, f64>> {
        self.entries.get(&id).and_then(ClassEvidence::distribution)
    }

    /// Most probable thing class of an instance; ties go to the lower class ID.
    pub fn restore_thing_class(&self, id: InstanceId) -> Result<(ClassId, f64)> {
        let dist = self.distribution(id).ok_or(Error::UnknownInstance(id))?;
        let mut best: Option<(ClassId, f64)> = None;
        for (class, p) in dist {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((class, p));
            }
        }
        best.ok_or(Error::UnknownInstance(id))
    }
}
