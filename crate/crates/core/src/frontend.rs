//! Per-pixel panoptic labels from semantic and instance segmentation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{ClassId, InstanceId, LabelSchema, PanopticLabel};

/// One detected object instance in a frame.
///
/// `id` is frame-local: the detector gives no guarantee that the same object
/// keeps its ID across frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub id: InstanceId,
    /// Foreground probability of the detection.
    pub confidence: f64,
    /// Conditional distribution over thing classes given the object is foreground.
    pub distribution: BTreeMap<ClassId, f64>,
}

/// Semantic and instance segmentation outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationFrame {
    pub width: usize,
    pub height: usize,
    pub class_map: Vec<ClassId>,
    /// `None` where no foreground object was detected.
    pub instance_map: Vec<Option<InstanceId>>,
    pub detections: Vec<Detection>,
}

impl SegmentationFrame {
    pub fn detection(&self, id: InstanceId) -> Option<&Detection> {
        self.detections.iter().find(|d| d.id == id)
    }

    /// Check the structural invariants: aligned maps, one detection per
    /// instance present in the instance map, normalized distributions over
    /// thing classes and class IDs drawn from the schema.
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let n = self.width * self.height;
        if self.class_map.len() != n {
            return Err(Error::DimensionMismatch {
                what: "class map",
                expected: (self.width, self.height),
                found: (self.class_map.len(), 1),
            });
        }
        if self.instance_map.len() != n {
            return Err(Error::DimensionMismatch {
                what: "instance map",
                expected: (self.width, self.height),
                found: (self.instance_map.len(), 1),
            });
        }
        let mut seen = BTreeSet::new();
        for det in &self.detections {
            if det.id.0 == 0 {
                return Err(Error::invalid("detection id 0 is reserved for 'no instance'"));
            }
            if !seen.insert(det.id) {
                return Err(Error::invalid(format!("detection {} listed twice", det.id)));
            }
            if !(0.0..=1.0).contains(&det.confidence) {
                return Err(Error::invalid(format!(
                    "detection {} confidence {} outside [0, 1]",
                    det.id, det.confidence
                )));
            }
            let mut total = 0.0;
            for (&class, &p) in &det.distribution {
                if !schema.is_thing(class) {
                    return Err(Error::invalid(format!(
                        "detection {} distribution names non-thing class {class}",
                        det.id
                    )));
                }
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::invalid(format!("detection {} has invalid probability {p}", det.id)));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "detection {} class distribution sums to {total}, expected 1",
                    det.id
                )));
            }
        }
        let present: BTreeSet<InstanceId> = self.instance_map.iter().flatten().copied().collect();
        if let Some(missing) = present.iter().find(|id| !seen.contains(id)) {
            return Err(Error::invalid(format!("instance {missing} has pixels but no detection")));
        }
        Ok(())
    }
}

/// Image of panoptic labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<PanopticLabel>,
}

impl PanopticImage {
    pub fn unknown(width: usize, height: usize) -> Self {
        PanopticImage {
            width,
            height,
            labels: vec![PanopticLabel::Unknown; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> PanopticLabel {
        self.labels[row * self.width + col]
    }

    /// Pixel count per instance label.
    pub fn instance_areas(&self) -> BTreeMap<InstanceId, usize> {
        let mut areas = BTreeMap::new();
        for id in self.labels.iter().filter_map(|l| l.instance()) {
            *areas.entry(id).or_insert(0) += 1;
        }
        areas
    }

    pub(crate) fn check_same_size(&self, other: &PanopticImage, what: &'static str) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) || self.labels.len() != other.labels.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Combine class and instance maps into raw panoptic labels. Instance IDs
/// take precedence; stuff classes fill the rest; anything else is unknown.
pub fn fuse_panoptic(frame: &SegmentationFrame, schema: &LabelSchema) -> Result<PanopticImage> {
    let n = frame.width * frame.height;
    if frame.class_map.len() != n || frame.instance_map.len() != n {
        return Err(Error::DimensionMismatch {
            what: "segmentation maps",
            expected: (frame.class_map.len(), 1),
            found: (frame.instance_map.len(), 1),
        });
    }
    let mut unlisted = 0usize;
    let labels = frame
        .class_map
        .iter()
        .zip(&frame.instance_map)
        .map(|(&class, &instance)| match instance {
            Some(z) => PanopticLabel::Instance(z),
            None if schema.is_stuff(class) => PanopticLabel::Stuff(class),
            None => {
                if !schema.contains(class) && class.0 != 0 {
                    unlisted += 1;
                }
                PanopticLabel::Unknown
            }
        })
        .collect();
    if unlisted > 0 {
        log::warn!("{unlisted} pixels carry class IDs missing from the schema; treated as unknown");
    }
    Ok(PanopticImage {
        width: frame.width,
        height: frame.height,
        labels,
    })
}
