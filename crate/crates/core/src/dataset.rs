//! On-disk RGB-D + segmentation sequences.
//!
//! ```text
//! intrinsics.txt           fx fy cx cy
//! poses.txt                one camera-to-world 4x4 per line, row-major
//! labels.toml              label schema
//! depth/NNNNNN.png         16-bit, millimeters, 0 = invalid
//! color/NNNNNN.png         8-bit RGB
//! class/NNNNNN.png         16-bit class IDs, 0 = none
//! instance/NNNNNN.png      16-bit frame-local instance IDs, 0 = none
//! detections/NNNNNN.json   [{"id", "confidence", "distribution": {class: p}}]
//! gt_points.txt            optional: x y z kind id class per line
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::{Isometry3, Matrix4, Point3};

use crate::camera::{rigid_from_matrix, CameraFrame, Intrinsics};
use crate::error::{Error, Result};
use crate::evaluation::LabeledPointSet;
use crate::frontend::{Detection, SegmentationFrame};
use crate::map::{ClassId, InstanceId, LabelSchema, PanopticLabel};

pub const GROUND_TRUTH_FILE: &str = "gt_points.txt";

fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

/// Depth in meters to the stored millimeter value.
pub fn quantize_depth(z: f32) -> u16 {
    (f64::from(z) * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    fs::write(path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy))?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = fs::read_to_string(path)?;
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::decode(path, e)))
        .collect::<Result<_>>()?;
    let [fx, fy, cx, cy] = v[..] else {
        return Err(Error::decode(path, format!("expected 4 numbers, found {}", v.len())));
    };
    let k = Intrinsics { fx, fy, cx, cy };
    k.validate()?;
    Ok(k)
}

pub fn write_poses(path: &Path, poses: &[Isometry3<f64>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in poses {
        let m = p.to_homogeneous();
        let row: Vec<String> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| format!("{:e}", m[(r, c)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<Isometry3<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::decode(path, format!("line {}: {e}", n + 1))))
            .collect::<Result<_>>()?;
        if v.len() != 16 {
            return Err(Error::decode(path, format!("line {}: expected 16 numbers, found {}", n + 1, v.len())));
        }
        poses.push(rigid_from_matrix(&Matrix4::from_row_slice(&v)).map_err(|e| Error::decode(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(poses)
}

/// Write the per-sequence files and create the frame directories.
pub fn write_header(root: &Path, k: &Intrinsics, poses: &[Isometry3<f64>], schema: &LabelSchema) -> Result<()> {
    for d in ["depth", "color", "class", "instance", "detections"] {
        fs::create_dir_all(root.join(d))?;
    }
    write_intrinsics(&root.join("intrinsics.txt"), k)?;
    write_poses(&root.join("poses.txt"), poses)?;
    fs::write(root.join("labels.toml"), schema.to_toml())?;
    Ok(())
}

fn save_u16(path: &Path, w: usize, h: usize, data: Vec<u16>) -> Result<()> {
    ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(|e| Error::decode(path, e))
}

/// Write the images and detections of frame `index`.
pub fn write_frame(root: &Path, index: usize, cam: &CameraFrame, seg: &SegmentationFrame) -> Result<()> {
    let (w, h) = (cam.width, cam.height);
    if (seg.width, seg.height) != (w, h) {
        return Err(Error::DimensionMismatch { what: "segmentation frame", expected: (w, h), found: (seg.width, seg.height) });
    }
    save_u16(&root.join("depth").join(frame_name(index, "png")), w, h, cam.depth.iter().map(|&z| quantize_depth(z)).collect())?;
    let rgb: Vec<u8> = cam.color.iter().flatten().copied().collect();
    let path = root.join("color").join(frame_name(index, "png"));
    ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, rgb)
        .expect("buffer matches dimensions")
        .save(&path)
        .map_err(|e| Error::decode(&path, e))?;
    save_u16(&root.join("class").join(frame_name(index, "png")), w, h, seg.class_map.iter().map(|c| c.0).collect())?;
    let mut inst = Vec::with_capacity(w * h);
    for id in &seg.instance_map {
        let v = id.map_or(Ok(0), |i| u16::try_from(i.0).map_err(|_| Error::invalid(format!("instance {i} does not fit 16 bits"))))?;
        inst.push(v);
    }
    save_u16(&root.join("instance").join(frame_name(index, "png")), w, h, inst)?;
    fs::write(root.join("detections").join(frame_name(index, "json")), serde_json::to_string_pretty(&seg.detections)?)?;
    Ok(())
}

fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::decode(path, e))
}

fn load_u16(path: &Path, size: Option<(usize, usize)>) -> Result<(usize, usize, Vec<u16>)> {
    match load_image(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            if let Some(expected) = size {
                if expected != (w, h) {
                    return Err(Error::DimensionMismatch { what: "frame image", expected, found: (w, h) });
                }
            }
            Ok((w, h, img.into_raw()))
        }
        other => Err(Error::decode(path, format!("expected 16-bit grayscale, found {:?}", other.color()))),
    }
}

/// A sequence on disk. Frame count comes from `poses.txt`.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    intrinsics: Intrinsics,
    poses: Vec<Isometry3<f64>>,
    schema: LabelSchema,
}

impl Dataset {
    /// Read the sequence header. The number of depth images must equal the
    /// number of poses.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let intrinsics = read_intrinsics(&root.join("intrinsics.txt"))?;
        let poses = read_poses(&root.join("poses.txt"))?;
        let schema = LabelSchema::from_toml(&fs::read_to_string(root.join("labels.toml"))?)?;
        let depth_count = fs::read_dir(root.join("depth"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
            .count();
        if depth_count != poses.len() {
            return Err(Error::invalid(format!(
                "{} poses but {depth_count} depth images in {}",
                poses.len(),
                root.display()
            )));
        }
        Ok(Dataset { root, intrinsics, poses, schema })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn poses(&self) -> &[Isometry3<f64>] {
        &self.poses
    }

    /// Decode and validate frame `index`. Errors carry the frame index.
    pub fn load_frame(&self, index: usize) -> Result<(CameraFrame, SegmentationFrame)> {
        self.load_frame_inner(index).map_err(|e| e.in_frame(index))
    }

    fn load_frame_inner(&self, index: usize) -> Result<(CameraFrame, SegmentationFrame)> {
        let pose = *self
            .poses
            .get(index)
            .ok_or_else(|| Error::invalid(format!("frame {index} out of range 0..{}", self.len())))?;
        let png = frame_name(index, "png");
        let (w, h, depth_mm) = load_u16(&self.root.join("depth").join(&png), None)?;
        let color_path = self.root.join("color").join(&png);
        let color = match load_image(&color_path)? {
            DynamicImage::ImageRgb8(img) if (img.width() as usize, img.height() as usize) == (w, h) => {
                img.pixels().map(|p| p.0).collect()
            }
            DynamicImage::ImageRgb8(img) => {
                return Err(Error::DimensionMismatch {
                    what: "color image",
                    expected: (w, h),
                    found: (img.width() as usize, img.height() as usize),
                })
            }
            other => return Err(Error::decode(&color_path, format!("expected 8-bit RGB, found {:?}", other.color()))),
        };
        let (_, _, class) = load_u16(&self.root.join("class").join(&png), Some((w, h)))?;
        let (_, _, inst) = load_u16(&self.root.join("instance").join(&png), Some((w, h)))?;
        let det_path = self.root.join("detections").join(frame_name(index, "json"));
        let detections: Vec<Detection> =
            serde_json::from_str(&fs::read_to_string(&det_path)?).map_err(|e| Error::decode(&det_path, e))?;

        let camera = CameraFrame::new(
            self.intrinsics,
            pose,
            w,
            h,
            depth_mm.iter().map(|&d| f32::from(d) / 1000.0).collect(),
            color,
        )?;
        let seg = SegmentationFrame {
            width: w,
            height: h,
            class_map: class.into_iter().map(ClassId).collect(),
            instance_map: inst.into_iter().map(|v| (v != 0).then_some(InstanceId(u32::from(v)))).collect(),
            detections,
        };
        seg.validate(&self.schema)?;
        Ok((camera, seg))
    }

    pub fn ground_truth(&self) -> Result<Option<LabeledPointSet>> {
        let path = self.root.join(GROUND_TRUTH_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_ground_truth(&path).map(Some)
    }
}

/// `x y z kind id class` with kind `u` (unknown), `s` (stuff) or `i` (instance).
pub fn write_ground_truth(path: &Path, set: &LabeledPointSet) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# x y z kind id class")?;
    for i in 0..set.len() {
        let p = set.points[i];
        let (kind, id) = match set.labels[i] {
            PanopticLabel::Unknown => ('u', 0),
            PanopticLabel::Stuff(c) => ('s', u32::from(c.0)),
            PanopticLabel::Instance(id) => ('i', id.0),
        };
        let class = set.classes[i].map_or(0, |c| c.0);
        writeln!(w, "{:e} {:e} {:e} {kind} {id} {class}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<LabeledPointSet> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut set = LabeledPointSet::default();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::decode(path, format!("line {}: {m}", n + 1));
        let t: Vec<&str> = line.split_whitespace().collect();
        let [x, y, z, kind, id, class] = t[..] else { return Err(bad("expected 6 fields")) };
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad("bad coordinate"));
        let id: u32 = id.parse().map_err(|_| bad("bad id"))?;
        let class: u16 = class.parse().map_err(|_| bad("bad class"))?;
        let label = match kind {
            "u" => PanopticLabel::Unknown,
            "s" => PanopticLabel::Stuff(ClassId(u16::try_from(id).map_err(|_| bad("bad stuff class"))?)),
            "i" => PanopticLabel::Instance(InstanceId(id)),
            _ => return Err(bad("kind must be u, s or i")),
        };
        set.push(Point3::new(f(x)?, f(y)?, f(z)?), label, (class != 0).then_some(ClassId(class)));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic_world::{demo_scene, render_frame};

    fn write_demo(root: &Path, frames: usize) -> Vec<crate::synthetic_world::RenderedFrame> {
        let spec = demo_scene();
        let poses: Vec<_> = spec.poses().unwrap().into_iter().take(frames).collect();
        write_header(root, &spec.intrinsics(), &poses, &spec.schema().unwrap()).unwrap();
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let f = render_frame(&spec, p, i as u64).unwrap();
                write_frame(root, i, &f.camera, &f.segmentation).unwrap();
                f
            })
            .collect()
    }

    #[test]
    fn frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = write_demo(dir.path(), 2);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        for (i, f) in frames.iter().enumerate() {
            let (cam, seg) = ds.load_frame(i).unwrap();
            assert_eq!(seg, f.segmentation);
            assert_eq!(cam.color, f.camera.color);
            for (a, b) in cam.depth.iter().zip(&f.camera.depth) {
                assert_eq!(*a, f32::from(quantize_depth(*b)) / 1000.0);
            }
            let (pa, pb) = (cam.pose.to_homogeneous(), f.camera.pose.to_homogeneous());
            assert!((pa - pb).abs().max() < 1e-12);
        }
    }

    #[test]
    fn corrupt_frames_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_demo(dir.path(), 2);
        let depth = dir.path().join("depth").join(frame_name(1, "png"));
        let bytes = fs::read(&depth).unwrap();
        fs::write(&depth, &bytes[..bytes.len() / 2]).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert!(ds.load_frame(0).is_ok());
        assert!(matches!(ds.load_frame(1), Err(Error::Frame { index: 1, .. })));

        let det = dir.path().join("detections").join(frame_name(0, "json"));
        let mut dets: Vec<Detection> = serde_json::from_str(&fs::read_to_string(&det).unwrap()).unwrap();
        for p in dets[0].distribution.values_mut() {
            *p *= 0.9;
        }
        fs::write(&det, serde_json::to_string(&dets).unwrap()).unwrap();
        assert!(matches!(ds.load_frame(0), Err(Error::Frame { index: 0, .. })));
    }

    #[test]
    fn pose_depth_mismatch_aborts() {
        let dir = tempfile::tempdir().unwrap();
        write_demo(dir.path(), 2);
        fs::remove_file(dir.path().join("depth").join(frame_name(1, "png"))).unwrap();
        assert!(Dataset::open(dir.path()).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = LabeledPointSet::default();
        set.push(Point3::new(0.1, -0.2, 1.0 / 3.0), PanopticLabel::Stuff(ClassId(2)), Some(ClassId(2)));
        set.push(Point3::new(1.0, 2.0, 3.0), PanopticLabel::Instance(InstanceId(7)), Some(ClassId(4)));
        set.push(Point3::new(0.0, 0.0, 0.0), PanopticLabel::Unknown, None);
        let path = dir.path().join(GROUND_TRUTH_FILE);
        write_ground_truth(&path, &set).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), set);
    }

    #[test]
    fn text_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.txt");
        fs::write(&path, "100 100 50\n").unwrap();
        assert!(read_intrinsics(&path).is_err());
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n\n1 0 0\n").unwrap();
        assert!(read_poses(&path).is_err());
    }
}
