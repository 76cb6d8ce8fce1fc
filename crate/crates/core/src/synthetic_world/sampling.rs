use nalgebra::{Isometry3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::evaluation::LabeledPointSet;
use crate::map::{ClassId, InstanceId, PanopticLabel};

use super::geometry::{box_contains, sphere_contains};
use super::SceneSpec;

/// Cell-centered grid over the parallelogram `origin + a·u + b·v`, `a, b ∈ [0, 1]`.
fn sample_rect(origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, density: f64, out: &mut Vec<Point3<f64>>) {
    let step = density.sqrt();
    let nu = ((u.norm() * step).round() as usize).max(1);
    let nv = ((v.norm() * step).round() as usize).max(1);
    for j in 0..nv {
        for i in 0..nu {
            let a = (i as f64 + 0.5) / nu as f64;
            let b = (j as f64 + 0.5) / nv as f64;
            out.push(origin + u * a + v * b);
        }
    }
}

/// Fibonacci lattice with `round(4πr² · density)` points.
fn sample_sphere(center: Point3<f64>, radius: f64, density: f64, out: &mut Vec<Point3<f64>>) {
    let n = ((4.0 * std::f64::consts::PI * radius * radius * density).round() as usize).max(1);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        out.push(center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius);
    }
}

/// Uniform surface samples of every scene surface with ground-truth labels,
/// `density` points per square meter. Samples buried inside a thing are dropped.
pub fn ground_truth_points(spec: &SceneSpec, density: f64) -> Result<LabeledPointSet> {
    if !(density > 0.0) {
        return Err(Error::invalid(format!("sampling density must be positive, got {density}")));
    }
    let mut set = LabeledPointSet::default();
    let add = |pts: Vec<Point3<f64>>, label: PanopticLabel, class: ClassId, set: &mut LabeledPointSet| {
        for p in pts {
            set.push(p, label, Some(class));
        }
    };

    let r = &spec.room;
    let (lo, hi) = (Point3::from(r.min), Point3::from(r.max));
    let ext = hi - lo;
    let (ex, ey, ez) = (Vector3::x() * ext.x, Vector3::y() * ext.y, Vector3::z() * ext.z);
    let mut pts = Vec::new();
    sample_rect(lo, ex, ey, density, &mut pts);
    add(std::mem::take(&mut pts), PanopticLabel::Stuff(r.floor), r.floor, &mut set);
    if let Some(c) = r.ceiling {
        sample_rect(lo + ez, ex, ey, density, &mut pts);
        add(std::mem::take(&mut pts), PanopticLabel::Stuff(c), c, &mut set);
    }
    sample_rect(lo, ex, ez, density, &mut pts);
    sample_rect(lo + ey, ex, ez, density, &mut pts);
    sample_rect(lo, ey, ez, density, &mut pts);
    sample_rect(lo + ex, ey, ez, density, &mut pts);
    add(std::mem::take(&mut pts), PanopticLabel::Stuff(r.wall), r.wall, &mut set);

    let mut id = 0u32;
    for b in &spec.boxes {
        id += 1;
        let (s, c) = b.yaw.sin_cos();
        let ax = [Vector3::new(c, s, 0.0) * b.size[0], Vector3::new(-s, c, 0.0) * b.size[1], Vector3::z() * b.size[2]];
        let corner = Point3::from(b.center) - (ax[0] + ax[1] + ax[2]) * 0.5;
        for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
            sample_rect(corner, ax[i], ax[j], density, &mut pts);
            sample_rect(corner + ax[k], ax[i], ax[j], density, &mut pts);
        }
        add(std::mem::take(&mut pts), PanopticLabel::Instance(InstanceId(id)), b.class, &mut set);
    }
    for s in &spec.spheres {
        id += 1;
        sample_sphere(Point3::from(s.center), s.radius, density, &mut pts);
        add(std::mem::take(&mut pts), PanopticLabel::Instance(InstanceId(id)), s.class, &mut set);
    }

    let margin = 1e-6;
    let keep: Vec<bool> = set
        .points
        .iter()
        .map(|p| !spec.boxes.iter().any(|b| box_contains(b, p, margin)) && !spec.spheres.iter().any(|s| sphere_contains(s, p, margin)))
        .collect();
    let mut out = LabeledPointSet::default();
    for (i, k) in keep.into_iter().enumerate() {
        if k {
            out.push(set.points[i], set.labels[i], set.classes[i]);
        }
    }
    Ok(out)
}

/// Keep points seen unoccluded from at least one of `poses`, checking every
/// `stride`-th pose.
pub fn visible_points(spec: &SceneSpec, poses: &[Isometry3<f64>], points: &LabeledPointSet, stride: usize) -> Result<LabeledPointSet> {
    let k = spec.intrinsics();
    let (w, h) = (spec.camera.width as f64, spec.camera.height as f64);
    let stride = stride.max(1);
    let tol = 2e-3;
    let mut out = LabeledPointSet::default();
    for (i, p) in points.points.iter().enumerate() {
        let seen = poses.iter().step_by(stride).any(|pose| {
            let eye = Point3::from(pose.translation.vector);
            if !spec.is_free(&eye) {
                return false;
            }
            let pc = pose.inverse_transform_point(p);
            let Some((u, v)) = k.project(&pc) else { return false };
            if !(u > -0.5 && v > -0.5 && u < w - 0.5 && v < h - 0.5) {
                return false;
            }
            let d = p - eye;
            let dist = d.norm();
            spec.cast(&eye, &(d / dist)).is_some_and(|hit| hit.t > dist - tol)
        });
        if seen {
            out.push(*p, points.labels[i], points.classes[i]);
        }
    }
    Ok(out)
}
