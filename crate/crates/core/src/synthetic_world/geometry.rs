use nalgebra::{Point3, Vector3};

use crate::map::{ClassId, InstanceId, PanopticLabel};

use super::{BoxSpec, SceneSpec, SphereSpec};

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Hit {
    /// Ray parameter; equals camera depth when the ray has unit forward component.
    pub t: f64,
    pub label: PanopticLabel,
    pub class: ClassId,
    pub color: [u8; 3],
}

fn to_box_frame(b: &BoxSpec, v: Vector3<f64>) -> Vector3<f64> {
    let (s, c) = b.yaw.sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

pub(crate) fn box_contains(b: &BoxSpec, p: &Point3<f64>, margin: f64) -> bool {
    let l = to_box_frame(b, p - Point3::from(b.center));
    (0..3).all(|i| l[i].abs() < 0.5 * b.size[i] - margin)
}

pub(crate) fn sphere_contains(s: &SphereSpec, p: &Point3<f64>, margin: f64) -> bool {
    (p - Point3::from(s.center)).norm() < s.radius - margin
}

fn intersect_box(b: &BoxSpec, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let lo = to_box_frame(b, o - Point3::from(b.center));
    let ld = to_box_frame(b, *d);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let h = 0.5 * b.size[i];
        if ld[i].abs() < EPS {
            if lo[i].abs() > h {
                return None;
            }
            continue;
        }
        let a = (-h - lo[i]) / ld[i];
        let c = (h - lo[i]) / ld[i];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 > EPS).then_some(t0)
}

fn intersect_sphere(s: &SphereSpec, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let oc = o - Point3::from(s.center);
    let a = d.norm_squared();
    let b = 2.0 * oc.dot(d);
    let c = oc.norm_squared() - s.radius * s.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    (t > EPS).then_some(t)
}

impl SceneSpec {
    /// Whether a camera at `p` sees a well-defined scene: inside the room and
    /// outside every thing.
    pub(crate) fn is_free(&self, p: &Point3<f64>) -> bool {
        let r = &self.room;
        (0..3).all(|i| p[i] > r.min[i] && p[i] < r.max[i])
            && !self.boxes.iter().any(|b| box_contains(b, p, 0.0))
            && !self.spheres.iter().any(|s| sphere_contains(s, p, 0.0))
    }

    /// Nearest surface along `o + t d`, `t > 0`. `o` must be inside the room.
    pub(crate) fn cast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let r = &self.room;
        let mut best: Option<Hit> = None;
        let (mut t_exit, mut axis) = (f64::INFINITY, 0);
        for i in 0..3 {
            let t = if d[i] > EPS {
                (r.max[i] - o[i]) / d[i]
            } else if d[i] < -EPS {
                (r.min[i] - o[i]) / d[i]
            } else {
                continue;
            };
            if t < t_exit {
                t_exit = t;
                axis = i;
            }
        }
        if t_exit.is_finite() {
            let face = match (axis, d[axis] < 0.0) {
                (2, true) => Some((r.floor, r.floor_color)),
                (2, false) => r.ceiling.map(|c| (c, r.ceiling_color)),
                _ => Some((r.wall, r.wall_color)),
            };
            if let Some((class, color)) = face {
                best = Some(Hit { t: t_exit, label: PanopticLabel::Stuff(class), class, color });
            }
        }
        let things = self
            .boxes
            .iter()
            .map(|b| (intersect_box(b, o, d), b.class, b.color))
            .chain(self.spheres.iter().map(|s| (intersect_sphere(s, o, d), s.class, s.color)));
        for (i, (t, class, color)) in things.enumerate() {
            if let Some(t) = t {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        label: PanopticLabel::Instance(InstanceId(i as u32 + 1)),
                        class,
                        color,
                    });
                }
            }
        }
        best
    }
}
