//! Permutohedral lattice for approximate high-dimensional Gaussian filtering.
//!
//! Points are embedded into the hyperplane `Σx = 0` of `R^{d+1}`, splatted
//! onto the vertices of their enclosing simplex with barycentric weights,
//! blurred with a `[1/4, 1/2, 1/4]` stencil along each of the `d + 1` lattice
//! directions, and sliced back. Only vertices touched by the splat exist;
//! blur taps that fall on missing vertices contribute zero.
//!
//! The blurred result approximates `Σ_j A · exp(-|f_i - f_j|² / 2) v_j` with
//! `A = (3 / 4π)^{d/2} / √(d+1)` for the feature scaling used here, so
//! [`Permutohedral::filter`] divides by `A` to produce the unnormalized kernel
//! sum.

use std::collections::HashMap;

pub const MAX_DIM: usize = 6;

type Key = [i32; MAX_DIM + 1];

const MISSING: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct Permutohedral {
    dim: usize,
    points: usize,
    /// `points × (dim + 1)` vertex indices.
    vertex_of: Vec<u32>,
    /// `points × (dim + 1)` barycentric weights.
    bary: Vec<f64>,
    vertices: usize,
    /// `(dim + 1) × vertices` pairs of blur neighbours.
    neighbours: Vec<[u32; 2]>,
    /// Lattice response at each point to its own unit impulse.
    self_response: Vec<f64>,
    scale: f64,
}

struct Embedding {
    keys: [Key; MAX_DIM + 1],
    bary: [f64; MAX_DIM + 2],
}

fn embed(f: &[f64], d: usize, scale_factor: &[f64]) -> Embedding {
    let mut elevated = [0.0f64; MAX_DIM + 1];
    let mut sm = 0.0;
    for i in (1..=d).rev() {
        let cf = f[i - 1] * scale_factor[i - 1];
        elevated[i] = sm - i as f64 * cf;
        sm += cf;
    }
    elevated[0] = sm;

    let dp1 = (d + 1) as f64;
    let mut rem0 = [0i32; MAX_DIM + 1];
    let mut sum = 0i32;
    for i in 0..=d {
        let v = elevated[i] / dp1;
        let up = v.ceil() * dp1;
        let down = v.floor() * dp1;
        rem0[i] = if up - elevated[i] < elevated[i] - down { up as i32 } else { down as i32 };
        sum += rem0[i];
    }
    let sum = sum / (d as i32 + 1);

    let mut rank = [0i32; MAX_DIM + 1];
    for i in 0..d {
        for j in i + 1..=d {
            if elevated[i] - (rem0[i] as f64) < elevated[j] - (rem0[j] as f64) {
                rank[i] += 1;
            } else {
                rank[j] += 1;
            }
        }
    }
    let dp1i = d as i32 + 1;
    if sum > 0 {
        for i in 0..=d {
            if rank[i] >= dp1i - sum {
                rem0[i] -= dp1i;
                rank[i] += sum - dp1i;
            } else {
                rank[i] += sum;
            }
        }
    } else if sum < 0 {
        for i in 0..=d {
            if rank[i] < -sum {
                rem0[i] += dp1i;
                rank[i] += dp1i + sum;
            } else {
                rank[i] += sum;
            }
        }
    }

    let mut bary = [0.0f64; MAX_DIM + 2];
    for i in 0..=d {
        let v = (elevated[i] - rem0[i] as f64) / dp1;
        bary[d - rank[i] as usize] += v;
        bary[d + 1 - rank[i] as usize] -= v;
    }
    bary[0] += 1.0 + bary[d + 1];

    let mut keys = [[0i32; MAX_DIM + 1]; MAX_DIM + 1];
    for (r, key) in keys.iter_mut().enumerate().take(d + 1) {
        let r = r as i32;
        for i in 0..=d {
            key[i] = rem0[i] + if rank[i] <= d as i32 - r { r } else { r - dp1i };
        }
    }
    Embedding { keys, bary }
}

fn neighbour_keys(key: &Key, d: usize, direction: usize) -> (Key, Key) {
    let mut n1 = *key;
    let mut n2 = *key;
    for i in 0..=d {
        n1[i] -= 1;
        n2[i] += 1;
    }
    n1[direction] += d as i32 + 1;
    n2[direction] -= d as i32 + 1;
    (n1, n2)
}

/// Impulse response of the full (dense) blur, keyed by vertex offset.
fn dense_blur_response(d: usize) -> HashMap<Key, f64> {
    let mut field: HashMap<Key, f64> = HashMap::from([([0; MAX_DIM + 1], 1.0)]);
    for j in 0..=d {
        let mut next: HashMap<Key, f64> = HashMap::with_capacity(field.len() * 3);
        for (k, v) in &field {
            let (n1, n2) = neighbour_keys(k, d, j);
            *next.entry(*k).or_insert(0.0) += 0.5 * v;
            *next.entry(n1).or_insert(0.0) += 0.25 * v;
            *next.entry(n2).or_insert(0.0) += 0.25 * v;
        }
        field = next;
    }
    field
}

impl Permutohedral {
    /// Build the lattice for `features`, laid out point-major with `dim`
    /// values per point. Features are expected in units of the kernel
    /// standard deviation.
    pub fn new(features: &[f64], dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "lattice dimension must be in 1..={MAX_DIM}");
        assert_eq!(features.len() % dim, 0);
        let points = features.len() / dim;
        let d = dim;
        let inv_std = (2.0f64 / 3.0).sqrt() * (d + 1) as f64;
        let scale_factor: Vec<f64> = (0..d)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();

        let mut index: HashMap<Key, u32> = HashMap::with_capacity(points * (d + 1) / 4 + 16);
        let mut keys: Vec<Key> = Vec::new();
        let mut vertex_of = Vec::with_capacity(points * (d + 1));
        let mut bary = Vec::with_capacity(points * (d + 1));
        let mut embeddings_keys: Vec<[Key; MAX_DIM + 1]> = Vec::with_capacity(points);
        for p in 0..points {
            let e = embed(&features[p * d..(p + 1) * d], d, &scale_factor);
            for r in 0..=d {
                let next = keys.len() as u32;
                let v = *index.entry(e.keys[r]).or_insert_with(|| {
                    keys.push(e.keys[r]);
                    next
                });
                vertex_of.push(v);
                bary.push(e.bary[r]);
            }
            embeddings_keys.push(e.keys);
        }
        let vertices = keys.len();

        let mut neighbours = Vec::with_capacity((d + 1) * vertices);
        for j in 0..=d {
            for k in &keys {
                let (n1, n2) = neighbour_keys(k, d, j);
                neighbours.push([
                    index.get(&n1).copied().unwrap_or(MISSING),
                    index.get(&n2).copied().unwrap_or(MISSING),
                ]);
            }
        }

        let response = dense_blur_response(d);
        let mut self_response = Vec::with_capacity(points);
        for (p, pk) in embeddings_keys.iter().enumerate() {
            let b = &bary[p * (d + 1)..(p + 1) * (d + 1)];
            let mut s = 0.0;
            for r in 0..=d {
                for t in 0..=d {
                    let mut diff = [0i32; MAX_DIM + 1];
                    for i in 0..=d {
                        diff[i] = pk[t][i] - pk[r][i];
                    }
                    s += b[r] * b[t] * response.get(&diff).copied().unwrap_or(0.0);
                }
            }
            self_response.push(s);
        }

        let amplitude = (3.0 / (4.0 * std::f64::consts::PI)).powf(d as f64 / 2.0) / ((d + 1) as f64).sqrt();
        Permutohedral {
            dim: d,
            points,
            vertex_of,
            bary,
            vertices,
            neighbours,
            self_response,
            scale: 1.0 / amplitude,
        }
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    /// Approximate `out_i = Σ_{j≠i} exp(-|f_i - f_j|² / 2) · in_j` for
    /// `channels`-wide rows.
    pub fn filter(&self, input: &[f64], channels: usize, out: &mut [f64]) {
        let d = self.dim;
        assert_eq!(input.len(), self.points * channels);
        assert_eq!(out.len(), self.points * channels);
        let mut values = vec![0.0; self.vertices * channels];
        for p in 0..self.points {
            let row = &input[p * channels..(p + 1) * channels];
            for r in 0..=d {
                let v = self.vertex_of[p * (d + 1) + r] as usize;
                let w = self.bary[p * (d + 1) + r];
                for (dst, src) in values[v * channels..(v + 1) * channels].iter_mut().zip(row) {
                    *dst += w * src;
                }
            }
        }

        let mut scratch = vec![0.0; values.len()];
        for j in 0..=d {
            let nb = &self.neighbours[j * self.vertices..(j + 1) * self.vertices];
            for (v, [n1, n2]) in nb.iter().enumerate() {
                let dst = &mut scratch[v * channels..(v + 1) * channels];
                for c in 0..channels {
                    let mut acc = 0.5 * values[v * channels + c];
                    if *n1 != MISSING {
                        acc += 0.25 * values[*n1 as usize * channels + c];
                    }
                    if *n2 != MISSING {
                        acc += 0.25 * values[*n2 as usize * channels + c];
                    }
                    dst[c] = acc;
                }
            }
            std::mem::swap(&mut values, &mut scratch);
        }

        for p in 0..self.points {
            let dst = &mut out[p * channels..(p + 1) * channels];
            dst.fill(0.0);
            for r in 0..=d {
                let v = self.vertex_of[p * (d + 1) + r] as usize;
                let w = self.bary[p * (d + 1) + r];
                for (o, s) in dst.iter_mut().zip(&values[v * channels..(v + 1) * channels]) {
                    *o += w * s;
                }
            }
            let own = self.self_response[p];
            for (o, s) in dst.iter_mut().zip(&input[p * channels..(p + 1) * channels]) {
                *o = ((*o - own * s) * self.scale).max(0.0);
            }
        }
    }
}
