//! Labeled mesh extraction with marching cubes.
//!
//! Cells are spanned by eight neighbouring voxel centers and produce triangles
//! only when all eight voxels are observed. Vertices are shared between cells
//! through an edge-keyed cache, so the mesh is indexed.

mod ply;
mod tables;

use std::collections::HashMap;

use serde::Serialize;

use crate::map::{ClassId, GlobalIndex, PanopticLabel, VolumetricMap, Voxel, VoxelBlock};
use crate::registry::InstanceRegistry;

pub use ply::{export_ply, read_ply, write_sidecar, PanopticEncoding};

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LabeledMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub labels: Vec<PanopticLabel>,
    /// Stuff class, restored thing class, or `None` for unknown.
    pub classes: Vec<Option<ClassId>>,
}

impl LabeledMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Panoptic labels present, sorted.
    pub fn label_set(&self) -> Vec<PanopticLabel> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// Class a vertex label stands for.
pub fn restored_class(label: PanopticLabel, registry: &InstanceRegistry) -> Option<ClassId> {
    match label {
        PanopticLabel::Unknown => None,
        PanopticLabel::Stuff(c) => Some(c),
        PanopticLabel::Instance(id) => registry.restore_thing_class(id).ok().map(|(c, _)| c),
    }
}

struct CornerReader<'a> {
    map: &'a VolumetricMap,
    side: i64,
}

impl<'a> CornerReader<'a> {
    fn get(&self, block: &'a VoxelBlock, local: [usize; 3], d: [i64; 3]) -> Option<&'a Voxel> {
        let l = [local[0] as i64 + d[0], local[1] as i64 + d[1], local[2] as i64 + d[2]];
        if l.iter().all(|&c| c < self.side) {
            Some(block.voxel([l[0] as usize, l[1] as usize, l[2] as usize]))
        } else {
            self.map.voxel(block.global(block.linear(local)).offset(d))
        }
    }
}

/// Zero-isosurface of the TSDF with per-vertex color, label and class.
pub fn extract_mesh(map: &VolumetricMap, registry: &InstanceRegistry) -> LabeledMesh {
    let reader = CornerReader { map, side: map.block_side() as i64 };
    let side = map.block_side();
    let mut mesh = LabeledMesh::default();
    let mut cache: HashMap<(GlobalIndex, u8), u32> = HashMap::new();

    for index in map.sorted_block_indices() {
        let block = map.block(index).expect("listed block exists");
        if !block.is_observed() {
            continue;
        }
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let local = [x, y, z];
                    if !block.voxel(local).is_observed() {
                        continue;
                    }
                    let mut corners: [&Voxel; 8] = [block.voxel(local); 8];
                    let mut complete = true;
                    for (c, d) in CORNERS.iter().enumerate().skip(1) {
                        match reader.get(block, local, *d) {
                            Some(v) if v.is_observed() => corners[c] = v,
                            _ => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete {
                        continue;
                    }
                    let mut case = 0usize;
                    for (c, v) in corners.iter().enumerate() {
                        if v.tsdf < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    let crossing = tables::EDGE_TABLE[case];
                    if crossing == 0 {
                        continue;
                    }
                    let origin = block.global(block.linear(local));
                    let mut edge_vertex = [u32::MAX; 12];
                    for (e, &(a, b)) in EDGES.iter().enumerate() {
                        if crossing & (1 << e) == 0 {
                            continue;
                        }
                        let (ga, gb) = (origin.offset(CORNERS[a]), origin.offset(CORNERS[b]));
                        let (lo, hi, va, vb) = if ga.0 <= gb.0 {
                            (ga, gb, corners[a], corners[b])
                        } else {
                            (gb, ga, corners[b], corners[a])
                        };
                        let axis = (0..3).find(|&i| lo.0[i] != hi.0[i]).expect("edge spans one axis") as u8;
                        edge_vertex[e] = *cache.entry((lo, axis)).or_insert_with(|| {
                            push_vertex(&mut mesh, map, registry, (lo, va), (hi, vb))
                        });
                    }
                    for tri in tables::TRIANGLE_TABLE[case].chunks(3) {
                        if tri[0] < 0 {
                            break;
                        }
                        let t = [
                            edge_vertex[tri[0] as usize],
                            edge_vertex[tri[1] as usize],
                            edge_vertex[tri[2] as usize],
                        ];
                        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                            mesh.triangles.push(t);
                        }
                    }
                }
            }
        }
    }
    mesh
}

fn push_vertex(
    mesh: &mut LabeledMesh,
    map: &VolumetricMap,
    registry: &InstanceRegistry,
    (ga, va): (GlobalIndex, &Voxel),
    (gb, vb): (GlobalIndex, &Voxel),
) -> u32 {
    let pa = map.global_center(ga);
    let pb = map.global_center(gb);
    let denom = va.tsdf - vb.tsdf;
    let t = if denom.abs() > f32::EPSILON { (va.tsdf / denom).clamp(0.0, 1.0) } else { 0.5 };
    let p = pa + (pb - pa) * f64::from(t);
    let mut color = [0u8; 3];
    for (i, c) in color.iter_mut().enumerate() {
        *c = (va.color[i] + (vb.color[i] - va.color[i]) * t).round().clamp(0.0, 255.0) as u8;
    }
    let label = if vb.label_weight > va.label_weight { vb.label } else { va.label };
    mesh.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
    mesh.colors.push(color);
    mesh.labels.push(label);
    mesh.classes.push(restored_class(label, registry));
    (mesh.vertices.len() - 1) as u32
}
