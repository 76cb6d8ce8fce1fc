//! Fixtures shared by the benchmarks: rendered frames and partially built
//! maps of the demo room.

use panoptic_core::regularization::{build_submap, divide_map, CrfSubmap};
use panoptic_core::synthetic_world::{demo_scene, render_frame, RenderedFrame};
use panoptic_core::{Mapper, SceneSpec};

/// Demo room with patchy label noise, the workload the regularizer exists for.
pub fn noisy_scene() -> SceneSpec {
    let mut spec = demo_scene();
    spec.noise.seed = 11;
    spec.noise.depth_sigma = 0.002;
    spec.noise.label_flip_rate = 0.1;
    spec.noise.flip_patch = 8;
    spec
}

pub fn frames(spec: &SceneSpec, count: usize) -> Vec<RenderedFrame> {
    let poses = spec.poses().expect("valid trajectory");
    poses
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, p)| render_frame(spec, p, i as u64).expect("renderable pose"))
        .collect()
}

/// Mapper after integrating the given frames.
pub fn mapper_with(spec: &SceneSpec, frames: &[RenderedFrame]) -> Mapper {
    let mut mapper = Mapper::with_defaults(spec.schema().expect("valid schema")).expect("default config");
    for f in frames {
        mapper.process(&f.camera, &f.segmentation).expect("valid frame");
    }
    mapper
}

/// Submaps of the divided map with at least two labels, largest first.
pub fn submaps(mapper: &Mapper, max_blocks: usize) -> Vec<CrfSubmap> {
    let mut out: Vec<CrfSubmap> = divide_map(mapper.map(), max_blocks)
        .iter()
        .map(|g| build_submap(mapper.map(), g).expect("finite voxels"))
        .filter(|s| s.label_count() >= 2)
        .collect();
    out.sort_by_key(|s| std::cmp::Reverse(s.len()));
    out
}
