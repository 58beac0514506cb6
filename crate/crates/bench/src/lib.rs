//! Fixtures shared by the benches.

use splatcolor_core::rasterizer::visibility;
use splatcolor_core::{SceneBundle, SynthSpec, VisibilitySet};

pub fn ring(size: usize, splats_per_object: usize) -> SceneBundle {
    let spec = SynthSpec {
        width: size,
        height: size,
        splats_per_object,
        ..SynthSpec::default()
    };
    splatcolor_core::synth::synth_ring_scene(&spec, 0).expect("valid spec")
}

pub fn visibility_sets(bundle: &SceneBundle) -> Vec<VisibilitySet> {
    let scene = bundle.scene.with_ground_truth_colors().expect("ground truth present");
    bundle.cameras.iter().map(|c| visibility(&scene, c)).collect()
}
