//! Shared fixtures for the criterion benches.

use anglseg::brdf::default_material_table;
use anglseg::scene::render_stack;
use anglseg::{IntensityStack, SceneParams, SceneSpec};

/// Renders a deterministic `size x size` scene with `views` views and six classes.
pub fn fixture_stack(size: usize, views: usize) -> IntensityStack {
    let params = SceneParams {
        height: size,
        width: size,
        num_views: views,
        num_classes: 6,
        ..SceneParams::default()
    };
    let spec = SceneSpec::generate(&params, 7).expect("fixture scene");
    render_stack(&spec, &default_material_table(6).expect("material table")).expect("render")
}
