//! Rendering synthetic scenes into network-ready data.

use rayon::prelude::*;

use crate::brdf::BrdfModel;
use crate::error::Result;
use crate::histogram::{extract_features, HistogramConfig};
use crate::scene::{render_stack, SceneParams, SceneSpec};
use crate::superpixel::SlicConfig;
use crate::train::SceneData;

/// Renders scene `seed`, runs SLIC on its mean image and attaches the dense histogram.
pub fn prepare_scene(
    params: &SceneParams,
    table: &[BrdfModel],
    hist: &HistogramConfig,
    seed: u64,
) -> Result<SceneData> {
    let spec = SceneSpec::generate(params, seed)?;
    let stack = render_stack(&spec, table)?;
    let slic = SlicConfig::for_image(stack.height, stack.width);
    let features = extract_features(&stack, &slic, hist)?;
    SceneData::from_stack(&format!("scene_{seed:04}"), &stack, Some(&features.feature))
}

/// Scenes `first_seed .. first_seed + count`, prepared in parallel.
pub fn synthetic_dataset(
    params: &SceneParams,
    table: &[BrdfModel],
    hist: &HistogramConfig,
    first_seed: u64,
    count: usize,
) -> Result<Vec<SceneData>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| prepare_scene(params, table, hist, first_seed + i))
        .collect()
}

/// Per-scene seeds drawn from one experiment seed; each fits in a signed 64-bit integer.
pub fn scene_seeds(experiment_seed: u64, count: usize) -> Vec<u64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(experiment_seed);
    (0..count).map(|_| rng.random::<u64>() >> 1).collect()
}
