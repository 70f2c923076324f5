//! Rendering, error reports and the ablation suite.

mod ablation;
mod eval;
mod image;
mod scene;

use rayon::prelude::*;

pub use self::image::{heat_color, montage, save_png, tone_map, write_text, HdrImage, PREVIEW_GAMMA};
pub use ablation::{ablation_suite, column_config, AblationColumn, AblationConfig, AblationReport, ABLATION_SLACK, ABLATION_STEPS};
pub use eval::{
    evaluate, evaluate_fn, evaluate_patches, heatmaps, non_increasing_with_slack, ErrorReport, LevelError, RuntimeStats,
};
pub use scene::{Camera, Geometry, Light, QueryBuffer, Sample, SceneConfig, MIN_EXTENT};

use crate::error::Result;
use crate::model::NeuralMaterial;
use crate::synth::{level_radiance, patch_rng, HeightfieldMaterial};

/// Renders `scene` with the neural material, all hits in one batch.
pub fn render(scene: &SceneConfig, model: &NeuralMaterial) -> Result<HdrImage> {
    let cfg = model.config();
    let buf = scene.query_buffer(cfg.base_resolution, cfg.num_levels())?;
    let radiance = model.evaluate(&buf.hits())?;
    HdrImage::from_pixels(scene.width, scene.height, buf.resolve(&radiance, scene.background))
}

/// Renders `scene` with the reference shader. Each sample is prefiltered at
/// the nearest integer level, with sub-sample jitter seeded per pixel.
pub fn render_reference(
    scene: &SceneConfig,
    mat: &HeightfieldMaterial,
    levels: usize,
    max_subsample_side: usize,
    seed: u64,
) -> Result<HdrImage> {
    let buf = scene.query_buffer(mat.resolution(), levels)?;
    let hits: Vec<(usize, _)> = buf
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s.query)))
        .collect();
    let radiance: Vec<[f32; 3]> = hits
        .par_iter()
        .map(|&(i, q)| {
            let mut rng = patch_rng(seed, 0, i);
            let level = q.lod.round() as usize;
            level_radiance(mat, q.u, q.omega_i, q.omega_o, level, max_subsample_side, &mut rng)
        })
        .collect();
    HdrImage::from_pixels(scene.width, scene.height, buf.resolve(&radiance, scene.background))
}
