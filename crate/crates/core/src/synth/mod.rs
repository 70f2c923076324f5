//! Procedural reference data: heightfield materials, a ray-marched shading
//! oracle and the multi-level dataset generator and file format.

mod dataset;
mod generate;
mod heightfield;
mod shade;

pub use dataset::{Dataset, LevelData};
pub use generate::{
    generate, generate_from, generate_level, level_radiance, patch_rng, sample_disk, GenStats, GeneratorConfig,
};
pub use heightfield::{HeightfieldMaterial, MaterialSpec};
pub use shade::{beckmann_peak, radiance_bound, shade_reference, MarchSettings, Shade};
