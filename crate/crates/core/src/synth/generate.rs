use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, LevelData};
use super::heightfield::{HeightfieldMaterial, MaterialSpec};
use super::shade::{shade_reference, MarchSettings};
use crate::error::{Error, Result};
use crate::hash::digest64;
use crate::model::QUERY_WIDTH;

/// Parameters of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub material: MaterialSpec,
    pub resolution: usize,
    pub levels: usize,
    /// Samples at level 0; each coarser level gets half as many.
    pub level0_samples: usize,
    /// Side of the square patches that share one light and view direction.
    pub patch: usize,
    /// Cap on the per-axis count of footprint sub-queries at coarse levels.
    pub max_subsample_side: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            material: MaterialSpec::GlossyBumps { seed: 0 },
            resolution: 64,
            levels: 7,
            level0_samples: 1 << 20,
            patch: 32,
            max_subsample_side: 16,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.resolution.is_power_of_two() || self.resolution < 2 {
            return bad(format!("resolution {} must be a power of two >= 2", self.resolution));
        }
        let max = self.resolution.trailing_zeros() as usize + 1;
        if self.levels == 0 || self.levels > max {
            return bad(format!("levels {} outside 1..={max} for resolution {}", self.levels, self.resolution));
        }
        if self.patch == 0 || self.max_subsample_side == 0 {
            return bad("patch and max_subsample_side must be positive".into());
        }
        if self.level0_samples < self.patch * self.patch {
            return bad(format!(
                "level0_samples {} is smaller than one {}x{} patch",
                self.level0_samples, self.patch, self.patch
            ));
        }
        Ok(())
    }

    /// Number of patches generated at level `l` (at least one).
    pub fn patches_at(&self, l: usize) -> usize {
        ((self.level0_samples >> l) / (self.patch * self.patch)).max(1)
    }

    /// Hash of the config together with the material it builds.
    pub fn hash(&self, mat: &HeightfieldMaterial) -> u64 {
        let mut bytes = serde_json::to_vec(self).expect("config serializes");
        bytes.extend(mat.fingerprint());
        digest64(&bytes)
    }
}

/// Shading counters accumulated during generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenStats {
    pub shades: u64,
    /// View rays that never reached the surface; they contribute zero.
    pub misses: u64,
    pub shadowed: u64,
}

#[derive(Default)]
struct Counters {
    shades: AtomicU64,
    misses: AtomicU64,
    shadowed: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> GenStats {
        GenStats {
            shades: self.shades.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            shadowed: self.shadowed.load(Ordering::Relaxed),
        }
    }
}

/// Uniform point on the unit disk, i.e. a cosine-weighted hemisphere
/// direction projected to its xy components.
pub fn sample_disk(rng: &mut impl Rng) -> [f32; 2] {
    let r = rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    [(r * phi.cos()) as f32, (r * phi.sin()) as f32]
}

/// Deterministic RNG for patch `index` of level `level`.
pub fn patch_rng(seed: u64, level: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 48) | index as u64);
    rng
}

/// Footprint-averaged radiance at level `level` around `u`.
///
/// Level 0 is a single reference query at `u`. Coarser levels average
/// jittered sub-queries, one per cell of a stratified grid over the
/// `2^level / R` square centred on `u`; the grid has `2^level` cells per
/// axis, capped at `max_side`.
pub fn level_radiance(
    mat: &HeightfieldMaterial,
    u: [f32; 2],
    omega_i: [f32; 2],
    omega_o: [f32; 2],
    level: usize,
    max_side: usize,
    rng: &mut impl Rng,
) -> [f32; 3] {
    level_radiance_counted(mat, u, omega_i, omega_o, level, max_side, rng, &Counters::default())
}

#[allow(clippy::too_many_arguments)]
fn level_radiance_counted(
    mat: &HeightfieldMaterial,
    u: [f32; 2],
    omega_i: [f32; 2],
    omega_o: [f32; 2],
    level: usize,
    max_side: usize,
    rng: &mut impl Rng,
    counters: &Counters,
) -> [f32; 3] {
    let shade = |p: [f32; 2]| {
        let s = shade_reference(mat, p, omega_i, omega_o, MarchSettings::default());
        counters.shades.fetch_add(1, Ordering::Relaxed);
        if !s.hit {
            counters.misses.fetch_add(1, Ordering::Relaxed);
        }
        if s.shadowed {
            counters.shadowed.fetch_add(1, Ordering::Relaxed);
        }
        s.rgb
    };
    if level == 0 {
        return shade(u);
    }
    let side = (1usize << level).min(max_side);
    let extent = (1usize << level) as f64 / mat.resolution() as f64;
    let cell = extent / side as f64;
    let mut acc = [0.0f64; 3];
    for j in 0..side {
        for i in 0..side {
            let px = u[0] as f64 - 0.5 * extent + (i as f64 + rng.random::<f64>()) * cell;
            let py = u[1] as f64 - 0.5 * extent + (j as f64 + rng.random::<f64>()) * cell;
            let rgb = shade([px.rem_euclid(1.0) as f32, py.rem_euclid(1.0) as f32]);
            for k in 0..3 {
                acc[k] += rgb[k] as f64;
            }
        }
    }
    let n = (side * side) as f64;
    acc.map(|a| (a / n) as f32)
}

fn wrap_unit(x: f64) -> f32 {
    let w = x.rem_euclid(1.0) as f32;
    // rounding can land exactly on 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn generate_patch(
    mat: &HeightfieldMaterial,
    config: &GeneratorConfig,
    level: usize,
    index: usize,
    counters: &Counters,
) -> (Vec<f32>, Vec<f32>) {
    let mut rng = patch_rng(config.seed, level, index);
    let origin = [rng.random::<f64>(), rng.random::<f64>()];
    let omega_i = sample_disk(&mut rng);
    let omega_o = sample_disk(&mut rng);
    let spacing = (1usize << level) as f64 / config.resolution as f64;
    let n = config.patch * config.patch;
    let mut queries = Vec::with_capacity(n * QUERY_WIDTH);
    let mut radiance = Vec::with_capacity(n * 3);
    for y in 0..config.patch {
        for x in 0..config.patch {
            let u = [
                wrap_unit(origin[0] + x as f64 * spacing),
                wrap_unit(origin[1] + y as f64 * spacing),
            ];
            let rgb = level_radiance_counted(
                mat,
                u,
                omega_i,
                omega_o,
                level,
                config.max_subsample_side,
                &mut rng,
                counters,
            );
            queries.extend([u[0], u[1], omega_i[0], omega_i[1], omega_o[0], omega_o[1], level as f32]);
            radiance.extend(rgb);
        }
    }
    (queries, radiance)
}

/// Generates one level of a dataset. Patches are shaded in parallel, each
/// from its own RNG stream, so the result does not depend on scheduling.
pub fn generate_level(mat: &HeightfieldMaterial, config: &GeneratorConfig, level: usize) -> Result<(LevelData, GenStats)> {
    let counters = Counters::default();
    let parts: Vec<_> = (0..config.patches_at(level))
        .into_par_iter()
        .map(|p| generate_patch(mat, config, level, p, &counters))
        .collect();
    let (mut queries, mut radiance) = (Vec::new(), Vec::new());
    for (q, r) in parts {
        queries.extend(q);
        radiance.extend(r);
    }
    Ok((LevelData::new(queries, radiance)?, counters.snapshot()))
}

/// Builds the material and generates every level.
pub fn generate(config: &GeneratorConfig) -> Result<(Dataset, GenStats)> {
    config.validate()?;
    let mat = config.material.build(config.resolution)?;
    generate_from(&mat, config)
}

/// Generates every level for an already-built material.
pub fn generate_from(mat: &HeightfieldMaterial, config: &GeneratorConfig) -> Result<(Dataset, GenStats)> {
    config.validate()?;
    if mat.resolution() != config.resolution {
        return Err(Error::Config(format!(
            "material resolution {} differs from configured {}",
            mat.resolution(),
            config.resolution
        )));
    }
    let mut levels = Vec::with_capacity(config.levels);
    let mut total = GenStats::default();
    for l in 0..config.levels {
        let (level, stats) = generate_level(mat, config, l)?;
        log::info!(
            "level {l}: {} samples, {} shades, {} misses, {} shadowed",
            level.len(),
            stats.shades,
            stats.misses,
            stats.shadowed
        );
        total.shades += stats.shades;
        total.misses += stats.misses;
        total.shadowed += stats.shadowed;
        levels.push(level);
    }
    let ds = Dataset::new(config.resolution, config.patch, config.hash(mat), levels)?;
    Ok((ds, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            material: MaterialSpec::GlossyBumps { seed: 3 },
            resolution: 16,
            levels: 5,
            level0_samples: 256,
            patch: 4,
            max_subsample_side: 4,
            seed: 11,
        }
    }

    #[test]
    fn disk_samples_inside_unit_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let [x, y] = sample_disk(&mut rng);
            assert!(x * x + y * y < 1.0);
        }
    }

    #[test]
    fn level_zero_is_direct_shading() {
        let config = small();
        let mat = config.material.build(config.resolution).unwrap();
        let (level, _) = generate_level(&mat, &config, 0).unwrap();
        for i in 0..level.len() {
            let q = level.query(i);
            let s = shade_reference(&mat, q.u, q.omega_i, q.omega_o, MarchSettings::default());
            assert_eq!(level.radiance(i), s.rgb);
        }
    }

    #[test]
    fn patches_form_grids_with_shared_directions() {
        let config = small();
        let (ds, _) = generate(&config).unwrap();
        for l in 0..ds.num_levels() {
            let level = ds.level(l);
            let spacing = (1 << l) as f32 / 16.0;
            for p in 0..ds.patches(l) {
                let q0 = level.query(ds.sample_index(p, 0, 0));
                for (x, y) in [(1, 0), (0, 1), (3, 2)] {
                    let q = level.query(ds.sample_index(p, x, y));
                    assert_eq!((q.omega_i, q.omega_o, q.lod), (q0.omega_i, q0.omega_o, l as f32));
                    let du = (q.u[0] - q0.u[0] - x as f32 * spacing).rem_euclid(1.0);
                    let dv = (q.u[1] - q0.u[1] - y as f32 * spacing).rem_euclid(1.0);
                    assert!(du.min(1.0 - du) < 1e-5 && dv.min(1.0 - dv) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_hash_sensitive() {
        let a = generate(&small()).unwrap().0;
        let b = generate(&small()).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut other = small();
        other.seed += 1;
        let c = generate(&other).unwrap().0;
        assert_ne!(a.config_hash(), c.config_hash());
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn sample_counts_halve() {
        let (ds, _) = generate(&small()).unwrap();
        assert_eq!(ds.sample_counts(), vec![256, 128, 64, 32, 16]);
    }
}
