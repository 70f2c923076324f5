use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displaced-surface material used as the shading reference.
///
/// Heights are stored normalized to `[0, 1]` on a periodic `R × R` grid and
/// scaled by `height_scale` (in uv units) when shading.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightfieldMaterial {
    resolution: usize,
    heights: Vec<f32>,
    albedo: Vec<[f32; 3]>,
    pub roughness: f32,
    pub specular_weight: f32,
    pub height_scale: f32,
    max_height: f32,
}

/// Procedural material recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaterialSpec {
    /// Scattered glossy Gaussian bumps on a darker base.
    GlossyBumps { seed: u64 },
    /// Over/under woven threads.
    Woven { threads: usize },
    /// Grayscale image as heightmap, tinted uniformly.
    Image { path: String },
}

impl MaterialSpec {
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s {
            "glossy-bumps" => Ok(MaterialSpec::GlossyBumps { seed }),
            "woven" => Ok(MaterialSpec::Woven { threads: 8 }),
            other => match other.strip_prefix("image:") {
                Some(path) => Ok(MaterialSpec::Image { path: path.into() }),
                None => Err(Error::Config(format!(
                    "unknown material {other:?} (glossy-bumps, woven or image:<path>)"
                ))),
            },
        }
    }

    pub fn build(&self, resolution: usize) -> Result<HeightfieldMaterial> {
        match self {
            MaterialSpec::GlossyBumps { seed } => Ok(HeightfieldMaterial::glossy_bumps(resolution, *seed)),
            MaterialSpec::Woven { threads } => Ok(HeightfieldMaterial::woven(resolution, *threads)),
            MaterialSpec::Image { path } => HeightfieldMaterial::from_image(path, resolution),
        }
    }
}

fn torus_delta(a: f32, b: f32) -> f32 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

impl HeightfieldMaterial {
    pub fn new(
        resolution: usize,
        heights: Vec<f32>,
        albedo: Vec<[f32; 3]>,
        roughness: f32,
        specular_weight: f32,
        height_scale: f32,
    ) -> Result<Self> {
        let n = resolution * resolution;
        if resolution == 0 || heights.len() != n || albedo.len() != n {
            return Err(Error::Config(format!(
                "heightfield of extent {resolution} needs {n} heights and albedos, got {} and {}",
                heights.len(),
                albedo.len()
            )));
        }
        if !heights.iter().all(|h| h.is_finite() && (0.0..=1.0).contains(h)) {
            return Err(Error::Config("heights must be finite and within [0, 1]".into()));
        }
        if !albedo.iter().flatten().all(|a| (0.0..=1.0).contains(a)) {
            return Err(Error::Config("albedo must lie in [0, 1]".into()));
        }
        if !(roughness > 0.0 && roughness <= 1.0) {
            return Err(Error::Config(format!("roughness {roughness} outside (0, 1]")));
        }
        if !(specular_weight >= 0.0 && height_scale >= 0.0) {
            return Err(Error::Config("specular weight and height scale must be non-negative".into()));
        }
        let max_height = heights.iter().fold(0.0f32, |m, &h| m.max(h));
        Ok(Self {
            resolution,
            heights,
            albedo,
            roughness,
            specular_weight,
            height_scale,
            max_height,
        })
    }

    /// Flat surface of uniform albedo.
    pub fn flat(resolution: usize, albedo: [f32; 3], roughness: f32, specular_weight: f32) -> Self {
        let n = resolution * resolution;
        Self::new(resolution, vec![0.0; n], vec![albedo; n], roughness, specular_weight, 0.0)
            .expect("valid flat material")
    }

    /// A dozen periodic Gaussian bumps, each with its own tint, on a
    /// blue-grey base. Glossy, with enough relief for visible parallax and
    /// self-shadowing.
    pub fn glossy_bumps(resolution: usize, seed: u64) -> Self {
        const BUMPS: usize = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bumps: Vec<([f32; 2], f32, f32, [f32; 3])> = (0..BUMPS)
            .map(|_| {
                let c = [rng.random::<f32>(), rng.random::<f32>()];
                let radius = rng.random_range(0.04..0.09);
                let height = rng.random_range(0.5..1.0);
                let tint = [
                    rng.random_range(0.5..0.9),
                    rng.random_range(0.2..0.6),
                    rng.random_range(0.05..0.3),
                ];
                (c, radius, height, tint)
            })
            .collect();
        let base = [0.12, 0.16, 0.22];
        let n = resolution;
        let mut heights = vec![0.0; n * n];
        let mut albedo = vec![base; n * n];
        for y in 0..n {
            for x in 0..n {
                let p = [(x as f32 + 0.5) / n as f32, (y as f32 + 0.5) / n as f32];
                let mut h = 0.0f32;
                let mut weight = 0.0f32;
                let mut tint = [0.0f32; 3];
                for (c, r, a, t) in &bumps {
                    let dx = torus_delta(p[0], c[0]);
                    let dy = torus_delta(p[1], c[1]);
                    let g = (-(dx * dx + dy * dy) / (2.0 * r * r)).exp();
                    h = h.max(a * g);
                    weight += g;
                    for k in 0..3 {
                        tint[k] += g * t[k];
                    }
                }
                heights[y * n + x] = h;
                let blend = (weight * 2.0).min(1.0);
                let albedo_px = &mut albedo[y * n + x];
                for k in 0..3 {
                    let t = if weight > 0.0 { tint[k] / weight } else { base[k] };
                    albedo_px[k] = base[k] * (1.0 - blend) + t * blend;
                }
            }
        }
        Self::new(resolution, heights, albedo, 0.15, 0.6, 0.035).expect("valid procedural material")
    }

    /// Two families of sinusoidal threads alternating over and under.
    pub fn woven(resolution: usize, threads: usize) -> Self {
        use std::f32::consts::PI;
        let n = resolution;
        let k = threads as f32;
        let mut heights = vec![0.0; n * n];
        let mut albedo = vec![[0.0; 3]; n * n];
        for y in 0..n {
            for x in 0..n {
                let (u, v) = ((x as f32 + 0.5) / n as f32, (y as f32 + 0.5) / n as f32);
                // thread profiles across their width
                let warp = (PI * k * u).sin().abs();
                let weft = (PI * k * v).sin().abs();
                // which family is on top alternates per crossing
                let cell = ((u * k) as usize + (v * k) as usize) % 2;
                let (top, bottom, top_color, bottom_color) = if cell == 0 {
                    (warp, weft, [0.7, 0.55, 0.3], [0.25, 0.3, 0.55])
                } else {
                    (weft, warp, [0.25, 0.3, 0.55], [0.7, 0.55, 0.3])
                };
                let h_top = 0.5 + 0.5 * top.sqrt();
                let h_bottom = 0.5 * bottom.sqrt();
                let (h, c) = if h_top >= h_bottom { (h_top, top_color) } else { (h_bottom, bottom_color) };
                heights[y * n + x] = h;
                albedo[y * n + x] = c;
            }
        }
        Self::new(resolution, heights, albedo, 0.3, 0.35, 0.02).expect("valid procedural material")
    }

    /// Grayscale image resampled (nearest) to `resolution` as heightmap.
    pub fn from_image(path: impl AsRef<Path>, resolution: usize) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.to_luma32f();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Config(format!("{} is empty", path.display())));
        }
        let n = resolution;
        let mut heights = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let sx = (x * w as usize / n) as u32;
                let sy = (y * h as usize / n) as u32;
                heights[y * n + x] = img.get_pixel(sx, sy).0[0].clamp(0.0, 1.0);
            }
        }
        let albedo = heights
            .iter()
            .map(|&h| [0.2 + 0.5 * h, 0.2 + 0.4 * h, 0.25 + 0.2 * h])
            .collect();
        Self::new(resolution, heights, albedo, 0.25, 0.4, 0.03)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn albedo_map(&self) -> &[[f32; 3]] {
        &self.albedo
    }

    /// Highest point of the displaced surface, in uv units.
    pub fn top(&self) -> f64 {
        self.max_height as f64 * self.height_scale as f64
    }

    pub fn max_albedo(&self) -> f32 {
        self.albedo.iter().flatten().fold(0.0f32, |m, &a| m.max(a))
    }

    fn bilinear<T: Copy>(&self, grid: &[T], u: f64, v: f64, mut lerp: impl FnMut([T; 4], [f64; 4]) -> T) -> T {
        let n = self.resolution;
        let x = u * n as f64 - 0.5;
        let y = v * n as f64 - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let wrap = |i: f64| (i as i64).rem_euclid(n as i64) as usize;
        let (ix0, ix1, iy0, iy1) = (wrap(x0), wrap(x0 + 1.0), wrap(y0), wrap(y0 + 1.0));
        lerp(
            [grid[iy0 * n + ix0], grid[iy0 * n + ix1], grid[iy1 * n + ix0], grid[iy1 * n + ix1]],
            [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        )
    }

    /// Surface height at `(u, v)` in uv units (bilinear, periodic).
    pub fn height(&self, u: f64, v: f64) -> f64 {
        let h = self.bilinear(&self.heights, u, v, |t, w| {
            t.iter().zip(w).map(|(&a, b)| a as f64 * b).sum::<f64>() as f32
        });
        h as f64 * self.height_scale as f64
    }

    pub fn albedo(&self, u: f64, v: f64) -> [f32; 3] {
        self.bilinear(&self.albedo, u, v, |t, w| {
            let mut out = [0.0f32; 3];
            for (c, wk) in t.iter().zip(w) {
                for k in 0..3 {
                    out[k] += c[k] * wk as f32;
                }
            }
            out
        })
    }

    /// Unit surface normal from central differences of the height.
    pub fn normal(&self, u: f64, v: f64) -> [f64; 3] {
        let d = 0.5 / self.resolution as f64;
        let dhdx = (self.height(u + d, v) - self.height(u - d, v)) / (2.0 * d);
        let dhdy = (self.height(u, v + d) - self.height(u, v - d)) / (2.0 * d);
        let len = (dhdx * dhdx + dhdy * dhdy + 1.0).sqrt();
        [-dhdx / len, -dhdy / len, 1.0 / len]
    }

    /// Canonical bytes for hashing.
    pub(crate) fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.resolution as u64).to_le_bytes());
        for h in &self.heights {
            out.extend(h.to_le_bytes());
        }
        for a in self.albedo.iter().flatten() {
            out.extend(a.to_le_bytes());
        }
        for s in [self.roughness, self.specular_weight, self.height_scale] {
            out.extend(s.to_le_bytes());
        }
        out
    }
}
