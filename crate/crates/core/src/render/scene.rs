use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bytes::read_file;
use crate::error::{Error, Result};
use crate::model::{lod_from_kernel, project_direction, Query7D};

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn length(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / length(a))
}

/// Surface the material is mapped onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// Square of side `size` in the z = 0 plane, centred on the origin,
    /// facing +z.
    Quad { size: f64 },
    /// Sphere at the origin; u follows longitude, v latitude.
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view.
    pub fov_degrees: f64,
}

/// Distant light; `direction` points from the surface toward the light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: Vec3,
    pub intensity: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub geometry: Geometry,
    pub camera: Camera,
    pub light: Light,
    pub width: usize,
    pub height: usize,
    /// 1 (pixel centre) or 4 (fixed rotated-grid jitter).
    pub spp: usize,
    /// Texture repeats across the surface.
    pub tiling: f64,
    pub background: [f32; 3],
}

/// Minimum image side.
pub const MIN_EXTENT: usize = 16;

/// Sub-pixel offsets for 4 samples per pixel.
const ROTATED_GRID: [[f64; 2]; 4] = [[0.375, 0.125], [0.875, 0.375], [0.125, 0.625], [0.625, 0.875]];

impl Default for SceneConfig {
    fn default() -> Self {
        Self::probe()
    }
}

impl SceneConfig {
    /// Oblique view of a tiled quad under a raking light; the fixed view
    /// used by the ablation strip.
    pub fn probe() -> Self {
        Self {
            geometry: Geometry::Quad { size: 1.0 },
            camera: Camera {
                position: [0.0, -0.8, 0.9],
                look_at: [0.0, 0.0, 0.0],
                up: [0.0, 0.0, 1.0],
                fov_degrees: 40.0,
            },
            light: Light {
                direction: [0.5, 0.3, 0.8],
                intensity: 1.0,
            },
            width: 96,
            height: 96,
            spp: 1,
            tiling: 1.0,
            background: [0.0; 3],
        }
    }

    /// Head-on view of a quad of side 1 that exactly fills a square image
    /// of `extent` pixels from `distance` away.
    pub fn fronto_parallel(extent: usize, distance: f64) -> Self {
        let fov = 2.0 * (0.5 / distance).atan();
        Self {
            geometry: Geometry::Quad { size: 1.0 },
            camera: Camera {
                position: [0.0, 0.0, distance],
                look_at: [0.0; 3],
                up: [0.0, 1.0, 0.0],
                fov_degrees: fov.to_degrees(),
            },
            width: extent,
            height: extent,
            ..Self::probe()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let scene: Self = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < MIN_EXTENT || self.height < MIN_EXTENT {
            return bad(format!(
                "image is {}x{}, both sides must be at least {MIN_EXTENT}",
                self.width, self.height
            ));
        }
        if self.spp != 1 && self.spp != 4 {
            return bad(format!("spp must be 1 or 4, got {}", self.spp));
        }
        if !(self.tiling > 0.0 && self.tiling.is_finite()) {
            return bad(format!("tiling must be positive, got {}", self.tiling));
        }
        let c = &self.camera;
        if !(c.fov_degrees > 0.0 && c.fov_degrees < 180.0) {
            return bad(format!("field of view {} outside (0, 180)", c.fov_degrees));
        }
        if length(sub(c.look_at, c.position)) == 0.0 || length(cross(sub(c.look_at, c.position), c.up)) < 1e-12 {
            return bad("camera view direction is degenerate or parallel to up".into());
        }
        if length(self.light.direction) == 0.0 || !(self.light.intensity >= 0.0) {
            return bad("light needs a nonzero direction and nonnegative intensity".into());
        }
        match self.geometry {
            Geometry::Quad { size } => {
                if !(size > 0.0) {
                    return bad(format!("quad size must be positive, got {size}"));
                }
                if c.position[2] <= 0.0 {
                    return bad("camera must be in front of the quad (z > 0)".into());
                }
            }
            Geometry::Sphere { radius } => {
                if !(radius > 0.0) {
                    return bad(format!("sphere radius must be positive, got {radius}"));
                }
                if length(c.position) <= radius {
                    return bad("camera must be outside the sphere".into());
                }
            }
        }
        Ok(())
    }

    fn ray(&self, px: f64, py: f64) -> (Vec3, Vec3) {
        let c = &self.camera;
        let forward = normalize(sub(c.look_at, c.position));
        let right = normalize(cross(forward, c.up));
        let up = cross(right, forward);
        let half = (c.fov_degrees.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * px / self.width as f64 - 1.0) * half * aspect;
        let y = (1.0 - 2.0 * py / self.height as f64) * half;
        let dir = normalize(add(forward, add(scale(right, x), scale(up, y))));
        (c.position, dir)
    }

    fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        match self.geometry {
            Geometry::Quad { size } => {
                if dir[2] >= 0.0 {
                    return None;
                }
                let t = -origin[2] / dir[2];
                let p = add(origin, scale(dir, t));
                let half = size * 0.5;
                if p[0].abs() > half || p[1].abs() > half {
                    return None;
                }
                Some(Hit {
                    p,
                    uv: [(p[0] + half) / size, (p[1] + half) / size],
                    tangent: [1.0, 0.0, 0.0],
                    bitangent: [0.0, 1.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                    uv_per_world: [1.0 / size, 1.0 / size],
                })
            }
            Geometry::Sphere { radius } => {
                let b = dot(origin, dir);
                let disc = b * b - (dot(origin, origin) - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                if t <= 0.0 {
                    return None;
                }
                let p = add(origin, scale(dir, t));
                let normal = scale(p, 1.0 / radius);
                let theta = normal[2].clamp(-1.0, 1.0).acos();
                let phi = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
                let ring = theta.sin().max(1e-9);
                let tangent = [-phi.sin(), phi.cos(), 0.0];
                let bitangent = cross(normal, tangent);
                Some(Hit {
                    p,
                    uv: [phi / (2.0 * PI), 1.0 - theta / PI],
                    tangent,
                    bitangent,
                    normal,
                    uv_per_world: [1.0 / (2.0 * PI * radius * ring), 1.0 / (PI * radius)],
                })
            }
        }
    }

    /// Queries for every sample of every pixel, `None` where the ray misses
    /// the surface. `radiance_scale` is zero for samples whose light is
    /// below the local horizon.
    pub fn query_buffer(&self, resolution: usize, levels: usize) -> Result<QueryBuffer> {
        self.validate()?;
        let offsets: &[[f64; 2]] = if self.spp == 1 { &[[0.5, 0.5]] } else { &ROTATED_GRID };
        let light = normalize(self.light.direction);
        let rows: Vec<Vec<Option<Sample>>> = (0..self.height)
            .into_par_iter()
            .map(|y| {
                let mut row = Vec::with_capacity(self.width * offsets.len());
                for x in 0..self.width {
                    for o in offsets {
                        row.push(self.sample(x as f64 + o[0], y as f64 + o[1], light, resolution, levels));
                    }
                }
                row
            })
            .collect();
        Ok(QueryBuffer {
            width: self.width,
            height: self.height,
            spp: offsets.len(),
            samples: rows.concat(),
        })
    }

    fn sample(&self, px: f64, py: f64, light: Vec3, resolution: usize, levels: usize) -> Option<Sample> {
        let (o, d) = self.ray(px, py);
        let hit = self.intersect(o, d)?;
        let local = |v: Vec3| [dot(v, hit.tangent), dot(v, hit.bitangent), dot(v, hit.normal)];
        let wo = local(scale(d, -1.0));
        if wo[2] <= 0.0 {
            return None;
        }
        let wi = local(light);
        // footprint from neighbouring rays hitting the tangent plane
        let footprint = |(ox, oy): (f64, f64)| {
            let (o2, d2) = self.ray(px + ox, py + oy);
            let denom = dot(d2, hit.normal);
            if denom.abs() < 1e-12 {
                return f64::INFINITY;
            }
            let t = dot(sub(hit.p, o2), hit.normal) / denom;
            let dp = sub(add(o2, scale(d2, t)), hit.p);
            let du = dot(dp, hit.tangent) * hit.uv_per_world[0];
            let dv = dot(dp, hit.bitangent) * hit.uv_per_world[1];
            du.hypot(dv)
        };
        let texels = footprint((1.0, 0.0)).max(footprint((0.0, 1.0))) * self.tiling * resolution as f64;
        let wrap = |t: f64| {
            let w = (t * self.tiling).rem_euclid(1.0);
            if w >= 1.0 { 0.0 } else { w as f32 }
        };
        let to_f32 = |v: Vec3| project_direction([v[0] as f32, v[1] as f32, v[2] as f32]);
        let lit = wi[2] > 0.0;
        Some(Sample {
            query: Query7D {
                u: [wrap(hit.uv[0]), wrap(hit.uv[1])],
                omega_i: if lit { to_f32(wi) } else { [0.0, 0.0] },
                omega_o: to_f32(wo),
                lod: lod_from_kernel(texels.min(f32::MAX as f64) as f32, levels),
            },
            radiance_scale: if lit { self.light.intensity } else { 0.0 },
        })
    }
}

struct Hit {
    p: Vec3,
    uv: [f64; 2],
    tangent: Vec3,
    bitangent: Vec3,
    normal: Vec3,
    /// uv change per unit of world distance along tangent and bitangent.
    uv_per_world: [f64; 2],
}

/// One surface sample of a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub query: Query7D,
    pub radiance_scale: f32,
}

/// Per-pixel material queries, `spp` consecutive samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBuffer {
    pub width: usize,
    pub height: usize,
    pub spp: usize,
    pub samples: Vec<Option<Sample>>,
}

impl QueryBuffer {
    /// Queries of the samples that hit the surface, in buffer order.
    pub fn hits(&self) -> Vec<Query7D> {
        self.samples.iter().flatten().map(|s| s.query).collect()
    }

    /// Averages per-hit radiance (in the order of [`hits`](Self::hits))
    /// into pixels; misses take `background`.
    pub fn resolve(&self, radiance: &[[f32; 3]], background: [f32; 3]) -> Vec<[f32; 3]> {
        let mut values = radiance.iter();
        let per_sample: Vec<[f32; 3]> = self
            .samples
            .iter()
            .map(|s| match s {
                Some(s) => values.next().expect("one value per hit").map(|c| c * s.radiance_scale),
                None => background,
            })
            .collect();
        per_sample
            .chunks_exact(self.spp)
            .map(|px| {
                let mut acc = [0.0f32; 3];
                for s in px {
                    for k in 0..3 {
                        acc[k] += s[k];
                    }
                }
                acc.map(|c| c / self.spp as f32)
            })
            .collect()
    }
}
