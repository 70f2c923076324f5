//! Direct-illumination shading of a heightfield by ray marching.

use std::f64::consts::PI;

use super::heightfield::HeightfieldMaterial;
use crate::model::lift_direction;

/// Iterations of interval bisection after the march brackets a hit.
const REFINE_STEPS: usize = 8;
const MAX_STEPS: usize = 1 << 15;

/// March controls. The default step is a quarter texel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchSettings {
    /// Step length as a fraction of one texel.
    pub step_texels: f64,
}

impl Default for MarchSettings {
    fn default() -> Self {
        Self { step_texels: 0.25 }
    }
}

/// Result of one reference query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shade {
    pub rgb: [f32; 3],
    /// False when the view ray found no surface within the march budget.
    pub hit: bool,
    pub shadowed: bool,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn to_f64(v: [f32; 3]) -> [f64; 3] {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = dot(v, v).sqrt();
    [v[0] / l, v[1] / l, v[2] / l]
}

/// Peak value of the normalized Beckmann distribution for roughness `alpha`.
pub fn beckmann_peak(alpha: f32) -> f64 {
    let a2 = (alpha as f64).powi(2);
    // maximum over tan²θ = s of (1 + s)² exp(−s / α²)
    let s = (2.0 * a2 - 1.0).max(0.0);
    (1.0 + s).powi(2) * (-s / a2).exp() / (PI * a2)
}

fn beckmann(cos_h: f64, alpha: f64) -> f64 {
    if cos_h <= 0.0 {
        return 0.0;
    }
    let c2 = cos_h * cos_h;
    let tan2 = (1.0 - c2) / c2;
    let a2 = alpha * alpha;
    (-tan2 / a2).exp() / (PI * a2 * c2 * c2)
}

/// Upper bound on any radiance [`shade_reference`] can return under a unit
/// light, with headroom for rounding to `f32`.
pub fn radiance_bound(mat: &HeightfieldMaterial) -> f64 {
    let exact = mat.max_albedo() as f64 / PI + mat.specular_weight as f64 * beckmann_peak(mat.roughness) / 4.0;
    exact * (1.0 + f32::EPSILON as f64)
}

/// Local reflectance at a surface point with normal `n`.
fn reflect(mat: &HeightfieldMaterial, albedo: [f32; 3], n: [f64; 3], wi: [f64; 3], wo: [f64; 3]) -> [f32; 3] {
    let cos_i = dot(n, wi).max(0.0);
    if cos_i == 0.0 {
        return [0.0; 3];
    }
    let cos_o = dot(n, wo).max(0.0);
    let h = normalize([wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2]]);
    let d = beckmann(dot(n, h), mat.roughness as f64);
    let spec = mat.specular_weight as f64 * d / (4.0 * cos_i.max(cos_o)) * cos_i;
    let mut out = [0.0f32; 3];
    for k in 0..3 {
        out[k] = (albedo[k] as f64 / PI * cos_i + spec) as f32;
    }
    out
}

struct Marcher<'a> {
    mat: &'a HeightfieldMaterial,
    step: f64,
    top: f64,
}

impl Marcher<'_> {
    /// Height of the ray above the surface at parameter `t`.
    fn clearance(&self, origin: [f64; 3], dir: [f64; 3], t: f64) -> f64 {
        let z = origin[2] + t * dir[2];
        z - self.mat.height(origin[0] + t * dir[0], origin[1] + t * dir[1])
    }

    /// First `t` where the ray dips below the surface, refined by bisection.
    fn first_hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        if self.clearance(origin, dir, 0.0) <= 0.0 {
            return Some(0.0);
        }
        let mut t_prev = 0.0;
        for i in 1..=MAX_STEPS {
            let t = i as f64 * self.step;
            if self.clearance(origin, dir, t) <= 0.0 {
                let (mut lo, mut hi) = (t_prev, t);
                for _ in 0..REFINE_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if self.clearance(origin, dir, mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            if origin[2] + t * dir[2] < -1e-9 {
                return None;
            }
            t_prev = t;
        }
        None
    }

    /// Whether anything blocks the ray before it climbs above the top.
    fn occluded(&self, origin: [f64; 3], dir: [f64; 3]) -> bool {
        if dir[2] <= 0.0 {
            return true;
        }
        let t_exit = (self.top - origin[2]) / dir[2];
        let mut t = self.step;
        while t < t_exit {
            if self.clearance(origin, dir, t) < 0.0 {
                return true;
            }
            t += self.step;
        }
        false
    }
}

/// Radiance leaving the displaced surface towards `omega_o` through the
/// point above `u`, under a unit distant light from `omega_i`.
///
/// The view ray enters at height `top()` above `u` and is marched down onto
/// the surface (parallax); the hit point is then tested for shadowing along
/// the light direction and shaded with a Lambertian plus normalized
/// Beckmann lobe using the heightfield normal.
pub fn shade_reference(
    mat: &HeightfieldMaterial,
    u: [f32; 2],
    omega_i: [f32; 2],
    omega_o: [f32; 2],
    settings: MarchSettings,
) -> Shade {
    let wi = to_f64(lift_direction(omega_i));
    let wo = to_f64(lift_direction(omega_o));
    let miss = Shade {
        rgb: [0.0; 3],
        hit: false,
        shadowed: false,
    };
    let marcher = Marcher {
        mat,
        step: settings.step_texels / mat.resolution() as f64,
        top: mat.top(),
    };
    let origin = [u[0] as f64, u[1] as f64, marcher.top];
    let down = [-wo[0], -wo[1], -wo[2]];
    let t_hit = if marcher.top == 0.0 {
        Some(0.0)
    } else if wo[2] <= 0.0 {
        None
    } else {
        marcher.first_hit(origin, down)
    };
    let Some(t_hit) = t_hit else {
        return miss;
    };
    let (hx, hy) = (origin[0] + t_hit * down[0], origin[1] + t_hit * down[1]);
    if wi[2] <= 0.0 {
        return Shade {
            rgb: [0.0; 3],
            hit: true,
            shadowed: true,
        };
    }
    let eps = 1e-3 * mat.height_scale as f64 + 1e-7;
    let surface = [hx, hy, mat.height(hx, hy) + eps];
    if marcher.top > 0.0 && marcher.occluded(surface, wi) {
        return Shade {
            rgb: [0.0; 3],
            hit: true,
            shadowed: true,
        };
    }
    let n = mat.normal(hx, hy);
    Shade {
        rgb: reflect(mat, mat.albedo(hx, hy), n, wi, wo),
        hit: true,
        shadowed: false,
    }
}
