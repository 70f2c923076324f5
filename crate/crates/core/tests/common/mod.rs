//! Independent f64 reference implementations used as test oracles, plus
//! finite-difference helpers. Nothing here calls into the tape.

#![allow(dead_code)]

use nmat_core::loss::{SOBEL_X, SOBEL_Y};
use nmat_core::{MaterialConfig, NeuralMaterial};
use rand::Rng;

pub mod exhaustive;
pub mod grad;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-3;

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of a batch of gradient comparisons.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradReport {
    pub fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if err > self.worst || self.checked == 1 {
            self.worst = err;
            self.worst_at = at();
        }
    }

    pub fn ok(&self) -> bool {
        self.worst < GRAD_TOLERANCE
    }
}

/// Compares an analytic gradient with central differences of `f` at every
/// coordinate. The floor of the relative error is `1e-3 · max |grad|`, so
/// near-zero entries are judged on an absolute scale.
pub fn check_all(
    name: &str,
    analytic: &[f32],
    x: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    report: &mut GradReport,
) {
    let numeric: Vec<f64> = (0..x.len()).map(|i| central_diff(&mut f, x, i, FD_STEP)).collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = rel_err(a as f64, n, 1e-3 * scale.max(1e-8));
        report.record(err, || format!("{name}[{i}]: analytic {a} numeric {n}"));
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values at least `gap` away from zero.
pub fn away_from_zero(rng: &mut impl Rng, n: usize, gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect()
}

/// Distinct values spaced by at least `0.01`, in random order.
pub fn distinct(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.02 - n as f32 * 0.01).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v
}

/// `[m×k]·[k×n]` by the textbook triple loop.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Zero-padded cross-correlation of `[n, c_in, h, w]` with
/// `[c_out, c_in, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    (n, c_in, h, w): (usize, usize, usize, usize),
    (c_out, kh, kw): (usize, usize, usize),
    pad: usize,
) -> Vec<f64> {
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = bias.map_or(0.0, |bv| bv[o]);
                    for c in 0..c_in {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y + dy) as i64 - pad as i64;
                                let ix = (x + dx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let iv = input[((b * c_in + c) * h + iy as usize) * w + ix as usize];
                                let kv = kernel[((o * c_in + c) * kh + dy) * kw + dx];
                                s += iv * kv;
                            }
                        }
                    }
                    out[((b * c_out + o) * oh + y) * ow + x] = s;
                }
            }
        }
    }
    out
}

/// Same-size sliding maximum over `planes` planes of `h × w`, with the
/// index of the first maximum in scan order.
pub fn maxpool(input: &[f64], planes: usize, h: usize, w: usize, window: usize) -> (Vec<f64>, Vec<usize>) {
    let r = (window / 2) as i64;
    let mut out = vec![0.0; input.len()];
    let mut arg = vec![0; input.len()];
    for p in 0..planes {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (iy, ix) = (y + dy, x + dx);
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        let i = (p * h + iy as usize) * w + ix as usize;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                let o = (p * h + y as usize) * w + x as usize;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

/// Per-plane Sobel responses `(Gx, Gy)` with zero padding.
pub fn sobel(planes: &[f64], count: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let kx: Vec<f64> = SOBEL_X.iter().flatten().map(|&v| v as f64).collect();
    let ky: Vec<f64> = SOBEL_Y.iter().flatten().map(|&v| v as f64).collect();
    let gx = conv2d(planes, &kx, None, (count, 1, h, w), (1, 3, 3), 1);
    let gy = conv2d(planes, &ky, None, (count, 1, h, w), (1, 3, 3), 1);
    (gx, gy)
}

/// Mean over texels and channels of the squared Sobel differences.
pub fn gradient_loss(pred: &[f64], reference: &[f64], planes: usize, h: usize, w: usize) -> f64 {
    let (px, py) = sobel(pred, planes, h, w);
    let (rx, ry) = sobel(reference, planes, h, w);
    let s: f64 = (0..pred.len()).map(|i| (rx[i] - px[i]).powi(2) + (ry[i] - py[i]).powi(2)).sum();
    s / pred.len() as f64
}

pub fn remap(x: f64) -> f64 {
    if x > 0.0 { x.powf(0.25) } else { 0.0 }
}

/// `L1 + w · L_G(remap?(pred), remap?(ref))` over `[3, h, w]` images.
pub fn combined_loss(pred: &[f64], reference: &[f64], h: usize, w: usize, gradient: bool, remapped: bool, weight: f64) -> f64 {
    let l1 = pred.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum::<f64>() / pred.len() as f64;
    if !gradient {
        return l1;
    }
    let (p, r): (Vec<f64>, Vec<f64>) = if remapped {
        (pred.iter().map(|&v| remap(v)).collect(), reference.iter().map(|&v| remap(v)).collect())
    } else {
        (pred.to_vec(), reference.to_vec())
    };
    l1 + weight * gradient_loss(&p, &r, pred.len() / (h * w), h, w)
}

/// `(sin 2^0πp, cos 2^0πp, …)` for each value, concatenated.
pub fn fourier(values: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * 2 * frequencies);
    for &p in values {
        for k in 0..frequencies {
            let f = std::f64::consts::PI * (1u64 << k) as f64;
            out.push((f * p).sin());
            out.push((f * p).cos());
        }
    }
    out
}

/// Bilinear lookup on a wrapping `[res, res, c]` texture with texel
/// centres at `(i + 0.5) / res`.
pub fn bilinear(tex: &[f64], res: usize, c: usize, u: f64, v: f64) -> Vec<f64> {
    let x = u * res as f64 - 0.5;
    let y = v * res as f64 - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let wrap = |i: f64| (i as i64).rem_euclid(res as i64) as usize;
    let corners = [
        (wrap(x0), wrap(y0), (1.0 - fx) * (1.0 - fy)),
        (wrap(x0 + 1.0), wrap(y0), fx * (1.0 - fy)),
        (wrap(x0), wrap(y0 + 1.0), (1.0 - fx) * fy),
        (wrap(x0 + 1.0), wrap(y0 + 1.0), fx * fy),
    ];
    let mut out = vec![0.0; c];
    for (ix, iy, wgt) in corners {
        for k in 0..c {
            out[k] += wgt * tex[(iy * res + ix) * c + k];
        }
    }
    out
}

/// Pyramid lookup: bilinear in the two bracketing levels of the clamped
/// lod, blended linearly.
pub fn pyramid(levels: &[&[f64]], base: usize, c: usize, u: f64, v: f64, lod: f64) -> Vec<f64> {
    let max = (levels.len() - 1) as f64;
    let l = lod.clamp(0.0, max);
    let lo = l.floor() as usize;
    let hi = (lo + 1).min(levels.len() - 1);
    let t = l - lo as f64;
    let a = bilinear(levels[lo], base >> lo, c, u, v);
    let b = bilinear(levels[hi], base >> hi, c, u, v);
    a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// `x · W + b` with ReLU between layers; `layers` holds `(W[in×out], b, in, out)`.
pub fn mlp(x: &[f64], layers: &[(&[f64], &[f64], usize, usize)]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, &(w, b, fan_in, fan_out)) in layers.iter().enumerate() {
        let mut out = matmul(&h, w, 1, fan_in, fan_out);
        for (o, bv) in out.iter_mut().zip(b) {
            *o += bv;
        }
        if i + 1 < layers.len() {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = out;
    }
    h
}

/// f64 copy of a [`NeuralMaterial`] with an MLP decoder, its parameters
/// flattened in store order so single entries can be perturbed.
pub struct ShadowModel {
    pub config: MaterialConfig,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub offsets: Vec<usize>,
    pub flat: Vec<f64>,
}

impl ShadowModel {
    pub fn new(model: &NeuralMaterial) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut offsets = Vec::new();
        let mut flat = Vec::new();
        for (_, p) in model.params().iter() {
            names.push(p.name.clone());
            shapes.push(p.value.shape().to_vec());
            offsets.push(flat.len());
            flat.extend(p.value.data().iter().map(|&v| v as f64));
        }
        Self {
            config: *model.config(),
            names,
            shapes,
            offsets,
            flat,
        }
    }

    fn param<'a>(&self, flat: &'a [f64], name: &str) -> (&'a [f64], &[usize]) {
        let i = self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no parameter {name}"));
        let n: usize = self.shapes[i].iter().product();
        (&flat[self.offsets[i]..self.offsets[i] + n], &self.shapes[i])
    }

    fn layers<'a>(&self, flat: &'a [f64], prefix: &str) -> Vec<(&'a [f64], &'a [f64], usize, usize)> {
        let mut out = Vec::new();
        for i in 0.. {
            let wname = format!("{prefix}.layer{i}.weight");
            if !self.names.contains(&wname) {
                break;
            }
            let (w, shape) = self.param(flat, &wname);
            let (fan_in, fan_out) = (shape[0], shape[1]);
            let (b, _) = self.param(flat, &format!("{prefix}.layer{i}.bias"));
            out.push((w, b, fan_in, fan_out));
        }
        out
    }

    fn encode(&self, v: &[f64], frequencies: usize) -> Vec<f64> {
        if self.config.encoding {
            fourier(v, frequencies)
        } else {
            v.to_vec()
        }
    }

    /// Radiance of one query `[u, v, ωi.x, ωi.y, ωo.x, ωo.y, lod]` under
    /// parameters `flat`.
    pub fn eval(&self, flat: &[f64], q: &[f64]) -> [f64; 3] {
        let cfg = &self.config;
        let (tex, tshape) = self.param(flat, "offset.texture");
        let offset_tex = bilinear(tex, tshape[0], tshape[2], q[0], q[1]);
        let wo = self.encode(&q[4..6], cfg.direction_frequencies);
        let mut offset_in = offset_tex;
        offset_in.extend(&wo);
        let d = mlp(&offset_in, &self.layers(flat, "offset"));
        let u = [(q[0] + d[0]).rem_euclid(1.0), (q[1] + d[1]).rem_euclid(1.0)];
        let levels: Vec<&[f64]> = (0..cfg.num_levels())
            .map(|l| self.param(flat, &format!("pyramid.level{l}")).0)
            .collect();
        let mut features = pyramid(&levels, cfg.base_resolution, cfg.channels, u[0], u[1], q[6]);
        features.extend(self.encode(&u, cfg.position_frequencies));
        features.extend(self.encode(&q[2..4], cfg.direction_frequencies));
        features.extend(wo);
        let rgb = mlp(&features, &self.layers(flat, "decoder"));
        [rgb[0], rgb[1], rgb[2]]
    }

    /// Combined loss of an `h × w` tile of queries (row-major) against
    /// `reference[(y·w + x)·3 + c]`.
    #[allow(clippy::too_many_arguments)]
    pub fn tile_loss(
        &self,
        flat: &[f64],
        queries: &[f64],
        reference: &[f64],
        h: usize,
        w: usize,
        gradient: bool,
        remapped: bool,
    ) -> f64 {
        let mut pred = vec![0.0; 3 * h * w];
        let mut refp = vec![0.0; 3 * h * w];
        for p in 0..h * w {
            let rgb = self.eval(flat, &queries[p * 7..p * 7 + 7]);
            for c in 0..3 {
                pred[c * h * w + p] = rgb[c];
                refp[c * h * w + p] = reference[p * 3 + c];
            }
        }
        combined_loss(&pred, &refp, h, w, gradient, remapped, 1.0)
    }
}
