//! Feature-encoding and texture-lookup operators.

use std::f64::consts::PI;

use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::{shape_err, Result, Tensor, TensorError};

/// Bilinear footprint of a point on a wrapping `res × res` grid with texel
/// centres at `(i + 0.5) / res`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bilinear {
    /// Texel indices `(x0,y0) (x1,y0) (x0,y1) (x1,y1)`, row-major.
    pub idx: [usize; 4],
    pub fx: f32,
    pub fy: f32,
}

impl Bilinear {
    pub fn at(u: f32, v: f32, res: usize) -> Self {
        let x = u * res as f32 - 0.5;
        let y = v * res as f32 - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let r = res as i64;
        let wrap = |i: i64| i.rem_euclid(r) as usize;
        let (ix0, ix1) = (wrap(x0 as i64), wrap(x0 as i64 + 1));
        let (iy0, iy1) = (wrap(y0 as i64), wrap(y0 as i64 + 1));
        Self {
            idx: [iy0 * res + ix0, iy0 * res + ix1, iy1 * res + ix0, iy1 * res + ix1],
            fx,
            fy,
        }
    }

    pub fn weights(&self) -> [f32; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }
}

/// Which pyramid levels a query touches and how they blend.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LevelBlend {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`.
    pub t: f32,
    /// False when the lod was clamped, in which case its derivative is zero.
    pub active: bool,
}

impl LevelBlend {
    pub fn new(lod: Option<f32>, levels: usize) -> Self {
        let Some(lod) = lod else {
            return Self {
                lo: 0,
                hi: 0,
                t: 0.0,
                active: false,
            };
        };
        let max = (levels - 1) as f32;
        let clamped = lod.clamp(0.0, max);
        let lo = (clamped.floor() as usize).min(levels - 1);
        let hi = (lo + 1).min(levels - 1);
        Self {
            lo,
            hi,
            t: clamped - lo as f32,
            active: lod == clamped && hi != lo,
        }
    }
}

fn level_res(op: &'static str, shape: &[usize], channels: Option<usize>) -> Result<(usize, usize)> {
    match *shape {
        [h, w, c] if h == w && h > 0 && channels.is_none_or(|ch| ch == c) => Ok((h, c)),
        _ => Err(shape_err(
            op,
            format!("texture level must be [R,R,C] with matching C, got {shape:?}"),
        )),
    }
}

impl Tape {
    /// Fourier features: each input column `p` becomes
    /// `sin(2^0 π p), cos(2^0 π p), …, sin(2^{L-1} π p), cos(2^{L-1} π p)`.
    pub fn fourier(&mut self, x: Var, frequencies: usize) -> Result<Var> {
        if frequencies == 0 {
            return Err(TensorError::Invalid {
                op: "fourier",
                detail: "frequency count must be at least 1".into(),
            });
        }
        let t = self.value(x);
        let &[m, d] = t.shape() else {
            return Err(shape_err(
                "fourier",
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        };
        let width = d * 2 * frequencies;
        let mut out = vec![0.0; m * width];
        for (row, dst) in t.data().chunks_exact(d).zip(out.chunks_exact_mut(width)) {
            for (j, &p) in row.iter().enumerate() {
                let enc = &mut dst[j * 2 * frequencies..(j + 1) * 2 * frequencies];
                encode_into(p, enc);
            }
        }
        self.push(
            Tensor::new([m, width], out)?,
            Op::Fourier {
                input: x,
                frequencies,
            },
        )
    }

    /// Samples a texture pyramid at `coords[Q×2]` (wrapping uv in texture
    /// space). Within a level the lookup is bilinear; with `lod[Q×1]` the two
    /// bracketing levels are blended linearly, otherwise level 0 is used.
    /// Out-of-range lods are clamped.
    pub fn sample(&mut self, levels: &[Var], coords: Var, lod: Option<Var>) -> Result<Var> {
        let Some(&first) = levels.first() else {
            return Err(shape_err("sample", "no texture levels"));
        };
        let (_, channels) = level_res("sample", self.shape(first), None)?;
        let res: Vec<usize> = levels
            .iter()
            .map(|&l| level_res("sample", self.shape(l), Some(channels)).map(|(r, _)| r))
            .collect::<Result<_>>()?;
        let &[q, 2] = self.shape(coords) else {
            return Err(shape_err(
                "sample",
                format!("coords must be [Q,2], got {:?}", self.shape(coords)),
            ));
        };
        if let Some(l) = lod {
            if self.value(l).numel() != q {
                return Err(shape_err(
                    "sample",
                    format!("lod {:?} does not match {q} queries", self.shape(l)),
                ));
            }
        }
        let uv = self.value(coords).data();
        let lods = lod.map(|l| self.value(l).data());
        let mut out = vec![0.0f32; q * channels];
        for i in 0..q {
            let blend = LevelBlend::new(lods.map(|l| l[i]), levels.len());
            let dst = &mut out[i * channels..(i + 1) * channels];
            for (level, weight) in [(blend.lo, 1.0 - blend.t), (blend.hi, blend.t)] {
                if weight == 0.0 {
                    continue;
                }
                let tex = self.value(levels[level]).data();
                let b = Bilinear::at(uv[2 * i], uv[2 * i + 1], res[level]);
                for (&idx, w) in b.idx.iter().zip(b.weights()) {
                    let texel = &tex[idx * channels..(idx + 1) * channels];
                    for (o, t) in dst.iter_mut().zip(texel) {
                        *o += weight * w * t;
                    }
                }
            }
        }
        self.push(
            Tensor::new([q, channels], out)?,
            Op::Sample {
                levels: levels.to_vec(),
                coords,
                lod,
            },
        )
    }
}

/// Writes the `2L` Fourier features of `p` into `out`.
pub(crate) fn encode_into(p: f32, out: &mut [f32]) {
    let mut freq = PI;
    for pair in out.chunks_exact_mut(2) {
        let (s, c) = (freq * p as f64).sin_cos();
        pair[0] = s as f32;
        pair[1] = c as f32;
        freq *= 2.0;
    }
}

pub(crate) fn fourier_backward(sink: &mut GradSink<'_>, x: Var, frequencies: usize, grad: &[f32]) {
    let input = sink.value(x).data().to_vec();
    let width = 2 * frequencies;
    sink.with(x, |g| {
        for (j, (&p, slot)) in input.iter().zip(g.iter_mut()).enumerate() {
            let gr = &grad[j * width..(j + 1) * width];
            let mut freq = PI;
            let mut acc = 0.0f64;
            for pair in gr.chunks_exact(2) {
                let (s, c) = (freq * p as f64).sin_cos();
                acc += freq * (pair[0] as f64 * c - pair[1] as f64 * s);
                freq *= 2.0;
            }
            *slot += acc as f32;
        }
    });
}

pub(crate) fn sample_backward(
    sink: &mut GradSink<'_>,
    levels: &[Var],
    coords: Var,
    lod: Option<Var>,
    grad: &[f32],
) {
    let channels = sink.value(levels[0]).shape()[2];
    let res: Vec<usize> = levels.iter().map(|&l| sink.value(l).shape()[0]).collect();
    let uv = sink.value(coords).data().to_vec();
    let lods = lod.map(|l| sink.value(l).data().to_vec());
    let q = uv.len() / 2;
    let want_coords = sink.wants(coords);
    let want_lod = lod.is_some_and(|l| sink.wants(l));

    let mut d_levels: Vec<Option<Vec<f32>>> = levels
        .iter()
        .map(|&l| sink.wants(l).then(|| vec![0.0; sink.value(l).numel()]))
        .collect();
    let mut d_uv = vec![0.0f32; if want_coords { 2 * q } else { 0 }];
    let mut d_lod = vec![0.0f32; if want_lod { q } else { 0 }];

    for i in 0..q {
        let blend = LevelBlend::new(lods.as_ref().map(|l| l[i]), levels.len());
        let g = &grad[i * channels..(i + 1) * channels];
        let mut level_dot = [0.0f32; 2];
        for (slot, (level, weight)) in [(blend.lo, 1.0 - blend.t), (blend.hi, blend.t)]
            .into_iter()
            .enumerate()
        {
            let b = Bilinear::at(uv[2 * i], uv[2 * i + 1], res[level]);
            let w = b.weights();
            let tex = sink.value(levels[level]).data();
            let texel = |k: usize| &tex[b.idx[k] * channels..(b.idx[k] + 1) * channels];
            if want_coords && weight != 0.0 {
                let r = res[level] as f32;
                let (mut dx, mut dy) = (0.0f32, 0.0f32);
                for c in 0..channels {
                    let (t00, t10, t01, t11) = (texel(0)[c], texel(1)[c], texel(2)[c], texel(3)[c]);
                    dx += g[c] * ((1.0 - b.fy) * (t10 - t00) + b.fy * (t11 - t01));
                    dy += g[c] * ((1.0 - b.fx) * (t01 - t00) + b.fx * (t11 - t10));
                }
                d_uv[2 * i] += weight * r * dx;
                d_uv[2 * i + 1] += weight * r * dy;
            }
            if want_lod && blend.active {
                for c in 0..channels {
                    let s: f32 = (0..4).map(|k| w[k] * texel(k)[c]).sum();
                    level_dot[slot] += g[c] * s;
                }
            }
            if weight != 0.0 {
                if let Some(dt) = d_levels[level].as_mut() {
                    for (k, wk) in w.iter().enumerate() {
                        let dst = &mut dt[b.idx[k] * channels..(b.idx[k] + 1) * channels];
                        for (d, gc) in dst.iter_mut().zip(g) {
                            *d += weight * wk * gc;
                        }
                    }
                }
            }
        }
        if want_lod && blend.active {
            d_lod[i] = level_dot[1] - level_dot[0];
        }
    }
    for (&l, d) in levels.iter().zip(d_levels) {
        if let Some(d) = d {
            sink.add(l, &d);
        }
    }
    if want_coords {
        sink.add(coords, &d_uv);
    }
    if let (Some(l), true) = (lod, want_lod) {
        sink.add(l, &d_lod);
    }
}
