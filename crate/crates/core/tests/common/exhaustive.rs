//! Image operators against the nested-loop oracles on every spatial shape
//! up to 16×16. Each check returns its worst deviation.

use super::{to_f64, uniform};
use nmat_core::loss::sobel;
use nmat_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXACT: f64 = 1e-6;
pub const MAX_SIDE: usize = 16;

/// Worst result of a sweep and what produced it.
#[derive(Debug, Default, Clone)]
pub struct Sweep {
    pub cases: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Sweep {
    fn record(&mut self, d: f64, at: impl FnOnce() -> String) {
        self.cases += 1;
        if d > self.worst || self.cases == 1 {
            self.worst = d;
            self.worst_at = at();
        }
    }

    pub fn ok(&self) -> bool {
        self.cases > 0 && self.worst <= EXACT
    }
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((*x as f64 - y).abs()))
}

pub fn conv2d() -> Sweep {
    let mut g = ChaCha8Rng::seed_from_u64(1);
    let mut s = Sweep::default();
    for h in 1..=MAX_SIDE {
        for w in 1..=MAX_SIDE {
            for (k, pad) in [(1, 0), (3, 0), (3, 1), (5, 1), (5, 2)] {
                if h + 2 * pad < k || w + 2 * pad < k {
                    continue;
                }
                let (n, ci, co) = (1 + (h + w) % 2, 1 + h % 3, 1 + w % 3);
                let x = uniform(&mut g, n * ci * h * w, -1.0, 1.0);
                let kern = uniform(&mut g, co * ci * k * k, -1.0, 1.0);
                let bias = uniform(&mut g, co, -1.0, 1.0);
                let mut tape = Tape::new();
                let xv = tape.constant(Tensor::new([n, ci, h, w], x.clone()).unwrap());
                let kv = tape.constant(Tensor::new([co, ci, k, k], kern.clone()).unwrap());
                let bv = tape.constant(Tensor::new([co], bias.clone()).unwrap());
                let out = tape.conv2d(xv, kv, Some(bv), pad).unwrap();
                let want = super::conv2d(&to_f64(&x), &to_f64(&kern), Some(&to_f64(&bias)), (n, ci, h, w), (co, k, k), pad);
                let d = if tape.shape(out) == [n, co, h + 2 * pad - k + 1, w + 2 * pad - k + 1] {
                    max_abs_diff(tape.value(out).data(), &want)
                } else {
                    f64::INFINITY
                };
                s.record(d, || format!("{h}x{w} k{k} pad{pad}"));
            }
        }
    }
    s
}

/// Values and the tie-break of the gradient route. Inputs are quantized so
/// ties are common.
pub fn maxpool() -> Sweep {
    let mut g = ChaCha8Rng::seed_from_u64(2);
    let mut s = Sweep::default();
    for h in 1..=MAX_SIDE {
        for w in 1..=MAX_SIDE {
            for window in [1, 3, 5] {
                let planes = 2;
                let x: Vec<f32> = uniform(&mut g, planes * h * w, -1.0, 1.0)
                    .into_iter()
                    .map(|v| (v * 4.0).round() / 4.0)
                    .collect();
                let mut tape = Tape::new();
                let xv = tape.variable(Tensor::new([1, planes, h, w], x.clone()).unwrap());
                let out = tape.maxpool2d(xv, window).unwrap();
                let (want, arg) = super::maxpool(&to_f64(&x), planes, h, w, window);
                let mut d = max_abs_diff(tape.value(out).data(), &want);
                // the gradient of Σ out lands on the oracle's argmax counts
                let l = tape.sum(out).unwrap();
                let grads = tape.backward(l).unwrap();
                let mut counts = vec![0.0f64; x.len()];
                arg.iter().for_each(|&i| counts[i] += 1.0);
                d = d.max(max_abs_diff(grads.get(xv).unwrap(), &counts));
                s.record(d, || format!("{h}x{w} window {window}"));
            }
        }
    }
    s
}

pub fn sobel_filter() -> Sweep {
    let mut g = ChaCha8Rng::seed_from_u64(3);
    let mut s = Sweep::default();
    for h in 3..=MAX_SIDE {
        for w in 3..=MAX_SIDE {
            let x = uniform(&mut g, 3 * h * w, 0.0, 2.0);
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::new([1, 3, h, w], x.clone()).unwrap());
            let sv = sobel(&mut tape, xv).unwrap();
            let out = tape.value(sv).data();
            let (gx, gy) = super::sobel(&to_f64(&x), 3, h, w);
            let n = h * w;
            let mut d = 0.0f64;
            for p in 0..3 {
                d = d.max(max_abs_diff(&out[(2 * p) * n..(2 * p + 1) * n], &gx[p * n..(p + 1) * n]));
                d = d.max(max_abs_diff(&out[(2 * p + 1) * n..(2 * p + 2) * n], &gy[p * n..(p + 1) * n]));
            }
            s.record(d, || format!("{h}x{w}"));
        }
    }
    s
}

/// `|sin² + cos² − 1|` over a dense grid of inputs and twelve frequencies.
pub fn fourier_norm() -> Sweep {
    let frequencies = 12;
    let xs: Vec<f32> = (0..=2000).map(|i| i as f32 / 1000.0 - 1.0).collect();
    let n = xs.len();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([n, 1], xs.clone()).unwrap());
    let enc = tape.fourier(x, frequencies).unwrap();
    let mut s = Sweep::default();
    for (row, &p) in tape.value(enc).data().chunks_exact(2 * frequencies).zip(&xs) {
        for (k, pair) in row.chunks_exact(2).enumerate() {
            let norm = (pair[0] as f64).powi(2) + (pair[1] as f64).powi(2);
            s.record((norm - 1.0).abs(), || format!("p={p} k={k}"));
        }
    }
    s
}
