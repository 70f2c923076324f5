//! Gradient checks shared by the gradient tests and the acceptance run.

use super::*;
use nmat_core::loss::{combined_loss, gradient_loss, remap, sobel, LossConfig};
use nmat_core::{MaterialConfig, NeuralMaterial, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named results of a batch of gradient checks.
#[derive(Debug, Default)]
pub struct Checks(pub Vec<(String, GradReport)>);

impl Checks {
    pub fn push(&mut self, name: impl Into<String>, report: GradReport) {
        self.0.push((name.into(), report));
    }

    pub fn checked(&self) -> usize {
        self.0.iter().map(|(_, r)| r.checked).sum()
    }

    pub fn failures(&self) -> Vec<String> {
        self.0
            .iter()
            .filter(|(_, r)| !r.ok())
            .map(|(n, r)| format!("{n}: {:.3e} at {}", r.worst, r.worst_at))
            .collect()
    }

    pub fn assert_all(&self) {
        let f = self.failures();
        assert!(f.is_empty(), "{}", f.join("\n"));
    }
}

/// Every differentiable tape operation, each against its f64 oracle.
pub fn all_ops(c: &mut Checks) {
    unary_ops(c);
    binary_and_reduction_ops(c);
    linear_ops(c);
    shape_ops(c);
    conv_and_pool_ops(c);
    encoding_and_sampling_ops(c);
    loss_terms(c);
}

/// Model + loss for both encodings and every loss configuration. Returns
/// how many entries were skipped as kinks.
pub fn pipeline(c: &mut Checks) -> usize {
    let configs = [
        LossConfig { gradient_loss: false, remap: false, gradient_weight: 1.0 },
        LossConfig { gradient_loss: true, remap: false, gradient_weight: 1.0 },
        LossConfig::default(),
    ];
    let mut kinks = 0;
    for encoding in [false, true] {
        for cfg in configs {
            let (r, k) = pipeline_check(encoding, cfg, 11);
            kinks += k;
            c.push(format!("pipeline encoding={encoding} gradient={} remap={}", cfg.gradient_loss, cfg.remap), r);
        }
    }
    kinks
}

/// Step for the whole-model check. The shadow runs in f64, so roundoff at
/// this step is far below the tolerance.
pub const PIPELINE_STEP: f64 = 1e-4;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;
type Oracle = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

/// Checks `d/dx Σ op(x)·R` for every input entry, with fixed random `R`.
pub fn check_op(name: &str, inputs: &[(Vec<usize>, Vec<f32>)], build: &Build, oracle: &Oracle) -> GradReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| tape.variable(Tensor::new(s.clone(), d.clone()).unwrap()))
        .collect();
    let out = build(&mut tape, &vars);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out_shape = tape.shape(out).to_vec();
    let weights = uniform(&mut rng, tape.value(out).numel(), -1.0, 1.0);
    let r = tape.constant(Tensor::new(out_shape, weights.clone()).unwrap());
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let grads = tape.backward(loss).unwrap();

    let xs: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| to_f64(d)).collect();
    let w64 = to_f64(&weights);
    let mut report = GradReport::default();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("input gradient").to_vec();
        let f = |x: &[f64]| {
            let mut args = xs.clone();
            args[k] = x.to_vec();
            oracle(&args).iter().zip(&w64).map(|(a, b)| a * b).sum()
        };
        check_all(&format!("{name}.input{k}"), &analytic, &xs[k], f, &mut report);
    }
    assert!(report.checked > 0);
    report
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(2024)
}

fn pointwise(c: &mut Checks, name: &str, x: Vec<f32>, build: fn(&mut Tape, Var) -> Var, f: fn(f64) -> f64) {
    let n = x.len();
    let r = check_op(
        name,
        &[(vec![n], x)],
        &move |t, v| build(t, v[0]),
        &move |a| a[0].iter().map(|&v| f(v)).collect(),
    );
    c.push(name, r);
}

pub fn unary_ops(c: &mut Checks) {
    let mut g = rng();
    pointwise(c, "relu", away_from_zero(&mut g, 64, 0.05), |t, x| t.relu(x).unwrap(), |v| v.max(0.0));
    pointwise(c, "sin", uniform(&mut g, 64, -4.0, 4.0), |t, x| t.sin(x).unwrap(), f64::sin);
    pointwise(c, "cos", uniform(&mut g, 64, -4.0, 4.0), |t, x| t.cos(x).unwrap(), f64::cos);
    pointwise(c, "pow", uniform(&mut g, 64, 0.1, 2.0), |t, x| t.pow(x, 0.25).unwrap(), |v| v.powf(0.25));
    pointwise(c, "pow2", uniform(&mut g, 64, -2.0, 2.0), |t, x| t.pow(x, 3.0).unwrap(), |v| v.powi(3));
    pointwise(c, "abs", away_from_zero(&mut g, 64, 0.05), |t, x| t.abs(x).unwrap(), f64::abs);
    pointwise(c, "square", uniform(&mut g, 64, -2.0, 2.0), |t, x| t.square(x).unwrap(), |v| v * v);
    pointwise(c, "scale", uniform(&mut g, 64, -2.0, 2.0), |t, x| t.scale(x, -1.7).unwrap(), |v| -1.7 * v);
    pointwise(c, "add_scalar", uniform(&mut g, 64, -2.0, 2.0), |t, x| t.add_scalar(x, 0.3).unwrap(), |v| v + 0.3);
    // keep clear of the integer seams
    let wraps: Vec<f32> = (0..64).map(|i| (i as f32 - 32.0) * 0.1 + 0.05).collect();
    pointwise(c, "wrap", wraps, |t, x| t.wrap(x).unwrap(), |v| v.rem_euclid(1.0));
}

pub fn binary_and_reduction_ops(c: &mut Checks) {
    let mut g = rng();
    let a = uniform(&mut g, 24, -1.0, 1.0);
    let b = uniform(&mut g, 24, -1.0, 1.0);
    let ins = [(vec![4, 6], a.clone()), (vec![4, 6], b.clone())];
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let r = check_op(
            name,
            &ins,
            &move |t, v| match op {
                0 => t.add(v[0], v[1]).unwrap(),
                1 => t.sub(v[0], v[1]).unwrap(),
                _ => t.mul(v[0], v[1]).unwrap(),
            },
            &move |x| {
                x[0].iter()
                    .zip(&x[1])
                    .map(|(p, q)| match op {
                        0 => p + q,
                        1 => p - q,
                        _ => p * q,
                    })
                    .collect()
            },
        );
        c.push(name, r);
    }
    let r = check_op("sum", &ins[..1], &|t, v| t.sum(v[0]).unwrap(), &|x| vec![x[0].iter().sum()]);
    c.push("sum", r);
    let r = check_op("mean", &ins[..1], &|t, v| t.mean(v[0]).unwrap(), &|x| {
        vec![x[0].iter().sum::<f64>() / 24.0]
    });
    c.push("mean", r);
}

pub fn linear_ops(c: &mut Checks) {
    let mut g = rng();
    let (m, k, n) = (5, 7, 3);
    let a = uniform(&mut g, m * k, -1.0, 1.0);
    let w = uniform(&mut g, k * n, -1.0, 1.0);
    let b = uniform(&mut g, n, -1.0, 1.0);
    let r = check_op(
        "matmul",
        &[(vec![m, k], a.clone()), (vec![k, n], w.clone())],
        &|t, v| t.matmul(v[0], v[1]).unwrap(),
        &move |x| matmul(&x[0], &x[1], m, k, n),
    );
    c.push("matmul", r);
    let add_bias = move |y: Vec<f64>, b: &[f64]| -> Vec<f64> { y.iter().enumerate().map(|(i, v)| v + b[i % n]).collect() };
    let r = check_op(
        "add_bias",
        &[(vec![m, n], uniform(&mut g, m * n, -1.0, 1.0)), (vec![n], b.clone())],
        &|t, v| t.add_bias(v[0], v[1]).unwrap(),
        &move |x| add_bias(x[0].clone(), &x[1]),
    );
    c.push("add_bias", r);
    let r = check_op(
        "affine",
        &[(vec![m, k], a), (vec![k, n], w), (vec![n], b)],
        &|t, v| t.affine(v[0], v[1], v[2]).unwrap(),
        &move |x| add_bias(matmul(&x[0], &x[1], m, k, n), &x[2]),
    );
    c.push("affine", r);
}

pub fn shape_ops(c: &mut Checks) {
    let mut g = rng();
    let a = uniform(&mut g, 12, -1.0, 1.0);
    let b = uniform(&mut g, 8, -1.0, 1.0);
    let r = check_op("reshape", &[(vec![3, 4], a.clone())], &|t, v| t.reshape(v[0], &[2, 6]).unwrap(), &|x| x[0].clone());
    c.push("reshape", r);
    let r = check_op("transpose", &[(vec![3, 4], a.clone())], &|t, v| t.transpose(v[0]).unwrap(), &|x| {
        (0..12).map(|i| x[0][(i % 3) * 4 + i / 3]).collect()
    });
    c.push("transpose", r);
    let r = check_op(
        "concat",
        &[(vec![4, 3], a.clone()), (vec![4, 2], b)],
        &|t, v| t.concat(&[v[0], v[1]], 1).unwrap(),
        &|x| {
            (0..4)
                .flat_map(|row| x[0][row * 3..row * 3 + 3].iter().chain(&x[1][row * 2..row * 2 + 2]).copied().collect::<Vec<_>>())
                .collect()
        },
    );
    c.push("concat", r);
    let r = check_op("columns", &[(vec![3, 4], a)], &|t, v| t.columns(v[0], 1, 3).unwrap(), &|x| {
        (0..3).flat_map(|row| x[0][row * 4 + 1..row * 4 + 3].to_vec()).collect()
    });
    c.push("columns", r);
}

pub fn conv_and_pool_ops(c: &mut Checks) {
    let mut g = rng();
    let (n, ci, h, w, co) = (2, 3, 5, 6, 4);
    for (kh, pad) in [(3, 1), (1, 0), (5, 2), (3, 0)] {
        let input = uniform(&mut g, n * ci * h * w, -1.0, 1.0);
        let kernel = uniform(&mut g, co * ci * kh * kh, -1.0, 1.0);
        let bias = uniform(&mut g, co, -1.0, 1.0);
        let name = format!("conv2d k{kh} pad{pad}");
        let r = check_op(
            &name,
            &[(vec![n, ci, h, w], input), (vec![co, ci, kh, kh], kernel), (vec![co], bias)],
            &move |t, v| t.conv2d(v[0], v[1], Some(v[2]), pad).unwrap(),
            &move |x| conv2d(&x[0], &x[1], Some(&x[2]), (n, ci, h, w), (co, kh, kh), pad),
        );
        c.push(&name, r);
    }
    for window in [3, 5] {
        let x = distinct(&mut g, 2 * 3 * 5 * 6);
        let name = format!("maxpool{window}");
        let r = check_op(
            &name,
            &[(vec![2, 3, 5, 6], x)],
            &move |t, v| t.maxpool2d(v[0], window).unwrap(),
            &move |x| maxpool(&x[0], 6, 5, 6, window).0,
        );
        c.push(&name, r);
    }
}

pub fn encoding_and_sampling_ops(c: &mut Checks) {
    let mut g = rng();
    let x = uniform(&mut g, 10, -1.0, 1.0);
    let r = check_op("fourier", &[(vec![5, 2], x)], &|t, v| t.fourier(v[0], 4).unwrap(), &|x| fourier(&x[0], 4));
    c.push("fourier", r);

    // three levels of a wrapping 8×8 pyramid with 3 channels
    let ch = 3;
    let levels: Vec<Vec<f32>> = [8usize, 4, 2].iter().map(|&r| uniform(&mut g, r * r * ch, -1.0, 1.0)).collect();
    let q = 12;
    // coordinates away from texel-centre lines of every level; one outside [0,1)
    let mut coords = Vec::new();
    for i in 0..q {
        let jitter = |g: &mut ChaCha8Rng| g.random_range(0.1f32..0.4) / 8.0;
        coords.push((i % 8) as f32 / 8.0 + jitter(&mut g) + if i == 0 { 1.0 } else { 0.0 });
        coords.push(((i * 3) % 8) as f32 / 8.0 + jitter(&mut g) - if i == 1 { 1.0 } else { 0.0 });
    }
    let lods: Vec<f32> = (0..q).map(|i| (i % 2) as f32 + g.random_range(0.1f32..0.9)).collect();
    let mut inputs: Vec<(Vec<usize>, Vec<f32>)> =
        levels.iter().zip([8usize, 4, 2]).map(|(d, r)| (vec![r, r, ch], d.clone())).collect();
    inputs.push((vec![q, 2], coords));
    inputs.push((vec![q, 1], lods));
    let oracle = move |x: &[Vec<f64>]| -> Vec<f64> {
        let lv: Vec<&[f64]> = x[..3].iter().map(Vec::as_slice).collect();
        (0..q).flat_map(|i| pyramid(&lv, 8, ch, x[3][2 * i], x[3][2 * i + 1], x[4][i])).collect()
    };
    let r = check_op("sample", &inputs, &|t, v| t.sample(&v[..3], v[3], Some(v[4])).unwrap(), &oracle);
    c.push("sample", r);
    let r = check_op(
        "sample level0",
        &[inputs[0].clone(), inputs[3].clone()],
        &|t, v| t.sample(&v[..1], v[1], None).unwrap(),
        &move |x| (0..q).flat_map(|i| bilinear(&x[0], 8, ch, x[1][2 * i], x[1][2 * i + 1])).collect(),
    );
    c.push("sample level0", r);
}

pub fn loss_terms(c: &mut Checks) {
    let mut g = rng();
    let (h, w) = (5, 6);
    let n = 3 * h * w;
    let pred = uniform(&mut g, n, 0.1, 1.0);
    let reference = uniform(&mut g, n, 0.1, 1.0);
    let shape = vec![1, 3, h, w];
    let r = check_op("sobel", &[(shape.clone(), pred.clone())], &|t, v| sobel(t, v[0]).unwrap(), &move |x| {
        interleave_sobel(&x[0], 3, h, w)
    });
    c.push("sobel", r);
    let r = check_op(
        "gradient_loss",
        &[(shape.clone(), pred.clone()), (shape.clone(), reference.clone())],
        &|t, v| gradient_loss(t, v[0], v[1]).unwrap(),
        &move |x| vec![super::gradient_loss(&x[0], &x[1], 3, h, w)],
    );
    c.push("gradient_loss", r);
    let r = check_op("remap", &[(shape.clone(), pred.clone())], &|t, v| remap(t, v[0]).unwrap(), &|x| {
        x[0].iter().map(|&v| super::remap(v)).collect()
    });
    c.push("remap", r);

    let ref_tensor = Tensor::new(shape.clone(), reference.clone()).unwrap();
    let ref64 = to_f64(&reference);
    for (grad, rem) in [(false, false), (true, false), (true, true)] {
        let cfg = LossConfig { gradient_loss: grad, remap: rem, gradient_weight: 1.0 };
        let rt = ref_tensor.clone();
        let r64 = ref64.clone();
        let name = format!("combined_loss grad={grad} remap={rem}");
        let r = check_op(
            &name,
            &[(shape.clone(), pred.clone())],
            &move |t, v| combined_loss(t, v[0], &rt, &cfg).unwrap().total,
            &move |x| vec![combined_loss_oracle(&x[0], &r64, h, w, grad, rem)],
        );
        c.push(&name, r);
    }
}

pub fn combined_loss_oracle(p: &[f64], r: &[f64], h: usize, w: usize, grad: bool, rem: bool) -> f64 {
    super::combined_loss(p, r, h, w, grad, rem, 1.0)
}

/// `[planes, 2, h, w]` with `Gx` then `Gy` per plane.
pub fn interleave_sobel(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = super::sobel(x, planes, h, w);
    let n = h * w;
    (0..planes).flat_map(|p| gx[p * n..(p + 1) * n].iter().chain(&gy[p * n..(p + 1) * n]).copied().collect::<Vec<_>>()).collect()
}


pub fn pipeline_model(encoding: bool, seed: u64) -> NeuralMaterial {
    let config = MaterialConfig {
        base_resolution: 8,
        channels: 4,
        hidden: 8,
        encoding,
        position_frequencies: 3,
        direction_frequencies: 2,
        ..MaterialConfig::default()
    };
    let mut model = NeuralMaterial::new(config, seed).unwrap();
    let mut g = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = store.value_mut(id);
        // give the zero-initialized offset head a real displacement, and
        // push the output away from zero so the remap is smooth
        if name == "offset.layer2.weight" {
            t.data_mut().iter_mut().for_each(|v| *v = g.random_range(-0.05..0.05));
        } else if name == "decoder.layer3.bias" {
            t.data_mut().iter_mut().for_each(|v| *v = 0.6);
        }
    }
    model
}

pub fn random_queries(g: &mut ChaCha8Rng, n: usize, levels: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * 7);
    for _ in 0..n {
        out.push(g.random_range(0.0..1.0));
        out.push(g.random_range(0.0..1.0));
        for _ in 0..2 {
            let r = g.random_range(0.0f32..0.9).sqrt();
            let phi = g.random_range(0.0..std::f32::consts::TAU);
            out.push(r * phi.cos());
            out.push(r * phi.sin());
        }
        out.push(g.random_range(0.0..(levels - 1) as f32));
    }
    out
}

/// Full pipeline: model forward on an `h × w` tile followed by the combined
/// loss, differentiated with respect to parameters sampled across every
/// tensor.
pub fn pipeline_check(encoding: bool, cfg: LossConfig, seed: u64) -> (GradReport, usize) {
    let model = pipeline_model(encoding, seed);
    let shadow = ShadowModel::new(&model);
    let (h, w) = (4, 4);
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let queries = random_queries(&mut g, h * w, model.num_levels());
    let reference: Vec<f32> = uniform(&mut g, h * w * 3, 0.0, 1.5);

    // analytic, as in a training step
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let q = tape.constant(Tensor::new([h * w, 7], queries.clone()).unwrap());
    let fwd = model.forward(&mut tape, &params, q, Some((h, w))).unwrap();
    let t = tape.transpose(fwd.rgb).unwrap();
    let img = tape.reshape(t, &[1, 3, h, w]).unwrap();
    let ref_img: Vec<f32> = (0..3 * h * w).map(|i| reference[(i % (h * w)) * 3 + i / (h * w)]).collect();
    let loss = combined_loss(&mut tape, img, &Tensor::new([1, 3, h, w], ref_img).unwrap(), &cfg).unwrap();
    assert!(tape.value(fwd.rgb).data().iter().all(|&v| v > 0.05), "predictions must stay clear of the remap kink");
    let grads = tape.backward(loss.total).unwrap().param_grads(&tape, model.params());

    let q64 = to_f64(&queries);
    let r64 = to_f64(&reference);
    let value = |flat: &[f64]| shadow.tile_loss(flat, &q64, &r64, h, w, cfg.gradient_loss, cfg.remap);
    let forward_gap = (value(&shadow.flat) - tape.value(loss.total).item() as f64).abs();
    assert!(forward_gap < 1e-5, "shadow forward differs by {forward_gap}");

    // pick the largest-gradient entries of each tensor plus random ones
    let mut picks: Vec<(usize, f32, String)> = Vec::new();
    let mut gmax = 0.0f32;
    for (pi, (id, gslice)) in grads.iter().enumerate() {
        let name = model.params().name(id).to_string();
        gmax = gslice.iter().fold(gmax, |m, v| m.max(v.abs()));
        let mut order: Vec<usize> = (0..gslice.len()).collect();
        order.sort_by(|&a, &b| gslice[b].abs().total_cmp(&gslice[a].abs()));
        let mut chosen: Vec<usize> = order.iter().take(3).copied().collect();
        chosen.extend((0..2).map(|_| g.random_range(0..gslice.len())));
        for i in chosen {
            picks.push((shadow.offsets[pi] + i, gslice[i], format!("{name}[{i}]")));
        }
    }

    let mut report = GradReport::default();
    let mut kinks = 0;
    let mut f = |x: &[f64]| value(x);
    for (flat_i, analytic, label) in picks {
        // the offset head moves u' into encodings of frequency up to
        // 2^(L-1)π, where the O(h²) term at h = 1e-3 is about 1%
        let n1 = central_diff(&mut f, &shadow.flat, flat_i, PIPELINE_STEP);
        let n2 = central_diff(&mut f, &shadow.flat, flat_i, PIPELINE_STEP / 2.0);
        let floor = 1e-3 * gmax as f64;
        if (n1 - n2).abs() > 1e-3 * n1.abs().max(n2.abs()).max(floor) {
            // a relu or texel seam lies within the step
            kinks += 1;
            continue;
        }
        let err = rel_err(analytic as f64, n1, floor);
        report.record(err, || format!("{label}: analytic {analytic} numeric {n1}"));
    }
    (report, kinks)
}
