//! Spatial operators over `[C, H, W]` or `[N, C, H, W]` images.

use super::linalg::{gemm_acc, Layout};
use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::{shape_err, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    /// Unfolds image `n` into a `[C·kh·kw, oh·ow]` patch matrix.
    fn im2col(&self, image: &[f32]) -> Vec<f32> {
        let (oh, ow) = (self.oh, self.ow);
        let mut col = vec![0.0; self.patch() * oh * ow];
        for c in 0..self.c_in {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * oh * ow..][..oh * ow];
                    for y in 0..oh {
                        let sy = (y + i) as isize - self.pad as isize;
                        if sy < 0 || sy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * self.w..][..self.w];
                        for x in 0..ow {
                            let sx = (x + j) as isize - self.pad as isize;
                            if sx >= 0 && sx < self.w as isize {
                                row[y * ow + x] = src[sx as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters patch gradients back.
    fn col2im_acc(&self, col: &[f32], image: &mut [f32]) {
        let (oh, ow) = (self.oh, self.ow);
        for c in 0..self.c_in {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * oh * ow..][..oh * ow];
                    for y in 0..oh {
                        let sy = (y + i) as isize - self.pad as isize;
                        if sy < 0 || sy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * self.w..][..self.w];
                        for x in 0..ow {
                            let sx = (x + j) as isize - self.pad as isize;
                            if sx >= 0 && sx < self.w as isize {
                                dst[sx as usize] += row[y * ow + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        )),
    }
}

fn conv_geom(input: &[usize], kernel: &[usize], pad: usize) -> Result<ConvGeom> {
    let (batch, c_in, h, w) = image_dims("conv2d", input)?;
    let &[c_out, kc, kh, kw] = kernel else {
        return Err(shape_err(
            "conv2d",
            format!("kernel must be [C_out,C_in,kh,kw], got {kernel:?}"),
        ));
    };
    if kc != c_in {
        return Err(shape_err(
            "conv2d",
            format!("kernel expects {kc} input channels, image has {c_in}"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::Invalid {
            op: "conv2d",
            detail: format!("kernel extents must be odd, got {kh}x{kw}"),
        });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(shape_err(
            "conv2d",
            format!(
                "{kh}x{kw} kernel larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ),
        ));
    }
    Ok(ConvGeom {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        pad,
        oh: h + 2 * pad - kh + 1,
        ow: w + 2 * pad - kw + 1,
    })
}

impl Tape {
    /// Zero-padded cross-correlation, optionally adding a per-output-channel
    /// bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let g = conv_geom(&in_shape, self.shape(kernel), padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.c_out] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} does not match {} output channels", self.shape(b), g.c_out),
                ));
            }
        }
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let plane_out = g.oh * g.ow;
        let mut out = vec![0.0; g.batch * g.c_out * plane_out];
        for n in 0..g.batch {
            let image = &x[n * g.c_in * g.h * g.w..][..g.c_in * g.h * g.w];
            let dst = &mut out[n * g.c_out * plane_out..][..g.c_out * plane_out];
            if g.is_pointwise() {
                gemm_acc(g.c_out, g.patch(), plane_out, k, Layout::Normal, image, Layout::Normal, dst);
            } else {
                let col = g.im2col(image);
                gemm_acc(g.c_out, g.patch(), plane_out, k, Layout::Normal, &col, Layout::Normal, dst);
            }
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (o, plane) in dst.chunks_exact_mut(plane_out).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
        let shape = if in_shape.len() == 3 {
            vec![g.c_out, g.oh, g.ow]
        } else {
            vec![g.batch, g.c_out, g.oh, g.ow]
        };
        self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
        )
    }

    /// Sliding-window maximum with stride 1 and same-size output. `window`
    /// must be odd; the border is padded by `(window - 1) / 2`.
    pub fn maxpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        if window % 2 == 0 {
            return Err(TensorError::Invalid {
                op: "maxpool2d",
                detail: format!("window must be odd, got {window}"),
            });
        }
        let shape = self.shape(input).to_vec();
        let (n, c, h, w) = image_dims("maxpool2d", &shape)?;
        if n * c * h * w == 0 {
            return Err(shape_err("maxpool2d", "empty input"));
        }
        let r = (window / 2) as isize;
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        let mut argmax = vec![0u32; x.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dy in -r..=r {
                        let sy = y + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in -r..=r {
                            let sx = xx + dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let idx = base + sy as usize * w + sx as usize;
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = base + y as usize * w + xx as usize;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        self.push(Tensor::new(shape, out)?, Op::MaxPool { input, argmax })
    }
}

pub(crate) fn conv2d_backward(
    sink: &mut GradSink<'_>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    padding: usize,
    out_shape: &[usize],
    grad: &[f32],
) {
    let g = conv_geom(sink.value(input).shape(), sink.value(kernel).shape(), padding)
        .expect("geometry validated in forward");
    debug_assert_eq!(grad.len(), out_shape.iter().product::<usize>());
    let plane_out = g.oh * g.ow;
    let x = sink.value(input).data().to_vec();
    let k = sink.value(kernel).data().to_vec();
    let want_input = sink.wants(input);
    let want_kernel = sink.wants(kernel);
    let mut d_input = if want_input { vec![0.0; x.len()] } else { Vec::new() };
    let mut d_kernel = if want_kernel { vec![0.0; k.len()] } else { Vec::new() };
    for n in 0..g.batch {
        let image = &x[n * g.c_in * g.h * g.w..][..g.c_in * g.h * g.w];
        let d_out = &grad[n * g.c_out * plane_out..][..g.c_out * plane_out];
        if g.is_pointwise() {
            if want_kernel {
                gemm_acc(g.c_out, plane_out, g.patch(), d_out, Layout::Normal, image, Layout::Transposed, &mut d_kernel);
            }
            if want_input {
                let dst = &mut d_input[n * g.c_in * g.h * g.w..][..g.c_in * g.h * g.w];
                gemm_acc(g.patch(), g.c_out, plane_out, &k, Layout::Transposed, d_out, Layout::Normal, dst);
            }
        } else {
            if want_kernel {
                let col = g.im2col(image);
                gemm_acc(g.c_out, plane_out, g.patch(), d_out, Layout::Normal, &col, Layout::Transposed, &mut d_kernel);
            }
            if want_input {
                let mut d_col = vec![0.0; g.patch() * plane_out];
                gemm_acc(g.patch(), g.c_out, plane_out, &k, Layout::Transposed, d_out, Layout::Normal, &mut d_col);
                let dst = &mut d_input[n * g.c_in * g.h * g.w..][..g.c_in * g.h * g.w];
                g.col2im_acc(&d_col, dst);
            }
        }
    }
    if want_input {
        sink.add(input, &d_input);
    }
    if want_kernel {
        sink.add(kernel, &d_kernel);
    }
    if let Some(b) = bias {
        sink.with(b, |gb| {
            for (o, slot) in gb.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for n in 0..g.batch {
                    let plane = &grad[(n * g.c_out + o) * plane_out..][..plane_out];
                    acc += plane.iter().map(|&v| v as f64).sum::<f64>();
                }
                *slot += acc as f32;
            }
        });
    }
}

pub(crate) fn maxpool_backward(sink: &mut GradSink<'_>, input: Var, argmax: &[u32], grad: &[f32]) {
    sink.with(input, |g| {
        for (o, &src) in argmax.iter().enumerate() {
            g[src as usize] += grad[o];
        }
    });
}
