use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::{shape_err, Result, Tensor};

/// Operand layout for [`gemm_acc`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// Row-major as stored.
    Normal,
    /// Row-major storage of the transpose.
    Transposed,
}

/// `out += op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// Products are accumulated in `f64`; only the final sum is rounded back.
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_layout: Layout,
    b: &[f32],
    b_layout: Layout,
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let a64: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let mut c64 = vec![0.0f64; m * n];
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are asserted at the top.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a64.as_ptr(),
            rsa,
            csa,
            b64.as_ptr(),
            rsb,
            csb,
            0.0,
            c64.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for (o, c) in out.iter_mut().zip(&c64) {
        *o = (*o as f64 + c) as f32;
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(op, format!("expected a matrix, got {:?}", t.shape()))),
    }
}

impl Tape {
    /// Matrix product of `a[m×k]` and `b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("[{m}x{k}] · [{k2}x{n}]: inner extents {k} and {k2} differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::Normal,
            self.value(b).data(),
            Layout::Normal,
            &mut out,
        );
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b))
    }

    /// Adds `bias[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = matrix_dims("add_bias", self.value(x))?;
        if self.shape(bias) != [n] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} does not match {n} columns", self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += *bv;
            }
        }
        self.push(Tensor::new([m, n], out)?, Op::AddBias(x, bias))
    }

    /// `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }
}

pub(crate) fn matmul_backward(sink: &mut GradSink<'_>, a: Var, b: Var, grad: &[f32]) {
    let (m, k) = (sink.value(a).shape()[0], sink.value(a).shape()[1]);
    let n = sink.value(b).shape()[1];
    if sink.wants(a) {
        // dA = dC · Bᵀ
        let bv = sink.value(b).data().to_vec();
        sink.with(a, |ga| {
            gemm_acc(m, n, k, grad, Layout::Normal, &bv, Layout::Transposed, ga)
        });
    }
    if sink.wants(b) {
        // dB = Aᵀ · dC
        let av = sink.value(a).data().to_vec();
        sink.with(b, |gb| {
            gemm_acc(k, m, n, &av, Layout::Transposed, grad, Layout::Normal, gb)
        });
    }
}

pub(crate) fn add_bias_backward(sink: &mut GradSink<'_>, x: Var, bias: Var, grad: &[f32]) {
    sink.add(x, grad);
    let n = sink.value(bias).numel();
    sink.with(bias, |gb| {
        let mut acc = vec![0.0f64; n];
        for row in grad.chunks_exact(n) {
            for (a, g) in acc.iter_mut().zip(row) {
                *a += *g as f64;
            }
        }
        for (g, a) in gb.iter_mut().zip(acc) {
            *g += a as f32;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 2], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_product() {
        let mut tape = Tape::new();
        let i = tape.constant(t([2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t([2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(t([1, 2], &[1.0, 2.0]));
        let b = tape.constant(t([2, 1], &[3.0, 4.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).shape(), &[1, 1]);
        assert_eq!(tape.value(p).data(), &[11.0]);
    }

    #[test]
    fn inner_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2x3] · [2x3]"), "{err}");
    }

    #[test]
    fn transposed_layouts() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        gemm_acc(2, 2, 2, &a, Layout::Transposed, &b, Layout::Normal, &mut out);
        // aᵀ b = [[1,3],[2,4]]·b
        assert_eq!(out, [26.0, 30.0, 38.0, 44.0]);
        let mut out = [0.0; 4];
        gemm_acc(2, 2, 2, &a, Layout::Normal, &b, Layout::Transposed, &mut out);
        assert_eq!(out, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn bias_gradient_sums_rows() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros([3, 2]));
        let b = tape.variable(t([1, 2], &[0.0, 0.0]).reshaped([2]).unwrap());
        let y = tape.add_bias(x, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[3.0, 3.0]);
    }
}
