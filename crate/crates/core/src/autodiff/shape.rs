use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::{shape_err, Result, Tensor};

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(value, Op::Reshape(x))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[r, c] = t.shape() else {
            return Err(shape_err(
                "transpose",
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        };
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new([c, r], out)?, Op::Transpose(x))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(shape_err("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Columns `start..end` of a matrix.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let &[r, c] = t.shape() else {
            return Err(shape_err(
                "columns",
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        };
        if start >= end || end > c {
            return Err(shape_err(
                "columns",
                format!("range {start}..{end} invalid for {c} columns"),
            ));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in t.data().chunks_exact(c) {
            out.extend_from_slice(&row[start..end]);
        }
        self.push(Tensor::new([r, w], out)?, Op::Columns { input: x, start })
    }
}

pub(crate) fn transpose_backward(sink: &mut GradSink<'_>, x: Var, grad: &[f32]) {
    let (r, c) = (sink.value(x).shape()[0], sink.value(x).shape()[1]);
    sink.with(x, |g| {
        for i in 0..r {
            for j in 0..c {
                g[i * c + j] += grad[j * r + i];
            }
        }
    });
}

pub(crate) fn concat_backward(sink: &mut GradSink<'_>, inputs: &[Var], axis: usize, grad: &[f32]) {
    let base = sink.value(inputs[0]).shape().to_vec();
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = inputs.iter().map(|&v| sink.value(v).shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut offset = 0;
    for (&v, &ext) in inputs.iter().zip(&extents) {
        let chunk = ext * inner;
        sink.with(v, |g| {
            for o in 0..outer {
                let src = &grad[o * total * inner + offset * inner..][..chunk];
                for (a, b) in g[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                    *a += *b;
                }
            }
        });
        offset += ext;
    }
}

pub(crate) fn columns_backward(
    sink: &mut GradSink<'_>,
    x: Var,
    start: usize,
    width: usize,
    grad: &[f32],
) {
    let c = sink.value(x).shape()[1];
    sink.with(x, |g| {
        for (row, src) in g.chunks_exact_mut(c).zip(grad.chunks_exact(width)) {
            for (a, b) in row[start..start + width].iter_mut().zip(src) {
                *a += *b;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_last_axis_interleaves_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new([2, 1], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new([2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn concat_gradient_splits_back() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::zeros([2, 1, 2]));
        let b = tape.variable(Tensor::zeros([2, 3, 2]));
        let c = tape.concat(&[a, b], 1).unwrap();
        let w = tape.constant(Tensor::from_fn([2, 4, 2], |i| i as f32));
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[0.0, 1.0, 8.0, 9.0]);
        assert_eq!(grads.get(b).unwrap()[..2], [2.0, 3.0]);
        assert_eq!(grads.get(b).unwrap()[6..8], [10.0, 11.0]);
    }

    #[test]
    fn concat_rejects_mismatched_extents() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 1]));
        let b = tape.constant(Tensor::zeros([3, 1]));
        assert!(tape.concat(&[a, b], 1).is_err());
        assert!(tape.concat(&[a, b], 0).is_ok());
    }

    #[test]
    fn transpose_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_fn([2, 3], |i| i as f32));
        let t = tape.transpose(a).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let tt = tape.transpose(t).unwrap();
        assert_eq!(tape.value(tt), tape.value(a));
    }

    #[test]
    fn columns_slice() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_fn([2, 4], |i| i as f32));
        let c = tape.columns(a, 1, 3).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 6.0]);
        assert!(tape.columns(a, 3, 5).is_err());
    }
}
