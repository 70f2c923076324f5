use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::{shape_err, Result, Tensor, TensorError};

impl Tape {
    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                op.name(),
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sin(x), f32::sin)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Cos(x), f32::cos)
    }

    /// `x^p`. Fractional exponents require every element to be non-negative.
    pub fn pow(&mut self, x: Var, p: f32) -> Result<Var> {
        if p.fract() != 0.0 {
            if let Some(i) = self.value(x).data().iter().position(|&v| v < 0.0) {
                return Err(TensorError::Invalid {
                    op: "pow",
                    detail: format!(
                        "fractional power {p} of negative value {} at index {i}",
                        self.value(x).data()[i]
                    ),
                });
            }
        }
        self.unary(x, Op::Pow(x, p), move |v| v.powf(p))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), f32::abs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), move |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f32) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), move |v| v + s)
    }

    /// Fractional part, `x - floor(x)`; the derivative is taken as 1.
    pub fn wrap(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Wrap(x), |v| {
            let f = v - v.floor();
            // v slightly below an integer can round up to exactly 1.0
            if f >= 1.0 {
                0.0
            } else {
                f
            }
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let m = s / t.numel() as f64;
        self.push(Tensor::scalar(m as f32), Op::Mean(x))
    }
}

pub(crate) fn mul_backward(sink: &mut GradSink<'_>, a: Var, b: Var, grad: &[f32]) {
    if sink.wants(a) {
        let bv = sink.value(b).data().to_vec();
        sink.with(a, |g| {
            for ((g, gr), y) in g.iter_mut().zip(grad).zip(&bv) {
                *g += gr * y;
            }
        });
    }
    if sink.wants(b) {
        let av = sink.value(a).data().to_vec();
        sink.with(b, |g| {
            for ((g, gr), x) in g.iter_mut().zip(grad).zip(&av) {
                *g += gr * x;
            }
        });
    }
}

pub(crate) fn unary_backward(sink: &mut GradSink<'_>, op: &Op, x: Var, grad: &[f32]) {
    let input = sink.value(x).data().to_vec();
    let deriv: Box<dyn Fn(f32) -> f32> = match *op {
        // kink convention: derivative at 0 is 0
        Op::Relu(_) => Box::new(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        Op::Sin(_) => Box::new(f32::cos),
        Op::Cos(_) => Box::new(|v| -v.sin()),
        Op::Pow(_, p) => Box::new(move |v| {
            if v == 0.0 && p < 1.0 {
                0.0
            } else {
                p * v.powf(p - 1.0)
            }
        }),
        Op::Abs(_) => Box::new(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Square(_) => Box::new(|v| 2.0 * v),
        Op::Wrap(_) => Box::new(|_| 1.0),
        _ => unreachable!("not a unary op: {}", op.name()),
    };
    sink.with(x, |g| {
        for ((g, gr), v) in g.iter_mut().zip(grad).zip(&input) {
            *g += gr * deriv(*v);
        }
    });
}
