//! Training objective: L1 on radiance plus a Sobel gradient term on
//! fourth-root remapped images.
//!
//! Images are `[N, 3, h, w]` tensors (a batch of RGB tiles). Every reduction
//! is a mean over all elements.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Result, Tape, Tensor, TensorError, Var};

/// Horizontal Sobel kernel.
pub const SOBEL_X: [[f32; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
/// Vertical Sobel kernel.
pub const SOBEL_Y: [[f32; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Exponent of the output remapping.
pub const REMAP_EXPONENT: f32 = 0.25;

fn sobel_kernel() -> Tensor {
    let data = SOBEL_X.iter().chain(&SOBEL_Y).flatten().copied().collect();
    Tensor::new([2, 1, 3, 3], data).expect("static shape")
}

fn batch_dims(tape: &Tape, image: Var) -> Result<(usize, usize, usize, usize)> {
    match *tape.shape(image) {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(TensorError::Shape {
            op: "sobel",
            detail: format!("expected [N,C,h,w], got {s:?}"),
        }),
    }
}

/// Per-channel Sobel responses: returns `[N·C, 2, h, w]` with `Gx` in slot 0
/// and `Gy` in slot 1, zero-padded so the spatial size is unchanged.
pub fn sobel(tape: &mut Tape, image: Var) -> Result<Var> {
    let (n, c, h, w) = batch_dims(tape, image)?;
    if h < 3 || w < 3 {
        return Err(TensorError::Shape {
            op: "sobel",
            detail: format!("tile {h}x{w} is smaller than the 3x3 kernel"),
        });
    }
    let planes = tape.reshape(image, &[n * c, 1, h, w])?;
    let kernel = tape.constant(sobel_kernel());
    tape.conv2d(planes, kernel, None, 1)
}

/// Mean over texels and channels of `(Ĝx − Gx)² + (Ĝy − Gy)²`.
pub fn gradient_loss(tape: &mut Tape, pred: Var, reference: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(reference) {
        return Err(TensorError::Shape {
            op: "gradient_loss",
            detail: format!("{:?} vs {:?}", tape.shape(pred), tape.shape(reference)),
        });
    }
    let texels = tape.value(pred).numel() as f32;
    let gp = sobel(tape, pred)?;
    let gr = sobel(tape, reference)?;
    let diff = tape.sub(gr, gp)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / texels)
}

/// `clamp(x, 0, ∞)^(1/4)`, with a zero subgradient at 0.
pub fn remap(tape: &mut Tape, image: Var) -> Result<Var> {
    let clamped = tape.relu(image)?;
    tape.pow(clamped, REMAP_EXPONENT)
}

/// Plain-value remap for reference images.
pub fn remap_value(x: f32) -> f32 {
    x.max(0.0).powf(REMAP_EXPONENT)
}

/// Number of negative entries `remap` would clamp.
pub fn count_negative(t: &Tensor) -> usize {
    t.data().iter().filter(|&&v| v < 0.0).count()
}

/// Mean absolute error.
pub fn l1(tape: &mut Tape, pred: Var, reference: Var) -> Result<Var> {
    let d = tape.sub(pred, reference)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gradient_loss: bool,
    pub remap: bool,
    /// Scale on the gradient term; 1 is the unweighted sum.
    pub gradient_weight: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gradient_loss: true,
            remap: true,
            gradient_weight: 1.0,
        }
    }
}

/// Recorded loss and its parts.
#[derive(Debug, Clone, Copy)]
pub struct CombinedLoss {
    pub total: Var,
    pub l1: Var,
    /// Unweighted gradient term, when enabled.
    pub gradient: Option<Var>,
    /// Negative predictions clamped by the remap.
    pub clamped: usize,
}

/// Plain values of a [`CombinedLoss`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f32,
    pub l1: f32,
    pub gradient: f32,
}

impl CombinedLoss {
    pub fn terms(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            total: tape.value(self.total).item(),
            l1: tape.value(self.l1).item(),
            gradient: self.gradient.map_or(0.0, |g| tape.value(g).item()),
        }
    }
}

/// `L1(pred, ref) + w · L_G(remap(pred), remap(ref))`, with the gradient
/// term and the remap individually switchable.
pub fn combined_loss(
    tape: &mut Tape,
    pred: Var,
    reference: &Tensor,
    config: &LossConfig,
) -> Result<CombinedLoss> {
    if tape.shape(pred) != reference.shape() {
        return Err(TensorError::Shape {
            op: "combined_loss",
            detail: format!("{:?} vs {:?}", tape.shape(pred), reference.shape()),
        });
    }
    let ref_var = tape.constant(reference.clone());
    let l1_term = l1(tape, pred, ref_var)?;
    if !config.gradient_loss {
        return Ok(CombinedLoss {
            total: l1_term,
            l1: l1_term,
            gradient: None,
            clamped: 0,
        });
    }
    let (p, r, clamped) = if config.remap {
        let clamped = count_negative(tape.value(pred));
        let remapped_ref = Tensor::new(
            reference.shape().to_vec(),
            reference.data().iter().map(|&v| remap_value(v)).collect(),
        )?;
        let r = tape.constant(remapped_ref);
        (remap(tape, pred)?, r, clamped)
    } else {
        (pred, ref_var, 0)
    };
    let g = gradient_loss(tape, p, r)?;
    let weighted = tape.scale(g, config.gradient_weight)?;
    let total = tape.add(l1_term, weighted)?;
    Ok(CombinedLoss {
        total,
        l1: l1_term,
        gradient: Some(g),
        clamped,
    })
}
