use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Result, Tape, Tensor, Var};

/// Uniform fan-in initialization, `U(-b, b)` with `b = gain · sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    gain: f32,
    rng: &mut impl Rng,
) -> Tensor {
    let bound = gain * (6.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Stack of affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
}

/// Initial scale applied to an MLP's output layer.
#[derive(Debug, Clone, Copy)]
pub(crate) enum OutputInit {
    Scaled(f32),
    Zero,
}

impl Mlp {
    /// Registers weights `{prefix}.layer{i}.weight` (`[in, out]`) and
    /// `{prefix}.layer{i}.bias`.
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        output: OutputInit,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let weight = match (i == last, output) {
                    (true, OutputInit::Zero) => Tensor::zeros([fan_in, fan_out]),
                    (true, OutputInit::Scaled(g)) => kaiming_uniform([fan_in, fan_out], fan_in, g, rng),
                    _ => kaiming_uniform([fan_in, fan_out], fan_in, 1.0, rng),
                };
                let w = store.insert(format!("{prefix}.layer{i}.weight"), weight);
                let b = store.insert(format!("{prefix}.layer{i}.bias"), Tensor::zeros([fan_out]));
                (w, b)
            })
            .collect();
        Self {
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `params` maps parameter indices to their leaves on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, params[w.index()], params[b.index()])?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
