//! Convolutional decoder built from Inception blocks.
//!
//! Queries are laid out as an image tile so the 3×3 and 5×5 paths see
//! spatial neighbours. A 1×1 entry convolution lifts the decoder input to
//! 256 channels, six blocks keep that width, and a 1×1 exit convolution
//! produces RGB.

use rand::Rng;

use super::layers::kaiming_uniform;
use crate::autodiff::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

pub const INCEPTION_WIDTH: usize = 256;
pub const INCEPTION_BLOCKS: usize = 6;
/// Output channels of the 1×1, 3×3, 5×5 and pool paths.
pub const BRANCH_WIDTHS: [usize; 4] = [64, 128, 32, 32];
/// 1×1 reductions in front of the 3×3 and 5×5 paths.
pub const REDUCE_WIDTHS: [usize; 2] = [96, 16];

const EXIT_GAIN: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    kernel: usize,
}

impl Conv {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        gain: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = store.insert(
            format!("{name}.weight"),
            kaiming_uniform([c_out, c_in, kernel, kernel], fan_in, gain, rng),
        );
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros([c_out]));
        Self { weight, bias, kernel }
    }

    fn apply(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            params[self.weight.index()],
            Some(params[self.bias.index()]),
            self.kernel / 2,
        )
    }

    fn apply_relu(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let y = self.apply(tape, params, x)?;
        tape.relu(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    one: Conv,
    three_reduce: Conv,
    three: Conv,
    five_reduce: Conv,
    five: Conv,
    pool_proj: Conv,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, rng: &mut impl Rng) -> Self {
        let c = INCEPTION_WIDTH;
        let [w1, w3, w5, wp] = BRANCH_WIDTHS;
        let [r3, r5] = REDUCE_WIDTHS;
        Self {
            one: Conv::new(store, &format!("{name}.path1"), c, w1, 1, 1.0, rng),
            three_reduce: Conv::new(store, &format!("{name}.path2.reduce"), c, r3, 1, 1.0, rng),
            three: Conv::new(store, &format!("{name}.path2.conv"), r3, w3, 3, 1.0, rng),
            five_reduce: Conv::new(store, &format!("{name}.path3.reduce"), c, r5, 1, 1.0, rng),
            five: Conv::new(store, &format!("{name}.path3.conv"), r5, w5, 5, 1.0, rng),
            pool_proj: Conv::new(store, &format!("{name}.path4.proj"), c, wp, 1, 1.0, rng),
        }
    }

    /// Returns the four path outputs and their concatenation.
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<([Var; 4], Var)> {
        let p1 = self.one.apply_relu(tape, params, x)?;
        let r3 = self.three_reduce.apply_relu(tape, params, x)?;
        let p2 = self.three.apply_relu(tape, params, r3)?;
        let r5 = self.five_reduce.apply_relu(tape, params, x)?;
        let p3 = self.five.apply_relu(tape, params, r5)?;
        let pooled = tape.maxpool2d(x, 3)?;
        let p4 = self.pool_proj.apply_relu(tape, params, pooled)?;
        let out = tape.concat(&[p1, p2, p3, p4], 0)?;
        Ok(([p1, p2, p3, p4], out))
    }
}

/// Per-block shapes recorded by [`InceptionDecoder::trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub input: Vec<usize>,
    pub paths: [Vec<usize>; 4],
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionDecoder {
    entry: Conv,
    blocks: Vec<Block>,
    exit: Conv,
}

impl InceptionDecoder {
    pub(crate) fn new(store: &mut ParamStore, input_width: usize, rng: &mut impl Rng) -> Self {
        let entry = Conv::new(store, "inception.entry", input_width, INCEPTION_WIDTH, 1, 1.0, rng);
        let blocks = (0..INCEPTION_BLOCKS)
            .map(|i| Block::new(store, &format!("inception.block{i}"), rng))
            .collect();
        let exit = Conv::new(store, "inception.exit", INCEPTION_WIDTH, 3, 1, EXIT_GAIN, rng);
        Self { entry, blocks, exit }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Decodes `features[Q, F]` laid out as an `h × w` tile (row-major) into
    /// `[Q, 3]` radiance.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        tile: (usize, usize),
    ) -> Result<Var> {
        self.run(tape, params, features, tile, None)
    }

    /// Runs the decoder and records every block's input, path and output
    /// shapes.
    pub fn trace(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        tile: (usize, usize),
    ) -> Result<(Var, Vec<BlockTrace>)> {
        let mut traces = Vec::new();
        let out = self.run(tape, params, features, tile, Some(&mut traces))?;
        Ok((out, traces))
    }

    fn run(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        (h, w): (usize, usize),
        mut traces: Option<&mut Vec<BlockTrace>>,
    ) -> Result<Var> {
        let &[q, f] = tape.shape(features) else {
            return Err(TensorError::Shape {
                op: "inception",
                detail: format!("features must be [Q,F], got {:?}", tape.shape(features)),
            });
        };
        if q != h * w {
            return Err(TensorError::Shape {
                op: "inception",
                detail: format!("{q} queries cannot form a {h}x{w} tile"),
            });
        }
        let channels_first = tape.transpose(features)?;
        let image = tape.reshape(channels_first, &[f, h, w])?;
        let mut x = self.entry.apply_relu(tape, params, image)?;
        for block in &self.blocks {
            let input = tape.shape(x).to_vec();
            let (paths, out) = block.forward(tape, params, x)?;
            if let Some(t) = traces.as_deref_mut() {
                t.push(BlockTrace {
                    input,
                    paths: paths.map(|p| tape.shape(p).to_vec()),
                    output: tape.shape(out).to_vec(),
                });
            }
            x = out;
        }
        let rgb = self.exit.apply(tape, params, x)?;
        let flat = tape.reshape(rgb, &[3, q])?;
        tape.transpose(flat)
    }
}
