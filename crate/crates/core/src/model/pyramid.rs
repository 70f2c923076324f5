use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Result, Tape, Tensor, Var};

const LATENT_INIT: f32 = 0.1;

fn latent_level(res: usize, channels: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn([res, res, channels], |_| rng.random_range(-LATENT_INIT..=LATENT_INIT))
}

/// Learnable latent textures, level `l` being `(R / 2^l)²` texels of `C`
/// channels, down to a single texel.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralTexturePyramid {
    levels: Vec<ParamId>,
    base_resolution: usize,
    channels: usize,
}

impl NeuralTexturePyramid {
    pub(crate) fn new(
        store: &mut ParamStore,
        base_resolution: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let count = base_resolution.trailing_zeros() as usize + 1;
        let levels = (0..count)
            .map(|l| {
                let res = base_resolution >> l;
                store.insert(format!("pyramid.level{l}"), latent_level(res, channels, rng))
            })
            .collect();
        Self {
            levels,
            base_resolution,
            channels,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_extent(&self, level: usize) -> usize {
        self.base_resolution >> level
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn level_ids(&self) -> &[ParamId] {
        &self.levels
    }

    pub(crate) fn sample_on(&self, tape: &mut Tape, params: &[Var], uv: Var, lod: Var) -> Result<Var> {
        let levels: Vec<Var> = self.levels.iter().map(|id| params[id.index()]).collect();
        tape.sample(&levels, uv, Some(lod))
    }

    /// Latent vector at `u` and fractional level `lod`, bilinear within a
    /// level and linear across the two bracketing levels.
    pub fn sample(&self, store: &ParamStore, u: [f32; 2], lod: f32) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let levels: Vec<Var> = self
            .levels
            .iter()
            .map(|&id| tape.constant(store.value(id).clone()))
            .collect();
        let uv = tape.constant(Tensor::new([1, 2], u.to_vec())?);
        let l = tape.constant(Tensor::new([1, 1], vec![lod])?);
        let out = tape.sample(&levels, uv, Some(l))?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Single-level latent texture read by the offset network.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTexture {
    id: ParamId,
}

impl OffsetTexture {
    pub(crate) fn new(store: &mut ParamStore, res: usize, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            id: store.insert("offset.texture", latent_level(res, channels, rng)),
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub(crate) fn sample_on(&self, tape: &mut Tape, params: &[Var], uv: Var) -> Result<Var> {
        tape.sample(&[params[self.id.index()]], uv, None)
    }
}
