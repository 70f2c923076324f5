use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::inception::InceptionDecoder;
use super::layers::{Mlp, OutputInit};
use super::pyramid::{NeuralTexturePyramid, OffsetTexture};
use super::{queries_to_rows, DecoderKind, MaterialConfig, Query7D, QUERY_WIDTH};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Queries evaluated per tape in batched evaluation.
pub const EVAL_CHUNK: usize = 4096;

const DECODER_OUTPUT_GAIN: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
enum Decoder {
    Mlp(Mlp),
    Inception(InceptionDecoder),
}

/// Tape handles produced by [`NeuralMaterial::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[Q, 3]` radiance.
    pub rgb: Var,
    /// `[Q, 2]` uv after the offset warp.
    pub warped_uv: Var,
    /// `[Q, 2]` raw offset prediction.
    pub displacement: Var,
    /// Number of queries whose lod had to be clamped into the pyramid.
    pub clamped_lod: usize,
}

/// Learnable material: offset texture and network, latent pyramid, decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMaterial {
    config: MaterialConfig,
    params: ParamStore,
    pyramid: NeuralTexturePyramid,
    offset_texture: OffsetTexture,
    offset: Mlp,
    decoder: Decoder,
}

impl NeuralMaterial {
    /// Freshly initialized material. Initialization is a pure function of
    /// `config` and `seed`.
    pub fn new(config: MaterialConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let pyramid =
            NeuralTexturePyramid::new(&mut params, config.base_resolution, config.channels, &mut rng);
        let offset_texture = OffsetTexture::new(
            &mut params,
            config.base_resolution,
            config.offset_channels,
            &mut rng,
        );
        let offset = Mlp::new(
            &mut params,
            "offset",
            &[config.offset_input_width(), config.offset_hidden, config.offset_hidden, 2],
            OutputInit::Zero,
            &mut rng,
        );
        let decoder = match config.decoder {
            DecoderKind::Mlp => {
                let h = config.hidden;
                Decoder::Mlp(Mlp::new(
                    &mut params,
                    "decoder",
                    &[config.decoder_input_width(), h, h, h, 3],
                    OutputInit::Scaled(DECODER_OUTPUT_GAIN),
                    &mut rng,
                ))
            }
            DecoderKind::Inception => Decoder::Inception(InceptionDecoder::new(
                &mut params,
                config.decoder_input_width(),
                &mut rng,
            )),
        };
        Ok(Self {
            config,
            params,
            pyramid,
            offset_texture,
            offset,
            decoder,
        })
    }

    pub fn config(&self) -> &MaterialConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn pyramid(&self) -> &NeuralTexturePyramid {
        &self.pyramid
    }

    pub fn offset_network(&self) -> &Mlp {
        &self.offset
    }

    pub fn mlp_decoder(&self) -> Option<&Mlp> {
        match &self.decoder {
            Decoder::Mlp(m) => Some(m),
            Decoder::Inception(_) => None,
        }
    }

    pub fn inception_decoder(&self) -> Option<&InceptionDecoder> {
        match &self.decoder {
            Decoder::Inception(d) => Some(d),
            Decoder::Mlp(_) => None,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.pyramid.num_levels()
    }

    /// Places every parameter on `tape`, as gradient leaves when
    /// `trainable`, else as constants. The result is indexed by
    /// [`ParamId::index`](crate::autodiff::ParamId::index).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(id, p)| {
                if trainable {
                    tape.param(&self.params, id)
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn encode(&self, tape: &mut Tape, x: Var, frequencies: usize) -> Result<Var> {
        if self.config.encoding {
            tape.fourier(x, frequencies).map_err(Error::stage("encoding"))
        } else {
            Ok(x)
        }
    }

    /// Records the full pipeline for `queries[Q, 7]`. `tile` gives the image
    /// layout required by the Inception decoder; the MLP ignores it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        queries: Var,
        tile: Option<(usize, usize)>,
    ) -> Result<Forward> {
        let q = match *tape.shape(queries) {
            [q, QUERY_WIDTH] => q,
            ref s => {
                return Err(Error::Mismatch(format!("queries must be [Q,7], got {s:?}")));
            }
        };
        let max_lod = (self.num_levels() - 1) as f32;
        let clamped_lod = tape
            .value(queries)
            .data()
            .chunks_exact(QUERY_WIDTH)
            .filter(|r| !(0.0..=max_lod).contains(&r[6]))
            .count();

        let split = |tape: &mut Tape, a, b| tape.columns(queries, a, b).map_err(Error::stage("input"));
        let uv = split(tape, 0, 2)?;
        let wi = split(tape, 2, 4)?;
        let wo = split(tape, 4, 6)?;
        let lod = split(tape, 6, 7)?;

        let wo_enc = self.encode(tape, wo, self.config.direction_frequencies)?;
        let displacement = {
            let stage = Error::stage;
            let tex = self.offset_texture.sample_on(tape, params, uv).map_err(stage("offset"))?;
            let input = tape.concat(&[tex, wo_enc], 1).map_err(stage("offset"))?;
            self.offset.forward(tape, params, input).map_err(stage("offset"))?
        };
        let warped_uv = {
            let moved = tape.add(uv, displacement).map_err(Error::stage("offset"))?;
            tape.wrap(moved).map_err(Error::stage("offset"))?
        };

        let latent = self
            .pyramid
            .sample_on(tape, params, warped_uv, lod)
            .map_err(Error::stage("pyramid"))?;
        let u_enc = self.encode(tape, warped_uv, self.config.position_frequencies)?;
        let wi_enc = self.encode(tape, wi, self.config.direction_frequencies)?;
        let features = tape
            .concat(&[latent, u_enc, wi_enc, wo_enc], 1)
            .map_err(Error::stage("encoding"))?;

        let rgb = match &self.decoder {
            Decoder::Mlp(mlp) => mlp.forward(tape, params, features),
            Decoder::Inception(inc) => {
                let tile = tile.unwrap_or((1, q));
                inc.forward(tape, params, features, tile)
            }
        }
        .map_err(Error::stage("decoder"))?;
        Ok(Forward {
            rgb,
            warped_uv,
            displacement,
            clamped_lod,
        })
    }

    fn run_tile(&self, rows: &[f32], tile: Option<(usize, usize)>) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let q = rows.len() / QUERY_WIDTH;
        let queries = tape.constant(Tensor::new([q, QUERY_WIDTH], rows.to_vec())?);
        let fwd = self.forward(&mut tape, &params, queries, tile)?;
        Ok((
            tape.value(fwd.rgb).data().to_vec(),
            tape.value(fwd.warped_uv).data().to_vec(),
        ))
    }

    /// Radiance for each query. Queries are processed in independent chunks
    /// (in parallel); with the Inception decoder each chunk is treated as a
    /// one-row tile.
    pub fn evaluate(&self, queries: &[Query7D]) -> Result<Vec<[f32; 3]>> {
        let rows = queries_to_rows(queries);
        let chunks: Vec<Vec<f32>> = rows
            .par_chunks(EVAL_CHUNK * QUERY_WIDTH)
            .map(|c| self.run_tile(c, None).map(|(rgb, _)| rgb))
            .collect::<Result<_>>()?;
        Ok(to_rgb(chunks.concat()))
    }

    /// Radiance for an `h × w` image of queries (row-major). The Inception
    /// decoder sees whole row bands so its convolutions span real
    /// neighbours.
    pub fn evaluate_image(&self, queries: &[Query7D], h: usize, w: usize) -> Result<Vec<[f32; 3]>> {
        if queries.len() != h * w {
            return Err(Error::Mismatch(format!(
                "{} queries cannot form a {h}x{w} image",
                queries.len()
            )));
        }
        if self.config.decoder == DecoderKind::Mlp {
            return self.evaluate(queries);
        }
        let band = (EVAL_CHUNK / w.max(1)).max(1);
        let rows = queries_to_rows(queries);
        let chunks: Vec<Vec<f32>> = rows
            .par_chunks(band * w * QUERY_WIDTH)
            .map(|c| {
                let bh = c.len() / (w * QUERY_WIDTH);
                self.run_tile(c, Some((bh, w))).map(|(rgb, _)| rgb)
            })
            .collect::<Result<_>>()?;
        Ok(to_rgb(chunks.concat()))
    }

    /// uv after the neural offset warp.
    pub fn warp(&self, queries: &[Query7D]) -> Result<Vec<[f32; 2]>> {
        let rows = queries_to_rows(queries);
        let mut out = Vec::with_capacity(queries.len());
        for c in rows.chunks(EVAL_CHUNK * QUERY_WIDTH) {
            let (_, uv) = self.run_tile(c, Some((1, c.len() / QUERY_WIDTH)))?;
            out.extend(uv.chunks_exact(2).map(|p| [p[0], p[1]]));
        }
        Ok(out)
    }
}

fn to_rgb(flat: Vec<f32>) -> Vec<[f32; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}
