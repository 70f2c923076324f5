use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{cut_tile, make_batch, Split, Tile};
use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use crate::autodiff::{Adam, ParamGrads, Tape, Tensor, TensorError};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossTerms};
use crate::model::{NeuralMaterial, Query7D, QUERY_WIDTH};
use crate::synth::Dataset;

/// RNG stream for batch sampling; model initialization uses the default.
const BATCH_STREAM: u64 = 1;

/// File name of the rolling checkpoint inside the output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.nmat";

/// Loss of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub loss: LossTerms,
    /// Negative predictions clamped by the remap this step.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: u64,
    pub mse: f64,
    pub samples: usize,
}

/// Gradients and loss for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub grads: ParamGrads,
    pub loss: LossTerms,
    pub clamped: usize,
}

fn is_non_finite(e: &Error) -> bool {
    matches!(
        e,
        Error::Tensor(TensorError::NonFinite { .. }) | Error::Stage { source: TensorError::NonFinite { .. }, .. }
    )
}

/// Stateful optimizer loop over one dataset.
pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a Dataset,
    split: Split,
    model: NeuralMaterial,
    adam: Adam,
    rng: ChaCha8Rng,
    iteration: u64,
    hash: u64,
    losses: Vec<StepRecord>,
    validations: Vec<ValidationRecord>,
    touched: Vec<bool>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let model = NeuralMaterial::new(config.material(dataset.base_resolution()), config.seed)?;
        let adam = Adam::new(config.adam, model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BATCH_STREAM);
        Self::assemble(config, dataset, model, adam, rng, 0)
    }

    /// Continues from `checkpoint`; `config` must describe the same run.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let hash = config.hash(dataset.base_resolution());
        if hash != checkpoint.config_hash {
            return Err(Error::Mismatch(format!(
                "checkpoint was written by a different run (config hash {:016x}, expected {hash:016x}); seed, architecture, optimizer, tile shape and loss switches must match",
                checkpoint.config_hash
            )));
        }
        let Checkpoint {
            iteration,
            rng,
            model,
            adam,
            ..
        } = checkpoint;
        Self::assemble(config, dataset, model, adam, rng.restore(), iteration)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &'a Dataset,
        model: NeuralMaterial,
        adam: Adam,
        rng: ChaCha8Rng,
        iteration: u64,
    ) -> Result<Self> {
        check_compatible(&model, dataset)?;
        if config.tile_height > dataset.patch() || config.tile_width > dataset.patch() {
            return Err(Error::Mismatch(format!(
                "tile {}x{} is larger than the dataset patches ({}x{})",
                config.tile_height,
                config.tile_width,
                dataset.patch(),
                dataset.patch()
            )));
        }
        let hash = config.hash(dataset.base_resolution());
        let touched = vec![false; model.params().len()];
        Ok(Self {
            split: Split::new(dataset),
            config,
            dataset,
            model,
            adam,
            rng,
            iteration,
            hash,
            losses: Vec::new(),
            validations: Vec::new(),
            touched,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &NeuralMaterial {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Per-iteration losses recorded by this trainer.
    pub fn losses(&self) -> &[StepRecord] {
        &self.losses
    }

    pub fn validations(&self) -> &[ValidationRecord] {
        &self.validations
    }

    /// Parameters that have not yet received a nonzero gradient.
    pub fn untouched_parameters(&self) -> Vec<String> {
        self.model
            .params()
            .iter()
            .filter(|(id, _)| !self.touched[id.index()])
            .map(|(_, p)| p.name.clone())
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.hash,
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            config: self.config.clone(),
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    fn tile_step(&self, tile: &Tile) -> Result<(ParamGrads, LossTerms, usize)> {
        let (h, w) = (tile.height, tile.width);
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape, true);
        let queries = tape.constant(Tensor::new([h * w, QUERY_WIDTH], tile.queries.clone())?);
        let fwd = self.model.forward(&mut tape, &params, queries, Some((h, w)))?;
        let channels_first = tape.transpose(fwd.rgb)?;
        let image = tape.reshape(channels_first, &[1, 3, h, w])?;
        let reference = Tensor::from_fn([1, 3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            tile.reference[p * 3 + c]
        });
        let loss = combined_loss(&mut tape, image, &reference, &self.config.loss())?;
        let grads = tape.backward(loss.total)?;
        Ok((grads.param_grads(&tape, self.model.params()), loss.terms(&tape), loss.clamped))
    }

    /// Mean gradient and loss over `tiles`, reduced in tile order.
    pub fn batch_gradients(&self, tiles: &[Tile]) -> Result<BatchGradients> {
        let parts: Vec<_> = if self.config.parallel {
            tiles.par_iter().map(|t| self.tile_step(t)).collect::<Result<_>>()?
        } else {
            tiles.iter().map(|t| self.tile_step(t)).collect::<Result<_>>()?
        };
        let scale = 1.0 / tiles.len() as f32;
        let mut grads = ParamGrads::zeros_like(self.model.params());
        let (mut total, mut l1, mut gradient) = (0.0f64, 0.0f64, 0.0f64);
        let mut clamped = 0;
        for (g, terms, c) in &parts {
            grads.add_scaled(g, scale);
            total += terms.total as f64;
            l1 += terms.l1 as f64;
            gradient += terms.gradient as f64;
            clamped += c;
        }
        let n = tiles.len() as f64;
        Ok(BatchGradients {
            grads,
            loss: LossTerms {
                total: (total / n) as f32,
                l1: (l1 / n) as f32,
                gradient: (gradient / n) as f32,
            },
            clamped,
        })
    }

    fn diverged(&mut self, rng_before: RngState, reason: String) -> Error {
        self.rng = rng_before.restore();
        Error::Diverged {
            iteration: self.iteration + 1,
            reason,
            last_good: Box::new(self.checkpoint()),
        }
    }

    /// One optimizer iteration. On a non-finite loss or gradient the model
    /// is left untouched and the error carries the last good checkpoint.
    pub fn step(&mut self) -> Result<StepRecord> {
        let rng_before = RngState::capture(&self.rng);
        let c = &self.config;
        let tiles = make_batch(self.dataset, &self.split, &mut self.rng, c.tiles, c.tile_height, c.tile_width)?;
        let mut batch = match self.batch_gradients(&tiles) {
            Ok(b) => b,
            Err(e) if is_non_finite(&e) => return Err(self.diverged(rng_before, e.to_string())),
            Err(e) => return Err(e),
        };
        if !batch.loss.total.is_finite() {
            let reason = format!("loss is {}", batch.loss.total);
            return Err(self.diverged(rng_before, reason));
        }
        for (id, g) in batch.grads.iter() {
            if !self.touched[id.index()] && g.iter().any(|&x| x != 0.0) {
                self.touched[id.index()] = true;
            }
        }
        self.adam.step(self.model.params_mut(), &mut batch.grads);
        self.iteration += 1;
        let record = StepRecord {
            iteration: self.iteration,
            loss: batch.loss,
            clamped: batch.clamped,
        };
        self.losses.push(record);
        Ok(record)
    }

    /// MSE over (up to `validation_patches`) held-out patches, or `None`
    /// when the split has none.
    pub fn validate(&self) -> Result<Option<ValidationRecord>> {
        let picks = self.split.validation_sample(self.config.validation_patches);
        if picks.is_empty() {
            return Ok(None);
        }
        let p = self.dataset.patch();
        let mut sum = 0.0f64;
        let mut samples = 0;
        for (level, patch) in picks {
            let tile = cut_tile(self.dataset, level, patch, 0, 0, p, p);
            let queries: Vec<Query7D> = tile.queries.chunks_exact(QUERY_WIDTH).map(Query7D::from_slice).collect();
            let pred = self.model.evaluate_image(&queries, p, p)?;
            for (rgb, r) in pred.iter().zip(tile.reference.chunks_exact(3)) {
                for k in 0..3 {
                    sum += ((rgb[k] - r[k]) as f64).powi(2);
                }
            }
            samples += queries.len();
        }
        Ok(Some(ValidationRecord {
            iteration: self.iteration,
            mse: sum / (samples * 3) as f64,
            samples,
        }))
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.config.output.as_ref().map(|d| d.join(CHECKPOINT_FILE))
    }

    /// Trains until `iteration == target`, validating, logging and writing
    /// the rolling checkpoint every period and at the end.
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        if self.iteration == 0 {
            log::info!(
                "batch of {} tiles of {}x{}, {} held-out patches (tile shape and hold-out are local defaults)",
                self.config.tiles,
                self.config.tile_height,
                self.config.tile_width,
                self.split.validation.iter().map(Vec::len).sum::<usize>()
            );
        }
        while self.iteration < target {
            let record = self.step()?;
            if record.iteration % self.config.checkpoint_period == 0 || record.iteration == target {
                let val = self.validate()?;
                if let Some(v) = val {
                    self.validations.push(v);
                }
                log::info!(
                    "iter {} loss {:.6} l1 {:.6} gradient {:.6} clamped {} validation mse {}",
                    record.iteration,
                    record.loss.total,
                    record.loss.l1,
                    record.loss.gradient,
                    record.clamped,
                    val.map_or("n/a".to_string(), |v| format!("{:.6e}", v.mse))
                );
                if let Some(path) = self.checkpoint_path() {
                    self.checkpoint().save(path)?;
                }
            }
        }
        Ok(())
    }

    /// Trains for the configured number of iterations.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.iterations)
    }
}

/// Rejects a model whose pyramid cannot serve the dataset's levels.
pub fn check_compatible(model: &NeuralMaterial, dataset: &Dataset) -> Result<()> {
    let c = model.config();
    if c.base_resolution != dataset.base_resolution() || dataset.num_levels() > model.num_levels() {
        return Err(Error::Mismatch(format!(
            "model pyramid is {r}x{r} with {} levels but dataset is {d}x{d} with {} levels",
            model.num_levels(),
            dataset.num_levels(),
            r = c.base_resolution,
            d = dataset.base_resolution()
        )));
    }
    Ok(())
}

/// Trains a fresh model and returns the final checkpoint.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config, dataset)?;
    trainer.run()?;
    Ok(trainer.checkpoint())
}

/// Continues a run up to `config.iterations` total iterations.
pub fn resume(checkpoint: Checkpoint, config: TrainConfig, dataset: &Dataset) -> Result<Checkpoint> {
    let mut trainer = Trainer::resume(checkpoint, config, dataset)?;
    trainer.run()?;
    Ok(trainer.checkpoint())
}
