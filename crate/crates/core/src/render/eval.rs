use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::image::{heat_color, montage};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossConfig, LossTerms};
use crate::model::{NeuralMaterial, Query7D, QUERY_WIDTH};
use crate::synth::Dataset;
use crate::train::{check_compatible, cut_tile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub level: usize,
    pub samples: usize,
    pub mse: f64,
    /// `mse · 10³`, the scale error tables are usually quoted in.
    pub mse_x1e3: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub queries: usize,
    pub seconds: f64,
    pub queries_per_second: f64,
    pub threads: usize,
}

/// Errors of a model against a dataset, per level and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: usize,
    /// Sample-weighted mean of the per-level MSEs.
    pub mse: f64,
    pub mse_x1e3: f64,
    pub levels: Vec<LevelError>,
    /// Mean training objective over the evaluated patches.
    pub loss: Option<LossTerms>,
    pub runtime: RuntimeStats,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-level MSEs, finest first.
    pub fn level_mse(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mse).collect()
    }
}

fn patch_queries(ds: &Dataset, level: usize, patch: usize) -> (Vec<Query7D>, Vec<f32>) {
    let p = ds.patch();
    let tile = cut_tile(ds, level, patch, 0, 0, p, p);
    let queries = tile.queries.chunks_exact(QUERY_WIDTH).map(Query7D::from_slice).collect();
    (queries, tile.reference)
}

/// Scores `predict` on the listed patches of each level (`patches[l]`).
/// `predict` receives one whole patch as a `P × P` image of queries.
/// Levels with no listed patch report zero samples and MSE 0.
pub fn evaluate_fn<F>(ds: &Dataset, patches: &[Vec<usize>], loss: Option<&LossConfig>, mut predict: F) -> Result<ErrorReport>
where
    F: FnMut(&[Query7D], usize, usize) -> Result<Vec<[f32; 3]>>,
{
    if patches.len() != ds.num_levels() {
        return Err(Error::Mismatch(format!(
            "patch lists for {} levels but the dataset has {}",
            patches.len(),
            ds.num_levels()
        )));
    }
    let p = ds.patch();
    let start = Instant::now();
    let mut levels = Vec::with_capacity(ds.num_levels());
    let (mut loss_sum, mut loss_count) = ([0.0f64; 3], 0usize);
    for (level, list) in patches.iter().enumerate() {
        let (mut sq, mut abs, mut samples) = (0.0f64, 0.0f64, 0usize);
        for &patch in list {
            let (queries, reference) = patch_queries(ds, level, patch);
            let pred = predict(&queries, p, p)?;
            if pred.len() != queries.len() {
                return Err(Error::Mismatch(format!(
                    "predictor returned {} values for {} queries",
                    pred.len(),
                    queries.len()
                )));
            }
            for (rgb, r) in pred.iter().zip(reference.chunks_exact(3)) {
                for k in 0..3 {
                    let d = (rgb[k] - r[k]) as f64;
                    sq += d * d;
                    abs += d.abs();
                }
            }
            samples += queries.len();
            if let Some(cfg) = loss.filter(|c| !c.gradient_loss || p >= 3) {
                let terms = patch_loss(&pred, &reference, p, cfg)?;
                loss_sum[0] += terms.total as f64;
                loss_sum[1] += terms.l1 as f64;
                loss_sum[2] += terms.gradient as f64;
                loss_count += 1;
            }
        }
        let denom = (samples * 3).max(1) as f64;
        let mse = sq / denom;
        levels.push(LevelError {
            level,
            samples,
            mse,
            mse_x1e3: mse * 1e3,
            mean_abs: abs / denom,
        });
    }
    let samples: usize = levels.iter().map(|l| l.samples).sum();
    let mse = levels.iter().map(|l| l.mse * l.samples as f64).sum::<f64>() / samples.max(1) as f64;
    let seconds = start.elapsed().as_secs_f64();
    let n = loss_count.max(1) as f64;
    Ok(ErrorReport {
        samples,
        mse,
        mse_x1e3: mse * 1e3,
        levels,
        loss: (loss_count > 0).then(|| LossTerms {
            total: (loss_sum[0] / n) as f32,
            l1: (loss_sum[1] / n) as f32,
            gradient: (loss_sum[2] / n) as f32,
        }),
        runtime: RuntimeStats {
            queries: samples,
            seconds,
            queries_per_second: samples as f64 / seconds.max(1e-9),
            threads: rayon::current_num_threads(),
        },
    })
}

/// Whether each value is at most `(1 + slack)` times its predecessor.
pub fn non_increasing_with_slack(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

fn patch_loss(pred: &[[f32; 3]], reference: &[f32], p: usize, cfg: &LossConfig) -> Result<LossTerms> {
    // [P*P, 3] rows to a [1, 3, P, P] image
    let planar = |get: &dyn Fn(usize, usize) -> f32| -> Vec<f32> {
        (0..3).flat_map(|k| (0..p * p).map(move |i| (k, i))).map(|(k, i)| get(i, k)).collect()
    };
    let pred = Tensor::new([1, 3, p, p], planar(&|i, k| pred[i][k]))?;
    let reference = Tensor::new([1, 3, p, p], planar(&|i, k| reference[3 * i + k]))?;
    let mut tape = Tape::new();
    let v = tape.constant(pred);
    let loss = combined_loss(&mut tape, v, &reference, cfg)?;
    Ok(loss.terms(&tape))
}

fn all_patches(ds: &Dataset) -> Vec<Vec<usize>> {
    (0..ds.num_levels()).map(|l| (0..ds.patches(l)).collect()).collect()
}

/// Scores the model on every patch of `ds`.
pub fn evaluate(model: &NeuralMaterial, ds: &Dataset, loss: Option<&LossConfig>) -> Result<ErrorReport> {
    evaluate_patches(model, ds, &all_patches(ds), loss)
}

/// Scores the model on the listed patches of each level.
pub fn evaluate_patches(
    model: &NeuralMaterial,
    ds: &Dataset,
    patches: &[Vec<usize>],
    loss: Option<&LossConfig>,
) -> Result<ErrorReport> {
    check_compatible(model, ds)?;
    evaluate_fn(ds, patches, loss, |q, h, w| model.evaluate_image(q, h, w))
}

/// One image per level: the first `per_level` patches side by side, each
/// texel coloured by its channel-mean absolute error. All images share the
/// colour scale, so levels can be compared.
pub fn heatmaps(model: &NeuralMaterial, ds: &Dataset, per_level: usize) -> Result<Vec<RgbImage>> {
    check_compatible(model, ds)?;
    let p = ds.patch();
    let mut errors: Vec<Vec<Vec<f32>>> = Vec::new();
    for level in 0..ds.num_levels() {
        let mut level_errors = Vec::new();
        for patch in 0..ds.patches(level).min(per_level) {
            let (queries, reference) = patch_queries(ds, level, patch);
            let pred = model.evaluate_image(&queries, p, p)?;
            level_errors.push(
                pred.iter()
                    .zip(reference.chunks_exact(3))
                    .map(|(a, r)| (0..3).map(|k| (a[k] - r[k]).abs()).sum::<f32>() / 3.0)
                    .collect(),
            );
        }
        errors.push(level_errors);
    }
    let max = errors.iter().flatten().flatten().cloned().fold(0.0f32, f32::max);
    Ok(errors
        .iter()
        .map(|level| {
            let panels: Vec<RgbImage> = level
                .iter()
                .map(|e| {
                    // dataset rows run along +v; flip so +v is up
                    RgbImage::from_fn(p as u32, p as u32, |x, y| heat_color(e[(p - 1 - y as usize) * p + x as usize], max))
                })
                .collect();
            montage(&panels, 1)
        })
        .collect())
}
