use std::path::PathBuf;

use image::RgbImage;
use log::{info, warn};
use serde::Serialize;

use super::eval::{evaluate, non_increasing_with_slack};
use super::image::{montage, save_png, write_text};
use super::scene::SceneConfig;
use super::{render, render_reference};
use crate::error::{Error, Result};
use crate::synth::{Dataset, HeightfieldMaterial};
use crate::train::{TrainConfig, Trainer};

/// Cumulative columns: name and (encoding, gradient loss, remap).
pub const ABLATION_STEPS: [(&str, [bool; 3]); 4] = [
    ("baseline", [false, false, false]),
    ("+encoding", [true, false, false]),
    ("+gradient loss", [true, true, false]),
    ("+remapping", [true, true, true]),
];

/// Allowed relative regression between neighbouring columns.
pub const ABLATION_SLACK: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Shared settings; the switches are overridden per column.
    pub base: TrainConfig,
    pub probe: SceneConfig,
    /// Sub-sample cap for the reference panel.
    pub max_subsample_side: usize,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationColumn {
    pub name: String,
    pub config_hash: u64,
    /// `"ok"`, or why training stopped early.
    pub status: String,
    pub iterations: u64,
    pub mse: Option<f64>,
    pub mse_x1e3: Option<f64>,
    pub level_mse: Vec<f64>,
    /// Probe render against the reference render.
    pub probe_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub columns: Vec<AblationColumn>,
    /// Column MSEs weakly decrease left to right within the slack.
    pub monotone: bool,
    pub slack: f64,
    /// Some column did not finish.
    pub partial: bool,
    pub panels: usize,
    #[serde(skip)]
    pub strip: RgbImage,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Training config of one column.
pub fn column_config(base: &TrainConfig, switches: [bool; 3]) -> TrainConfig {
    TrainConfig {
        encoding: switches[0],
        gradient_loss: switches[1],
        remap: switches[2],
        output: None,
        ..base.clone()
    }
}

/// Trains the four cumulative configurations with a shared seed, scores
/// each on `test`, renders the probe view, and assembles a strip of the
/// four renders plus the reference.
pub fn ablation_suite(
    material: &HeightfieldMaterial,
    train: &Dataset,
    test: &Dataset,
    config: &AblationConfig,
) -> Result<AblationReport> {
    if material.resolution() != train.base_resolution() {
        return Err(Error::Mismatch(format!(
            "material is {0}x{0} but the dataset is {1}x{1}",
            material.resolution(),
            train.base_resolution()
        )));
    }
    let reference = render_reference(
        &config.probe,
        material,
        train.num_levels(),
        config.max_subsample_side,
        config.base.seed,
    )?;
    let mut columns = Vec::new();
    let mut panels = Vec::new();
    for (name, switches) in ABLATION_STEPS {
        let cfg = column_config(&config.base, switches);
        let hash = cfg.hash(train.base_resolution());
        info!("ablation column {name}: {} iterations", cfg.iterations);
        let mut trainer = Trainer::new(cfg.clone(), train)?;
        let (model, status, iterations) = match trainer.run() {
            Ok(()) => (Some(trainer.model().clone()), "ok".to_string(), trainer.iteration()),
            Err(Error::Diverged { iteration, reason, last_good }) => {
                warn!("column {name} diverged at {iteration}: {reason}");
                (Some(last_good.model), format!("diverged at iteration {iteration}: {reason}"), last_good.iteration)
            }
            Err(e) => {
                warn!("column {name} failed: {e}");
                (None, format!("failed: {e}"), trainer.iteration())
            }
        };
        let mut column = AblationColumn {
            name: name.to_string(),
            config_hash: hash,
            status,
            iterations,
            mse: None,
            mse_x1e3: None,
            level_mse: Vec::new(),
            probe_mse: None,
        };
        match model {
            Some(model) => {
                let report = evaluate(&model, test, None)?;
                let image = render(&config.probe, &model)?;
                column.mse = Some(report.mse);
                column.mse_x1e3 = Some(report.mse_x1e3);
                column.level_mse = report.level_mse();
                column.probe_mse = Some(image.mse(&reference)?);
                panels.push(image.preview());
                if let Some(dir) = &config.output {
                    let slug = name.trim_start_matches('+').replace(' ', "_");
                    image.save_pfm(dir.join(format!("{slug}.pfm")))?;
                }
            }
            None => panels.push(RgbImage::new(config.probe.width as u32, config.probe.height as u32)),
        }
        columns.push(column);
    }
    panels.push(reference.preview());
    let strip = montage(&panels, 2);
    let mses: Option<Vec<f64>> = columns.iter().map(|c| c.mse).collect();
    let partial = columns.iter().any(|c| c.status != "ok");
    let report = AblationReport {
        monotone: mses.is_some_and(|m| non_increasing_with_slack(&m, ABLATION_SLACK)),
        slack: ABLATION_SLACK,
        partial,
        panels: panels.len(),
        columns,
        strip,
    };
    if let Some(dir) = &config.output {
        save_png(&report.strip, dir.join("strip.png"))?;
        reference.save_pfm(dir.join("reference.pfm"))?;
        write_text(dir.join("ablation.json"), &report.to_json())?;
    }
    Ok(report)
}
