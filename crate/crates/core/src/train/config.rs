use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::hash::digest64;
use crate::loss::LossConfig;
use crate::model::{DecoderKind, MaterialConfig};

/// Iterations used when none are given.
pub const DEFAULT_ITERATIONS: u64 = 30_000;
/// Default when the Inception decoder is selected.
pub const DEFAULT_INCEPTION_ITERATIONS: u64 = 80_000;

/// Everything that controls a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Tiles per batch.
    pub tiles: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub encoding: bool,
    pub gradient_loss: bool,
    pub remap: bool,
    pub decoder: DecoderKind,
    pub gradient_weight: f32,
    pub channels: usize,
    pub hidden: usize,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
    /// Iterations between validation passes and checkpoint writes.
    pub checkpoint_period: u64,
    /// Upper bound on held-out patches scored per validation pass.
    pub validation_patches: usize,
    /// Evaluate the tiles of a batch on the thread pool. Results are
    /// identical either way.
    pub parallel: bool,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = MaterialConfig::default();
        Self {
            iterations: DEFAULT_ITERATIONS,
            tiles: 4,
            tile_height: 32,
            tile_width: 32,
            adam: AdamConfig::default(),
            seed: 0,
            encoding: true,
            gradient_loss: true,
            remap: true,
            decoder: DecoderKind::Mlp,
            gradient_weight: 1.0,
            channels: m.channels,
            hidden: m.hidden,
            position_frequencies: m.position_frequencies,
            direction_frequencies: m.direction_frequencies,
            checkpoint_period: 1000,
            validation_patches: 64,
            parallel: true,
            dataset: None,
            output: None,
        }
    }
}

/// Fields that identify a run for resuming; paths and budgets are left out.
#[derive(Serialize)]
struct Identity<'a> {
    material: &'a MaterialConfig,
    adam: &'a AdamConfig,
    seed: u64,
    tiles: usize,
    tile: (usize, usize),
    loss: LossConfig,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Recognized keys, in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "iterations",
        "tiles",
        "tile_height",
        "tile_width",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "seed",
        "encoding",
        "gradient_loss",
        "remap",
        "decoder",
        "gradient_weight",
        "channels",
        "hidden",
        "position_frequencies",
        "direction_frequencies",
        "checkpoint_period",
        "validation_patches",
        "parallel",
        "dataset",
        "output",
    ];

    /// The baseline: every switch off, MLP decoder.
    pub fn baseline() -> Self {
        Self {
            encoding: false,
            gradient_loss: false,
            remap: false,
            ..Self::default()
        }
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "iterations" => self.iterations = parse_num(key, v)?,
            "tiles" => self.tiles = parse_num(key, v)?,
            "tile_height" => self.tile_height = parse_num(key, v)?,
            "tile_width" => self.tile_width = parse_num(key, v)?,
            "lr" => self.adam.lr = parse_num(key, v)?,
            "beta1" => self.adam.beta1 = parse_num(key, v)?,
            "beta2" => self.adam.beta2 = parse_num(key, v)?,
            "eps" => self.adam.eps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "encoding" => self.encoding = parse_bool(key, v)?,
            "gradient_loss" => self.gradient_loss = parse_bool(key, v)?,
            "remap" => self.remap = parse_bool(key, v)?,
            "decoder" => self.decoder = v.parse()?,
            "gradient_weight" => self.gradient_weight = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "position_frequencies" => self.position_frequencies = parse_num(key, v)?,
            "direction_frequencies" => self.direction_frequencies = parse_num(key, v)?,
            "checkpoint_period" => self.checkpoint_period = parse_num(key, v)?,
            "validation_patches" => self.validation_patches = parse_num(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "output" => self.output = Some(PathBuf::from(v)),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} (known: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Builds a config from defaults plus `(key, value)` pairs applied in
    /// order, so later pairs win. The iteration default follows the decoder
    /// unless `iterations` is given.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut config = Self::default();
        let mut explicit_iterations = false;
        for (k, v) in pairs {
            config.set(k, v)?;
            explicit_iterations |= k == "iterations";
        }
        if !explicit_iterations && config.decoder == DecoderKind::Inception {
            config.iterations = DEFAULT_INCEPTION_ITERATIONS;
        }
        config.validate()?;
        Ok(config)
    }

    /// Splits `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)));
            };
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let pairs = Self::parse_pairs(text)?;
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    /// Renders the config back as `key = value` lines.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("iterations", self.iterations.to_string());
        line("tiles", self.tiles.to_string());
        line("tile_height", self.tile_height.to_string());
        line("tile_width", self.tile_width.to_string());
        line("lr", self.adam.lr.to_string());
        line("beta1", self.adam.beta1.to_string());
        line("beta2", self.adam.beta2.to_string());
        line("eps", self.adam.eps.to_string());
        line("seed", self.seed.to_string());
        line("encoding", self.encoding.to_string());
        line("gradient_loss", self.gradient_loss.to_string());
        line("remap", self.remap.to_string());
        line("decoder", self.decoder.to_string());
        line("gradient_weight", self.gradient_weight.to_string());
        line("channels", self.channels.to_string());
        line("hidden", self.hidden.to_string());
        line("position_frequencies", self.position_frequencies.to_string());
        line("direction_frequencies", self.direction_frequencies.to_string());
        line("checkpoint_period", self.checkpoint_period.to_string());
        line("validation_patches", self.validation_patches.to_string());
        line("parallel", self.parallel.to_string());
        if let Some(p) = &self.dataset {
            line("dataset", p.display().to_string());
        }
        if let Some(p) = &self.output {
            line("output", p.display().to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.tiles == 0 || self.tile_height == 0 || self.tile_width == 0 {
            return bad("tile shape must be non-empty".into());
        }
        if self.gradient_loss && (self.tile_height < 3 || self.tile_width < 3) {
            return bad(format!(
                "gradient loss needs tiles of at least 3x3, got {}x{}",
                self.tile_height, self.tile_width
            ));
        }
        if self.checkpoint_period == 0 {
            return bad("checkpoint_period must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        if !(self.gradient_weight.is_finite() && self.gradient_weight >= 0.0) {
            return bad(format!("gradient_weight {} must be finite and >= 0", self.gradient_weight));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gradient_loss: self.gradient_loss,
            remap: self.remap,
            gradient_weight: self.gradient_weight,
        }
    }

    /// Model architecture for a dataset of the given base resolution.
    pub fn material(&self, base_resolution: usize) -> MaterialConfig {
        MaterialConfig {
            base_resolution,
            channels: self.channels,
            hidden: self.hidden,
            position_frequencies: self.position_frequencies,
            direction_frequencies: self.direction_frequencies,
            encoding: self.encoding,
            decoder: self.decoder,
            ..MaterialConfig::default()
        }
    }

    /// Identity hash used to match checkpoints with configs.
    pub fn hash(&self, base_resolution: usize) -> u64 {
        let material = self.material(base_resolution);
        let id = Identity {
            material: &material,
            adam: &self.adam,
            seed: self.seed,
            tiles: self.tiles,
            tile: (self.tile_height, self.tile_width),
            loss: self.loss(),
        };
        digest64(&serde_json::to_vec(&id).expect("identity serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.iterations, 30_000);
        assert_eq!((c.tiles, c.tile_height, c.tile_width), (4, 32, 32));
        assert_eq!(c.adam.lr, 1e-3);
    }

    #[test]
    fn inception_changes_iteration_default() {
        let c = TrainConfig::from_pairs([("decoder", "inception")]).unwrap();
        assert_eq!(c.iterations, 80_000);
        let c = TrainConfig::from_pairs([("iterations", "10"), ("decoder", "inception")]).unwrap();
        assert_eq!(c.iterations, 10);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::baseline();
        c.seed = 9;
        c.output = Some("out/run".into());
        c.adam.lr = 5e-4;
        let back = TrainConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = TrainConfig::from_kv_str("learning_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("unknown key \"learning_rate\""));
    }

    #[test]
    fn comments_and_later_values_win() {
        let c = TrainConfig::from_kv_str("# run\nseed = 1\n\nseed = 2 # override\n").unwrap();
        assert_eq!(c.seed, 2);
    }

    #[test]
    fn small_tile_with_gradient_loss_rejected() {
        assert!(TrainConfig::from_pairs([("tile_height", "2")]).is_err());
        assert!(TrainConfig::from_pairs([("tile_height", "2"), ("gradient_loss", "false")]).is_ok());
    }

    #[test]
    fn hash_tracks_identity_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.iterations = 5;
        b.output = Some("x".into());
        assert_eq!(a.hash(64), b.hash(64));
        b.seed = 1;
        assert_ne!(a.hash(64), b.hash(64));
        assert_ne!(a.hash(64), a.hash(32));
    }
}
