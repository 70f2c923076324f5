//! The neural material: offset warp, latent pyramid and decoder.

mod fourier;
mod inception;
mod layers;
mod material;
mod pyramid;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fourier::{fourier_encode, fourier_encode_all, DIRECTION_FREQUENCIES, POSITION_FREQUENCIES};
pub use inception::{InceptionDecoder, BRANCH_WIDTHS, INCEPTION_BLOCKS, INCEPTION_WIDTH, REDUCE_WIDTHS};
pub use layers::Mlp;
pub use material::{Forward, NeuralMaterial, EVAL_CHUNK};
pub use pyramid::{NeuralTexturePyramid, OffsetTexture};

use crate::error::{Error, Result};

/// Number of floats in a serialized query.
pub const QUERY_WIDTH: usize = 7;

/// One material lookup: uv, projected light and view directions, and level
/// of detail.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Query7D {
    pub u: [f32; 2],
    /// Incoming (light) direction projected to the unit disk.
    pub omega_i: [f32; 2],
    /// Outgoing (view) direction projected to the unit disk.
    pub omega_o: [f32; 2],
    pub lod: f32,
}

impl Query7D {
    pub fn to_array(&self) -> [f32; QUERY_WIDTH] {
        [
            self.u[0],
            self.u[1],
            self.omega_i[0],
            self.omega_i[1],
            self.omega_o[0],
            self.omega_o[1],
            self.lod,
        ]
    }

    pub fn from_slice(v: &[f32]) -> Self {
        Self {
            u: [v[0], v[1]],
            omega_i: [v[2], v[3]],
            omega_o: [v[4], v[5]],
            lod: v[6],
        }
    }

    /// Checks the disk and lod constraints.
    pub fn validate(&self, levels: usize) -> Result<()> {
        const SLACK: f32 = 1e-5;
        let in_disk = |w: [f32; 2]| w[0].hypot(w[1]) <= 1.0 + SLACK;
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("non-finite query {self:?}")));
        }
        if !in_disk(self.omega_i) || !in_disk(self.omega_o) {
            return Err(Error::Config(format!(
                "query directions must lie in the unit disk: {self:?}"
            )));
        }
        if self.lod < 0.0 || self.lod > (levels - 1) as f32 {
            return Err(Error::Config(format!(
                "lod {} outside [0, {}]",
                self.lod,
                levels - 1
            )));
        }
        Ok(())
    }
}

/// Flattens queries into a `[Q, 7]` row-major buffer.
pub fn queries_to_rows(queries: &[Query7D]) -> Vec<f32> {
    queries.iter().flat_map(|q| q.to_array()).collect()
}

/// Projects a unit upper-hemisphere vector to the disk.
pub fn project_direction(d: [f32; 3]) -> [f32; 2] {
    [d[0], d[1]]
}

/// Lifts a disk point back to the upper hemisphere.
pub fn lift_direction(w: [f32; 2]) -> [f32; 3] {
    let z2 = 1.0 - w[0] * w[0] - w[1] * w[1];
    [w[0], w[1], z2.max(0.0).sqrt()]
}

/// Pyramid coordinate of a filter footprint measured in level-0 texels.
pub fn lod_from_kernel(kernel_texels: f32, levels: usize) -> f32 {
    if !(kernel_texels > 1.0) {
        return 0.0;
    }
    kernel_texels.log2().clamp(0.0, (levels - 1) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mlp,
    Inception,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Mlp => "mlp",
            DecoderKind::Inception => "inception",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(DecoderKind::Mlp),
            "inception" => Ok(DecoderKind::Inception),
            other => Err(Error::Config(format!(
                "unknown decoder kind {other:?} (expected mlp or inception)"
            ))),
        }
    }
}

/// Architecture of a [`NeuralMaterial`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaterialConfig {
    /// Finest pyramid extent; must be a power of two.
    pub base_resolution: usize,
    /// Latent channels per pyramid texel.
    pub channels: usize,
    /// Hidden width of the decoder MLP.
    pub hidden: usize,
    pub offset_channels: usize,
    pub offset_hidden: usize,
    /// Fourier-encode inputs; when false the raw values are fed instead.
    pub encoding: bool,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
    pub decoder: DecoderKind,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            base_resolution: 64,
            channels: 8,
            hidden: 64,
            offset_channels: 8,
            offset_hidden: 32,
            encoding: true,
            position_frequencies: POSITION_FREQUENCIES,
            direction_frequencies: DIRECTION_FREQUENCIES,
            decoder: DecoderKind::Mlp,
        }
    }
}

impl MaterialConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.base_resolution.is_power_of_two() {
            return Err(Error::Config(format!(
                "base resolution {} is not a power of two",
                self.base_resolution
            )));
        }
        if self.channels == 0 || self.hidden == 0 || self.offset_channels == 0 || self.offset_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.encoding && (self.position_frequencies == 0 || self.direction_frequencies == 0) {
            return Err(Error::Config(
                "encoding enabled with zero frequencies; disable encoding instead".into(),
            ));
        }
        Ok(())
    }

    /// `log2(R) + 1`, down to a single texel.
    pub fn num_levels(&self) -> usize {
        self.base_resolution.trailing_zeros() as usize + 1
    }

    pub fn position_width(&self) -> usize {
        if self.encoding {
            2 * 2 * self.position_frequencies
        } else {
            2
        }
    }

    pub fn direction_width(&self) -> usize {
        if self.encoding {
            2 * 2 * self.direction_frequencies
        } else {
            2
        }
    }

    /// Width of the decoder input: latent features, then encoded u', ωi, ωo.
    pub fn decoder_input_width(&self) -> usize {
        self.channels + self.position_width() + 2 * self.direction_width()
    }

    pub fn offset_input_width(&self) -> usize {
        self.offset_channels + self.direction_width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_widths() {
        let full = MaterialConfig::default();
        assert_eq!(full.decoder_input_width(), 8 + 40 + 16 + 16);
        assert_eq!(full.num_levels(), 7);
        let base = MaterialConfig {
            encoding: false,
            ..full
        };
        assert_eq!(base.decoder_input_width(), 8 + 2 + 2 + 2);
        assert_eq!(base.offset_input_width(), 8 + 2);
    }

    #[test]
    fn lod_is_log2_of_kernel() {
        assert_eq!(lod_from_kernel(1.0, 7), 0.0);
        assert_eq!(lod_from_kernel(0.3, 7), 0.0);
        assert_eq!(lod_from_kernel(4.0, 7), 2.0);
        assert_eq!(lod_from_kernel(1e6, 7), 6.0);
    }

    #[test]
    fn query_validation() {
        let mut q = Query7D {
            u: [0.2, 0.3],
            omega_i: [0.1, 0.2],
            omega_o: [0.0, 0.0],
            lod: 1.5,
        };
        assert!(q.validate(7).is_ok());
        q.omega_o = [0.9, 0.9];
        assert!(q.validate(7).is_err());
        q.omega_o = [0.0, 0.0];
        q.lod = 6.5;
        assert!(q.validate(7).is_err());
    }

    #[test]
    fn direction_projection_round_trips() {
        let d = [0.36, 0.48, 0.8];
        let w = project_direction(d);
        let back = lift_direction(w);
        for (a, b) in d.iter().zip(back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn decoder_kind_parses() {
        assert_eq!("inception".parse::<DecoderKind>().unwrap(), DecoderKind::Inception);
        assert!("resnet".parse::<DecoderKind>().is_err());
    }
}
