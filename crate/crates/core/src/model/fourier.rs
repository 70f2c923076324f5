//! Fourier input encoding.

use crate::autodiff::sample::encode_into;

/// Frequency count used for uv positions.
pub const POSITION_FREQUENCIES: usize = 10;
/// Frequency count used for each projected direction.
pub const DIRECTION_FREQUENCIES: usize = 4;

/// `(sin(2^0 π p), cos(2^0 π p), …, sin(2^{L-1} π p), cos(2^{L-1} π p))`.
pub fn fourier_encode(p: f32, frequencies: usize) -> Vec<f32> {
    let mut out = vec![0.0; 2 * frequencies];
    encode_into(p, &mut out);
    out
}

/// Encodes each component and concatenates the results.
pub fn fourier_encode_all(values: &[f32], frequencies: usize) -> Vec<f32> {
    values
        .iter()
        .flat_map(|&p| fourier_encode(p, frequencies))
        .collect()
}
