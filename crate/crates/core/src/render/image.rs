use std::path::Path;

use image::{Rgb, RgbImage};

use crate::bytes::{read_file, write_file};
use crate::error::{Error, Result};

/// Display gamma of the preview tone map.
pub const PREVIEW_GAMMA: f32 = 2.2;

/// Linear RGB image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    width: usize,
    height: usize,
    pixels: Vec<[f32; 3]>,
}

impl HdrImage {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Mismatch(format!(
                "{} pixels cannot form a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Mean squared error over pixels and channels.
    pub fn mse(&self, other: &HdrImage) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Mismatch(format!(
                "cannot compare {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |k| ((a[k] - b[k]) as f64).powi(2)))
            .sum();
        Ok(sum / (self.pixels.len() * 3).max(1) as f64)
    }

    /// Portable float map: little-endian (scale -1), rows stored bottom to
    /// top.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 12);
        for y in (0..self.height).rev() {
            for p in &self.pixels[y * self.width..(y + 1) * self.width] {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(format!("pfm: {m}"));
        // three whitespace-terminated header tokens
        let mut tokens = Vec::new();
        let mut pos = 0;
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(corrupt("incomplete header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("header is not text"))?);
        }
        pos += 1;
        if tokens[0] != "PF" {
            return Err(Error::BadMagic {
                what: "pfm",
                expected: "PF".into(),
                found: tokens[0].into(),
            });
        }
        let parse = |t: &str| t.parse::<usize>().map_err(|_| corrupt("bad extent"));
        let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
        let scale: f32 = tokens[3].parse().map_err(|_| corrupt("bad scale"))?;
        if scale >= 0.0 {
            return Err(corrupt("only little-endian files are supported"));
        }
        let need = width * height * 12;
        let data = bytes.get(pos..).unwrap_or_default();
        if data.len() != need {
            return Err(Error::Truncated {
                what: "pfm pixels".into(),
                expected: need,
                actual: data.len(),
            });
        }
        let mut img = Self::new(width, height, [0.0; 3]);
        for (i, px) in data.chunks_exact(12).enumerate() {
            let (x, y) = (i % width, height - 1 - i / width);
            let c = |k: usize| f32::from_le_bytes(px[4 * k..4 * k + 4].try_into().unwrap());
            img.set(x, y, [c(0), c(1), c(2)]);
        }
        Ok(img)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_pfm())
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pfm(&read_file(path.as_ref())?)
    }

    /// 8-bit preview, `round(clamp(v^(1/2.2), 0, 1) * 255)` per channel.
    pub fn preview(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            Rgb(p.map(tone_map))
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_png(&self.preview(), path)
    }
}

pub fn tone_map(v: f32) -> u8 {
    let v = if v > 0.0 { v.powf(1.0 / PREVIEW_GAMMA) } else { 0.0 };
    (v.min(1.0) * 255.0).round() as u8
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_file(path.as_ref(), &bytes)
}

/// Panels side by side with a `gap`-pixel black separator. Panels may have
/// different heights; shorter ones are top-aligned.
pub fn montage(panels: &[RgbImage], gap: u32) -> RgbImage {
    let width = panels.iter().map(|p| p.width()).sum::<u32>() + gap * panels.len().saturating_sub(1) as u32;
    let height = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let mut out = RgbImage::new(width.max(1), height.max(1));
    let mut x0 = 0;
    for p in panels {
        image::imageops::replace(&mut out, p, x0 as i64, 0);
        x0 += p.width() + gap;
    }
    out
}

/// Maps `v / max` to a black-red-yellow-white ramp.
pub fn heat_color(v: f32, max: f32) -> Rgb<u8> {
    let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 } * 3.0;
    let ch = |s: f32| (s.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(t), ch(t - 1.0), ch(t - 2.0)])
}

/// Writes `text` to `path` atomically.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_file(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HdrImage {
        let px = (0..12).map(|i| [i as f32, -0.5 * i as f32, 1e-3 * i as f32]).collect();
        HdrImage::from_pixels(4, 3, px).unwrap()
    }

    #[test]
    fn pfm_round_trip() {
        let img = sample();
        let bytes = img.to_pfm();
        assert!(bytes.starts_with(b"PF\n4 3\n-1.0\n"));
        assert_eq!(HdrImage::from_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pfm_stores_bottom_row_first() {
        let img = sample();
        let bytes = img.to_pfm();
        let header = b"PF\n4 3\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap());
        assert_eq!(first, img.get(0, 2)[0]);
    }

    #[test]
    fn truncated_pfm_rejected() {
        let bytes = sample().to_pfm();
        let err = HdrImage::from_pfm(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("expected 144"), "{err}");
    }

    #[test]
    fn tone_map_fixed_points() {
        assert_eq!(tone_map(0.0), 0);
        assert_eq!(tone_map(-3.0), 0);
        assert_eq!(tone_map(1.0), 255);
        assert_eq!(tone_map(7.0), 255);
        assert_eq!(tone_map(0.5), (0.5f32.powf(1.0 / 2.2) * 255.0).round() as u8);
    }

    #[test]
    fn montage_layout() {
        let a = RgbImage::from_pixel(3, 2, Rgb([255, 0, 0]));
        let b = RgbImage::from_pixel(2, 4, Rgb([0, 255, 0]));
        let m = montage(&[a, b], 1);
        assert_eq!((m.width(), m.height()), (6, 4));
        assert_eq!(m.get_pixel(0, 0), &Rgb([255, 0, 0]));
        assert_eq!(m.get_pixel(3, 0), &Rgb([0, 0, 0]));
        assert_eq!(m.get_pixel(5, 3), &Rgb([0, 255, 0]));
    }
}
