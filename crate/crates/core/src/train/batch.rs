use rand::Rng;

use crate::error::{Error, Result};
use crate::hash::digest64;
use crate::model::QUERY_WIDTH;
use crate::synth::Dataset;

/// One in this many patches is held out for validation.
const HOLDOUT_MODULUS: u64 = 20;

/// Whether patch `p` of level `l` belongs to the validation split.
pub fn is_held_out(level: usize, patch: usize) -> bool {
    let mut key = [0u8; 16];
    key[..8].copy_from_slice(&(level as u64).to_le_bytes());
    key[8..].copy_from_slice(&(patch as u64).to_le_bytes());
    digest64(&key) % HOLDOUT_MODULUS == 0
}

/// Training and validation patch indices per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
}

impl Split {
    /// Holds out patches by hash. A level whose every patch would be held
    /// out keeps them all for training instead.
    pub fn new(ds: &Dataset) -> Self {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for l in 0..ds.num_levels() {
            let (v, t): (Vec<usize>, Vec<usize>) = (0..ds.patches(l)).partition(|&p| is_held_out(l, p));
            if t.is_empty() {
                train.push(v);
                validation.push(Vec::new());
            } else {
                train.push(t);
                validation.push(v);
            }
        }
        Self { train, validation }
    }

    /// Validation patches as `(level, patch)`, at most `limit`, spread
    /// round-robin over levels.
    pub fn validation_sample(&self, limit: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut round = 0;
        while out.len() < limit {
            let before = out.len();
            for (l, patches) in self.validation.iter().enumerate() {
                if let Some(&p) = patches.get(round) {
                    if out.len() < limit {
                        out.push((l, p));
                    }
                }
            }
            if out.len() == before {
                break;
            }
            round += 1;
        }
        out
    }
}

/// A coherent `h × w` block of queries cut from one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub level: usize,
    pub patch: usize,
    pub x0: usize,
    pub y0: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `[h·w, 7]`.
    pub queries: Vec<f32>,
    /// Row-major `[h·w, 3]`.
    pub reference: Vec<f32>,
}

/// Copies the `h × w` block at `(x0, y0)` of a patch.
pub fn cut_tile(ds: &Dataset, level: usize, patch: usize, x0: usize, y0: usize, h: usize, w: usize) -> Tile {
    let data = ds.level(level);
    let (qr, rr) = (data.query_rows(), data.radiance_rows());
    let mut queries = Vec::with_capacity(h * w * QUERY_WIDTH);
    let mut reference = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let start = ds.sample_index(patch, x0, y0 + y);
        queries.extend_from_slice(&qr[start * QUERY_WIDTH..(start + w) * QUERY_WIDTH]);
        reference.extend_from_slice(&rr[start * 3..(start + w) * 3]);
    }
    Tile {
        level,
        patch,
        x0,
        y0,
        height: h,
        width: w,
        queries,
        reference,
    }
}

/// Draws `count` training tiles of `h × w`.
///
/// A level is picked with probability proportional to its share of the
/// training patches, then a training patch and an origin inside it, so a
/// level without training patches is never drawn.
pub fn make_batch(
    ds: &Dataset,
    split: &Split,
    rng: &mut impl Rng,
    count: usize,
    h: usize,
    w: usize,
) -> Result<Vec<Tile>> {
    let p = ds.patch();
    if h > p || w > p {
        return Err(Error::Mismatch(format!(
            "tile {h}x{w} exceeds the dataset's {p}x{p} patches at every level"
        )));
    }
    let mass: Vec<u64> = split.train.iter().map(|t| t.len() as u64).collect();
    let total: u64 = mass.iter().sum();
    if total == 0 {
        return Err(Error::Mismatch("dataset has no training patches".into()));
    }
    let mut tiles = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.random_range(0..total);
        let level = mass
            .iter()
            .position(|&m| {
                if pick < m {
                    true
                } else {
                    pick -= m;
                    false
                }
            })
            .expect("pick below total mass");
        let patches = &split.train[level];
        let patch = patches[rng.random_range(0..patches.len())];
        let x0 = rng.random_range(0..=p - w);
        let y0 = rng.random_range(0..=p - h);
        tiles.push(cut_tile(ds, level, patch, x0, y0, h, w));
    }
    Ok(tiles)
}
