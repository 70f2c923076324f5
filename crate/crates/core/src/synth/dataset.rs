use std::path::Path;

use crate::bytes::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::hash::digest64;
use crate::model::{Query7D, QUERY_WIDTH};

const MAGIC: &[u8] = b"NMDS1";

/// Queries and reference radiance for one level of detail.
///
/// Samples are grouped into square patches of `patch × patch` queries that
/// share their directions and lie on a grid with the level's texel spacing,
/// stored row-major one patch after another.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelData {
    queries: Vec<f32>,
    radiance: Vec<f32>,
}

impl LevelData {
    pub fn new(queries: Vec<f32>, radiance: Vec<f32>) -> Result<Self> {
        if queries.len() % QUERY_WIDTH != 0 || radiance.len() % 3 != 0 {
            return Err(Error::Corrupt(format!(
                "level arrays of {} and {} floats are not whole queries/colours",
                queries.len(),
                radiance.len()
            )));
        }
        if queries.len() / QUERY_WIDTH != radiance.len() / 3 {
            return Err(Error::Corrupt(format!(
                "{} queries but {} radiance values",
                queries.len() / QUERY_WIDTH,
                radiance.len() / 3
            )));
        }
        if let Some(i) = radiance.iter().position(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Corrupt(format!(
                "radiance sample {} is {} (must be finite and non-negative)",
                i / 3,
                radiance[i]
            )));
        }
        if let Some(i) = queries.iter().position(|q| !q.is_finite()) {
            return Err(Error::Corrupt(format!("query {} is not finite", i / QUERY_WIDTH)));
        }
        Ok(Self { queries, radiance })
    }

    pub fn len(&self) -> usize {
        self.radiance.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.radiance.is_empty()
    }

    /// Flat `[N, 7]` query rows.
    pub fn query_rows(&self) -> &[f32] {
        &self.queries
    }

    /// Flat `[N, 3]` radiance rows.
    pub fn radiance_rows(&self) -> &[f32] {
        &self.radiance
    }

    pub fn query(&self, i: usize) -> Query7D {
        Query7D::from_slice(&self.queries[i * QUERY_WIDTH..(i + 1) * QUERY_WIDTH])
    }

    pub fn radiance(&self, i: usize) -> [f32; 3] {
        [self.radiance[3 * i], self.radiance[3 * i + 1], self.radiance[3 * i + 2]]
    }
}

/// Multi-level reference dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    base_resolution: usize,
    patch: usize,
    config_hash: u64,
    levels: Vec<LevelData>,
}

impl Dataset {
    pub fn new(base_resolution: usize, patch: usize, config_hash: u64, levels: Vec<LevelData>) -> Result<Self> {
        if !base_resolution.is_power_of_two() {
            return Err(Error::Corrupt(format!("base resolution {base_resolution} is not a power of two")));
        }
        let max_levels = base_resolution.trailing_zeros() as usize + 1;
        if levels.is_empty() || levels.len() > max_levels {
            return Err(Error::Corrupt(format!(
                "{} levels for base resolution {base_resolution} (1..={max_levels})",
                levels.len()
            )));
        }
        if patch == 0 {
            return Err(Error::Corrupt("patch extent is zero".into()));
        }
        let per = patch * patch;
        for (l, level) in levels.iter().enumerate() {
            if level.len() % per != 0 {
                return Err(Error::Corrupt(format!(
                    "level {l}: {} samples is not a whole number of {patch}x{patch} patches",
                    level.len()
                )));
            }
        }
        Ok(Self {
            base_resolution,
            patch,
            config_hash,
            levels,
        })
    }

    pub fn base_resolution(&self) -> usize {
        self.base_resolution
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn level(&self, l: usize) -> &LevelData {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[LevelData] {
        &self.levels
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.levels.iter().map(LevelData::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.levels.iter().map(LevelData::len).sum()
    }

    /// Number of patches at level `l`.
    pub fn patches(&self, l: usize) -> usize {
        self.levels[l].len() / (self.patch * self.patch)
    }

    /// Index of sample `(x, y)` of patch `p` at any level.
    pub fn sample_index(&self, p: usize, x: usize, y: usize) -> usize {
        (p * self.patch + y) * self.patch + x
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(self.base_resolution as u32);
        w.u32(self.levels.len() as u32);
        for level in &self.levels {
            w.u64(level.len() as u64);
        }
        w.u64(self.config_hash);
        w.u32(self.patch as u32);
        for level in &self.levels {
            w.f32s(&level.queries);
            w.f32s(&level.radiance);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("dataset", bytes);
        r.magic(MAGIC)?;
        let base = r.u32("base resolution")? as usize;
        let count = r.u32("level count")? as usize;
        if count > 32 {
            return Err(Error::Corrupt(format!("dataset: implausible level count {count}")));
        }
        let mut counts = Vec::with_capacity(count);
        for l in 0..count {
            counts.push(r.u64(&format!("level {l} sample count"))? as usize);
        }
        let hash = r.u64("config hash")?;
        let patch = r.u32("patch extent")? as usize;
        let body: usize = counts.iter().map(|n| n * (QUERY_WIDTH + 3) * 4).sum();
        r.require("sample arrays", body)?;
        let mut levels = Vec::with_capacity(count);
        for (l, &n) in counts.iter().enumerate() {
            let queries = r.f32s(&format!("level {l} queries"), n * QUERY_WIDTH)?;
            let radiance = r.f32s(&format!("level {l} radiance"), n * 3)?;
            levels.push(LevelData::new(queries, radiance).map_err(|e| Error::Corrupt(format!("dataset level {l}: {e}")))?);
        }
        r.finish()?;
        Self::new(base, patch, hash, levels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }

    /// Hash of the serialized file contents.
    pub fn content_hash(&self) -> u64 {
        digest64(&self.to_bytes())
    }
}
