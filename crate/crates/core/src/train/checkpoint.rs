use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::TrainConfig;
use crate::autodiff::Adam;
use crate::bytes::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::hash::digest64;
use crate::model::{MaterialConfig, NeuralMaterial};

const MAGIC: &[u8] = b"NMAT1";

/// Position of the batch RNG, enough to restore it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state: model, optimizer, iteration and RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub iteration: u64,
    pub rng: RngState,
    pub config: TrainConfig,
    pub model: NeuralMaterial,
    pub adam: Adam,
}

fn blob(w: &mut Writer, data: &[f32]) {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.u64(digest64(&bytes));
    w.bytes(&bytes);
}

fn read_blob(r: &mut Reader<'_>, name: &str, kind: &str, n: usize) -> Result<Vec<f32>> {
    let part = format!("parameter {name:?} {kind}");
    let expected = r.u64(&part)?;
    r.require(&part, n * 4)?;
    let raw = r.take(&part, n * 4)?;
    if digest64(raw) != expected {
        return Err(Error::Corrupt(format!("checkpoint: {kind} of parameter {name:?} fails its checksum")));
    }
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

impl Checkpoint {
    pub fn material_config(&self) -> &MaterialConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u64(self.config_hash);
        w.u64(self.iteration);
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.bytes(&self.rng.word_pos.to_le_bytes());
        w.str(&serde_json::to_string(self.model.config()).expect("config serializes"));
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        w.u64(self.adam.steps());
        let store = self.model.params();
        w.u32(store.len() as u32);
        for (id, p) in store.iter() {
            w.str(&p.name);
            w.u32(p.value.ndim() as u32);
            for &d in p.value.shape() {
                w.u64(d as u64);
            }
            blob(&mut w, p.value.data());
            blob(&mut w, self.adam.first_moment(id));
            blob(&mut w, self.adam.second_moment(id));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("checkpoint", bytes);
        r.magic(MAGIC)?;
        let config_hash = r.u64("config hash")?;
        let iteration = r.u64("iteration")?;
        let seed: [u8; 32] = r.take("rng seed", 32)?.try_into().unwrap();
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take("rng position", 16)?.try_into().unwrap());
        let material: MaterialConfig = serde_json::from_str(&r.str("architecture")?)?;
        let config: TrainConfig = serde_json::from_str(&r.str("training config")?)?;
        let steps = r.u64("optimizer step")?;
        let count = r.u32("parameter count")? as usize;

        let mut model = NeuralMaterial::new(material, 0)?;
        if count != model.params().len() {
            return Err(Error::Mismatch(format!(
                "checkpoint lists {count} parameters but the architecture has {}",
                model.params().len()
            )));
        }
        let ids: Vec<_> = model.params().ids().collect();
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for id in ids {
            let name = r.str("parameter name")?;
            let ndim = r.u32(&format!("parameter {name:?} rank"))? as usize;
            if ndim > 8 {
                return Err(Error::Corrupt(format!("checkpoint: parameter {name:?} has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64(&format!("parameter {name:?} shape"))? as usize);
            }
            let expected_name = model.params().name(id).to_string();
            let expected_shape = model.params().value(id).shape().to_vec();
            if name != expected_name || shape != expected_shape {
                return Err(Error::Mismatch(format!(
                    "checkpoint parameter {name:?} {shape:?} does not match architecture parameter {expected_name:?} {expected_shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let value = read_blob(&mut r, &name, "value", n)?;
            m.push(read_blob(&mut r, &name, "first moment", n)?);
            v.push(read_blob(&mut r, &name, "second moment", n)?);
            model.params_mut().value_mut(id).data_mut().copy_from_slice(&value);
        }
        r.finish()?;
        Ok(Self {
            config_hash,
            iteration,
            rng: RngState { seed, stream, word_pos },
            adam: Adam::from_state(config.adam, steps, m, v),
            config,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}
