//! Checkpoints are directories: `meta.json` plus one container file per
//! parameter under `params/`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::TensorFile;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Params, TargetScale};
use crate::tensor::Array;
use crate::SeededRng;

pub const META_FILE: &str = "meta.json";
pub const PARAMS_DIR: &str = "params";
const CHECKPOINT_VERSION: u32 = 1;

/// Enough to resume a random stream exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &SeededRng) -> Self {
        let seed_hex = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed_hex, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<SeededRng> {
        let bad = || Error::Malformed(format!("bad RNG state {self:?}"));
        if self.seed_hex.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = SeededRng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub perm_segments: Option<usize>,
    pub target_scale: Option<TargetScale>,
    pub epoch: usize,
    pub seed: u64,
    pub rng: Option<RngState>,
    pub parameters: Vec<ParamEntry>,
}

fn write_meta(path: &Path, meta: &CheckpointMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write `model` into `dir`, creating it if needed.
pub fn save_checkpoint(
    dir: &Path,
    model: &Model<f32>,
    epoch: usize,
    seed: u64,
    rng: Option<&SeededRng>,
) -> Result<()> {
    let pdir = dir.join(PARAMS_DIR);
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut parameters = Vec::new();
    for (name, value) in model.params.iter() {
        let dims = value
            .shape()
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("{name} too large"))))
            .collect::<Result<Vec<_>>>()?;
        TensorFile { dims, payload: value.data().to_vec(), labels: None }
            .write(pdir.join(format!("{name}.sbpp")))?;
        parameters.push(ParamEntry { name: name.clone(), shape: value.shape().to_vec() });
    }
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        perm_segments: model.perm_segments(),
        target_scale: model.target_scale(),
        epoch,
        seed,
        rng: rng.map(RngState::capture),
        parameters,
    };
    write_meta(&dir.join(META_FILE), &meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::UnrecognizedContainer(format!(
            "checkpoint version {} is not supported",
            meta.version
        )));
    }
    let mut params = Params::default();
    for entry in &meta.parameters {
        let t = TensorFile::read(dir.join(PARAMS_DIR).join(format!("{}.sbpp", entry.name)))?;
        let shape: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
        if shape != entry.shape {
            return Err(Error::Malformed(format!(
                "{} has shape {shape:?}, metadata says {:?}",
                entry.name, entry.shape
            )));
        }
        params.insert(entry.name.clone(), Array::new(shape, t.payload)?);
    }
    let model = Model::from_parts(meta.model.clone(), params, meta.perm_segments, meta.target_scale)?;
    Ok((model, meta))
}
