//! On-disk model: `checkpoint.json` (configs plus named parameter arrays)
//! next to `vocab.txt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{ParamStore, Tensor};
use crate::text::Vocab;
use crate::train::TrainConfig;

pub const FORMAT: &str = "emocause-ckpt-v1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    train_config: TrainConfig,
    model_config: ModelConfig,
    params: Vec<NamedArray>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Vocab,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::bind(&self.model_config, &self.store)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            train_config: self.train_config.clone(),
            model_config: self.model_config.clone(),
            params: self
                .store
                .iter()
                .map(|(_, name, t)| NamedArray {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, serde_json::to_string(&file)?).map_err(|e| Error::io(&path, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    /// Loads and checks that the parameters bind to the stored configuration.
    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let path = dir.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != FORMAT {
            return Err(Error::config(format!(
                "{} has format {:?}, expected {FORMAT:?}",
                path.display(),
                file.format
            )));
        }
        let mut store = ParamStore::new();
        for p in file.params {
            let t = Tensor::new(p.shape, p.data)?;
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint parameter {}", p.name)));
            }
            store.insert(p.name, t)?;
        }
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        if vocab.len() != file.model_config.encoder.vocab_size {
            return Err(Error::config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                file.model_config.encoder.vocab_size
            )));
        }
        Model::bind(&file.model_config, &store)?;
        Ok(Checkpoint {
            train_config: file.train_config,
            model_config: file.model_config,
            store,
            vocab,
        })
    }
}
