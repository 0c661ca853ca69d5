//! Self-describing model files: configuration, vocabulary and named tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{PasteError, Result};
use crate::model::{ModelConfig, PasteModel};
use crate::tape::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &PasteModel<f32>, vocab: &Vocabulary) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                data: t.iter().copied().collect(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            vocab: vocab.clone(),
            tensors,
        }
    }

    pub fn into_model(self) -> Result<(PasteModel<f32>, Vocabulary)> {
        if self.format_version != FORMAT_VERSION {
            return Err(PasteError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let mut params = ParamStore::new();
        for t in self.tensors {
            let array = Array2::from_shape_vec((t.rows, t.cols), t.data)
                .map_err(|e| PasteError::Checkpoint(format!("tensor '{}': {e}", t.name)))?;
            params.insert(t.name, array);
        }
        let model = PasteModel::from_params(self.config, &self.vocab, params)?;
        Ok((model, self.vocab))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| PasteError::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
