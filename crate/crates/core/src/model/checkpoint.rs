use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "STSHEAF1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk model: magic string, config, node count and named arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    magic: String,
    config: ModelConfig,
    num_nodes: usize,
    params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            magic: CHECKPOINT_MAGIC.to_string(),
            config: params.config().clone(),
            num_nodes: params.num_nodes(),
            params: params
                .iter()
                .map(|(name, t)| NamedArray {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.magic != CHECKPOINT_MAGIC {
            return Err(Error::InvalidArgument(format!(
                "bad checkpoint magic {:?}, expected {CHECKPOINT_MAGIC:?}",
                self.magic
            )));
        }
        let named = self
            .params
            .into_iter()
            .map(|a| Ok((a.name, Tensor::new(a.shape, a.data)?)))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_named(&self.config, self.num_nodes, named)
    }
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from_params(params))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let params = ModelParams::init(&ModelConfig::default(), 6, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&params, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params);
    }

    #[test]
    fn rejects_wrong_magic() {
        let params = ModelParams::init(&ModelConfig::default(), 3, 0).unwrap();
        let mut ck = Checkpoint::from_params(&params);
        ck.magic = "STSHEAF0".into();
        assert!(ck.into_params().is_err());
    }
}
