use std::path::Path;

use anyhow::{Context, Result};
use pixseg_core::embed::HeadParams;
use pixseg_core::io::{read_model, write_model};
use pixseg_core::train::TrainConfig;

/// A head with the training config its embeddings depend on.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: HeadParams,
    pub config: TrainConfig,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let (params, config) = read_model(path).with_context(|| format!("reading model {}", path.display()))?;
        Ok(Self { params, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model(path, &self.params, &self.config).with_context(|| format!("writing model {}", path.display()))
    }
}
