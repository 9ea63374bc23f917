//! JSON run configuration shared by every CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::Hyperparams;
use crate::env::{EnvConfig, VirtualMicroscope};
use crate::error::{Error, Result};
use crate::imaging::{FocalStack, StackSpec};
use crate::net::NetArch;

/// Where a focal stack comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StackSource {
    Generate(StackSpec),
    /// Directory written by `gen-stack`; relative paths resolve against the
    /// config file's directory.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestStack {
    pub name: String,
    pub source: StackSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub stack: StackSource,
    #[serde(default)]
    pub test_stacks: Vec<TestStack>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub net: NetArch,
    #[serde(default)]
    pub train: Hyperparams,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.net.input_size != self.env.net_input_size {
            return Err(Error::Config(format!(
                "net.input_size {} differs from env.net_input_size {}",
                self.net.input_size, self.env.net_input_size
            )));
        }
        let mut names: Vec<&str> = self.test_stacks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&"train") {
            return Err(Error::Config(
                "test stack names must be unique and not \"train\"".into(),
            ));
        }
        Ok(())
    }

    /// The source for `name`: `None` or `"train"` is the training stack.
    pub fn source(&self, name: Option<&str>) -> Result<&StackSource> {
        match name {
            None | Some("train") => Ok(&self.stack),
            Some(n) => self
                .test_stacks
                .iter()
                .find(|t| t.name == n)
                .map(|t| &t.source)
                .ok_or_else(|| Error::Config(format!("no test stack named {n:?}"))),
        }
    }

    pub fn build_stack(&self, source: &StackSource) -> Result<Arc<FocalStack>> {
        match source {
            StackSource::Generate(spec) => spec.generate().map(Arc::new),
            StackSource::Path(p) => FocalStack::load(self.base_dir.join(p)).map(Arc::new),
        }
    }

    pub fn build_env(&self, source: &StackSource) -> Result<VirtualMicroscope> {
        VirtualMicroscope::new(self.build_stack(source)?, self.env.clone())
    }
}
