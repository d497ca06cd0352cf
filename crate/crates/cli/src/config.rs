use std::fs;
use std::path::{Path, PathBuf};

use bytener_core::network::TrainConfig;
use bytener_core::{FeatureConfig, WindowConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// JSON Lines with byte-offset spans.
    #[default]
    Jsonl,
    /// `token<TAB>tag` lines, blank line between sentences.
    Iob,
}

fn default_dev_fraction() -> f64 {
    0.1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

/// Everything `train` needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    /// Share of `train` held out as dev data when `dev` is absent; 0 disables.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub format: CorpusFormat,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub bpe_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub word_embeddings: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.output_dir);
        for p in [&mut self.dev, &mut self.codebook, &mut self.bpe_embeddings, &mut self.word_embeddings]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        let checks = [self.features.validate(), self.window.validate(), self.training.validate()];
        for check in checks {
            check.map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return usage(format!("dev_fraction must lie in [0, 1), got {}", self.dev_fraction));
        }
        if self.features.needs_codebook() && self.codebook.is_none() {
            return usage("the enabled BPE features need \"codebook\"".into());
        }
        if self.features.use_pretrained_bpe && self.bpe_embeddings.is_none() {
            return usage("use_pretrained_bpe needs \"bpe_embeddings\"".into());
        }
        if self.features.use_pretrained_word && self.word_embeddings.is_none() {
            return usage("use_pretrained_word needs \"word_embeddings\"".into());
        }
        Ok(())
    }
}
