//! Optional TOML configuration. Every key mirrors a command-line flag;
//! flags given on the command line take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use milscreen::corpus::SynthConfig;
use milscreen::heads::SvmConfig;
use milscreen::tinynn::TrainConfig;
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub window: Option<u32>,
    pub n_splits: Option<usize>,
    pub seed: Option<u64>,
    pub model_kind: Option<String>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<Vec<PathBuf>>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub images: Option<PathBuf>,
    pub faces: Option<String>,
    pub suite: Option<PathBuf>,
    pub kfold: Option<usize>,
    pub budget_secs: Option<u64>,
    pub max_iterations: Option<usize>,
    pub basis: Option<String>,
    pub threshold: Option<f64>,
    pub tune_threshold: Option<bool>,
    pub train: Option<TrainConfig>,
    pub svm: Option<SvmConfig>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// First of flag, config value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
