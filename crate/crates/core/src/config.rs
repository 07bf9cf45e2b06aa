//! Whole-run configuration, stored as TOML beside every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::ChainConfig;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::features::MelParams;
use crate::model::ModelConfig;
use crate::objective::LossConfig;
use crate::trainer::{PretrainConfig, TrainConfig};
use crate::views::SamplingStrategy;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub retrieval_k: Vec<usize>,
    /// Tracks of the test split used by cosine sweeps (0 = all).
    pub sweep_tracks: usize,
    pub split_seed: u64,
    pub stretch_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            retrieval_k: vec![1, 3, 5, 10],
            sweep_tracks: 24,
            split_seed: 0,
            stretch_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub chain: ChainConfig,
    pub sampling: SamplingStrategy,
    pub features: MelParams,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_name: "run".into(),
            output_dir: PathBuf::from("runs"),
            corpus: CorpusConfig::default(),
            chain: ChainConfig::default(),
            sampling: SamplingStrategy::default(),
            features: MelParams::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            model: self.model.clone(),
            chain: self.chain.clone(),
            sampling: self.sampling.clone(),
            features: self.features.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run_name `{}` must be a plain directory name", self.run_name)));
        }
        self.corpus.validate()?;
        self.pretrain().validate()?;
        self.eval.probe.validate()?;
        if self.eval.retrieval_k.is_empty() || self.eval.retrieval_k.contains(&0) {
            return Err(Error::param("retrieval_k", "need at least one positive k"));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Topology;

    #[test]
    fn toml_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.model.topology = Topology::LoevPlusPlus;
        cfg.train.steps = 12;
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_use_defaults_and_unknown_keys_fail() {
        let cfg = RunConfig::from_toml("run_name = \"x\"\n[train]\nsteps = 3\n").unwrap();
        assert_eq!(cfg.train.steps, 3);
        assert_eq!(cfg.model, ModelConfig::default());
        assert!(matches!(RunConfig::from_toml("[train]\nstepz = 3\n"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("run_name = \"a/b\"\n").is_err());
        assert!(matches!(RunConfig::load(Path::new("/nope.toml")), Err(Error::MissingFile(_))));
    }
}
