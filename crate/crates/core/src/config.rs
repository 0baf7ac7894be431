//! Run configuration shared by every pipeline step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{AreaSplit, PairingConfig};
use crate::retrieval::EvalConfig;
use crate::synthgen::{world_pyramid, SyntheticWorld, WorldConfig};
use crate::tilemap::{PyramidConfig, TilePyramid};
use crate::trainer::TrainConfig;

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const QUERIES: &str = "queries.jsonl";
    pub const QUERY_FEATURES: &str = "query_features.sklq";
    pub const TILE_FEATURES: &str = "tile_features.skle";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const TRAIN_PAIRS: &str = "train_pairs.jsonl";
    pub const TEST_PAIRS: &str = "test_pairs.jsonl";
    pub const BATCHES: &str = "batches.txt";
    pub const CHECKPOINT: &str = "model.skl1";
    pub const TRACE: &str = "trace.tsv";
    pub const METRICS: &str = "metrics.json";
}

fn default_out() -> PathBuf {
    PathBuf::from(".")
}

fn default_n_queries() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for sampling and training; overrides `train.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Pyramid config file. When absent the pyramid is derived from `world`.
    #[serde(default)]
    pub pyramid: Option<PathBuf>,
    /// Query records. Defaults to the output directory's query file.
    #[serde(default)]
    pub queries: Option<PathBuf>,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    #[serde(default)]
    pub pairing: PairingConfig,
    /// Cross-area with the west half of the map when absent.
    #[serde(default)]
    pub split: Option<AreaSplit>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            pyramid: None,
            queries: None,
            world: None,
            n_queries: default_n_queries(),
            pairing: PairingConfig::default(),
            split: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    /// Loads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [Some(&mut cfg.out), cfg.pyramid.as_mut(), cfg.queries.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks thresholds and configs, and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        self.pairing.validate()?;
        self.train_config().validate()?;
        if let Some(w) = &self.world {
            w.validate()?;
        }
        if let Some(s) = &self.split {
            s.validate(None)?;
        }
        if self.eval.sdm_scale <= 0.0 || self.eval.recall_ks.contains(&0) || self.eval.sdm_ks.contains(&0) {
            return Err(Error::Config("eval ks must be positive and sdm_scale > 0".into()));
        }
        for p in [&self.pyramid, &self.queries].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn queries_path(&self) -> PathBuf {
        self.queries.clone().unwrap_or_else(|| self.artifact(artifacts::QUERIES))
    }

    pub fn world(&self) -> Result<SyntheticWorld> {
        let w = self.world.clone().ok_or_else(|| Error::Config("a [world] table is required".into()))?;
        SyntheticWorld::new(w)
    }

    /// The configured pyramid, or one over the world's map at the pairing levels.
    pub fn pyramid(&self) -> Result<TilePyramid> {
        match (&self.pyramid, &self.world) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                let pc: PyramidConfig = toml::from_str(&text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
                TilePyramid::from_config(&pc)
            }
            (None, Some(_)) => world_pyramid(&self.world()?, self.pairing.min_level, self.pairing.max_level),
            (None, None) => Err(Error::Config("either pyramid or [world] must be configured".into())),
        }
    }

    pub fn split_spec(&self, pyr: &TilePyramid) -> Result<AreaSplit> {
        let s = self.split.clone().unwrap_or_else(|| AreaSplit::west_half(pyr));
        s.validate(Some(pyr))?;
        Ok(s)
    }
}
