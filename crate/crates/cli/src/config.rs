//! Global configuration file.
//!
//! The file is TOML. Every section is optional and falls back to the
//! library defaults; unknown top-level keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use unitrec::embedding::{EmbedderConfig, DEFAULT_DIMENSION};
use unitrec::eval::EvalConfig;
use unitrec::index::IndexConfig;
use unitrec::par::Parallelism;
use unitrec::retrieval::RetrievalConfig;
use unitrec::simulator::SimConfig;
use unitrec::study::StudyConfig;
use unitrec::unit_store::UnitConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    /// Applied to every seeded component when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Batch strategy for command-level work such as replaying click logs.
    pub parallelism: Parallelism,
    pub embedder: EmbedderConfig,
    /// Embedder of the `ira-alt-embedder` evaluation system.
    pub alt_embedder: EmbedderConfig,
    pub unit: UnitConfig,
    pub retrieval: RetrievalConfig,
    pub index: IndexConfig,
    pub eval: EvalConfig,
    pub study: StudySection,
    pub paths: Paths,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            seed: None,
            parallelism: Parallelism::Rayon,
            embedder: EmbedderConfig::hashed(DEFAULT_DIMENSION, 0),
            alt_embedder: EmbedderConfig::hashed(DEFAULT_DIMENSION, 1),
            unit: UnitConfig::default(),
            retrieval: RetrievalConfig::default(),
            index: IndexConfig::default(),
            eval: EvalConfig::default(),
            study: StudySection::default(),
            paths: Paths::default(),
        }
    }
}

/// Study settings; unit and eval parameters come from the top-level sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub sim: SimConfig,
    /// Defaults to a vocabulary embedder over the simulator's terms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
    pub caps: Vec<usize>,
    pub include_free: bool,
    pub pruning_keep: usize,
    pub min_interests: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        let d = StudyConfig::default();
        StudySection {
            sim: d.sim,
            embedder: d.embedder,
            caps: d.caps,
            include_free: d.include_free,
            pruning_keep: d.pruning_keep,
            min_interests: d.min_interests,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clicks: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    /// Pushes `seed` into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.eval.rng_seed = seed;
        self.study.sim.rng_seed = seed;
        self.index.ivf.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate().context("embedder")?;
        self.alt_embedder.validate().context("alt_embedder")?;
        if let Some(e) = &self.study.embedder {
            e.validate().context("study.embedder")?;
        }
        self.unit.validate().context("unit")?;
        self.retrieval.validate().context("retrieval")?;
        self.eval.validate().context("eval")?;
        self.study.sim.validate().context("study.sim")?;
        Ok(())
    }

    pub fn study_config(&self) -> StudyConfig {
        let s = &self.study;
        StudyConfig {
            sim: s.sim.clone(),
            embedder: s.embedder.clone(),
            unit: self.unit.clone(),
            eval: self.eval.clone(),
            caps: s.caps.clone(),
            include_free: s.include_free,
            pruning_keep: s.pruning_keep,
            min_interests: s.min_interests,
            parallelism: self.parallelism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = GlobalConfig::default();
        let text = cfg.to_toml();
        assert_eq!(GlobalConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg =
            GlobalConfig::parse("[unit]\ntau = 0.5\n[paths]\ncorpus = \"c.jsonl\"\n").unwrap();
        assert_eq!(cfg.unit.tau, 0.5);
        assert_eq!(cfg.unit.keep_per_group, 10);
        assert_eq!(cfg.paths.corpus.as_deref(), Some(Path::new("c.jsonl")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(GlobalConfig::parse("bogus = 1\n").is_err());
        assert!(GlobalConfig::parse("[paths]\nnope = \"x\"\n").is_err());
    }

    #[test]
    fn seed_reaches_components() {
        let mut cfg = GlobalConfig::default();
        cfg.apply_seed(9);
        assert_eq!(cfg.eval.rng_seed, 9);
        assert_eq!(cfg.study.sim.rng_seed, 9);
        assert_eq!(cfg.index.ivf.seed, 9);
        let back = GlobalConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
