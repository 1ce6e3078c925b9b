//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::explain::{ContributionVariant, ExplainOptions};
use crate::graph::{load_relations, HinGraph, LoadOptions, RelationSource, DEFAULT_INTERACTION_RELATION};
use crate::split::SplitRatios;
use crate::synth::{generate, SynthConfig, SynthDataset};
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Tab-separated `user item` pairs.
    pub interactions: Option<PathBuf>,
    #[serde(default)]
    pub relations: Vec<RelationSource>,
    /// Generate the data in memory instead of reading files.
    pub synthetic: Option<SynthConfig>,
    /// Node types besides `user` and `item`.
    #[serde(default)]
    pub node_types: Vec<String>,
    #[serde(default = "default_interaction_relation")]
    pub interaction_relation: String,
    #[serde(default)]
    pub min_user_interactions: usize,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_interaction_relation() -> String {
    DEFAULT_INTERACTION_RELATION.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub beam_width: usize,
    pub top_paths: usize,
    /// Recommendations explained per user.
    pub top_n: usize,
    pub variant: ContributionVariant,
    /// User ids to explain; empty means the first `max_users` users.
    pub users: Vec<String>,
    pub max_users: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let d = ExplainOptions::default();
        ExplainConfig {
            beam_width: d.beam_width,
            top_paths: d.top_paths,
            top_n: 5,
            variant: d.variant,
            users: Vec::new(),
            max_users: 5,
        }
    }
}

impl ExplainConfig {
    pub fn options(&self) -> ExplainOptions {
        ExplainOptions {
            beam_width: self.beam_width,
            top_paths: self.top_paths,
            variant: self.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Fractions of the standard train fold kept per run.
    pub ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ratios: vec![0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub meta_paths: Vec<String>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    /// Seeds for `ablate` and `sweep`; `train` uses `train.seed`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_k_list() -> Vec<usize> {
    vec![5, 10, 20]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.dataset.interactions.as_mut() {
            fix(p);
        }
        for r in &mut self.dataset.relations {
            fix(&mut r.path);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.interactions, &d.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("dataset sets both `interactions` and `synthetic`".into()));
            }
            (None, None) => return Err(Error::Config("dataset needs `interactions` or `synthetic`".into())),
            (None, Some(_)) if !d.relations.is_empty() => {
                return Err(Error::Config("`relations` cannot be combined with `synthetic`".into()));
            }
            _ => {}
        }
        d.split.validate()?;
        if self.meta_paths.is_empty() {
            return Err(Error::Config("at least one meta-path is required".into()));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k_list must hold positive cutoffs".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.sweep.ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config("sweep ratios must lie in (0, 1]".into()));
        }
        self.train.validate()
    }

    pub fn load_options(&self) -> LoadOptions {
        let d = &self.dataset;
        let mut node_types = d.node_types.clone();
        if d.synthetic.is_some() {
            node_types = SynthDataset::load_options().node_types;
        }
        LoadOptions {
            node_types,
            interaction_relation: d.interaction_relation.clone(),
            min_user_interactions: d.min_user_interactions,
        }
    }

    /// Loads or generates the full graph, including every interaction.
    pub fn load_graph(&self) -> Result<HinGraph> {
        let d = &self.dataset;
        match (&d.interactions, &d.synthetic) {
            (Some(path), _) => load_relations(path, &d.relations, &self.load_options()),
            (None, Some(synth)) => {
                let ds = generate(synth)?;
                HinGraph::from_pairs(&ds.interactions, &ds.relations, &self.load_options())
            }
            (None, None) => Err(Error::Config("dataset needs `interactions` or `synthetic`".into())),
        }
    }
}
