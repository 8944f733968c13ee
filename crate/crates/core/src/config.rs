//! Flat, versioned run configuration.
//!
//! One TOML table of scalar keys covers data generation, the objective and
//! training. `version` is required, unknown keys are rejected, and every
//! value check names the offending key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::objective::ObjectiveConfig;
use crate::sampling::Relaxation;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Root seed for data generation, initialization, batching and noise.
    #[serde(default)]
    pub seed: u64,

    #[serde(default = "d::vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "d::num_docs")]
    pub num_docs: usize,
    #[serde(default = "d::num_queries")]
    pub num_queries: usize,
    #[serde(default = "d::dev_queries")]
    pub dev_queries: usize,
    #[serde(default = "d::answer_len")]
    pub answer_len: usize,
    #[serde(default = "d::entity_len")]
    pub entity_len: usize,
    #[serde(default = "d::k_gold")]
    pub k_gold: usize,
    #[serde(default = "d::utility_kind")]
    pub utility_kind: UtilityKind,
    #[serde(default = "d::reading_examples")]
    pub reading_examples: usize,

    #[serde(default = "d::steps")]
    pub steps: u64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d::eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "d::checkpoint_interval")]
    pub checkpoint_interval: u64,
    #[serde(default = "d::dim")]
    pub dim: usize,
    #[serde(default = "d::embedding_scale")]
    pub embedding_scale: f64,
    #[serde(default = "d::eval_beam")]
    pub eval_beam: usize,
    #[serde(default = "d::train_retriever")]
    pub train_retriever: bool,
    #[serde(default = "d::warmup_steps")]
    pub warmup_steps: u64,
    #[serde(default = "d::rehearsal_weight")]
    pub rehearsal_weight: f64,

    #[serde(default = "d::k")]
    pub k: usize,
    #[serde(default = "d::num_list_samples")]
    pub num_list_samples: usize,
    #[serde(default = "d::pool_refresh_interval")]
    pub pool_refresh_interval: u64,
    #[serde(default = "d::pool_beam")]
    pub pool_beam: usize,
    #[serde(default = "d::pool_size")]
    pub pool_size: usize,
    #[serde(default = "d::beta")]
    pub beta: f64,
    #[serde(default = "d::temperature")]
    pub temperature: f64,
    #[serde(default = "d::max_len")]
    pub max_len: usize,
    #[serde(default = "d::relaxation")]
    pub relaxation: Relaxation,

    /// Seeds per point of the sample-count sweep.
    #[serde(default = "d::sweep_seeds")]
    pub sweep_seeds: usize,
}

/// Defaults, taken from the module defaults so there is one source.
mod d {
    use super::*;

    fn s() -> SynthConfig {
        SynthConfig::default()
    }
    fn t() -> TrainConfig {
        TrainConfig::default()
    }
    fn o() -> ObjectiveConfig {
        ObjectiveConfig::default()
    }
    pub fn vocab_size() -> usize {
        s().vocab_size
    }
    pub fn num_docs() -> usize {
        s().num_docs
    }
    pub fn num_queries() -> usize {
        s().num_queries
    }
    pub fn dev_queries() -> usize {
        s().dev_queries
    }
    pub fn answer_len() -> usize {
        s().answer_len
    }
    pub fn entity_len() -> usize {
        s().entity_len
    }
    pub fn k_gold() -> usize {
        s().k_gold
    }
    pub fn utility_kind() -> UtilityKind {
        s().utility_kind
    }
    pub fn reading_examples() -> usize {
        s().reading_examples
    }
    pub fn steps() -> u64 {
        t().steps
    }
    pub fn batch_size() -> usize {
        t().batch_size
    }
    pub fn learning_rate() -> f64 {
        t().learning_rate
    }
    pub fn eval_interval() -> u64 {
        t().eval_interval
    }
    pub fn checkpoint_interval() -> u64 {
        t().checkpoint_interval
    }
    pub fn dim() -> usize {
        t().dim
    }
    pub fn embedding_scale() -> f64 {
        t().embedding_scale
    }
    pub fn eval_beam() -> usize {
        t().eval_beam
    }
    pub fn train_retriever() -> bool {
        t().train_retriever
    }
    pub fn warmup_steps() -> u64 {
        t().warmup_steps
    }
    pub fn rehearsal_weight() -> f64 {
        t().rehearsal_weight
    }
    pub fn k() -> usize {
        o().k
    }
    pub fn num_list_samples() -> usize {
        o().num_list_samples
    }
    pub fn pool_refresh_interval() -> u64 {
        o().pool_refresh_interval
    }
    pub fn pool_beam() -> usize {
        o().pool_beam
    }
    pub fn pool_size() -> usize {
        o().pool_size
    }
    pub fn beta() -> f64 {
        o().beta
    }
    pub fn temperature() -> f64 {
        o().temperature
    }
    pub fn max_len() -> usize {
        o().max_len
    }
    pub fn relaxation() -> Relaxation {
        o().relaxation
    }
    pub fn sweep_seeds() -> usize {
        5
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("version = 1").expect("defaults parse")
    }
}

impl RunConfig {
    /// Parses and validates TOML text. `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat scalar table serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.sweep_seeds < 2 {
            return Err(Error::config("sweep_seeds", "needs at least 2 seeds for a standard error"));
        }
        self.synth().validate()?;
        self.train().validate(self.num_docs)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            vocab_size: self.vocab_size,
            num_docs: self.num_docs,
            num_queries: self.num_queries,
            dev_queries: self.dev_queries,
            answer_len: self.answer_len,
            entity_len: self.entity_len,
            k_gold: self.k_gold,
            utility_kind: self.utility_kind,
            reading_examples: self.reading_examples,
            seed: self.seed,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            num_list_samples: self.num_list_samples,
            pool_refresh_interval: self.pool_refresh_interval,
            pool_beam: self.pool_beam,
            pool_size: self.pool_size,
            k: self.k,
            beta: self.beta,
            temperature: self.temperature,
            max_len: self.max_len,
            relaxation: self.relaxation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            eval_interval: self.eval_interval,
            checkpoint_interval: self.checkpoint_interval,
            seed: self.seed,
            dim: self.dim,
            embedding_scale: self.embedding_scale,
            eval_beam: self.eval_beam,
            train_retriever: self.train_retriever,
            warmup_steps: self.warmup_steps,
            rehearsal_weight: self.rehearsal_weight,
            objective: self.objective(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.synth(), SynthConfig::default());
        assert_eq!(cfg.train(), TrainConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            seed: 9,
            learning_rate: 0.125,
            relaxation: Relaxation::Soft,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), "mem").unwrap(), cfg);
    }

    #[test]
    fn version_is_required_and_checked() {
        let err = RunConfig::from_toml("seed = 1\n", "mem").unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        let err = RunConfig::from_toml("version = 2\n", "mem").unwrap_err().to_string();
        assert!(err.contains("`version`"), "{err}");
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = RunConfig::from_toml("version = 1\nlearning_rat = 0.1\n", "cfg.toml").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("learning_rat"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_values_name_the_field() {
        for (text, field) in [
            ("version = 1\nbatch_size = 0\n", "batch_size"),
            ("version = 1\nk = 100\n", "`k`"),
            ("version = 1\nbeta = -1.0\n", "beta"),
            ("version = 1\nvocab_size = 10\n", "vocab_size"),
            ("version = 1\nsweep_seeds = 1\n", "sweep_seeds"),
        ] {
            let err = RunConfig::from_toml(text, "mem").unwrap_err().to_string();
            assert!(err.contains(field), "{text:?}: {err}");
        }
    }
}
