//! Experiment configuration.
//!
//! The file is TOML. Every field has a default, so an empty file (or no file
//! at all) runs the reference pipeline. Unknown keys are rejected.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use ufo_core::bias::{SolverOptions, WeightsMode};
use ufo_core::data::GroundTruthModel;
use ufo_core::rng::substream;
use ufo_core::selfplay::UfoConfig;
use ufo_core::sft::{Optimizer, PretrainSpec, TrainConfig};
use ufo_core::Catalog;

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage draws from a named sub-stream of it.
    pub seed: u64,
    pub world: WorldConfig,
    pub pretrain: PretrainConfig,
    pub sft: SftConfig,
    pub bias: BiasConfig,
    pub ufo: UfoSection,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_items: usize,
    pub n_groups: usize,
    /// Embedding dimension.
    pub dim: usize,
    pub n_sequences: usize,
    pub seq_len: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Share of an archetype's mass on its own group.
    pub focus: f64,
    /// Standard deviation of the log item quality.
    pub quality_sigma: f64,
    /// Multiplicative per-group popularity inside every archetype.
    pub group_skew: Vec<f64>,
    /// Log-weights of the archetype prior (one archetype per group).
    pub archetype_log_prior: Vec<f64>,
    /// Size of the skew-free reference set used for bias estimation.
    pub calib_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub group_bias: Vec<f64>,
    pub item_noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasReference {
    /// Skew-free reference set drawn from the same archetypes.
    Calib,
    /// The validation split.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub reference: BiasReference,
    pub weights_mode: WeightsMode,
    pub tol: f64,
    pub max_iters: usize,
    pub q_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UfoSection {
    pub beta: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// One full-batch step per inner epoch; `batch_size` is then ignored.
    pub full_batch: bool,
    pub sample_fraction: f64,
    pub early_stop: bool,
    pub early_stop_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cut-offs for the top-K sweep.
    pub ks: Vec<usize>,
    /// K for the fairness snapshot recorded during UFO.
    pub fairness_k: usize,
    /// K for the accuracy snapshot recorded during UFO.
    pub accuracy_k: usize,
    /// Bound checked against `epsilon_star` in evaluation reports.
    pub epsilon_threshold: f64,
}

const PROFILE: [f64; 5] = [1.0, 0.5, 0.0, -0.5, -1.0];

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_items: 50,
            n_groups: 5,
            dim: 32,
            n_sequences: 80_000,
            seq_len: 10,
            split: [0.8, 0.1, 0.1],
            focus: 0.95,
            quality_sigma: 0.3,
            group_skew: vec![1.0; 5],
            archetype_log_prior: PROFILE.iter().map(|p| 0.8 * p).collect(),
            calib_sequences: 10_000,
        }
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { group_bias: PROFILE.iter().map(|p| 0.3 * p).collect(), item_noise_sigma: 0.05 }
    }
}

impl Default for SftConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: 1,
            batch_size: t.batch_size,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            optimizer: t.optimizer,
        }
    }
}

impl Default for BiasConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            reference: BiasReference::Calib,
            weights_mode: WeightsMode::default(),
            tol: o.tol,
            max_iters: o.max_iters,
            q_floor: o.q_floor,
        }
    }
}

impl Default for UfoSection {
    fn default() -> Self {
        let u = UfoConfig::default();
        Self {
            beta: u.beta,
            alpha: u.alpha,
            iterations: u.iterations,
            inner_epochs: u.inner_epochs,
            learning_rate: u.learning_rate,
            batch_size: u.batch_size.unwrap_or(64),
            full_batch: u.batch_size.is_none(),
            sample_fraction: u.sample_fraction,
            early_stop: u.early_stop,
            early_stop_threshold: u.early_stop_threshold,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 3, 5, 10, 20], fairness_k: 1, accuracy_k: 5, epsilon_threshold: 0.1 }
    }
}

/// Seed of the named stage, derived from the master seed.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    substream(master, stage).next_u64()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn checksum(&self) -> String {
        io::sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        let g = w.n_groups;
        let err = |m: String| Err(CliError::Config(m));
        if w.group_skew.len() != g {
            return err(format!("world.group_skew needs {g} entries"));
        }
        if w.archetype_log_prior.len() != g || w.archetype_log_prior.iter().any(|x| !x.is_finite()) {
            return err(format!("world.archetype_log_prior needs {g} finite entries"));
        }
        if self.pretrain.group_bias.len() != g {
            return err(format!("pretrain.group_bias needs {g} entries"));
        }
        if w.seq_len == 0 || w.n_sequences == 0 || w.calib_sequences == 0 {
            return err("world sizes must be positive".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return err("eval.ks must be nonempty and positive".into());
        }
        if self.eval.fairness_k == 0 || self.eval.accuracy_k == 0 {
            return err("eval.fairness_k and eval.accuracy_k must be positive".into());
        }
        if self.eval.ks.iter().chain([&self.eval.fairness_k, &self.eval.accuracy_k]).any(|&k| k > w.n_items) {
            return err(format!("every K must be at most n_items = {}", w.n_items));
        }
        if !(self.bias.tol > 0.0) || !(self.bias.q_floor > 0.0) {
            return err("bias.tol and bias.q_floor must be positive".into());
        }
        self.train_config().validate()?;
        self.ufo_config().validate()?;
        Ok(())
    }

    pub fn catalog(&self) -> Result<Catalog> {
        let w = &self.world;
        Ok(Catalog::generate(w.n_items, w.n_groups, w.dim, derive_seed(self.seed, "catalog"))?)
    }

    pub fn truth(&self, catalog: &Catalog) -> Result<GroundTruthModel> {
        let w = &self.world;
        let prior = w.archetype_log_prior.iter().map(|x| x.exp()).collect();
        Ok(GroundTruthModel::archetypes(
            catalog,
            w.focus,
            w.quality_sigma,
            w.group_skew.clone(),
            derive_seed(self.seed, "truth"),
        )?
        .with_archetype_prior(prior)?)
    }

    /// Same archetypes and item qualities as [`Self::truth`], without group
    /// skew and with a uniform prior.
    pub fn calib_truth(&self, catalog: &Catalog) -> Result<GroundTruthModel> {
        let w = &self.world;
        Ok(GroundTruthModel::archetypes(
            catalog,
            w.focus,
            w.quality_sigma,
            vec![1.0; w.n_groups],
            derive_seed(self.seed, "truth"),
        )?)
    }

    pub fn pretrain_spec(&self) -> PretrainSpec {
        PretrainSpec {
            group_bias: self.pretrain.group_bias.clone(),
            item_noise_sigma: self.pretrain.item_noise_sigma,
            seed: derive_seed(self.seed, "pretrain"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.sft;
        TrainConfig {
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            lambda1: s.lambda1,
            lambda2: s.lambda2,
            seed: derive_seed(self.seed, "sft"),
            optimizer: s.optimizer,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { tol: self.bias.tol, max_iters: self.bias.max_iters, q_floor: self.bias.q_floor }
    }

    pub fn ufo_config(&self) -> UfoConfig {
        let u = &self.ufo;
        UfoConfig {
            beta: u.beta,
            alpha: u.alpha,
            iterations: u.iterations,
            inner_epochs: u.inner_epochs,
            learning_rate: u.learning_rate,
            batch_size: (!u.full_batch).then_some(u.batch_size),
            sample_fraction: u.sample_fraction,
            seed: derive_seed(self.seed, "ufo"),
            early_stop: u.early_stop,
            early_stop_threshold: u.early_stop_threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig { seed: 99, ..Default::default() };
        c.ufo.full_batch = true;
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.checksum(), c.checksum());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[ufo]\nbetta = 0.2\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn defaults_match_the_reference_hyper_parameters() {
        let u = ExperimentConfig::default().ufo_config();
        assert_eq!((u.beta, u.alpha, u.iterations, u.sample_fraction), (0.1, 0.4, 4, 0.5));
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_master() {
        let c = ExperimentConfig::default();
        assert_ne!(c.train_config().seed, c.ufo_config().seed);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.train_config().seed, d.train_config().seed);
        assert_eq!(c.train_config().seed, ExperimentConfig::default().train_config().seed);
    }

    #[test]
    fn mismatched_lengths_fail_validation() {
        let mut c = ExperimentConfig::default();
        c.pretrain.group_bias.pop();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = ExperimentConfig::default();
        c.eval.ks = vec![1, 60];
        assert!(c.validate().is_err());
    }
}
