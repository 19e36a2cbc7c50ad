//! Training configuration: every hyperparameter and gap-filling choice in
//! one TOML-serializable struct. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em::NegativeWeighting;
use crate::error::{Error, Result};
use crate::forest::ForestInit;
use crate::gin::EMBED_INIT_STD;
use crate::graph::MaskMode;
use crate::local::LocalConfig;
use crate::optim::{AdamConfig, StepDecay};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Std of the normal init of embedding tables; affine maps use uniform(+-1/sqrt(d)).
    pub table_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            table_init_std: EMBED_INIT_STD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub rate: f64,
    pub mode: MaskMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            rate: 0.3,
            mode: MaskMode::Node,
        }
    }
}

/// Which embedding the E-step scores against the prototypes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EStepInput {
    /// The unmasked graph of the correlated pair.
    #[default]
    Clean,
    /// The masked counterpart.
    Masked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    /// Clusters per prototype layer, top layer first; its length is the forest depth.
    pub k_per_layer: Vec<usize>,
    pub temperature: f64,
    pub negatives: NegativeWeighting,
    pub estep_input: EStepInput,
    pub kmeans_iters: usize,
    pub kmeans_restarts: usize,
    pub kmeans_point_budget: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            k_per_layer: vec![4, 8, 16],
            temperature: 1.0,
            negatives: NegativeWeighting::Mean,
            estep_input: EStepInput::Clean,
            kmeans_iters: 100,
            kmeans_restarts: 10,
            kmeans_point_budget: 8192,
        }
    }
}

impl GlobalConfig {
    pub fn depth(&self) -> usize {
        self.k_per_layer.len()
    }

    pub fn forest_init(&self) -> ForestInit {
        ForestInit {
            iters: self.kmeans_iters,
            restarts: self.kmeans_restarts,
            point_budget: self.kmeans_point_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs_local: usize,
    pub epochs_joint: usize,
    pub lr: f64,
    pub use_graph: bool,
    pub use_sub: bool,
    pub use_global: bool,
    /// Graphs per chunk when embedding the whole dataset.
    pub embed_chunk: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs_local: 1,
            epochs_joint: 10,
            lr: 1e-3,
            use_graph: true,
            use_sub: true,
            use_global: true,
            embed_chunk: 64,
        }
    }
}

impl PretrainConfig {
    pub fn uses_local(&self) -> bool {
        self.use_graph || self.use_sub
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Encoder and head train together.
    #[default]
    Full,
    /// Frozen encoder, linear head only.
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub scheduler: bool,
    pub decay: StepDecay,
    pub mode: FinetuneMode,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            lr: 1e-3,
            scheduler: true,
            decay: StepDecay::default(),
            mode: FinetuneMode::Full,
        }
    }
}

impl FinetuneConfig {
    pub fn schedule(&self) -> Option<StepDecay> {
        self.scheduler.then_some(self.decay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub strict_numerics: bool,
    pub model: ModelConfig,
    pub mask: MaskConfig,
    pub local: LocalConfig,
    pub global: GlobalConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small defaults that train in seconds on one CPU.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            strict_numerics: false,
            model: ModelConfig::default(),
            mask: MaskConfig::default(),
            local: LocalConfig::default(),
            global: GlobalConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            adam: AdamConfig::default(),
        }
    }

    /// The published full-scale setting.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.model.layers = 5;
        c.model.hidden = 300;
        c.pretrain.batch_size = 512;
        c.global.k_per_layer = vec![50, 50, 50];
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected desk or paper)"
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Hex SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.layers == 0 || self.model.hidden == 0 {
            return bad("model.layers and model.hidden must be positive".into());
        }
        if !(self.model.table_init_std > 0.0) {
            return bad("model.table_init_std must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask.rate) {
            return bad(format!(
                "mask.rate must lie in [0, 1], got {}",
                self.mask.rate
            ));
        }
        if self.local.neg_per_positive == 0 || self.local.nodes_per_graph == 0 {
            return bad("local.neg_per_positive and local.nodes_per_graph must be positive".into());
        }
        if self.global.k_per_layer.is_empty() || self.global.k_per_layer.contains(&0) {
            return bad("global.k_per_layer must be a non-empty list of positive counts".into());
        }
        if !(self.global.temperature > 0.0) {
            return bad("global.temperature must be positive".into());
        }
        if self.global.kmeans_restarts == 0 {
            return bad("global.kmeans_restarts must be positive".into());
        }
        let p = &self.pretrain;
        if p.batch_size < 2 {
            return bad("pretrain.batch_size must be at least 2".into());
        }
        if !(p.lr > 0.0) || p.embed_chunk == 0 {
            return bad("pretrain.lr and pretrain.embed_chunk must be positive".into());
        }
        if !(p.use_graph || p.use_sub || p.use_global) {
            return bad(
                "at least one of pretrain.use_graph, use_sub, use_global must be on".into(),
            );
        }
        let f = &self.finetune;
        if f.batch_size == 0 || !(f.lr > 0.0) || f.decay.every == 0 || !(f.decay.factor > 0.0) {
            return bad(
                "finetune.batch_size, lr, decay.every and decay.factor must be positive".into(),
            );
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for c in [TrainConfig::desk(), TrainConfig::paper()] {
            let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = TrainConfig::from_toml("seed = 7\n[global]\nk_per_layer = [2, 8]\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.global.depth(), 2);
        assert_eq!(c.pretrain.batch_size, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(TrainConfig::from_toml("sede = 7\n").is_err());
        assert!(TrainConfig::from_toml("[mask]\nrate = 1.5\n").is_err());
        assert!(TrainConfig::from_toml("[pretrain]\nbatch_size = 1\n").is_err());
    }

    #[test]
    fn paper_preset_values() {
        let c = TrainConfig::paper();
        assert_eq!((c.model.layers, c.model.hidden), (5, 300));
        assert_eq!(c.pretrain.batch_size, 512);
        assert_eq!(c.global.k_per_layer, vec![50, 50, 50]);
        assert_eq!((c.pretrain.epochs_local, c.pretrain.epochs_joint), (1, 10));
        assert_eq!(c.pretrain.lr, 1e-3);
        assert_eq!(c.mask.rate, 0.3);
        assert_eq!((c.finetune.batch_size, c.finetune.epochs), (32, 100));
    }

    #[test]
    fn hash_changes_with_content() {
        let mut c = TrainConfig::desk();
        let h = c.hash();
        c.seed = 1;
        assert_ne!(h, c.hash());
        assert_eq!(h.len(), 64);
    }
}
