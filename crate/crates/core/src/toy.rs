//! A tiny fixed dataset for gradient checks and smoke tests: three users with
//! six training events each (two windows of three) plus one held-out purchase,
//! over five items and two behaviors.

use crate::ablation::AblationConfig;
use crate::data::{BehaviorVocab, Dataset, InteractionRecord};
use crate::error::Result;
use crate::model::ModelConfig;
use crate::train::{TrainConfig, Trainer};

const HOUR: i64 = 3600;

/// (user, item, behavior, hour); behavior 0 = view, 1 = buy.
const EVENTS: [(usize, usize, usize, i64); 21] = [
    (0, 0, 0, 0),
    (0, 1, 0, 1),
    (0, 1, 1, 2),
    (0, 2, 0, 5),
    (0, 3, 0, 7),
    (0, 2, 1, 8),
    (0, 3, 1, 12),
    (1, 1, 0, 1),
    (1, 4, 0, 3),
    (1, 4, 1, 4),
    (1, 0, 0, 6),
    (1, 2, 0, 9),
    (1, 0, 1, 10),
    (1, 2, 1, 15),
    (2, 3, 0, 2),
    (2, 3, 1, 3),
    (2, 4, 0, 4),
    (2, 1, 0, 11),
    (2, 0, 0, 13),
    (2, 1, 1, 14),
    (2, 4, 1, 20),
];

pub fn toy_records() -> Vec<InteractionRecord> {
    EVENTS
        .iter()
        .map(|&(u, i, b, h)| InteractionRecord::new(u, i, b, h * HOUR))
        .collect()
}

pub fn toy_vocab() -> BehaviorVocab {
    BehaviorVocab::new(["view", "buy"]).expect("toy vocabulary")
}

/// The toy dataset and a matching configuration with `dim` hidden units,
/// two layers, two heads and two channels over windows of three events.
pub fn toy_dataset(dim: usize) -> (Dataset, ModelConfig) {
    let ds = Dataset::from_records(&toy_records(), toy_vocab(), 1, false).expect("toy dataset");
    let cfg = ModelConfig {
        dim,
        layers: 2,
        attention_heads: 2,
        channels: 2,
        window: 3,
        ..ModelConfig::default()
    };
    (ds, cfg)
}

/// Finite-difference check of the full training objective on the toy
/// dataset. Returns the worst relative error per parameter.
pub fn toy_gradient_check(
    dim: usize,
    ablation: AblationConfig,
    seed: u64,
    eps: f64,
) -> Result<Vec<(String, f64)>> {
    let (ds, mut cfg) = toy_dataset(dim);
    cfg.ablation = ablation;
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(&ds, cfg, tc)?;
    let params = trainer.init_parameters()?;
    trainer.gradient_errors(&params, eps)
}
