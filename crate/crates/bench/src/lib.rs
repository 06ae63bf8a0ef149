//! Fixtures shared by the benchmarks.

use tgt::data::generate_synthetic;
use tgt::{Dataset, ModelConfig, SyntheticConfig};

/// A synthetic dataset of `users` users over 500 items, split leave-one-out.
pub fn synthetic_dataset(users: usize, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        users,
        seed,
        ..SyntheticConfig::default()
    };
    let records = generate_synthetic(&cfg).expect("valid synthetic config");
    let vocab = tgt::data::BehaviorVocab::new(cfg.labels()).expect("distinct labels");
    Dataset::from_records(&records, vocab, cfg.target, false).expect("dataset")
}

pub fn default_model() -> ModelConfig {
    ModelConfig::default()
}
