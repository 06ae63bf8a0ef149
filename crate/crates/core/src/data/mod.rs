//! Interaction logs, per-user sequences, leave-one-out splits and sampling.

mod dataset;
mod records;
mod sampling;
mod sequence;
mod split;
mod synth;

pub use dataset::{Dataset, IdMap};
pub use records::{parse_interactions, write_interactions, BehaviorVocab, InteractionRecord};
pub use sampling::{make_training_instances, sample_negatives, TrainingInstance, UserTrainingView};
pub use sequence::{build_sequences, split_subsequences, SubSequence, UserSequence};
pub use split::{leave_one_out_split, LeaveOneOut};
pub use synth::{generate_synthetic, SyntheticConfig};
