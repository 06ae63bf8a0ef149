use std::collections::BTreeSet;

use rand::Rng as _;

use super::{SubSequence, UserSequence};
use crate::error::DataError;
use crate::rng::Rng;

/// One sub-sequence paired with the next target item and sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub user: usize,
    /// Ordinal of the sub-sequence within the user's sequence.
    pub ordinal: usize,
    /// Global sub-user node id.
    pub node: usize,
    pub positive: usize,
    /// Index of the positive's record in the user's training sequence.
    pub label: usize,
    pub negatives: Vec<usize>,
}

/// Draw `count` items uniformly with replacement from `catalog` minus
/// `interacted`.
pub fn sample_negatives(
    user: usize,
    count: usize,
    catalog: &[usize],
    interacted: &BTreeSet<usize>,
    rng: &mut Rng,
) -> Result<Vec<usize>, DataError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let open = catalog.iter().filter(|i| !interacted.contains(i)).count();
    if open == 0 {
        return Err(DataError::EmptyPool { user });
    }
    // Rejection is exact for the uniform distribution over the complement; fall
    // back to explicit enumeration when most of the catalog is excluded.
    if open * 4 >= catalog.len() {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let item = catalog[rng.gen_range(0..catalog.len())];
            if !interacted.contains(&item) {
                out.push(item);
            }
        }
        Ok(out)
    } else {
        let pool: Vec<usize> = catalog
            .iter()
            .copied()
            .filter(|i| !interacted.contains(i))
            .collect();
        Ok((0..count)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect())
    }
}

/// Everything `make_training_instances` needs about one user.
pub struct UserTrainingView<'a> {
    pub sequence: &'a UserSequence,
    pub subsequences: &'a [SubSequence],
    /// Every item the user ever engaged under the target behavior, held-out included.
    pub target_items: &'a BTreeSet<usize>,
    pub held_out: Option<usize>,
}

/// One instance per sub-sequence that is followed by a target event: the
/// positive is the first target item strictly after the sub-sequence's last
/// timestamp. Positives equal to the held-out item are dropped.
pub fn make_training_instances<'a>(
    users: impl IntoIterator<Item = UserTrainingView<'a>>,
    target_behavior: usize,
    negatives: usize,
    catalog: &[usize],
    rng: &mut Rng,
) -> Result<Vec<TrainingInstance>, DataError> {
    let mut out = Vec::new();
    for view in users {
        let records = &view.sequence.records;
        for sub in view.subsequences {
            let last = sub.last_timestamp();
            let start = records.partition_point(|r| r.timestamp <= last);
            let Some(offset) = records[start..]
                .iter()
                .position(|r| r.behavior == target_behavior)
            else {
                continue;
            };
            let next = &records[start + offset];
            if Some(next.item) == view.held_out {
                continue;
            }
            let negs = sample_negatives(
                view.sequence.user,
                negatives,
                catalog,
                view.target_items,
                rng,
            )?;
            out.push(TrainingInstance {
                user: view.sequence.user,
                ordinal: sub.ordinal,
                node: sub.node,
                positive: next.item,
                label: start + offset,
                negatives: negs,
            });
        }
    }
    Ok(out)
}
