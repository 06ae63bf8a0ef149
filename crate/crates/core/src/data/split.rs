use std::collections::BTreeMap;

use super::UserSequence;

/// Training sequences with each evaluated user's last target interaction removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveOneOut {
    pub train: BTreeMap<usize, UserSequence>,
    /// user -> held-out item
    pub test: BTreeMap<usize, usize>,
    /// user -> timestamp of the held-out interaction
    pub test_time: BTreeMap<usize, i64>,
}

/// Hold out the chronologically last target-behavior record of every user
/// with at least two target interactions. Context events are never held out.
pub fn leave_one_out_split(
    sequences: &BTreeMap<usize, UserSequence>,
    target_behavior: usize,
) -> LeaveOneOut {
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut test_time = BTreeMap::new();
    for (&user, seq) in sequences {
        let targets: Vec<usize> = seq
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.behavior == target_behavior)
            .map(|(i, _)| i)
            .collect();
        let mut seq = seq.clone();
        if targets.len() >= 2 {
            let last = *targets.last().unwrap();
            let held = seq.records.remove(last);
            test.insert(user, held.item);
            test_time.insert(user, held.timestamp);
        }
        train.insert(user, seq);
    }
    LeaveOneOut {
        train,
        test,
        test_time,
    }
}
