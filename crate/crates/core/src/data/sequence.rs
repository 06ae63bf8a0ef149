use std::collections::BTreeMap;

use super::InteractionRecord;

/// One user's events in chronological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub records: Vec<InteractionRecord>,
}

/// A contiguous chronological window of a user's sequence, with the id of the
/// intermediate sub-user node that represents it in the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubSequence {
    pub owner: usize,
    pub ordinal: usize,
    pub node: usize,
    pub records: Vec<InteractionRecord>,
}

impl SubSequence {
    pub fn last_timestamp(&self) -> i64 {
        self.records
            .last()
            .expect("non-empty sub-sequence")
            .timestamp
    }
}

/// Group records per user, stably sorted by timestamp (ties keep input order).
pub fn build_sequences(records: &[InteractionRecord]) -> BTreeMap<usize, UserSequence> {
    let mut map: BTreeMap<usize, UserSequence> = BTreeMap::new();
    for r in records {
        map.entry(r.user)
            .or_insert_with(|| UserSequence {
                user: r.user,
                records: Vec::new(),
            })
            .records
            .push(*r);
    }
    for seq in map.values_mut() {
        seq.records.sort_by_key(|r| r.timestamp);
    }
    map
}

/// Cut a sequence into consecutive windows of `window` records; the final
/// shorter window is kept. Node ids are taken from `next_node` and advanced.
pub fn split_subsequences(
    seq: &UserSequence,
    window: usize,
    next_node: &mut usize,
) -> Vec<SubSequence> {
    assert!(window >= 1, "window must be at least 1");
    seq.records
        .chunks(window)
        .enumerate()
        .map(|(ordinal, chunk)| {
            let node = *next_node;
            *next_node += 1;
            SubSequence {
                owner: seq.user,
                ordinal,
                node,
                records: chunk.to_vec(),
            }
        })
        .collect()
}
