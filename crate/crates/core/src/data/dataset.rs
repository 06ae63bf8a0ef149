use std::collections::{BTreeMap, BTreeSet};

use super::{
    build_sequences, leave_one_out_split, make_training_instances, split_subsequences,
    BehaviorVocab, InteractionRecord, SubSequence, TrainingInstance, UserSequence,
    UserTrainingView,
};
use crate::error::{ConfigError, DataError};
use crate::rng::Rng;

/// Raw id <-> dense index, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<usize>,
    index: BTreeMap<usize, usize>,
}

impl IdMap {
    pub fn intern(&mut self, raw: usize) -> usize {
        *self.index.entry(raw).or_insert_with(|| {
            self.raw.push(raw);
            self.raw.len() - 1
        })
    }

    pub fn dense(&self, raw: usize) -> Option<usize> {
        self.index.get(&raw).copied()
    }

    pub fn raw(&self, dense: usize) -> usize {
        self.raw[dense]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Indexed interaction data with its leave-one-out split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: BehaviorVocab,
    pub target: usize,
    pub users: IdMap,
    pub items: IdMap,
    /// Training sequence per dense user (possibly empty).
    pub train: Vec<UserSequence>,
    /// dense user -> held-out dense item
    pub test: BTreeMap<usize, usize>,
    /// Every target-behavior item per user, held-out included.
    pub target_items: Vec<BTreeSet<usize>>,
}

impl Dataset {
    /// Remap ids densely, sort, and split. With `target_only`, context
    /// behaviors are stripped from the training input after the split so
    /// that the held-out items are unchanged.
    pub fn from_records(
        records: &[InteractionRecord],
        vocab: BehaviorVocab,
        target: usize,
        target_only: bool,
    ) -> Result<Self, ConfigError> {
        if target >= vocab.len() {
            return Err(ConfigError::Invalid(format!(
                "target behavior {target} outside {} behaviors",
                vocab.len()
            )));
        }
        if let Some(r) = records.iter().find(|r| r.behavior >= vocab.len()) {
            return Err(ConfigError::Invalid(format!(
                "record behavior {} outside vocabulary",
                r.behavior
            )));
        }
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let dense: Vec<InteractionRecord> = records
            .iter()
            .map(|r| InteractionRecord {
                user: users.intern(r.user),
                item: items.intern(r.item),
                ..*r
            })
            .collect();
        let mut target_items = vec![BTreeSet::new(); users.len()];
        for r in dense.iter().filter(|r| r.behavior == target) {
            target_items[r.user].insert(r.item);
        }
        let split = leave_one_out_split(&build_sequences(&dense), target);
        let train = (0..users.len())
            .map(|u| {
                let mut seq = split.train[&u].clone();
                if target_only {
                    seq.records.retain(|r| r.behavior == target);
                }
                seq
            })
            .collect();
        Ok(Self {
            vocab,
            target,
            users,
            items,
            train,
            test: split.test,
            target_items,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_behaviors(&self) -> usize {
        self.vocab.len()
    }

    pub fn catalog(&self) -> Vec<usize> {
        (0..self.n_items()).collect()
    }

    pub fn min_train_timestamp(&self) -> Option<i64> {
        self.train
            .iter()
            .flat_map(|s| s.records.first())
            .map(|r| r.timestamp)
            .min()
    }

    pub fn train_records(&self) -> usize {
        self.train.iter().map(|s| s.records.len()).sum()
    }

    /// Sub-sequences of every user's training sequence with global node ids
    /// assigned in user order.
    pub fn subsequences(&self, window: usize) -> Vec<Vec<SubSequence>> {
        let mut next = 0;
        self.train
            .iter()
            .map(|seq| split_subsequences(seq, window, &mut next))
            .collect()
    }

    pub fn training_instances(
        &self,
        subsequences: &[Vec<SubSequence>],
        negatives: usize,
        rng: &mut Rng,
    ) -> Result<Vec<TrainingInstance>, DataError> {
        let catalog = self.catalog();
        let views = self
            .train
            .iter()
            .zip(subsequences)
            .map(|(seq, subs)| UserTrainingView {
                sequence: seq,
                subsequences: subs,
                target_items: &self.target_items[seq.user],
                held_out: self.test.get(&seq.user).copied(),
            });
        make_training_instances(views, self.target, negatives, &catalog, rng)
    }

    /// Dense index of a raw user id.
    pub fn user_index(&self, raw: usize) -> Result<usize, DataError> {
        self.users
            .dense(raw)
            .ok_or_else(|| DataError::UnknownUser(raw.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remaps_and_splits() {
        let vocab = BehaviorVocab::new(["view", "buy"]).unwrap();
        let recs = vec![
            InteractionRecord::new(42, 900, 0, 1),
            InteractionRecord::new(42, 901, 1, 2),
            InteractionRecord::new(7, 900, 1, 3),
            InteractionRecord::new(42, 902, 1, 4),
        ];
        let ds = Dataset::from_records(&recs, vocab.clone(), 1, false).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.users.raw(0), 42);
        assert_eq!(ds.n_items(), 3);
        assert_eq!(ds.test[&0], ds.items.dense(902).unwrap());
        assert_eq!(ds.train[0].records.len(), 2);
        assert!(ds.target_items[0].contains(&2));

        let only = Dataset::from_records(&recs, vocab, 1, true).unwrap();
        assert_eq!(only.test, ds.test);
        assert!(only.train[0].records.iter().all(|r| r.behavior == 1));
    }

    #[test]
    fn held_out_records_absent_from_training() {
        let vocab = BehaviorVocab::new(["view", "buy"]).unwrap();
        let recs: Vec<_> = (0..40)
            .map(|i| InteractionRecord::new(i % 4, (i * 7) % 11, usize::from(i % 3 == 0), i as i64))
            .collect();
        let ds = Dataset::from_records(&recs, vocab, 1, false).unwrap();
        let subs = ds.subsequences(3);
        let inst = ds
            .training_instances(&subs, 2, &mut crate::rng::stream(0, "x", 0))
            .unwrap();
        for (&u, &item) in &ds.test {
            let last_buy_time = recs
                .iter()
                .filter(|r| ds.users.dense(r.user) == Some(u) && r.behavior == 1)
                .map(|r| r.timestamp)
                .max()
                .unwrap();
            assert!(ds.train[u]
                .records
                .iter()
                .all(|r| !(r.behavior == 1 && r.timestamp == last_buy_time)));
            assert!(inst
                .iter()
                .filter(|i| i.user == u)
                .all(|i| i.positive != item));
        }
        for i in &inst {
            assert!(i
                .negatives
                .iter()
                .all(|n| !ds.target_items[i.user].contains(n)));
        }
    }
}
