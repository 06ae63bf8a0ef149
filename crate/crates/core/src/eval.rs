//! Leave-one-out ranking evaluation and top-N recommendation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::graph::InteractionGraph;
use crate::model::Inference;
use crate::rng::stream;
use crate::train::score;

/// Which items compete with the held-out item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePolicy {
    /// The held-out item plus this many sampled items the user never
    /// engaged under the target behavior.
    Sampled(usize),
    FullCatalog,
}

impl Default for CandidatePolicy {
    fn default() -> Self {
        Self::Sampled(99)
    }
}

impl fmt::Display for CandidatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sampled(n) => write!(f, "sampled-{n}"),
            Self::FullCatalog => write!(f, "full-catalog"),
        }
    }
}

pub fn hit_rate(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `target` among `candidates` by descending score, ties
/// broken by ascending item id. `target` must appear in `candidates`.
pub fn rank_of(target: usize, candidates: &[(usize, f64)]) -> usize {
    let target_score = candidates
        .iter()
        .find(|(i, _)| *i == target)
        .map(|(_, s)| *s)
        .expect("target among candidates");
    1 + candidates
        .iter()
        .filter(|&&(i, s)| s > target_score || (s == target_score && i < target))
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub cutoffs: Vec<usize>,
    pub hit_rate: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// dense user -> rank of the held-out item
    pub ranks: BTreeMap<usize, usize>,
    /// Test users without any training sub-sequence.
    pub skipped: usize,
    pub policy: CandidatePolicy,
}

impl RankingReport {
    pub fn from_ranks(
        ranks: BTreeMap<usize, usize>,
        cutoffs: &[usize],
        skipped: usize,
        policy: CandidatePolicy,
    ) -> Self {
        let n = ranks.len().max(1) as f64;
        let avg = |f: fn(usize, usize) -> f64, c: usize| {
            ranks.values().map(|&r| f(r, c)).sum::<f64>() / n
        };
        Self {
            cutoffs: cutoffs.to_vec(),
            hit_rate: cutoffs.iter().map(|&c| avg(hit_rate, c)).collect(),
            ndcg: cutoffs.iter().map(|&c| avg(ndcg, c)).collect(),
            ranks,
            skipped,
            policy,
        }
    }

    pub fn hit_rate_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs
            .iter()
            .position(|&c| c == cutoff)
            .map(|i| self.hit_rate[i])
    }

    pub fn ndcg_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs
            .iter()
            .position(|&c| c == cutoff)
            .map(|i| self.ndcg[i])
    }

    pub fn write_tsv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(
            w,
            "# candidates={} users={} skipped={}",
            self.policy,
            self.ranks.len(),
            self.skipped
        )?;
        writeln!(w, "cutoff\thr\tndcg")?;
        for (i, c) in self.cutoffs.iter().enumerate() {
            writeln!(w, "{c}\t{}\t{}", self.hit_rate[i], self.ndcg[i])?;
        }
        Ok(())
    }

    /// One row per evaluated user, keyed by raw user id.
    pub fn write_ranks(&self, ds: &Dataset, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "user\trank")?;
        for (&u, &r) in &self.ranks {
            writeln!(w, "{}\t{r}", ds.users.raw(u))?;
        }
        Ok(())
    }
}

/// Candidate items for `user`: the held-out item first, then sampled or all
/// other items.
pub fn candidates(
    ds: &Dataset,
    user: usize,
    held_out: usize,
    policy: CandidatePolicy,
    seed: u64,
) -> Vec<usize> {
    match policy {
        CandidatePolicy::FullCatalog => {
            let mut out = vec![held_out];
            out.extend((0..ds.n_items()).filter(|&i| i != held_out));
            out
        }
        CandidatePolicy::Sampled(count) => {
            let engaged: &BTreeSet<usize> = &ds.target_items[user];
            let pool: Vec<usize> = (0..ds.n_items())
                .filter(|i| *i != held_out && !engaged.contains(i))
                .collect();
            let take = count.min(pool.len());
            let mut rng = stream(seed, "eval-candidates", user as u64);
            let mut out = vec![held_out];
            out.extend(
                sample(&mut rng, pool.len(), take)
                    .into_iter()
                    .map(|k| pool[k]),
            );
            out
        }
    }
}

/// Rank each test user's held-out item using the combined embedding of the
/// user's last sub-user. Users are scored in parallel and merged in id order.
pub fn evaluate(
    inference: &Inference,
    graph: &InteractionGraph,
    ds: &Dataset,
    cutoffs: &[usize],
    policy: CandidatePolicy,
    seed: u64,
) -> RankingReport {
    let tests: Vec<(usize, usize)> = ds.test.iter().map(|(&u, &i)| (u, i)).collect();
    let results: Vec<(usize, Option<usize>)> = tests
        .par_iter()
        .map(|&(user, held_out)| {
            let Some(node) = graph.last_subuser(user) else {
                return (user, None);
            };
            let h = inference.subusers.row(node);
            let scored: Vec<(usize, f64)> = candidates(ds, user, held_out, policy, seed)
                .into_iter()
                .map(|i| {
                    (
                        i,
                        score(h, inference.items.row(i), &inference.score_weights),
                    )
                })
                .collect();
            (user, Some(rank_of(held_out, &scored)))
        })
        .collect();
    let skipped = results.iter().filter(|(_, r)| r.is_none()).count();
    let ranks = results
        .into_iter()
        .filter_map(|(u, r)| r.map(|r| (u, r)))
        .collect();
    RankingReport::from_ranks(ranks, cutoffs, skipped, policy)
}

/// Top `n` items for `user` by score, excluding items already engaged in
/// training under the target behavior. Returns `(item, score)` with dense ids.
pub fn recommend(
    inference: &Inference,
    graph: &InteractionGraph,
    ds: &Dataset,
    user: usize,
    n: usize,
) -> Option<Vec<(usize, f64)>> {
    let node = graph.last_subuser(user)?;
    let h = inference.subusers.row(node);
    let seen: BTreeSet<usize> = ds.train[user]
        .records
        .iter()
        .filter(|r| r.behavior == ds.target)
        .map(|r| r.item)
        .collect();
    let mut scored: Vec<(usize, f64)> = (0..ds.n_items())
        .filter(|i| !seen.contains(i))
        .map(|i| {
            (
                i,
                score(h, inference.items.row(i), &inference.score_weights),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Some(scored)
}

/// Per sub-user attention diagnostics: behavior weights and user-aggregation
/// weight at every layer, with raw user ids.
pub fn write_diagnostics(
    inference: &Inference,
    graph: &InteractionGraph,
    ds: &Dataset,
    mut w: impl Write,
) -> io::Result<()> {
    write!(w, "user\tsubuser\tlayer")?;
    for label in ds.vocab.labels() {
        write!(w, "\tgamma_{label}")?;
    }
    writeln!(w, "\teta")?;
    let b = graph.n_behaviors;
    for layer in 0..inference.eta.len() {
        for user in 0..graph.n_users {
            for (k, node) in graph.subusers_of(user).enumerate() {
                write!(w, "{}\t{k}\t{}", ds.users.raw(user), layer + 1)?;
                match &inference.subuser_gamma[layer] {
                    Some(g) => {
                        for v in &g.data()[node * b..(node + 1) * b] {
                            write!(w, "\t{v}")?;
                        }
                    }
                    None => {
                        for _ in 0..b {
                            write!(w, "\t-")?;
                        }
                    }
                }
                match &inference.eta[layer] {
                    Some(e) => writeln!(w, "\t{}", e.data()[node])?,
                    None => writeln!(w, "\t-")?,
                }
            }
        }
    }
    Ok(())
}
