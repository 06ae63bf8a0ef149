//! Straight-line reference implementations used as test oracles. Nothing here
//! calls into the model code; inputs are plain nested vectors.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgt::data::{InteractionRecord, SubSequence};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row vector times matrix.
fn vecmat(v: &[f64], m: &Mat) -> Vec<f64> {
    let cols = m.first().map_or(0, Vec::len);
    let mut out = vec![0.0; cols];
    for (k, row) in m.iter().enumerate() {
        for j in 0..cols {
            out[j] += v[k] * row[j];
        }
    }
    out
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn times(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.max(0.0)).collect()
}

/// Softmax over the entries where `keep` is true; others get weight 0.
fn softmax_masked(xs: &[f64], keep: &[bool]) -> Vec<f64> {
    let m = xs
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs
        .iter()
        .zip(keep)
        .map(|(x, k)| if *k { (x - m).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    softmax_masked(xs, &vec![true; xs.len()])
}

/// Multi-head self-attention over one window `e [K×d]`; each head's
/// projections are `[d × d/H]`. Returns `[K×d]` and per-head weights `[K×K]`.
pub fn attention(e: &Mat, query: &[Mat], key: &[Mat], value: &[Mat]) -> (Mat, Vec<Mat>) {
    let k_len = e.len();
    let mut out = vec![Vec::new(); k_len];
    let mut weights = Vec::new();
    for h in 0..query.len() {
        let q: Mat = e.iter().map(|r| vecmat(r, &query[h])).collect();
        let k: Mat = e.iter().map(|r| vecmat(r, &key[h])).collect();
        let v: Mat = e.iter().map(|r| vecmat(r, &value[h])).collect();
        let dh = q[0].len() as f64;
        let mut w = Vec::new();
        for i in 0..k_len {
            let logits: Vec<f64> = (0..k_len).map(|j| dot(&q[i], &k[j]) / dh.sqrt()).collect();
            let a = softmax(&logits);
            let mut o = vec![0.0; v[0].len()];
            for j in 0..k_len {
                o = plus(&o, &times(&v[j], a[j]));
            }
            out[i].extend(o);
            w.push(a);
        }
        weights.push(w);
    }
    (out, weights)
}

/// One event of a toy graph.
#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub item: usize,
    pub behavior: usize,
    pub timestamp: i64,
}

/// Per user, per window, the window's events in order.
#[derive(Debug, Clone)]
pub struct ToyGraph {
    pub users: usize,
    pub items: usize,
    pub behaviors: usize,
    pub windows: Vec<Vec<Vec<Event>>>,
}

impl ToyGraph {
    pub fn random(
        rng: &mut impl Rng,
        max_users: usize,
        max_items: usize,
        behaviors: usize,
    ) -> Self {
        let users = rng.gen_range(2..=max_users);
        let items = rng.gen_range(3..=max_items);
        let mut windows = Vec::new();
        for _ in 0..users {
            let n = rng.gen_range(1..=3);
            let mut t = rng.gen_range(0..100i64) * 3600;
            let mut user = Vec::new();
            for _ in 0..n {
                let len = rng.gen_range(1..=4);
                let mut w = Vec::new();
                for _ in 0..len {
                    t += rng.gen_range(1..20i64) * 1800;
                    w.push(Event {
                        item: rng.gen_range(0..items),
                        behavior: rng.gen_range(0..behaviors),
                        timestamp: t,
                    });
                }
                user.push(w);
            }
            windows.push(user);
        }
        Self {
            users,
            items,
            behaviors,
            windows,
        }
    }

    pub fn n_subusers(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    pub fn n_events(&self) -> usize {
        self.windows.iter().flatten().map(Vec::len).sum()
    }

    /// Flat `(subuser, owner, event)` list in user, window, event order.
    pub fn events(&self) -> Vec<(usize, usize, Event)> {
        let mut out = Vec::new();
        let mut s = 0;
        for (u, ws) in self.windows.iter().enumerate() {
            for w in ws {
                for e in w {
                    out.push((s, u, *e));
                }
                s += 1;
            }
        }
        out
    }

    pub fn owners(&self) -> Vec<usize> {
        self.windows
            .iter()
            .enumerate()
            .flat_map(|(u, ws)| std::iter::repeat_n(u, ws.len()))
            .collect()
    }

    pub fn subsequences(&self) -> Vec<Vec<SubSequence>> {
        let mut node = 0;
        self.windows
            .iter()
            .enumerate()
            .map(|(u, ws)| {
                ws.iter()
                    .enumerate()
                    .map(|(ordinal, w)| {
                        let s = SubSequence {
                            owner: u,
                            ordinal,
                            node,
                            records: w
                                .iter()
                                .map(|e| InteractionRecord::new(u, e.item, e.behavior, e.timestamp))
                                .collect(),
                        };
                        node += 1;
                        s
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum FusionWeights {
    Attention { weight: Mat, bias: Vec<f64> },
    Concat { projection: Mat },
    Frequency,
}

#[derive(Debug, Clone)]
pub struct PropagationWeights {
    /// Encoded event rows in [`ToyGraph::events`] order.
    pub events: Mat,
    pub items: Mat,
    pub users: Mat,
    /// Per sub-user time embedding.
    pub subuser_time: Mat,
    /// Per-behavior transforms `[d×d]`.
    pub transforms: Vec<Mat>,
    pub fusion: FusionWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationOptions {
    pub layers: usize,
    pub softmax_eta: bool,
    pub fresh_refine: bool,
    pub mean: bool,
    pub global: bool,
}

#[derive(Debug, Clone, Default)]
pub struct PropagationStates {
    pub users: Vec<Mat>,
    pub subusers: Vec<Mat>,
    pub items: Vec<Mat>,
    pub subuser_gamma: Vec<Option<Mat>>,
    pub eta: Vec<Option<Vec<f64>>>,
}

/// `W_b = Σ_h softmax_h(gate_h · e_b + bias_h) basis_h`.
pub fn channel_transforms(
    behavior: &Mat,
    basis: &[Mat],
    gate: &Mat,
    bias: &[f64],
) -> (Vec<Mat>, Mat) {
    let d = basis[0].len();
    let mut out = Vec::new();
    let mut betas = Vec::new();
    for e in behavior {
        let logits: Vec<f64> = gate.iter().zip(bias).map(|(g, c)| dot(g, e) + c).collect();
        let beta = softmax(&logits);
        let mut w = vec![vec![0.0; d]; d];
        for (h, b) in beta.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    w[i][j] += b * basis[h][i][j];
                }
            }
        }
        out.push(w);
        betas.push(beta);
    }
    (out, betas)
}

/// Fuse per-behavior rows of one node.
fn fuse(
    per_behavior: &[Vec<f64>],
    counts: &[usize],
    fusion: &FusionWeights,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let d = per_behavior[0].len();
    match fusion {
        FusionWeights::Attention { weight, bias } => {
            let mut total = vec![0.0; d];
            for h in per_behavior {
                total = plus(&total, h);
            }
            let q = relu(&plus(&vecmat(&total, weight), bias));
            let scores: Vec<f64> = per_behavior.iter().map(|h| dot(h, &q)).collect();
            let keep: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
            let gamma = softmax_masked(&scores, &keep);
            let mut out = vec![0.0; d];
            for (h, g) in per_behavior.iter().zip(&gamma) {
                out = plus(&out, &times(h, *g));
            }
            (out, Some(gamma))
        }
        FusionWeights::Concat { projection } => {
            let cat: Vec<f64> = per_behavior.iter().flatten().copied().collect();
            (vecmat(&cat, projection), None)
        }
        FusionWeights::Frequency => {
            let total: usize = counts.iter().sum();
            let shares: Vec<f64> = counts
                .iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        c as f64 / total as f64
                    }
                })
                .collect();
            let mut out = vec![0.0; d];
            for (h, s) in per_behavior.iter().zip(&shares) {
                out = plus(&out, &times(h, *s));
            }
            (out, Some(shares))
        }
    }
}

/// Per destination and behavior, `ReLU(Σ source·W_b)` (optionally averaged)
/// over `(source row, destination, behavior)` edges.
fn messages(
    edges: &[(usize, usize, usize)],
    source: &Mat,
    transforms: &[Mat],
    n_dst: usize,
    mean: bool,
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<usize>>) {
    let b = transforms.len();
    let d = transforms[0][0].len();
    let mut sums = vec![vec![vec![0.0; d]; b]; n_dst];
    let mut counts = vec![vec![0usize; b]; n_dst];
    for &(src, dst, beh) in edges {
        sums[dst][beh] = plus(&sums[dst][beh], &vecmat(&source[src], &transforms[beh]));
        counts[dst][beh] += 1;
    }
    for (row, c) in sums.iter_mut().zip(&counts) {
        for (h, &n) in row.iter_mut().zip(c) {
            if mean && n > 0 {
                *h = times(h, 1.0 / n as f64);
            }
            *h = relu(h);
        }
    }
    (sums, counts)
}

pub fn propagate(
    g: &ToyGraph,
    w: &PropagationWeights,
    opt: PropagationOptions,
) -> PropagationStates {
    let events = g.events();
    let owners = g.owners();
    let s_count = g.n_subusers();
    let mut st = PropagationStates {
        users: vec![w.users.clone()],
        items: vec![w.items.clone()],
        ..Default::default()
    };
    for layer in 1..=opt.layers {
        let prev_items = st.items[layer - 1].clone();
        let prev_users = st.users[layer - 1].clone();
        let rows: Mat = if layer == 1 {
            w.events.clone()
        } else {
            events
                .iter()
                .map(|(_, _, e)| prev_items[e.item].clone())
                .collect()
        };
        let to_sub: Vec<(usize, usize, usize)> = events
            .iter()
            .enumerate()
            .map(|(p, (s, _, e))| (p, *s, e.behavior))
            .collect();
        let (per, counts) = messages(&to_sub, &rows, &w.transforms, s_count, opt.mean);
        let mut short = Vec::new();
        let mut gammas = Vec::new();
        for s in 0..s_count {
            let (h, gm) = fuse(&per[s], &counts[s], &w.fusion);
            short.push(h);
            gammas.push(gm);
        }
        if layer == 1 {
            st.subusers.push(short.clone());
        }
        st.subuser_gamma.push(
            gammas
                .iter()
                .all(Option::is_some)
                .then(|| gammas.into_iter().flatten().collect()),
        );

        let refined: Mat = if !opt.global {
            st.users.push(prev_users.clone());
            st.eta.push(None);
            short
        } else {
            let x: Mat = (0..s_count)
                .map(|s| plus(&short[s], &w.subuser_time[s]))
                .collect();
            let raw: Vec<f64> = (0..s_count)
                .map(|s| dot(&prev_users[owners[s]], &x[s]))
                .collect();
            let mut eta = raw.clone();
            if opt.softmax_eta {
                for u in 0..g.users {
                    let idx: Vec<usize> = (0..s_count).filter(|&s| owners[s] == u).collect();
                    let sm = softmax(&idx.iter().map(|&s| raw[s]).collect::<Vec<_>>());
                    for (k, &s) in idx.iter().enumerate() {
                        eta[s] = sm[k];
                    }
                }
            }
            let d = x[0].len();
            let mut users = vec![vec![0.0; d]; g.users];
            for s in 0..s_count {
                users[owners[s]] = plus(&users[owners[s]], &times(&x[s], eta[s]));
            }
            let users: Mat = users.iter().map(|u| relu(u)).collect();
            let source = if opt.fresh_refine {
                &users
            } else {
                &prev_users
            };
            let refined = (0..s_count)
                .map(|s| plus(&source[owners[s]], &w.subuser_time[s]))
                .collect();
            st.users.push(users);
            st.eta.push(Some(eta));
            refined
        };
        st.subusers.push(refined.clone());

        let to_item: Vec<(usize, usize, usize)> = events
            .iter()
            .map(|(s, _, e)| (*s, e.item, e.behavior))
            .collect();
        let (per, counts) = messages(&to_item, &refined, &w.transforms, g.items, opt.mean);
        let items = (0..g.items)
            .map(|j| {
                if counts[j].iter().all(|&c| c == 0) {
                    prev_items[j].clone()
                } else {
                    fuse(&per[j], &counts[j], &w.fusion).0
                }
            })
            .collect();
        st.items.push(items);
    }
    st
}

/// Sum of per-layer matrices.
pub fn combine(layers: &[Mat]) -> Mat {
    let mut out = layers[0].clone();
    for m in &layers[1..] {
        for (r, row) in out.iter_mut().enumerate() {
            *row = plus(row, &m[r]);
        }
    }
    out
}

/// 1-based rank of `target` by sorting all candidates by descending score,
/// then ascending id.
pub fn brute_force_rank(target: usize, candidates: &[(usize, f64)]) -> usize {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    1 + sorted.iter().position(|(i, _)| *i == target).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
