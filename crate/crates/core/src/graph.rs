//! Behavior-aware message passing over the item / sub-user / user graph.
//!
//! Each sub-sequence is a sub-user node linked to the items it contains, one
//! edge per event labeled with the event's behavior. Each user is linked to
//! its sub-users. One propagation layer runs, in order:
//!
//! 1. items -> sub-users, one ReLU-activated message sum per behavior;
//! 2. fusion of the per-behavior sub-user embeddings (attention over
//!    behaviors by default);
//! 3. attentive aggregation of a user's sub-users into the user embedding;
//! 4. refinement of every sub-user as user embedding plus its time embedding;
//! 5. sub-users -> items, again per behavior and fused.
//!
//! Behaviors with no edge at a node are excluded from the fusion softmax, and
//! items with no edges carry their previous-layer embedding forward.

use std::sync::Arc;

use crate::ablation::Fusion;
use crate::attention::AttentionLayout;
use crate::autodiff::{Indices, Tape, Tensor, Var};
use crate::data::SubSequence;
use crate::error::{ConfigError, TensorError};

/// Edges carrying one behavior. Entry `e` links position `positions[e]`
/// (owned by sub-user `subusers[e]`) with item `items[e]`.
#[derive(Debug, Clone)]
pub struct BehaviorEdges {
    pub positions: Indices,
    pub subusers: Indices,
    pub items: Indices,
}

/// Index structures for one training graph.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    pub n_users: usize,
    pub n_items: usize,
    pub n_behaviors: usize,
    pub n_subusers: usize,
    pub pos_item: Indices,
    pub pos_behavior: Indices,
    pub pos_subuser: Indices,
    /// Index of each event inside its window.
    pub pos_slot: Indices,
    pub pos_timestamp: Vec<i64>,
    pub sub_owner: Indices,
    pub sub_last_timestamp: Vec<i64>,
    /// Sub-users of user `u` are `user_offsets[u]..user_offsets[u+1]`.
    pub user_offsets: Indices,
    pub edges: Vec<BehaviorEdges>,
    /// Row-major `[n_subusers × n_behaviors]`.
    pub sub_presence: Vec<bool>,
    /// Row-major `[n_items × n_behaviors]`.
    pub item_presence: Vec<bool>,
    pub item_has_edge: Arc<[bool]>,
    /// Per behavior, share of a sub-user's events with that behavior.
    pub sub_frequency: Vec<Tensor>,
    /// Per behavior, share of an item's edges with that behavior.
    pub item_frequency: Vec<Tensor>,
    /// Per behavior, reciprocal edge counts (0 where there are none).
    pub sub_inv_count: Vec<Tensor>,
    pub item_inv_count: Vec<Tensor>,
    pub attention: AttentionLayout,
}

impl InteractionGraph {
    /// Build from per-user sub-sequences whose node ids are consecutive in
    /// user order (as produced by `Dataset::subsequences`).
    pub fn build(
        subsequences: &[Vec<SubSequence>],
        n_items: usize,
        n_behaviors: usize,
    ) -> Result<Self, ConfigError> {
        let n_users = subsequences.len();
        let mut pos_item = Vec::new();
        let mut pos_behavior = Vec::new();
        let mut pos_subuser = Vec::new();
        let mut pos_slot = Vec::new();
        let mut pos_timestamp = Vec::new();
        let mut sub_owner = Vec::new();
        let mut sub_last_timestamp = Vec::new();
        let mut lengths = Vec::new();
        let mut user_offsets = vec![0];
        for (user, subs) in subsequences.iter().enumerate() {
            for sub in subs {
                if sub.node != sub_owner.len() || sub.owner != user {
                    return Err(ConfigError::Invalid(format!(
                        "sub-user {} of user {} is out of order",
                        sub.node, sub.owner
                    )));
                }
                for (k, r) in sub.records.iter().enumerate() {
                    if r.item >= n_items || r.behavior >= n_behaviors {
                        return Err(ConfigError::Invalid(format!(
                            "event ({}, {}) outside {n_items} items / {n_behaviors} behaviors",
                            r.item, r.behavior
                        )));
                    }
                    pos_item.push(r.item);
                    pos_behavior.push(r.behavior);
                    pos_subuser.push(sub.node);
                    pos_slot.push(k);
                    pos_timestamp.push(r.timestamp);
                }
                sub_owner.push(user);
                sub_last_timestamp.push(sub.last_timestamp());
                lengths.push(sub.records.len());
            }
            user_offsets.push(sub_owner.len());
        }
        let n_subusers = sub_owner.len();
        if n_subusers == 0 {
            return Err(ConfigError::Invalid("no training events".into()));
        }

        let b = n_behaviors;
        let mut sub_counts = vec![0usize; n_subusers * b];
        let mut item_counts = vec![0usize; n_items * b];
        let mut per_behavior: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> =
            vec![Default::default(); b];
        for p in 0..pos_item.len() {
            let (beh, sub, item) = (pos_behavior[p], pos_subuser[p], pos_item[p]);
            sub_counts[sub * b + beh] += 1;
            item_counts[item * b + beh] += 1;
            per_behavior[beh].0.push(p);
            per_behavior[beh].1.push(sub);
            per_behavior[beh].2.push(item);
        }
        let edges = per_behavior
            .into_iter()
            .map(|(p, s, i)| BehaviorEdges {
                positions: p.into(),
                subusers: s.into(),
                items: i.into(),
            })
            .collect();

        let shares = |counts: &[usize], rows: usize| -> Vec<Tensor> {
            (0..b)
                .map(|beh| {
                    let data = (0..rows)
                        .map(|r| {
                            let total: usize = counts[r * b..(r + 1) * b].iter().sum();
                            if total == 0 {
                                0.0
                            } else {
                                counts[r * b + beh] as f64 / total as f64
                            }
                        })
                        .collect();
                    Tensor::vector(data)
                })
                .collect()
        };
        let inverse = |counts: &[usize], rows: usize| -> Vec<Tensor> {
            (0..b)
                .map(|beh| {
                    let data = (0..rows)
                        .map(|r| match counts[r * b + beh] {
                            0 => 0.0,
                            c => 1.0 / c as f64,
                        })
                        .collect();
                    Tensor::vector(data)
                })
                .collect()
        };
        let item_has_edge: Arc<[bool]> = (0..n_items)
            .map(|i| item_counts[i * b..(i + 1) * b].iter().any(|&c| c > 0))
            .collect();

        Ok(Self {
            n_users,
            n_items,
            n_behaviors,
            n_subusers,
            pos_item: pos_item.into(),
            pos_behavior: pos_behavior.into(),
            pos_subuser: pos_subuser.into(),
            pos_slot: pos_slot.into(),
            pos_timestamp,
            sub_owner: sub_owner.into(),
            sub_last_timestamp,
            user_offsets: user_offsets.into(),
            edges,
            sub_presence: sub_counts.iter().map(|&c| c > 0).collect(),
            item_presence: item_counts.iter().map(|&c| c > 0).collect(),
            item_has_edge,
            sub_frequency: shares(&sub_counts, n_subusers),
            item_frequency: shares(&item_counts, n_items),
            sub_inv_count: inverse(&sub_counts, n_subusers),
            item_inv_count: inverse(&item_counts, n_items),
            attention: AttentionLayout::from_lengths(&lengths),
        })
    }

    pub fn n_positions(&self) -> usize {
        self.pos_item.len()
    }

    /// Chronologically last sub-user of `user`, if any.
    pub fn last_subuser(&self, user: usize) -> Option<usize> {
        let (start, end) = (self.user_offsets[user], self.user_offsets[user + 1]);
        (end > start).then(|| end - 1)
    }

    pub fn subusers_of(&self, user: usize) -> std::ops::Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }
}

/// Normalization of the user-to-sub-user attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaMode {
    /// Softmax over a user's sub-users.
    Softmax,
    /// Raw dot products.
    Literal,
}

/// Which user embedding refines the sub-users after global aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    /// The embedding produced by the current layer.
    Fresh,
    /// The embedding entering the current layer.
    Literal,
}

/// Parameters of the multi-channel projection.
#[derive(Debug, Clone, Copy)]
pub struct ChannelParams {
    /// `[H × d × d]` base transformations.
    pub basis: Var,
    /// `[H × d]`
    pub gate: Var,
    /// `[H]`
    pub gate_bias: Var,
}

/// Per-behavior transforms `W_b = Σ_h β_bh · basis_h` with
/// `β_b = softmax(gate · e_b + gate_bias)`. Returns the transforms and `β [B×H]`.
pub fn channel_projection(
    tape: &mut Tape,
    behavior_table: Var,
    params: &ChannelParams,
) -> Result<(Vec<Var>, Var), TensorError> {
    let basis_shape = tape.shape(params.basis).to_vec();
    let (h, d) = match basis_shape.as_slice() {
        &[h, d, d2] if d == d2 => (h, d),
        _ => {
            return Err(TensorError::Contract {
                op: "channel_projection",
                msg: format!("basis shape {basis_shape:?} is not [H, d, d]"),
            })
        }
    };
    let b = tape.shape(behavior_table)[0];
    let gate_t = tape.transpose(params.gate)?;
    let logits = tape.matmul(behavior_table, gate_t)?;
    let logits = tape.add_bias(logits, params.gate_bias)?;
    let beta = tape.softmax(logits, 1)?;
    let stacked = tape.reshape(params.basis, &[h, d * d])?;
    let mixed = tape.matmul(beta, stacked)?;
    let mut transforms = Vec::with_capacity(b);
    for beh in 0..b {
        let row = tape.gather_rows(mixed, &Indices::from(vec![beh]))?;
        transforms.push(tape.reshape(row, &[d, d])?);
    }
    Ok((transforms, beta))
}

/// `ReLU(Σ_{e} source[src[e]] · transform)` accumulated at `dst[e]`, optionally
/// divided by the per-destination edge count before activation.
pub fn aggregate_messages(
    tape: &mut Tape,
    source: Var,
    src: &Indices,
    dst: &Indices,
    transform: Var,
    n_dst: usize,
    inv_count: Option<&Tensor>,
) -> Result<Var, TensorError> {
    let d = tape.shape(transform)[1];
    if src.is_empty() {
        return Ok(tape.constant(Tensor::zeros(&[n_dst, d])));
    }
    let rows = tape.gather_rows(source, src)?;
    let msgs = tape.matmul(rows, transform)?;
    let mut summed = tape.scatter_add_rows(msgs, dst, n_dst)?;
    if let Some(inv) = inv_count {
        let inv = tape.constant(inv.clone());
        summed = tape.scale_rows(summed, inv)?;
    }
    Ok(tape.relu(summed))
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var, TensorError> {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = tape.add(acc, *v)?;
    }
    Ok(acc)
}

/// Column `b` of an `[n×B]` weight matrix as an `[n]` vector.
fn column(tape: &mut Tape, m: Var, b: usize) -> Result<Var, TensorError> {
    let n = tape.shape(m)[0];
    let c = tape.slice_cols(m, b, 1)?;
    tape.reshape(c, &[n])
}

/// Attention over behaviors: the query is `ReLU((Σ_b H_b)·W + μ)`, scores are
/// `H_bᵀ q`, `γ` is their softmax over present behaviors and the output is
/// `Σ_b γ_b H_b`. Returns the fused `[n×d]` and `γ [n×B]`.
pub fn cross_type_aggregate(
    tape: &mut Tape,
    per_behavior: &[Var],
    presence: &[bool],
    weight: Var,
    bias: Var,
) -> Result<(Var, Var), TensorError> {
    let n = tape.shape(per_behavior[0])[0];
    let total = sum_vars(tape, per_behavior)?;
    let q = tape.matmul(total, weight)?;
    let q = tape.add_bias(q, bias)?;
    let q = tape.relu(q);
    let mut scores = Vec::with_capacity(per_behavior.len());
    for &h in per_behavior {
        let s = tape.row_dot(h, q)?;
        scores.push(tape.reshape(s, &[n, 1])?);
    }
    let scores = tape.concat(&scores, 1)?;
    let gamma = tape.masked_softmax_rows(scores, presence)?;
    let mut parts = Vec::with_capacity(per_behavior.len());
    for (b, &h) in per_behavior.iter().enumerate() {
        let g = column(tape, gamma, b)?;
        parts.push(tape.scale_rows(h, g)?);
    }
    Ok((sum_vars(tape, &parts)?, gamma))
}

/// Parameters of the behavior fusion step.
#[derive(Debug, Clone, Copy)]
pub enum FusionParams {
    Attention {
        weight: Var,
        bias: Var,
    },
    /// `[B·d × d]` projection of the concatenated behavior embeddings.
    Concat {
        projection: Var,
    },
    Frequency,
}

impl FusionParams {
    pub fn kind(&self) -> Fusion {
        match self {
            Self::Attention { .. } => Fusion::Attention,
            Self::Concat { .. } => Fusion::Concat,
            Self::Frequency => Fusion::Frequency,
        }
    }
}

/// Fuse per-behavior embeddings; returns the fused embedding and, when the
/// fusion has per-behavior weights, `γ [n×B]`.
pub fn fuse_behaviors(
    tape: &mut Tape,
    per_behavior: &[Var],
    presence: &[bool],
    frequency: &[Tensor],
    params: &FusionParams,
) -> Result<(Var, Option<Var>), TensorError> {
    match *params {
        FusionParams::Attention { weight, bias } => {
            let (out, gamma) = cross_type_aggregate(tape, per_behavior, presence, weight, bias)?;
            Ok((out, Some(gamma)))
        }
        FusionParams::Concat { projection } => {
            let cat = tape.concat(per_behavior, 1)?;
            Ok((tape.matmul(cat, projection)?, None))
        }
        FusionParams::Frequency => {
            let mut parts = Vec::with_capacity(per_behavior.len());
            let mut cols = Vec::with_capacity(per_behavior.len());
            for (&h, f) in per_behavior.iter().zip(frequency) {
                let n = f.numel();
                let fv = tape.constant(f.clone());
                parts.push(tape.scale_rows(h, fv)?);
                cols.push(tape.reshape(fv, &[n, 1])?);
            }
            let gamma = tape.concat(&cols, 1)?;
            Ok((sum_vars(tape, &parts)?, Some(gamma)))
        }
    }
}

/// Attentive aggregation of sub-users into users. Inputs are
/// `x_r = short_term_r + time_r`; scores are `η_r = Γ_{owner(r)}ᵀ x_r`
/// (softmax-normalized per user in [`EtaMode::Softmax`]); the result is
/// `ReLU(Σ_r η_r x_r)` per user. Returns the new users `[I×d]` and `η [S]`.
#[allow(clippy::too_many_arguments)]
pub fn global_user_aggregate(
    tape: &mut Tape,
    short_term: Var,
    time: Var,
    users: Var,
    owner: &Indices,
    user_offsets: &Indices,
    mode: EtaMode,
) -> Result<(Var, Var), TensorError> {
    let n_users = tape.shape(users)[0];
    let x = tape.add(short_term, time)?;
    let g = tape.gather_rows(users, owner)?;
    let raw = tape.row_dot(g, x)?;
    let eta = match mode {
        EtaMode::Softmax => tape.segment_softmax(raw, user_offsets)?,
        EtaMode::Literal => raw,
    };
    let weighted = tape.scale_rows(x, eta)?;
    let summed = tape.scatter_add_rows(weighted, owner, n_users)?;
    Ok((tape.relu(summed), eta))
}

/// `H_r = Γ_{owner(r)} + t_r`.
pub fn refine_subusers(
    tape: &mut Tape,
    users: Var,
    time: Var,
    owner: &Indices,
) -> Result<Var, TensorError> {
    let g = tape.gather_rows(users, owner)?;
    tape.add(g, time)
}

/// Element-wise sum over layers.
pub fn combine_layers(tape: &mut Tape, layers: &[Var]) -> Result<Var, TensorError> {
    if layers.is_empty() {
        return Err(TensorError::Contract {
            op: "combine_layers",
            msg: "no layers".into(),
        });
    }
    sum_vars(tape, layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationConfig {
    pub layers: usize,
    pub eta_mode: EtaMode,
    pub refine: RefineMode,
    pub mean_normalize: bool,
    pub global_off: bool,
}

/// Layer-0 embeddings and per-sub-user time embeddings.
#[derive(Debug, Clone, Copy)]
pub struct PropagationInputs {
    /// `[N×d]` encoded event embeddings (first-layer item side input).
    pub events: Var,
    /// `[J×d]` item id embeddings.
    pub items: Var,
    /// `[I×d]` user id embeddings.
    pub users: Var,
    /// `[S×d]` time embedding of each sub-user's last event.
    pub subuser_time: Var,
}

/// Per-layer embeddings, index 0 being the initial state.
#[derive(Debug, Clone, Default)]
pub struct LayerState {
    pub users: Vec<Var>,
    pub subusers: Vec<Var>,
    pub items: Vec<Var>,
    /// Per layer 1..=L: behavior weights on the sub-user side `[S×B]`.
    pub subuser_gamma: Vec<Option<Var>>,
    /// Per layer 1..=L: behavior weights on the item side `[J×B]`.
    pub item_gamma: Vec<Option<Var>>,
    /// Per layer 1..=L: sub-user weights in the user aggregation `[S]`.
    pub eta: Vec<Option<Var>>,
}

/// Run `cfg.layers` propagation layers.
///
/// The first layer reads encoded event embeddings on the item side; later
/// layers read the previous layer's item embeddings at each event. The
/// sub-user state recorded for layer 0 is the first layer's fused short-term
/// embedding (sub-users have no id embedding); for layer `l >= 1` it is the
/// refined embedding that feeds the sub-user -> item pass.
pub fn propagate_layers(
    tape: &mut Tape,
    graph: &InteractionGraph,
    inputs: &PropagationInputs,
    transforms: &[Var],
    fusion: &FusionParams,
    cfg: &PropagationConfig,
) -> Result<LayerState, TensorError> {
    if cfg.layers == 0 {
        return Err(TensorError::Contract {
            op: "propagate_layers",
            msg: "at least one layer is required".into(),
        });
    }
    let mut state = LayerState {
        users: vec![inputs.users],
        items: vec![inputs.items],
        ..Default::default()
    };
    for layer in 1..=cfg.layers {
        let prev_items = state.items[layer - 1];
        let prev_users = state.users[layer - 1];
        let event_rows = if layer == 1 {
            inputs.events
        } else {
            tape.gather_rows(prev_items, &graph.pos_item)?
        };

        let mut per_behavior = Vec::with_capacity(graph.n_behaviors);
        for (b, e) in graph.edges.iter().enumerate() {
            let inv = cfg.mean_normalize.then(|| &graph.sub_inv_count[b]);
            per_behavior.push(aggregate_messages(
                tape,
                event_rows,
                &e.positions,
                &e.subusers,
                transforms[b],
                graph.n_subusers,
                inv,
            )?);
        }
        let (short_term, sub_gamma) = fuse_behaviors(
            tape,
            &per_behavior,
            &graph.sub_presence,
            &graph.sub_frequency,
            fusion,
        )?;
        if layer == 1 {
            state.subusers.push(short_term);
        }
        state.subuser_gamma.push(sub_gamma);

        let refined = if cfg.global_off {
            state.users.push(prev_users);
            state.eta.push(None);
            short_term
        } else {
            let (users, eta) = global_user_aggregate(
                tape,
                short_term,
                inputs.subuser_time,
                prev_users,
                &graph.sub_owner,
                &graph.user_offsets,
                cfg.eta_mode,
            )?;
            state.users.push(users);
            state.eta.push(Some(eta));
            let source = match cfg.refine {
                RefineMode::Fresh => users,
                RefineMode::Literal => prev_users,
            };
            refine_subusers(tape, source, inputs.subuser_time, &graph.sub_owner)?
        };
        state.subusers.push(refined);

        let mut per_behavior = Vec::with_capacity(graph.n_behaviors);
        for (b, e) in graph.edges.iter().enumerate() {
            let inv = cfg.mean_normalize.then(|| &graph.item_inv_count[b]);
            per_behavior.push(aggregate_messages(
                tape,
                refined,
                &e.subusers,
                &e.items,
                transforms[b],
                graph.n_items,
                inv,
            )?);
        }
        let (items, item_gamma) = fuse_behaviors(
            tape,
            &per_behavior,
            &graph.item_presence,
            &graph.item_frequency,
            fusion,
        )?;
        state
            .items
            .push(tape.select_rows(&graph.item_has_edge, items, prev_items)?);
        state.item_gamma.push(item_gamma);
    }
    Ok(state)
}
