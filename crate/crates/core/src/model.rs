//! Model configuration, named parameters and the full forward pass.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::ablation::{AblationConfig, Fusion};
use crate::attention::{check_heads, encode_subsequences, AttentionParams, Encoded};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, SubSequence};
use crate::error::{ConfigError, Result, TensorError};
use crate::graph::{
    channel_projection, combine_layers, propagate_layers, ChannelParams, FusionParams,
    InteractionGraph, LayerState, PropagationConfig, PropagationInputs,
};
use crate::rng::stream;
use crate::temporal::{
    context_embed, encode_timestamps, ContextInputs, ContextTables, TimeSlotMapper,
};

pub use crate::graph::{EtaMode, RefineMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub attention_heads: usize,
    pub channels: usize,
    /// Events per sub-sequence.
    pub window: usize,
    /// Seconds per time slot.
    pub granularity: i64,
    /// Start of slot 0; the earliest training timestamp when unset.
    pub time_origin: Option<i64>,
    pub eta_mode: EtaMode,
    pub refine: RefineMode,
    pub mean_normalize: bool,
    pub ablation: AblationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 2,
            attention_heads: 2,
            channels: 2,
            window: 6,
            granularity: TimeSlotMapper::DEFAULT_GRANULARITY,
            time_origin: None,
            eta_mode: EtaMode::Softmax,
            refine: RefineMode::Fresh,
            mean_normalize: false,
            ablation: AblationConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.dim == 0 {
            return bad("model dim must be positive");
        }
        if self.layers == 0 {
            return bad("at least one propagation layer is required");
        }
        if self.channels == 0 {
            return bad("at least one projection channel is required");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.granularity <= 0 {
            return bad("time granularity must be positive");
        }
        if !self.ablation.sequence_encoder_off {
            check_heads(self.dim, self.attention_heads)?;
        }
        self.ablation.validate()
    }

    /// Names and shapes of every parameter this variant uses, in a fixed order.
    pub fn parameter_shapes(
        &self,
        users: usize,
        items: usize,
        behaviors: usize,
    ) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let ab = &self.ablation;
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("item_embedding".into(), vec![items, d]),
            ("user_embedding".into(), vec![users, d]),
        ];
        let needs_behavior = !ab.context_embedding_off || !ab.multi_channel_off;
        if needs_behavior {
            out.push(("behavior_embedding".into(), vec![behaviors, d]));
        }
        let needs_time = !ab.context_embedding_off || !ab.global_context_off;
        if needs_time {
            out.push(("time_projection".into(), vec![2 * d, d]));
        }
        if ab.context_embedding_off {
            out.push(("position_embedding".into(), vec![self.window, d]));
        }
        if !ab.sequence_encoder_off {
            let dh = d / self.attention_heads;
            for role in ["query", "key", "value"] {
                for h in 0..self.attention_heads {
                    out.push((format!("attn.{role}.{h}"), vec![d, dh]));
                }
            }
        }
        if ab.multi_channel_off {
            out.push(("shared_projection".into(), vec![d, d]));
        } else {
            out.push(("channel.basis".into(), vec![self.channels, d, d]));
            out.push(("channel.gate".into(), vec![self.channels, d]));
            out.push(("channel.gate_bias".into(), vec![self.channels]));
        }
        match ab.fusion() {
            Fusion::Attention => {
                out.push(("cross.weight".into(), vec![d, d]));
                out.push(("cross.bias".into(), vec![d]));
            }
            Fusion::Concat => out.push(("concat.projection".into(), vec![behaviors * d, d])),
            Fusion::Frequency => {}
        }
        out.push(("score.z".into(), vec![d]));
        out
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    entries: Vec<(String, Tensor)>,
}

impl ModelParameters {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    /// Uniform initialization in `[-1/sqrt(d), 1/sqrt(d)]`, one random stream
    /// per parameter name.
    pub fn init(
        cfg: &ModelConfig,
        users: usize,
        items: usize,
        behaviors: usize,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        if users == 0 || items == 0 || behaviors == 0 {
            return Err(ConfigError::Invalid(
                "users, items and behaviors must be non-empty".into(),
            ));
        }
        let bound = 1.0 / (cfg.dim as f64).sqrt();
        let entries = cfg
            .parameter_shapes(users, items, behaviors)
            .into_iter()
            .map(|(name, shape)| {
                let mut rng = stream(seed, &format!("init/{name}"), 0);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                let t = Tensor::new(shape, data).expect("parameter shape");
                (name, t)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn for_dataset(cfg: &ModelConfig, ds: &Dataset, seed: u64) -> Result<Self, ConfigError> {
        Self::init(cfg, ds.n_users(), ds.n_items(), ds.n_behaviors(), seed)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    /// `‖Θ‖²` over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.tensors().map(Tensor::sum_squares).sum()
    }

    /// Check that names and shapes match what `cfg` expects.
    pub fn check_layout(&self, expected: &[(String, Vec<usize>)]) -> Result<(), ConfigError> {
        let found: Vec<(&str, &[usize])> = self
            .entries
            .iter()
            .map(|(n, t)| (n.as_str(), t.shape()))
            .collect();
        let want: Vec<(&str, &[usize])> = expected
            .iter()
            .map(|(n, s)| (n.as_str(), s.as_slice()))
            .collect();
        if found != want {
            return Err(ConfigError::Invalid(format!(
                "parameter layout {found:?} does not match expected {want:?}"
            )));
        }
        Ok(())
    }

    /// Record every parameter as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        let index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        ParamVars { vars, index }
    }
}

/// Parameter leaves on a tape, addressable by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl ParamVars {
    /// Pair already-registered leaves with their names, in parameter order.
    pub fn from_vars(names: &[String], vars: &[Var]) -> Self {
        Self {
            vars: vars.to_vec(),
            index: names
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, n)| (n, i))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, TensorError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| TensorError::Contract {
                op: "parameters",
                msg: format!("missing parameter `{name}`"),
            })
    }

    fn maybe(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }
}

/// Graph structure plus the constant time encodings the forward pass needs.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub graph: InteractionGraph,
    /// `[N×2d]` base encodings of event timestamps.
    pub event_time: Tensor,
    /// `[S×2d]` base encodings of each sub-user's last timestamp.
    pub subuser_time: Tensor,
}

impl GraphInputs {
    pub fn new(
        subsequences: &[Vec<SubSequence>],
        items: usize,
        behaviors: usize,
        cfg: &ModelConfig,
        origin: i64,
    ) -> Result<Self> {
        let graph = InteractionGraph::build(subsequences, items, behaviors)?;
        let mapper = TimeSlotMapper::new(cfg.granularity, origin);
        let event_time = encode_timestamps(&graph.pos_timestamp, cfg.dim, &mapper)?;
        let subuser_time = encode_timestamps(&graph.sub_last_timestamp, cfg.dim, &mapper)?;
        Ok(Self {
            graph,
            event_time,
            subuser_time,
        })
    }

    /// Graph over the training sequences of `ds`. The time origin defaults to
    /// the earliest training event.
    pub fn from_dataset(ds: &Dataset, cfg: &ModelConfig) -> Result<(Self, Vec<Vec<SubSequence>>)> {
        let subs = ds.subsequences(cfg.window);
        let earliest = ds
            .min_train_timestamp()
            .ok_or_else(|| ConfigError::Invalid("no training events".into()))?;
        let origin = cfg.time_origin.unwrap_or(earliest);
        let inputs = Self::new(&subs, ds.n_items(), ds.n_behaviors(), cfg, origin)?;
        Ok((inputs, subs))
    }
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Layer-combined user embeddings `[I×d]`.
    pub users: Var,
    /// Layer-combined sub-user embeddings `[S×d]`.
    pub subusers: Var,
    /// Layer-combined item embeddings `[J×d]`.
    pub items: Var,
    pub state: LayerState,
    pub attention: Option<Encoded>,
    /// Channel gate weights `[B×H]`.
    pub channel_gate: Option<Var>,
    pub score_weights: Var,
}

pub fn forward(
    tape: &mut Tape,
    params: &ParamVars,
    cfg: &ModelConfig,
    inputs: &GraphInputs,
) -> Result<ForwardOutput, TensorError> {
    let graph = &inputs.graph;
    let ab = &cfg.ablation;
    let d = cfg.dim;
    let item_table = params.get("item_embedding")?;

    let time_base = tape.constant(inputs.event_time.clone());
    let tables = ContextTables {
        item: item_table,
        behavior: params.maybe("behavior_embedding").unwrap_or(item_table),
        time: params.maybe("time_projection").unwrap_or(item_table),
        position: params.maybe("position_embedding"),
    };
    let context = context_embed(
        tape,
        &tables,
        &ContextInputs {
            items: &graph.pos_item,
            behaviors: &graph.pos_behavior,
            time_base,
            positions: &graph.pos_slot,
        },
        ab.context_embedding_off,
    )?;

    let (events, attention) = if ab.sequence_encoder_off {
        (context, None)
    } else {
        let heads = cfg.attention_heads;
        let role = |r: &str| -> Result<Vec<Var>, TensorError> {
            (0..heads)
                .map(|h| params.get(&format!("attn.{r}.{h}")))
                .collect()
        };
        let attn = AttentionParams {
            query: role("query")?,
            key: role("key")?,
            value: role("value")?,
        };
        let enc = encode_subsequences(tape, context, &attn, &graph.attention)?;
        (enc.output, Some(enc))
    };

    let (transforms, channel_gate) = if ab.multi_channel_off {
        (
            vec![params.get("shared_projection")?; graph.n_behaviors],
            None,
        )
    } else {
        let channels = ChannelParams {
            basis: params.get("channel.basis")?,
            gate: params.get("channel.gate")?,
            gate_bias: params.get("channel.gate_bias")?,
        };
        let behavior = params.get("behavior_embedding")?;
        let (w, beta) = channel_projection(tape, behavior, &channels)?;
        (w, Some(beta))
    };

    let fusion = match ab.fusion() {
        Fusion::Attention => FusionParams::Attention {
            weight: params.get("cross.weight")?,
            bias: params.get("cross.bias")?,
        },
        Fusion::Concat => FusionParams::Concat {
            projection: params.get("concat.projection")?,
        },
        Fusion::Frequency => FusionParams::Frequency,
    };

    let subuser_time = if ab.global_context_off {
        tape.constant(Tensor::zeros(&[graph.n_subusers, d]))
    } else {
        let base = tape.constant(inputs.subuser_time.clone());
        tape.matmul(base, params.get("time_projection")?)?
    };

    let state = propagate_layers(
        tape,
        graph,
        &PropagationInputs {
            events,
            items: item_table,
            users: params.get("user_embedding")?,
            subuser_time,
        },
        &transforms,
        &fusion,
        &PropagationConfig {
            layers: cfg.layers,
            eta_mode: cfg.eta_mode,
            refine: cfg.refine,
            mean_normalize: cfg.mean_normalize,
            global_off: ab.global_context_off,
        },
    )?;
    Ok(ForwardOutput {
        users: combine_layers(tape, &state.users)?,
        subusers: combine_layers(tape, &state.subusers)?,
        items: combine_layers(tape, &state.items)?,
        state,
        attention,
        channel_gate,
        score_weights: params.get("score.z")?,
    })
}

/// Plain-value snapshot of a forward pass, used for ranking.
#[derive(Debug, Clone)]
pub struct Inference {
    pub users: Tensor,
    pub subusers: Tensor,
    pub items: Tensor,
    pub score_weights: Vec<f64>,
    /// Per layer, sub-user behavior weights `[S×B]` when the fusion has them.
    pub subuser_gamma: Vec<Option<Tensor>>,
    /// Per layer, sub-user weights in user aggregation `[S]`.
    pub eta: Vec<Option<Tensor>>,
}

pub fn infer(
    params: &ModelParameters,
    cfg: &ModelConfig,
    inputs: &GraphInputs,
) -> Result<Inference> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = forward(&mut tape, &vars, cfg, inputs)?;
    let snap = |v: &Option<Var>| v.map(|v| tape.value(v).clone());
    Ok(Inference {
        users: tape.value(out.users).clone(),
        subusers: tape.value(out.subusers).clone(),
        items: tape.value(out.items).clone(),
        score_weights: tape.value(out.score_weights).data().to_vec(),
        subuser_gamma: out.state.subuser_gamma.iter().map(snap).collect(),
        eta: out.state.eta.iter().map(snap).collect(),
    })
}
