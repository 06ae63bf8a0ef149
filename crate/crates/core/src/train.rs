//! Scoring, the pairwise hinge objective, Adam, and the epoch loop.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rand::seq::SliceRandom;

use crate::autodiff::{finite_difference_errors, Indices, Tape, Tensor, Var};
use crate::data::{Dataset, SubSequence, TrainingInstance};
use crate::error::{ConfigError, Error, Result, TensorError};
use crate::model::{forward, GraphInputs, ModelConfig, ModelParameters, ParamVars};
use crate::rng::stream;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Users per mini-batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    /// Weight on the squared Frobenius norm of all parameters.
    pub lambda: f64,
    /// Negative samples per positive.
    pub negatives: usize,
    pub seed: u64,
    /// Withhold the positive records of a batch's users from the graph while
    /// that batch is scored.
    pub mask_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            decay: 0.96,
            lambda: 0.005,
            negatives: 1,
            seed: 0,
            mask_labels: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 || self.negatives == 0 {
            return Err(ConfigError::Invalid(
                "batch size and negatives must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.decay > 0.0 && self.lambda >= 0.0) {
            return Err(ConfigError::Invalid(
                "learning rate and lambda must be non-negative, decay positive".into(),
            ));
        }
        Ok(())
    }
}

/// `z · (h ∘ e)` for one pair of plain vectors.
pub fn score(subuser: &[f64], item: &[f64], z: &[f64]) -> f64 {
    subuser
        .iter()
        .zip(item)
        .zip(z)
        .map(|((h, e), w)| w * h * e)
        .sum()
}

/// Scores `z · (H[rows_k] ∘ E[items_k])` for every pair `k`, as a `[n]` vector.
pub fn score_pairs(
    tape: &mut Tape,
    subusers: Var,
    items: Var,
    rows: &Indices,
    item_rows: &Indices,
    z: Var,
) -> Result<Var, TensorError> {
    let h = tape.gather_rows(subusers, rows)?;
    let e = tape.gather_rows(items, item_rows)?;
    let p = tape.mul(h, e)?;
    let d = tape.shape(z)[0];
    let zc = tape.reshape(z, &[d, 1])?;
    let s = tape.matmul(p, zc)?;
    tape.reshape(s, &[rows.len()])
}

/// `Σ max(0, 1 − pos + neg) + λ Σ ‖θ‖²`. `pairs` is `None` when there are no
/// training pairs, leaving only the weight penalty.
pub fn hinge_loss(
    tape: &mut Tape,
    pairs: Option<(Var, Var)>,
    lambda: f64,
    params: &[Var],
) -> Result<Var, TensorError> {
    let mut terms = Vec::new();
    if let Some((pos, neg)) = pairs {
        let diff = tape.sub(neg, pos)?;
        let margin = tape.add_scalar(diff, 1.0);
        let hinge = tape.relu(margin);
        terms.push(tape.sum_all(hinge));
    }
    if lambda != 0.0 || terms.is_empty() {
        let mut sq = Vec::with_capacity(params.len());
        for &p in params {
            let p2 = tape.mul(p, p)?;
            sq.push(tape.sum_all(p2));
        }
        let mut norm = sq[0];
        for &s in &sq[1..] {
            norm = tape.add(norm, s)?;
        }
        terms.push(tape.scale(norm, lambda));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Adam moments plus the learning-rate schedule position.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub learning_rate: f64,
    pub decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, learning_rate: f64, decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            epoch: 0,
            learning_rate,
            decay,
        }
    }

    /// Learning rate in effect during the current epoch.
    pub fn current_rate(&self) -> f64 {
        self.learning_rate * self.decay.powi(self.epoch as i32)
    }

    /// One bias-corrected Adam update. Aborts before touching any parameter if
    /// a gradient is non-finite.
    pub fn apply(&mut self, params: &mut ModelParameters, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(ConfigError::Invalid(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.first.len(),
                params.len()
            ))
            .into());
        }
        for ((name, _), g) in params.entries().iter().zip(grads) {
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { name: name.clone() });
            }
        }
        self.step += 1;
        let rate = self.current_rate();
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for k in 0..g.numel() {
                let gk = g.data()[k];
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= rate * mh / (vh.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Objective over `instances` on a tape whose parameters are already registered.
pub fn batch_objective(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &ModelConfig,
    inputs: &GraphInputs,
    instances: &[&TrainingInstance],
    lambda: f64,
) -> Result<Var, TensorError> {
    let out = forward(tape, vars, model, inputs)?;
    let mut rows = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for inst in instances {
        for &n in &inst.negatives {
            rows.push(inst.node);
            pos.push(inst.positive);
            neg.push(n);
        }
    }
    let pairs = if rows.is_empty() {
        None
    } else {
        let rows: Indices = rows.into();
        let p = score_pairs(
            tape,
            out.subusers,
            out.items,
            &rows,
            &pos.into(),
            out.score_weights,
        )?;
        let n = score_pairs(
            tape,
            out.subusers,
            out.items,
            &rows,
            &neg.into(),
            out.score_weights,
        )?;
        Some((p, n))
    };
    hinge_loss(tape, pairs, lambda, &vars.vars)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1-based epoch number.
    pub epoch: usize,
    pub loss: f64,
}

pub fn write_loss_log(log: &[EpochLoss], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "epoch\tloss")?;
    for e in log {
        writeln!(w, "{}\t{}", e.epoch, e.loss)?;
    }
    Ok(())
}

/// Training data, graph and settings for one run.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub inputs: GraphInputs,
    pub subsequences: Vec<Vec<SubSequence>>,
    origin: i64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, model: ModelConfig, config: TrainConfig) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let (inputs, subsequences) = GraphInputs::from_dataset(dataset, &model)?;
        let origin = model
            .time_origin
            .or(dataset.min_train_timestamp())
            .unwrap_or_default();
        Ok(Self {
            dataset,
            model,
            config,
            inputs,
            subsequences,
            origin,
        })
    }

    pub fn init_parameters(&self) -> Result<ModelParameters> {
        Ok(ModelParameters::for_dataset(
            &self.model,
            self.dataset,
            self.config.seed,
        )?)
    }

    pub fn init_state(&self, params: &ModelParameters) -> OptimizerState {
        OptimizerState::new(params, self.config.learning_rate, self.config.decay)
    }

    /// Training instances of epoch `epoch` (0-based), with fresh negatives.
    pub fn instances(&self, epoch: usize) -> Result<Vec<TrainingInstance>> {
        let mut rng = stream(self.config.seed, "negatives", epoch as u64);
        Ok(self
            .dataset
            .training_instances(&self.subsequences, self.config.negatives, &mut rng)?)
    }

    /// Graph without the positive records of `batch`, and the batch's
    /// instances with sub-user ids of that graph. Instances whose window
    /// held nothing but labels are dropped.
    pub fn masked_batch(
        &self,
        batch: &[&TrainingInstance],
    ) -> Result<(GraphInputs, Vec<TrainingInstance>)> {
        let mut labels: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for inst in batch {
            labels.entry(inst.user).or_default().insert(inst.label);
        }
        let window = self.model.window;
        let mut node_map = vec![None; self.inputs.graph.n_subusers];
        let mut next = 0;
        let subs: Vec<Vec<SubSequence>> = self
            .subsequences
            .iter()
            .map(|user_subs| {
                user_subs
                    .iter()
                    .filter_map(|s| {
                        let records: Vec<_> = match labels.get(&s.owner) {
                            Some(drop) => s
                                .records
                                .iter()
                                .enumerate()
                                .filter(|(k, _)| !drop.contains(&(s.ordinal * window + k)))
                                .map(|(_, r)| *r)
                                .collect(),
                            None => s.records.clone(),
                        };
                        if records.is_empty() {
                            return None;
                        }
                        node_map[s.node] = Some(next);
                        next += 1;
                        Some(SubSequence {
                            node: next - 1,
                            records,
                            ..*s
                        })
                    })
                    .collect()
            })
            .collect();
        let inputs = GraphInputs::new(
            &subs,
            self.dataset.n_items(),
            self.dataset.n_behaviors(),
            &self.model,
            self.origin,
        )?;
        let remapped = batch
            .iter()
            .filter_map(|i| {
                node_map[i.node].map(|node| TrainingInstance {
                    node,
                    ..(*i).clone()
                })
            })
            .collect();
        Ok((inputs, remapped))
    }

    /// Objective and gradients for one batch at the given parameters.
    pub fn batch_gradients(
        &self,
        params: &ModelParameters,
        instances: &[&TrainingInstance],
    ) -> Result<(f64, Vec<Tensor>)> {
        let masked;
        let (inputs, batch): (&GraphInputs, Vec<&TrainingInstance>) = if self.config.mask_labels {
            masked = self.masked_batch(instances)?;
            (&masked.0, masked.1.iter().collect())
        } else {
            (&self.inputs, instances.to_vec())
        };
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let loss = batch_objective(
            &mut tape,
            &vars,
            &self.model,
            inputs,
            &batch,
            self.config.lambda,
        )?;
        tape.backward(loss)?;
        let grads = vars.vars.iter().map(|&v| tape.grad(v)).collect();
        Ok((tape.value(loss).item(), grads))
    }

    /// Worst relative error of tape gradients against central differences
    /// for each parameter, over one batch holding all epoch-0 instances.
    pub fn gradient_errors(
        &self,
        params: &ModelParameters,
        eps: f64,
    ) -> Result<Vec<(String, f64)>> {
        let instances = self.instances(0)?;
        let refs: Vec<&TrainingInstance> = instances.iter().collect();
        let masked;
        let (inputs, batch): (&GraphInputs, Vec<&TrainingInstance>) = if self.config.mask_labels {
            masked = self.masked_batch(&refs)?;
            (&masked.0, masked.1.iter().collect())
        } else {
            (&self.inputs, refs)
        };
        let names: Vec<String> = params.names().map(String::from).collect();
        let tensors: Vec<Tensor> = params.tensors().cloned().collect();
        let errors = finite_difference_errors::<_, Error>(
            |tape, vars| {
                let vars = ParamVars::from_vars(&names, vars);
                Ok(batch_objective(
                    tape,
                    &vars,
                    &self.model,
                    inputs,
                    &batch,
                    self.config.lambda,
                )?)
            },
            &tensors,
            eps,
        )?;
        Ok(names.into_iter().zip(errors).collect())
    }

    /// Run the epoch after `state.epoch`; returns the sum of batch objectives.
    pub fn run_epoch(
        &self,
        params: &mut ModelParameters,
        state: &mut OptimizerState,
    ) -> Result<f64> {
        let epoch = state.epoch;
        let instances = self.instances(epoch)?;
        let mut users: Vec<usize> = instances.iter().map(|i| i.user).collect();
        users.dedup();
        users.shuffle(&mut stream(self.config.seed, "batches", epoch as u64));

        let mut by_user: Vec<Vec<&TrainingInstance>> = vec![Vec::new(); self.dataset.n_users()];
        for inst in &instances {
            by_user[inst.user].push(inst);
        }
        let batches: Vec<Vec<&TrainingInstance>> = if users.is_empty() {
            vec![Vec::new()]
        } else {
            users
                .chunks(self.config.batch_size)
                .map(|chunk| {
                    chunk
                        .iter()
                        .flat_map(|&u| by_user[u].iter().copied())
                        .collect()
                })
                .collect()
        };
        let mut total = 0.0;
        for batch in &batches {
            let (loss, grads) = self.batch_gradients(params, batch)?;
            state.apply(params, &grads)?;
            total += loss;
        }
        state.epoch += 1;
        Ok(total)
    }

    /// Train until `state.epoch == self.config.epochs`.
    pub fn train(
        &self,
        params: &mut ModelParameters,
        state: &mut OptimizerState,
    ) -> Result<Vec<EpochLoss>> {
        let mut log = Vec::new();
        while state.epoch < self.config.epochs {
            let loss = self.run_epoch(params, state)?;
            log.push(EpochLoss {
                epoch: state.epoch,
                loss,
            });
        }
        Ok(log)
    }
}
