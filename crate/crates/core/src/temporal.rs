//! Sinusoidal time encoding and the behavior-aware context embedding.

use std::collections::HashMap;

use crate::autodiff::{Indices, Tape, Tensor, Var};
use crate::error::{DataError, TensorError};

/// Maps timestamps to integer slots of `granularity` seconds from `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSlotMapper {
    pub granularity: i64,
    pub origin: i64,
}

impl TimeSlotMapper {
    pub const DEFAULT_GRANULARITY: i64 = 3600;

    pub fn new(granularity: i64, origin: i64) -> Self {
        assert!(granularity > 0, "granularity must be positive");
        Self {
            granularity,
            origin,
        }
    }

    pub fn slot(&self, timestamp: i64) -> Result<u64, DataError> {
        if timestamp < self.origin {
            return Err(DataError::TimeRange {
                timestamp,
                origin: self.origin,
            });
        }
        Ok(((timestamp - self.origin) / self.granularity) as u64)
    }
}

/// `2d`-dimensional base encoding of a time slot. Even entries `2l` hold
/// `sin(slot / 10000^(2l/d))`, odd entries `2l+1` hold
/// `cos(slot / 10000^((2l+1)/d))`, both divided by `sqrt(d)`.
pub fn encode_slot(slot: u64, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * d);
    push_encoding(&mut out, slot, &frequencies(d), d);
    out
}

fn frequencies(d: usize) -> Vec<(f64, f64)> {
    (0..d)
        .map(|l| {
            let even = (2 * l) as f64 / d as f64;
            let odd = (2 * l + 1) as f64 / d as f64;
            (10000f64.powf(even), 10000f64.powf(odd))
        })
        .collect()
}

fn push_encoding(out: &mut Vec<f64>, slot: u64, freqs: &[(f64, f64)], d: usize) {
    let scale = (d as f64).sqrt();
    let tau = slot as f64;
    for &(even, odd) in freqs {
        out.push((tau / even).sin() / scale);
        out.push((tau / odd).cos() / scale);
    }
}

pub fn base_time_encoding(
    timestamp: i64,
    d: usize,
    mapper: &TimeSlotMapper,
) -> Result<Vec<f64>, DataError> {
    Ok(encode_slot(mapper.slot(timestamp)?, d))
}

/// Stack base encodings of many timestamps into a `[n×2d]` constant.
pub fn encode_timestamps(
    timestamps: &[i64],
    d: usize,
    mapper: &TimeSlotMapper,
) -> Result<Tensor, DataError> {
    let freqs = frequencies(d);
    let mut cache: HashMap<u64, usize> = HashMap::new();
    let mut data: Vec<f64> = Vec::with_capacity(timestamps.len() * 2 * d);
    for &t in timestamps {
        let slot = mapper.slot(t)?;
        match cache.get(&slot) {
            Some(&row) => data.extend_from_within(row * 2 * d..(row + 1) * 2 * d),
            None => {
                cache.insert(slot, data.len() / (2 * d).max(1));
                push_encoding(&mut data, slot, &freqs, d);
            }
        }
    }
    Ok(Tensor::new(vec![timestamps.len(), 2 * d], data).expect("encoding shape"))
}

/// `e_t = t_base · W^t` for a batch of base encodings `[n×2d]`.
pub fn temporal_projection(
    tape: &mut Tape,
    base: Var,
    projection: Var,
) -> Result<Var, TensorError> {
    tape.matmul(base, projection)
}

/// Embedding leaves used by the context layer.
#[derive(Debug, Clone, Copy)]
pub struct ContextTables {
    pub item: Var,
    pub behavior: Var,
    pub time: Var,
    pub position: Option<Var>,
}

/// Per-event inputs of the context layer.
pub struct ContextInputs<'a> {
    pub items: &'a Indices,
    pub behaviors: &'a Indices,
    /// `[n×2d]` base time encodings.
    pub time_base: Var,
    /// Position of each event inside its window; used only without context.
    pub positions: &'a Indices,
}

/// `E = e_v + e_b + e_t` per event. With `context_off`, behavior and time are
/// replaced by a positional embedding: `E = e_v + p_k`.
pub fn context_embed(
    tape: &mut Tape,
    tables: &ContextTables,
    inputs: &ContextInputs<'_>,
    context_off: bool,
) -> Result<Var, TensorError> {
    let ev = tape.gather_rows(tables.item, inputs.items)?;
    if context_off {
        let table = tables.position.ok_or_else(|| TensorError::Contract {
            op: "context_embed",
            msg: "positional table required without context embedding".into(),
        })?;
        let pk = tape.gather_rows(table, inputs.positions)?;
        return tape.add(ev, pk);
    }
    let eb = tape.gather_rows(tables.behavior, inputs.behaviors)?;
    let et = temporal_projection(tape, inputs.time_base, tables.time)?;
    let s = tape.add(ev, eb)?;
    tape.add(s, et)
}
