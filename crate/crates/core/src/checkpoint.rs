//! Binary persistence of parameters and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TGT1" u32:count { u32:name_len name u32:rank u32:dim* f64:value* }*count
//! [ "OPT1" u64:step u64:epoch f64:learning_rate f64:decay
//!   u32:count { entry as above }*count ]
//! ```
//!
//! Optimizer entries are named `first.<param>` and `second.<param>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::CheckpointError;
use crate::model::ModelParameters;
use crate::train::OptimizerState;

pub const MAGIC: [u8; 4] = *b"TGT1";
pub const OPTIMIZER_MAGIC: [u8; 4] = *b"OPT1";

fn put_entry(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend((name.len() as u32).to_le_bytes());
    buf.extend(name.as_bytes());
    buf.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u32).to_le_bytes());
    }
    for &x in t.data() {
        buf.extend(x.to_le_bytes());
    }
}

pub fn encode(params: &ModelParameters, state: Option<&OptimizerState>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend((params.len() as u32).to_le_bytes());
    for (name, t) in params.entries() {
        put_entry(&mut buf, name, t);
    }
    if let Some(s) = state {
        buf.extend(OPTIMIZER_MAGIC);
        buf.extend(s.step.to_le_bytes());
        buf.extend((s.epoch as u64).to_le_bytes());
        buf.extend(s.learning_rate.to_le_bytes());
        buf.extend(s.decay.to_le_bytes());
        buf.extend(((s.first.len() + s.second.len()) as u32).to_le_bytes());
        for (name, t) in params.names().zip(&s.first) {
            put_entry(&mut buf, &format!("first.{name}"), t);
        }
        for (name, t) in params.names().zip(&s.second) {
            put_entry(&mut buf, &format!("second.{name}"), t);
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn corrupt(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn entry(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| self.corrupt("parameter name is not UTF-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.corrupt(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= (self.buf.len() - self.pos) / 8)
            .ok_or(CheckpointError::Truncated {
                offset: self.buf.len(),
            })?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        let t = Tensor::new(shape, data).map_err(|e| self.corrupt(e.to_string()))?;
        Ok((name, t))
    }

    fn entries(&mut self) -> Result<Vec<(String, Tensor)>, CheckpointError> {
        let count = self.u32()? as usize;
        (0..count).map(|_| self.entry()).collect()
    }
}

pub fn decode(buf: &[u8]) -> Result<(ModelParameters, Option<OptimizerState>), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4).map_err(|_| CheckpointError::Magic {
        expected: MAGIC,
        found: buf.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(CheckpointError::Magic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let params = ModelParameters::from_entries(r.entries()?);
    if r.pos == buf.len() {
        return Ok((params, None));
    }
    if r.take(4)? != OPTIMIZER_MAGIC {
        return Err(CheckpointError::Corrupt {
            offset: r.pos - 4,
            msg: "expected optimizer section".into(),
        });
    }
    let step = r.u64()?;
    let epoch = r.u64()? as usize;
    let learning_rate = r.f64()?;
    let decay = r.f64()?;
    let moments = r.entries()?;
    if r.pos != buf.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    let n = params.len();
    if moments.len() != 2 * n {
        return Err(CheckpointError::Mismatch(format!(
            "{} optimizer moments for {n} parameters",
            moments.len()
        )));
    }
    for ((name, t), (i, (mname, m))) in params
        .entries()
        .iter()
        .cycle()
        .zip(moments.iter().enumerate())
    {
        let prefix = if i < n { "first" } else { "second" };
        if *mname != format!("{prefix}.{name}") || m.shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "optimizer entry `{mname}` does not match parameter `{name}`"
            )));
        }
    }
    let mut moments = moments.into_iter().map(|(_, t)| t);
    let first = moments.by_ref().take(n).collect();
    let second = moments.collect();
    Ok((
        params,
        Some(OptimizerState {
            first,
            second,
            step,
            epoch,
            learning_rate,
            decay,
        }),
    ))
}

pub fn save(
    path: &Path,
    params: &ModelParameters,
    state: Option<&OptimizerState>,
) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(params, state))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParameters, Option<OptimizerState>), CheckpointError> {
    decode(&fs::read(path)?)
}
