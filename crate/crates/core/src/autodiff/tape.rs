//! Reverse-mode differentiation over a dynamically built operation tape.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order; `backward` walks it once in reverse. A tape lives for
//! one forward/backward pass and is dropped afterwards.

use std::sync::Arc;

use super::Tensor;
use crate::error::TensorError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shared index list used by gather/scatter style ops.
pub type Indices = Arc<[usize]>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    MaskedSoftmaxRows { input: Var },
    SegmentSoftmax { input: Var, offsets: Indices },
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { table: Var, idx: Indices },
    ScatterAddRows { src: Var, idx: Indices },
    ReduceSum { input: Var, axis: usize },
    SumAll(Var),
    RowDot(Var, Var),
    ScaleRows(Var, Var),
    Reshape(Var),
    SelectRows { keep: Arc<[bool]>, a: Var, b: Var },
    SliceCols { input: Var, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph recorded during a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn need_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    t.dims2().ok_or_else(|| TensorError::Contract {
        op,
        msg: format!("expected a matrix, got shape {:?}", t.shape()),
    })
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<(), TensorError> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(TensorError::Index { op, index, bound }),
        None => Ok(()),
    }
}

/// `c = a·b + beta·c` where `a` is `[m×k]` and `b` is `[k×n]`, each either
/// row-major or (when the flag is set) stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the `m*k`, `k*n` and `m*n`
    // elements checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, false, b, false, 0.0, &mut out);
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Gradient of softmax given its output `y` and upstream `g`, written into `out`.
fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, yi), gi) in out.iter_mut().zip(y).zip(g) {
        *o += yi * (gi - dot);
    }
}

/// Strided views over a rank-1 or rank-2 tensor for reductions along an axis.
/// Returns (outer, len, stride) such that lane `o` has elements
/// `base(o) + i * stride` for `i in 0..len`.
fn lanes(shape: &[usize], axis: usize) -> Option<(usize, usize, usize, bool)> {
    match (shape, axis) {
        (&[n], 0) => Some((1, n, 1, true)),
        (&[r, c], 0) => Some((c, r, c, false)),
        (&[r, c], 1) => Some((r, c, 1, true)),
        _ => None,
    }
}

fn lane_base(o: usize, len: usize, row_major_lane: bool) -> usize {
    if row_major_lane {
        o * len
    } else {
        o
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Trainable input whose gradient is collected by `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf; zeros if the leaf was never reached.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.leaf_grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shape(v)),
        }
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = need_rank2("matmul", av)?;
        let (k2, n) = need_rank2("matmul", bv)?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = need_rank2("transpose", av)?;
        let t = Tensor::new(vec![c, r], transpose_raw(av.data(), r, c))?;
        Ok(self.derived(t, Op::Transpose(a), &[a]))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op_name, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.derived(t, Op::Scale(a, c), &[a])
    }

    /// Add a constant to every entry.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x + c).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.derived(t, Op::AddScalar(a), &[a])
    }

    /// `x[n×m] + bias[m]` added to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, m) = need_rank2("add_bias", xv)?;
        if bv.shape() != [m] {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.derived(t, Op::Relu(a), &[a])
    }

    /// Max-stabilized softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (outer, len, stride, rml) =
            lanes(av.shape(), axis).ok_or_else(|| TensorError::Contract {
                op: "softmax",
                msg: format!("axis {axis} invalid for shape {:?}", av.shape()),
            })?;
        let mut data = av.data().to_vec();
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            let base = lane_base(o, len, rml);
            for i in 0..len {
                lane[i] = data[base + i * stride];
            }
            softmax_in_place(&mut lane);
            for i in 0..len {
                data[base + i * stride] = lane[i];
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::Softmax { input: a, axis }, &[a]))
    }

    /// Row-wise softmax of `x[n×m]` restricted to entries where `mask` is true.
    /// Masked entries get exactly zero weight; a fully masked row is all zeros.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (n, m) = need_rank2("masked_softmax_rows", av)?;
        if mask.len() != n * m {
            return Err(TensorError::Contract {
                op: "masked_softmax_rows",
                msg: format!("mask has {} entries for shape {:?}", mask.len(), av.shape()),
            });
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let row = &av.data()[i * m..(i + 1) * m];
            let keep = &mask[i * m..(i + 1) * m];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = &mut data[i * m..(i + 1) * m];
            let mut total = 0.0;
            for j in 0..m {
                if keep[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        let t = Tensor::new(vec![n, m], data)?;
        Ok(self.derived(t, Op::MaskedSoftmaxRows { input: a }, &[a]))
    }

    /// Softmax of a vector independently within each segment
    /// `[offsets[s], offsets[s+1])`. `offsets` starts at 0 and ends at the length.
    pub fn segment_softmax(&mut self, a: Var, offsets: &Indices) -> Result<Var, TensorError> {
        let av = self.value(a);
        let n = av.numel();
        if av.rank() != 1
            || offsets.first() != Some(&0)
            || offsets.last() != Some(&n)
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(TensorError::Contract {
                op: "segment_softmax",
                msg: format!("offsets do not partition shape {:?}", av.shape()),
            });
        }
        let mut data = av.data().to_vec();
        for w in offsets.windows(2) {
            if w[0] < w[1] {
                softmax_in_place(&mut data[w[0]..w[1]]);
            }
        }
        let t = Tensor::new(vec![n], data)?;
        let op = Op::SegmentSoftmax {
            input: a,
            offsets: offsets.clone(),
        };
        Ok(self.derived(t, op, &[a]))
    }

    /// Concatenate rank-1 tensors along axis 0, or rank-2 tensors along axis 0 or 1.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| TensorError::Contract {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.value(*first).shape().to_vec();
        for v in &inputs[1..] {
            let s = self.value(*v).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(shape_err("concat", self.value(*first), self.value(*v)));
            }
        }
        let (shape, data) = match (base.len(), axis) {
            (1, 0) | (2, 0) => {
                let mut data = Vec::new();
                let mut rows = 0;
                for v in inputs {
                    let t = self.value(*v);
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = base.clone();
                shape[0] = rows;
                (shape, data)
            }
            (2, 1) => {
                let rows = base[0];
                let total: usize = inputs.iter().map(|v| self.value(*v).shape()[1]).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for v in inputs {
                        data.extend_from_slice(self.value(*v).row(r));
                    }
                }
                (vec![rows, total], data)
            }
            _ => {
                return Err(TensorError::Contract {
                    op: "concat",
                    msg: format!("axis {axis} invalid for shape {base:?}"),
                })
            }
        };
        let t = Tensor::new(shape, data)?;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.derived(t, op, inputs))
    }

    /// Rows `idx` of a `[V×d]` table, in order; repeated indices repeat rows.
    pub fn gather_rows(&mut self, table: Var, idx: &Indices) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (v, d) = need_rank2("gather_rows", tv)?;
        check_indices("gather_rows", idx, v)?;
        if idx.is_empty() {
            return Err(TensorError::Contract {
                op: "gather_rows",
                msg: "empty index list".into(),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![idx.len(), d], data)?;
        let op = Op::GatherRows {
            table,
            idx: idx.clone(),
        };
        Ok(self.derived(t, op, &[table]))
    }

    /// `out[idx[i]] += src[i]` into a fresh `[n×d]` zero matrix.
    pub fn scatter_add_rows(
        &mut self,
        src: Var,
        idx: &Indices,
        n: usize,
    ) -> Result<Var, TensorError> {
        let sv = self.value(src);
        let (rows, d) = need_rank2("scatter_add_rows", sv)?;
        if rows != idx.len() {
            return Err(TensorError::Contract {
                op: "scatter_add_rows",
                msg: format!("{} indices for {rows} rows", idx.len()),
            });
        }
        check_indices("scatter_add_rows", idx, n)?;
        let mut data = vec![0.0; n * d];
        for (r, &target) in idx.iter().enumerate() {
            let dst = &mut data[target * d..(target + 1) * d];
            for (o, s) in dst.iter_mut().zip(sv.row(r)) {
                *o += s;
            }
        }
        let t = Tensor::new(vec![n, d], data)?;
        let op = Op::ScatterAddRows {
            src,
            idx: idx.clone(),
        };
        Ok(self.derived(t, op, &[src]))
    }

    /// Sum along one axis; a rank-2 input yields a rank-1 result.
    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (outer, len, stride, rml) =
            lanes(av.shape(), axis).ok_or_else(|| TensorError::Contract {
                op: "reduce_sum",
                msg: format!("axis {axis} invalid for shape {:?}", av.shape()),
            })?;
        let data: Vec<f64> = (0..outer)
            .map(|o| {
                let base = lane_base(o, len, rml);
                (0..len).map(|i| av.data()[base + i * stride]).sum()
            })
            .collect();
        let t = Tensor::vector(data);
        Ok(self.derived(t, Op::ReduceSum { input: a, axis }, &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Row-wise dot products of two `[n×m]` matrices, giving `[n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = need_rank2("row_dot", av)?;
        if av.shape() != bv.shape() {
            return Err(shape_err("row_dot", av, bv));
        }
        let data = (0..n)
            .map(|i| {
                av.data()[i * m..(i + 1) * m]
                    .iter()
                    .zip(&bv.data()[i * m..(i + 1) * m])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        Ok(self.derived(Tensor::vector(data), Op::RowDot(a, b), &[a, b]))
    }

    /// Multiply row `i` of `x[n×m]` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (n, m) = need_rank2("scale_rows", xv)?;
        if sv.shape() != [n] {
            return Err(shape_err("scale_rows", xv, sv));
        }
        let mut data = xv.data().to_vec();
        for (row, f) in data.chunks_mut(m).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let t = Tensor::new(vec![n, m], data)?;
        Ok(self.derived(t, Op::ScaleRows(x, s), &[x, s]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.derived(t, Op::Reshape(a), &[a]))
    }

    /// Row `i` of `a` where `keep[i]`, otherwise row `i` of `b`.
    pub fn select_rows(&mut self, keep: &Arc<[bool]>, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = need_rank2("select_rows", av)?;
        if av.shape() != bv.shape() || keep.len() != n {
            return Err(shape_err("select_rows", av, bv));
        }
        let mut data = Vec::with_capacity(n * m);
        for (i, &k) in keep.iter().enumerate() {
            data.extend_from_slice(if k { av.row(i) } else { bv.row(i) });
        }
        let t = Tensor::new(vec![n, m], data)?;
        let op = Op::SelectRows {
            keep: keep.clone(),
            a,
            b,
        };
        Ok(self.derived(t, op, &[a, b]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (n, m) = need_rank2("slice_cols", av)?;
        if len == 0 || start + len > m {
            return Err(TensorError::Contract {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of {m}", start + len),
            });
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&av.row(i)[start..start + len]);
        }
        let t = Tensor::new(vec![n, len], data)?;
        Ok(self.derived(t, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Back-propagate from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let slot = &mut self.leaf_grads[i];
                match slot {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        let shape = self.nodes[i].value.shape().to_vec();
                        *slot = Some(Tensor::new(shape, g).expect("grad shape"));
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.row_len();
                // dA = G · Bᵀ, dB = Aᵀ · G, accumulated in place
                acc(*a, &mut |s| {
                    gemm(m, n, k, g, false, bv.data(), true, 1.0, s)
                });
                acc(*b, &mut |s| {
                    gemm(k, m, n, av.data(), true, g, false, 1.0, s)
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let ga = transpose_raw(g, c, r);
                acc(*a, &mut |s| {
                    s.iter_mut().zip(&ga).for_each(|(x, y)| *x += y)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for ((x, gi), bi) in s.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, gi), ai) in s.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) | Op::SumAll(a) => {
                if let Op::SumAll(_) = node.op {
                    acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0]));
                } else {
                    acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                let m = self.value(*b).numel();
                acc(*b, &mut |s| {
                    for row in g.chunks(m) {
                        s.iter_mut().zip(row).for_each(|(p, q)| *p += q);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |s| {
                    for ((x, gi), ai) in s.iter_mut().zip(g).zip(av) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, len, stride, rml) = lanes(out.shape(), *axis).unwrap();
                let y = out.data();
                acc(*input, &mut |s| {
                    let mut yl = vec![0.0; len];
                    let mut gl = vec![0.0; len];
                    let mut ol = vec![0.0; len];
                    for o in 0..outer {
                        let base = lane_base(o, len, rml);
                        for k in 0..len {
                            yl[k] = y[base + k * stride];
                            gl[k] = g[base + k * stride];
                            ol[k] = 0.0;
                        }
                        softmax_backward(&yl, &gl, &mut ol);
                        for k in 0..len {
                            s[base + k * stride] += ol[k];
                        }
                    }
                });
            }
            Op::MaskedSoftmaxRows { input } => {
                let m = out.row_len();
                let y = out.data();
                acc(*input, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(m).zip(y.chunks(m)).zip(g.chunks(m)) {
                        softmax_backward(yr, gr, sr);
                    }
                });
            }
            Op::SegmentSoftmax { input, offsets } => {
                let y = out.data();
                acc(*input, &mut |s| {
                    for w in offsets.windows(2) {
                        let r = w[0]..w[1];
                        softmax_backward(&y[r.clone()], &g[r.clone()], &mut s[r]);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for v in inputs {
                        let n = self.value(*v).numel();
                        let part = &g[offset..offset + n];
                        acc(*v, &mut |s| {
                            s.iter_mut().zip(part).for_each(|(x, y)| *x += y)
                        });
                        offset += n;
                    }
                } else {
                    let total = out.row_len();
                    let mut col = 0;
                    for v in inputs {
                        let w = self.value(*v).row_len();
                        acc(*v, &mut |s| {
                            for (sr, gr) in s.chunks_mut(w).zip(g.chunks(total)) {
                                sr.iter_mut()
                                    .zip(&gr[col..col + w])
                                    .for_each(|(x, y)| *x += y);
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                let d = out.row_len();
                acc(*table, &mut |s| {
                    for (r, &t) in idx.iter().enumerate() {
                        s[t * d..(t + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ScatterAddRows { src, idx } => {
                let d = out.row_len();
                acc(*src, &mut |s| {
                    for (r, &t) in idx.iter().enumerate() {
                        s[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&g[t * d..(t + 1) * d])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ReduceSum { input, axis } => {
                let shape = self.value(*input).shape().to_vec();
                let (outer, len, stride, rml) = lanes(&shape, *axis).unwrap();
                acc(*input, &mut |s| {
                    for (o, &go) in g.iter().enumerate().take(outer) {
                        let base = lane_base(o, len, rml);
                        for k in 0..len {
                            s[base + k * stride] += go;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let m = av.row_len();
                acc(*a, &mut |s| {
                    for (r, gi) in g.iter().enumerate() {
                        for c in 0..m {
                            s[r * m + c] += gi * bv.data()[r * m + c];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for (r, gi) in g.iter().enumerate() {
                        for c in 0..m {
                            s[r * m + c] += gi * av.data()[r * m + c];
                        }
                    }
                });
            }
            Op::ScaleRows(x, f) => {
                let (xv, fv) = (self.value(*x), self.value(*f));
                let m = xv.row_len();
                acc(*x, &mut |s| {
                    for (r, fi) in fv.data().iter().enumerate() {
                        for c in 0..m {
                            s[r * m + c] += fi * g[r * m + c];
                        }
                    }
                });
                acc(*f, &mut |s| {
                    for (r, si) in s.iter_mut().enumerate() {
                        *si += (0..m)
                            .map(|c| g[r * m + c] * xv.data()[r * m + c])
                            .sum::<f64>();
                    }
                });
            }
            Op::SelectRows { keep, a, b } => {
                let m = out.row_len();
                acc(*a, &mut |s| {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            s[r * m..(r + 1) * m]
                                .iter_mut()
                                .zip(&g[r * m..(r + 1) * m])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            s[r * m..(r + 1) * m]
                                .iter_mut()
                                .zip(&g[r * m..(r + 1) * m])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                });
            }
            Op::SliceCols { input, start } => {
                let len = out.row_len();
                let m = self.value(*input).row_len();
                acc(*input, &mut |s| {
                    for (sr, gr) in s.chunks_mut(m).zip(g.chunks(len)) {
                        sr[*start..*start + len]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
        }
    }
}
