//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! A [`Tape`] records every intermediate tensor of a forward pass together
//! with a backward closure that knows how to push gradients from that value
//! to its inputs. Calling [`Tape::backward`] walks the closures in reverse
//! creation order, accumulating gradients for every recorded value;
//! [`Tape::grads_into`] then adds the gradients of parameter leaves back
//! into a [`ParameterStore`].
//!
//! Values are addressed by [`ValueId`] (an index into the tape), so graph
//! structure is explicit and creation order is a valid topological order:
//! an operation's inputs always have smaller ids than its output. Backward
//! closures exploit that ordering to split the gradient buffer into
//! "inputs" (mutable) and "own output" (read-only) without aliasing.

use std::collections::HashMap;

use crate::error::{contract, degenerate, Result};
use crate::numerics::{ParameterStore, Real, RngState, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Tensor], &mut [Tensor])>;

/// Splits the gradient slice at `out` so a backward closure can read its
/// own output gradient while accumulating into earlier (input) slots.
fn split_out(grads: &mut [Tensor], out: usize) -> (&mut [Tensor], &Tensor) {
    let (lo, hi) = grads.split_at_mut(out);
    (lo, &hi[0])
}

/// Reverse-mode autodiff tape.
pub struct Tape {
    values: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
    grads: Option<Vec<Tensor>>,
    param_leaves: Vec<(String, ValueId)>,
    param_memo: HashMap<String, ValueId>,
    recording: bool,
}

impl Tape {
    /// Tape that records backward closures for training.
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
            grads: None,
            param_leaves: Vec::new(),
            param_memo: HashMap::new(),
            recording: true,
        }
    }

    /// Forward-only tape: computes values but records no backward closures.
    /// Used for inference where gradients are never needed.
    pub fn forward_only() -> Self {
        let mut t = Tape::new();
        t.recording = false;
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Id the next pushed value will receive.
    fn next_id(&self) -> usize {
        self.values.len()
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(value);
        self.backs.push(if self.recording { back } else { None });
        id
    }

    /// Record a constant leaf. Gradients flow to it but are discarded.
    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(t, None)
    }

    /// Constant all-zero leaf of the given shape.
    pub fn zeros(&mut self, shape: &[usize]) -> ValueId {
        self.constant(Tensor::zeros(shape))
    }

    /// Leaf holding a copy of a named parameter. Memoized: requesting the
    /// same name twice returns the same leaf, so gradient contributions from
    /// every use site accumulate in one slot.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<ValueId> {
        if let Some(id) = self.param_memo.get(name) {
            return Ok(*id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| contract(format!("unknown parameter '{name}'")))?
            .value
            .clone();
        let id = self.push(value, None);
        self.param_memo.insert(name.to_string(), id);
        self.param_leaves.push((name.to_string(), id));
        Ok(id)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` call with respect to `id`.
    pub fn grad(&self, id: ValueId) -> Result<&Tensor> {
        self.grads
            .as_ref()
            .map(|g| &g[id.0])
            .ok_or_else(|| contract("gradient requested before backward()"))
    }

    fn shape(&self, id: ValueId) -> Vec<usize> {
        self.values[id.0].shape().to_vec()
    }

    // ----- elementwise ------------------------------------------------------

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(contract(format!(
                "add shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.values[a.0].clone();
        out.add_scaled(&self.values[b.0], 1.0);
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                lo[a.0].add_scaled(g, 1.0);
                lo[b.0].add_scaled(g, 1.0);
            })),
        ))
    }

    /// Elementwise difference `a - b` of two same-shape tensors.
    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(contract(format!(
                "sub shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.values[a.0].clone();
        out.add_scaled(&self.values[b.0], -1.0);
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                lo[a.0].add_scaled(g, 1.0);
                lo[b.0].add_scaled(g, -1.0);
            })),
        ))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(contract(format!(
                "mul shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..g.len() {
                    let gi = g.data()[i];
                    lo[a.0].data_mut()[i] += gi * vals[b.0].data()[i];
                    lo[b.0].data_mut()[i] += gi * vals[a.0].data()[i];
                }
            })),
        ))
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale(&mut self, a: ValueId, c: Real) -> ValueId {
        let data = self.values[a.0].data().iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(self.shape(a), data).expect("same shape");
        let out_id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                lo[a.0].add_scaled(g, c);
            })),
        )
    }

    /// N-ary elementwise sum; all inputs must share one shape.
    pub fn add_n(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        if xs.is_empty() {
            return Err(contract("add_n needs at least one input"));
        }
        let shape = self.shape(xs[0]);
        let mut out = Tensor::zeros(&shape);
        for x in xs {
            if self.shape(*x) != shape {
                return Err(contract(format!(
                    "add_n shape mismatch {:?} vs {:?}",
                    shape,
                    self.shape(*x)
                )));
            }
            out.add_scaled(&self.values[x.0], 1.0);
        }
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in &ids {
                    lo[*i].add_scaled(g, 1.0);
                }
            })),
        ))
    }

    /// Rectified linear unit, elementwise.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let data = self.values[a.0].data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::from_vec(self.shape(a), data).expect("same shape");
        let out_id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..g.len() {
                    if vals[out_id].data()[i] > 0.0 {
                        lo[a.0].data_mut()[i] += g.data()[i];
                    }
                }
            })),
        )
    }

    /// Hyperbolic tangent, elementwise.
    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let data = self.values[a.0].data().iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_vec(self.shape(a), data).expect("same shape");
        let out_id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..g.len() {
                    let y = vals[out_id].data()[i];
                    lo[a.0].data_mut()[i] += g.data()[i] * (1.0 - y * y);
                }
            })),
        )
    }

    /// Logistic sigmoid, elementwise.
    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let data = self
            .values[a.0]
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let out = Tensor::from_vec(self.shape(a), data).expect("same shape");
        let out_id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..g.len() {
                    let y = vals[out_id].data()[i];
                    lo[a.0].data_mut()[i] += g.data()[i] * y * (1.0 - y);
                }
            })),
        )
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1/(1-rate)`, so the expected value is unchanged
    /// and evaluation needs no rescaling. Masks are drawn from `rng` at
    /// record time and replayed exactly in backward.
    pub fn dropout(&mut self, a: ValueId, rate: Real, rng: &mut RngState) -> Result<ValueId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<Real> = self.values[a.0]
            .data()
            .iter()
            .map(|_| if rng.uniform() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..g.len() {
                    lo[a.0].data_mut()[i] += g.data()[i] * mask[i];
                }
            })),
        ))
    }

    // ----- linear algebra ---------------------------------------------------

    /// Matrix-vector product `w x` with `w: [m, n]`, `x: [n]` -> `[m]`.
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId> {
        let ws = self.shape(w);
        let xs = self.shape(x);
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(contract(format!(
                "matvec shape mismatch {ws:?} x {xs:?}"
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        let mut data = vec![0.0; m];
        for i in 0..m {
            let row = wv.row(i);
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xv.data()[j];
            }
            data[i] = acc;
        }
        let out = Tensor::from_vec(vec![m], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                // dW[i][j] += g[i] * x[j]; dx[j] += sum_i g[i] * W[i][j]
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        lo[w.0].data_mut()[i * n + j] += gi * vals[x.0].data()[j];
                        lo[x.0].data_mut()[j] += gi * vals[w.0].data()[i * n + j];
                    }
                }
            })),
        ))
    }

    /// Row-wise affine map `x wᵀ + bias` with `x: [n, a]`, `w: [b, a]`,
    /// `bias: [b]` -> `[n, b]`. This is the standard dense layer applied to
    /// each row of `x` independently.
    pub fn dense(&mut self, x: ValueId, w: ValueId, bias: ValueId) -> Result<ValueId> {
        let out = self.linear(x, w)?;
        self.add_row_broadcast(out, bias)
    }

    /// Row-wise linear map `x wᵀ` with `x: [n, a]`, `w: [b, a]` -> `[n, b]`.
    pub fn linear(&mut self, x: ValueId, w: ValueId) -> Result<ValueId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(contract(format!(
                "linear shape mismatch {xs:?} x {ws:?}ᵀ"
            )));
        }
        let (n, a, b) = (xs[0], xs[1], ws[0]);
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let mut data = vec![0.0; n * b];
        for i in 0..n {
            for j in 0..b {
                let mut acc = 0.0;
                for k in 0..a {
                    acc += xv.data()[i * a + k] * wv.data()[j * a + k];
                }
                data[i * b + j] = acc;
            }
        }
        let out = Tensor::from_vec(vec![n, b], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..n {
                    for j in 0..b {
                        let gij = g.data()[i * b + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..a {
                            lo[x.0].data_mut()[i * a + k] +=
                                gij * vals[w.0].data()[j * a + k];
                            lo[w.0].data_mut()[j * a + k] +=
                                gij * vals[x.0].data()[i * a + k];
                        }
                    }
                }
            })),
        ))
    }

    /// Add a `[b]` vector to every row of a `[n, b]` matrix.
    pub fn add_row_broadcast(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(contract(format!(
                "broadcast add shape mismatch {xs:?} + {bs:?}"
            )));
        }
        let (n, b) = (xs[0], xs[1]);
        let mut out = self.values[x.0].clone();
        for i in 0..n {
            for j in 0..b {
                let v = out.at2(i, j) + self.values[bias.0].data()[j];
                out.set2(i, j, v);
            }
        }
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..n {
                    for j in 0..b {
                        let gij = g.data()[i * b + j];
                        lo[x.0].data_mut()[i * b + j] += gij;
                        lo[bias.0].data_mut()[j] += gij;
                    }
                }
            })),
        ))
    }

    /// Affine map on a vector: `w x + b`.
    pub fn affine(&mut self, w: ValueId, x: ValueId, b: ValueId) -> Result<ValueId> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Inner product of two equal-length vectors -> scalar `[1]`.
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 1 || sa != sb {
            return Err(contract(format!("dot shape mismatch {sa:?} . {sb:?}")));
        }
        let v: Real = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .sum();
        let out_id = self.next_id();
        Ok(self.push(
            Tensor::scalar(v),
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let gs = g.data()[0];
                if gs == 0.0 {
                    return;
                }
                for i in 0..vals[a.0].len() {
                    lo[a.0].data_mut()[i] += gs * vals[b.0].data()[i];
                    lo[b.0].data_mut()[i] += gs * vals[a.0].data()[i];
                }
            })),
        ))
    }

    /// Sum of every element -> scalar `[1]`.
    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let v: Real = self.values[a.0].data().iter().sum();
        let out_id = self.next_id();
        self.push(
            Tensor::scalar(v),
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let gs = g.data()[0];
                for x in lo[a.0].data_mut() {
                    *x += gs;
                }
            })),
        )
    }

    /// Elementwise mean of same-shape values.
    pub fn mean_of(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        let sum = self.add_n(xs)?;
        Ok(self.scale(sum, 1.0 / xs.len() as Real))
    }

    // ----- row manipulation -------------------------------------------------

    /// Gather rows `idx` from a `[V, k]` table -> `[idx.len(), k]`.
    pub fn rows(&mut self, table: ValueId, idx: &[usize]) -> Result<ValueId> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(contract(format!("rows() expects a matrix, got {ts:?}")));
        }
        if idx.is_empty() {
            return Err(contract("rows() with an empty index list"));
        }
        let (v, k) = (ts[0], ts[1]);
        for i in idx {
            if *i >= v {
                return Err(contract(format!("row index {i} out of range 0..{v}")));
            }
        }
        let mut data = Vec::with_capacity(idx.len() * k);
        for i in idx {
            data.extend_from_slice(self.values[table.0].row(*i));
        }
        let out = Tensor::from_vec(vec![idx.len(), k], data)?;
        let idx: Vec<usize> = idx.to_vec();
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for (pos, i) in idx.iter().enumerate() {
                    let gr = g.row(pos).to_vec();
                    let dst = lo[table.0].row_mut(*i);
                    for (d, s) in dst.iter_mut().zip(gr) {
                        *d += s;
                    }
                }
            })),
        ))
    }

    /// Gather a single row from a `[V, k]` table as a vector `[k]`.
    pub fn row(&mut self, table: ValueId, i: usize) -> Result<ValueId> {
        let ts = self.shape(table);
        if ts.len() != 2 || i >= ts[0] {
            return Err(contract(format!("row {i} out of range for {ts:?}")));
        }
        let k = ts[1];
        let out = Tensor::from_vec(vec![k], self.values[table.0].row(i).to_vec())?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let gr = g.data().to_vec();
                let dst = lo[table.0].row_mut(i);
                for (d, s) in dst.iter_mut().zip(gr) {
                    *d += s;
                }
            })),
        ))
    }

    /// Concatenate vectors end to end -> `[sum of lengths]`.
    pub fn concat(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        if xs.is_empty() {
            return Err(contract("concat needs at least one input"));
        }
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(xs.len());
        for x in xs {
            if self.shape(*x).len() != 1 {
                return Err(contract("concat expects vectors"));
            }
            let start = data.len();
            data.extend_from_slice(self.values[x.0].data());
            spans.push((x.0, start, data.len()));
        }
        let n = data.len();
        let out = Tensor::from_vec(vec![n], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for (id, start, end) in &spans {
                    let gs = g.data()[*start..*end].to_vec();
                    for (d, s) in lo[*id].data_mut().iter_mut().zip(gs) {
                        *d += s;
                    }
                }
            })),
        ))
    }

    /// Stack `[k]` vectors as the rows of a `[n, k]` matrix.
    pub fn stack_rows(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        if xs.is_empty() {
            return Err(contract("stack_rows needs at least one row"));
        }
        let k = self.shape(xs[0])[0];
        let mut data = Vec::with_capacity(xs.len() * k);
        for x in xs {
            let s = self.shape(*x);
            if s.len() != 1 || s[0] != k {
                return Err(contract(format!(
                    "stack_rows expects [{k}] vectors, got {s:?}"
                )));
            }
            data.extend_from_slice(self.values[x.0].data());
        }
        let out = Tensor::from_vec(vec![xs.len(), k], data)?;
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for (pos, id) in ids.iter().enumerate() {
                    let gr = g.row(pos).to_vec();
                    for (d, s) in lo[*id].data_mut().iter_mut().zip(gr) {
                        *d += s;
                    }
                }
            })),
        ))
    }

    /// Mean over the rows of a `[n, k]` matrix -> `[k]`.
    pub fn mean_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(contract(format!("mean_rows expects a matrix, got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        let mut data = vec![0.0; k];
        for i in 0..n {
            for j in 0..k {
                data[j] += self.values[x.0].at2(i, j);
            }
        }
        let inv = 1.0 / n as Real;
        for d in &mut data {
            *d *= inv;
        }
        let out = Tensor::from_vec(vec![k], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..n {
                    for j in 0..k {
                        lo[x.0].data_mut()[i * k + j] += g.data()[j] * inv;
                    }
                }
            })),
        ))
    }

    /// Interleave the rows of two equal-shape `[n, k]` matrices as
    /// `a_0, b_0, a_1, b_1, ...` -> `[2n, k]`.
    pub fn interleave_rows(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sa != sb {
            return Err(contract(format!(
                "interleave_rows shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        let (n, k) = (sa[0], sa[1]);
        let mut data = Vec::with_capacity(2 * n * k);
        for i in 0..n {
            data.extend_from_slice(self.values[a.0].row(i));
            data.extend_from_slice(self.values[b.0].row(i));
        }
        let out = Tensor::from_vec(vec![2 * n, k], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..n {
                    let ga = g.row(2 * i).to_vec();
                    let gb = g.row(2 * i + 1).to_vec();
                    for (d, s) in lo[a.0].row_mut(i).iter_mut().zip(ga) {
                        *d += s;
                    }
                    for (d, s) in lo[b.0].row_mut(i).iter_mut().zip(gb) {
                        *d += s;
                    }
                }
            })),
        ))
    }

    /// Right-pad a `[n, k]` matrix with zero rows up to `min_rows`. The pad
    /// rows are constants: no gradient flows into them. Returns the input
    /// unchanged when it is already long enough.
    pub fn pad_rows(&mut self, x: ValueId, min_rows: usize) -> Result<ValueId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(contract(format!("pad_rows expects a matrix, got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        if n >= min_rows {
            return Ok(x);
        }
        let mut data = self.values[x.0].data().to_vec();
        data.resize(min_rows * k, 0.0);
        let out = Tensor::from_vec(vec![min_rows, k], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let gs = g.data()[..n * k].to_vec();
                for (d, s) in lo[x.0].data_mut().iter_mut().zip(gs) {
                    *d += s;
                }
            })),
        ))
    }

    /// Weighted sum of matrix rows: `w: [n]`, `rows: [n, k]` -> `[k]`,
    /// `out = Σ_i w_i * rows_i`.
    pub fn weighted_row_sum(&mut self, w: ValueId, rows: ValueId) -> Result<ValueId> {
        let sw = self.shape(w);
        let sr = self.shape(rows);
        if sw.len() != 1 || sr.len() != 2 || sw[0] != sr[0] {
            return Err(contract(format!(
                "weighted_row_sum shape mismatch {sw:?} x {sr:?}"
            )));
        }
        let (n, k) = (sr[0], sr[1]);
        let mut data = vec![0.0; k];
        for i in 0..n {
            let wi = self.values[w.0].data()[i];
            for j in 0..k {
                data[j] += wi * self.values[rows.0].at2(i, j);
            }
        }
        let out = Tensor::from_vec(vec![k], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..k {
                        let gj = g.data()[j];
                        acc += gj * vals[rows.0].at2(i, j);
                        lo[rows.0].data_mut()[i * k + j] += vals[w.0].data()[i] * gj;
                    }
                    lo[w.0].data_mut()[i] += acc;
                }
            })),
        ))
    }

    // ----- convolution and pooling -------------------------------------------

    /// Valid (no-padding) 1-D convolution over the rows of `x: [len, k]`
    /// with `filters: [f, win, k]` and `bias: [f]` -> `[len - win + 1, f]`.
    pub fn conv1d(&mut self, x: ValueId, filters: ValueId, bias: ValueId) -> Result<ValueId> {
        let xs = self.shape(x);
        let fs = self.shape(filters);
        let bs = self.shape(bias);
        if xs.len() != 2 || fs.len() != 3 || bs.len() != 1 {
            return Err(contract(format!(
                "conv1d ranks: x {xs:?}, filters {fs:?}, bias {bs:?}"
            )));
        }
        let (len, k) = (xs[0], xs[1]);
        let (f, win, fk) = (fs[0], fs[1], fs[2]);
        if fk != k || bs[0] != f {
            return Err(contract(format!(
                "conv1d shape mismatch: x {xs:?}, filters {fs:?}, bias {bs:?}"
            )));
        }
        if len < win {
            return Err(degenerate(format!(
                "conv1d input of {len} rows is shorter than window {win}; pad first"
            )));
        }
        let out_len = len - win + 1;
        let mut data = vec![0.0; out_len * f];
        {
            let xv = &self.values[x.0];
            let fv = &self.values[filters.0];
            let bv = &self.values[bias.0];
            for t in 0..out_len {
                for j in 0..f {
                    let mut acc = bv.data()[j];
                    for w in 0..win {
                        for c in 0..k {
                            acc += fv.at3(j, w, c) * xv.at2(t + w, c);
                        }
                    }
                    data[t * f + j] = acc;
                }
            }
        }
        let out = Tensor::from_vec(vec![out_len, f], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for t in 0..out_len {
                    for j in 0..f {
                        let gtj = g.data()[t * f + j];
                        if gtj == 0.0 {
                            continue;
                        }
                        lo[bias.0].data_mut()[j] += gtj;
                        for w in 0..win {
                            for c in 0..k {
                                let fidx = (j * win + w) * k + c;
                                let xidx = (t + w) * k + c;
                                lo[filters.0].data_mut()[fidx] +=
                                    gtj * vals[x.0].data()[xidx];
                                lo[x.0].data_mut()[xidx] +=
                                    gtj * vals[filters.0].data()[fidx];
                            }
                        }
                    }
                }
            })),
        ))
    }

    /// Max over time: column-wise maximum of `x: [len, f]` -> `[f]`.
    /// Ties resolve to the earliest row, which also receives the gradient.
    pub fn max_pool_time(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(contract(format!("max_pool_time expects a matrix, got {s:?}")));
        }
        let (len, f) = (s[0], s[1]);
        if len == 0 {
            return Err(degenerate("max_pool_time over zero rows"));
        }
        let mut data = vec![0.0; f];
        let mut argmax = vec![0usize; f];
        for j in 0..f {
            let mut best = self.values[x.0].at2(0, j);
            let mut at = 0;
            for t in 1..len {
                let v = self.values[x.0].at2(t, j);
                if v > best {
                    best = v;
                    at = t;
                }
            }
            data[j] = best;
            argmax[j] = at;
        }
        let out = Tensor::from_vec(vec![f], data)?;
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                for j in 0..f {
                    lo[x.0].data_mut()[argmax[j] * f + j] += g.data()[j];
                }
            })),
        ))
    }

    // ----- attention and losses ----------------------------------------------

    /// Numerically stable softmax over the `live` positions of a score
    /// vector; masked positions get exactly 0. Shifting all live scores by
    /// a constant leaves the output unchanged.
    pub fn softmax_masked(&mut self, z: ValueId, live: &[bool]) -> Result<ValueId> {
        let s = self.shape(z);
        if s.len() != 1 || s[0] != live.len() {
            return Err(contract(format!(
                "softmax_masked shape mismatch {s:?} with {} mask entries",
                live.len()
            )));
        }
        let n = s[0];
        if !live.iter().any(|l| *l) {
            return Err(degenerate("softmax over an all-masked vector"));
        }
        let zv = self.values[z.0].data();
        let mut max = Real::NEG_INFINITY;
        for i in 0..n {
            if live[i] && zv[i] > max {
                max = zv[i];
            }
        }
        let mut data = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            if live[i] {
                let e = (zv[i] - max).exp();
                data[i] = e;
                total += e;
            }
        }
        for d in &mut data {
            *d /= total;
        }
        let out = Tensor::from_vec(vec![n], data)?;
        let live: Vec<bool> = live.to_vec();
        let out_id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let y = vals[out_id].data();
                let mut dot = 0.0;
                for i in 0..y.len() {
                    if live[i] {
                        dot += g.data()[i] * y[i];
                    }
                }
                for i in 0..y.len() {
                    if live[i] {
                        lo[z.0].data_mut()[i] += y[i] * (g.data()[i] - dot);
                    }
                }
            })),
        ))
    }

    /// Binary cross-entropy of a scalar prediction against a 0/1 label.
    /// The prediction is clamped to `[1e-7, 1 - 1e-7]` before the logs, so
    /// the loss is finite for saturated sigmoids; outside the clamp the
    /// gradient is zero (the clamp is flat there).
    pub fn bce(&mut self, yhat: ValueId, y: Real) -> Result<ValueId> {
        let s = self.shape(yhat);
        if s != vec![1] {
            return Err(contract(format!("bce expects a scalar prediction, got {s:?}")));
        }
        if y != 0.0 && y != 1.0 {
            return Err(contract(format!("bce label must be 0 or 1, got {y}")));
        }
        const LO: Real = 1e-7;
        const HI: Real = 1.0 - 1e-7;
        let raw = self.values[yhat.0].item();
        let p = raw.clamp(LO, HI);
        let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let out_id = self.next_id();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |vals, grads| {
                let (lo, g) = split_out(grads, out_id);
                let raw = vals[yhat.0].item();
                if raw <= LO || raw >= HI {
                    return; // clamped region is flat
                }
                let d = (raw - y) / (raw * (1.0 - raw));
                lo[yhat.0].data_mut()[0] += g.data()[0] * d;
            })),
        ))
    }

    // ----- recurrent cell ------------------------------------------------------

    /// One step of a standard LSTM cell, composed from tape primitives:
    ///
    /// ```text
    /// i = σ(W_xi x + W_hi h + b_i)      f = σ(W_xf x + W_hf h + b_f)
    /// o = σ(W_xo x + W_ho h + b_o)      g = tanh(W_xg x + W_hg h + b_g)
    /// c' = f ∘ c + i ∘ g                h' = o ∘ tanh(c')
    /// ```
    pub fn lstm_cell(
        &mut self,
        x: ValueId,
        h: ValueId,
        c: ValueId,
        p: &LstmParams,
    ) -> Result<(ValueId, ValueId)> {
        let gate = |t: &mut Tape, wx, wh, b| -> Result<ValueId> {
            let a = t.matvec(wx, x)?;
            let d = t.matvec(wh, h)?;
            let s = t.add(a, d)?;
            t.add(s, b)
        };
        let i_pre = gate(self, p.w_xi, p.w_hi, p.b_i)?;
        let i = self.sigmoid(i_pre);
        let f_pre = gate(self, p.w_xf, p.w_hf, p.b_f)?;
        let f = self.sigmoid(f_pre);
        let o_pre = gate(self, p.w_xo, p.w_ho, p.b_o)?;
        let o = self.sigmoid(o_pre);
        let g_pre = gate(self, p.w_xg, p.w_hg, p.b_g)?;
        let g = self.tanh(g_pre);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    // ----- backward -------------------------------------------------------------

    /// Run reverse-mode accumulation from a scalar loss. Gradients for every
    /// recorded value become available through [`Tape::grad`].
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if !self.recording {
            return Err(contract("backward() on a forward-only tape"));
        }
        if self.shape(loss) != vec![1] {
            return Err(contract(format!(
                "backward() needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let lv = self.values[loss.0].item();
        if !lv.is_finite() {
            return Err(crate::error::Error::NonFinite(format!(
                "loss value {lv} before backward"
            )));
        }
        let mut grads: Vec<Tensor> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;
        for i in (0..self.values.len()).rev() {
            if let Some(back) = &self.backs[i] {
                back(&self.values, &mut grads);
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Accumulate the gradients of all parameter leaves into the store.
    pub fn grads_into(&self, store: &mut ParameterStore) -> Result<()> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| contract("grads_into() before backward()"))?;
        for (name, id) in &self.param_leaves {
            store.add_grad(name, &grads[id.0])?;
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Tape handles for one LSTM cell's twelve parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_xi: ValueId,
    pub w_hi: ValueId,
    pub b_i: ValueId,
    pub w_xf: ValueId,
    pub w_hf: ValueId,
    pub b_f: ValueId,
    pub w_xo: ValueId,
    pub w_ho: ValueId,
    pub b_o: ValueId,
    pub w_xg: ValueId,
    pub w_hg: ValueId,
    pub b_g: ValueId,
}

const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

impl LstmParams {
    /// Register the twelve cell parameters under `prefix` with the layer's
    /// input and state width both `dim`.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        dim: usize,
        std: Real,
        rng: &mut RngState,
    ) {
        use crate::numerics::ParamKind;
        for gate in LSTM_GATES {
            store.register_gaussian(
                &format!("{prefix}.w_x{gate}"),
                &[dim, dim],
                std,
                ParamKind::Weight,
                rng,
            );
            store.register_gaussian(
                &format!("{prefix}.w_h{gate}"),
                &[dim, dim],
                std,
                ParamKind::Weight,
                rng,
            );
            store.register_gaussian(
                &format!("{prefix}.b_{gate}"),
                &[dim],
                std,
                ParamKind::Bias,
                rng,
            );
        }
    }

    /// Load the twelve cell parameters registered under `prefix`.
    pub fn load(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> Result<LstmParams> {
        let mut get = |suffix: &str| tape.param(store, &format!("{prefix}.{suffix}"));
        Ok(LstmParams {
            w_xi: get("w_xi")?,
            w_hi: get("w_hi")?,
            b_i: get("b_i")?,
            w_xf: get("w_xf")?,
            w_hf: get("w_hf")?,
            b_f: get("b_f")?,
            w_xo: get("w_xo")?,
            w_ho: get("w_ho")?,
            b_o: get("b_o")?,
            w_xg: get("w_xg")?,
            w_hg: get("w_hg")?,
            b_g: get("b_g")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{rel_err, FD_STEP, FD_TOL};
    use crate::numerics::ParamKind;

    /// Builds `loss = Σ (op_output ∘ fixed_random_weights)` for the op under
    /// test, compares tape gradients of every input element against central
    /// finite differences. Returns the worst relative error.
    fn check_op<F>(seed: u64, inputs: &[Tensor], build: F) -> Real
    where
        F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
    {
        // One recorded pass to learn the output shape and analytic grads.
        let forward = |ins: &[Tensor], record: bool| -> (Tape, Vec<ValueId>, ValueId) {
            let mut tape = if record {
                Tape::new()
            } else {
                Tape::forward_only()
            };
            let ids: Vec<ValueId> = ins.iter().map(|t| tape.constant(t.clone())).collect();
            let out = build(&mut tape, &ids).expect("op failed");
            let mut wrng = RngState::new(seed ^ 0x5EED);
            let w = Tensor::gaussian(tape.value(out).shape(), 0.0, 1.0, &mut wrng);
            let wid = tape.constant(w);
            let prod = tape.mul(out, wid).expect("weighting");
            let loss = tape.sum_all(prod);
            (tape, ids, loss)
        };

        let (mut tape, ids, loss) = forward(inputs, true);
        tape.backward(loss).expect("backward");
        let analytic: Vec<Vec<Real>> = ids
            .iter()
            .map(|id| tape.grad(*id).unwrap().data().to_vec())
            .collect();

        let eval = |ins: &[Tensor]| -> Real {
            let (tape, _, loss) = forward(ins, false);
            tape.value(loss).item()
        };

        let mut worst = 0.0;
        for (which, input) in inputs.iter().enumerate() {
            for idx in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[idx] += FD_STEP;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[idx] -= FD_STEP;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
                let err = rel_err(analytic[which][idx], numeric);
                if err > worst {
                    worst = err;
                }
            }
        }
        worst
    }

    fn randt(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        Tensor::gaussian(shape, 0.0, 1.0, &mut rng)
    }

    // ----- forward behavior ------------------------------------------------

    #[test]
    fn dense_hand_example() {
        // x=[1,1] row, w=[[2,3]], bias=[1]: y = 1*2 + 1*3 + 1 = 6.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(vec![1, 2], vec![2.0, 3.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![1], vec![1.0]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn dense_zero_weights_zero_bias_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[3, 4], 1));
        let w = tape.constant(Tensor::zeros(&[5, 4]));
        let b = tape.constant(Tensor::zeros(&[5]));
        let y = tape.dense(x, w, b).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
        assert_eq!(tape.value(y).shape(), &[3, 5]);
    }

    #[test]
    fn dense_identity_weight_adds_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.set2(i, i, 1.0);
        }
        let w = tape.constant(eye);
        let b = tape.constant(Tensor::from_vec(vec![3], vec![0.5, 0.5, 0.5]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 2.5, 3.5]);
    }

    #[test]
    fn dense_shape_mismatch_is_contract_violation() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[4, 5]));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(
            tape.dense(x, w, b),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn conv1d_averaging_filter_preserves_constant_input() {
        // A single filter holding 1/(win*k) everywhere with zero bias turns a
        // constant input c into a constant output c.
        let (len, k, win) = (6, 3, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![len, k], vec![2.5; len * k]).unwrap());
        let f = tape.constant(
            Tensor::from_vec(vec![1, win, k], vec![1.0 / (win * k) as Real; win * k]).unwrap(),
        );
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv1d(x, f, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[len - win + 1, 1]);
        for v in tape.value(y).data() {
            assert!((v - 2.5).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn conv1d_zero_filters_yield_bias_only() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[5, 2], 2));
        let f = tape.constant(Tensor::zeros(&[3, 2, 2]));
        let b = tape.constant(Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = tape.conv1d(x, f, b).unwrap();
        for t in 0..4 {
            assert_eq!(tape.value(y).row(t), &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn conv1d_shorter_than_window_is_degenerate() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[2, 4], 3));
        let f = tape.constant(randt(&[1, 3, 4], 4));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            tape.conv1d(x, f, b),
            Err(crate::Error::Degenerate(_))
        ));
    }

    #[test]
    fn max_pool_takes_column_maxima() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::from_vec(vec![3, 2], vec![1.0, 5.0, 3.0, 2.0, -1.0, 4.0]).unwrap(),
        );
        let y = tape.max_pool_time(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn max_pool_tie_routes_gradient_to_first_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![2, 1], vec![7.0, 7.0]).unwrap());
        let y = tape.max_pool_time(x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_masked_behaviors() {
        let mut tape = Tape::new();
        // Equal live scores -> uniform over the live positions, zeros elsewhere.
        let z = tape.constant(Tensor::from_vec(vec![4], vec![2.0, 2.0, 9.9, 2.0]).unwrap());
        let live = [true, true, false, true];
        let y = tape.softmax_masked(z, &live).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[2], 0.0);
        for i in [0, 1, 3] {
            assert!((v[i] - 1.0 / 3.0).abs() < 1e-12);
        }
        let total: Real = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance() {
        let base = randt(&[6], 9);
        let mut shifted = base.clone();
        for x in shifted.data_mut() {
            *x += 123.456;
        }
        let live = [true, true, true, false, true, true];
        let mut t1 = Tape::new();
        let z1 = t1.constant(base);
        let y1 = t1.softmax_masked(z1, &live).unwrap();
        let mut t2 = Tape::new();
        let z2 = t2.constant(shifted);
        let y2 = t2.softmax_masked(z2, &live).unwrap();
        for (a, b) in t1.value(y1).data().iter().zip(t2.value(y2).data()) {
            assert!((a - b).abs() < 1e-12, "shift changed softmax: {a} vs {b}");
        }
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        let mut tape = Tape::new();
        let z = tape.constant(randt(&[3], 10));
        assert!(matches!(
            tape.softmax_masked(z, &[false, false, false]),
            Err(crate::Error::Degenerate(_))
        ));
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[20], 11));
        let mut rng = RngState::new(1);
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_preserves_mean_statistically() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![n], vec![1.0; n]).unwrap());
        let mut rng = RngState::new(12);
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let mean: f64 =
            tape.value(y).data().iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        // Survivors are scaled by exactly 1/(1-rate).
        for v in tape.value(y).data() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_invalid_rate_is_contract_violation() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[4], 13));
        let mut rng = RngState::new(1);
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn bce_hand_values() {
        let mut tape = Tape::new();
        let p9 = tape.constant(Tensor::scalar(0.9));
        let l1 = tape.bce(p9, 1.0).unwrap();
        assert!((tape.value(l1).item() - (-(0.9 as Real).ln())).abs() < 1e-12);
        let p2 = tape.constant(Tensor::scalar(0.2));
        let l0 = tape.bce(p2, 0.0).unwrap();
        assert!((tape.value(l0).item() - (-(0.8 as Real).ln())).abs() < 1e-12);
        // Batch mean matches the hand-computed value.
        let mean = tape.mean_of(&[l1, l0]).unwrap();
        let expect = (-(0.9 as Real).ln() - (0.8 as Real).ln()) / 2.0;
        assert!((tape.value(mean).item() - expect).abs() < 1e-12);
        assert!((tape.value(mean).item() - 0.16425) < 1e-4);
    }

    #[test]
    fn bce_saturated_prediction_is_finite() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.0));
        let l = tape.bce(p, 1.0).unwrap();
        assert!(tape.value(l).item().is_finite());
        let p1 = tape.constant(Tensor::scalar(1.0));
        let l1 = tape.bce(p1, 0.0).unwrap();
        assert!(tape.value(l1).item().is_finite());
    }

    #[test]
    fn bce_bad_label_is_contract_violation() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.5));
        assert!(tape.bce(p, 0.5).is_err());
    }

    #[test]
    fn lstm_zero_params_zero_state_gives_zero_h() {
        let dim = 4;
        let mut store = ParameterStore::new();
        let mut rng = RngState::new(1);
        LstmParams::register(&mut store, "lstm", dim, 0.0, &mut rng);
        let mut tape = Tape::new();
        let p = LstmParams::load(&mut tape, &store, "lstm").unwrap();
        let x = tape.constant(randt(&[dim], 14));
        let h = tape.zeros(&[dim]);
        let c = tape.zeros(&[dim]);
        let (h1, c1) = tape.lstm_cell(x, h, c, &p).unwrap();
        // i=f=o=0.5, g=tanh(0)=0 -> c'=0, h'=0.5*tanh(0)=0.
        for v in tape.value(h1).data() {
            assert_eq!(*v, 0.0);
        }
        for v in tape.value(c1).data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn lstm_closed_input_gate_ignores_input() {
        // Input gate bias at -20 makes i ~ 2e-9; with the forget/output gates
        // cut off from x (their W_x* zeroed), h barely depends on x.
        let dim = 3;
        let mut rng = RngState::new(15);
        let mut store = ParameterStore::new();
        LstmParams::register(&mut store, "lstm", dim, 0.1, &mut rng);
        for gate in ["f", "o"] {
            store.get_mut(&format!("lstm.w_x{gate}")).unwrap().value.fill(0.0);
        }
        store.get_mut("lstm.b_i").unwrap().value.fill(-20.0);

        let h_for = |xval: Tensor| -> Vec<Real> {
            let mut tape = Tape::new();
            let p = LstmParams::load(&mut tape, &store, "lstm").unwrap();
            let x = tape.constant(xval);
            let h0 = tape.constant(randt(&[dim], 77));
            let c0 = tape.constant(randt(&[dim], 78));
            let (h1, _) = tape.lstm_cell(x, h0, c0, &p).unwrap();
            tape.value(h1).data().to_vec()
        };
        let a = h_for(randt(&[dim], 16));
        let b = h_for(randt(&[dim], 17));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-7, "input leaked through closed gate");
        }
    }

    #[test]
    fn param_reuse_accumulates_gradients_once_per_leaf() {
        // loss = w.x + w.y uses the parameter twice; its gradient is x + y.
        let mut store = ParameterStore::new();
        store.register(
            "w",
            Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(),
            ParamKind::Weight,
        );
        let mut tape = Tape::new();
        let w1 = tape.param(&store, "w").unwrap();
        let w2 = tape.param(&store, "w").unwrap();
        assert_eq!(w1, w2, "param leaves must be memoized");
        let x = tape.constant(Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let y = tape.constant(Tensor::from_vec(vec![2], vec![10.0, 20.0]).unwrap());
        let a = tape.dot(w1, x).unwrap();
        let b = tape.dot(w2, y).unwrap();
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss).unwrap();
        tape.grads_into(&mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad.data(), &[13.0, 24.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(randt(&[3], 18));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn forward_pass_is_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let x = tape.constant(randt(&[4, 3], 19));
            let w = tape.constant(randt(&[2, 3], 20));
            let b = tape.constant(randt(&[2], 21));
            let d = tape.dense(x, w, b).unwrap();
            let r = tape.relu(d);
            let p = tape.max_pool_time(r).unwrap();
            tape.value(p).data().to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn bounded_inputs_produce_finite_outputs() {
        // Chains of ops on inputs in [-10, 10] stay finite.
        let mut rng = RngState::new(22);
        for trial in 0..50 {
            let mut tape = Tape::new();
            let mut x = randt(&[5, 4], 100 + trial);
            for v in x.data_mut() {
                *v = (*v * 3.0).clamp(-10.0, 10.0);
            }
            let xid = tape.constant(x);
            let w = tape.constant(randt(&[4, 4], 200 + trial));
            let b = tape.constant(randt(&[4], 300 + trial));
            let d = tape.dense(xid, w, b).unwrap();
            let t = tape.tanh(d);
            let s = tape.sigmoid(t);
            let r = tape.relu(s);
            let m = tape.mean_rows(r).unwrap();
            let sm = tape.softmax_masked(m, &[true, true, true, true]).unwrap();
            let loss = tape.sum_all(sm);
            assert!(tape.value(loss).item().is_finite());
            let _ = rng.next_u64();
        }
    }

    // ----- gradient checks ---------------------------------------------------

    #[test]
    fn grad_dense_linear_matvec() {
        for trial in 0..20 {
            let e = check_op(
                trial,
                &[
                    randt(&[3, 4], trial * 3 + 1),
                    randt(&[5, 4], trial * 3 + 2),
                    randt(&[5], trial * 3 + 3),
                ],
                |t, ids| t.dense(ids[0], ids[1], ids[2]),
            );
            assert!(e < FD_TOL, "dense rel err {e}");
            let e = check_op(
                trial + 100,
                &[randt(&[2, 3], trial + 41), randt(&[4, 3], trial + 42)],
                |t, ids| t.linear(ids[0], ids[1]),
            );
            assert!(e < FD_TOL, "linear rel err {e}");
            let e = check_op(
                trial + 200,
                &[randt(&[4, 6], trial + 51), randt(&[6], trial + 52)],
                |t, ids| t.matvec(ids[0], ids[1]),
            );
            assert!(e < FD_TOL, "matvec rel err {e}");
        }
    }

    #[test]
    fn grad_elementwise_ops() {
        for trial in 0..20 {
            let a = randt(&[3, 3], trial + 60);
            let b = randt(&[3, 3], trial + 80);
            let e = check_op(trial, &[a.clone(), b.clone()], |t, ids| t.add(ids[0], ids[1]));
            assert!(e < FD_TOL, "add rel err {e}");
            let e = check_op(trial, &[a.clone(), b.clone()], |t, ids| t.sub(ids[0], ids[1]));
            assert!(e < FD_TOL, "sub rel err {e}");
            let e = check_op(trial, &[a.clone(), b.clone()], |t, ids| t.mul(ids[0], ids[1]));
            assert!(e < FD_TOL, "mul rel err {e}");
            let e = check_op(trial, &[a.clone()], |t, ids| Ok(t.scale(ids[0], -1.7)));
            assert!(e < FD_TOL, "scale rel err {e}");
            let e = check_op(trial, &[a.clone()], |t, ids| Ok(t.tanh(ids[0])));
            assert!(e < FD_TOL, "tanh rel err {e}");
            let e = check_op(trial, &[a.clone()], |t, ids| Ok(t.sigmoid(ids[0])));
            assert!(e < FD_TOL, "sigmoid rel err {e}");
            // ReLU is checked away from its kink.
            let mut off = a.clone();
            for v in off.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1;
                }
            }
            let e = check_op(trial, &[off], |t, ids| Ok(t.relu(ids[0])));
            assert!(e < FD_TOL, "relu rel err {e}");
        }
    }

    #[test]
    fn grad_conv_and_pool() {
        for trial in 0..20 {
            let e = check_op(
                trial,
                &[
                    randt(&[7, 3], trial + 500),
                    randt(&[4, 2, 3], trial + 600),
                    randt(&[4], trial + 700),
                ],
                |t, ids| t.conv1d(ids[0], ids[1], ids[2]),
            );
            assert!(e < FD_TOL, "conv1d rel err {e}");
            // Pooling is checked away from argmax ties (random reals never tie).
            let e = check_op(trial, &[randt(&[6, 4], trial + 800)], |t, ids| {
                t.max_pool_time(ids[0])
            });
            assert!(e < FD_TOL, "max_pool rel err {e}");
        }
    }

    #[test]
    fn grad_row_ops() {
        for trial in 0..20 {
            let e = check_op(
                trial,
                &[randt(&[6, 3], trial + 900)],
                |t, ids| t.rows(ids[0], &[0, 2, 2, 5]),
            );
            assert!(e < FD_TOL, "rows rel err {e}");
            let e = check_op(trial, &[randt(&[6, 3], trial + 950)], |t, ids| {
                t.row(ids[0], 4)
            });
            assert!(e < FD_TOL, "row rel err {e}");
            let e = check_op(
                trial,
                &[randt(&[4], trial + 1000), randt(&[3], trial + 1050)],
                |t, ids| t.concat(ids),
            );
            assert!(e < FD_TOL, "concat rel err {e}");
            let e = check_op(
                trial,
                &[randt(&[3], trial + 1100), randt(&[3], trial + 1150)],
                |t, ids| t.stack_rows(ids),
            );
            assert!(e < FD_TOL, "stack_rows rel err {e}");
            let e = check_op(trial, &[randt(&[5, 4], trial + 1200)], |t, ids| {
                t.mean_rows(ids[0])
            });
            assert!(e < FD_TOL, "mean_rows rel err {e}");
            let e = check_op(
                trial,
                &[randt(&[3, 2], trial + 1300), randt(&[3, 2], trial + 1350)],
                |t, ids| t.interleave_rows(ids[0], ids[1]),
            );
            assert!(e < FD_TOL, "interleave rel err {e}");
            let e = check_op(trial, &[randt(&[2, 3], trial + 1400)], |t, ids| {
                t.pad_rows(ids[0], 5)
            });
            assert!(e < FD_TOL, "pad_rows rel err {e}");
            let e = check_op(
                trial,
                &[randt(&[4], trial + 1500), randt(&[4, 3], trial + 1550)],
                |t, ids| t.weighted_row_sum(ids[0], ids[1]),
            );
            assert!(e < FD_TOL, "weighted_row_sum rel err {e}");
            let e = check_op(
                trial,
                &[randt(&[5], trial + 1600), randt(&[5], trial + 1650)],
                |t, ids| t.dot(ids[0], ids[1]),
            );
            assert!(e < FD_TOL, "dot rel err {e}");
        }
    }

    #[test]
    fn grad_softmax_and_bce() {
        for trial in 0..20 {
            let live = [true, false, true, true, true];
            let e = check_op(trial, &[randt(&[5], trial + 1700)], |t, ids| {
                t.softmax_masked(ids[0], &live)
            });
            assert!(e < FD_TOL, "softmax rel err {e}");
            // Keep the prediction away from the clamp boundaries.
            let p = 0.1 + 0.8 * (trial as Real / 20.0);
            for label in [0.0, 1.0] {
                let e = check_op(trial, &[Tensor::scalar(p)], |t, ids| t.bce(ids[0], label));
                assert!(e < FD_TOL, "bce rel err {e} at p={p} y={label}");
            }
        }
    }

    #[test]
    fn grad_dropout_with_replayed_mask() {
        for trial in 0..10 {
            let e = check_op(trial, &[randt(&[8, 4], trial + 1800)], |t, ids| {
                let mut rng = RngState::new(4242);
                t.dropout(ids[0], 0.5, &mut rng)
            });
            assert!(e < FD_TOL, "dropout rel err {e}");
        }
    }

    #[test]
    fn grad_lstm_cell() {
        let dim = 4;
        for trial in 0..10 {
            let mut rng = RngState::new(trial + 2000);
            let mut store = ParameterStore::new();
            LstmParams::register(&mut store, "lstm", dim, 0.4, &mut rng);
            let names: Vec<String> = store.names().map(|s| s.to_string()).collect();

            let run = |store: &ParameterStore, record: bool| -> (Tape, ValueId) {
                let mut tape = if record {
                    Tape::new()
                } else {
                    Tape::forward_only()
                };
                let p = LstmParams::load(&mut tape, store, "lstm").unwrap();
                let x = tape.constant(randt(&[dim], trial + 2100));
                let h0 = tape.constant(randt(&[dim], trial + 2200));
                let c0 = tape.constant(randt(&[dim], trial + 2300));
                let (h1, c1) = tape.lstm_cell(x, h0, c0, &p).unwrap();
                let both = tape.concat(&[h1, c1]).unwrap();
                let mut wrng = RngState::new(trial ^ 0xF00D);
                let w = tape.constant(Tensor::gaussian(&[2 * dim], 0.0, 1.0, &mut wrng));
                let loss = tape.dot(both, w).unwrap();
                (tape, loss)
            };

            let (mut tape, loss) = run(&store, true);
            tape.backward(loss).unwrap();
            tape.grads_into(&mut store).unwrap();

            let mut f = |s: &ParameterStore| -> Result<Real> {
                let (tape, loss) = run(s, false);
                Ok(tape.value(loss).item())
            };
            let report =
                crate::numerics::gradcheck::check_params(&mut store, &names, FD_STEP, &mut f)
                    .unwrap();
            for (name, err) in report {
                assert!(err < FD_TOL, "lstm param {name} rel err {err}");
            }
        }
    }
}
