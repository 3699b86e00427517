//! Named parameter storage, the Adam optimizer, and checkpoint I/O.
//!
//! Parameters live in a sorted map so every walk over them (updates,
//! serialization, regularization) is deterministic. Each parameter carries
//! its gradient accumulator and Adam moment estimates; the optimizer step
//! counter is shared across all parameters.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::numerics::{Real, RngState, Tensor};

/// What a parameter is, which decides whether L2 regularization applies:
/// weight matrices are penalized, bias vectors and embedding tables are not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Transformation matrices and filter banks; L2-regularized.
    Weight,
    /// Bias vectors; not regularized.
    Bias,
    /// Trainable lookup tables; not regularized.
    Embedding,
    /// Lookup table whose row 0 is a frozen all-zero padding row: the row
    /// is excluded from updates and stays exactly zero.
    EmbeddingPadded,
}

/// One named parameter with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
    m: Tensor,
    v: Tensor,
}

/// Adam hyperparameters. The L2 strength `lambda` is applied as an additive
/// gradient term `2·lambda·w` on weight-kind parameters before the moment
/// update; it does not change reported loss values.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub lambda: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda: 0.0,
        }
    }
}

/// Sorted collection of named parameters plus the shared optimizer step.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Register a parameter with explicit initial values.
    pub fn register(&mut self, name: &str, value: Tensor, kind: ParamKind) {
        debug_assert!(
            !self.params.contains_key(name),
            "parameter '{name}' registered twice"
        );
        let mut value = value;
        if kind == ParamKind::EmbeddingPadded {
            value.row_mut(0).fill(0.0);
        }
        let grad = Tensor::zeros(value.shape());
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad,
                kind,
                m,
                v,
            },
        );
    }

    /// Register a parameter initialized from N(0, std^2).
    pub fn register_gaussian(
        &mut self,
        name: &str,
        shape: &[usize],
        std: Real,
        kind: ParamKind,
        rng: &mut RngState,
    ) {
        self.register(name, Tensor::gaussian(shape, 0.0, std, rng), kind);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Names in sorted (deterministic) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Accumulate a gradient contribution for one parameter.
    pub fn add_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| contract(format!("unknown parameter '{name}'")))?;
        if param.value.shape() != grad.shape() {
            return Err(contract(format!(
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                grad.shape(),
                param.value.shape()
            )));
        }
        param.grad.add_scaled(grad, 1.0);
        Ok(())
    }

    /// Reset all gradient accumulators to zero.
    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Sum of squared entries of all weight-kind parameters; the value-side
    /// counterpart of the additive L2 gradient term.
    pub fn l2_penalty(&self, lambda: Real) -> Real {
        if lambda == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for p in self.params.values() {
            if p.kind == ParamKind::Weight {
                for x in p.value.data() {
                    acc += x * x;
                }
            }
        }
        lambda * acc
    }

    /// One Adam update over every parameter from the accumulated gradients,
    /// with bias-corrected moments. L2 adds `2·lambda·w` to weight-kind
    /// gradients before the moment update. Gradients are zeroed afterwards.
    /// A non-finite gradient aborts the step (no parameter is touched) and
    /// reports which parameter was poisoned.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, p) in &self.params {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of '{name}' is not finite; step {} aborted",
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let skip_row0 = p.kind == ParamKind::EmbeddingPadded;
            let row_len = if skip_row0 { p.value.shape()[1] } else { 0 };
            let n = p.value.len();
            for i in 0..n {
                if skip_row0 && i < row_len {
                    continue; // frozen zero padding row
                }
                let mut g = p.grad.data()[i];
                if p.kind == ParamKind::Weight {
                    g += 2.0 * cfg.lambda * p.value.data()[i];
                }
                let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    // ----- checkpoint I/O ----------------------------------------------------

    /// Serialize parameter values (names, shapes, row-major data) to a
    /// versioned binary stream. Values are written as 64-bit IEEE bits, so
    /// a save/load cycle is bit-exact at the default precision.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, p) in &self.params {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[kind_tag(p.kind)])?;
            w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
            for d in p.value.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for x in p.value.data() {
                w.write_all(&(*x as f64).to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)
    }

    /// Load a checkpoint written by [`ParameterStore::save`]. Gradients and
    /// optimizer moments start fresh.
    pub fn load<R: Read>(r: &mut R) -> Result<ParameterStore> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a parameter checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = read_u64(r)? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Data("checkpoint parameter name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let kind = kind_from_tag(tag[0])?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_bits(u64::from_le_bytes(b)) as Real);
            }
            store.register(&name, Tensor::from_vec(shape, data)?, kind);
        }
        Ok(store)
    }

    pub fn load_from_path(path: &Path) -> Result<ParameterStore> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        ParameterStore::load(&mut f)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NWSRPRM\0";
const CHECKPOINT_VERSION: u32 = 1;

fn kind_tag(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Weight => 0,
        ParamKind::Bias => 1,
        ParamKind::Embedding => 2,
        ParamKind::EmbeddingPadded => 3,
    }
}

fn kind_from_tag(tag: u8) -> Result<ParamKind> {
    Ok(match tag {
        0 => ParamKind::Weight,
        1 => ParamKind::Bias,
        2 => ParamKind::Embedding,
        3 => ParamKind::EmbeddingPadded,
        other => return Err(Error::Data(format!("unknown parameter kind tag {other}"))),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
