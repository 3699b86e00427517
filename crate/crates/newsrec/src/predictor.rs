//! Click prediction head and training policy.
//!
//! The long- and short-term user vectors are fused linearly (u = W·[u_l; u_s]),
//! the fused user vector and the candidate's graph embedding feed a small
//! prediction network (2D → D → D/2 → 1, ReLU hidden layers, sigmoid output),
//! and training minimizes batch-mean binary cross-entropy with L2 weight decay,
//! 1:1 uniform negative sampling, dropout on the prediction-network hidden
//! activations, and early stopping on validation AUC.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, ParamKind, Real, RngState, Tape, ValueId};

/// One labeled (user, candidate) pair. `ts` is the moment the pair is scored
/// at: the recent-click window for the short-term encoder is everything
/// strictly before it. Sampled negatives inherit the timestamp of the
/// positive they pair with, so both sides of the comparison see the same
/// history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSample {
    pub user: usize,
    pub news: usize,
    pub label: bool,
    pub ts: i64,
}

/// Layer widths and dropout rate of the prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    /// Embedding width D shared with the rest of the model.
    pub dim: usize,
    /// Drop probability applied to prediction-network hidden activations
    /// during training (inverted dropout; inference applies none).
    pub dropout: Real,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClickPredictor {
    cfg: PredictorConfig,
}

impl ClickPredictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::contract("predictor dim must be positive"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::contract(format!(
                "dropout must lie in [0, 1), got {}",
                cfg.dropout
            )));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    fn hidden2(&self) -> usize {
        (self.cfg.dim / 2).max(1)
    }

    pub fn register(&self, store: &mut ParameterStore, std: Real, rng: &mut RngState) {
        let d = self.cfg.dim;
        let h2 = self.hidden2();
        store.register_gaussian("pred.fuse.w", &[d, 2 * d], std, ParamKind::Weight, rng);
        store.register_gaussian("pred.dnn.l0.w", &[d, 2 * d], std, ParamKind::Weight, rng);
        store.register_gaussian("pred.dnn.l0.b", &[d], std, ParamKind::Bias, rng);
        store.register_gaussian("pred.dnn.l1.w", &[h2, d], std, ParamKind::Weight, rng);
        store.register_gaussian("pred.dnn.l1.b", &[h2], std, ParamKind::Bias, rng);
        store.register_gaussian("pred.dnn.l2.w", &[1, h2], std, ParamKind::Weight, rng);
        store.register_gaussian("pred.dnn.l2.b", &[1], std, ParamKind::Bias, rng);
    }

    /// u = W·[u_l; u_s] — plain linear map, no bias or nonlinearity.
    pub fn fuse_user(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        u_long: ValueId,
        u_short: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(store, "pred.fuse.w")?;
        let joint = tape.concat(&[u_long, u_short])?;
        tape.matvec(w, joint)
    }

    /// Click probability for (fused user, candidate embedding). Pass a
    /// dropout rng only during training; inference runs the bare network.
    pub fn score(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user: ValueId,
        news: ValueId,
        dropout_rng: Option<&mut RngState>,
    ) -> Result<ValueId> {
        let x = tape.concat(&[user, news])?;
        let w0 = tape.param(store, "pred.dnn.l0.w")?;
        let b0 = tape.param(store, "pred.dnn.l0.b")?;
        let a0 = tape.affine(w0, x, b0)?;
        let mut h0 = tape.relu(a0);
        let w1 = tape.param(store, "pred.dnn.l1.w")?;
        let b1 = tape.param(store, "pred.dnn.l1.b")?;
        if let Some(rng) = dropout_rng {
            if self.cfg.dropout > 0.0 {
                h0 = tape.dropout(h0, self.cfg.dropout, rng)?;
            }
            let a1 = tape.affine(w1, h0, b1)?;
            let mut h1 = tape.relu(a1);
            if self.cfg.dropout > 0.0 {
                h1 = tape.dropout(h1, self.cfg.dropout, rng)?;
            }
            let w2 = tape.param(store, "pred.dnn.l2.w")?;
            let b2 = tape.param(store, "pred.dnn.l2.b")?;
            let a2 = tape.affine(w2, h1, b2)?;
            Ok(tape.sigmoid(a2))
        } else {
            let a1 = tape.affine(w1, h0, b1)?;
            let h1 = tape.relu(a1);
            let w2 = tape.param(store, "pred.dnn.l2.w")?;
            let b2 = tape.param(store, "pred.dnn.l2.b")?;
            let a2 = tape.affine(w2, h1, b2)?;
            Ok(tape.sigmoid(a2))
        }
    }

    /// Batch-mean binary cross-entropy over (prediction, label) pairs.
    /// Predictions are clamped to [1e-7, 1−1e-7] inside the elementary loss,
    /// so saturated outputs stay finite. The L2 penalty of the objective is
    /// applied by the optimizer step (and reported via
    /// [`ParameterStore::l2_penalty`]); it is not part of this value.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        scored: &[(ValueId, bool)],
    ) -> Result<ValueId> {
        if scored.is_empty() {
            return Err(Error::contract("loss needs at least one sample"));
        }
        let mut losses = Vec::with_capacity(scored.len());
        for (yhat, label) in scored {
            losses.push(tape.bce(*yhat, if *label { 1.0 } else { 0.0 })?);
        }
        tape.mean_of(&losses)
    }
}

/// For each positive draw one uniform negative from `news_pool` restricted to
/// news the user never clicked (within the training period). Positives whose
/// user clicked the entire pool are skipped; the second return value counts
/// them so callers can report the diagnostic.
pub fn sample_negatives(
    positives: &[TrainSample],
    news_pool: &[usize],
    clicked: &HashMap<usize, HashSet<usize>>,
    rng: &mut RngState,
) -> (Vec<TrainSample>, usize) {
    let empty = HashSet::new();
    let mut unclicked_cache: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut negatives = Vec::with_capacity(positives.len());
    let mut skipped = 0usize;
    for pos in positives {
        let options = unclicked_cache.entry(pos.user).or_insert_with(|| {
            let seen = clicked.get(&pos.user).unwrap_or(&empty);
            news_pool
                .iter()
                .copied()
                .filter(|d| !seen.contains(d))
                .collect()
        });
        if options.is_empty() {
            skipped += 1;
            continue;
        }
        let news = options[rng.below(options.len())];
        negatives.push(TrainSample {
            user: pos.user,
            news,
            label: false,
            ts: pos.ts,
        });
    }
    (negatives, skipped)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: Real,
    pub val_auc: Real,
    pub val_f1: Real,
}

impl LogRow {
    pub const HEADER: &'static str = "epoch,step,train_loss,val_auc,val_f1";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.epoch, self.step, self.train_loss, self.val_auc, self.val_f1
        )
    }
}

/// Validation-AUC early stopping with best-snapshot restore.
///
/// `observe` returns true once `patience` consecutive validations have failed
/// to improve on the best AUC seen so far; ties keep the earlier epoch, so the
/// restored parameters never come from an epoch after the best one.
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, Real, Vec<u8>)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::contract("early-stopping patience must be positive"));
        }
        Ok(Self {
            patience,
            best: None,
            stale: 0,
        })
    }

    pub fn observe(&mut self, epoch: usize, auc: Real, store: &ParameterStore) -> Result<bool> {
        let improved = match &self.best {
            None => true,
            Some((_, best_auc, _)) => auc > *best_auc,
        };
        if improved {
            let mut bytes = Vec::new();
            store.save(&mut bytes)?;
            self.best = Some((epoch, auc, bytes));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(self.stale >= self.patience)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    pub fn best_auc(&self) -> Option<Real> {
        self.best.as_ref().map(|(_, a, _)| *a)
    }

    /// Parameters as they were at the best validation AUC, if any epoch was
    /// observed.
    pub fn restore(&self) -> Result<Option<ParameterStore>> {
        match &self.best {
            None => Ok(None),
            Some((_, _, bytes)) => Ok(Some(ParameterStore::load(&mut bytes.as_slice())?)),
        }
    }
}
