//! Short-term interest encoder over a user's recent clicks.
//!
//! The last `l` clicked news (as text feature vectors, zero-padded at the end
//! when history is short) are summarized in two ways:
//!
//! - **content attention**: each click is scored against the candidate news
//!   being ranked, softmax over the real (non-padded) positions, and the
//!   clicks are mixed by those weights into u_c;
//! - **sequence encoding**: an LSTM runs over the click sequence, each hidden
//!   state attends over its predecessors (own attention parameters), and the
//!   resulting s_1..s_l stack is integrated by a window-3 CNN with max-pool
//!   and a dense layer into s̃.
//!
//! The short-term interest is the linear fusion u_s = W·[u_c; s̃].

use crate::error::{Error, Result};
use crate::numerics::{LstmParams, ParamKind, ParameterStore, Real, RngState, Tape, ValueId};

/// Width and sequence-length layout of the short-term encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermConfig {
    /// Feature width D; clicks, hidden states, and u_s all live in R^D.
    pub dim: usize,
    /// Number of latest clicks considered (sequences are padded to this).
    pub seq_len: usize,
    /// Sequence-CNN window.
    pub conv_window: usize,
}

impl Default for ShortTermConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            seq_len: 10,
            conv_window: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShortTermEncoder {
    cfg: ShortTermConfig,
}

impl ShortTermEncoder {
    pub fn new(cfg: ShortTermConfig) -> Result<Self> {
        if cfg.dim == 0 || cfg.seq_len == 0 || cfg.conv_window == 0 {
            return Err(Error::contract(
                "short-term dimensions and lengths must be positive",
            ));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ShortTermConfig {
        &self.cfg
    }

    pub fn register(&self, store: &mut ParameterStore, std: Real, rng: &mut RngState) {
        let d = self.cfg.dim;
        for prefix in ["short.att_content", "short.att_seq"] {
            store.register_gaussian(
                &format!("{prefix}.w_clicked"),
                &[d, d],
                std,
                ParamKind::Weight,
                rng,
            );
            store.register_gaussian(&format!("{prefix}.b_clicked"), &[d], std, ParamKind::Bias, rng);
            store.register_gaussian(
                &format!("{prefix}.w_cand"),
                &[d, d],
                std,
                ParamKind::Weight,
                rng,
            );
            store.register_gaussian(&format!("{prefix}.b_cand"), &[d], std, ParamKind::Bias, rng);
            store.register_gaussian(&format!("{prefix}.v"), &[d], std, ParamKind::Weight, rng);
        }
        LstmParams::register(store, "short.lstm", d, std, rng);
        store.register_gaussian(
            "short.seq_conv.filters",
            &[d, self.cfg.conv_window, d],
            std,
            ParamKind::Weight,
            rng,
        );
        store.register_gaussian("short.seq_conv.bias", &[d], std, ParamKind::Bias, rng);
        store.register_gaussian("short.seq_fuse.w", &[d, d], std, ParamKind::Weight, rng);
        store.register_gaussian("short.seq_fuse.b", &[d], std, ParamKind::Bias, rng);
        store.register_gaussian("short.fuse.w", &[d, 2 * d], std, ParamKind::Weight, rng);
    }

    /// Shared attention shape: score every item j as vᵀ(u + u_j) with
    /// u_j = tanh(W'·item_j + b') and u = tanh(W·candidate + b), softmax the
    /// scores over the live positions, and mix `items` by those weights.
    /// Returns the mixture and the weights; an all-masked input yields a zero
    /// mixture and no weights.
    fn attention(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        prefix: &str,
        items: &[ValueId],
        live: &[bool],
        candidate: ValueId,
    ) -> Result<(ValueId, Option<ValueId>)> {
        if items.len() != live.len() {
            return Err(Error::contract("attention mask length must match items"));
        }
        if !live.iter().any(|l| *l) {
            return Ok((tape.zeros(&[self.cfg.dim]), None));
        }
        let w_clicked = tape.param(store, &format!("{prefix}.w_clicked"))?;
        let b_clicked = tape.param(store, &format!("{prefix}.b_clicked"))?;
        let w_cand = tape.param(store, &format!("{prefix}.w_cand"))?;
        let b_cand = tape.param(store, &format!("{prefix}.b_cand"))?;
        let v = tape.param(store, &format!("{prefix}.v"))?;

        let cand_pre = tape.affine(w_cand, candidate, b_cand)?;
        let u = tape.tanh(cand_pre);
        let mut scores = Vec::with_capacity(items.len());
        for item in items {
            let pre = tape.affine(w_clicked, *item, b_clicked)?;
            let u_j = tape.tanh(pre);
            let sum = tape.add(u, u_j)?;
            scores.push(tape.dot(v, sum)?);
        }
        let stacked = tape.concat(&scores)?;
        let alpha = tape.softmax_masked(stacked, live)?;
        let rows = tape.stack_rows(items)?;
        let mixture = tape.weighted_row_sum(alpha, rows)?;
        Ok((mixture, Some(alpha)))
    }

    /// Candidate-aware mixture of the clicked news vectors (u_c). Padded
    /// positions get exactly zero weight; an all-padded history yields the
    /// zero vector and no weights.
    pub fn content_attention(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        clicks: &[ValueId],
        live: &[bool],
        candidate: ValueId,
    ) -> Result<(ValueId, Option<ValueId>)> {
        self.attention(tape, store, "short.att_content", clicks, live, candidate)
    }

    /// Sequential summary s̃: LSTM over the full padded sequence, per-step
    /// attention of h_j over h_1..h_{j−1} (s_1 = h_1), then conv + max-pool +
    /// dense over the stacked s_1..s_l.
    pub fn sequence_encode(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        clicks: &[ValueId],
    ) -> Result<ValueId> {
        if clicks.is_empty() {
            return Err(Error::contract("sequence encoder needs at least one step"));
        }
        let d = self.cfg.dim;
        let lstm = LstmParams::load(tape, store, "short.lstm")?;
        let mut h = tape.zeros(&[d]);
        let mut c = tape.zeros(&[d]);
        let mut hidden = Vec::with_capacity(clicks.len());
        for x in clicks {
            let (nh, nc) = tape.lstm_cell(*x, h, c, &lstm)?;
            h = nh;
            c = nc;
            hidden.push(h);
        }

        let mut summaries = Vec::with_capacity(hidden.len());
        summaries.push(hidden[0]);
        for j in 1..hidden.len() {
            let previous = &hidden[..j];
            let live = vec![true; j];
            let (s_j, _) =
                self.attention(tape, store, "short.att_seq", previous, &live, hidden[j])?;
            summaries.push(s_j);
        }

        let stacked = tape.stack_rows(&summaries)?;
        let padded = tape.pad_rows(stacked, self.cfg.conv_window)?;
        let filters = tape.param(store, "short.seq_conv.filters")?;
        let conv_bias = tape.param(store, "short.seq_conv.bias")?;
        let conv = tape.conv1d(padded, filters, conv_bias)?;
        let pooled = tape.max_pool_time(conv)?;
        let w = tape.param(store, "short.seq_fuse.w")?;
        let b = tape.param(store, "short.seq_fuse.b")?;
        tape.affine(w, pooled, b)
    }

    /// Short-term interest u_s = W·[u_c; s̃] (linear, no bias).
    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        u_c: ValueId,
        s_tilde: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(store, "short.fuse.w")?;
        let joint = tape.concat(&[u_c, s_tilde])?;
        tape.matvec(w, joint)
    }

    /// Full short-term pass for one (history, candidate) pair.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        clicks: &[ValueId],
        live: &[bool],
        candidate: ValueId,
    ) -> Result<ValueId> {
        let (u_c, _) = self.content_attention(tape, store, clicks, live, candidate)?;
        let s_tilde = self.sequence_encode(tape, store, clicks)?;
        self.fuse(tape, store, u_c, s_tilde)
    }
}
