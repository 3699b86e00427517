//! Content-based news encoder.
//!
//! A news item arrives as a tokenized title plus an entity profile (pairs of
//! entity id and entity-type id). Both views are embedded into matrices — the
//! profile interleaves each entity embedding with its transformed type
//! embedding — and run through two parallel CNNs with separate weights. The
//! max-pooled CNN outputs are concatenated and fused by one dense + ReLU layer
//! into the item's text feature vector.

use crate::error::{Error, Result};
use crate::numerics::{ParamKind, ParameterStore, Real, RngState, Tape, ValueId};

/// One news item in id space. Word/entity/type ids must already be resolved
/// against the vocabulary (unknown tokens mapped to the unknown id, padding
/// id 0 reserved for the frozen zero embedding row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsItem {
    pub id: usize,
    /// Title as a sequence of word ids (may be empty).
    pub title: Vec<usize>,
    /// Entity profile as (entity id, entity-type id) pairs, in article order.
    pub profile: Vec<(usize, usize)>,
}

/// Shape of the text encoder: vocabulary sizes, embedding widths, CNN layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TextConfig {
    /// Word vocabulary size (including padding id 0 and unknown id 1).
    pub word_vocab: usize,
    /// Entity vocabulary size (including padding and unknown ids).
    pub entity_vocab: usize,
    /// Entity-type vocabulary size (including padding and unknown ids).
    pub type_vocab: usize,
    /// Word and entity embedding width k1.
    pub word_dim: usize,
    /// Entity-type embedding width k2 (mapped into entity space by `w_c`).
    pub type_dim: usize,
    /// Output feature width D.
    pub feature_dim: usize,
    /// Convolution filters per window size.
    pub filters: usize,
    /// Convolution window sizes; each contributes `filters` pooled outputs.
    pub windows: Vec<usize>,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            word_vocab: 2,
            entity_vocab: 2,
            type_vocab: 2,
            word_dim: 50,
            type_dim: 50,
            feature_dim: 128,
            filters: 128,
            windows: vec![2, 3],
        }
    }
}

impl TextConfig {
    fn validate(&self) -> Result<()> {
        if self.word_vocab < 2 || self.entity_vocab < 2 || self.type_vocab < 2 {
            return Err(Error::contract(
                "vocabularies need at least the padding and unknown ids",
            ));
        }
        if self.word_dim == 0 || self.type_dim == 0 || self.feature_dim == 0 || self.filters == 0 {
            return Err(Error::contract("text encoder dimensions must be positive"));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::contract("need at least one non-zero CNN window"));
        }
        Ok(())
    }

    /// Largest CNN window; every input matrix is padded to at least this many rows.
    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    /// Width of one pooled CNN branch output (title or profile).
    pub fn branch_dim(&self) -> usize {
        self.filters * self.windows.len()
    }
}

/// Differentiable text encoder. Holds only the configuration; all learnable
/// state lives in the [`ParameterStore`] under the `text.` prefix.
#[derive(Debug, Clone)]
pub struct TextExtractor {
    cfg: TextConfig,
}

impl TextExtractor {
    pub fn new(cfg: TextConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &TextConfig {
        &self.cfg
    }

    /// Registers every embedding table, CNN filter bank, and the fusion layer.
    pub fn register(&self, store: &mut ParameterStore, std: Real, rng: &mut RngState) {
        let c = &self.cfg;
        store.register_gaussian(
            "text.word_table",
            &[c.word_vocab, c.word_dim],
            std,
            ParamKind::EmbeddingPadded,
            rng,
        );
        store.register_gaussian(
            "text.entity_table",
            &[c.entity_vocab, c.word_dim],
            std,
            ParamKind::EmbeddingPadded,
            rng,
        );
        store.register_gaussian(
            "text.type_table",
            &[c.type_vocab, c.type_dim],
            std,
            ParamKind::EmbeddingPadded,
            rng,
        );
        store.register_gaussian(
            "text.w_c",
            &[c.word_dim, c.type_dim],
            std,
            ParamKind::Weight,
            rng,
        );
        for branch in ["title", "profile"] {
            for win in &c.windows {
                store.register_gaussian(
                    &format!("text.cnn_{branch}.win{win}.filters"),
                    &[c.filters, *win, c.word_dim],
                    std,
                    ParamKind::Weight,
                    rng,
                );
                store.register_gaussian(
                    &format!("text.cnn_{branch}.win{win}.bias"),
                    &[c.filters],
                    std,
                    ParamKind::Bias,
                    rng,
                );
            }
        }
        store.register_gaussian(
            "text.fuse.w",
            &[c.feature_dim, 2 * c.branch_dim()],
            std,
            ParamKind::Weight,
            rng,
        );
        store.register_gaussian(
            "text.fuse.b",
            &[c.feature_dim],
            std,
            ParamKind::Bias,
            rng,
        );
    }

    /// Title as an embedding matrix, one row per word, right-padded with the
    /// frozen zero row up to the largest CNN window. An empty title becomes an
    /// all-padding matrix.
    pub fn build_title_matrix(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        item: &NewsItem,
    ) -> Result<ValueId> {
        let table = tape.param(store, "text.word_table")?;
        let ids: Vec<usize> = if item.title.is_empty() {
            vec![0]
        } else {
            item.title.clone()
        };
        let m = tape.rows(table, &ids)?;
        tape.pad_rows(m, self.cfg.max_window())
    }

    /// Profile as an embedding matrix interleaving entity rows with their
    /// transformed type rows: [e_1, f(c_1), e_2, f(c_2), ...] where
    /// f(c) multiplies the type embedding by `text.w_c`.
    pub fn build_profile_matrix(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        item: &NewsItem,
    ) -> Result<ValueId> {
        let entity_table = tape.param(store, "text.entity_table")?;
        let type_table = tape.param(store, "text.type_table")?;
        let w_c = tape.param(store, "text.w_c")?;
        let (entity_ids, type_ids): (Vec<usize>, Vec<usize>) = if item.profile.is_empty() {
            (vec![0], vec![0])
        } else {
            item.profile.iter().copied().unzip()
        };
        let entities = tape.rows(entity_table, &entity_ids)?;
        let types = tape.rows(type_table, &type_ids)?;
        // Row-wise f(c): [n × k2] times w_c transposed gives [n × k1].
        let mapped = tape.linear(types, w_c)?;
        let interleaved = tape.interleave_rows(entities, mapped)?;
        tape.pad_rows(interleaved, self.cfg.max_window())
    }

    /// One CNN branch: per window size, convolve + ReLU + max-pool over time,
    /// then concatenate the pooled vectors.
    fn cnn_branch(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        branch: &str,
        matrix: ValueId,
    ) -> Result<ValueId> {
        let mut pooled = Vec::with_capacity(self.cfg.windows.len());
        for win in &self.cfg.windows {
            let filters = tape.param(store, &format!("text.cnn_{branch}.win{win}.filters"))?;
            let bias = tape.param(store, &format!("text.cnn_{branch}.win{win}.bias"))?;
            let conv = tape.conv1d(matrix, filters, bias)?;
            let act = tape.relu(conv);
            pooled.push(tape.max_pool_time(act)?);
        }
        tape.concat(&pooled)
    }

    /// Full text feature: d = ReLU(W·[T̃;P̃] + b) ∈ R^D.
    pub fn extract(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        item: &NewsItem,
    ) -> Result<ValueId> {
        let title = self.build_title_matrix(tape, store, item)?;
        let profile = self.build_profile_matrix(tape, store, item)?;
        let t_pooled = self.cnn_branch(tape, store, "title", title)?;
        let p_pooled = self.cnn_branch(tape, store, "profile", profile)?;
        let joint = tape.concat(&[t_pooled, p_pooled])?;
        let w = tape.param(store, "text.fuse.w")?;
        let b = tape.param(store, "text.fuse.b")?;
        let fused = tape.affine(w, joint, b)?;
        Ok(tape.relu(fused))
    }
}
