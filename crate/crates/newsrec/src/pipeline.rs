//! End-to-end batch workflow: corpus → topics → graphs → samples → training
//! → metrics.
//!
//! The chronology is strict. The first `graph_days` of events build the
//! training graph; the following `train_days` supply supervised pairs; the
//! final `eval_days` are held out, split by event order into validation and
//! test. Scoring a held-out pair uses a second graph rebuilt from everything
//! before the held-out window, so the model sees exactly the history that
//! would have existed at prediction time. Articles first seen inside the
//! held-out window never contribute click edges — they join the graphs only
//! through topic edges, with topics folded into the fitted model — and the
//! title vocabulary is frozen on the pre-holdout window by the caller.
//!
//! Every random stream derives from the single run seed, so one seed fixes
//! topic fits, negative draws, shuffles, neighbor samples, and dropout masks.
//! Held-out scoring derives one stream per fixed-size chunk of samples, which
//! makes the parallel and sequential paths bit-identical.

use std::collections::{HashMap, HashSet};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{ClickEvent, Corpus, PAD, UNK};
use crate::error::{Error, Result};
use crate::eval::{auc, day_plan, f1, make_splits, MetricsRow, SplitPlan, Splits};
use crate::gnn::{FeatureSource, GnnConfig, GnnEncoder};
use crate::hetgraph::HetGraph;
use crate::numerics::{AdamConfig, ParameterStore, Real, RngState, Tape, ValueId};
use crate::predictor::{
    sample_negatives, ClickPredictor, EarlyStopper, LogRow, PredictorConfig, TrainSample,
};
use crate::short_term::{ShortTermConfig, ShortTermEncoder};
use crate::text_extractor::{NewsItem, TextConfig, TextExtractor};
use crate::topic_model::{assign_topic, LdaConfig, LdaModel};

/// Derivation streams off the master seed. Each consumer owns one constant,
/// so adding a stream can never shift the draws of an existing one.
mod stream {
    pub const INIT: u64 = 1;
    pub const LDA: u64 = 2;
    pub const FOLD_IN: u64 = 3;
    pub const VAL_NEGATIVES: u64 = 4;
    pub const TEST_NEGATIVES: u64 = 5;
    pub const TRAIN_NEGATIVES: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const NEIGHBORS: u64 = 8;
    pub const DROPOUT: u64 = 9;
    pub const VAL_SCORING: u64 = 10;
    pub const EVAL_SCORING: u64 = 11;
}

/// Samples per scoring tape. Chunk boundaries are part of the scoring
/// definition (each chunk derives its own stream and shares one neighbor
/// memo), so this is a fixed constant rather than a tunable.
const SCORE_CHUNK: usize = 64;

/// Per-user click timeline for short-term history lookups.
#[derive(Debug, Clone)]
pub struct HistoryIndex {
    per_user: Vec<Vec<(i64, usize)>>,
}

impl HistoryIndex {
    /// Indexes every click by user, ordered by timestamp (ties keep event
    /// order). Events referencing users outside `users` are rejected.
    pub fn build(events: &[ClickEvent], users: usize) -> Result<Self> {
        let mut ordered: Vec<&ClickEvent> = events.iter().collect();
        ordered.sort_by_key(|e| e.ts);
        let mut per_user = vec![Vec::new(); users];
        for e in ordered {
            let row = per_user.get_mut(e.user).ok_or_else(|| {
                Error::contract(format!(
                    "click references user {} outside the {users} known users",
                    e.user
                ))
            })?;
            row.push((e.ts, e.news));
        }
        Ok(Self { per_user })
    }

    /// The user's latest `len` clicks strictly before `before_ts`, oldest
    /// first. Unknown users and empty histories return an empty list.
    pub fn recent(&self, user: usize, before_ts: i64, len: usize) -> Vec<usize> {
        let Some(clicks) = self.per_user.get(user) else {
            return Vec::new();
        };
        let end = clicks.partition_point(|(ts, _)| *ts < before_ts);
        let start = end.saturating_sub(len);
        clicks[start..end].iter().map(|(_, d)| *d).collect()
    }
}

/// Differentiable layer-0 news features: the text encoder applied to each
/// article, memoized per tape so one batch extracts each article once.
pub struct TextFeatures<'a> {
    extractor: &'a TextExtractor,
    items: &'a [NewsItem],
    memo: HashMap<usize, ValueId>,
}

impl<'a> TextFeatures<'a> {
    pub fn new(extractor: &'a TextExtractor, items: &'a [NewsItem]) -> Self {
        Self {
            extractor,
            items,
            memo: HashMap::new(),
        }
    }
}

impl FeatureSource for TextFeatures<'_> {
    fn news_feature(&mut self, tape: &mut Tape, store: &ParameterStore, d: usize) -> Result<ValueId> {
        if let Some(id) = self.memo.get(&d) {
            return Ok(*id);
        }
        let item = self
            .items
            .get(d)
            .ok_or_else(|| Error::contract(format!("no article with id {d}")))?;
        let id = self.extractor.extract(tape, store, item)?;
        self.memo.insert(d, id);
        Ok(id)
    }
}

/// The full scoring model: text encoder, graph encoder (long-term interest),
/// recent-click encoder (short-term interest), and the click predictor.
#[derive(Debug, Clone)]
pub struct Model {
    pub text: TextExtractor,
    pub gnn: GnnEncoder,
    pub short: ShortTermEncoder,
    pub pred: ClickPredictor,
    /// When false the short-term half is replaced by zeros (the graph-only
    /// ablation); its parameters stay registered but receive no gradient.
    pub use_short_term: bool,
}

impl Model {
    /// Assembles the model for the given vocabulary sizes (each including
    /// the reserved padding and unknown rows).
    pub fn from_config(cfg: &RunConfig, words: usize, entities: usize, types: usize) -> Result<Self> {
        cfg.validate()?;
        let text = TextExtractor::new(TextConfig {
            word_vocab: words,
            entity_vocab: entities,
            type_vocab: types,
            word_dim: cfg.word_dim,
            type_dim: cfg.type_dim,
            feature_dim: cfg.feature_dim,
            filters: cfg.cnn_filters,
            windows: cfg.cnn_windows.clone(),
        })?;
        let gnn = GnnEncoder::new(GnnConfig {
            dim: cfg.feature_dim,
            layers: cfg.layers,
            sample_users: cfg.sample_users,
            sample_news: cfg.sample_news,
            include_self: cfg.include_self,
        })?;
        let short = ShortTermEncoder::new(ShortTermConfig {
            dim: cfg.feature_dim,
            seq_len: cfg.seq_len,
            conv_window: cfg.conv_window,
        })?;
        let pred = ClickPredictor::new(PredictorConfig {
            dim: cfg.feature_dim,
            dropout: cfg.dropout,
        })?;
        Ok(Self {
            text,
            gnn,
            short,
            pred,
            use_short_term: cfg.use_short_term,
        })
    }

    /// Registers every parameter of all four sub-models.
    pub fn register(
        &self,
        store: &mut ParameterStore,
        users: usize,
        topics: usize,
        std: Real,
        rng: &mut RngState,
    ) {
        self.text.register(store, std, rng);
        self.gnn.register(store, users, topics, std, rng);
        self.short.register(store, std, rng);
        self.pred.register(store, std, rng);
    }

    /// Scores a batch of samples on one tape. Graph propagation runs once for
    /// the whole batch so repeated (node, hop) embeddings are shared. Pass a
    /// dropout rng only while training.
    #[allow(clippy::too_many_arguments)]
    pub fn score_batch(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        graph: &HetGraph,
        features: &mut TextFeatures<'_>,
        history: &HistoryIndex,
        samples: &[TrainSample],
        neighbor_rng: &mut RngState,
        mut dropout_rng: Option<&mut RngState>,
    ) -> Result<Vec<(ValueId, bool)>> {
        let pairs: Vec<(usize, usize)> = samples.iter().map(|s| (s.user, s.news)).collect();
        let embedded = self
            .gnn
            .propagate(tape, store, graph, &pairs, features, neighbor_rng)?;
        let dim = self.short.config().dim;
        let seq_len = self.short.config().seq_len;
        let mut scored = Vec::with_capacity(samples.len());
        for (sample, pair) in samples.iter().zip(&embedded) {
            let u_short = if self.use_short_term {
                let candidate_text = features.news_feature(tape, store, sample.news)?;
                let recent = history.recent(sample.user, sample.ts, seq_len);
                let mut clicks = Vec::with_capacity(seq_len);
                let mut live = Vec::with_capacity(seq_len);
                for d in &recent {
                    clicks.push(features.news_feature(tape, store, *d)?);
                    live.push(true);
                }
                while clicks.len() < seq_len {
                    clicks.push(tape.zeros(&[dim]));
                    live.push(false);
                }
                self.short.encode(tape, store, &clicks, &live, candidate_text)?
            } else {
                tape.zeros(&[dim])
            };
            let user = self.pred.fuse_user(tape, store, pair.user, u_short)?;
            let yhat = self
                .pred
                .score(tape, store, user, pair.news, dropout_rng.as_deref_mut())?;
            scored.push((yhat, sample.label));
        }
        Ok(scored)
    }
}

/// Everything a training or evaluation run needs, derived deterministically
/// from one corpus and one config.
#[derive(Debug)]
pub struct Prepared {
    pub corpus: Corpus,
    pub plan: SplitPlan,
    pub splits: Splits,
    pub lda: LdaModel,
    /// Topic of every article; articles beyond the fitted set are folded in.
    pub assignments: Vec<usize>,
    /// Articles the topic model was fitted on (a first-seen-time prefix).
    pub fitted_docs: usize,
    /// Graph over the graph window; nodes cover everything first seen before
    /// the held-out window.
    pub train_graph: HetGraph,
    /// Graph over graph + train windows; nodes cover the whole corpus.
    pub eval_graph: HetGraph,
    pub history: HistoryIndex,
    pub train_positives: Vec<TrainSample>,
    /// Negative-draw pool for training: article ids first seen before the
    /// held-out window.
    pub train_pool: Vec<usize>,
    /// Per-user clicked sets over the graph + train windows.
    pub train_clicked: HashMap<usize, HashSet<usize>>,
    pub val_samples: Vec<TrainSample>,
    pub test_samples: Vec<TrainSample>,
    /// Held-out negative draws skipped because a user had clicked the whole
    /// pool.
    pub eval_skipped: usize,
}

/// Earliest timestamp per id, given ids are dense `0..count`.
fn first_seen(events: &[ClickEvent], count: usize, id_of: impl Fn(&ClickEvent) -> usize) -> Vec<i64> {
    let mut first = vec![i64::MAX; count];
    for e in events {
        let i = id_of(e);
        if i < count && e.ts < first[i] {
            first[i] = e.ts;
        }
    }
    first
}

/// How many ids were first seen before `cutoff`. Ids are assigned in first
/// appearance order, so these form the prefix `0..n`; anything else means the
/// corpus was not built by the preprocessor and is rejected.
fn prefix_before(first: &[i64], cutoff: i64, what: &str) -> Result<usize> {
    let n = first.iter().filter(|t| **t < cutoff).count();
    if let Some(bad) = first[..n].iter().position(|t| *t >= cutoff) {
        return Err(Error::contract(format!(
            "{what} ids are not in first-appearance order: id {bad} first appears at {}, \
             on or after the cutoff {cutoff}",
            first[bad]
        )));
    }
    Ok(n)
}

/// Title word ids with the reserved padding/unknown rows dropped; what the
/// topic model sees.
fn topic_docs(corpus: &Corpus) -> Vec<Vec<usize>> {
    corpus
        .news
        .iter()
        .map(|n| {
            n.title
                .iter()
                .copied()
                .filter(|w| *w != PAD && *w != UNK)
                .collect()
        })
        .collect()
}

/// Held-out pairs: every positive plus `ratio` sampled unclicked negatives
/// per positive, each carrying the positive's timestamp as scoring context.
fn held_out_pairs(
    events: &[ClickEvent],
    pool: &[usize],
    clicked: &HashMap<usize, HashSet<usize>>,
    ratio: usize,
    mut rng: RngState,
) -> (Vec<TrainSample>, usize) {
    let positives: Vec<TrainSample> = events
        .iter()
        .map(|e| TrainSample {
            user: e.user,
            news: e.news,
            label: true,
            ts: e.ts,
        })
        .collect();
    let mut samples = positives.clone();
    let mut skipped = 0;
    for _ in 0..ratio {
        let (negatives, s) = sample_negatives(&positives, pool, clicked, &mut rng);
        samples.extend(negatives);
        skipped += s;
    }
    (samples, skipped)
}

/// Runs every data-side stage: chronological splits, topic fit + fold-in,
/// both graphs, the click timeline, and all sample lists.
pub fn prepare(corpus: Corpus, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let plan = day_plan(&corpus.events, cfg.graph_days, cfg.train_days, cfg.eval_days)?;
    let splits = make_splits(&corpus.events, &plan, cfg.val_fraction)?;
    let master = RngState::new(cfg.seed);

    let news_first = first_seen(&corpus.events, corpus.news.len(), |e| e.news);
    let user_first = first_seen(&corpus.events, corpus.user_names.len(), |e| e.user);
    let known_news = prefix_before(&news_first, plan.eval_start, "article")?;
    let known_users = prefix_before(&user_first, plan.eval_start, "user")?;
    let eval_news = prefix_before(&news_first, plan.eval_end, "article")?;
    if known_news == 0 {
        return Err(Error::degenerate(
            "no articles appear before the held-out window",
        ));
    }

    // Topics: fit on articles known before the held-out window, fold the
    // rest into the frozen model.
    let docs = topic_docs(&corpus);
    let mut lda_cfg = LdaConfig {
        train_sweeps: cfg.lda_train_sweeps,
        fold_in_sweeps: cfg.lda_fold_sweeps,
        ..LdaConfig::for_topics(cfg.topics)
    };
    if let Some(alpha) = cfg.lda_alpha {
        lda_cfg.alpha = alpha;
    }
    if let Some(beta) = cfg.lda_beta {
        lda_cfg.beta = beta;
    }
    let mut lda_rng = master.derive(stream::LDA);
    let lda = LdaModel::train(&docs[..known_news], corpus.words.len(), &lda_cfg, &mut lda_rng)?;
    let mut assignments = Vec::with_capacity(docs.len());
    for d in 0..known_news {
        assignments.push(assign_topic(&lda.theta(d)?));
    }
    let folded = lda.infer_batch(
        &docs[known_news..],
        cfg.lda_fold_sweeps,
        &master.derive(stream::FOLD_IN),
    );
    assignments.extend(folded.iter().map(|theta| assign_topic(theta)));

    let train_graph = HetGraph::build(
        &splits.graph,
        &assignments[..known_news],
        known_users,
        cfg.topics,
    )?;
    let mut eval_events = splits.graph.clone();
    eval_events.extend(splits.train.iter().copied());
    let eval_graph = HetGraph::build(
        &eval_events,
        &assignments,
        corpus.user_names.len(),
        cfg.topics,
    )?;

    let history = HistoryIndex::build(&corpus.events, corpus.user_names.len())?;

    let train_positives: Vec<TrainSample> = splits
        .train
        .iter()
        .map(|e| TrainSample {
            user: e.user,
            news: e.news,
            label: true,
            ts: e.ts,
        })
        .collect();
    let train_pool: Vec<usize> = (0..known_news).collect();
    let mut train_clicked: HashMap<usize, HashSet<usize>> = HashMap::new();
    for e in splits.graph.iter().chain(splits.train.iter()) {
        train_clicked.entry(e.user).or_default().insert(e.news);
    }

    // Held-out negatives draw from everything known by the end of the plan
    // and exclude each user's clicks across the whole log, so no sampled
    // negative is secretly a positive.
    let mut full_clicked = train_clicked.clone();
    for e in splits.val.iter().chain(splits.test.iter()) {
        full_clicked.entry(e.user).or_default().insert(e.news);
    }
    let eval_pool: Vec<usize> = (0..eval_news).collect();
    let (val_samples, skipped_val) = held_out_pairs(
        &splits.val,
        &eval_pool,
        &full_clicked,
        cfg.eval_negatives,
        master.derive(stream::VAL_NEGATIVES),
    );
    let (test_samples, skipped_test) = held_out_pairs(
        &splits.test,
        &eval_pool,
        &full_clicked,
        cfg.eval_negatives,
        master.derive(stream::TEST_NEGATIVES),
    );

    Ok(Prepared {
        corpus,
        plan,
        splits,
        lda,
        assignments,
        fitted_docs: known_news,
        train_graph,
        eval_graph,
        history,
        train_positives,
        train_pool,
        train_clicked,
        val_samples,
        test_samples,
        eval_skipped: skipped_val + skipped_test,
    })
}

fn score_chunk(
    model: &Model,
    store: &ParameterStore,
    graph: &HetGraph,
    items: &[NewsItem],
    history: &HistoryIndex,
    chunk: &[TrainSample],
    mut rng: RngState,
) -> Result<Vec<Real>> {
    let mut tape = Tape::forward_only();
    let mut features = TextFeatures::new(&model.text, items);
    let scored = model.score_batch(
        &mut tape,
        store,
        graph,
        &mut features,
        history,
        chunk,
        &mut rng,
        None,
    )?;
    Ok(scored.iter().map(|(id, _)| tape.value(*id).item()).collect())
}

/// Inference-mode scores for a sample list. Samples are processed in fixed
/// chunks, one derived stream and one tape per chunk, so the parallel and
/// sequential paths return bit-identical scores.
#[cfg(feature = "parallel")]
pub fn score_samples(
    model: &Model,
    store: &ParameterStore,
    graph: &HetGraph,
    items: &[NewsItem],
    history: &HistoryIndex,
    samples: &[TrainSample],
    rng: &RngState,
) -> Result<Vec<Real>> {
    let chunks: Vec<Vec<Real>> = samples
        .par_chunks(SCORE_CHUNK)
        .enumerate()
        .map(|(i, chunk)| {
            score_chunk(model, store, graph, items, history, chunk, rng.derive(i as u64))
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(not(feature = "parallel"))]
pub fn score_samples(
    model: &Model,
    store: &ParameterStore,
    graph: &HetGraph,
    items: &[NewsItem],
    history: &HistoryIndex,
    samples: &[TrainSample],
    rng: &RngState,
) -> Result<Vec<Real>> {
    score_samples_sequential(model, store, graph, items, history, samples, rng)
}

/// Single-threaded reference path for [`score_samples`].
pub fn score_samples_sequential(
    model: &Model,
    store: &ParameterStore,
    graph: &HetGraph,
    items: &[NewsItem],
    history: &HistoryIndex,
    samples: &[TrainSample],
    rng: &RngState,
) -> Result<Vec<Real>> {
    let mut out = Vec::with_capacity(samples.len());
    for (i, chunk) in samples.chunks(SCORE_CHUNK).enumerate() {
        out.extend(score_chunk(
            model,
            store,
            graph,
            items,
            history,
            chunk,
            rng.derive(i as u64),
        )?);
    }
    Ok(out)
}

/// Click-count baseline: each sample scores as its article's click count in
/// `history_events`.
pub fn popularity_scores(history_events: &[ClickEvent], samples: &[TrainSample]) -> Vec<Real> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for e in history_events {
        *counts.entry(e.news).or_insert(0) += 1;
    }
    samples
        .iter()
        .map(|s| counts.get(&s.news).copied().unwrap_or(0) as Real)
        .collect()
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub store: ParameterStore,
    pub log: Vec<LogRow>,
    pub best_epoch: Option<usize>,
    pub best_auc: Option<Real>,
    /// Set when training stopped on a non-finite objective; the returned
    /// parameters are the last finite state.
    pub aborted: Option<String>,
}

/// Trains from a fresh initialization. Each epoch resamples negatives,
/// shuffles, steps Adam once per batch, then scores the validation samples
/// against the held-out-time graph; early stopping restores the best epoch.
/// `on_row` sees every log row as it is produced.
pub fn train_model(
    prep: &Prepared,
    model: &Model,
    cfg: &RunConfig,
    on_row: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if prep.train_positives.is_empty() {
        return Err(Error::degenerate("the training window has no click pairs"));
    }
    let master = RngState::new(cfg.seed);
    let mut store = ParameterStore::new();
    let mut init_rng = master.derive(stream::INIT);
    model.register(
        &mut store,
        prep.corpus.user_names.len(),
        cfg.topics,
        cfg.init_std,
        &mut init_rng,
    );

    let adam = AdamConfig {
        lr: cfg.lr,
        lambda: cfg.lambda,
        ..AdamConfig::default()
    };
    let mut stopper = EarlyStopper::new(cfg.patience)?;
    let mut log = Vec::new();
    let mut aborted = None;
    let mut global_step = 0usize;

    'training: for epoch in 0..cfg.max_epochs {
        let e = epoch as u64;
        let mut negative_rng = master.derive(stream::TRAIN_NEGATIVES).derive(e);
        let (negatives, _) = sample_negatives(
            &prep.train_positives,
            &prep.train_pool,
            &prep.train_clicked,
            &mut negative_rng,
        );
        let mut samples: Vec<TrainSample> = prep
            .train_positives
            .iter()
            .copied()
            .chain(negatives)
            .collect();
        master.derive(stream::SHUFFLE).derive(e).shuffle(&mut samples);
        let mut dropout_rng = master.derive(stream::DROPOUT).derive(e);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, batch) in samples.chunks(cfg.batch_size).enumerate() {
            let mut neighbor_rng = master
                .derive(stream::NEIGHBORS)
                .derive(e)
                .derive(step as u64);
            let mut tape = Tape::new();
            let mut features = TextFeatures::new(&model.text, &prep.corpus.news);
            let scored = model.score_batch(
                &mut tape,
                &store,
                &prep.train_graph,
                &mut features,
                &prep.history,
                batch,
                &mut neighbor_rng,
                Some(&mut dropout_rng),
            )?;
            let loss = model.pred.batch_loss(&mut tape, &scored)?;
            let objective = tape.value(loss).item() + store.l2_penalty(cfg.lambda);
            if !objective.is_finite() {
                aborted = Some(format!(
                    "stopped on a non-finite objective at epoch {epoch}, step {global_step}"
                ));
                break 'training;
            }
            tape.backward(loss)?;
            store.zero_grads();
            tape.grads_into(&mut store)?;
            if let Err(err) = store.adam_step(&adam) {
                aborted = Some(format!(
                    "optimizer stopped at epoch {epoch}, step {global_step}: {err}"
                ));
                break 'training;
            }
            epoch_loss += objective;
            batches += 1;
            global_step += 1;
        }

        let val_rng = master.derive(stream::VAL_SCORING).derive(e);
        let scores = score_samples(
            model,
            &store,
            &prep.eval_graph,
            &prep.corpus.news,
            &prep.history,
            &prep.val_samples,
            &val_rng,
        )?;
        let labels: Vec<bool> = prep.val_samples.iter().map(|s| s.label).collect();
        let val_auc = auc(&labels, &scores)?;
        let val_f1 = f1(&labels, &scores, cfg.threshold)?;
        let row = LogRow {
            epoch,
            step: global_step,
            train_loss: epoch_loss / batches.max(1) as Real,
            val_auc,
            val_f1,
        };
        on_row(&row);
        log.push(row);
        if stopper.observe(epoch, val_auc, &store)? {
            break;
        }
    }

    if let Some(best) = stopper.restore()? {
        store = best;
    }
    Ok(TrainOutcome {
        store,
        log,
        best_epoch: stopper.best_epoch(),
        best_auc: stopper.best_auc(),
        aborted,
    })
}

/// Scores the validation and test samples with the trained parameters and
/// reports one metrics row per split.
pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    prep: &Prepared,
    cfg: &RunConfig,
) -> Result<Vec<MetricsRow>> {
    let master = RngState::new(cfg.seed).derive(stream::EVAL_SCORING);
    let splits: [(&str, &[TrainSample], u64); 2] = [
        ("val", &prep.val_samples, 0),
        ("test", &prep.test_samples, 1),
    ];
    let mut rows = Vec::new();
    for (name, samples, substream) in splits {
        let rng = master.derive(substream);
        let scores = score_samples(
            model,
            store,
            &prep.eval_graph,
            &prep.corpus.news,
            &prep.history,
            samples,
            &rng,
        )?;
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        rows.push(MetricsRow {
            split: name.to_string(),
            auc: auc(&labels, &scores)?,
            f1: f1(&labels, &scores, cfg.threshold)?,
            n_pos: labels.iter().filter(|l| **l).count(),
            n_neg: labels.iter().filter(|l| !**l).count(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, to_tsv, ingest_str, Stopwords, SyntheticSpec};

    const DAY: i64 = 86_400;

    fn history_fixture() -> HistoryIndex {
        let events = vec![
            ClickEvent { user: 0, news: 3, ts: 30 },
            ClickEvent { user: 0, news: 1, ts: 10 },
            ClickEvent { user: 0, news: 2, ts: 20 },
            ClickEvent { user: 1, news: 9, ts: 15 },
        ];
        HistoryIndex::build(&events, 3).unwrap()
    }

    #[test]
    fn history_returns_the_latest_clicks_before_the_timestamp() {
        let idx = history_fixture();
        assert_eq!(idx.recent(0, 31, 10), vec![1, 2, 3]);
        assert_eq!(idx.recent(0, 31, 2), vec![2, 3]);
        assert_eq!(idx.recent(0, 30, 10), vec![1, 2], "a click at the cutoff is excluded");
        assert_eq!(idx.recent(0, 5, 10), Vec::<usize>::new());
        assert_eq!(idx.recent(1, 100, 1), vec![9]);
        assert_eq!(idx.recent(2, 100, 4), Vec::<usize>::new(), "user with no clicks");
        assert_eq!(idx.recent(7, 100, 4), Vec::<usize>::new(), "unknown user");
    }

    #[test]
    fn history_rejects_out_of_range_users() {
        let events = vec![ClickEvent { user: 5, news: 0, ts: 1 }];
        assert!(HistoryIndex::build(&events, 3).is_err());
    }

    #[test]
    fn popularity_counts_clicks_in_the_history_window() {
        let events = vec![
            ClickEvent { user: 0, news: 1, ts: 1 },
            ClickEvent { user: 1, news: 1, ts: 2 },
            ClickEvent { user: 2, news: 0, ts: 3 },
        ];
        let samples = vec![
            TrainSample { user: 9, news: 1, label: true, ts: 50 },
            TrainSample { user: 9, news: 0, label: false, ts: 50 },
            TrainSample { user: 9, news: 7, label: false, ts: 50 },
        ];
        assert_eq!(popularity_scores(&events, &samples), vec![2.0, 1.0, 0.0]);
    }

    fn tiny_corpus(seed: u64) -> Corpus {
        let spec = SyntheticSpec {
            users: 8,
            news: 20,
            events: 160,
            appeal_levels: 4,
            vocab_per_cluster: 10,
            title_len: 5,
            entities_per_news: 2,
            seed,
            ..SyntheticSpec::default()
        };
        let (raw, truth) = generate_synthetic(&spec).unwrap();
        let cutoff = truth.day0 + 6 * DAY;
        preprocess(&raw, &Stopwords::empty(), cutoff).unwrap()
    }

    fn tiny_config() -> RunConfig {
        RunConfig {
            word_dim: 5,
            type_dim: 4,
            feature_dim: 8,
            cnn_filters: 4,
            cnn_windows: vec![2],
            topics: 2,
            lda_train_sweeps: 30,
            lda_fold_sweeps: 10,
            sample_users: 3,
            sample_news: 4,
            seq_len: 4,
            conv_window: 2,
            lr: 0.01,
            batch_size: 16,
            max_epochs: 2,
            patience: 2,
            eval_negatives: 2,
            seed: 7,
            ..RunConfig::default()
        }
    }

    #[test]
    fn prepare_builds_consistent_windows_graphs_and_samples() {
        let cfg = tiny_config();
        let corpus = tiny_corpus(11);
        let total_news = corpus.news.len();
        let total_users = corpus.user_names.len();
        let prep = prepare(corpus, &cfg).unwrap();

        assert_eq!(prep.assignments.len(), total_news);
        assert!(prep.assignments.iter().all(|z| *z < cfg.topics));
        assert!(prep.fitted_docs <= total_news);
        assert_eq!(prep.eval_graph.news_count(), total_news);
        assert_eq!(prep.eval_graph.user_count(), total_users);
        assert_eq!(prep.train_graph.news_count(), prep.fitted_docs);
        assert!(prep.train_graph.user_count() <= total_users);

        // Training positives come from the train window and keep their time.
        assert!(!prep.train_positives.is_empty());
        for s in &prep.train_positives {
            assert!(s.label);
            assert!(s.ts >= prep.plan.train_start && s.ts < prep.plan.eval_start);
        }
        // The training pool stops at the held-out window.
        assert_eq!(prep.train_pool.len(), prep.fitted_docs);

        // Each held-out split holds its positives plus sampled negatives that
        // share the positive's timestamp and were never clicked by the user.
        for (samples, window) in [
            (&prep.val_samples, &prep.splits.val),
            (&prep.test_samples, &prep.splits.test),
        ] {
            let n_pos = samples.iter().filter(|s| s.label).count();
            let n_neg = samples.len() - n_pos;
            assert_eq!(n_pos, window.len());
            assert!(n_neg <= n_pos * cfg.eval_negatives);
            assert!(n_neg + prep.eval_skipped >= n_pos * cfg.eval_negatives);
            let positive_ts: HashSet<i64> = samples
                .iter()
                .filter(|s| s.label)
                .map(|s| s.ts)
                .collect();
            let mut clicked: HashMap<usize, HashSet<usize>> = HashMap::new();
            for e in prep
                .splits
                .graph
                .iter()
                .chain(&prep.splits.train)
                .chain(&prep.splits.val)
                .chain(&prep.splits.test)
            {
                clicked.entry(e.user).or_default().insert(e.news);
            }
            for s in samples.iter().filter(|s| !s.label) {
                assert!(positive_ts.contains(&s.ts));
                assert!(
                    !clicked[&s.user].contains(&s.news),
                    "negative {} was clicked by user {}",
                    s.news,
                    s.user
                );
            }
        }
    }

    #[test]
    fn prepare_is_deterministic_for_a_fixed_seed() {
        let cfg = tiny_config();
        let a = prepare(tiny_corpus(11), &cfg).unwrap();
        let b = prepare(tiny_corpus(11), &cfg).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.val_samples, b.val_samples);
        assert_eq!(a.test_samples, b.test_samples);
        assert_eq!(a.train_positives, b.train_positives);
    }

    #[test]
    fn corpus_round_trips_through_the_tsv_renderer() {
        // The pipeline's corpora load from TSV event files written at ingest
        // time; a render → parse round trip must preserve the event stream.
        let spec = SyntheticSpec {
            users: 4,
            news: 8,
            groups: 1,
            events: 30,
            ..SyntheticSpec::default()
        };
        let (raw, _) = generate_synthetic(&spec).unwrap();
        let text = to_tsv(&raw);
        let (back, report) = ingest_str(&text, false).unwrap();
        assert_eq!(report.malformed, 0);
        assert_eq!(back, raw);
    }

    fn build_model_and_store(prep: &Prepared, cfg: &RunConfig) -> (Model, ParameterStore) {
        let model = Model::from_config(
            cfg,
            prep.corpus.words.len(),
            prep.corpus.entities.len(),
            prep.corpus.types.len(),
        )
        .unwrap();
        let mut store = ParameterStore::new();
        let mut rng = RngState::new(cfg.seed).derive(stream::INIT);
        model.register(
            &mut store,
            prep.corpus.user_names.len(),
            cfg.topics,
            cfg.init_std,
            &mut rng,
        );
        (model, store)
    }

    #[test]
    fn parallel_and_sequential_scoring_agree_bit_for_bit() {
        let cfg = tiny_config();
        let prep = prepare(tiny_corpus(11), &cfg).unwrap();
        let (model, store) = build_model_and_store(&prep, &cfg);
        // Span several chunks so the comparison exercises chunk boundaries.
        let mut samples = prep.val_samples.clone();
        while samples.len() < 3 * SCORE_CHUNK / 2 {
            let copy = samples[samples.len() % prep.val_samples.len()];
            samples.push(copy);
        }
        let rng = RngState::new(99);
        let par = score_samples(
            &model, &store, &prep.eval_graph, &prep.corpus.news, &prep.history, &samples, &rng,
        )
        .unwrap();
        let seq = score_samples_sequential(
            &model, &store, &prep.eval_graph, &prep.corpus.news, &prep.history, &samples, &rng,
        )
        .unwrap();
        assert_eq!(par.len(), samples.len());
        assert!(par.iter().zip(&seq).all(|(a, b)| a == b));
        assert!(par.iter().all(|p| (0.0..=1.0).contains(p) && p.is_finite()));
    }

    #[test]
    fn gradients_reach_all_four_sub_models() {
        let cfg = tiny_config();
        let prep = prepare(tiny_corpus(11), &cfg).unwrap();
        let (model, mut store) = build_model_and_store(&prep, &cfg);
        let batch: Vec<TrainSample> = prep.train_positives.iter().copied().take(4).collect();
        let mut tape = Tape::new();
        let mut features = TextFeatures::new(&model.text, &prep.corpus.news);
        let mut neighbor_rng = RngState::new(3);
        let scored = model
            .score_batch(
                &mut tape,
                &store,
                &prep.train_graph,
                &mut features,
                &prep.history,
                &batch,
                &mut neighbor_rng,
                None,
            )
            .unwrap();
        let loss = model.pred.batch_loss(&mut tape, &scored).unwrap();
        tape.backward(loss).unwrap();
        store.zero_grads();
        tape.grads_into(&mut store).unwrap();
        for prefix in ["text.", "gnn.", "short.", "pred."] {
            let names: Vec<String> = store
                .names()
                .filter(|n| n.starts_with(prefix))
                .map(|n| n.to_string())
                .collect();
            let touched = names.iter().any(|n| {
                store
                    .get(n)
                    .unwrap()
                    .grad
                    .data()
                    .iter()
                    .any(|g| *g != 0.0)
            });
            assert!(touched, "no gradient reached any {prefix} parameter");
        }
    }

    #[test]
    fn training_twice_with_one_seed_is_bit_identical() {
        let cfg = tiny_config();
        let run = || {
            let prep = prepare(tiny_corpus(11), &cfg).unwrap();
            let model = Model::from_config(
                &cfg,
                prep.corpus.words.len(),
                prep.corpus.entities.len(),
                prep.corpus.types.len(),
            )
            .unwrap();
            let outcome = train_model(&prep, &model, &cfg, &mut |_| {}).unwrap();
            let mut bytes = Vec::new();
            outcome.store.save(&mut bytes).unwrap();
            let metrics = evaluate(&model, &outcome.store, &prep, &cfg).unwrap();
            (outcome.log, bytes, metrics)
        };
        let (log_a, bytes_a, metrics_a) = run();
        let (log_b, bytes_b, metrics_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(metrics_a, metrics_b);
        assert!(!log_a.is_empty());
        assert!(log_a.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn evaluate_reports_both_splits_with_sane_counts() {
        let cfg = tiny_config();
        let prep = prepare(tiny_corpus(11), &cfg).unwrap();
        let (model, store) = build_model_and_store(&prep, &cfg);
        let rows = evaluate(&model, &store, &prep, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].split, "val");
        assert_eq!(rows[1].split, "test");
        for row in &rows {
            assert!(row.n_pos > 0 && row.n_neg > 0);
            assert!((0.0..=1.0).contains(&row.auc));
            assert!((0.0..=1.0).contains(&row.f1));
        }
    }
}
