//! Graph encoder: long-term interest via neighborhood propagation.
//!
//! News embeddings start from their text features; user and topic embeddings
//! start from trainable tables. Each layer h rebuilds a node's embedding from
//! its sampled neighbors' hop-(h−1) embeddings:
//!
//! - news d: d_N = mean(W_u·u for sampled users) + W_z·z(d), then
//!   ReLU(W^h·d_N + b^h). An empty user sample contributes a zero term.
//! - users and topics mirror that shape over their sampled news neighbors
//!   with dedicated news→user / news→topic transforms; a node with no
//!   neighbors falls back to its own transformed previous-hop embedding so
//!   isolated users still carry a learnable long-term signal.
//!
//! Per-layer weights are layer-specific and shared across node types. Within
//! one batch every (node, hop) embedding is computed once and reused, so a
//! node is sampled exactly once per pass.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, NodeRef};
use crate::numerics::{ParamKind, ParameterStore, Real, RngState, Tape, ValueId};

/// Layout of the graph encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnConfig {
    /// Embedding width D (news text features must match).
    pub dim: usize,
    /// Propagation depth H.
    pub layers: usize,
    /// Users sampled per news node.
    pub sample_users: usize,
    /// News sampled per user or topic node.
    pub sample_news: usize,
    /// Mix each user/topic node's own previous-hop embedding into its
    /// neighbor mean (off by default: aggregation uses neighbors only).
    pub include_self: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 2,
            sample_users: 10,
            sample_news: 30,
            include_self: false,
        }
    }
}

/// Per-pair output of a propagation pass.
#[derive(Debug, Clone, Copy)]
pub struct PairEmbedding {
    /// Long-term user embedding u_l (hop-H).
    pub user: ValueId,
    /// High-order news embedding d̃ (hop-H).
    pub news: ValueId,
}

/// Source of layer-0 news embeddings for the propagation pass. Implementations
/// may memoize per tape; they are handed the same tape for a whole batch.
pub trait FeatureSource {
    fn news_feature(
        &mut self,
        tape: &mut Tape,
        store: &ParameterStore,
        d: usize,
    ) -> Result<ValueId>;
}

/// Feature source backed by fixed per-news vectors (no gradient into text).
pub struct FixedFeatures {
    features: Vec<crate::numerics::Tensor>,
    memo: HashMap<usize, ValueId>,
}

impl FixedFeatures {
    pub fn new(features: Vec<crate::numerics::Tensor>) -> Self {
        Self {
            features,
            memo: HashMap::new(),
        }
    }

    /// Must be called when switching to a new tape.
    pub fn reset(&mut self) {
        self.memo.clear();
    }
}

impl FeatureSource for FixedFeatures {
    fn news_feature(
        &mut self,
        tape: &mut Tape,
        _store: &ParameterStore,
        d: usize,
    ) -> Result<ValueId> {
        if let Some(id) = self.memo.get(&d) {
            return Ok(*id);
        }
        let t = self
            .features
            .get(d)
            .ok_or_else(|| Error::contract(format!("no feature vector for news {d}")))?;
        let id = tape.constant(t.clone());
        self.memo.insert(d, id);
        Ok(id)
    }
}

#[derive(Debug, Clone)]
pub struct GnnEncoder {
    cfg: GnnConfig,
}

impl GnnEncoder {
    pub fn new(cfg: GnnConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::contract("embedding width must be positive"));
        }
        if !(1..=3).contains(&cfg.layers) {
            return Err(Error::contract("propagation depth must be 1, 2, or 3"));
        }
        if cfg.sample_users == 0 || cfg.sample_news == 0 {
            return Err(Error::contract("sample sizes must be positive"));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.cfg
    }

    /// Registers transforms, per-layer weights, and the user/topic embedding
    /// tables (`users` and `topics` node counts fix the table heights).
    pub fn register(
        &self,
        store: &mut ParameterStore,
        users: usize,
        topics: usize,
        std: Real,
        rng: &mut RngState,
    ) {
        let d = self.cfg.dim;
        for name in ["gnn.w_user", "gnn.w_topic", "gnn.w_news_user", "gnn.w_news_topic"] {
            store.register_gaussian(name, &[d, d], std, ParamKind::Weight, rng);
        }
        for h in 1..=self.cfg.layers {
            store.register_gaussian(
                &format!("gnn.layer{h}.w"),
                &[d, d],
                std,
                ParamKind::Weight,
                rng,
            );
            store.register_gaussian(
                &format!("gnn.layer{h}.b"),
                &[d],
                std,
                ParamKind::Bias,
                rng,
            );
        }
        store.register_gaussian("gnn.user_table", &[users, d], std, ParamKind::Embedding, rng);
        store.register_gaussian(
            "gnn.topic_table",
            &[topics, d],
            std,
            ParamKind::Embedding,
            rng,
        );
    }

    /// News neighborhood mix: mean of transformed sampled user embeddings plus
    /// the transformed topic embedding. An empty user sample leaves only the
    /// topic term.
    pub fn aggregate_news_neighborhood(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user_embs: &[ValueId],
        topic_emb: ValueId,
    ) -> Result<ValueId> {
        let w_topic = tape.param(store, "gnn.w_topic")?;
        let topic_term = tape.matvec(w_topic, topic_emb)?;
        if user_embs.is_empty() {
            return Ok(topic_term);
        }
        let w_user = tape.param(store, "gnn.w_user")?;
        let transformed: Vec<ValueId> = user_embs
            .iter()
            .map(|u| tape.matvec(w_user, *u))
            .collect::<Result<_>>()?;
        let user_term = tape.mean_of(&transformed)?;
        tape.add(user_term, topic_term)
    }

    /// One propagation layer: ReLU(W^h·x + b^h).
    pub fn layer(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h: usize,
        x: ValueId,
    ) -> Result<ValueId> {
        if h == 0 || h > self.cfg.layers {
            return Err(Error::contract(format!(
                "layer {h} outside 1..={}",
                self.cfg.layers
            )));
        }
        let w = tape.param(store, &format!("gnn.layer{h}.w"))?;
        let b = tape.param(store, &format!("gnn.layer{h}.b"))?;
        let pre = tape.affine(w, x, b)?;
        Ok(tape.relu(pre))
    }

    /// Hop-H embeddings for a batch of (user, news) pairs over the graph.
    /// Samples are drawn from `rng` once per (node, hop) in deterministic
    /// visit order, so a fixed seed fixes the whole pass.
    pub fn propagate<F: FeatureSource>(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        graph: &HetGraph,
        batch: &[(usize, usize)],
        features: &mut F,
        rng: &mut RngState,
    ) -> Result<Vec<PairEmbedding>> {
        let mut ctx = Propagation {
            enc: self,
            store,
            graph,
            features,
            memo: HashMap::new(),
        };
        let h = self.cfg.layers;
        batch
            .iter()
            .map(|(u, d)| {
                Ok(PairEmbedding {
                    user: ctx.embed(tape, NodeRef::User(*u), h, rng)?,
                    news: ctx.embed(tape, NodeRef::News(*d), h, rng)?,
                })
            })
            .collect()
    }
}

struct Propagation<'a, F: FeatureSource> {
    enc: &'a GnnEncoder,
    store: &'a ParameterStore,
    graph: &'a HetGraph,
    features: &'a mut F,
    memo: HashMap<(NodeRef, usize), ValueId>,
}

impl<F: FeatureSource> Propagation<'_, F> {
    fn embed(
        &mut self,
        tape: &mut Tape,
        node: NodeRef,
        hop: usize,
        rng: &mut RngState,
    ) -> Result<ValueId> {
        if let Some(id) = self.memo.get(&(node, hop)) {
            return Ok(*id);
        }
        let id = if hop == 0 {
            match node {
                NodeRef::News(d) => self.features.news_feature(tape, self.store, d)?,
                NodeRef::User(u) => {
                    let table = tape.param(self.store, "gnn.user_table")?;
                    tape.row(table, u)?
                }
                NodeRef::Topic(z) => {
                    let table = tape.param(self.store, "gnn.topic_table")?;
                    tape.row(table, z)?
                }
            }
        } else {
            match node {
                NodeRef::News(d) => self.embed_news(tape, d, hop, rng)?,
                NodeRef::User(_) | NodeRef::Topic(_) => {
                    self.embed_via_news(tape, node, hop, rng)?
                }
            }
        };
        self.memo.insert((node, hop), id);
        Ok(id)
    }

    fn embed_news(
        &mut self,
        tape: &mut Tape,
        d: usize,
        hop: usize,
        rng: &mut RngState,
    ) -> Result<ValueId> {
        let sampled = self
            .graph
            .sample_news_user_neighbors(d, self.enc.cfg.sample_users, rng)?;
        let user_embs: Vec<ValueId> = dedup_sorted(sampled)
            .into_iter()
            .map(|u| self.embed(tape, NodeRef::User(u), hop - 1, rng))
            .collect::<Result<_>>()?;
        let topic = self.graph.news_topic(d)?;
        let topic_emb = self.embed(tape, NodeRef::Topic(topic), hop - 1, rng)?;
        let mixed = self
            .enc
            .aggregate_news_neighborhood(tape, self.store, &user_embs, topic_emb)?;
        self.enc.layer(tape, self.store, hop, mixed)
    }

    fn embed_via_news(
        &mut self,
        tape: &mut Tape,
        node: NodeRef,
        hop: usize,
        rng: &mut RngState,
    ) -> Result<ValueId> {
        let transform = match node {
            NodeRef::User(_) => "gnn.w_news_user",
            NodeRef::Topic(_) => "gnn.w_news_topic",
            NodeRef::News(_) => unreachable!("news handled separately"),
        };
        let w = tape.param(self.store, transform)?;
        let sampled = self
            .graph
            .sample_node_news_neighbors(node, self.enc.cfg.sample_news, rng)?;
        let mut terms: Vec<ValueId> = dedup_sorted(sampled)
            .into_iter()
            .map(|d| {
                let e = self.embed(tape, NodeRef::News(d), hop - 1, rng)?;
                tape.matvec(w, e)
            })
            .collect::<Result<_>>()?;
        if terms.is_empty() || self.enc.cfg.include_self {
            // No neighbors: fall back to the node's own transformed embedding.
            // With include_self the own embedding joins the mean instead.
            let own = self.embed(tape, node, hop - 1, rng)?;
            terms.push(tape.matvec(w, own)?);
        }
        let mixed = tape.mean_of(&terms)?;
        self.enc.layer(tape, self.store, hop, mixed)
    }
}

/// Collapses a sampled multiset to its sorted distinct members, so the
/// neighborhood mean weighs each distinct neighbor once and full-coverage
/// samples reproduce the dense neighborhood exactly.
fn dedup_sorted(mut ids: Vec<usize>) -> Vec<usize> {
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClickEvent;
    use crate::numerics::gradcheck::{check_params, FD_STEP, FD_TOL};
    use crate::numerics::Tensor;

    fn ev(user: usize, news: usize) -> ClickEvent {
        ClickEvent { user, news, ts: 0 }
    }

    fn cfg(dim: usize, layers: usize) -> GnnConfig {
        GnnConfig {
            dim,
            layers,
            sample_users: 16,
            sample_news: 16,
            include_self: false,
        }
    }

    fn fixed_features(news: usize, dim: usize, seed: u64) -> FixedFeatures {
        let mut rng = RngState::new(seed);
        FixedFeatures::new(
            (0..news)
                .map(|_| Tensor::gaussian(&[dim], 0.0, 1.0, &mut rng))
                .collect(),
        )
    }

    fn setup(
        c: &GnnConfig,
        users: usize,
        topics: usize,
        seed: u64,
    ) -> (GnnEncoder, ParameterStore) {
        let enc = GnnEncoder::new(c.clone()).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = RngState::new(seed);
        enc.register(&mut store, users, topics, 0.3, &mut rng);
        (enc, store)
    }

    fn set_identity(store: &mut ParameterStore, name: &str, dim: usize) {
        let t = &mut store.get_mut(name).unwrap().value;
        t.fill(0.0);
        for i in 0..dim {
            t.set2(i, i, 1.0);
        }
    }

    /// Independent dense-neighborhood reference: plain Vec math over full
    /// adjacency lists, no tape, no sampling.
    mod oracle {
        use super::*;

        fn mat(store: &ParameterStore, name: &str) -> (Vec<Real>, usize, usize) {
            let t = &store.get(name).unwrap().value;
            (t.data().to_vec(), t.shape()[0], t.shape()[1])
        }

        fn mv(m: &(Vec<Real>, usize, usize), x: &[Real]) -> Vec<Real> {
            let (data, rows, cols) = m;
            (0..*rows)
                .map(|r| (0..*cols).map(|c| data[r * cols + c] * x[c]).sum())
                .collect()
        }

        fn add(a: &mut [Real], b: &[Real]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }

        fn relu(x: &mut [Real]) {
            for v in x {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }

        pub fn embed(
            store: &ParameterStore,
            graph: &HetGraph,
            features: &[Tensor],
            node: NodeRef,
            hop: usize,
            include_self: bool,
        ) -> Vec<Real> {
            if hop == 0 {
                return match node {
                    NodeRef::News(d) => features[d].data().to_vec(),
                    NodeRef::User(u) => {
                        store.get("gnn.user_table").unwrap().value.row(u).to_vec()
                    }
                    NodeRef::Topic(z) => {
                        store.get("gnn.topic_table").unwrap().value.row(z).to_vec()
                    }
                };
            }
            let dim = features[0].len();
            let mixed = match node {
                NodeRef::News(d) => {
                    let mut acc = vec![0.0; dim];
                    let users = graph.news_users(d).unwrap();
                    if !users.is_empty() {
                        let w_u = mat(store, "gnn.w_user");
                        for u in users {
                            let e = embed(store, graph, features, NodeRef::User(*u), hop - 1, include_self);
                            add(&mut acc, &mv(&w_u, &e));
                        }
                        for v in acc.iter_mut() {
                            *v /= users.len() as Real;
                        }
                    }
                    let w_z = mat(store, "gnn.w_topic");
                    let z = graph.news_topic(d).unwrap();
                    let ze = embed(store, graph, features, NodeRef::Topic(z), hop - 1, include_self);
                    add(&mut acc, &mv(&w_z, &ze));
                    acc
                }
                NodeRef::User(_) | NodeRef::Topic(_) => {
                    let (w, neighbors) = match node {
                        NodeRef::User(u) => (
                            mat(store, "gnn.w_news_user"),
                            graph.user_news(u).unwrap(),
                        ),
                        NodeRef::Topic(z) => (
                            mat(store, "gnn.w_news_topic"),
                            graph.topic_news(z).unwrap(),
                        ),
                        NodeRef::News(_) => unreachable!(),
                    };
                    let mut terms: Vec<Vec<Real>> = neighbors
                        .iter()
                        .map(|d| {
                            let e = embed(store, graph, features, NodeRef::News(*d), hop - 1, include_self);
                            mv(&w, &e)
                        })
                        .collect();
                    if terms.is_empty() || include_self {
                        let own = embed(store, graph, features, node, hop - 1, include_self);
                        terms.push(mv(&w, &own));
                    }
                    let mut acc = vec![0.0; dim];
                    for t in &terms {
                        add(&mut acc, t);
                    }
                    for v in acc.iter_mut() {
                        *v /= terms.len() as Real;
                    }
                    acc
                }
            };
            let w = mat(store, &format!("gnn.layer{hop}.w"));
            let b = &store.get(&format!("gnn.layer{hop}.b")).unwrap().value;
            let mut out = mv(&w, &mixed);
            add(&mut out, b.data());
            relu(&mut out);
            out
        }
    }

    #[test]
    fn identity_transforms_add_user_and_topic() {
        let c = cfg(3, 1);
        let (enc, mut store) = setup(&c, 1, 1, 1);
        set_identity(&mut store, "gnn.w_user", 3);
        set_identity(&mut store, "gnn.w_topic", 3);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let z = tape.constant(Tensor::from_vec(vec![3], vec![10.0, 20.0, 30.0]).unwrap());
        let out = enc
            .aggregate_news_neighborhood(&mut tape, &store, &[u], z)
            .unwrap();
        assert_eq!(tape.value(out).data(), &[11.0, 22.0, 33.0]);
    }

    #[test]
    fn empty_user_sample_leaves_topic_term() {
        let c = cfg(3, 1);
        let (enc, mut store) = setup(&c, 1, 1, 2);
        set_identity(&mut store, "gnn.w_topic", 3);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_vec(vec![3], vec![4.0, 5.0, 6.0]).unwrap());
        let out = enc
            .aggregate_news_neighborhood(&mut tape, &store, &[], z)
            .unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn duplicate_user_samples_average_to_the_single_embedding() {
        let c = cfg(3, 1);
        let (enc, store) = setup(&c, 1, 1, 3);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let z = tape.constant(Tensor::from_vec(vec![3], vec![0.3, 0.1, -0.7]).unwrap());
        let once = enc
            .aggregate_news_neighborhood(&mut tape, &store, &[u], z)
            .unwrap();
        let ten = enc
            .aggregate_news_neighborhood(&mut tape, &store, &[u; 10], z)
            .unwrap();
        for (a, b) in tape.value(once).data().iter().zip(tape.value(ten).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_is_relu_affine() {
        let c = cfg(3, 1);
        let (enc, mut store) = setup(&c, 1, 1, 4);
        set_identity(&mut store, "gnn.layer1.w", 3);
        store.get_mut("gnn.layer1.b").unwrap().value.fill(0.0);
        let mut tape = Tape::new();
        let zero = tape.zeros(&[3]);
        let out = enc.layer(&mut tape, &store, 1, zero).unwrap();
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
        let x = tape.constant(Tensor::from_vec(vec![3], vec![-1.0, 2.0, -0.5]).unwrap());
        let out = enc.layer(&mut tape, &store, 1, x).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 2.0, 0.0]);
        assert!(enc.layer(&mut tape, &store, 0, x).is_err());
        assert!(enc.layer(&mut tape, &store, 2, x).is_err());
    }

    /// u0-d0-t0-d1-u1: a 4-node path graph plus topic hub.
    fn path_graph() -> (HetGraph, Vec<ClickEvent>) {
        let events = vec![ev(0, 0), ev(1, 1)];
        let g = HetGraph::build(&events, &[0, 0], 2, 1).unwrap();
        (g, events)
    }

    #[test]
    fn one_layer_propagation_equals_manual_composition() {
        let c = cfg(4, 1);
        let (enc, store) = setup(&c, 2, 1, 5);
        let (g, _) = path_graph();
        let mut features = fixed_features(2, 4, 6);

        let mut tape = Tape::new();
        let mut rng = RngState::new(7);
        let out = enc
            .propagate(&mut tape, &store, &g, &[(0, 0)], &mut features, &mut rng)
            .unwrap();

        // Manual: d0's only user is u0, topic t0.
        let mut tape2 = Tape::new();
        features.reset();
        let u0 = {
            let t = tape2.param(&store, "gnn.user_table").unwrap();
            tape2.row(t, 0).unwrap()
        };
        let z0 = {
            let t = tape2.param(&store, "gnn.topic_table").unwrap();
            tape2.row(t, 0).unwrap()
        };
        let d0 = features.news_feature(&mut tape2, &store, 0).unwrap();
        let _ = d0;
        let mixed = enc
            .aggregate_news_neighborhood(&mut tape2, &store, &[u0], z0)
            .unwrap();
        let want_news = enc.layer(&mut tape2, &store, 1, mixed).unwrap();
        for (a, b) in tape
            .value(out[0].news)
            .data()
            .iter()
            .zip(tape2.value(want_news).data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn path_signal_crosses_the_topic_hub() {
        // On u0-d0-t0-d1-u1, the chain u1 -> d1 -> t0 -> d0 spans three
        // edges, so u1's table row reaches d0's embedding at depth 3 (and,
        // by the locality rule, not before).
        let (g, _) = path_graph();
        let mut features = fixed_features(2, 4, 9);

        let mut run = |layers: usize, bump: Real| {
            let c = cfg(4, layers);
            let (enc, mut store) = setup(&c, 2, 1, 8);
            store.get_mut("gnn.user_table").unwrap().value.row_mut(1)[0] += bump;
            features.reset();
            let mut tape = Tape::new();
            let mut rng = RngState::new(10);
            let out = enc
                .propagate(&mut tape, &store, &g, &[(0, 0)], &mut features, &mut rng)
                .unwrap();
            tape.value(out[0].news).data().to_vec()
        };
        assert_eq!(
            run(2, 0.0),
            run(2, 2.0),
            "3-edge path must not reach a depth-2 embedding"
        );
        assert_ne!(
            run(3, 0.0),
            run(3, 2.0),
            "signal must flow across the topic hub at depth 3"
        );
    }

    #[test]
    fn embeddings_depend_only_on_nodes_within_h_hops() {
        // Graph: u0-d0-t0, plus d1 on t0 clicked by u1, plus d2 clicked by u1
        // with its own topic t1. From d0, u1 is 3 hops (d0-t0-d1-u1), so at
        // H=2 changing u1's table row cannot move d0; changing 2-hop nodes can.
        let events = vec![ev(0, 0), ev(1, 1), ev(1, 2)];
        let g = HetGraph::build(&events, &[0, 0, 1], 2, 2).unwrap();
        let c = cfg(4, 2);
        let (enc, mut store) = setup(&c, 2, 2, 11);
        let mut features = fixed_features(3, 4, 12);

        let run = |store: &ParameterStore, features: &mut FixedFeatures| {
            features.reset();
            let mut tape = Tape::new();
            let mut rng = RngState::new(13);
            let out = enc
                .propagate(&mut tape, store, &g, &[(0, 0)], features, &mut rng)
                .unwrap();
            tape.value(out[0].news).data().to_vec()
        };
        let base = run(&store, &mut features);
        store.get_mut("gnn.user_table").unwrap().value.row_mut(1)[0] += 5.0;
        let after_3hop = run(&store, &mut features);
        assert_eq!(base, after_3hop, "3-hop node leaked into a 2-layer embedding");

        // d1 is 2 hops from d0 (d0-t0-d1): its feature does reach d0.
        features.features[1].data_mut()[0] += 5.0;
        let after_2hop = run(&store, &mut features);
        assert_ne!(base, after_2hop, "2-hop news must reach the embedding");
    }

    #[test]
    fn full_sampling_matches_dense_oracle() {
        // Random small graphs; sample sizes exceed every degree, so sampling
        // covers full neighborhoods and must reproduce the dense computation.
        for trial in 0..10 {
            let mut rng = RngState::new(1000 + trial);
            let (users, news, topics) = (5, 8, 3);
            let events: Vec<ClickEvent> = (0..12)
                .map(|_| ev(rng.below(users), rng.below(news)))
                .collect();
            let assignments: Vec<usize> = (0..news).map(|_| rng.below(topics)).collect();
            let g = HetGraph::build(&events, &assignments, users, topics).unwrap();

            for layers in [1, 2] {
                let c = cfg(4, layers);
                let (enc, store) = setup(&c, users, topics, 2000 + trial);
                let mut features = fixed_features(news, 4, 3000 + trial);
                let feature_tensors: Vec<Tensor> = (0..news)
                    .map(|d| {
                        let mut r = RngState::new(3000 + trial);
                        let all: Vec<Tensor> =
                            (0..news).map(|_| Tensor::gaussian(&[4], 0.0, 1.0, &mut r)).collect();
                        all[d].clone()
                    })
                    .collect();

                let mut tape = Tape::new();
                let mut prng = RngState::new(4000 + trial);
                let batch: Vec<(usize, usize)> =
                    (0..users).map(|u| (u, u % news)).collect();
                let out = enc
                    .propagate(&mut tape, &store, &g, &batch, &mut features, &mut prng)
                    .unwrap();

                for (i, (u, d)) in batch.iter().enumerate() {
                    let want_u = oracle::embed(
                        &store,
                        &g,
                        &feature_tensors,
                        NodeRef::User(*u),
                        layers,
                        false,
                    );
                    let want_d = oracle::embed(
                        &store,
                        &g,
                        &feature_tensors,
                        NodeRef::News(*d),
                        layers,
                        false,
                    );
                    for (a, b) in tape.value(out[i].user).data().iter().zip(&want_u) {
                        assert!((a - b).abs() < 1e-10, "user mismatch {a} vs {b}");
                    }
                    for (a, b) in tape.value(out[i].news).data().iter().zip(&want_d) {
                        assert!((a - b).abs() < 1e-10, "news mismatch {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn full_sampling_is_deterministic_across_seeds() {
        let (g, _) = path_graph();
        let c = cfg(4, 2);
        let (enc, store) = setup(&c, 2, 1, 14);
        let run = |seed: u64| {
            let mut features = fixed_features(2, 4, 15);
            let mut tape = Tape::new();
            let mut rng = RngState::new(seed);
            let out = enc
                .propagate(&mut tape, &store, &g, &[(0, 0), (1, 1)], &mut features, &mut rng)
                .unwrap();
            out.iter()
                .flat_map(|p| {
                    tape.value(p.user)
                        .data()
                        .iter()
                        .chain(tape.value(p.news).data())
                        .copied()
                        .collect::<Vec<Real>>()
                })
                .collect::<Vec<Real>>()
        };
        // Sampling covers whole neighborhoods, so even different seeds agree.
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn isolated_user_falls_back_to_own_embedding() {
        // User 1 never clicked; at H=1, u_l = ReLU(W¹·(W_nu·u₀) + b¹).
        let g = HetGraph::build(&[ev(0, 0)], &[0], 2, 1).unwrap();
        let c = cfg(3, 1);
        let (enc, mut store) = setup(&c, 2, 1, 16);
        set_identity(&mut store, "gnn.w_news_user", 3);
        set_identity(&mut store, "gnn.layer1.w", 3);
        store.get_mut("gnn.layer1.b").unwrap().value.fill(0.0);
        let own: Vec<Real> = store.get("gnn.user_table").unwrap().value.row(1).to_vec();

        let mut features = fixed_features(1, 3, 17);
        let mut tape = Tape::new();
        let mut rng = RngState::new(18);
        let out = enc
            .propagate(&mut tape, &store, &g, &[(1, 0)], &mut features, &mut rng)
            .unwrap();
        let got = tape.value(out[0].user).data();
        for (g_val, o) in got.iter().zip(&own) {
            assert!((g_val - o.max(0.0)).abs() < 1e-12, "{got:?} vs relu({own:?})");
        }
    }

    #[test]
    fn include_self_changes_connected_node_embeddings() {
        let (g, _) = path_graph();
        let run = |include_self: bool| {
            let c = GnnConfig {
                include_self,
                ..cfg(4, 2)
            };
            let (enc, store) = setup(&c, 2, 1, 19);
            let mut features = fixed_features(2, 4, 20);
            let mut tape = Tape::new();
            let mut rng = RngState::new(21);
            let out = enc
                .propagate(&mut tape, &store, &g, &[(0, 0)], &mut features, &mut rng)
                .unwrap();
            tape.value(out[0].user).data().to_vec()
        };
        assert_ne!(run(false), run(true));
    }

    #[test]
    fn gradients_flow_to_every_parameter_group() {
        let events = vec![ev(0, 0), ev(0, 1), ev(1, 1)];
        let g = HetGraph::build(&events, &[0, 1], 2, 2).unwrap();
        let c = cfg(3, 2);
        let (enc, mut store) = setup(&c, 2, 2, 22);
        let features = fixed_features(2, 3, 23);
        let features = std::cell::RefCell::new(features);

        let run = |store: &ParameterStore, record: bool| -> (Tape, ValueId) {
            let mut f = features.borrow_mut();
            f.reset();
            let mut tape = if record {
                Tape::new()
            } else {
                Tape::forward_only()
            };
            let mut rng = RngState::new(24);
            let out = enc
                .propagate(&mut tape, store, &g, &[(0, 0), (1, 1)], &mut *f, &mut rng)
                .unwrap();
            let mut parts = Vec::new();
            for p in &out {
                parts.push(p.user);
                parts.push(p.news);
            }
            let all = tape.concat(&parts).unwrap();
            let loss = tape.dot(all, all).unwrap();
            (tape, loss)
        };

        let (mut tape, loss) = run(&store, true);
        tape.backward(loss).unwrap();
        tape.grads_into(&mut store).unwrap();

        for group in [
            "gnn.w_user",
            "gnn.w_topic",
            "gnn.w_news_user",
            "gnn.w_news_topic",
            "gnn.layer1.w",
            "gnn.layer1.b",
            "gnn.layer2.w",
            "gnn.layer2.b",
            "gnn.user_table",
            "gnn.topic_table",
        ] {
            let g = &store.get(group).unwrap().grad;
            assert!(
                g.data().iter().any(|v| *v != 0.0),
                "no gradient reached {group}"
            );
        }

        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut f = |s: &ParameterStore| -> Result<Real> {
            let (tape, loss) = run(s, false);
            Ok(tape.value(loss).item())
        };
        for (name, err) in check_params(&mut store, &names, FD_STEP, &mut f).unwrap() {
            assert!(err < FD_TOL, "{name} rel err {err}");
        }
    }

    #[test]
    fn depth_outside_supported_range_is_rejected() {
        assert!(GnnEncoder::new(GnnConfig {
            layers: 0,
            ..GnnConfig::default()
        })
        .is_err());
        assert!(GnnEncoder::new(GnnConfig {
            layers: 4,
            ..GnnConfig::default()
        })
        .is_err());
    }
}
