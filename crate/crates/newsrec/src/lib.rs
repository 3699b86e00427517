//! Graph-neural news recommendation engine.
//!
//! The model scores (user, candidate article) pairs by combining three
//! signals:
//!
//! * **Long-term interest** — user embeddings propagated through a
//!   heterogeneous user–news–topic graph by a layered GNN ([`gnn`],
//!   [`hetgraph`]).
//! * **Short-term interest** — an attention-LSTM encoder over the user's
//!   most recent clicks ([`short_term`]).
//! * **Article content** — a dual-channel CNN over title words and entity
//!   profiles ([`text_extractor`]), with article topics assigned by an LDA
//!   topic model ([`topic_model`]) so brand-new articles still connect to
//!   the graph.
//!
//! Everything trains end-to-end from scratch on a reverse-mode autodiff tape
//! ([`numerics`]) with Adam. [`data`] ingests click logs (Adressa-style
//! JSON lines or a TSV fallback) and can generate synthetic corpora with
//! planted interest clusters; [`eval`] provides AUC/F1 and chronological
//! splits; [`pipeline`] wires the full batch workflow used by the `newsrec`
//! CLI ([`cli`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod hetgraph;
pub mod numerics;
pub mod pipeline;
pub mod predictor;
pub mod short_term;
pub mod text_extractor;
pub mod topic_model;

pub use error::{Error, Result};
pub use numerics::Real;
