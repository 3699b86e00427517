//! Dataset handling: ingestion, preprocessing, and synthetic corpora.

pub mod ingest;
pub mod preprocess;
pub mod synthetic;

pub use ingest::{ingest, ingest_str, to_tsv, IngestReport, RawEvent};
pub use preprocess::{
    preprocess, tokenize, Corpus, CorpusStats, Stopwords, Vocabulary, ENTITY_TYPES, PAD, UNK,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTruth};

/// One click in id space: user `user` clicked news `news` at Unix time `ts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickEvent {
    pub user: usize,
    pub news: usize,
    pub ts: i64,
}
