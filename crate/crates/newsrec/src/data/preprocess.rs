//! Text preprocessing: tokenization, stopword removal, entity-type
//! filtering, vocabularies, and the assembly of an id-space corpus.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::data::{ClickEvent, RawEvent};
use crate::error::{Error, Result};
use crate::text_extractor::NewsItem;

/// Reserved id for padding.
pub const PAD: usize = 0;
/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 1;

/// Entity types retained from news profiles; every other type is dropped.
pub const ENTITY_TYPES: [&str; 11] = [
    "concept",
    "sentiment",
    "entity",
    "classification",
    "category",
    "adressa-tag",
    "person",
    "location",
    "company",
    "taxonomy",
    "acronym",
];

fn keep_entity_type(ty: &str) -> bool {
    ENTITY_TYPES.iter().any(|t| *t == ty)
}

/// Token → id bijection with reserved padding and unknown rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.push("<pad>".to_string());
        v.push("<unk>".to_string());
        v
    }

    fn push(&mut self, token: String) -> usize {
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Id of `token`, inserting it if new.
    pub fn intern(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(id) => *id,
            None => self.push(token.to_string()),
        }
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Total rows including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved rows are always present
    }

    /// Interned tokens excluding the reserved rows.
    pub fn interned(&self) -> usize {
        self.tokens.len() - 2
    }

    /// `token<TAB>id` per line, id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, token) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{token}\t{id}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("vocabulary line {line:?} lacks a tab")))?;
            let id: usize = id
                .parse()
                .map_err(|e| Error::Data(format!("vocabulary id {id:?}: {e}")))?;
            if id != tokens.len() {
                return Err(Error::Data(format!(
                    "vocabulary ids must be contiguous: expected {}, got {id}",
                    tokens.len()
                )));
            }
            tokens.push(token.to_string());
        }
        if tokens.len() < 2 || tokens[PAD] != "<pad>" || tokens[UNK] != "<unk>" {
            return Err(Error::Data(
                "vocabulary must start with the reserved <pad> and <unk> rows".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self { tokens, index })
    }
}

/// A lowercase stopword set.
#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled Norwegian list.
    pub fn norwegian() -> Self {
        Self::from_text(include_str!("stopwords_no.txt"))
    }

    /// One word per line; blank lines ignored; lowercased.
    pub fn from_text(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercase, split on non-alphanumeric characters, drop stopwords.
pub fn tokenize(text: &str, stop: &Stopwords) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stop.contains(t))
        .map(str::to_string)
        .collect()
}

/// Summary statistics of an ingested corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub users: usize,
    pub news: usize,
    pub events: usize,
    /// Distinct title words interned (reserved rows excluded).
    pub vocabulary: usize,
    /// Distinct retained entity types observed.
    pub entity_types: usize,
    pub avg_words_per_title: f64,
    pub avg_entities_per_news: f64,
}

impl CorpusStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats are always serializable")
    }
}

/// A fully id-mapped dataset ready for modeling.
#[derive(Debug, Clone)]
pub struct Corpus {
    /// Timestamp-sorted clicks in id space.
    pub events: Vec<ClickEvent>,
    /// One entry per news id: tokenized title and filtered profile.
    pub news: Vec<NewsItem>,
    /// News id → original string id.
    pub news_names: Vec<String>,
    /// User id → original string id.
    pub user_names: Vec<String>,
    pub words: Vocabulary,
    pub entities: Vocabulary,
    pub types: Vocabulary,
    pub stats: CorpusStats,
}

/// Map raw events into id space. Users and news get ids in first-appearance
/// order (after timestamp sorting). Each news takes its title and profile
/// from its first event. Tokens of news first seen at or after
/// `vocab_cutoff` are looked up, not interned, so the vocabulary reflects
/// only the earlier window; unknown tokens map to [`UNK`].
pub fn preprocess(raw: &[RawEvent], stop: &Stopwords, vocab_cutoff: i64) -> Result<Corpus> {
    if raw.is_empty() {
        return Err(Error::Data("cannot preprocess an empty event log".into()));
    }
    let mut ordered: Vec<&RawEvent> = raw.iter().collect();
    ordered.sort_by_key(|e| e.ts);

    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut news_ids: HashMap<&str, usize> = HashMap::new();
    let mut user_names = Vec::new();
    let mut news_names = Vec::new();
    let mut first_event: Vec<&RawEvent> = Vec::new();
    let mut events = Vec::with_capacity(ordered.len());
    for e in &ordered {
        let e: &RawEvent = e;
        let user = *user_ids.entry(e.user.as_str()).or_insert_with(|| {
            user_names.push(e.user.clone());
            user_names.len() - 1
        });
        let news = *news_ids.entry(e.news.as_str()).or_insert_with(|| {
            news_names.push(e.news.clone());
            first_event.push(e);
            news_names.len() - 1
        });
        events.push(ClickEvent { user, news, ts: e.ts });
    }

    let mut words = Vocabulary::new();
    let mut entities = Vocabulary::new();
    let mut types = Vocabulary::new();
    let mut news = Vec::with_capacity(first_event.len());
    let mut title_words = 0usize;
    let mut profile_entries = 0usize;
    let mut seen_types: HashSet<usize> = HashSet::new();
    for (id, e) in first_event.iter().enumerate() {
        let in_vocab_window = e.ts < vocab_cutoff;
        let title: Vec<usize> = tokenize(&e.title, stop)
            .iter()
            .map(|t| {
                if in_vocab_window {
                    words.intern(t)
                } else {
                    words.id(t)
                }
            })
            .collect();
        let mut profile = Vec::new();
        for (entity, ty) in &e.profile {
            let ty_norm = ty.trim().to_lowercase();
            if !keep_entity_type(&ty_norm) {
                continue;
            }
            let (ent_id, ty_id) = if in_vocab_window {
                (entities.intern(entity), types.intern(&ty_norm))
            } else {
                (entities.id(entity), types.id(&ty_norm))
            };
            seen_types.insert(ty_id);
            profile.push((ent_id, ty_id));
        }
        title_words += title.len();
        profile_entries += profile.len();
        news.push(NewsItem { id, title, profile });
    }

    let stats = CorpusStats {
        users: user_names.len(),
        news: news.len(),
        events: events.len(),
        vocabulary: words.interned(),
        entity_types: seen_types.len(),
        avg_words_per_title: title_words as f64 / news.len() as f64,
        avg_entities_per_news: profile_entries as f64 / news.len() as f64,
    };
    Ok(Corpus {
        events,
        news,
        news_names,
        user_names,
        words,
        entities,
        types,
        stats,
    })
}
