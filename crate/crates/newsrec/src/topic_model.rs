//! Latent topic mining over news text.
//!
//! Latent Dirichlet Allocation trained by collapsed Gibbs sampling. Each news
//! document (title words plus profile entities, in one shared token space)
//! gets a topic distribution θ; the argmax topic links the item to a topic
//! node in the heterogeneous graph. Unseen documents are folded in against
//! the frozen topic-word counts so the trained model never shifts under them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Real, RngState};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const MODEL_MAGIC: &[u8; 8] = b"NWSRLDA\0";
const MODEL_VERSION: u32 = 1;

/// Sampler configuration. `alpha` defaults to 50/topics and `beta` to 0.01.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    pub alpha: Real,
    pub beta: Real,
    pub train_sweeps: usize,
    pub fold_in_sweeps: usize,
}

impl LdaConfig {
    pub fn for_topics(topics: usize) -> Self {
        Self {
            topics,
            alpha: 50.0 / topics as Real,
            beta: 0.01,
            train_sweeps: 1000,
            fold_in_sweeps: 100,
        }
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self::for_topics(20)
    }
}

/// Trained topic model: frozen topic-word counts plus the training corpus's
/// document-topic counts and per-token assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    topics: usize,
    vocab: usize,
    alpha: Real,
    beta: Real,
    /// Topic-word counts, row-major [topics × vocab].
    topic_word: Vec<u64>,
    /// Per-topic totals, Σ_w topic_word[k][w].
    topic_total: Vec<u64>,
    /// Document-topic counts for the training corpus, row-major [docs × topics].
    doc_topic: Vec<u64>,
    /// Token count per training document.
    doc_len: Vec<u64>,
    /// Per-token topic assignments for the training corpus.
    assignments: Vec<Vec<u32>>,
}

/// Argmax with ties broken by the lowest index.
pub fn assign_topic(theta: &[Real]) -> usize {
    let mut best = 0;
    for (i, v) in theta.iter().enumerate().skip(1) {
        if *v > theta[best] {
            best = i;
        }
    }
    best
}

impl LdaModel {
    /// Collapsed Gibbs training over a bag-of-words corpus. Empty documents
    /// are tolerated and end up with a uniform θ. Token ids must lie below
    /// `vocab`.
    pub fn train(
        corpus: &[Vec<usize>],
        vocab: usize,
        cfg: &LdaConfig,
        rng: &mut RngState,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::contract("topic model needs a non-empty corpus"));
        }
        if cfg.topics == 0 || vocab == 0 {
            return Err(Error::contract("topic and vocabulary counts must be positive"));
        }
        if cfg.alpha <= 0.0 || cfg.beta <= 0.0 {
            return Err(Error::contract("Dirichlet priors must be positive"));
        }
        for (d, doc) in corpus.iter().enumerate() {
            if let Some(w) = doc.iter().find(|w| **w >= vocab) {
                return Err(Error::contract(format!(
                    "document {d} token id {w} outside vocabulary of {vocab}"
                )));
            }
        }

        let k = cfg.topics;
        let mut model = Self {
            topics: k,
            vocab,
            alpha: cfg.alpha,
            beta: cfg.beta,
            topic_word: vec![0; k * vocab],
            topic_total: vec![0; k],
            doc_topic: vec![0; corpus.len() * k],
            doc_len: corpus.iter().map(|d| d.len() as u64).collect(),
            assignments: Vec::with_capacity(corpus.len()),
        };

        // Uniform random initial assignment.
        for (d, doc) in corpus.iter().enumerate() {
            let mut zs = Vec::with_capacity(doc.len());
            for &w in doc {
                let z = rng.below(k);
                model.topic_word[z * vocab + w] += 1;
                model.topic_total[z] += 1;
                model.doc_topic[d * k + z] += 1;
                zs.push(z as u32);
            }
            model.assignments.push(zs);
        }

        let mut weights = vec![0.0; k];
        for _ in 0..cfg.train_sweeps {
            for (d, doc) in corpus.iter().enumerate() {
                for (i, &w) in doc.iter().enumerate() {
                    let old = model.assignments[d][i] as usize;
                    model.topic_word[old * vocab + w] -= 1;
                    model.topic_total[old] -= 1;
                    model.doc_topic[d * k + old] -= 1;

                    for (z, slot) in weights.iter_mut().enumerate() {
                        let nd = model.doc_topic[d * k + z] as Real;
                        let nw = model.topic_word[z * vocab + w] as Real;
                        let nt = model.topic_total[z] as Real;
                        *slot = (nd + cfg.alpha) * (nw + cfg.beta)
                            / (nt + vocab as Real * cfg.beta);
                    }
                    let new = rng.categorical(&weights);

                    model.topic_word[new * vocab + w] += 1;
                    model.topic_total[new] += 1;
                    model.doc_topic[d * k + new] += 1;
                    model.assignments[d][i] = new as u32;
                }
            }
        }
        Ok(model)
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn doc_count(&self) -> usize {
        self.doc_len.len()
    }

    /// Total tokens currently accounted for in the topic-word counts.
    pub fn token_count(&self) -> u64 {
        self.topic_total.iter().sum()
    }

    /// Smoothed topic distribution of training document `d`:
    /// θ_k = (n_dk + α) / (n_d + Kα).
    pub fn theta(&self, d: usize) -> Result<Vec<Real>> {
        if d >= self.doc_len.len() {
            return Err(Error::contract(format!("no training document {d}")));
        }
        let k = self.topics;
        let denom = self.doc_len[d] as Real + k as Real * self.alpha;
        Ok((0..k)
            .map(|z| (self.doc_topic[d * k + z] as Real + self.alpha) / denom)
            .collect())
    }

    /// Smoothed word distribution of topic `k`:
    /// φ_w = (n_kw + β) / (n_k + Vβ).
    pub fn phi(&self, k: usize) -> Result<Vec<Real>> {
        if k >= self.topics {
            return Err(Error::contract(format!("no topic {k}")));
        }
        let denom = self.topic_total[k] as Real + self.vocab as Real * self.beta;
        Ok(self.topic_word[k * self.vocab..(k + 1) * self.vocab]
            .iter()
            .map(|n| (*n as Real + self.beta) / denom)
            .collect())
    }

    /// Fold-in inference for an unseen document: resample only the document's
    /// own assignments against the frozen topic-word counts. Tokens outside
    /// the vocabulary are ignored; a document with no usable tokens gets a
    /// uniform θ.
    pub fn infer(&self, doc: &[usize], sweeps: usize, rng: &mut RngState) -> Vec<Real> {
        let k = self.topics;
        let tokens: Vec<usize> = doc.iter().copied().filter(|w| *w < self.vocab).collect();
        if tokens.is_empty() {
            return vec![1.0 / k as Real; k];
        }

        let mut local = vec![0u64; k];
        let mut zs = Vec::with_capacity(tokens.len());
        for _ in &tokens {
            let z = rng.below(k);
            local[z] += 1;
            zs.push(z);
        }
        let mut weights = vec![0.0; k];
        for _ in 0..sweeps {
            for (i, &w) in tokens.iter().enumerate() {
                local[zs[i]] -= 1;
                for (z, slot) in weights.iter_mut().enumerate() {
                    let nw = self.topic_word[z * self.vocab + w] as Real;
                    let nt = self.topic_total[z] as Real;
                    *slot = (local[z] as Real + self.alpha) * (nw + self.beta)
                        / (nt + self.vocab as Real * self.beta);
                }
                let new = rng.categorical(&weights);
                local[new] += 1;
                zs[i] = new;
            }
        }
        let denom = tokens.len() as Real + k as Real * self.alpha;
        local
            .iter()
            .map(|n| (*n as Real + self.alpha) / denom)
            .collect()
    }

    /// Fold-in over many documents, each on an independent derived stream so
    /// the result is identical however the batch is scheduled.
    #[cfg(feature = "parallel")]
    pub fn infer_batch(
        &self,
        docs: &[Vec<usize>],
        sweeps: usize,
        rng: &RngState,
    ) -> Vec<Vec<Real>> {
        docs.par_iter()
            .enumerate()
            .map(|(i, doc)| {
                let mut local = rng.derive(i as u64);
                self.infer(doc, sweeps, &mut local)
            })
            .collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn infer_batch(
        &self,
        docs: &[Vec<usize>],
        sweeps: usize,
        rng: &RngState,
    ) -> Vec<Vec<Real>> {
        self.infer_batch_sequential(docs, sweeps, rng)
    }

    /// Single-threaded reference path for [`LdaModel::infer_batch`].
    pub fn infer_batch_sequential(
        &self,
        docs: &[Vec<usize>],
        sweeps: usize,
        rng: &RngState,
    ) -> Vec<Vec<Real>> {
        docs.iter()
            .enumerate()
            .map(|(i, doc)| {
                let mut local = rng.derive(i as u64);
                self.infer(doc, sweeps, &mut local)
            })
            .collect()
    }

    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&(self.topics as u64).to_le_bytes())?;
        out.write_all(&(self.vocab as u64).to_le_bytes())?;
        out.write_all(&(self.alpha as f64).to_le_bytes())?;
        out.write_all(&(self.beta as f64).to_le_bytes())?;
        for n in &self.topic_word {
            out.write_all(&n.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.save(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Loads the frozen inference model (topic-word counts only; training-side
    /// document state is not persisted).
    pub fn load<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Data("not a topic model file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported topic model version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let topics = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let vocab = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let alpha = f64::from_le_bytes(b8) as Real;
        input.read_exact(&mut b8)?;
        let beta = f64::from_le_bytes(b8) as Real;
        if topics == 0 || vocab == 0 {
            return Err(Error::Data("topic model header has zero dimensions".into()));
        }
        let mut topic_word = vec![0u64; topics * vocab];
        for n in topic_word.iter_mut() {
            input.read_exact(&mut b8)?;
            *n = u64::from_le_bytes(b8);
        }
        let topic_total = (0..topics)
            .map(|k| topic_word[k * vocab..(k + 1) * vocab].iter().sum())
            .collect();
        Ok(Self {
            topics,
            vocab,
            alpha,
            beta,
            topic_word,
            topic_total,
            doc_topic: Vec::new(),
            doc_len: Vec::new(),
            assignments: Vec::new(),
        })
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        Self::load(&mut BufReader::new(File::open(path)?))
    }
}
