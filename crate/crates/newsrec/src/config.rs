//! Run configuration: one flat struct holding every hyperparameter, the
//! split plan, and the seed.
//!
//! Configs load from a flat-key TOML file; any key left out keeps its
//! default, and unknown keys are rejected so typos fail loudly instead of
//! silently running with defaults. Command-line flags override file values;
//! the CLI serializes the fully resolved struct back to TOML next to the run
//! artifacts, so every run records exactly what it used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Every knob of a training or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // -- text encoder --
    /// Word and entity embedding width.
    pub word_dim: usize,
    /// Entity-type embedding width.
    pub type_dim: usize,
    /// Shared embedding width D of news, users, and topics.
    pub feature_dim: usize,
    /// Convolution filters per window size in the text encoder.
    pub cnn_filters: usize,
    /// Convolution window sizes in the text encoder.
    pub cnn_windows: Vec<usize>,

    // -- topic model --
    /// Number of latent topics.
    pub topics: usize,
    /// Gibbs sweeps when fitting the topic model.
    pub lda_train_sweeps: usize,
    /// Gibbs sweeps when folding unseen documents into a fitted model.
    pub lda_fold_sweeps: usize,
    /// Document–topic prior; defaults to the 50/topics heuristic, which suits
    /// long documents — set well below the token count per document for
    /// title-length inputs.
    pub lda_alpha: Option<Real>,
    /// Topic–word prior; defaults to 0.01.
    pub lda_beta: Option<Real>,

    // -- graph encoder --
    /// Propagation depth H.
    pub layers: usize,
    /// Users sampled per news node.
    pub sample_users: usize,
    /// News sampled per user or topic node.
    pub sample_news: usize,
    /// Mix each user/topic node's own embedding into its neighbor mean.
    pub include_self: bool,

    // -- short-term encoder --
    /// Number of recent clicks fed to the sequence model.
    pub seq_len: usize,
    /// Convolution window over the per-step sequence summaries.
    pub conv_window: usize,
    /// Include the recent-click encoder; disabling it trains the long-term
    /// (graph-only) ablation.
    pub use_short_term: bool,

    // -- optimization --
    /// Adam learning rate.
    pub lr: Real,
    /// L2 regularization strength on weight matrices.
    pub lambda: Real,
    /// Dropout rate on the prediction network's hidden layers.
    pub dropout: Real,
    /// Standard deviation of the Gaussian parameter init.
    pub init_std: Real,
    /// Training pairs per optimizer step.
    pub batch_size: usize,
    /// Hard cap on training epochs.
    pub max_epochs: usize,
    /// Epochs without validation-AUC improvement before stopping.
    pub patience: usize,
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,

    // -- splits --
    /// Days of history that build the graph.
    pub graph_days: u32,
    /// Days that supply training pairs.
    pub train_days: u32,
    /// Days held out for validation and test.
    pub eval_days: u32,
    /// Fraction of the held-out window (by event order) used for validation.
    pub val_fraction: Real,

    // -- evaluation --
    /// Score cutoff for the F1 metric.
    pub threshold: Real,
    /// Sampled unclicked negatives per held-out positive.
    pub eval_negatives: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            word_dim: 50,
            type_dim: 50,
            feature_dim: 128,
            cnn_filters: 128,
            cnn_windows: vec![2, 3],
            topics: 20,
            lda_train_sweeps: 1000,
            lda_fold_sweeps: 100,
            lda_alpha: None,
            lda_beta: None,
            layers: 2,
            sample_users: 10,
            sample_news: 30,
            include_self: false,
            seq_len: 10,
            conv_window: 3,
            use_short_term: true,
            lr: 0.0003,
            lambda: 0.005,
            dropout: 0.5,
            init_std: 0.1,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            seed: 1,
            graph_days: 5,
            train_days: 1,
            eval_days: 1,
            val_fraction: 0.2,
            threshold: 0.5,
            eval_negatives: 4,
        }
    }
}

impl RunConfig {
    /// Parses a flat-key TOML document, leaving missing keys at defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serializes the resolved config; written next to run artifacts.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("flat config struct always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            Ok(())
        }
        positive("word_dim", self.word_dim)?;
        positive("type_dim", self.type_dim)?;
        positive("feature_dim", self.feature_dim)?;
        positive("cnn_filters", self.cnn_filters)?;
        positive("topics", self.topics)?;
        positive("lda_train_sweeps", self.lda_train_sweeps)?;
        positive("lda_fold_sweeps", self.lda_fold_sweeps)?;
        for (name, prior) in [("lda_alpha", self.lda_alpha), ("lda_beta", self.lda_beta)] {
            if let Some(p) = prior {
                if !(p > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {p}")));
                }
            }
        }
        positive("sample_users", self.sample_users)?;
        positive("sample_news", self.sample_news)?;
        positive("seq_len", self.seq_len)?;
        positive("conv_window", self.conv_window)?;
        positive("batch_size", self.batch_size)?;
        positive("max_epochs", self.max_epochs)?;
        positive("patience", self.patience)?;
        positive("eval_negatives", self.eval_negatives)?;
        if self.cnn_windows.is_empty() || self.cnn_windows.contains(&0) {
            return Err(Error::Config(
                "cnn_windows needs at least one non-zero entry".into(),
            ));
        }
        if !(1..=3).contains(&self.layers) {
            return Err(Error::Config(format!(
                "layers must be 1, 2, or 3, got {}",
                self.layers
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!(
                "init_std must be positive, got {}",
                self.init_std
            )));
        }
        if self.graph_days == 0 || self.train_days == 0 || self.eval_days == 0 {
            return Err(Error::Config(
                "graph_days, train_days, and eval_days must all be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "threshold must be finite, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.word_dim, 50);
        assert_eq!(cfg.type_dim, 50);
        assert_eq!(cfg.feature_dim, 128);
        assert_eq!(cfg.topics, 20);
        assert_eq!(cfg.layers, 2);
        assert_eq!(cfg.sample_users, 10);
        assert_eq!(cfg.sample_news, 30);
        assert_eq!(cfg.seq_len, 10);
        assert_eq!(cfg.lr, 0.0003);
        assert_eq!(cfg.lambda, 0.005);
        assert_eq!(cfg.dropout, 0.5);
        assert_eq!(cfg.init_std, 0.1);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.patience, 5);
        assert_eq!(cfg.graph_days, 5);
        assert_eq!(cfg.train_days, 1);
        assert_eq!(cfg.eval_days, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_every_field() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.layers = 3;
        cfg.cnn_windows = vec![1, 2, 4];
        let text = cfg.to_toml();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults_for_missing_keys() {
        let cfg = RunConfig::from_toml_str("seed = 7\nlayers = 1\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.layers, 1);
        assert_eq!(cfg.feature_dim, 128);
        assert_eq!(cfg.lr, 0.0003);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("laers = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
        assert!(err.to_string().contains("laers"));
    }

    #[test]
    fn invalid_values_are_rejected_with_the_field_name() {
        for (text, field) in [
            ("layers = 4", "layers"),
            ("dropout = 1.0", "dropout"),
            ("lr = 0.0", "lr"),
            ("val_fraction = 1.5", "val_fraction"),
            ("feature_dim = 0", "feature_dim"),
            ("graph_days = 0", "graph_days"),
        ] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(
                err.to_string().contains(field),
                "{text}: message {err} should name {field}"
            );
        }
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }
}
