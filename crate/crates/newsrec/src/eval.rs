//! Ranking metrics and the chronological train/validation/test protocol.
//!
//! AUC is computed from average ranks (ties count half), F1 from a fixed
//! score threshold, and [`make_splits`] partitions a click log into the
//! graph-construction window, the training-pair window, and a final window
//! whose first fraction (by time order) validates and whose remainder tests.

use crate::data::ClickEvent;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Probability that a uniformly random positive outranks a uniformly random
/// negative, with ties counting 0.5. Needs both classes present.
pub fn auc(labels: &[bool], scores: &[Real]) -> Result<Real> {
    if labels.len() != scores.len() {
        return Err(Error::contract("labels and scores must align"));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::degenerate(
            "AUC is undefined without both a positive and a negative example",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap());

    // Average rank over each tied group, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as Real / 2.0; // mean of ranks i+1 ..= j
        for k in i..j {
            if labels[order[k]] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = n_pos as Real;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as Real))
}

/// Harmonic mean of precision and recall, predicting positive when
/// `score >= threshold`. Returns 0 when nothing is predicted positive or
/// nothing relevant is retrieved.
pub fn f1(labels: &[bool], scores: &[Real], threshold: Real) -> Result<Real> {
    if labels.len() != scores.len() {
        return Err(Error::contract("labels and scores must align"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (label, score) in labels.iter().zip(scores) {
        let predicted = *score >= threshold;
        match (label, predicted) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as Real / (tp + fp) as Real;
    let recall = tp as Real / (tp + fn_) as Real;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Chronological window boundaries, all half-open: an event at a boundary
/// timestamp belongs to the later window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    /// Start of the graph-construction window (inclusive).
    pub graph_start: i64,
    /// Graph window ends / training-pair window begins.
    pub train_start: i64,
    /// Training window ends / final (validation+test) window begins.
    pub eval_start: i64,
    /// End of the final window (exclusive).
    pub eval_end: i64,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.graph_start < self.train_start
            && self.train_start < self.eval_start
            && self.eval_start < self.eval_end
        {
            Ok(())
        } else {
            Err(Error::contract(
                "split boundaries must be strictly increasing",
            ))
        }
    }
}

const DAY: i64 = 86_400;

/// Day-aligned plan covering `graph_days + train_days + eval_days` whole days
/// starting at midnight of the earliest event's day.
pub fn day_plan(
    events: &[ClickEvent],
    graph_days: u32,
    train_days: u32,
    eval_days: u32,
) -> Result<SplitPlan> {
    if graph_days == 0 || train_days == 0 || eval_days == 0 {
        return Err(Error::contract("every split window needs at least one day"));
    }
    let min_ts = events
        .iter()
        .map(|e| e.ts)
        .min()
        .ok_or_else(|| Error::degenerate("cannot plan splits over an empty event log"))?;
    let day0 = min_ts.div_euclid(DAY) * DAY;
    let plan = SplitPlan {
        graph_start: day0,
        train_start: day0 + DAY * graph_days as i64,
        eval_start: day0 + DAY * (graph_days + train_days) as i64,
        eval_end: day0 + DAY * (graph_days + train_days + eval_days) as i64,
    };
    plan.validate()?;
    Ok(plan)
}

/// The partitioned event log. Events inside each window keep timestamp order;
/// events outside the plan's overall span are counted, not kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub graph: Vec<ClickEvent>,
    pub train: Vec<ClickEvent>,
    pub val: Vec<ClickEvent>,
    pub test: Vec<ClickEvent>,
    pub dropped: usize,
}

/// Partition `events` by the plan, splitting the final window by event order:
/// the first `val_fraction` of it (rounded down) validates, the rest tests.
/// Every window must end up non-empty.
pub fn make_splits(events: &[ClickEvent], plan: &SplitPlan, val_fraction: Real) -> Result<Splits> {
    plan.validate()?;
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::contract(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut ordered: Vec<ClickEvent> = events.to_vec();
    ordered.sort_by_key(|e| e.ts);

    let mut graph = Vec::new();
    let mut train = Vec::new();
    let mut fin = Vec::new();
    let mut dropped = 0usize;
    for e in ordered {
        if e.ts < plan.graph_start || e.ts >= plan.eval_end {
            dropped += 1;
        } else if e.ts < plan.train_start {
            graph.push(e);
        } else if e.ts < plan.eval_start {
            train.push(e);
        } else {
            fin.push(e);
        }
    }
    if graph.is_empty() {
        return Err(Error::degenerate("graph-construction window holds no events"));
    }
    if train.is_empty() {
        return Err(Error::degenerate("training-pair window holds no events"));
    }
    let n_val = (fin.len() as Real * val_fraction).floor() as usize;
    if n_val == 0 || n_val == fin.len() {
        return Err(Error::degenerate(
            "final window too small to split into validation and test",
        ));
    }
    let test = fin.split_off(n_val);
    Ok(Splits {
        graph,
        train,
        val: fin,
        test,
        dropped,
    })
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub split: String,
    pub auc: Real,
    pub f1: Real,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricsRow {
    pub const HEADER: &'static str = "split,auc,f1,n_pos,n_neg";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{}",
            self.split, self.auc, self.f1, self.n_pos, self.n_neg
        )
    }
}
