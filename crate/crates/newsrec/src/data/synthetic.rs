//! Seeded synthetic click logs with planted, recoverable structure.
//!
//! News are partitioned into interest clusters, and optionally into `groups`
//! niches within each cluster; each (cluster, group) cell owns a vocabulary
//! slice, so titles identify their cell. Each news carries a fixed title
//! mixing cell-specific words, shared noise words, and an "appeal" marker
//! word that encodes its within-cell popularity. Users click mostly inside
//! their home cluster and, within whichever cluster a click lands in, mostly
//! inside their own niche; from a configurable point in the timeline a drift
//! component biases clicks toward a second cluster (the niche stays put) — so
//! both the long-term (graph) and short-term (recent clicks) pathways carry
//! signal. The generator returns the ground truth alongside the events, and
//! the truth can score (user, news) pairs with the exact click probabilities
//! used during generation, giving an oracle upper bound for learned models.

use serde::{Deserialize, Serialize};

use crate::data::preprocess::ENTITY_TYPES;
use crate::data::RawEvent;
use crate::error::{Error, Result};
use crate::numerics::{Real, RngState};

const DAY: i64 = 86_400;
/// 2020-01-01 00:00:00 UTC; midnight-aligned so day windows are clean.
const EPOCH: i64 = 1_577_836_800;

/// Knobs of the generator. All fields have serde defaults, so a spec file may
/// name only what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub news: usize,
    /// Interest clusters (news partition; users get one home cluster each).
    pub clusters: usize,
    /// Niches per cluster. Every user keeps one group index that applies in
    /// every cluster; 1 disables the niche layer.
    pub groups: usize,
    /// Probability a click stays inside the user's niche once a cluster is
    /// chosen; the remainder is uniform over the cluster's groups.
    pub niche: Real,
    /// Topic count hint for downstream topic models.
    pub topics: usize,
    pub events: usize,
    pub days: u32,
    /// Probability a (non-drifted) click stays in the home cluster; the
    /// remainder is uniform over all clusters.
    pub affinity: Real,
    /// Probability a click after `drift_start` goes to the user's drift
    /// cluster instead of following the long-term rule.
    pub drift: Real,
    /// Fraction of the timeline where drift switches on.
    pub drift_start: Real,
    /// Specific words available per (cluster, group) cell (also the
    /// noise-word count).
    pub vocab_per_cluster: usize,
    /// Tokens per title including the appeal marker.
    pub title_len: usize,
    /// Probability a non-marker title token is cluster-specific rather than noise.
    pub title_signal: Real,
    /// Distinct appeal levels; within a cluster, click probability scales
    /// with 2^appeal, so high-appeal news dominate and get covered quickly.
    pub appeal_levels: usize,
    pub entities_per_news: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 20,
            news: 60,
            clusters: 2,
            groups: 5,
            niche: 0.92,
            topics: 10,
            events: 500,
            days: 7,
            affinity: 0.95,
            drift: 0.97,
            drift_start: 5.0 / 7.0,
            vocab_per_cluster: 12,
            title_len: 10,
            title_signal: 0.9,
            appeal_levels: 8,
            entities_per_news: 3,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.events == 0 || self.days == 0 {
            return Err(Error::contract("users, events, and days must be positive"));
        }
        if self.clusters == 0 || self.groups == 0 || self.news < self.clusters * self.groups {
            return Err(Error::contract(
                "need at least one news per (cluster, group) cell",
            ));
        }
        if self.topics == 0 || self.vocab_per_cluster == 0 {
            return Err(Error::contract(
                "topics and vocab_per_cluster must be positive",
            ));
        }
        if !(1..=20).contains(&self.appeal_levels) {
            return Err(Error::contract(
                "appeal_levels must lie in 1..=20 (weights grow as 2^level)",
            ));
        }
        if self.title_len < 3 {
            return Err(Error::contract(
                "titles need the two marker tokens plus at least one content token",
            ));
        }
        for (name, p) in [
            ("affinity", self.affinity),
            ("drift", self.drift),
            ("drift_start", self.drift_start),
            ("title_signal", self.title_signal),
            ("niche", self.niche),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Within-cluster click weight of an appeal level.
fn appeal_weight(appeal: usize) -> Real {
    (1u64 << appeal) as Real
}

/// Everything the generator decided, for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    /// User → home cluster.
    pub user_home: Vec<usize>,
    /// User → cluster their late-period clicks drift toward.
    pub user_drift: Vec<usize>,
    /// User → niche group, shared across clusters and stable over time.
    pub user_group: Vec<usize>,
    /// News → cluster (with `news_group`, the planted topic label).
    pub news_cluster: Vec<usize>,
    /// News → niche group within its cluster.
    pub news_group: Vec<usize>,
    /// News → steady appeal level in `0..appeal_levels`; weights the
    /// within-cluster draw before `drift_start`.
    pub news_appeal: Vec<usize>,
    /// News → trending level in `0..appeal_levels`, independent of appeal;
    /// weights the within-cluster draw from `drift_start` on.
    pub news_trend: Vec<usize>,
    /// First instant of the timeline.
    pub day0: i64,
    /// Timeline length in seconds.
    pub span: i64,
}

impl SyntheticTruth {
    /// Does the drift component apply at `ts`?
    pub fn in_drift(&self, ts: i64) -> bool {
        let f = (ts - self.day0) as Real / self.span as Real;
        f >= self.spec.drift_start
    }

    fn levels(&self, drifted: bool) -> &[usize] {
        if drifted {
            &self.news_trend
        } else {
            &self.news_appeal
        }
    }

    /// Sum of the regime's weights over a (cluster, group) cell's news.
    fn cell_weight(&self, cluster: usize, group: usize, drifted: bool) -> Real {
        self.news_cluster
            .iter()
            .zip(&self.news_group)
            .zip(self.levels(drifted))
            .filter(|((c, g), _)| **c == cluster && **g == group)
            .map(|(_, a)| appeal_weight(*a))
            .sum()
    }

    /// Exact probability that this user's next click lands on this news,
    /// under the drifted or plain regime — the generating distribution
    /// itself, hence an oracle scorer.
    pub fn oracle_score(&self, user: usize, news: usize, drifted: bool) -> Real {
        let s = &self.spec;
        let c = self.news_cluster[news];
        let g = self.news_group[news];
        let home = self.user_home[user];
        let mut p_cluster = (1.0 - s.affinity) / s.clusters as Real;
        if c == home {
            p_cluster += s.affinity;
        }
        if drifted {
            let towards = if c == self.user_drift[user] { s.drift } else { 0.0 };
            p_cluster = towards + (1.0 - s.drift) * p_cluster;
        }
        let mut p_group = (1.0 - s.niche) / s.groups as Real;
        if s.groups == 1 {
            p_group = 1.0;
        } else if g == self.user_group[user] {
            p_group += s.niche;
        }
        let w = appeal_weight(self.levels(drifted)[news]) / self.cell_weight(c, g, drifted);
        p_cluster * p_group * w
    }
}

/// Stem naming a (cluster, group) cell: `w0` for the single-group case keeps
/// titles compact, `w0g2` otherwise.
fn cell_stem(prefix: char, cluster: usize, group: usize, groups: usize) -> String {
    if groups == 1 {
        format!("{prefix}{cluster}")
    } else {
        format!("{prefix}{cluster}g{group}")
    }
}

fn title_for(
    spec: &SyntheticSpec,
    cluster: usize,
    group: usize,
    appeal: usize,
    trend: usize,
    rng: &mut RngState,
) -> String {
    let mut tokens = Vec::with_capacity(spec.title_len);
    tokens.push(format!("hot{appeal}"));
    tokens.push(format!("top{trend}"));
    let stem = cell_stem('w', cluster, group, spec.groups);
    for _ in 2..spec.title_len {
        if rng.uniform() < spec.title_signal {
            tokens.push(format!("{stem}x{}", rng.below(spec.vocab_per_cluster)));
        } else {
            tokens.push(format!("z{}", rng.below(spec.vocab_per_cluster)));
        }
    }
    tokens.join(" ")
}

fn profile_for(
    spec: &SyntheticSpec,
    news: usize,
    cluster: usize,
    group: usize,
    rng: &mut RngState,
) -> Vec<(String, String)> {
    let stem = cell_stem('e', cluster, group, spec.groups);
    (0..spec.entities_per_news)
        .map(|j| {
            let entity = format!("{stem}x{}", rng.below(spec.vocab_per_cluster));
            let ty = ENTITY_TYPES[(news + j) % ENTITY_TYPES.len()].to_string();
            (entity, ty)
        })
        .collect()
}

/// Generate a timestamp-sorted event log plus its ground truth. The same spec
/// always yields byte-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<RawEvent>, SyntheticTruth)> {
    spec.validate()?;
    let span = DAY * spec.days as i64;

    let news_cluster: Vec<usize> = (0..spec.news).map(|i| i % spec.clusters).collect();
    let news_group: Vec<usize> = (0..spec.news)
        .map(|i| (i / spec.clusters) % spec.groups)
        .collect();
    let news_appeal: Vec<usize> = (0..spec.news)
        .map(|i| (i / (spec.clusters * spec.groups)) % spec.appeal_levels)
        .collect();
    let base = RngState::new(spec.seed);
    let mut trend_rng = base.derive(3);
    let news_trend: Vec<usize> = (0..spec.news)
        .map(|_| trend_rng.below(spec.appeal_levels))
        .collect();
    let user_home: Vec<usize> = (0..spec.users).map(|u| u % spec.clusters).collect();
    let user_drift: Vec<usize> = user_home.iter().map(|h| (h + 1) % spec.clusters).collect();
    let user_group: Vec<usize> = (0..spec.users)
        .map(|u| (u / spec.clusters) % spec.groups)
        .collect();

    // Fixed per-news text, from a stream decoupled from the click stream.
    let mut titles = Vec::with_capacity(spec.news);
    let mut profiles = Vec::with_capacity(spec.news);
    for i in 0..spec.news {
        let mut nrng = base.derive(1_000_000 + i as u64);
        titles.push(title_for(
            spec,
            news_cluster[i],
            news_group[i],
            news_appeal[i],
            news_trend[i],
            &mut nrng,
        ));
        profiles.push(profile_for(spec, i, news_cluster[i], news_group[i], &mut nrng));
    }

    // Per-cell candidate lists, weighted per regime.
    let cell = |c: usize, g: usize| c * spec.groups + g;
    let mut cell_news: Vec<Vec<usize>> = vec![Vec::new(); spec.clusters * spec.groups];
    for (i, (c, g)) in news_cluster.iter().zip(&news_group).enumerate() {
        cell_news[cell(*c, *g)].push(i);
    }
    let weights_of = |levels: &[usize]| -> Vec<Vec<Real>> {
        cell_news
            .iter()
            .map(|ids| ids.iter().map(|i| appeal_weight(levels[*i])).collect())
            .collect()
    };
    let steady_weights = weights_of(&news_appeal);
    let drift_weights = weights_of(&news_trend);

    let mut rng = base.derive(2);
    let mut events = Vec::with_capacity(spec.events);
    for i in 0..spec.events {
        let ts = EPOCH + (i as i64 * span) / spec.events as i64;
        let user = rng.below(spec.users);
        let f = (ts - EPOCH) as Real / span as Real;
        let drifted = f >= spec.drift_start;
        let cluster = if drifted && rng.uniform() < spec.drift {
            user_drift[user]
        } else if rng.uniform() < spec.affinity {
            user_home[user]
        } else {
            rng.below(spec.clusters)
        };
        let group = if spec.groups == 1 {
            0
        } else if rng.uniform() < spec.niche {
            user_group[user]
        } else {
            rng.below(spec.groups)
        };
        let pool = cell(cluster, group);
        let weights = if drifted {
            &drift_weights[pool]
        } else {
            &steady_weights[pool]
        };
        let pick = rng.categorical(weights);
        let news = cell_news[pool][pick];
        events.push(RawEvent {
            user: format!("u{user}"),
            news: format!("n{news}"),
            ts,
            title: titles[news].clone(),
            profile: profiles[news].clone(),
            session_start: false,
            session_stop: false,
        });
    }

    let truth = SyntheticTruth {
        spec: spec.clone(),
        user_home,
        user_drift,
        user_group,
        news_cluster,
        news_group,
        news_appeal,
        news_trend,
        day0: EPOCH,
        span,
    };
    Ok((events, truth))
}
