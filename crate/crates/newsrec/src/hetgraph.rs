//! Heterogeneous user-news-topic graph.
//!
//! Users connect to the news they clicked; every news item connects to exactly
//! one topic node. The graph is undirected and immutable after construction.
//! Neighbor access comes in two flavors: full sorted adjacency lists, and
//! fixed-size uniform samples used by the graph encoder.

use std::collections::BTreeSet;
use std::io::Write;

use crate::data::ClickEvent;
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// A node in the heterogeneous graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    User(usize),
    News(usize),
    Topic(usize),
}

/// Node and edge counts, for run reports and dataset summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct GraphStats {
    pub users: usize,
    pub news: usize,
    pub topics: usize,
    pub click_edges: usize,
    pub topic_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HetGraph {
    user_news: Vec<Vec<usize>>,
    news_users: Vec<Vec<usize>>,
    news_topic: Vec<usize>,
    topic_news: Vec<Vec<usize>>,
}

impl HetGraph {
    /// Builds the graph from click events and per-news topic assignments.
    /// `assignments[d]` is the topic of news `d`, so every news node carries
    /// exactly one topic edge. Repeat clicks on the same (user, news) pair
    /// collapse into a single edge. Events referencing a news id without an
    /// assignment are rejected.
    pub fn build(
        events: &[ClickEvent],
        assignments: &[usize],
        users: usize,
        topics: usize,
    ) -> Result<Self> {
        let news = assignments.len();
        for (d, z) in assignments.iter().enumerate() {
            if *z >= topics {
                return Err(Error::Data(format!(
                    "news {d} assigned topic {z}, but only {topics} topics exist"
                )));
            }
        }

        let mut pairs = BTreeSet::new();
        for ev in events {
            if ev.user >= users {
                return Err(Error::Data(format!(
                    "click references user {} outside the {users} known users",
                    ev.user
                )));
            }
            if ev.news >= news {
                return Err(Error::Data(format!(
                    "news {} has no topic assignment (only {news} assigned items)",
                    ev.news
                )));
            }
            pairs.insert((ev.user, ev.news));
        }

        let mut user_news = vec![Vec::new(); users];
        let mut news_users = vec![Vec::new(); news];
        // BTreeSet iteration is sorted, so adjacency lists come out sorted.
        for (u, d) in pairs {
            user_news[u].push(d);
            news_users[d].push(u);
        }
        let mut topic_news = vec![Vec::new(); topics];
        for (d, z) in assignments.iter().enumerate() {
            topic_news[*z].push(d);
        }
        Ok(Self {
            user_news,
            news_users,
            news_topic: assignments.to_vec(),
            topic_news,
        })
    }

    pub fn user_count(&self) -> usize {
        self.user_news.len()
    }

    pub fn news_count(&self) -> usize {
        self.news_users.len()
    }

    pub fn topic_count(&self) -> usize {
        self.topic_news.len()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            users: self.user_count(),
            news: self.news_count(),
            topics: self.topic_count(),
            click_edges: self.user_news.iter().map(Vec::len).sum(),
            topic_edges: self.news_topic.len(),
        }
    }

    /// News clicked by `u`, sorted ascending.
    pub fn user_news(&self, u: usize) -> Result<&[usize]> {
        self.user_news
            .get(u)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("unknown user node {u}")))
    }

    /// Users who clicked `d`, sorted ascending.
    pub fn news_users(&self, d: usize) -> Result<&[usize]> {
        self.news_users
            .get(d)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("unknown news node {d}")))
    }

    /// The single topic of news `d`.
    pub fn news_topic(&self, d: usize) -> Result<usize> {
        self.news_topic
            .get(d)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown news node {d}")))
    }

    /// News assigned to topic `z`, sorted ascending.
    pub fn topic_news(&self, z: usize) -> Result<&[usize]> {
        self.topic_news
            .get(z)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("unknown topic node {z}")))
    }

    /// Fixed-size uniform sample of the users who clicked news `d`.
    pub fn sample_news_user_neighbors(
        &self,
        d: usize,
        l_u: usize,
        rng: &mut RngState,
    ) -> Result<Vec<usize>> {
        Ok(sample_fixed(self.news_users(d)?, l_u, rng))
    }

    /// Fixed-size uniform sample of a user's or topic's news neighbors.
    pub fn sample_node_news_neighbors(
        &self,
        node: NodeRef,
        l_d: usize,
        rng: &mut RngState,
    ) -> Result<Vec<usize>> {
        let neighbors = match node {
            NodeRef::User(u) => self.user_news(u)?,
            NodeRef::Topic(z) => self.topic_news(z)?,
            NodeRef::News(_) => {
                return Err(Error::contract(
                    "news nodes sample users, not news neighbors",
                ))
            }
        };
        Ok(sample_fixed(neighbors, l_d, rng))
    }

    /// Writes the edge list as "type<TAB>src<TAB>dst" lines, clicks first.
    pub fn write_edges<W: Write>(&self, out: &mut W) -> Result<()> {
        for (u, ds) in self.user_news.iter().enumerate() {
            for d in ds {
                writeln!(out, "click\t{u}\t{d}")?;
            }
        }
        for (d, z) in self.news_topic.iter().enumerate() {
            writeln!(out, "topic\t{d}\t{z}")?;
        }
        Ok(())
    }
}

/// Uniform fixed-size neighbor sample.
///
/// - empty neighbor set: empty sample;
/// - at least `l` neighbors: `l` distinct picks, uniformly without replacement;
/// - fewer than `l` neighbors: the whole set repeated cyclically to exactly
///   `l` entries and then shuffled, so duplicates appear but every neighbor
///   keeps full support (multiplicities differ by at most one).
pub fn sample_fixed(neighbors: &[usize], l: usize, rng: &mut RngState) -> Vec<usize> {
    let n = neighbors.len();
    if n == 0 || l == 0 {
        return Vec::new();
    }
    if n >= l {
        // Partial Fisher-Yates: the first l slots become distinct uniform picks.
        let mut pool: Vec<usize> = neighbors.to_vec();
        for i in 0..l {
            let j = i + rng.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(l);
        pool
    } else {
        let mut fill: Vec<usize> = (0..l).map(|i| neighbors[i % n]).collect();
        rng.shuffle(&mut fill);
        fill
    }
}
