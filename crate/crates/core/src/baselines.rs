//! Edge sparsifiers used as comparison points. Each keeps exactly `budget`
//! edges of the input, on the full node set.
//!
//! Score-based methods keep the highest scores; equal scores are ordered by
//! (tail, head) ascending.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::effective_resistances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rus,
    #[serde(rename = "ss")]
    Spielman,
    Ksj,
    Ksct,
    Dspar,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rus, Method::Spielman, Method::Ksj, Method::Ksct, Method::Dspar];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rus => "rus",
            Method::Spielman => "ss",
            Method::Ksj => "ksj",
            Method::Ksct => "ksct",
            Method::Dspar => "dspar",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "spielman" && *m == Method::Spielman))
            .ok_or_else(|| Error::Parameter(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub edge: (usize, usize),
    pub score: f64,
    pub method: Method,
}

fn check_budget(g: &Graph, budget: usize) -> Result<()> {
    if budget > g.m() {
        return Err(Error::Budget { budget, m: g.m() });
    }
    Ok(())
}

/// Uniform sample of `budget` edges without replacement.
pub fn rus(g: &Graph, budget: usize, seed: u64) -> Result<Graph> {
    check_budget(g, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, g.m(), budget);
    g.with_edges(picks.into_iter().map(|i| g.edges()[i]))
}

/// Effective resistance per edge.
pub fn spielman_scores(g: &Graph) -> Vec<EdgeScore> {
    tag(g, effective_resistances(g), Method::Spielman)
}

/// Neighbors of `i` other than `other`, using in- and out-neighbors.
fn neighborhood_without(g: &Graph, i: usize, other: usize) -> Vec<usize> {
    let mut nbrs = g.neighbors(i);
    nbrs.retain(|&v| v != other);
    nbrs
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Jaccard index of the endpoints' neighborhoods, each excluding the other
/// endpoint. An empty union scores 0.
pub fn ksj_scores(g: &Graph) -> Vec<EdgeScore> {
    let scores = g
        .edges()
        .iter()
        .map(|&(t, h)| {
            let a = neighborhood_without(g, t, h);
            let b = neighborhood_without(g, h, t);
            let common = intersection_size(&a, &b);
            let union = a.len() + b.len() - common;
            if union == 0 {
                0.0
            } else {
                common as f64 / union as f64
            }
        })
        .collect();
    tag(g, scores, Method::Ksj)
}

/// Common neighbors minus two.
pub fn ksct_scores(g: &Graph) -> Vec<EdgeScore> {
    let scores = g
        .edges()
        .iter()
        .map(|&(t, h)| intersection_size(&g.neighbors(t), &g.neighbors(h)) as f64 - 2.0)
        .collect();
    tag(g, scores, Method::Ksct)
}

/// 1/deg(i) + 1/deg(j); directed graphs use the tail's out-degree and the
/// head's in-degree.
pub fn dspar_scores(g: &Graph) -> Vec<EdgeScore> {
    let d = g.degrees();
    let out = d.outdeg.as_ref().unwrap_or(&d.total);
    let inn = d.indeg.as_ref().unwrap_or(&d.total);
    let scores = g
        .edges()
        .iter()
        .map(|&(t, h)| 1.0 / out[t] as f64 + 1.0 / inn[h] as f64)
        .collect();
    tag(g, scores, Method::Dspar)
}

fn tag(g: &Graph, scores: Vec<f64>, method: Method) -> Vec<EdgeScore> {
    g.edges()
        .iter()
        .zip(scores)
        .map(|(&edge, score)| EdgeScore { edge, score, method })
        .collect()
}

/// Keep the `budget` best-scoring edges.
pub fn keep_top(g: &Graph, mut scores: Vec<EdgeScore>, budget: usize) -> Result<Graph> {
    check_budget(g, budget)?;
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Parameter(format!(
            "non-finite score {} on edge {:?}",
            bad.score, bad.edge
        )));
    }
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.edge.cmp(&b.edge)));
    g.with_edges(scores.into_iter().take(budget).map(|s| s.edge))
}

pub fn spielman(g: &Graph, budget: usize) -> Result<Graph> {
    check_budget(g, budget)?;
    keep_top(g, spielman_scores(g), budget)
}

pub fn ksj(g: &Graph, budget: usize) -> Result<Graph> {
    keep_top(g, ksj_scores(g), budget)
}

pub fn ksct(g: &Graph, budget: usize) -> Result<Graph> {
    keep_top(g, ksct_scores(g), budget)
}

pub fn dspar(g: &Graph, budget: usize) -> Result<Graph> {
    keep_top(g, dspar_scores(g), budget)
}

/// Run `method` at `budget`. `seed` only affects RUS.
pub fn sparsify(method: Method, g: &Graph, budget: usize, seed: u64) -> Result<Graph> {
    match method {
        Method::Rus => rus(g, budget, seed),
        Method::Spielman => spielman(g, budget),
        Method::Ksj => ksj(g, budget),
        Method::Ksct => ksct(g, budget),
        Method::Dspar => dspar(g, budget),
    }
}

/// Edge budget given to the baselines: the edge count of the learned
/// sparsifier's output.
pub fn match_budget(sparsified: &Graph) -> usize {
    sparsified.m()
}
