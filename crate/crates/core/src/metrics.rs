//! Structural and spectral graph metrics: largest component, mean degrees,
//! Louvain modularity, minimum absolute spectral similarity (MASS) and the
//! epidemic threshold.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{largest_eigenvalue, undirected_components, LaplacianOperator};

/// Size of the largest weakly connected component (0 for n = 0).
pub fn lcc_size(g: &Graph) -> usize {
    undirected_components(g).1.iter().map(Vec::len).max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub k_bar: f64,
    /// Directed graphs only.
    pub k_in_bar: Option<f64>,
    pub k_out_bar: Option<f64>,
}

/// Mean total degree, plus mean in/out degree for directed graphs.
pub fn degree_stats(g: &Graph) -> Result<DegreeStats> {
    degree_stats_over(g, g.n())
}

/// As [`degree_stats`] with an explicit node count in the denominator.
pub fn degree_stats_over(g: &Graph, n: usize) -> Result<DegreeStats> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let m = g.m() as f64;
    let n = n as f64;
    Ok(if g.is_directed() {
        DegreeStats {
            k_bar: 2.0 * m / n,
            k_in_bar: Some(m / n),
            k_out_bar: Some(m / n),
        }
    } else {
        DegreeStats {
            k_bar: 2.0 * m / n,
            k_in_bar: None,
            k_out_bar: None,
        }
    })
}

/// Weighted undirected graph used by Louvain. `self_loops[i]` is the weight
/// of edges absorbed into node i; it counts twice in the degree.
#[derive(Debug, Clone)]
struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
}

impl WeightedGraph {
    fn from_graph(g: &Graph) -> Self {
        let sym = g.symmetrized();
        let adj = (0..sym.n())
            .map(|i| sym.out_neighbors(i).iter().map(|&j| (j, 1.0)).collect())
            .collect();
        Self {
            adj,
            self_loops: vec![0.0; sym.n()],
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    fn degree(&self, i: usize) -> f64 {
        2.0 * self.self_loops[i] + self.adj[i].iter().map(|&(_, w)| w).sum::<f64>()
    }

    /// Collapse communities (labels 0..c) into single nodes.
    fn aggregate(&self, labels: &[usize], c: usize) -> Self {
        let mut self_loops = vec![0.0; c];
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); c];
        for i in 0..self.n() {
            let ci = labels[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                let cj = labels[j];
                if ci == cj {
                    // each internal edge is seen from both ends
                    self_loops[ci] += 0.5 * w;
                } else {
                    *rows[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Self {
            adj: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
            self_loops,
        }
    }
}

/// One round of local moves. Returns labels renumbered 0..c and whether any
/// node moved.
fn local_moves(g: &WeightedGraph, m2: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize, bool) {
    let n = g.n();
    let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let mut label: Vec<usize> = (0..n).collect();
    let mut total = degree.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let own = label[i];
            for &(j, w) in &g.adj[i] {
                let c = label[j];
                if link[c] == 0.0 {
                    touched.push(c);
                }
                link[c] += w;
            }
            total[own] -= degree[i];
            let gain = |c: usize, link: &[f64]| link[c] - total[c] * degree[i] / m2;
            let mut best = own;
            let mut best_gain = gain(own, &link);
            for &c in &touched {
                let g = gain(c, &link);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            total[best] += degree[i];
            if best != own {
                label[i] = best;
                moved = true;
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        moved_any = true;
    }

    let mut remap = vec![usize::MAX; n];
    let mut c = 0;
    for l in label.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = c;
            c += 1;
        }
        *l = remap[*l];
    }
    (label, c, moved_any)
}

/// Louvain partition of the symmetrized graph (resolution 1): repeated
/// local moves in a seeded node order, then aggregation, until no node
/// moves. Returns a community label per node.
pub fn louvain(g: &Graph, seed: u64) -> Result<Vec<usize>> {
    if g.m() == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = WeightedGraph::from_graph(g);
    let m2: f64 = (0..level.n()).map(|i| level.degree(i)).sum();
    let mut membership: Vec<usize> = (0..g.n()).collect();
    loop {
        let (labels, c, moved) = local_moves(&level, m2, &mut rng);
        if !moved {
            break;
        }
        for m in membership.iter_mut() {
            *m = labels[*m];
        }
        level = level.aggregate(&labels, c);
    }
    Ok(membership)
}

/// M = (1/2m) Σᵢⱼ (Aᵢⱼ − kᵢkⱼ/2m) δ(cᵢ, cⱼ) on the symmetrized graph.
pub fn modularity(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n() {
        return Err(Error::Shape(format!("{} labels for {} nodes", labels.len(), g.n())));
    }
    let sym = g.symmetrized();
    if sym.m() == 0 {
        return Err(Error::EmptyGraph);
    }
    let m = sym.m() as f64;
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    let mut internal = vec![0.0; c];
    let mut degree = vec![0.0; c];
    for &(a, b) in sym.edges() {
        degree[labels[a]] += 1.0;
        degree[labels[b]] += 1.0;
        if labels[a] == labels[b] {
            internal[labels[a]] += 1.0;
        }
    }
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&l, &d)| l / m - (d / (2.0 * m)).powi(2))
        .sum())
}

/// Modularity of the Louvain partition for `seed`.
pub fn modularity_louvain(g: &Graph, seed: u64) -> Result<f64> {
    modularity(g, &louvain(g, seed)?)
}

/// Edges of `original` missing from `sparsified`, on the original node set.
pub fn removed_edges(original: &Graph, sparsified: &Graph) -> Result<Graph> {
    if original.n() != sparsified.n() || original.is_directed() != sparsified.is_directed() {
        return Err(Error::NotSubgraph(format!(
            "node sets differ: {} vs {} nodes",
            original.n(),
            sparsified.n()
        )));
    }
    let kept: HashSet<(usize, usize)> = sparsified.edges().iter().copied().collect();
    if let Some(e) = sparsified.edges().iter().find(|&&(t, h)| !original.has_edge(t, h)) {
        return Err(Error::NotSubgraph(format!("edge {e:?} is not in the original graph")));
    }
    original.with_edges(original.edges().iter().copied().filter(|e| !kept.contains(e)))
}

/// λ₁ of the (symmetrized) Laplacian.
pub fn laplacian_spectral_radius(g: &Graph) -> Result<f64> {
    let w = g.laplacian_weights();
    largest_eigenvalue(&LaplacianOperator::new(&w, 0.0))
}

/// MASS = 1 − λ₁(ΔL)/λ₁(L), with ΔL the Laplacian of the removed edges.
pub fn mass(original: &Graph, sparsified: &Graph) -> Result<f64> {
    let delta = removed_edges(original, sparsified)?;
    let full = laplacian_spectral_radius(original)?;
    if full == 0.0 {
        return Err(Error::EmptyGraph);
    }
    if delta.m() == 0 {
        return Ok(1.0);
    }
    if delta.m() == original.m() {
        return Ok(0.0);
    }
    let removed = laplacian_spectral_radius(&delta)?;
    Ok((1.0 - removed / full).clamp(0.0, 1.0))
}

/// τ_c = 1/λ₁ of the symmetrized binary adjacency.
pub fn epidemic_threshold(g: &Graph) -> Result<f64> {
    if g.m() == 0 {
        return Err(Error::EmptyGraph);
    }
    let a = g.symmetrized().adjacency_sparse();
    Ok(1.0 / largest_eigenvalue(&a)?)
}

/// One row of the metrics table, in its column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n_edges: usize,
    pub n_lcc: usize,
    pub k_bar: f64,
    pub k_in_bar: Option<f64>,
    pub k_out_bar: Option<f64>,
    pub modularity: Option<f64>,
    pub mass: Option<f64>,
    pub tau_c: Option<f64>,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 8] = [
        "n_edges",
        "n_lcc",
        "k_bar",
        "k_in_bar",
        "k_out_bar",
        "modularity",
        "mass",
        "tau_c",
    ];

    /// Metrics of `g` on the full node set. Modularity is averaged over
    /// `seeds`; `reference` enables MASS. Quantities undefined on an edgeless
    /// graph are left empty.
    pub fn compute(g: &Graph, reference: Option<&Graph>, seeds: &[u64]) -> Result<Self> {
        let deg = degree_stats(g)?;
        let (modularity, tau_c) = if g.m() == 0 {
            (None, None)
        } else {
            let mut total = 0.0;
            for &s in seeds {
                total += modularity_louvain(g, s)?;
            }
            let modularity = (!seeds.is_empty()).then(|| total / seeds.len() as f64);
            (modularity, Some(epidemic_threshold(g)?))
        };
        Ok(Self {
            n_edges: g.m(),
            n_lcc: lcc_size(g),
            k_bar: deg.k_bar,
            k_in_bar: deg.k_in_bar,
            k_out_bar: deg.k_out_bar,
            modularity,
            mass: reference.map(|r| mass(r, g)).transpose()?,
            tau_c,
        })
    }

    /// Values in column order; empty cells are `None`.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.n_edges as f64),
            Some(self.n_lcc as f64),
            Some(self.k_bar),
            self.k_in_bar,
            self.k_out_bar,
            self.modularity,
            self.mass,
            self.tau_c,
        ]
    }

    pub fn to_csv(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.map_or(String::new(), |x| x.to_string()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> Graph {
        Graph::from_edges(6, false, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    #[test]
    fn lcc_conventions() {
        let g = Graph::from_edges(4, false, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(lcc_size(&g), 3);
        assert_eq!(lcc_size(&Graph::empty(5, false)), 1);
        assert_eq!(lcc_size(&Graph::empty(0, true)), 0);
        let d = Graph::from_edges(3, true, [(0, 1), (2, 1)]).unwrap();
        assert_eq!(lcc_size(&d), 3);
    }

    #[test]
    fn two_triangles_modularity() {
        let g = two_triangles();
        assert!((modularity(&g, &[0, 0, 0, 1, 1, 1]).unwrap() - 0.5).abs() < 1e-15);
        for seed in 0..5 {
            assert!((modularity_louvain(&g, seed).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn complete_graph_single_community() {
        let k4 = Graph::from_edges(4, false, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert!(modularity(&k4, &[0; 4]).unwrap().abs() < 1e-15);
        assert!(matches!(
            modularity_louvain(&Graph::empty(3, false), 0),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn mass_endpoints_and_triangle() {
        let tri = Graph::from_edges(3, false, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(mass(&tri, &tri).unwrap(), 1.0);
        assert_eq!(mass(&tri, &Graph::empty(3, false)).unwrap(), 0.0);
        let minus = tri.with_edges([(0, 1), (1, 2)]).unwrap();
        assert!((mass(&tri, &minus).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let foreign = Graph::from_edges(3, false, [(0, 1)]).unwrap();
        let path = Graph::from_edges(3, false, [(1, 2)]).unwrap();
        assert!(matches!(mass(&path, &foreign), Err(Error::NotSubgraph(_))));
    }

    #[test]
    fn epidemic_threshold_values() {
        let k5 = Graph::from_edges(5, false, (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j)))).unwrap();
        assert!((epidemic_threshold(&k5).unwrap() - 0.25).abs() < 1e-12);
        let edge = Graph::from_edges(2, true, [(0, 1)]).unwrap();
        assert!((epidemic_threshold(&edge).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            epidemic_threshold(&Graph::empty(2, false)),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn degree_identities() {
        let d = Graph::from_edges(4, true, [(0, 1), (1, 2), (2, 0), (3, 0)]).unwrap();
        let s = degree_stats(&d).unwrap();
        assert_eq!((s.k_bar, s.k_in_bar, s.k_out_bar), (2.0, Some(1.0), Some(1.0)));
        let tri = Graph::from_edges(3, false, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(degree_stats(&tri).unwrap().k_bar, 2.0);
    }
}
