//! Graph and feature containers, degree/Laplacian/Gram constructors and
//! masked-subgraph extraction.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Unweighted graph without self-loops or repeated edges.
///
/// Directed edges are stored as `(tail, head)`; undirected edges are stored
/// once as `(min, max)`. Edges are kept sorted, and two adjacency indexes
/// (out-neighbors and in-neighbors) are built at construction. For undirected
/// graphs both indexes hold the full symmetric neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    out_ptr: Vec<usize>,
    out_idx: Vec<usize>,
    in_ptr: Vec<usize>,
    in_idx: Vec<usize>,
}

impl Graph {
    /// Build a graph, dropping self-loops and duplicates.
    pub fn from_edges(n: usize, directed: bool, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut canon = Vec::new();
        for (tail, head) in edges {
            if tail >= n || head >= n {
                return Err(Error::EndpointOutOfRange { tail, head, n });
            }
            if tail == head {
                continue;
            }
            canon.push(if directed {
                (tail, head)
            } else {
                (tail.min(head), tail.max(head))
            });
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self::from_canonical(n, directed, canon))
    }

    /// Edgeless graph on `n` nodes.
    pub fn empty(n: usize, directed: bool) -> Self {
        Self::from_canonical(n, directed, Vec::new())
    }

    fn from_canonical(n: usize, directed: bool, edges: Vec<(usize, usize)>) -> Self {
        let mut out_lists = vec![Vec::new(); n];
        let mut in_lists = vec![Vec::new(); n];
        for &(t, h) in &edges {
            out_lists[t].push(h);
            in_lists[h].push(t);
            if !directed {
                out_lists[h].push(t);
                in_lists[t].push(h);
            }
        }
        let (out_ptr, out_idx) = flatten_lists(out_lists);
        let (in_ptr, in_idx) = flatten_lists(in_lists);
        Self {
            n,
            directed,
            edges,
            out_ptr,
            out_idx,
            in_ptr,
            in_idx,
        }
    }

    /// Same node set and directedness, different (subset or replacement) edges.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::from_edges(self.n, self.directed, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted out-neighbors (all neighbors when undirected).
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_idx[self.out_ptr[i]..self.out_ptr[i + 1]]
    }

    /// Sorted in-neighbors (all neighbors when undirected).
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_idx[self.in_ptr[i]..self.in_ptr[i + 1]]
    }

    /// Sorted union of in- and out-neighbors.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        if !self.directed {
            return self.out_neighbors(i).to_vec();
        }
        let mut all: Vec<usize> = self
            .out_neighbors(i)
            .iter()
            .chain(self.in_neighbors(i))
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn has_edge(&self, tail: usize, head: usize) -> bool {
        tail < self.n && head < self.n && self.out_neighbors(tail).binary_search(&head).is_ok()
    }

    /// Binary adjacency with Aᵢⱼ = 1 for i→j (symmetric when undirected).
    pub fn adjacency_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for &j in self.out_neighbors(i) {
                a[[i, j]] = 1.0;
            }
        }
        a
    }

    /// Binary adjacency as a sparse matrix (row = tail).
    pub fn adjacency_sparse(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.n,
            self.n,
            (0..self.n).flat_map(|i| self.out_neighbors(i).iter().map(move |&j| (i, j, 1.0))),
        )
    }

    /// Symmetric edge weights whose Laplacian is this graph's Laplacian:
    /// A for undirected graphs, A + Aᵀ for directed ones (reciprocal pairs weigh 2).
    pub fn laplacian_weights(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.n,
            self.n,
            self.edges.iter().flat_map(|&(t, h)| [(t, h, 1.0), (h, t, 1.0)]),
        )
    }

    /// Undirected graph with an edge wherever either direction exists.
    pub fn symmetrized(&self) -> Graph {
        if !self.directed {
            return self.clone();
        }
        Graph::from_edges(self.n, false, self.edges.iter().copied()).expect("endpoints already validated")
    }

    pub fn degrees(&self) -> DegreeVectors {
        degrees(self)
    }

    pub fn laplacian(&self) -> Array2<f64> {
        laplacian(self)
    }
}

fn flatten_lists(lists: Vec<Vec<usize>>) -> (Vec<usize>, Vec<usize>) {
    let mut ptr = Vec::with_capacity(lists.len() + 1);
    let mut idx = Vec::new();
    ptr.push(0);
    for mut l in lists {
        l.sort_unstable();
        idx.extend(l);
        ptr.push(idx.len());
    }
    (ptr, idx)
}

/// n×f node attribute matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn zeros(n: usize, f: usize) -> Self {
        Self {
            data: Array2::zeros((n, f)),
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn f(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn to_sparse(&self) -> CsrMatrix {
        CsrMatrix::from_dense(&self.data)
    }

    /// Rows `kept`, in order.
    pub fn select_rows(&self, kept: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), kept),
        }
    }
}

/// Degree counts. Directed graphs also expose in-degree (D⁺) and out-degree (D⁻).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVectors {
    pub total: Vec<usize>,
    pub indeg: Option<Vec<usize>>,
    pub outdeg: Option<Vec<usize>>,
}

pub fn degrees(g: &Graph) -> DegreeVectors {
    if g.is_directed() {
        let indeg: Vec<usize> = (0..g.n()).map(|i| g.in_neighbors(i).len()).collect();
        let outdeg: Vec<usize> = (0..g.n()).map(|i| g.out_neighbors(i).len()).collect();
        let total = indeg.iter().zip(&outdeg).map(|(a, b)| a + b).collect();
        DegreeVectors {
            total,
            indeg: Some(indeg),
            outdeg: Some(outdeg),
        }
    } else {
        DegreeVectors {
            total: (0..g.n()).map(|i| g.out_neighbors(i).len()).collect(),
            indeg: None,
            outdeg: None,
        }
    }
}

/// L = D − A (undirected) or D − (A + Aᵀ) (directed), dense.
pub fn laplacian(g: &Graph) -> Array2<f64> {
    let n = g.n();
    let mut l = Array2::zeros((n, n));
    for &(t, h) in g.edges() {
        l[[t, h]] -= 1.0;
        l[[h, t]] -= 1.0;
        l[[t, t]] += 1.0;
        l[[h, h]] += 1.0;
    }
    l
}

/// L + α₁I.
pub fn shifted_laplacian(l: &Array2<f64>, alpha1: f64) -> Result<Array2<f64>> {
    if !(alpha1 > 0.0) {
        return Err(Error::Parameter(format!("alpha1 must be positive, got {alpha1}")));
    }
    if !l.is_square() {
        return Err(Error::Shape(format!("Laplacian is {:?}", l.dim())));
    }
    let mut out = l.clone();
    out.diag_mut().iter_mut().for_each(|v| *v += alpha1);
    Ok(out)
}

/// Xᵀ·diag(z)·X + α₂I. Accepts relaxed masks (z ∈ [0,1]); for binary z this
/// equals (ZX)ᵀ(ZX) + α₂I.
pub fn shifted_gram(x: &FeatureMatrix, z: &[f64], alpha2: f64) -> Result<Array2<f64>> {
    if !(alpha2 > 0.0) {
        return Err(Error::Parameter(format!("alpha2 must be positive, got {alpha2}")));
    }
    if z.len() != x.n() {
        return Err(Error::Shape(format!(
            "mask has {} entries, features have {} rows",
            z.len(),
            x.n()
        )));
    }
    let mut weighted = x.data().clone();
    for (mut row, &zi) in weighted.rows_mut().into_iter().zip(z) {
        row *= zi;
    }
    let mut m = x.data().t().dot(&weighted);
    m.diag_mut().iter_mut().for_each(|v| *v += alpha2);
    Ok(m)
}

/// Subgraph induced by a hard mask, in compact form (kept nodes renumbered
/// 0..kept.len() in increasing original order).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSubgraph {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub kept: Vec<usize>,
    pub n_original: usize,
}

impl MaskedSubgraph {
    /// The same edges expressed on the original node set (dropped nodes isolated).
    pub fn full_size_graph(&self) -> Graph {
        Graph::from_edges(
            self.n_original,
            self.graph.is_directed(),
            self.graph.edges().iter().map(|&(t, h)| (self.kept[t], self.kept[h])),
        )
        .expect("kept indices lie in the original range")
    }

    /// Features on the original node set with dropped rows zeroed (ZX).
    pub fn full_size_features(&self) -> FeatureMatrix {
        let mut data = Array2::zeros((self.n_original, self.features.f()));
        for (row, &orig) in self.kept.iter().enumerate() {
            data.row_mut(orig).assign(&self.features.data().row(row));
        }
        FeatureMatrix { data }
    }

    /// Binary mask over the original nodes.
    pub fn mask(&self) -> Vec<bool> {
        let mut z = vec![false; self.n_original];
        for &k in &self.kept {
            z[k] = true;
        }
        z
    }
}

pub fn induced_subgraph(g: &Graph, x: &FeatureMatrix, z: &[bool]) -> Result<MaskedSubgraph> {
    if z.len() != g.n() || x.n() != g.n() {
        return Err(Error::Shape(format!(
            "mask length {}, graph n {}, feature rows {}",
            z.len(),
            g.n(),
            x.n()
        )));
    }
    let kept: Vec<usize> = (0..g.n()).filter(|&i| z[i]).collect();
    let mut new_index = vec![usize::MAX; g.n()];
    for (ci, &orig) in kept.iter().enumerate() {
        new_index[orig] = ci;
    }
    let edges = g
        .edges()
        .iter()
        .filter(|&&(t, h)| z[t] && z[h])
        .map(|&(t, h)| (new_index[t], new_index[h]));
    let graph = Graph::from_edges(kept.len(), g.is_directed(), edges)?;
    Ok(MaskedSubgraph {
        graph,
        features: x.select_rows(&kept),
        kept,
        n_original: g.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn triangle() -> Graph {
        Graph::from_edges(3, false, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn from_edges_drops_loops_and_duplicates() {
        let g = Graph::from_edges(3, false, [(0, 1), (1, 0), (1, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.out_neighbors(1), &[0, 2]);
    }

    #[test]
    fn directed_adjacency_is_one_sided() {
        let g = Graph::from_edges(2, true, [(0, 1)]).unwrap();
        let a = g.adjacency_dense();
        assert_eq!(a[[0, 1]], 1.0);
        assert_eq!(a[[1, 0]], 0.0);
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        let err = Graph::from_edges(2, true, [(0, 2)]).unwrap_err();
        assert!(matches!(err, Error::EndpointOutOfRange { head: 2, .. }));
    }

    #[test]
    fn degrees_of_directed_path_and_triangle() {
        let path = Graph::from_edges(3, true, [(0, 1), (1, 2)]).unwrap();
        let d = degrees(&path);
        assert_eq!(d.indeg.unwrap(), vec![0, 1, 1]);
        assert_eq!(d.outdeg.unwrap(), vec![1, 1, 0]);
        assert_eq!(d.total, vec![1, 2, 1]);
        assert_eq!(degrees(&triangle()).total, vec![2, 2, 2]);
    }

    #[test]
    fn laplacian_of_triangle_and_directed_edge() {
        assert_eq!(
            laplacian(&triangle()),
            array![[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]]
        );
        let e = Graph::from_edges(2, true, [(0, 1)]).unwrap();
        assert_eq!(laplacian(&e), array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn shifted_laplacian_rejects_nonpositive_shift() {
        let l = Array2::zeros((3, 3));
        assert!(shifted_laplacian(&l, 0.0).is_err());
        assert_eq!(shifted_laplacian(&l, 0.1).unwrap(), Array2::<f64>::eye(3) * 0.1);
    }

    #[test]
    fn shifted_gram_small_cases() {
        let x = FeatureMatrix::new(Array2::eye(2)).unwrap();
        assert_eq!(
            shifted_gram(&x, &[1.0, 1.0], 0.5).unwrap(),
            array![[1.5, 0.0], [0.0, 1.5]]
        );
        assert_eq!(shifted_gram(&x, &[0.0, 0.0], 0.5).unwrap(), Array2::<f64>::eye(2) * 0.5);
        assert!(shifted_gram(&x, &[1.0], 0.5).is_err());
    }

    #[test]
    fn induced_subgraph_cases() {
        let g = triangle();
        let x = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let sub = induced_subgraph(&g, &x, &[true, true, false]).unwrap();
        assert_eq!(sub.graph.edges(), &[(0, 1)]);
        assert_eq!(sub.features.n(), 2);
        assert_eq!(sub.kept, vec![0, 1]);

        let all = induced_subgraph(&g, &x, &[true; 3]).unwrap();
        assert_eq!(all.graph, g);
        assert_eq!(all.full_size_graph(), g);

        let none = induced_subgraph(&g, &x, &[false; 3]).unwrap();
        assert_eq!(none.graph.m(), 0);
        assert_eq!(none.graph.n(), 0);
        assert_eq!(none.full_size_features(), FeatureMatrix::zeros(3, 2));
    }
}
