//! Effective resistance of every edge, treating the graph as undirected.
//!
//! Within a connected component of size c the Laplacian pseudoinverse equals
//! (L + J/c)⁻¹ − J/c, and the J/c part cancels in lᵢᵢ + lⱼⱼ − 2lᵢⱼ, so
//! ωᵢⱼ = eᵢⱼᵀ (L + J/c)⁻¹ eᵢⱼ with eᵢⱼ = eᵢ − eⱼ. Small components are inverted
//! densely; large ones solve each eᵢⱼ system with preconditioned conjugate
//! gradients on the sparse Laplacian restricted to 1⊥. Bridges carry all
//! current between their sides, so their resistance is set to exactly 1.

use nalgebra::DMatrix;

use crate::graph::Graph;

use super::DENSE_LIMIT;

/// Connected components of the undirected view: component id per node, and
/// members per component in increasing node order.
pub(crate) fn undirected_components(g: &Graph) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = g.n();
    let mut comp = vec![usize::MAX; n];
    let mut members = Vec::new();
    let mut stack = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut nodes = vec![s];
        comp[s] = id;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for &v in g.out_neighbors(u).iter().chain(g.in_neighbors(u)) {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    nodes.push(v);
                    stack.push(v);
                }
            }
        }
        nodes.sort_unstable();
        members.push(nodes);
    }
    (comp, members)
}

/// ω for each entry of `g.edges()`, in edge order.
pub fn effective_resistances(g: &Graph) -> Vec<f64> {
    effective_resistances_with_limit(g, DENSE_LIMIT)
}

/// As [`effective_resistances`], switching to the iterative solver for
/// components larger than `dense_limit`.
pub fn effective_resistances_with_limit(g: &Graph, dense_limit: usize) -> Vec<f64> {
    let sym = g.symmetrized();
    let (comp, members) = undirected_components(&sym);
    let mut local = vec![0usize; g.n()];
    for nodes in &members {
        for (li, &v) in nodes.iter().enumerate() {
            local[v] = li;
        }
    }

    // group edges by component
    let mut by_comp: Vec<Vec<usize>> = vec![Vec::new(); members.len()];
    for (e, &(t, _)) in g.edges().iter().enumerate() {
        by_comp[comp[t]].push(e);
    }

    let bridges = bridge_set(&sym);
    let is_bridge = |&(t, h): &(usize, usize)| bridges.binary_search(&(t.min(h), t.max(h))).is_ok();

    let mut out = vec![0.0; g.m()];
    for (c, edge_ids) in by_comp.iter().enumerate() {
        for &e in edge_ids {
            if is_bridge(&g.edges()[e]) {
                out[e] = 1.0;
            }
        }
        if edge_ids.iter().all(|&e| is_bridge(&g.edges()[e])) {
            continue;
        }
        let nodes = &members[c];
        let size = nodes.len();
        let lap_edges: Vec<(usize, usize)> = sym
            .edges()
            .iter()
            .filter(|&&(t, _)| comp[t] == c)
            .map(|&(t, h)| (local[t], local[h]))
            .collect();
        if size <= dense_limit {
            let inv = dense_grounded_inverse(size, &lap_edges);
            for &e in edge_ids.iter().filter(|&&e| !is_bridge(&g.edges()[e])) {
                let (t, h) = g.edges()[e];
                let (a, b) = (local[t], local[h]);
                out[e] = inv[(a, a)] + inv[(b, b)] - 2.0 * inv[(a, b)];
            }
        } else {
            let solver = ComponentSolver::new(size, &lap_edges);
            for &e in edge_ids.iter().filter(|&&e| !is_bridge(&g.edges()[e])) {
                let (t, h) = g.edges()[e];
                out[e] = solver.resistance(local[t], local[h]);
            }
        }
    }
    out
}

/// Bridges of an undirected graph as sorted (min, max) pairs.
fn bridge_set(g: &Graph) -> Vec<(usize, usize)> {
    let n = g.n();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    let mut bridges = Vec::new();
    // frames of (node, parent, next neighbor position)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(frame) = stack.last_mut() {
            let (u, parent, pos) = *frame;
            let nbrs = g.out_neighbors(u);
            if pos < nbrs.len() {
                frame.2 += 1;
                let v = nbrs[pos];
                if v == parent {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, u, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if parent != usize::MAX {
                    low[parent] = low[parent].min(low[u]);
                    if low[u] > disc[parent] {
                        bridges.push((parent.min(u), parent.max(u)));
                    }
                }
            }
        }
    }
    bridges.sort_unstable();
    bridges
}

fn dense_grounded_inverse(size: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let fill = 1.0 / size as f64;
    let mut m = DMatrix::from_element(size, size, fill);
    for &(a, b) in edges {
        m[(a, a)] += 1.0;
        m[(b, b)] += 1.0;
        m[(a, b)] -= 1.0;
        m[(b, a)] -= 1.0;
    }
    let chol = m
        .cholesky()
        .expect("L + J/c is positive definite on a connected component");
    chol.inverse()
}

struct ComponentSolver {
    adj: Vec<Vec<usize>>,
    deg: Vec<f64>,
}

impl ComponentSolver {
    fn new(size: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); size];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let deg = adj.iter().map(|l| l.len() as f64).collect();
        Self { adj, deg }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let s: f64 = self.adj[i].iter().map(|&j| x[j]).sum();
            *out = self.deg[i] * x[i] - s;
        }
    }

    /// eᵀL⁺e by Jacobi-preconditioned CG; e already sums to zero so iterates
    /// stay in 1⊥ up to rounding, which is projected out each step.
    fn resistance(&self, a: usize, b: usize) -> f64 {
        let n = self.deg.len();
        let mut rhs = vec![0.0; n];
        rhs[a] = 1.0;
        rhs[b] = -1.0;
        let mut x = vec![0.0; n];
        let mut r = rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&self.deg).map(|(r, d)| r / d).collect();
        project(&mut z);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        let bnorm = 2f64.sqrt();
        for _ in 0..10 * n {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= 1e-12 * bnorm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / self.deg[i];
            }
            project(&mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        x[a] - x[b]
    }
}

fn project(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}
