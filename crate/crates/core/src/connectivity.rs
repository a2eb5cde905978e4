//! Identifiability of the row and column effects from the missingness
//! pattern.
//!
//! Rows are graph nodes `0..N` and columns are nodes `N..N+J`; every
//! observed cell is an edge. The effects are identified under the sum-zero
//! constraint exactly when this bipartite graph is connected.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{center, ModelParams, ObservedBinaryMatrix};

/// Largest tolerated `|theta_i - beta_j - m_ij|` after spanning-tree
/// propagation in [`anchored_solve`].
pub const CYCLE_TOL: f64 = 1e-8;

/// Disjoint-set forest with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    sets: usize,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
            sets: len,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

/// Per-node location shift that leaves every observed `m_ij` and the
/// row-effect sum unchanged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub theta_shift: Vec<f64>,
    pub beta_shift: Vec<f64>,
}

impl Witness {
    /// The alternative parameter vector `(theta~, beta~)`.
    pub fn apply(&self, params: &ModelParams) -> ModelParams {
        ModelParams {
            theta: params.theta.iter().zip(&self.theta_shift).map(|(t, s)| t + s).collect(),
            beta: params.beta.iter().zip(&self.beta_shift).map(|(b, s)| b + s).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    /// Connected components as sorted node ids, ordered by smallest node.
    pub components: Vec<Vec<usize>>,
    pub empty_rows: Vec<usize>,
    pub empty_cols: Vec<usize>,
    pub witness: Option<Witness>,
}

impl ConnectivityReport {
    pub fn into_error(self) -> Error {
        Error::Disconnected {
            components: self.components,
        }
    }
}

pub fn check_connectivity(data: &ObservedBinaryMatrix) -> ConnectivityReport {
    let (n, j) = (data.n_rows(), data.n_cols());
    let mut uf = UnionFind::new(n + j);
    for (i, c, _) in data.entries() {
        uf.union(i, n + c);
    }
    let mut label = vec![usize::MAX; n + j];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for node in 0..n + j {
        let root = uf.find(node);
        if label[root] == usize::MAX {
            label[root] = components.len();
            components.push(Vec::new());
        }
        components[label[root]].push(node);
    }
    let empty_rows: Vec<usize> = (0..n).filter(|&i| data.row_count(i) == 0).collect();
    let empty_cols: Vec<usize> = (0..j).filter(|&c| data.col_count(c) == 0).collect();
    let connected = components.len() == 1;
    let witness = if connected {
        None
    } else {
        Some(build_witness(n, j, &components))
    };
    ConnectivityReport {
        connected,
        components,
        empty_rows,
        empty_cols,
        witness,
    }
}

/// Shifts the first component holding a row by `+1` and every other node by
/// `-tau`, with `tau` the ratio of row counts. When all rows sit in the
/// first component the remaining nodes are columns only and are shifted by
/// one on their own.
fn build_witness(n: usize, j: usize, components: &[Vec<usize>]) -> Witness {
    let first = components.iter().position(|c| c.iter().any(|&v| v < n)).unwrap_or(0);
    let rows_first = components[first].iter().filter(|&&v| v < n).count();
    let rows_rest = n - rows_first;
    let (a, b) = if rows_rest == 0 {
        (0.0, 1.0)
    } else {
        (1.0, -(rows_first as f64) / rows_rest as f64)
    };
    let mut shift = vec![b; n + j];
    for &v in &components[first] {
        shift[v] = a;
    }
    Witness {
        theta_shift: shift[..n].to_vec(),
        beta_shift: shift[n..].to_vec(),
    }
}

/// Reconstructs the unique centered `(theta, beta)` from the observed
/// `m_ij` (given in the matrix's row-major entry order).
pub fn anchored_solve(data: &ObservedBinaryMatrix, m_values: &[f64]) -> Result<ModelParams> {
    if m_values.len() != data.n_observed() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} observed cells",
            m_values.len(),
            data.n_observed()
        )));
    }
    let report = check_connectivity(data);
    if !report.connected {
        return Err(report.into_error());
    }
    let (n, j) = (data.n_rows(), data.n_cols());
    // Column-side lookup of entry indices for the traversal.
    let mut col_cells: Vec<Vec<(usize, usize)>> = vec![Vec::new(); j];
    for i in 0..n {
        for e in data.row_range(i) {
            col_cells[data.entry(e).0].push((i, e));
        }
    }
    let mut theta = vec![f64::NAN; n];
    let mut beta = vec![f64::NAN; j];
    let mut seen = vec![false; n + j];
    let mut queue = VecDeque::new();
    theta[0] = 0.0;
    seen[0] = true;
    queue.push_back(0);
    while let Some(node) = queue.pop_front() {
        if node < n {
            for e in data.row_range(node) {
                let c = data.entry(e).0;
                if !seen[n + c] {
                    beta[c] = theta[node] - m_values[e];
                    seen[n + c] = true;
                    queue.push_back(n + c);
                }
            }
        } else {
            let c = node - n;
            for &(i, e) in &col_cells[c] {
                if !seen[i] {
                    theta[i] = m_values[e] + beta[c];
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    let params = ModelParams::new(theta, beta);
    let mut residual = 0.0_f64;
    for (e, (i, c, _)) in data.entries().enumerate() {
        residual = residual.max((params.m(i, c) - m_values[e]).abs());
    }
    if residual > CYCLE_TOL || !residual.is_finite() {
        return Err(Error::InconsistentValues { residual });
    }
    Ok(center(&params))
}

/// Whether the constrained maximum likelihood estimate exists (is finite).
///
/// Orient each observed cell from row to column when `y = 1` and from
/// column to row when `y = 0`. The estimate exists exactly when this
/// directed graph is strongly connected; otherwise some set of rows beats
/// some set of columns in every shared cell and the likelihood keeps
/// increasing as they separate.
pub fn estimate_exists(data: &ObservedBinaryMatrix) -> bool {
    let (n, j) = (data.n_rows(), data.n_cols());
    if n + j == 0 {
        return true;
    }
    let mut forward: Vec<Vec<usize>> = vec![Vec::new(); n + j];
    let mut backward: Vec<Vec<usize>> = vec![Vec::new(); n + j];
    for (i, c, y) in data.entries() {
        let (from, to) = if y == 1 { (i, n + c) } else { (n + c, i) };
        forward[from].push(to);
        backward[to].push(from);
    }
    let reaches_all = |adj: &[Vec<usize>]| {
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == adj.len()
    };
    reaches_all(&forward) && reaches_all(&backward)
}
