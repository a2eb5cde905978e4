//! Reference implementations used as oracles. They share no code with the
//! library beyond the data types.

#![allow(dead_code)]

use bitmat::model::{log_likelihood, LinearForm, ModelParams, ObservedBinaryMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// Random design of `n x j` with each cell observed with probability
/// `1 - missing`, values from the model at `params`.
pub fn random_instance(
    n: usize,
    j: usize,
    missing: f64,
    params: &ModelParams,
    rng: &mut impl Rng,
) -> ObservedBinaryMatrix {
    let mut e = Vec::new();
    for i in 0..n {
        for c in 0..j {
            if rng.gen::<f64>() >= missing {
                let y = u8::from(rng.gen::<f64>() < sigmoid(params.m(i, c)));
                e.push((i, c, y));
            }
        }
    }
    ObservedBinaryMatrix::new(n, j, e).unwrap()
}

pub fn random_params(n: usize, j: usize, scale: f64, rng: &mut impl Rng) -> ModelParams {
    ModelParams::new(
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        (0..j).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

/// Central differences of the log-likelihood, coordinate by coordinate.
pub fn finite_difference_gradient(params: &ModelParams, data: &ObservedBinaryMatrix, h: f64) -> (Vec<f64>, Vec<f64>) {
    let ll = |p: &ModelParams| log_likelihood(p, data).unwrap();
    let mut gt = Vec::new();
    for i in 0..params.theta.len() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.theta[i] += h;
        b.theta[i] -= h;
        gt.push((ll(&a) - ll(&b)) / (2.0 * h));
    }
    let mut gb = Vec::new();
    for j in 0..params.beta.len() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.beta[j] += h;
        b.beta[j] -= h;
        gb.push((ll(&a) - ll(&b)) / (2.0 * h));
    }
    (gt, gb)
}

/// Full gradient and Hessian of the log-likelihood in `(theta, beta)`.
fn full_derivatives(params: &ModelParams, data: &ObservedBinaryMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, j) = (data.n_rows(), data.n_cols());
    let mut g = DVector::zeros(n + j);
    let mut h = DMatrix::zeros(n + j, n + j);
    for (i, c, y) in data.entries() {
        let p = sigmoid(params.m(i, c));
        let r = f64::from(y) - p;
        let w = p * (1.0 - p);
        g[i] += r;
        g[n + c] -= r;
        h[(i, i)] -= w;
        h[(n + c, n + c)] -= w;
        h[(i, n + c)] += w;
        h[(n + c, i)] += w;
    }
    (g, h)
}

/// Map from the free coordinates `(theta_1..theta_{N-1}, beta)` to the full
/// vector with `theta_N = -sum`.
fn reduction(n: usize, j: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(n + j, n - 1 + j);
    for i in 0..n - 1 {
        t[(i, i)] = 1.0;
        t[(n - 1, i)] = -1.0;
    }
    for c in 0..j {
        t[(n + c, n - 1 + c)] = 1.0;
    }
    t
}

pub struct NewtonFit {
    pub params: ModelParams,
    /// Max-norm of the full gradient at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton-Raphson on the reduced problem. `None` when it fails to
/// reach a residual below `1e-11`.
pub fn newton_mle(data: &ObservedBinaryMatrix) -> Option<NewtonFit> {
    let (n, j) = (data.n_rows(), data.n_cols());
    let t = reduction(n, j);
    let mut x = DVector::zeros(n - 1 + j);
    let to_params = |x: &DVector<f64>| {
        let full = &t * x;
        ModelParams::new(
            full.rows(0, n).iter().copied().collect(),
            full.rows(n, j).iter().copied().collect(),
        )
    };
    let mut p = to_params(&x);
    let mut ll = log_likelihood(&p, data).unwrap();
    for it in 0..200 {
        let (g, h) = full_derivatives(&p, data);
        let residual = g.amax();
        if residual < 1e-11 {
            return Some(NewtonFit {
                params: p,
                residual,
                iterations: it,
            });
        }
        let gr = t.transpose() * &g;
        let hr = t.transpose() * &h * &t;
        let step = (-hr).lu().solve(&gr)?;
        let mut s = 1.0;
        loop {
            let cand = &x + &step * s;
            let cp = to_params(&cand);
            let cl = log_likelihood(&cp, data).unwrap();
            if cl >= ll - 1e-12 {
                x = cand;
                p = cp;
                ll = cl;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Variance of the first-order expansion of `g(M_hat)` around `params`,
/// from the inverse Fisher information on the reduced coordinates. Also
/// returns the influence weights `lambda_ij`, in entry order, such that
/// `g_hat - g ~ sum (y_ij - p_ij) lambda_ij`.
pub fn fisher_variance(g: &LinearForm, params: &ModelParams, data: &ObservedBinaryMatrix) -> (f64, Vec<f64>) {
    let (n, j) = (data.n_rows(), data.n_cols());
    let t = reduction(n, j);
    let (_, h) = full_derivatives(params, data);
    let info = -(t.transpose() * &h * &t);
    let inv = info
        .try_inverse()
        .expect("information is invertible on a connected design");
    // g on the sum-zero space, as a function of the free coordinates.
    let mut w = DVector::zeros(n + j);
    for (i, v) in g.row_weights().iter().enumerate() {
        w[i] = *v;
    }
    for (c, v) in g.col_weights().iter().enumerate() {
        w[n + c] = *v;
    }
    let a = t.transpose() * w;
    let ia = &inv * &a;
    let var = a.dot(&ia);
    // Score of cell (i, c) in free coordinates is (y - p) * T^T (e_i - e_{N+c}).
    let tia = &t * &ia;
    let lambda = data.entries().map(|(i, c, _)| tia[i] - tia[n + c]).collect();
    (var, lambda)
}

/// Connected components by breadth-first search over the bipartite graph,
/// as sorted node lists ordered by smallest node.
pub fn bfs_components(data: &ObservedBinaryMatrix) -> Vec<Vec<usize>> {
    let (n, j) = (data.n_rows(), data.n_cols());
    let mut adj = vec![Vec::new(); n + j];
    for (i, c, _) in data.entries() {
        adj[i].push(n + c);
        adj[n + c].push(i);
    }
    let mut seen = vec![false; n + j];
    let mut out = Vec::new();
    for s in 0..n + j {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut q = std::collections::VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                    q.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Strong connectivity of the response graph (row -> column when y = 1,
/// column -> row when y = 0) by transitive closure.
pub fn strongly_connected(data: &ObservedBinaryMatrix) -> bool {
    let (n, j) = (data.n_rows(), data.n_cols());
    let k = n + j;
    let mut r = vec![vec![false; k]; k];
    for (v, row) in r.iter_mut().enumerate() {
        row[v] = true;
    }
    for (i, c, y) in data.entries() {
        if y == 1 {
            r[i][n + c] = true;
        } else {
            r[n + c][i] = true;
        }
    }
    for m in 0..k {
        let via = r[m].clone();
        for row in r.iter_mut() {
            if row[m] {
                for (x, &y) in row.iter_mut().zip(&via) {
                    *x |= y;
                }
            }
        }
    }
    r.iter().all(|row| row.iter().all(|&x| x))
}

/// Cells of `fixtures/rollcall_small.csv` after preprocessing with the
/// default options, rows in senator order, `.` for missing.
pub const GOLDEN_BILLS: [&str; 8] = ["B01", "B02", "B07", "B08", "B09", "B10", "B11", "B12"];
pub const GOLDEN_ROWS: [(&str, &str); 8] = [
    ("Alexander", "111111.0"),
    ("Baldwin", "0000.000"),
    ("Carper", "00.00011"),
    ("Daines", "111.10.1"),
    ("Enzi", "1110.111"),
    ("Franken", "00110010"),
    ("Graham", "1101111."),
    ("King", "1000.000"),
];
