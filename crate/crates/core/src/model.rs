//! Data model, likelihood, gradient and variance aggregates for the
//! row/column logistic model `P(Y_ij = 1) = logistic(theta_i - beta_j)`.
//!
//! Reduction order: every per-row quantity is accumulated along the row in
//! increasing column order and every per-column quantity down the column in
//! increasing row order. The single-pass evaluator visits cells row-major,
//! which yields the same order for both, so results are bitwise stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(theta)|` per row after centering.
pub const CENTERING_TOL: f64 = 1e-10;

/// `1 / (1 + exp(-m))` without overflow for large `|m|`.
#[inline]
pub fn logistic(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(m))`, stable for `|m|` up to and beyond 700.
#[inline]
pub fn log1p_exp(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// Bernoulli variance `p (1 - p)` at log-odds `m`.
#[inline]
pub fn bernoulli_variance(m: f64) -> f64 {
    let e = (-m.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// A partially observed binary matrix.
///
/// Observed cells are kept in a row-major coordinate list with row offsets,
/// plus a column-major index into the same list, so row sweeps and column
/// sweeps are both contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedBinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<u8>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    col_entry: Vec<usize>,
}

impl ObservedBinaryMatrix {
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<(usize, usize, u8)>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {n_rows} x {n_cols}"
            )));
        }
        if n_rows > u32::MAX as usize || n_cols > u32::MAX as usize {
            return Err(Error::InvalidArgument("matrix dimensions exceed u32 range".into()));
        }
        let mut entries = entries;
        for &(i, j, y) in &entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: j,
                    reason: format!("outside {n_rows} x {n_cols}"),
                });
            }
            if y > 1 {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: j,
                    reason: format!("value {y} is not 0 or 1"),
                });
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        Ok(Self::from_sorted(n_rows, n_cols, &entries))
    }

    fn from_sorted(n_rows: usize, n_cols: usize, entries: &[(usize, usize, u8)]) -> Self {
        let n_obs = entries.len();
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_count = vec![0usize; n_cols];
        let mut cols = Vec::with_capacity(n_obs);
        let mut values = Vec::with_capacity(n_obs);
        for &(i, j, y) in entries {
            row_ptr[i + 1] += 1;
            col_count[j] += 1;
            cols.push(j as u32);
            values.push(y);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_ptr = vec![0usize; n_cols + 1];
        for j in 0..n_cols {
            col_ptr[j + 1] = col_ptr[j] + col_count[j];
        }
        let mut next = col_ptr.clone();
        let mut rows = vec![0u32; n_obs];
        let mut col_entry = vec![0usize; n_obs];
        for (e, &(i, j, _)) in entries.iter().enumerate() {
            let slot = next[j];
            rows[slot] = i as u32;
            col_entry[slot] = e;
            next[j] += 1;
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            values,
            col_ptr,
            rows,
            col_entry,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_observed(&self) -> usize {
        self.values.len()
    }

    /// Observed cells `(i, j, y)` in row-major order. The position in this
    /// sequence is the cell's entry index.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |e| (i, self.cols[e] as usize, self.values[e]))
        })
    }

    /// Range of entry indices belonging to row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Column index and value of entry `e`.
    #[inline]
    pub fn entry(&self, e: usize) -> (usize, u8) {
        (self.cols[e] as usize, self.values[e])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.row_range(i).map(move |e| (self.cols[e] as usize, self.values[e]))
    }

    /// Observed cells of column `j` as `(i, y)` in increasing row order.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.rows[k] as usize, self.values[self.col_entry[k]]))
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_count(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.n_rows).map(|i| self.row_count(i)).collect()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        (0..self.n_cols).map(|j| self.col_count(j)).collect()
    }

    pub fn value(&self, i: usize, j: usize) -> Option<u8> {
        if i >= self.n_rows {
            return None;
        }
        let range = self.row_range(i);
        self.cols[range.clone()]
            .binary_search(&(j as u32))
            .ok()
            .map(|k| self.values[range.start + k])
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.value(i, j).is_some()
    }

    pub fn design_stats(&self) -> DesignStats {
        let rc = self.row_counts();
        let cc = self.col_counts();
        DesignStats {
            j_star_min: rc.iter().copied().min().unwrap_or(0),
            j_star_max: rc.iter().copied().max().unwrap_or(0),
            n_star_min: cc.iter().copied().min().unwrap_or(0),
            n_star_max: cc.iter().copied().max().unwrap_or(0),
            missing_fraction: 1.0 - self.n_observed() as f64 / (self.n_rows * self.n_cols) as f64,
        }
    }

    /// Sub-matrix on the kept rows and columns. Returns the new matrix and the
    /// maps from new row/column index to the original index.
    pub fn restrict(&self, keep_rows: &[bool], keep_cols: &[bool]) -> Result<(Self, Vec<usize>, Vec<usize>)> {
        if keep_rows.len() != self.n_rows || keep_cols.len() != self.n_cols {
            return Err(Error::DimensionMismatch("restriction masks".into()));
        }
        let row_map: Vec<usize> = (0..self.n_rows).filter(|&i| keep_rows[i]).collect();
        let col_map: Vec<usize> = (0..self.n_cols).filter(|&j| keep_cols[j]).collect();
        let mut new_col = vec![usize::MAX; self.n_cols];
        for (nj, &j) in col_map.iter().enumerate() {
            new_col[j] = nj;
        }
        let mut entries = Vec::new();
        for (ni, &i) in row_map.iter().enumerate() {
            for (j, y) in self.row(i) {
                if keep_cols[j] {
                    entries.push((ni, new_col[j], y));
                }
            }
        }
        let sub = Self::new(row_map.len(), col_map.len(), entries)?;
        Ok((sub, row_map, col_map))
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.theta.len() != self.n_rows || params.beta.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "params are {} x {}, data is {} x {}",
                params.theta.len(),
                params.beta.len(),
                self.n_rows,
                self.n_cols
            )));
        }
        Ok(())
    }
}

/// Minimum and maximum observed counts per row (`J_*`, `J^*`) and per
/// column (`N_*`, `N^*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignStats {
    pub j_star_min: usize,
    pub j_star_max: usize,
    pub n_star_min: usize,
    pub n_star_max: usize,
    pub missing_fraction: f64,
}

/// Row effects `theta` and column effects `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { theta, beta }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            theta: vec![0.0; n_rows],
            beta: vec![0.0; n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.theta.len()
    }

    pub fn n_cols(&self) -> usize {
        self.beta.len()
    }

    /// `m_ij = theta_i - beta_j`.
    #[inline]
    pub fn m(&self, i: usize, j: usize) -> f64 {
        self.theta[i] - self.beta[j]
    }

    /// Adds `c` to every row and column effect.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            theta: self.theta.iter().map(|t| t + c).collect(),
            beta: self.beta.iter().map(|b| b + c).collect(),
        }
    }

    pub fn centered(&self) -> Self {
        center(self)
    }

    pub fn is_centered(&self) -> bool {
        let s: f64 = self.theta.iter().sum();
        s.abs() <= CENTERING_TOL * self.theta.len().max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

/// Subtracts the mean row effect from every row and column effect. All
/// differences `theta_i - beta_j` are unchanged.
pub fn center(params: &ModelParams) -> ModelParams {
    if params.theta.is_empty() {
        return params.clone();
    }
    let mean = params.theta.iter().sum::<f64>() / params.theta.len() as f64;
    if mean == 0.0 {
        return params.clone();
    }
    params.shifted(-mean)
}

/// `sum over observed (i, j) of y (theta_i - beta_j) - log(1 + exp(theta_i - beta_j))`.
pub fn log_likelihood(params: &ModelParams, data: &ObservedBinaryMatrix) -> Result<f64> {
    data.check_params(params)?;
    let mut total = 0.0;
    for i in 0..data.n_rows {
        let theta = params.theta[i];
        let mut row = 0.0;
        for e in data.row_range(i) {
            let (j, y) = data.entry(e);
            let m = theta - params.beta[j];
            row += f64::from(y) * m - log1p_exp(m);
        }
        total += row;
    }
    Ok(total)
}

/// Partial derivatives of the log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.theta
            .iter()
            .chain(&self.beta)
            .fold(0.0_f64, |acc, g| acc.max(g.abs()))
    }
}

pub fn gradient(params: &ModelParams, data: &ObservedBinaryMatrix) -> Result<Gradient> {
    data.check_params(params)?;
    let theta = (0..data.n_rows)
        .map(|i| data.row(i).map(|(j, y)| f64::from(y) - logistic(params.m(i, j))).sum())
        .collect();
    let beta = (0..data.n_cols)
        .map(|j| data.col(j).map(|(i, y)| logistic(params.m(i, j)) - f64::from(y)).sum())
        .collect();
    Ok(Gradient { theta, beta })
}

/// Row, column and total sums of `sigma_ij^2 = p_ij (1 - p_ij)` over
/// observed cells, together with the parameters they were computed at so
/// single cells can be evaluated on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStats {
    params: ModelParams,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub total: f64,
}

impl SigmaStats {
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        bernoulli_variance(self.params.m(i, j))
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Rebuilds the aggregates from stored row and column sums, for example
    /// from a saved fit.
    pub fn from_aggregates(params: ModelParams, row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        if row.len() != params.theta.len() || col.len() != params.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "aggregates are {} x {}, params are {} x {}",
                row.len(),
                col.len(),
                params.theta.len(),
                params.beta.len()
            )));
        }
        let total = row.iter().sum();
        Ok(Self {
            params,
            row,
            col,
            total,
        })
    }
}

pub fn sigma_stats(params: &ModelParams, data: &ObservedBinaryMatrix) -> Result<SigmaStats> {
    data.check_params(params)?;
    let mut row = vec![0.0; data.n_rows];
    let mut col = vec![0.0; data.n_cols];
    let mut total = 0.0;
    for (i, r) in row.iter_mut().enumerate() {
        for (j, _) in data.row(i) {
            let s = bernoulli_variance(params.m(i, j));
            *r += s;
            col[j] += s;
        }
        total += *r;
    }
    Ok(SigmaStats {
        params: params.clone(),
        row,
        col,
        total,
    })
}

pub fn predict_probability(params: &ModelParams, i: usize, j: usize) -> Result<f64> {
    if i >= params.theta.len() || j >= params.beta.len() {
        return Err(Error::IndexOutOfRange(format!(
            "cell ({i}, {j}) outside {} x {}",
            params.theta.len(),
            params.beta.len()
        )));
    }
    Ok(logistic(params.m(i, j)))
}

/// Everything the estimator needs from one pass over the observed cells.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub grad_theta: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub sigma_row: Vec<f64>,
    pub sigma_col: Vec<f64>,
    /// Largest `|m_ij|` over observed cells and where it occurs.
    pub max_abs_m: (f64, usize, usize),
}

pub(crate) fn evaluate(params: &ModelParams, data: &ObservedBinaryMatrix) -> Evaluation {
    let mut eval = Evaluation {
        loglik: 0.0,
        grad_theta: vec![0.0; data.n_rows],
        grad_beta: vec![0.0; data.n_cols],
        sigma_row: vec![0.0; data.n_rows],
        sigma_col: vec![0.0; data.n_cols],
        max_abs_m: (0.0, 0, 0),
    };
    for i in 0..data.n_rows {
        let theta = params.theta[i];
        let (mut ll, mut g, mut s) = (0.0, 0.0, 0.0);
        for e in data.row_range(i) {
            let (j, y) = data.entry(e);
            let m = theta - params.beta[j];
            let a = m.abs();
            let ex = (-a).exp();
            let inv = 1.0 / (1.0 + ex);
            let p = if m >= 0.0 { inv } else { ex * inv };
            let var = ex * inv * inv;
            let y = f64::from(y);
            ll += y * m - (m.max(0.0) + ex.ln_1p());
            g += y - p;
            s += var;
            eval.grad_beta[j] += p - y;
            eval.sigma_col[j] += var;
            if a > eval.max_abs_m.0 {
                eval.max_abs_m = (a, i, j);
            }
        }
        eval.loglik += ll;
        eval.grad_theta[i] = g;
        eval.sigma_row[i] = s;
    }
    eval
}

/// A single observed cell weight `w_ij` of a linear form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryWeight {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// A linear functional `g(M) = w_g . theta + w~_g . beta`, optionally
/// carrying the cell weights `w_ij` it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    row_weights: Vec<f64>,
    col_weights: Vec<f64>,
    entries: Option<Vec<EntryWeight>>,
}

/// Row sums, column sums and grand total of the cell weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMargins {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub total: f64,
}

impl LinearForm {
    pub fn new(row_weights: Vec<f64>, col_weights: Vec<f64>) -> Self {
        Self {
            row_weights,
            col_weights,
            entries: None,
        }
    }

    /// Builds `g(M) = sum w_ij m_ij`, deriving `w_g[i] = sum_j w_ij` and
    /// `w~_g[j] = -sum_i w_ij`. Repeated cells are summed.
    pub fn from_entries(n_rows: usize, n_cols: usize, entries: Vec<EntryWeight>) -> Result<Self> {
        let mut entries = entries;
        for e in &entries {
            if e.row >= n_rows || e.col >= n_cols {
                return Err(Error::IndexOutOfRange(format!(
                    "weight cell ({}, {}) outside {n_rows} x {n_cols}",
                    e.row, e.col
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite weight at ({}, {})",
                    e.row, e.col
                )));
            }
        }
        entries.sort_by_key(|e| (e.row, e.col));
        let mut merged: Vec<EntryWeight> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if last.row == e.row && last.col == e.col => last.weight += e.weight,
                _ => merged.push(e),
            }
        }
        let mut row_weights = vec![0.0; n_rows];
        let mut col_weights = vec![0.0; n_cols];
        for e in &merged {
            row_weights[e.row] += e.weight;
            col_weights[e.col] -= e.weight;
        }
        Ok(Self {
            row_weights,
            col_weights,
            entries: Some(merged),
        })
    }

    /// `g = theta_i`.
    pub fn row_effect(n_rows: usize, n_cols: usize, i: usize) -> Self {
        let mut w = vec![0.0; n_rows];
        w[i] = 1.0;
        Self::new(w, vec![0.0; n_cols])
    }

    /// `g = beta_j`.
    pub fn col_effect(n_rows: usize, n_cols: usize, j: usize) -> Self {
        let mut w = vec![0.0; n_cols];
        w[j] = 1.0;
        Self::new(vec![0.0; n_rows], w)
    }

    /// `g = m_ij`, with its single-cell origin.
    pub fn entry(n_rows: usize, n_cols: usize, i: usize, j: usize) -> Self {
        let mut rw = vec![0.0; n_rows];
        let mut cw = vec![0.0; n_cols];
        rw[i] = 1.0;
        cw[j] = -1.0;
        Self {
            row_weights: rw,
            col_weights: cw,
            entries: Some(vec![EntryWeight {
                row: i,
                col: j,
                weight: 1.0,
            }]),
        }
    }

    /// `g = theta_i - theta_k`.
    pub fn row_difference(n_rows: usize, n_cols: usize, i: usize, k: usize) -> Self {
        let mut w = vec![0.0; n_rows];
        w[i] += 1.0;
        w[k] -= 1.0;
        Self::new(w, vec![0.0; n_cols])
    }

    pub fn row_weights(&self) -> &[f64] {
        &self.row_weights
    }

    pub fn col_weights(&self) -> &[f64] {
        &self.col_weights
    }

    pub fn entry_weights(&self) -> Option<&[EntryWeight]> {
        self.entries.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.row_weights.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_weights.len()
    }

    pub fn row_l1(&self) -> f64 {
        self.row_weights.iter().map(|w| w.abs()).sum()
    }

    pub fn col_l1(&self) -> f64 {
        self.col_weights.iter().map(|w| w.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.row_weights.iter().chain(&self.col_weights).all(|&w| w == 0.0)
    }

    pub fn evaluate(&self, params: &ModelParams) -> Result<f64> {
        if params.theta.len() != self.row_weights.len() || params.beta.len() != self.col_weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "form is {} x {}, params are {} x {}",
                self.row_weights.len(),
                self.col_weights.len(),
                params.theta.len(),
                params.beta.len()
            )));
        }
        let a: f64 = self.row_weights.iter().zip(&params.theta).map(|(w, t)| w * t).sum();
        let b: f64 = self.col_weights.iter().zip(&params.beta).map(|(w, b)| w * b).sum();
        Ok(a + b)
    }

    /// `sum(w_g) + sum(w~_g)`; zero exactly when `g` depends on `M` only.
    pub fn shift_imbalance(&self) -> f64 {
        self.row_weights.iter().sum::<f64>() + self.col_weights.iter().sum::<f64>()
    }

    /// The representation of `g` that is invariant to a common shift, equal
    /// to `g` on the sum-zero parameter space.
    pub fn identified(&self) -> Self {
        if self.entries.is_some() {
            return self.clone();
        }
        let c = self.shift_imbalance() / self.row_weights.len() as f64;
        if c == 0.0 {
            return self.clone();
        }
        Self::new(
            self.row_weights.iter().map(|w| w - c).collect(),
            self.col_weights.clone(),
        )
    }

    /// Returns a form with cell weights on the full grid reproducing the
    /// identified margins: `w_ij = r_i / J + c_j / N - w_++ / (N J)`.
    pub fn with_entry_origin(&self) -> Self {
        if self.entries.is_some() {
            return self.clone();
        }
        let g = self.identified();
        let (n, j) = (g.n_rows(), g.n_cols());
        let total: f64 = g.row_weights.iter().sum();
        let base = total / (n * j) as f64;
        let mut entries = Vec::with_capacity(n * j);
        for (i, r) in g.row_weights.iter().enumerate() {
            for (c, w) in g.col_weights.iter().enumerate() {
                let weight = r / j as f64 - w / n as f64 - base;
                if weight != 0.0 {
                    entries.push(EntryWeight { row: i, col: c, weight });
                }
            }
        }
        Self::from_entries(n, j, entries).expect("indices are in range by construction")
    }

    /// Margins `w_i+`, `w_+j` (column sums, positive orientation) and `w_++`
    /// of the cell weights.
    pub fn margins(&self) -> Result<WeightMargins> {
        let entries = self.entries.as_ref().ok_or(Error::MissingEntryWeights)?;
        let mut row = vec![0.0; self.n_rows()];
        let mut col = vec![0.0; self.n_cols()];
        let mut total = 0.0;
        for e in entries {
            row[e.row] += e.weight;
            col[e.col] += e.weight;
            total += e.weight;
        }
        Ok(WeightMargins { row, col, total })
    }
}
