//! Constrained maximum likelihood by alternating gradient ascent.
//!
//! Each sweep updates every row effect with the column effects held fixed,
//! then every column effect using the new row effects, then recenters so
//! that the row effects sum to zero. A sweep that would lower the
//! log-likelihood is retried with half the step, so the accepted trace is
//! non-decreasing.

use std::collections::BTreeSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connectivity::check_connectivity;
use crate::error::{Error, Result};
use crate::model::{evaluate, Evaluation, LinearForm, ModelParams, ObservedBinaryMatrix};

/// `|m_ij|` above which a near-degenerate margin is reported.
pub const DIVERGENCE_WARN: f64 = 30.0;

/// Largest per-coordinate change in one curvature-scaled step.
const MAX_CURVATURE_STEP: f64 = 5.0;

/// Halvings attempted before a sweep is declared stalled.
const MAX_HALVINGS: u32 = 40;

/// How the per-coordinate step is formed from the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `gamma * gradient`, the same rate for every coordinate.
    Fixed,
    /// `gamma * gradient / curvature`, with the curvature the row (or
    /// column) sum of Bernoulli variances.
    Curvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Defaults to `1 / max(N^*, J^*)` for [`StepRule::Fixed`] and `1` for
    /// [`StepRule::Curvature`].
    pub learning_rate: Option<f64>,
    pub step_rule: StepRule,
    /// Stop when a sweep improves the log-likelihood by less than this.
    /// Defaults to `1e-12` per observed cell.
    pub tol: Option<f64>,
    pub max_sweeps: usize,
    /// Initial effects are drawn from `Uniform(-c, c)`.
    pub init_half_width: f64,
    pub seed: u64,
    pub grad_tol: f64,
    pub allow_disconnected: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: None,
            step_rule: StepRule::Curvature,
            tol: None,
            max_sweeps: 10_000,
            init_half_width: 1.0,
            seed: 0,
            grad_tol: 1e-6,
            allow_disconnected: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(g) = self.learning_rate {
            positive("learning_rate", g)?;
        }
        if let Some(t) = self.tol {
            positive("tol", t)?;
        }
        positive("init_half_width", self.init_half_width)?;
        positive("grad_tol", self.grad_tol)?;
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved_rate(&self, data: &ObservedBinaryMatrix) -> f64 {
        self.learning_rate.unwrap_or_else(|| match self.step_rule {
            StepRule::Fixed => {
                let s = data.design_stats();
                1.0 / s.j_star_max.max(s.n_star_max).max(1) as f64
            }
            StepRule::Curvature => 1.0,
        })
    }

    fn resolved_tol(&self, data: &ObservedBinaryMatrix) -> f64 {
        self.tol.unwrap_or(1e-12 * data.n_observed() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    LoglikTolerance,
    Stalled,
    MaxSweeps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    pub final_loglik: f64,
    pub sweeps: usize,
    /// True when the optimality certificate holds at the returned
    /// parameters and no row or column has constant observed values.
    pub converged: bool,
    pub stop_reason: StopReason,
    pub grad_max_norm: f64,
    pub loglik_trace: Vec<f64>,
    pub degenerate_rows: Vec<usize>,
    pub degenerate_cols: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Rows and columns whose observed values are all 0 or all 1. Their
/// maximum likelihood estimates do not exist.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Degeneracy {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Degeneracy {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.cols.is_empty()
    }
}

pub fn screen_degenerate(data: &ObservedBinaryMatrix) -> Degeneracy {
    let constant = |mut it: Box<dyn Iterator<Item = u8> + '_>| -> bool {
        match it.next() {
            Some(first) => it.all(|y| y == first),
            None => false,
        }
    };
    Degeneracy {
        rows: (0..data.n_rows())
            .filter(|&i| constant(Box::new(data.row(i).map(|(_, y)| y))))
            .collect(),
        cols: (0..data.n_cols())
            .filter(|&j| constant(Box::new(data.col(j).map(|(_, y)| y))))
            .collect(),
    }
}

/// `|d l / d theta_i| <= grad_tol (1 + |S_J(i)|)` and the column analogue.
pub fn certificate_holds(grad_theta: &[f64], grad_beta: &[f64], data: &ObservedBinaryMatrix, grad_tol: f64) -> bool {
    grad_theta
        .iter()
        .enumerate()
        .all(|(i, g)| g.abs() <= grad_tol * (1 + data.row_count(i)) as f64)
        && grad_beta
            .iter()
            .enumerate()
            .all(|(j, g)| g.abs() <= grad_tol * (1 + data.col_count(j)) as f64)
}

fn check_fit_preconditions(data: &ObservedBinaryMatrix, config: &FitConfig) -> Result<()> {
    config.validate()?;
    if let Some(i) = (0..data.n_rows()).find(|&i| data.row_count(i) == 0) {
        return Err(Error::EmptyRow(i));
    }
    if let Some(j) = (0..data.n_cols()).find(|&j| data.col_count(j) == 0) {
        return Err(Error::EmptyColumn(j));
    }
    if !config.allow_disconnected {
        let report = check_connectivity(data);
        if !report.connected {
            return Err(report.into_error());
        }
    }
    Ok(())
}

pub fn fit(data: &ObservedBinaryMatrix, config: &FitConfig) -> Result<FitReport> {
    fit_observed(data, config, |_| {})
}

/// Fit that also records every probe's value after each accepted sweep.
pub fn fit_profile(
    data: &ObservedBinaryMatrix,
    config: &FitConfig,
    probes: &[LinearForm],
) -> Result<(FitReport, Vec<Vec<f64>>)> {
    for p in probes {
        if p.n_rows() != data.n_rows() || p.n_cols() != data.n_cols() {
            return Err(Error::DimensionMismatch("probe form does not match data".into()));
        }
    }
    let mut traces = vec![Vec::new(); probes.len()];
    let report = fit_observed(data, config, |params| {
        for (trace, probe) in traces.iter_mut().zip(probes) {
            trace.push(probe.evaluate(params).expect("dimensions checked"));
        }
    })?;
    Ok((report, traces))
}

fn fit_observed(
    data: &ObservedBinaryMatrix,
    config: &FitConfig,
    mut observe: impl FnMut(&ModelParams),
) -> Result<FitReport> {
    check_fit_preconditions(data, config)?;
    let degeneracy = screen_degenerate(data);
    for &i in &degeneracy.rows {
        warn!("row {i} has constant observed values; its estimate does not exist");
    }
    for &j in &degeneracy.cols {
        warn!("column {j} has constant observed values; its estimate does not exist");
    }

    let rate = config.resolved_rate(data);
    let tol = config.resolved_tol(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.init_half_width;
    let mut params = ModelParams::new(
        (0..data.n_rows()).map(|_| rng.gen_range(-c..c)).collect(),
        (0..data.n_cols()).map(|_| rng.gen_range(-c..c)).collect(),
    );
    let mut eval = evaluate(&params, data);
    if !eval.loglik.is_finite() {
        return Err(Error::NonFinite { sweep: 0 });
    }
    let mut trace = vec![eval.loglik];
    let mut warned_rows = BTreeSet::new();
    let mut warned_cols = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut sweeps = 0;
    let mut stop_reason = StopReason::MaxSweeps;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let mut scale = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let candidate = sweep(&params, &eval, data, config.step_rule, rate * scale);
            let cand_eval = evaluate(&candidate, data);
            if !cand_eval.loglik.is_finite() {
                return Err(Error::NonFinite { sweep: sweeps });
            }
            if cand_eval.loglik >= eval.loglik {
                break Some((candidate, cand_eval));
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break None;
            }
            scale *= 0.5;
        };
        let Some((candidate, cand_eval)) = accepted else {
            stop_reason = StopReason::Stalled;
            sweeps -= 1;
            break;
        };
        let improvement = cand_eval.loglik - eval.loglik;
        params = candidate;
        eval = cand_eval;
        trace.push(eval.loglik);
        observe(&params);

        let (big, i, j) = eval.max_abs_m;
        if big > DIVERGENCE_WARN {
            if warned_rows.insert(i) {
                let msg = format!("near-degenerate margin at row {i} (|m| = {big:.1} at column {j})");
                warn!("{msg}");
                warnings.push(msg);
            }
            if warned_cols.insert(j) {
                let msg = format!("near-degenerate margin at column {j} (|m| = {big:.1} at row {i})");
                warn!("{msg}");
                warnings.push(msg);
            }
        }

        if max_abs(&eval.grad_theta, &eval.grad_beta) < config.grad_tol {
            stop_reason = StopReason::GradientTolerance;
            break;
        }
        if improvement < tol {
            stop_reason = StopReason::LoglikTolerance;
            break;
        }
    }

    let grad_max_norm = max_abs(&eval.grad_theta, &eval.grad_beta);
    let certified = certificate_holds(&eval.grad_theta, &eval.grad_beta, data, config.grad_tol);
    Ok(FitReport {
        params,
        final_loglik: eval.loglik,
        sweeps,
        converged: certified && degeneracy.is_empty(),
        stop_reason,
        grad_max_norm,
        loglik_trace: trace,
        degenerate_rows: degeneracy.rows,
        degenerate_cols: degeneracy.cols,
        warnings,
    })
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).fold(0.0_f64, |acc, g| acc.max(g.abs()))
}

#[inline]
fn coordinate_step(rule: StepRule, rate: f64, grad: f64, curvature: f64) -> f64 {
    match rule {
        StepRule::Fixed => rate * grad,
        StepRule::Curvature => {
            let step = rate * grad / curvature.max(1e-300);
            step.clamp(-MAX_CURVATURE_STEP, MAX_CURVATURE_STEP)
        }
    }
}

/// One sweep from `params`, whose evaluation is `eval`: rows first, then
/// columns at the new rows, then recentering.
fn sweep(
    params: &ModelParams,
    eval: &Evaluation,
    data: &ObservedBinaryMatrix,
    rule: StepRule,
    rate: f64,
) -> ModelParams {
    let theta: Vec<f64> = params
        .theta
        .iter()
        .enumerate()
        .map(|(i, t)| t + coordinate_step(rule, rate, eval.grad_theta[i], eval.sigma_row[i]))
        .collect();

    let mut grad_beta = vec![0.0; data.n_cols()];
    let mut curv_beta = vec![0.0; data.n_cols()];
    for (i, &t) in theta.iter().enumerate() {
        for e in data.row_range(i) {
            let (j, y) = data.entry(e);
            let m = t - params.beta[j];
            let ex = (-m.abs()).exp();
            let inv = 1.0 / (1.0 + ex);
            let p = if m >= 0.0 { inv } else { ex * inv };
            grad_beta[j] += p - f64::from(y);
            curv_beta[j] += ex * inv * inv;
        }
    }
    let beta: Vec<f64> = params
        .beta
        .iter()
        .enumerate()
        .map(|(j, b)| b + coordinate_step(rule, rate, grad_beta[j], curv_beta[j]))
        .collect();

    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    ModelParams {
        theta: theta.into_iter().map(|t| t - mean).collect(),
        beta: beta.into_iter().map(|b| b - mean).collect(),
    }
}
