//! Synthetic data under the model and Monte-Carlo studies of the fitted
//! estimates.
//!
//! Random streams: every study seeds one ChaCha8 generator family from
//! `SimStudyConfig::seed`. Stream 0 draws the true parameters, stream 1
//! realises a random missingness mask, and replication `r` uses stream
//! `r + 2`; the last stream picks sampled `m_ij` targets. Replications are
//! therefore independent of the thread count and of the order in which they
//! run; aggregation happens afterwards in replication order.

use log::{debug, info};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{check_connectivity, estimate_exists};
use crate::error::{Error, Result};
use crate::estimator::{fit, screen_degenerate, FitConfig};
use crate::model::{logistic, sigma_stats, DesignStats, ModelParams, ObservedBinaryMatrix};
use crate::normal;

/// Bound on the effects: `|theta_i| <= 2`, `|beta_j| <= 2`.
pub const EFFECT_BOUND: f64 = 2.0;

/// Attempts allowed to the rejection sampler for `theta`.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Largest fraction of replications that may be excluded before a study
/// fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

const STREAM_TRUTH: u64 = 0;
const STREAM_MASK: u64 = 1;
const STREAM_FIRST_REPLICATION: u64 = 2;
const STREAM_TARGETS: u64 = u64::MAX;

/// Which cells of an `N x J` matrix are observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissingDesign {
    Full,
    /// Rows and columns split into equal consecutive clusters; a cell is
    /// observed when `mask[row_cluster][col_cluster]` is set.
    Block {
        row_clusters: usize,
        col_clusters: usize,
        mask: Vec<Vec<bool>>,
    },
    /// Each cell observed independently with probability `rate`.
    Bernoulli {
        rate: f64,
    },
    Explicit {
        mask: Vec<Vec<bool>>,
    },
}

/// Observed cells of a realised design, in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignMask {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<(usize, usize)>,
}

impl DesignMask {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn n_observed(&self) -> usize {
        self.cells.len()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_rows];
        for &(i, _) in &self.cells {
            c[i] += 1;
        }
        c
    }

    pub fn col_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_cols];
        for &(_, j) in &self.cells {
            c[j] += 1;
        }
        c
    }

    pub fn stats(&self) -> DesignStats {
        let rc = self.row_counts();
        let cc = self.col_counts();
        DesignStats {
            j_star_min: rc.iter().copied().min().unwrap_or(0),
            j_star_max: rc.iter().copied().max().unwrap_or(0),
            n_star_min: cc.iter().copied().min().unwrap_or(0),
            n_star_max: cc.iter().copied().max().unwrap_or(0),
            missing_fraction: 1.0 - self.cells.len() as f64 / (self.n_rows * self.n_cols) as f64,
        }
    }

    /// The mask as a data matrix with every observed value set to zero;
    /// useful for connectivity checks.
    pub fn pattern(&self) -> ObservedBinaryMatrix {
        ObservedBinaryMatrix::new(
            self.n_rows,
            self.n_cols,
            self.cells.iter().map(|&(i, j)| (i, j, 0)).collect(),
        )
        .expect("mask cells are valid by construction")
    }
}

impl MissingDesign {
    /// Realises the design on an `n_rows x n_cols` grid. Fails if any row or
    /// column ends up with no observation.
    pub fn realize(&self, n_rows: usize, n_cols: usize, rng: &mut impl Rng) -> Result<DesignMask> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument(
                "design needs at least one row and one column".into(),
            ));
        }
        let mut cells = Vec::new();
        match self {
            MissingDesign::Full => {
                for i in 0..n_rows {
                    cells.extend((0..n_cols).map(|j| (i, j)));
                }
            }
            MissingDesign::Block {
                row_clusters,
                col_clusters,
                mask,
            } => {
                let (rc, cc) = (*row_clusters, *col_clusters);
                if rc == 0 || cc == 0 || mask.len() != rc || mask.iter().any(|r| r.len() != cc) {
                    return Err(Error::DimensionMismatch(format!("block mask must be {rc} x {cc}")));
                }
                if !n_rows.is_multiple_of(rc) || !n_cols.is_multiple_of(cc) {
                    return Err(Error::InvalidArgument(format!(
                        "{n_rows} x {n_cols} does not split into {rc} x {cc} equal blocks"
                    )));
                }
                let (rs, cs) = (n_rows / rc, n_cols / cc);
                for i in 0..n_rows {
                    cells.extend((0..n_cols).filter(|&j| mask[i / rs][j / cs]).map(|j| (i, j)));
                }
            }
            MissingDesign::Bernoulli { rate } => {
                if !(*rate > 0.0 && *rate <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "observation rate must lie in (0, 1], got {rate}"
                    )));
                }
                for i in 0..n_rows {
                    for j in 0..n_cols {
                        if rng.gen::<f64>() < *rate {
                            cells.push((i, j));
                        }
                    }
                }
            }
            MissingDesign::Explicit { mask } => {
                if mask.len() != n_rows || mask.iter().any(|r| r.len() != n_cols) {
                    return Err(Error::DimensionMismatch(format!(
                        "explicit mask must be {n_rows} x {n_cols}"
                    )));
                }
                for (i, row) in mask.iter().enumerate() {
                    cells.extend(row.iter().enumerate().filter(|(_, &o)| o).map(|(j, _)| (i, j)));
                }
            }
        }
        let mask = DesignMask { n_rows, n_cols, cells };
        if let Some(i) = mask.row_counts().iter().position(|&c| c == 0) {
            return Err(Error::EmptyRow(i));
        }
        if let Some(j) = mask.col_counts().iter().position(|&c| c == 0) {
            return Err(Error::EmptyColumn(j));
        }
        Ok(mask)
    }
}

/// Five row clusters by four column clusters; each row cluster sees two of
/// the column clusters.
pub const BLOCK_PATTERN: [[bool; 4]; 5] = [
    [true, true, false, false],
    [false, true, true, false],
    [false, false, true, true],
    [true, false, true, false],
    [false, true, false, true],
];

pub fn make_block_design(n_rows: usize, n_cols: usize) -> Result<MissingDesign> {
    if n_rows == 0 || !n_rows.is_multiple_of(5) || n_cols == 0 || !n_cols.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "block design needs N divisible by 5 and J divisible by 4, got {n_rows} x {n_cols}"
        )));
    }
    Ok(MissingDesign::Block {
        row_clusters: 5,
        col_clusters: 4,
        mask: BLOCK_PATTERN.iter().map(|r| r.to_vec()).collect(),
    })
}

/// Two test forms of `form_rows x form_cols` that share `shared` anchor
/// columns: rows of the first form see columns `0..form_cols`, rows of the
/// second see the last `shared` of those plus `form_cols - shared` new ones.
pub fn make_linking_design(form_rows: usize, form_cols: usize, shared: usize) -> Result<(usize, usize, MissingDesign)> {
    if form_rows == 0 || form_cols == 0 || shared > form_cols {
        return Err(Error::InvalidArgument(format!(
            "linking design needs non-empty forms and shared <= {form_cols}, got {shared}"
        )));
    }
    let n = 2 * form_rows;
    let j = 2 * form_cols - shared;
    let second_start = form_cols - shared;
    let mask = (0..n)
        .map(|i| {
            (0..j)
                .map(|c| {
                    if i < form_rows {
                        c < form_cols
                    } else {
                        c >= second_start
                    }
                })
                .collect()
        })
        .collect();
    Ok((n, j, MissingDesign::Explicit { mask }))
}

/// Draws `beta_j ~ Uniform[-2, 2]` and `theta` uniformly from
/// `{sum theta_i = 0, |theta_i| <= 2}`.
///
/// `theta_1..theta_{N-1}` are proposed iid uniform and `theta_N` is set to
/// minus their sum; the proposal is kept when `|theta_N| <= 2`. The map
/// from the first `N - 1` coordinates onto the constraint plane is linear,
/// so accepted draws are exactly uniform on the set.
pub fn draw_parameters_with(n_rows: usize, n_cols: usize, rng: &mut impl Rng) -> Result<ModelParams> {
    if n_rows == 0 {
        return Err(Error::InvalidArgument("need at least one row".into()));
    }
    let mut theta = vec![0.0; n_rows];
    let mut accepted = false;
    for _ in 0..MAX_REJECTIONS {
        let mut sum = 0.0;
        for t in theta.iter_mut().take(n_rows - 1) {
            *t = rng.gen_range(-EFFECT_BOUND..=EFFECT_BOUND);
            sum += *t;
        }
        if sum.abs() <= EFFECT_BOUND {
            theta[n_rows - 1] = -sum;
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::InvalidArgument(format!(
            "theta sampler rejected {MAX_REJECTIONS} proposals for N = {n_rows}"
        )));
    }
    let beta = (0..n_cols)
        .map(|_| rng.gen_range(-EFFECT_BOUND..=EFFECT_BOUND))
        .collect();
    Ok(ModelParams::new(theta, beta))
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// True parameters of a study, from its truth stream.
pub fn draw_parameters(config: &SimStudyConfig) -> Result<ModelParams> {
    draw_parameters_with(config.n_rows, config.n_cols, &mut stream(config.seed, STREAM_TRUTH))
}

/// The study's missingness mask, from its mask stream.
pub fn realize_design(config: &SimStudyConfig) -> Result<DesignMask> {
    config
        .design
        .realize(config.n_rows, config.n_cols, &mut stream(config.seed, STREAM_MASK))
}

/// Independent `Bernoulli(logistic(theta_i - beta_j))` draws on the
/// observed cells.
pub fn simulate_matrix(params: &ModelParams, mask: &DesignMask, seed: u64) -> Result<ObservedBinaryMatrix> {
    simulate_with(params, mask, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn simulate_with(params: &ModelParams, mask: &DesignMask, rng: &mut impl Rng) -> Result<ObservedBinaryMatrix> {
    if params.n_rows() != mask.n_rows || params.n_cols() != mask.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "params are {} x {}, mask is {} x {}",
            params.n_rows(),
            params.n_cols(),
            mask.n_rows,
            mask.n_cols
        )));
    }
    let entries = mask
        .cells
        .iter()
        .map(|&(i, j)| {
            let p = logistic(params.m(i, j));
            (i, j, u8::from(rng.gen::<f64>() < p))
        })
        .collect();
    ObservedBinaryMatrix::new(mask.n_rows, mask.n_cols, entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub design: MissingDesign,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Number of observed cells sampled as `m_ij` targets; all observed
    /// cells when absent.
    #[serde(default)]
    pub entry_targets: Option<usize>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_level() -> f64 {
    0.95
}

fn default_bins() -> usize {
    40
}

impl SimStudyConfig {
    pub fn new(n_rows: usize, n_cols: usize, design: MissingDesign, replications: usize, seed: u64) -> Self {
        Self {
            n_rows,
            n_cols,
            design,
            replications,
            seed,
            fit: FitConfig::default(),
            level: default_level(),
            entry_targets: None,
            histogram_bins: default_bins(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidArgument("histogram_bins must be at least 1".into()));
        }
        self.fit.validate()
    }
}

/// Histogram of standardized errors `(g_hat - g) / sigma_tilde` on
/// `[-HIST_RANGE, HIST_RANGE]`; values outside fall in `below`/`above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

pub const HIST_RANGE: f64 = 4.0;

impl Histogram {
    fn new(bins: usize) -> Self {
        Self {
            lower: -HIST_RANGE,
            upper: HIST_RANGE,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    fn add(&mut self, z: f64) {
        if z < self.lower {
            self.below += 1;
        } else if z >= self.upper {
            self.above += 1;
        } else {
            let w = (self.upper - self.lower) / self.counts.len() as f64;
            let k = (((z - self.lower) / w) as usize).min(self.counts.len() - 1);
            self.counts[k] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    /// Bin edges `(lo, hi)` and the density `count / (total * width)`.
    pub fn densities(&self) -> Vec<(f64, f64, f64)> {
        let w = (self.upper - self.lower) / self.counts.len() as f64;
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let lo = self.lower + k as f64 * w;
                (lo, lo + w, c as f64 / (total * w))
            })
            .collect()
    }
}

/// Per-target results for one family of targets (`theta`, `beta` or
/// `m_ij`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub truth: Vec<f64>,
    /// Replications in which the target was estimated.
    pub estimated: Vec<usize>,
    pub coverage: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    /// `s^2`: sample variance of the estimates across replications.
    pub sample_variance: Vec<f64>,
    /// `sigma-bar^2`: mean plug-in variance.
    pub mean_plugin_variance: Vec<f64>,
    /// `sigma-tilde^2`: variance formula at the true parameters.
    pub true_variance: Vec<f64>,
    pub histogram: Histogram,
}

impl TargetSummary {
    /// Mean coverage over targets estimated at least once.
    pub fn mean_coverage(&self) -> f64 {
        let v: Vec<f64> = self
            .coverage
            .iter()
            .zip(&self.estimated)
            .filter(|(_, &n)| n > 0)
            .map(|(&c, _)| c)
            .collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Median of `s^2 / sigma-tilde^2` over targets estimated at least
    /// twice.
    pub fn median_variance_ratio(&self) -> f64 {
        let mut r: Vec<f64> = (0..self.truth.len())
            .filter(|&k| self.estimated[k] > 1 && self.true_variance[k] > 0.0)
            .map(|k| self.sample_variance[k] / self.true_variance[k])
            .collect();
        median(&mut r)
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_rows: usize,
    pub n_cols: usize,
    pub level: f64,
    pub replications: usize,
    pub excluded: usize,
    pub exclusion_reasons: Vec<String>,
    pub design: DesignStats,
    pub theta: TargetSummary,
    pub beta: TargetSummary,
    /// Cells `(i, j)` used as `m_ij` targets.
    pub entry_cells: Vec<(usize, usize)>,
    pub entries: TargetSummary,
    /// Mean over replications of the average squared error over all
    /// `N x J` cells.
    pub mse_m: f64,
    pub mse_theta: f64,
    pub mse_beta: f64,
    /// `max_i |theta_hat_i - theta_i|` per included replication.
    pub theta_sup_error: Vec<f64>,
    /// Rows and columns dropped for constant observed values, summed over
    /// included replications.
    pub dropped_rows: usize,
    pub dropped_cols: usize,
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            f64::NAN
        }
    }
}

struct FamilyAccumulator {
    truth: Vec<f64>,
    true_variance: Vec<f64>,
    estimate: Vec<Running>,
    plugin: Vec<Running>,
    hits: Vec<usize>,
    histogram: Histogram,
}

impl FamilyAccumulator {
    fn new(truth: Vec<f64>, true_variance: Vec<f64>, bins: usize) -> Self {
        let k = truth.len();
        Self {
            truth,
            true_variance,
            estimate: vec![Running::default(); k],
            plugin: vec![Running::default(); k],
            hits: vec![0; k],
            histogram: Histogram::new(bins),
        }
    }

    fn add(&mut self, k: usize, est: TargetEstimate, z: f64) {
        let g = self.truth[k];
        self.estimate[k].push(est.value);
        self.plugin[k].push(est.variance);
        let half = z * est.variance.sqrt();
        if (est.value - g).abs() <= half {
            self.hits[k] += 1;
        }
        let sd = self.true_variance[k].sqrt();
        if sd > 0.0 {
            self.histogram.add((est.value - g) / sd);
        }
    }

    fn finish(self) -> TargetSummary {
        let k = self.truth.len();
        TargetSummary {
            estimated: self.estimate.iter().map(|r| r.n).collect(),
            coverage: (0..k)
                .map(|t| match self.estimate[t].n {
                    0 => f64::NAN,
                    n => self.hits[t] as f64 / n as f64,
                })
                .collect(),
            mean_estimate: self
                .estimate
                .iter()
                .map(|r| if r.n > 0 { r.mean } else { f64::NAN })
                .collect(),
            sample_variance: self.estimate.iter().map(Running::variance).collect(),
            mean_plugin_variance: self
                .plugin
                .iter()
                .map(|r| if r.n > 0 { r.mean } else { f64::NAN })
                .collect(),
            truth: self.truth,
            true_variance: self.true_variance,
            histogram: self.histogram,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TargetEstimate {
    value: f64,
    variance: f64,
}

/// What one replication contributes; `None` marks a target that was not
/// estimated (its row or column was dropped).
struct ReplicationOutcome {
    theta: Vec<Option<TargetEstimate>>,
    beta: Vec<Option<TargetEstimate>>,
    entries: Vec<Option<TargetEstimate>>,
    sq_m: f64,
    sq_theta: f64,
    sq_beta: f64,
    sup_theta: f64,
    dropped_rows: usize,
    dropped_cols: usize,
}

/// Drops rows and columns whose observed values are constant (or that have
/// none left), repeating until none remain.
fn prune_degenerate(data: &ObservedBinaryMatrix) -> Result<(ObservedBinaryMatrix, Vec<usize>, Vec<usize>)> {
    let mut current = data.clone();
    let mut row_map: Vec<usize> = (0..data.n_rows()).collect();
    let mut col_map: Vec<usize> = (0..data.n_cols()).collect();
    loop {
        let d = screen_degenerate(&current);
        let mut keep_rows = vec![true; current.n_rows()];
        let mut keep_cols = vec![true; current.n_cols()];
        for &i in &d.rows {
            keep_rows[i] = false;
        }
        for &j in &d.cols {
            keep_cols[j] = false;
        }
        for (i, k) in keep_rows.iter_mut().enumerate() {
            if current.row_count(i) == 0 {
                *k = false;
            }
        }
        for (j, k) in keep_cols.iter_mut().enumerate() {
            if current.col_count(j) == 0 {
                *k = false;
            }
        }
        if keep_rows.iter().all(|&k| k) && keep_cols.iter().all(|&k| k) {
            return Ok((current, row_map, col_map));
        }
        let (next, rm, cm) = current.restrict(&keep_rows, &keep_cols)?;
        if next.n_rows() == 0 || next.n_cols() == 0 {
            return Err(Error::InvalidArgument("every row or column is degenerate".into()));
        }
        row_map = rm.iter().map(|&i| row_map[i]).collect();
        col_map = cm.iter().map(|&j| col_map[j]).collect();
        current = next;
    }
}

fn run_replication(
    config: &SimStudyConfig,
    truth: &ModelParams,
    mask: &DesignMask,
    entry_cells: &[(usize, usize)],
    r: usize,
) -> Result<ReplicationOutcome> {
    let mut rng = stream(config.seed, STREAM_FIRST_REPLICATION + r as u64);
    let data = simulate_with(truth, mask, &mut rng)?;
    let (sub, row_map, col_map) = prune_degenerate(&data)?;
    let report = check_connectivity(&sub);
    if !report.connected {
        return Err(report.into_error());
    }
    if !estimate_exists(&sub) {
        return Err(Error::InvalidArgument(
            "maximum likelihood estimate does not exist".into(),
        ));
    }
    let fitted = fit(&sub, &config.fit)?;
    if !fitted.converged {
        return Err(Error::InvalidArgument(format!(
            "fit did not converge ({:?} after {} sweeps)",
            fitted.stop_reason, fitted.sweeps
        )));
    }
    let sigma = sigma_stats(&fitted.params, &sub)?;

    // Truth restricted to the retained rows, recentered like the estimate.
    let shift = row_map.iter().map(|&i| truth.theta[i]).sum::<f64>() / row_map.len() as f64;
    let theta_err: Vec<f64> = row_map
        .iter()
        .enumerate()
        .map(|(a, &i)| fitted.params.theta[a] - (truth.theta[i] - shift))
        .collect();
    let beta_err: Vec<f64> = col_map
        .iter()
        .enumerate()
        .map(|(b, &j)| fitted.params.beta[b] - (truth.beta[j] - shift))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sq_theta = theta_err.iter().map(|e| e * e).sum::<f64>() / theta_err.len() as f64;
    let sq_beta = beta_err.iter().map(|e| e * e).sum::<f64>() / beta_err.len() as f64;
    let sq_m = sq_theta + sq_beta - 2.0 * mean(&theta_err) * mean(&beta_err);
    let sup_theta = theta_err.iter().fold(0.0_f64, |a, e| a.max(e.abs()));

    let mut new_row = vec![None; truth.n_rows()];
    for (a, &i) in row_map.iter().enumerate() {
        new_row[i] = Some(a);
    }
    let mut new_col = vec![None; truth.n_cols()];
    for (b, &j) in col_map.iter().enumerate() {
        new_col[j] = Some(b);
    }
    // Estimates are reported on the retained rows' centering; the truth
    // they are compared with is shifted back accordingly.
    let theta = new_row
        .iter()
        .map(|a| {
            a.map(|a| TargetEstimate {
                value: fitted.params.theta[a] + shift,
                variance: 1.0 / sigma.row[a],
            })
        })
        .collect();
    let beta = new_col
        .iter()
        .map(|b| {
            b.map(|b| TargetEstimate {
                value: fitted.params.beta[b] + shift,
                variance: 1.0 / sigma.col[b],
            })
        })
        .collect();
    let entries = entry_cells
        .iter()
        .map(|&(i, j)| match (new_row[i], new_col[j]) {
            (Some(a), Some(b)) => Some(TargetEstimate {
                value: fitted.params.m(a, b),
                variance: 1.0 / sigma.row[a] + 1.0 / sigma.col[b],
            }),
            _ => None,
        })
        .collect();
    Ok(ReplicationOutcome {
        theta,
        beta,
        entries,
        sq_m,
        sq_theta,
        sq_beta,
        sup_theta,
        dropped_rows: truth.n_rows() - row_map.len(),
        dropped_cols: truth.n_cols() - col_map.len(),
    })
}

/// Runs the study: truth drawn once, then `replications` independent data
/// sets simulated, fitted and scored.
///
/// Rows and columns whose simulated values are constant have no estimate;
/// they are dropped from that replication, and the effects they carried do
/// not count as estimated there. A replication whose fit fails is excluded;
/// more than one percent of exclusions fails the study.
pub fn run_study(config: &SimStudyConfig) -> Result<CoverageReport> {
    config.validate()?;
    let truth = draw_parameters(config)?;
    let mask = realize_design(config)?;
    let pattern = mask.pattern();
    let conn = check_connectivity(&pattern);
    if !conn.connected {
        return Err(conn.into_error());
    }
    let entry_cells: Vec<(usize, usize)> = match config.entry_targets {
        None => mask.cells.clone(),
        Some(k) => {
            let mut rng = stream(config.seed, STREAM_TARGETS);
            let mut idx = sample(&mut rng, mask.n_observed(), k.min(mask.n_observed())).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|e| mask.cells[e]).collect()
        }
    };

    let sigma_true = sigma_stats(&truth, &pattern)?;
    let z = normal::critical_value(config.level);
    let bins = config.histogram_bins;
    let mut theta_acc = FamilyAccumulator::new(
        truth.theta.clone(),
        sigma_true.row.iter().map(|s| 1.0 / s).collect(),
        bins,
    );
    let mut beta_acc = FamilyAccumulator::new(
        truth.beta.clone(),
        sigma_true.col.iter().map(|s| 1.0 / s).collect(),
        bins,
    );
    let mut entry_acc = FamilyAccumulator::new(
        entry_cells.iter().map(|&(i, j)| truth.m(i, j)).collect(),
        entry_cells
            .iter()
            .map(|&(i, j)| 1.0 / sigma_true.row[i] + 1.0 / sigma_true.col[j])
            .collect(),
        bins,
    );

    info!(
        "study {} x {}: {} replications, {} observed cells, {} entry targets",
        config.n_rows,
        config.n_cols,
        config.replications,
        mask.n_observed(),
        entry_cells.len()
    );

    let chunk = (4 * rayon::current_num_threads()).max(1);
    let (mut sq_m, mut sq_theta, mut sq_beta) = (Running::default(), Running::default(), Running::default());
    let mut theta_sup_error = Vec::new();
    let mut exclusion_reasons = Vec::new();
    let (mut dropped_rows, mut dropped_cols) = (0, 0);
    let mut start = 0;
    while start < config.replications {
        let end = (start + chunk).min(config.replications);
        let outcomes: Vec<Result<ReplicationOutcome>> = (start..end)
            .into_par_iter()
            .map(|r| run_replication(config, &truth, &mask, &entry_cells, r))
            .collect();
        for (r, outcome) in (start..end).zip(outcomes) {
            match outcome {
                Ok(o) => {
                    for (k, e) in o.theta.into_iter().enumerate() {
                        if let Some(e) = e {
                            theta_acc.add(k, e, z);
                        }
                    }
                    for (k, e) in o.beta.into_iter().enumerate() {
                        if let Some(e) = e {
                            beta_acc.add(k, e, z);
                        }
                    }
                    for (k, e) in o.entries.into_iter().enumerate() {
                        if let Some(e) = e {
                            entry_acc.add(k, e, z);
                        }
                    }
                    sq_m.push(o.sq_m);
                    sq_theta.push(o.sq_theta);
                    sq_beta.push(o.sq_beta);
                    theta_sup_error.push(o.sup_theta);
                    dropped_rows += o.dropped_rows;
                    dropped_cols += o.dropped_cols;
                }
                Err(e) => {
                    debug!("replication {r} excluded: {e}");
                    exclusion_reasons.push(format!("replication {r}: {e}"));
                }
            }
        }
        start = end;
    }

    let excluded = exclusion_reasons.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * config.replications as f64 {
        return Err(Error::StudyFailed {
            excluded,
            total: config.replications,
        });
    }
    Ok(CoverageReport {
        n_rows: config.n_rows,
        n_cols: config.n_cols,
        level: config.level,
        replications: config.replications,
        excluded,
        exclusion_reasons,
        design: mask.stats(),
        theta: theta_acc.finish(),
        beta: beta_acc.finish(),
        entry_cells,
        entries: entry_acc.finish(),
        mse_m: sq_m.mean,
        mse_theta: sq_theta.mean,
        mse_beta: sq_beta.mean,
        theta_sup_error,
        dropped_rows,
        dropped_cols,
    })
}
