//! Variances of linear forms of the fitted matrix, Wald intervals and
//! z-tests.
//!
//! Four variance routes are available:
//!
//! * `true_param` / `plug_in`: `sum_i w_gi^2 / s_i+ + sum_j w~_gj^2 / s_+j`
//!   with the aggregates at the true or the fitted parameters.
//! * `refined`: the same leading terms written in cell-weight margins plus
//!   the cross term and the `-3 w_++^2 / s_++` correction.
//! * `exact_oracle`: the three-way decomposition `d_ij = b + f_i + m_j`,
//!   obtained from a dense `(N + J)` linear solve. Meant for small designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitReport;
use crate::model::{sigma_stats, LinearForm, ModelParams, ObservedBinaryMatrix, SigmaStats};
use crate::normal;

/// Largest `N + J` accepted by [`exact_variance`].
pub const EXACT_SIZE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    TrueParam,
    PlugIn,
    Refined,
    ExactOracle,
}

impl VarianceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceMethod::TrueParam => "true_param",
            VarianceMethod::PlugIn => "plug_in",
            VarianceMethod::Refined => "refined",
            VarianceMethod::ExactOracle => "exact_oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    /// `sum_i w_gi^2 / s_i+`.
    pub row_component: f64,
    /// `sum_j w~_gj^2 / s_+j`.
    pub col_component: f64,
    pub extra_terms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// `estimate / se`, the statistic for `H0: g(M) = 0`.
    pub z_stat: f64,
    pub p_value: f64,
    pub log10_p_value: f64,
    pub variance: VarianceEstimate,
}

pub fn evaluate_form(g: &LinearForm, params: &ModelParams) -> Result<f64> {
    g.evaluate(params)
}

fn check_form(g: &LinearForm, sigma: &SigmaStats) -> Result<()> {
    if g.n_rows() != sigma.row.len() || g.n_cols() != sigma.col.len() {
        return Err(Error::DimensionMismatch(format!(
            "form is {} x {}, variance aggregates are {} x {}",
            g.n_rows(),
            g.n_cols(),
            sigma.row.len(),
            sigma.col.len()
        )));
    }
    Ok(())
}

/// `sum_k w_k^2 / s_k` over the nonzero weights only.
fn weighted_inverse(weights: &[f64], aggregates: &[f64], what: &str) -> Result<f64> {
    let mut total = 0.0;
    for (k, (&w, &s)) in weights.iter().zip(aggregates).enumerate() {
        if w == 0.0 {
            continue;
        }
        if s.is_nan() || s <= 0.0 {
            return Err(Error::ZeroVariance(format!("{what} {k}")));
        }
        total += w * w / s;
    }
    Ok(total)
}

/// Leading-order variance. `method` only tags the result; pass aggregates
/// computed at the true parameters for `TrueParam` and at the fit for
/// `PlugIn`.
pub fn variance_main(g: &LinearForm, sigma: &SigmaStats, method: VarianceMethod) -> Result<VarianceEstimate> {
    if !matches!(method, VarianceMethod::TrueParam | VarianceMethod::PlugIn) {
        return Err(Error::InvalidArgument(format!(
            "variance_main handles true_param or plug_in, not {}",
            method.as_str()
        )));
    }
    check_form(g, sigma)?;
    let row_component = weighted_inverse(g.row_weights(), &sigma.row, "row")?;
    let col_component = weighted_inverse(g.col_weights(), &sigma.col, "column")?;
    Ok(VarianceEstimate {
        value: row_component + col_component,
        method,
        row_component,
        col_component,
        extra_terms: 0.0,
    })
}

/// Refined approximation from the cell-weight margins. Requires the form to
/// carry its cell weights.
pub fn variance_refined(g: &LinearForm, sigma: &SigmaStats, data: &ObservedBinaryMatrix) -> Result<VarianceEstimate> {
    check_form(g, sigma)?;
    let margins = g.margins()?;
    let row_component = weighted_inverse(&margins.row, &sigma.row, "row")?;
    let col_component = weighted_inverse(&margins.col, &sigma.col, "column")?;
    let mut cross = 0.0;
    for (i, j, _) in data.entries() {
        let (wr, wc) = (margins.row[i], margins.col[j]);
        if wr == 0.0 || wc == 0.0 {
            continue;
        }
        cross += wr * wc * sigma.cell(i, j) / (sigma.row[i] * sigma.col[j]);
    }
    let mut extra = 2.0 * cross;
    if margins.total != 0.0 {
        if sigma.total.is_nan() || sigma.total <= 0.0 {
            return Err(Error::ZeroVariance("total".into()));
        }
        extra -= 3.0 * margins.total * margins.total / sigma.total;
    }
    Ok(VarianceEstimate {
        value: row_component + col_component + extra,
        method: VarianceMethod::Refined,
        row_component,
        col_component,
        extra_terms: extra,
    })
}

/// Solution of the three-way decomposition for one form.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub b: f64,
    pub f: Vec<f64>,
    pub m: Vec<f64>,
}

/// Solves for `b`, `f_i`, `m_j` with
/// `s_i+ f_i + sum_j s_ij m_j = w_i+ - b s_i+`,
/// `s_+j m_j + sum_i s_ij f_i = w_+j - b s_+j`, `b = w_++ / s_++` and
/// `sum_i s_i+ f_i = 0`.
///
/// The row and column blocks sum to the same equation, so the first row
/// equation is replaced by the side condition on `f`; the condition on `m`
/// then holds automatically and is checked.
pub fn exact_decomposition(g: &LinearForm, sigma: &SigmaStats, data: &ObservedBinaryMatrix) -> Result<Decomposition> {
    check_form(g, sigma)?;
    let (n, j) = (data.n_rows(), data.n_cols());
    if n + j > EXACT_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size: n + j,
            limit: EXACT_SIZE_LIMIT,
        });
    }
    let margins = g.margins()?;
    if sigma.total.is_nan() || sigma.total <= 0.0 {
        return Err(Error::ZeroVariance("total".into()));
    }
    let b = margins.total / sigma.total;
    let dim = n + j;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 0..n {
        a[(i, i)] = sigma.row[i];
        rhs[i] = margins.row[i] - b * sigma.row[i];
    }
    for c in 0..j {
        a[(n + c, n + c)] = sigma.col[c];
        rhs[n + c] = margins.col[c] - b * sigma.col[c];
    }
    for (i, c, _) in data.entries() {
        let s = sigma.cell(i, c);
        a[(i, n + c)] = s;
        a[(n + c, i)] = s;
    }
    for k in 0..dim {
        a[(0, k)] = if k < n { sigma.row[k] } else { 0.0 };
    }
    rhs[0] = 0.0;

    let lu = a.lu();
    let x = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let f: Vec<f64> = x.iter().take(n).copied().collect();
    let m: Vec<f64> = x.iter().skip(n).copied().collect();
    let col_side: f64 = m.iter().zip(&sigma.col).map(|(m, s)| m * s).sum();
    let scale: f64 = m.iter().zip(&sigma.col).map(|(m, s)| (m * s).abs()).sum::<f64>() + 1.0;
    if col_side.abs() > 1e-8 * scale {
        return Err(Error::SingularSystem);
    }
    Ok(Decomposition { b, f, m })
}

/// Exact `sigma^2(g)` from the three-way decomposition. Forms without cell
/// weights are converted with [`LinearForm::with_entry_origin`].
pub fn exact_variance(g: &LinearForm, sigma: &SigmaStats, data: &ObservedBinaryMatrix) -> Result<VarianceEstimate> {
    check_form(g, sigma)?;
    if data.n_rows() + data.n_cols() > EXACT_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size: data.n_rows() + data.n_cols(),
            limit: EXACT_SIZE_LIMIT,
        });
    }
    let g = g.with_entry_origin();
    let d = exact_decomposition(&g, sigma, data)?;
    let mut value = d.b * d.b * sigma.total;
    value += d.f.iter().zip(&sigma.row).map(|(f, s)| s * f * f).sum::<f64>();
    value += d.m.iter().zip(&sigma.col).map(|(m, s)| s * m * m).sum::<f64>();
    let mut cross = 0.0;
    for (i, c, _) in data.entries() {
        cross += sigma.cell(i, c) * d.f[i] * d.m[c];
    }
    value += 2.0 * cross;
    let margins = g.margins()?;
    let row_component = weighted_inverse(&margins.row, &sigma.row, "row")?;
    let col_component = weighted_inverse(&margins.col, &sigma.col, "column")?;
    Ok(VarianceEstimate {
        value,
        method: VarianceMethod::ExactOracle,
        row_component,
        col_component,
        extra_terms: value - row_component - col_component,
    })
}

/// Variance of `g` by any route, given the aggregates to use.
pub fn variance(
    g: &LinearForm,
    sigma: &SigmaStats,
    data: &ObservedBinaryMatrix,
    method: VarianceMethod,
) -> Result<VarianceEstimate> {
    match method {
        VarianceMethod::TrueParam | VarianceMethod::PlugIn => variance_main(g, sigma, method),
        VarianceMethod::Refined => variance_refined(&g.with_entry_origin(), sigma, data),
        VarianceMethod::ExactOracle => exact_variance(g, sigma, data),
    }
}

/// Wald interval and z-test from a point estimate and its variance.
pub fn wald_from_variance(estimate: f64, variance: VarianceEstimate, level: f64) -> Result<InferenceResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    if !variance.value.is_finite() || variance.value <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "standard error must be positive, variance is {}",
            variance.value
        )));
    }
    let se = variance.value.sqrt();
    let half = normal::critical_value(level) * se;
    let z_stat = estimate / se;
    Ok(InferenceResult {
        estimate,
        se,
        ci_lower: estimate - half,
        ci_upper: estimate + half,
        level,
        z_stat,
        p_value: normal::two_sided_p(z_stat),
        log10_p_value: normal::log10_two_sided_p(z_stat),
        variance,
    })
}

/// Wald interval for `g` at the fitted parameters.
///
/// `truth` is required for [`VarianceMethod::TrueParam`] and ignored
/// otherwise; the other routes use aggregates at the fit.
pub fn wald_interval(
    g: &LinearForm,
    fit: &FitReport,
    data: &ObservedBinaryMatrix,
    level: f64,
    method: VarianceMethod,
    truth: Option<&ModelParams>,
) -> Result<InferenceResult> {
    let estimate = g.evaluate(&fit.params)?;
    let at = match method {
        VarianceMethod::TrueParam => {
            truth.ok_or_else(|| Error::InvalidArgument("true_param variance needs the true parameters".into()))?
        }
        _ => &fit.params,
    };
    let sigma = sigma_stats(at, data)?;
    let v = variance(g, &sigma, data, method)?;
    wald_from_variance(estimate, v, level)
}

/// Two-sided z-test of `theta_i = theta_k` with the plug-in variance
/// `1 / s_i+ + 1 / s_k+`.
pub fn test_difference(
    i: usize,
    k: usize,
    fit: &FitReport,
    data: &ObservedBinaryMatrix,
    level: f64,
) -> Result<InferenceResult> {
    let n = fit.params.n_rows();
    if i >= n || k >= n {
        return Err(Error::IndexOutOfRange(format!("rows {i}, {k} with N = {n}")));
    }
    if i == k {
        return Err(Error::InvalidArgument("cannot compare a row with itself".into()));
    }
    let g = LinearForm::row_difference(n, fit.params.n_cols(), i, k);
    wald_interval(&g, fit, data, level, VarianceMethod::PlugIn, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntryWeight;

    fn full_zero(n: usize, j: usize) -> (ObservedBinaryMatrix, SigmaStats) {
        let mut e = Vec::new();
        for i in 0..n {
            for c in 0..j {
                e.push((i, c, ((i + c) % 2) as u8));
            }
        }
        let data = ObservedBinaryMatrix::new(n, j, e).unwrap();
        let s = sigma_stats(&ModelParams::zeros(n, j), &data).unwrap();
        (data, s)
    }

    #[test]
    fn evaluate_examples() {
        let mut theta = vec![0.0; 4];
        theta[0] = 5.87;
        let p = ModelParams::new(theta, vec![0.0; 2]);
        assert_eq!(evaluate_form(&LinearForm::row_effect(4, 2, 0), &p).unwrap(), 5.87);
        let p = ModelParams::new(vec![0.3, 2.59, 4.25], vec![0.3, 1.0]);
        assert_eq!(evaluate_form(&LinearForm::entry(3, 2, 0, 0), &p).unwrap(), 0.0);
        let d = evaluate_form(&LinearForm::row_difference(3, 2, 1, 2), &p).unwrap();
        assert!((d + 1.66).abs() < 1e-12);
    }

    #[test]
    fn main_variance_at_zero() {
        let (n, j) = (6, 5);
        let (_, s) = full_zero(n, j);
        let v = variance_main(&LinearForm::row_effect(n, j, 0), &s, VarianceMethod::PlugIn).unwrap();
        assert!((v.value - 4.0 / j as f64).abs() < 1e-14);
        let v = variance_main(&LinearForm::entry(n, j, 0, 0), &s, VarianceMethod::TrueParam).unwrap();
        assert!((v.value - (4.0 / j as f64 + 4.0 / n as f64)).abs() < 1e-14);
        assert_eq!(v.method, VarianceMethod::TrueParam);
        assert!(v.value >= v.row_component && v.value >= v.col_component);
    }

    #[test]
    fn main_variance_skips_zero_weights() {
        let data = ObservedBinaryMatrix::new(2, 2, vec![(0, 0, 1), (0, 1, 0)]).unwrap();
        let s = sigma_stats(&ModelParams::zeros(2, 2), &data).unwrap();
        assert!(variance_main(&LinearForm::row_effect(2, 2, 0), &s, VarianceMethod::PlugIn).is_ok());
        assert!(matches!(
            variance_main(&LinearForm::row_effect(2, 2, 1), &s, VarianceMethod::PlugIn),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn refined_single_cell_at_zero() {
        let (n, j) = (7, 4);
        let (data, s) = full_zero(n, j);
        let v = variance_refined(&LinearForm::entry(n, j, 0, 0), &s, &data).unwrap();
        let (nf, jf) = (n as f64, j as f64);
        let expected = 4.0 / jf + 4.0 / nf - 4.0 / (nf * jf);
        assert!((v.value - expected).abs() < 1e-13, "{} vs {expected}", v.value);
        assert!(matches!(
            variance_refined(&LinearForm::row_effect(n, j, 0), &s, &data),
            Err(Error::MissingEntryWeights)
        ));
    }

    #[test]
    fn refined_pure_column_contrast() {
        let (n, j) = (5, 3);
        let (data, s) = full_zero(n, j);
        // Row sums zero and total zero: w_i1 = 1, w_i2 = -1 on one row pair.
        let g = LinearForm::from_entries(
            n,
            j,
            vec![
                EntryWeight {
                    row: 0,
                    col: 0,
                    weight: 1.0,
                },
                EntryWeight {
                    row: 0,
                    col: 1,
                    weight: -1.0,
                },
                EntryWeight {
                    row: 2,
                    col: 0,
                    weight: 0.5,
                },
                EntryWeight {
                    row: 2,
                    col: 1,
                    weight: -0.5,
                },
            ],
        )
        .unwrap();
        let v = variance_refined(&g, &s, &data).unwrap();
        let main = variance_main(&g, &s, VarianceMethod::PlugIn).unwrap();
        assert_eq!(v.value, main.col_component);
        assert_eq!(v.extra_terms, 0.0);
    }

    #[test]
    fn exact_total_sum() {
        let (n, j) = (4, 3);
        let (data, s) = full_zero(n, j);
        let mut e = Vec::new();
        for i in 0..n {
            for c in 0..j {
                e.push(EntryWeight {
                    row: i,
                    col: c,
                    weight: 1.0,
                });
            }
        }
        let g = LinearForm::from_entries(n, j, e).unwrap();
        let d = exact_decomposition(&g, &s, &data).unwrap();
        assert!(d.f.iter().chain(&d.m).all(|v| v.abs() < 1e-12));
        let v = exact_variance(&g, &s, &data).unwrap();
        assert!((v.value - 4.0 * (n * j) as f64).abs() < 1e-9);
    }

    #[test]
    fn exact_row_effect_matches_main_on_balanced_design() {
        let (n, j) = (4, 4);
        let (data, s) = full_zero(n, j);
        let g = LinearForm::row_effect(n, j, 0);
        let exact = exact_variance(&g, &s, &data).unwrap();
        let main = variance_main(&g, &s, VarianceMethod::PlugIn).unwrap();
        assert!((exact.value - main.value).abs() <= 1.0 / (n * j) as f64 * 4.0 + 1e-12);
        // Identified representation is exact on the balanced design.
        let ident = variance_main(&g.identified(), &s, VarianceMethod::PlugIn).unwrap();
        assert!((exact.value - ident.value).abs() < 1e-12);
        assert!((exact.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn exact_size_guard() {
        let data = ObservedBinaryMatrix::new(1500, 600, vec![(0, 0, 1)]).unwrap();
        let s = sigma_stats(&ModelParams::zeros(1500, 600), &data).unwrap();
        assert!(matches!(
            exact_variance(&LinearForm::entry(1500, 600, 0, 0), &s, &data),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn wald_arithmetic() {
        let v = VarianceEstimate {
            value: 0.127 * 0.127,
            method: VarianceMethod::PlugIn,
            row_component: 0.127 * 0.127,
            col_component: 0.0,
            extra_terms: 0.0,
        };
        let r = wald_from_variance(2.59, v, 0.95).unwrap();
        assert!((r.ci_lower - 2.341).abs() < 5e-4);
        assert!((r.ci_upper - 2.839).abs() < 5e-4);
        assert!(((r.ci_upper - r.ci_lower) - 2.0 * 1.959_963_984_540_054 * r.se).abs() < 1e-12);
        let zero = VarianceEstimate { value: 0.0, ..v };
        assert!(wald_from_variance(1.0, zero, 0.95).is_err());
        assert!(wald_from_variance(1.0, v, 1.0).is_err());
    }

    #[test]
    fn rubio_gregg_arithmetic() {
        let se: f64 = 0.169;
        let v = VarianceEstimate {
            value: se * se,
            method: VarianceMethod::PlugIn,
            row_component: se * se,
            col_component: 0.0,
            extra_terms: 0.0,
        };
        let r = wald_from_variance(-1.66, v, 0.95).unwrap();
        assert!((r.p_value / 9.0e-23 - 1.0).abs() < 0.01, "{}", r.p_value);
        assert!((r.log10_p_value + 22.05).abs() < 0.01);
    }
}
