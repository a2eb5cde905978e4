//! File formats: matrix CSV with an optional JSON sidecar, canonical JSON
//! fit files, weights files and the CSV reports written by the CLI.
//!
//! CSV files are comma separated with `\n` line endings. Floats are written
//! with 17 significant digits so that every value reads back bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::estimator::{FitConfig, FitReport, StopReason};
use crate::inference::InferenceResult;
use crate::model::{sigma_stats, DesignStats, EntryWeight, LinearForm, ModelParams, ObservedBinaryMatrix, SigmaStats};
use crate::simulation::{CoverageReport, TargetSummary};

/// Float text with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Dimensions and optional labels stored next to a matrix CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    #[serde(rename = "N")]
    pub n_rows: usize,
    #[serde(rename = "J")]
    pub n_cols: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub col_labels: Vec<String>,
}

impl MatrixMeta {
    pub fn unlabeled(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_labels(&self.row_labels, self.n_rows, "row")?;
        check_labels(&self.col_labels, self.n_cols, "column")
    }

    /// Row labels, falling back to the index.
    pub fn row_labels(&self) -> Vec<String> {
        labels_or_index(&self.row_labels, self.n_rows)
    }

    pub fn col_labels(&self) -> Vec<String> {
        labels_or_index(&self.col_labels, self.n_cols)
    }
}

fn labels_or_index(labels: &[String], n: usize) -> Vec<String> {
    if labels.is_empty() {
        (0..n).map(|i| i.to_string()).collect()
    } else {
        labels.to_vec()
    }
}

fn check_labels(labels: &[String], n: usize, what: &str) -> Result<()> {
    if labels.is_empty() {
        return Ok(());
    }
    if labels.len() != n {
        return Err(Error::Format(format!("{} {what} labels for {n} {what}s", labels.len())));
    }
    let mut seen = HashMap::new();
    for (k, l) in labels.iter().enumerate() {
        if let Some(first) = seen.insert(l.as_str(), k) {
            return Err(Error::Format(format!("{what} label {l:?} used at {first} and {k}")));
        }
    }
    Ok(())
}

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => parse_err(line, format!("{kind:?}")),
    }
}

fn expect_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            1,
            format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, name: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec
        .get(k)
        .ok_or_else(|| parse_err(line, format!("missing field {name}")))?
        .trim();
    raw.parse()
        .map_err(|_| parse_err(line, format!("cannot read {name} from {raw:?}")))
}

/// Reads `i,j,y` triples. Dimensions come from `meta` when given, else from
/// the largest indices seen.
pub fn read_matrix_csv<R: Read>(reader: R, meta: Option<&MatrixMeta>) -> Result<ObservedBinaryMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() {
        return Err(parse_err(1, "empty file"));
    }
    expect_header(&headers, &["i", "j", "y"])?;
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let i: usize = field(&rec, 0, "i")?;
        let j: usize = field(&rec, 1, "j")?;
        let y: u8 = field(&rec, 2, "y")?;
        if y > 1 {
            return Err(parse_err(line, format!("y must be 0 or 1, got {y}")));
        }
        entries.push((line, i, j, y));
    }
    if entries.is_empty() {
        return Err(parse_err(1, "no observations"));
    }
    let (n, j) = match meta {
        Some(m) => (m.n_rows, m.n_cols),
        None => (
            entries.iter().map(|e| e.1).max().unwrap_or(0) + 1,
            entries.iter().map(|e| e.2).max().unwrap_or(0) + 1,
        ),
    };
    if let Some(&(line, i, c, _)) = entries.iter().find(|e| e.1 >= n || e.2 >= j) {
        return Err(parse_err(line, format!("cell ({i}, {c}) outside {n} x {j}")));
    }
    let mut seen = std::collections::HashSet::with_capacity(entries.len());
    for &(line, i, c, _) in &entries {
        if !seen.insert((i, c)) {
            return Err(parse_err(line, format!("cell ({i}, {c}) repeated")));
        }
    }
    ObservedBinaryMatrix::new(n, j, entries.into_iter().map(|(_, i, c, y)| (i, c, y)).collect())
}

pub fn write_matrix_csv<W: Write>(writer: W, data: &ObservedBinaryMatrix) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "i,j,y")?;
    for (i, j, y) in data.entries() {
        writeln!(w, "{i},{j},{y}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a matrix and its sidecar (if present next to it).
pub fn load_matrix(path: &Path) -> Result<(ObservedBinaryMatrix, MatrixMeta)> {
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let meta: MatrixMeta = serde_json::from_reader(File::open(&side)?)
            .map_err(|e| parse_err(e.line() as u64, format!("{}: {e}", side.display())))?;
        meta.validate()?;
        Some(meta)
    } else {
        None
    };
    let data = read_matrix_csv(File::open(path)?, meta.as_ref())?;
    let meta = meta.unwrap_or_else(|| MatrixMeta::unlabeled(data.n_rows(), data.n_cols()));
    Ok((data, meta))
}

/// Writes the matrix CSV and its sidecar.
pub fn save_matrix(path: &Path, data: &ObservedBinaryMatrix, meta: &MatrixMeta) -> Result<()> {
    meta.validate()?;
    write_matrix_csv(File::create(path)?, data)?;
    write_canonical_json(&sidecar_path(path), meta)
}

/// Pretty printer that writes every float with 17 significant digits.
struct CanonicalFormatter(PrettyFormatter<'static>);

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// JSON with sorted keys and fixed float formatting, ending in a newline.
/// Non-finite floats become `null`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // Going through `Value` sorts the keys.
    let value = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn write_canonical_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub stop_reason: StopReason,
    pub sweeps: usize,
    pub final_loglik: f64,
    pub grad_max_norm: f64,
    pub degenerate_rows: Vec<usize>,
    pub degenerate_cols: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Ratios that should be small for the large-sample approximations to
/// apply: `N_* (log N)^2 / J_*^2` and `log N / J_*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_log_sq_over_j_sq: f64,
    pub log_n_over_j: f64,
}

impl Diagnostics {
    pub fn from_stats(n_rows: usize, stats: &DesignStats) -> Self {
        let log_n = (n_rows as f64).ln();
        let j = stats.j_star_min as f64;
        Self {
            n_log_sq_over_j_sq: stats.n_star_min as f64 * log_n * log_n / (j * j),
            log_n_over_j: log_n / j,
        }
    }
}

/// Everything `infer` and `rank` need from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Plug-in `sigma-hat_{i+}^2`.
    pub sigma_row: Vec<f64>,
    /// Plug-in `sigma-hat_{+j}^2`.
    pub sigma_col: Vec<f64>,
    pub sigma_total: f64,
    pub convergence: Convergence,
    pub design: DesignStats,
    pub diagnostics: Diagnostics,
    pub config: FitConfig,
}

impl FitFile {
    pub fn new(report: &FitReport, data: &ObservedBinaryMatrix, meta: &MatrixMeta, config: &FitConfig) -> Result<Self> {
        let sigma = sigma_stats(&report.params, data)?;
        let design = data.design_stats();
        Ok(Self {
            n_rows: data.n_rows(),
            n_cols: data.n_cols(),
            row_labels: meta.row_labels(),
            col_labels: meta.col_labels(),
            theta: report.params.theta.clone(),
            beta: report.params.beta.clone(),
            sigma_row: sigma.row,
            sigma_col: sigma.col,
            sigma_total: sigma.total,
            convergence: Convergence {
                converged: report.converged,
                stop_reason: report.stop_reason,
                sweeps: report.sweeps,
                final_loglik: report.final_loglik,
                grad_max_norm: report.grad_max_norm,
                degenerate_rows: report.degenerate_rows.clone(),
                degenerate_cols: report.degenerate_cols.clone(),
                warnings: report.warnings.clone(),
            },
            design,
            diagnostics: Diagnostics::from_stats(data.n_rows(), &design),
            config: config.clone(),
        })
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.theta.clone(), self.beta.clone())
    }

    pub fn sigma(&self) -> Result<SigmaStats> {
        SigmaStats::from_aggregates(self.params(), self.sigma_row.clone(), self.sigma_col.clone())
    }

    /// A [`FitReport`] carrying the stored parameters and convergence data.
    pub fn report(&self) -> FitReport {
        FitReport {
            params: self.params(),
            final_loglik: self.convergence.final_loglik,
            sweeps: self.convergence.sweeps,
            converged: self.convergence.converged,
            stop_reason: self.convergence.stop_reason,
            grad_max_norm: self.convergence.grad_max_norm,
            loglik_trace: Vec::new(),
            degenerate_rows: self.convergence.degenerate_rows.clone(),
            degenerate_cols: self.convergence.degenerate_cols.clone(),
            warnings: self.convergence.warnings.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_ok = [self.theta.len(), self.sigma_row.len(), self.row_labels.len()]
            .iter()
            .all(|&l| l == self.n_rows);
        let j_ok = [self.beta.len(), self.sigma_col.len(), self.col_labels.len()]
            .iter()
            .all(|&l| l == self.n_cols);
        if !n_ok || !j_ok {
            return Err(Error::Format("fit file vectors do not match N and J".into()));
        }
        check_labels(&self.row_labels, self.n_rows, "row")?;
        check_labels(&self.col_labels, self.n_cols, "column")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fit: FitFile = serde_json::from_reader(io::BufReader::new(File::open(path)?))
            .map_err(|e| parse_err(e.line() as u64, format!("{}: {e}", path.display())))?;
        fit.validate()?;
        Ok(fit)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_canonical_json(path, self)
    }

    pub fn row_index(&self, token: &str) -> Result<usize> {
        resolve(&self.row_labels, token, "row")
    }

    pub fn col_index(&self, token: &str) -> Result<usize> {
        resolve(&self.col_labels, token, "column")
    }
}

/// Label first, then a plain index.
fn resolve(labels: &[String], token: &str, what: &str) -> Result<usize> {
    if let Some(k) = labels.iter().position(|l| l == token) {
        return Ok(k);
    }
    match token.parse::<usize>() {
        Ok(k) if k < labels.len() => Ok(k),
        Ok(k) => Err(Error::IndexOutOfRange(format!(
            "{what} {k} with {} {what}s",
            labels.len()
        ))),
        Err(_) => Err(Error::InvalidArgument(format!("unknown {what} label {token:?}"))),
    }
}

/// Reads a weights file. Two layouts are accepted: `kind,index,weight` with
/// `kind` one of `row`/`col` gives `w_g` and `w~_g` directly, and `i,j,w`
/// gives cell weights.
pub fn read_weights<R: Read>(reader: R, n_rows: usize, n_cols: usize) -> Result<LinearForm> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    match names.as_slice() {
        ["kind", "index", "weight"] => {
            let mut rw = vec![0.0; n_rows];
            let mut cw = vec![0.0; n_cols];
            for rec in rdr.records() {
                let rec = rec.map_err(csv_err)?;
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                let kind = rec.get(0).unwrap_or("").trim();
                let k: usize = field(&rec, 1, "index")?;
                let w: f64 = field(&rec, 2, "weight")?;
                let (target, len) = match kind {
                    "row" => (&mut rw, n_rows),
                    "col" => (&mut cw, n_cols),
                    other => return Err(parse_err(line, format!("kind must be row or col, got {other:?}"))),
                };
                if k >= len {
                    return Err(parse_err(line, format!("{kind} index {k} out of range")));
                }
                if !w.is_finite() {
                    return Err(parse_err(line, "weight is not finite"));
                }
                target[k] += w;
            }
            Ok(LinearForm::new(rw, cw))
        }
        ["i", "j", "w"] => {
            let mut entries = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(csv_err)?;
                entries.push(EntryWeight {
                    row: field(&rec, 0, "i")?,
                    col: field(&rec, 1, "j")?,
                    weight: field(&rec, 2, "w")?,
                });
            }
            LinearForm::from_entries(n_rows, n_cols, entries)
        }
        _ => Err(parse_err(
            1,
            format!("unrecognised weights header {:?}", names.join(",")),
        )),
    }
}

/// A linear form named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormSpec {
    Entry(String, String),
    Row(String),
    Col(String),
    RowDiff(String, String),
    Weights(PathBuf),
}

impl FormSpec {
    /// Parses `entry i j`, `row i`, `col j`, `rowdiff i k` or
    /// `weights FILE`. Rows and columns may be labels or indices; labels
    /// cannot contain whitespace here.
    pub fn parse(text: &str) -> Result<Self> {
        let t: Vec<&str> = text.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("cannot read form {text:?}"));
        Ok(match t.as_slice() {
            ["entry", i, j] => FormSpec::Entry(i.to_string(), j.to_string()),
            ["row", i] => FormSpec::Row(i.to_string()),
            ["col", j] => FormSpec::Col(j.to_string()),
            ["rowdiff", i, k] => FormSpec::RowDiff(i.to_string(), k.to_string()),
            ["weights", path] => FormSpec::Weights(PathBuf::from(path)),
            _ => return Err(bad()),
        })
    }

    /// The form and a display name built from labels.
    pub fn resolve(&self, fit: &FitFile) -> Result<(String, LinearForm)> {
        let (n, j) = (fit.n_rows, fit.n_cols);
        Ok(match self {
            FormSpec::Entry(a, b) => {
                let (i, c) = (fit.row_index(a)?, fit.col_index(b)?);
                (
                    format!("entry {} {}", fit.row_labels[i], fit.col_labels[c]),
                    LinearForm::entry(n, j, i, c),
                )
            }
            FormSpec::Row(a) => {
                let i = fit.row_index(a)?;
                (format!("row {}", fit.row_labels[i]), LinearForm::row_effect(n, j, i))
            }
            FormSpec::Col(b) => {
                let c = fit.col_index(b)?;
                (format!("col {}", fit.col_labels[c]), LinearForm::col_effect(n, j, c))
            }
            FormSpec::RowDiff(a, b) => {
                let (i, k) = (fit.row_index(a)?, fit.row_index(b)?);
                if i == k {
                    return Err(Error::InvalidArgument(format!(
                        "rowdiff needs two different rows, got {a} twice"
                    )));
                }
                (
                    format!("rowdiff {} {}", fit.row_labels[i], fit.row_labels[k]),
                    LinearForm::row_difference(n, j, i, k),
                )
            }
            FormSpec::Weights(path) => (
                format!("weights {}", path.display()),
                read_weights(File::open(path)?, n, j)?,
            ),
        })
    }
}

pub fn write_inference_csv<W: Write>(writer: W, rows: &[(String, InferenceResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "form", "estimate", "se", "ci_lower", "ci_upper", "z", "p", "log10_p", "method",
    ])
    .map_err(csv_err)?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            fmt_f64(r.estimate),
            fmt_f64(r.se),
            fmt_f64(r.ci_lower),
            fmt_f64(r.ci_upper),
            fmt_f64(r.z_stat),
            fmt_f64(r.p_value),
            fmt_f64(r.log10_p_value),
            r.variance.method.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub label: String,
    pub estimate: f64,
    pub se: f64,
}

/// Rows sorted by `theta_hat` (descending unless `ascending`), ties by
/// label. `se` is the plug-in `1 / sqrt(sigma-hat_{i+}^2)`.
pub fn rank_rows(fit: &FitFile, top: usize, ascending: bool) -> Vec<RankRow> {
    let mut order: Vec<usize> = (0..fit.n_rows).collect();
    order.sort_by(|&a, &b| {
        let by_value = if ascending {
            fit.theta[a].total_cmp(&fit.theta[b])
        } else {
            fit.theta[b].total_cmp(&fit.theta[a])
        };
        by_value.then_with(|| fit.row_labels[a].cmp(&fit.row_labels[b]))
    });
    order
        .into_iter()
        .take(top)
        .enumerate()
        .map(|(r, i)| RankRow {
            rank: r + 1,
            label: fit.row_labels[i].clone(),
            estimate: fit.theta[i],
            se: 1.0 / fit.sigma_row[i].sqrt(),
        })
        .collect()
}

pub fn write_rank_csv<W: Write>(writer: W, rows: &[RankRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "label", "estimate", "se"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.rank.to_string(), r.label.clone(), fmt_f64(r.estimate), fmt_f64(r.se)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn families(report: &CoverageReport) -> [(&'static str, &TargetSummary, Vec<String>); 3] {
    [
        (
            "theta",
            &report.theta,
            (0..report.n_rows).map(|i| i.to_string()).collect(),
        ),
        (
            "beta",
            &report.beta,
            (0..report.n_cols).map(|j| j.to_string()).collect(),
        ),
        (
            "m",
            &report.entries,
            report.entry_cells.iter().map(|(i, j)| format!("{i}:{j}")).collect(),
        ),
    ]
}

/// Per-target `s^2`, `sigma-bar^2`, `sigma-tilde^2` and coverage.
pub fn write_variance_csv<W: Write>(writer: W, report: &CoverageReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "family",
        "target",
        "truth",
        "estimated",
        "mean_estimate",
        "s2",
        "sigma_bar2",
        "sigma_tilde2",
        "coverage",
    ])
    .map_err(csv_err)?;
    for (name, s, ids) in families(report) {
        for (k, id) in ids.iter().enumerate() {
            w.write_record([
                name.to_string(),
                id.clone(),
                fmt_f64(s.truth[k]),
                s.estimated[k].to_string(),
                fmt_f64(s.mean_estimate[k]),
                fmt_f64(s.sample_variance[k]),
                fmt_f64(s.mean_plugin_variance[k]),
                fmt_f64(s.true_variance[k]),
                fmt_f64(s.coverage[k]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Histogram bins of the standardized errors per family.
pub fn write_histogram_csv<W: Write>(writer: W, report: &CoverageReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["family", "lower", "upper", "count", "density"])
        .map_err(csv_err)?;
    for (name, s, _) in families(report) {
        for ((lo, hi, d), c) in s.histogram.densities().into_iter().zip(&s.histogram.counts) {
            w.write_record([name.to_string(), fmt_f64(lo), fmt_f64(hi), c.to_string(), fmt_f64(d)])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Quartiles of the per-target coverage, one row per family.
pub fn write_coverage_csv<W: Write>(writer: W, report: &CoverageReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["family", "targets", "mean", "min", "q1", "median", "q3", "max"])
        .map_err(csv_err)?;
    for (name, s, _) in families(report) {
        let mut c: Vec<f64> = s.coverage.iter().copied().filter(|c| !c.is_nan()).collect();
        c.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&c, p);
        w.write_record([
            name.to_string(),
            c.len().to_string(),
            fmt_f64(s.mean_coverage()),
            fmt_f64(q(0.0)),
            fmt_f64(q(0.25)),
            fmt_f64(q(0.5)),
            fmt_f64(q(0.75)),
            fmt_f64(q(1.0)),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear interpolation between order statistics.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub n_rows: usize,
    pub n_cols: usize,
    pub level: f64,
    pub replications: usize,
    pub excluded: usize,
    pub design: DesignStats,
    pub mse_m: f64,
    pub mse_theta: f64,
    pub mse_beta: f64,
    pub mean_coverage_theta: f64,
    pub mean_coverage_beta: f64,
    pub mean_coverage_m: f64,
    pub coverage_theta: Vec<f64>,
    pub coverage_beta: Vec<f64>,
    pub coverage_m: Vec<f64>,
    pub dropped_rows: usize,
    pub dropped_cols: usize,
}

impl From<&CoverageReport> for StudySummary {
    fn from(r: &CoverageReport) -> Self {
        Self {
            n_rows: r.n_rows,
            n_cols: r.n_cols,
            level: r.level,
            replications: r.replications,
            excluded: r.excluded,
            design: r.design,
            mse_m: r.mse_m,
            mse_theta: r.mse_theta,
            mse_beta: r.mse_beta,
            mean_coverage_theta: r.theta.mean_coverage(),
            mean_coverage_beta: r.beta.mean_coverage(),
            mean_coverage_m: r.entries.mean_coverage(),
            coverage_theta: r.theta.coverage.clone(),
            coverage_beta: r.beta.coverage.clone(),
            coverage_m: r.entries.coverage.clone(),
            dropped_rows: r.dropped_rows,
            dropped_cols: r.dropped_cols,
        }
    }
}
