use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use bitmat::error::{Error, Result};
use bitmat::estimator::{fit, FitConfig, StepRule};
use bitmat::inference::{variance, variance_main, wald_from_variance, VarianceMethod};
use bitmat::io::{self as bio, FitFile, FormSpec, MatrixMeta, StudySummary};
use bitmat::model::{sigma_stats, ModelParams};
use bitmat::rollcall::{preprocess_rollcall, read_rollcall, Party, PrepOptions, DEFAULT_MIN_SERVICE_DAYS};
use bitmat::simulation::{
    draw_parameters, make_block_design, make_linking_design, realize_design, run_study, simulate_matrix, MissingDesign,
    SimStudyConfig,
};

#[derive(Parser)]
#[command(
    name = "bitmat",
    version,
    about = "Logistic row/column model for partially observed binary matrices"
)]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to an `i,j,y` matrix and write a fit file.
    Fit(FitArgs),
    /// Wald intervals and z-tests for linear forms of a fit.
    Infer(InferArgs),
    /// Rank rows by their fitted effect.
    Rank(RankArgs),
    /// Simulate one data set from a study configuration.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo coverage study.
    Coverage(CoverageArgs),
    /// Turn roll-call records into a matrix file.
    RollcallPrep(RollcallArgs),
    /// Write a study configuration for a standard missingness design.
    MakeDesign(DesignArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learning rate; see `--step`.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = StepArg::Curvature)]
    step: StepArg,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_sweeps: usize,
    #[arg(long)]
    allow_disconnected: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Fixed,
    Curvature,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Plugin,
    True,
    Refined,
    Exact,
}

impl From<MethodArg> for VarianceMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Plugin => VarianceMethod::PlugIn,
            MethodArg::True => VarianceMethod::TrueParam,
            MethodArg::Refined => VarianceMethod::Refined,
            MethodArg::Exact => VarianceMethod::ExactOracle,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    /// Fit file written by `fit`.
    #[arg(long)]
    input: PathBuf,
    /// `entry I J`, `row I`, `col J`, `rowdiff I K` or `weights FILE`;
    /// rows and columns by label or index. Repeatable.
    #[arg(long = "form", required = true)]
    forms: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Plugin)]
    method: MethodArg,
    /// Matrix file; needed by `refined`, `exact` and `true`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON `{"theta": [...], "beta": [...]}`; needed by `true`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// CSV output (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Lowest effects first.
    #[arg(long)]
    ascending: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study configuration (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Matrix CSV; the sidecar and `<stem>.truth.json` go next to it.
    #[arg(long)]
    output: PathBuf,
    /// Data seed (default: the configuration's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CoverageArgs {
    /// Study configuration (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args)]
struct RollcallArgs {
    #[arg(long)]
    input: PathBuf,
    /// Matrix CSV; the sidecar and `<stem>.audit.json` go next to it.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SERVICE_DAYS)]
    min_service_days: i64,
    #[arg(long, default_value = "Rep")]
    party_a: String,
    #[arg(long, default_value = "Dem")]
    party_b: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignKind {
    Full,
    Block,
    Bernoulli,
    /// Two forms of `--rows x --cols` sharing `--shared` columns.
    Linking,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum)]
    kind: DesignKind,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    shared: usize,
    /// Observation probability for `bernoulli`.
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BITMAT_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::RollcallPrep(a) => cmd_rollcall(a),
        Command::MakeDesign(a) => cmd_design(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(io::BufReader::new(File::open(path)?)).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: format!("{}: {e}", path.display()),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (data, meta) = bio::load_matrix(&a.input)?;
    let config = FitConfig {
        learning_rate: a.gamma,
        step_rule: match a.step {
            StepArg::Fixed => StepRule::Fixed,
            StepArg::Curvature => StepRule::Curvature,
        },
        tol: a.tol,
        max_sweeps: a.max_sweeps,
        seed: a.seed,
        allow_disconnected: a.allow_disconnected,
        ..FitConfig::default()
    };
    let report = fit(&data, &config)?;
    if !report.converged {
        warn!(
            "fit not certified: {:?} after {} sweeps, max |gradient| {:.3e}",
            report.stop_reason, report.sweeps, report.grad_max_norm
        );
    }
    info!(
        "fit: {} sweeps, log-likelihood {:.6}",
        report.sweeps, report.final_loglik
    );
    FitFile::new(&report, &data, &meta, &config)?.save(&a.output)
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let fit = FitFile::load(&a.input)?;
    let method = VarianceMethod::from(a.method);
    let data = match &a.data {
        Some(p) => {
            let (d, _) = bio::load_matrix(p)?;
            if d.n_rows() != fit.n_rows || d.n_cols() != fit.n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "data is {} x {}, fit is {} x {}",
                    d.n_rows(),
                    d.n_cols(),
                    fit.n_rows,
                    fit.n_cols
                )));
            }
            Some(d)
        }
        None => None,
    };
    let sigma = match method {
        VarianceMethod::PlugIn => fit.sigma()?,
        VarianceMethod::TrueParam => {
            let path = a
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--method true needs --truth".into()))?;
            let truth: ModelParams = read_json(path)?;
            let d = data
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--method true needs --data".into()))?;
            sigma_stats(&truth, d)?
        }
        VarianceMethod::Refined | VarianceMethod::ExactOracle => {
            let d = data
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("--method {} needs --data", method.as_str())))?;
            sigma_stats(&fit.params(), d)?
        }
    };
    let params = fit.params();
    let mut rows = Vec::new();
    for text in &a.forms {
        let (name, g) = FormSpec::parse(text)?.resolve(&fit)?;
        let estimate = g.evaluate(&params)?;
        let v = match &data {
            Some(d) => variance(&g, &sigma, d, method)?,
            None => variance_main(&g, &sigma, method)?,
        };
        rows.push((name, wald_from_variance(estimate, v, a.level)?));
    }
    bio::write_inference_csv(output_writer(a.output.as_deref())?, &rows)
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let fit = FitFile::load(&a.input)?;
    let top = if a.top > fit.n_rows {
        warn!("--top {} exceeds the {} rows; showing all", a.top, fit.n_rows);
        fit.n_rows
    } else {
        a.top
    };
    let rows = bio::rank_rows(&fit, top, a.ascending);
    bio::write_rank_csv(output_writer(a.output.as_deref())?, &rows)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let config: SimStudyConfig = read_json(&a.input)?;
    config.validate()?;
    let truth = draw_parameters(&config)?;
    let mask = realize_design(&config)?;
    let data = simulate_matrix(&truth, &mask, a.seed.unwrap_or(config.seed))?;
    bio::save_matrix(&a.output, &data, &MatrixMeta::unlabeled(data.n_rows(), data.n_cols()))?;
    bio::write_canonical_json(&with_suffix(&a.output, "truth.json"), &truth)
}

fn cmd_coverage(a: CoverageArgs) -> Result<()> {
    let mut config: SimStudyConfig = read_json(&a.input)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(l) = a.level {
        config.level = l;
    }
    let report = run_study(&config)?;
    std::fs::create_dir_all(&a.output)?;
    let out = |name: &str| a.output.join(name);
    bio::write_variance_csv(File::create(out("variance.csv"))?, &report)?;
    bio::write_histogram_csv(File::create(out("histogram.csv"))?, &report)?;
    bio::write_coverage_csv(File::create(out("coverage.csv"))?, &report)?;
    bio::write_canonical_json(&out("summary.json"), &StudySummary::from(&report))?;
    if report.excluded > 0 {
        warn!("{} of {} replications excluded", report.excluded, report.replications);
    }
    Ok(())
}

#[derive(Serialize)]
struct AuditFile<'a> {
    counts: &'a bitmat::rollcall::PrepCounts,
    audit: &'a [bitmat::rollcall::AuditEntry],
    parties: &'a [Party],
}

fn cmd_rollcall(a: RollcallArgs) -> Result<()> {
    let party = |s: &str| s.parse::<Party>().map_err(Error::InvalidArgument);
    let opts = PrepOptions {
        min_service_days: a.min_service_days,
        party_a: party(&a.party_a)?,
        party_b: party(&a.party_b)?,
    };
    let records = read_rollcall(File::open(&a.input)?)?;
    let m = preprocess_rollcall(&records, &opts)?;
    info!(
        "kept {} senators and {} bills, {:.1}% missing",
        m.counts.senators_out,
        m.counts.bills_out,
        100.0 * m.counts.missing_fraction
    );
    bio::save_matrix(&a.output, &m.data, &m.meta)?;
    bio::write_canonical_json(
        &with_suffix(&a.output, "audit.json"),
        &AuditFile {
            counts: &m.counts,
            audit: &m.audit,
            parties: &m.parties,
        },
    )
}

fn cmd_design(a: DesignArgs) -> Result<()> {
    let (n, j, design) = match a.kind {
        DesignKind::Full => (a.rows, a.cols, MissingDesign::Full),
        DesignKind::Block => (a.rows, a.cols, make_block_design(a.rows, a.cols)?),
        DesignKind::Bernoulli => (a.rows, a.cols, MissingDesign::Bernoulli { rate: a.rate }),
        DesignKind::Linking => make_linking_design(a.rows, a.cols, a.shared)?,
    };
    let config = SimStudyConfig::new(n, j, design, a.replications, a.seed);
    let mask = realize_design(&config)?;
    let stats = mask.stats();
    let report = bitmat::connectivity::check_connectivity(&mask.pattern());
    println!(
        "{}",
        bio::to_canonical_json(&serde_json::json!({
            "n_rows": n,
            "n_cols": j,
            "design": stats,
            "connected": report.connected,
            "components": report.components.len(),
        }))?
        .trim_end()
    );
    bio::write_canonical_json(&a.output, &config)
}
