//! Batch front end: the `minp` binary is a thin wrapper around [`run`].
//!
//! ```text
//! minp test --input data.csv --model linear|arch|rc --k INT [--alpha F] [--boot INT]
//!           [--seed INT] [--variant s|sc|st]... [--stepdown] [--no-intercept] --output report.json
//! minp simulate --config study.json --out table.csv [--format csv|md] [--workers INT]
//! minp project --cov "a,b;b,c" --u "u1,u2"
//! minp weights --cov FILE --draws INT --seed INT
//! ```
//!
//! Exit codes: 0 on success, 2 for data and configuration errors, 3 for
//! numerical failures. Errors are written to stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cone::{chibar_weights, project_orthant, ChiBarWeights, ConeProjection};
use crate::error::{Error, Result};
use crate::inference::{
    build_pool_unchecked, compute_stats, global_test, stepdown, Execution, GlobalTestResult,
    MinPVariant, ObservedPValues, StatVector, StepdownResult,
};
use crate::linalg::{Matrix, RngStream, SymMatrix};
use crate::mcstudy::{emit_se_table, emit_table, run_study_with_workers, McConfig, McResult, TableFormat};
use crate::models::{fit_restricted, pivotality_check, score_pack, Dataset, Family, PivotalityCheck};

/// Seed used by `minp test` when none is given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Linear,
    Arch,
    Rc,
}

impl ModelArg {
    pub fn family(&self, k: usize) -> Family {
        match self {
            ModelArg::Linear => Family::Linear,
            ModelArg::Arch => Family::Arch { lags: k },
            ModelArg::Rc => Family::RandomCoef,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    S,
    Sc,
    St,
}

impl From<VariantArg> for MinPVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::S => MinPVariant::S,
            VariantArg::Sc => MinPVariant::SC,
            VariantArg::St => MinPVariant::ST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

#[derive(Debug, Parser)]
#[command(name = "minp", version, about = "One-sided MinP score tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the global test (and optionally stepdown) on a CSV dataset.
    Test {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Tested column count (z1..zk) or ARCH lag count.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long = "boot", default_value_t = 999)]
        b: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long = "variant", value_enum)]
        variants: Vec<VariantArg>,
        #[arg(long)]
        stepdown: bool,
        #[arg(long)]
        no_intercept: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run Monte Carlo studies from a JSON config and write a rate table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Project a score vector onto the non-negative orthant.
    Project {
        /// Inline matrix "a,b;b,c" or a file path.
        #[arg(long)]
        cov: String,
        #[arg(long, allow_hyphen_values = true)]
        u: String,
    },
    /// Simulate chi-bar-squared weights for a covariance matrix.
    Weights {
        #[arg(long)]
        cov: String,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

/// Everything `minp test` was asked to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRequest {
    pub input: PathBuf,
    pub model: ModelArg,
    pub k: usize,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub variants: Vec<MinPVariant>,
    pub stepdown: bool,
    pub intercept: bool,
    pub output: PathBuf,
}

impl TestRequest {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha = {} is not in (0, 1)", self.alpha)));
        }
        if self.b == 0 {
            return Err(Error::InvalidInput("bootstrap count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepdownEntry {
    pub variant: MinPVariant,
    #[serde(flatten)]
    pub result: StepdownResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub bootstrap_redraws: usize,
    pub wall_time_secs: f64,
    pub pivotality: PivotalityCheck,
}

/// JSON report written by `minp test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub request: TestRequest,
    pub fit: FitSummary,
    pub statistics: StatVector,
    pub pvalues: ObservedPValues,
    pub global: Vec<GlobalTestResult>,
    pub stepdown: Vec<StepdownEntry>,
    pub diagnostics: ReportDiagnostics,
}

/// Reads a dataset by column name.
///
/// Linear and random-coefficient files need `y` and `z1..zk`; ARCH files
/// need `y` and take `k` as the lag count. Every other column becomes a free
/// covariate, in file order. With `intercept` set, a column of ones is
/// appended unless one is named `const`. Row numbers in errors count data
/// rows from 1.
pub fn parse_csv(path: &Path, model: ModelArg, k: usize, intercept: bool) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let n_z = if model == ModelArg::Arch { 0 } else { k };
    let z_names: Vec<String> = (1..=n_z).map(|i| format!("z{i}")).collect();
    let missing: Vec<String> = std::iter::once("y".to_string())
        .chain(z_names.iter().cloned())
        .filter(|n| !headers.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumn(missing));
    }
    let col = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let y_idx = col("y");
    let z_idx: Vec<usize> = z_names.iter().map(|n| col(n)).collect();
    let x_idx: Vec<usize> =
        (0..headers.len()).filter(|i| *i != y_idx && !z_idx.contains(i)).collect();

    let mut y = Vec::new();
    let mut z_cols = vec![Vec::new(); n_z];
    let mut x_cols = vec![Vec::new(); x_idx.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell { row: r + 1, column: headers[i].clone() })
        };
        y.push(cell(y_idx)?);
        for (c, &i) in z_idx.iter().enumerate() {
            z_cols[c].push(cell(i)?);
        }
        for (c, &i) in x_idx.iter().enumerate() {
            x_cols[c].push(cell(i)?);
        }
    }
    let t = y.len();
    if intercept && !headers.iter().any(|h| h == "const") {
        x_cols.push(vec![1.0; t]);
    }
    if x_cols.is_empty() {
        return Err(Error::InvalidInput("no free covariates: add X columns or keep the intercept".into()));
    }
    let needed = x_cols.len() + k + 1;
    if t <= needed {
        return Err(Error::TooFewRows { rows: t, needed });
    }
    let z = if n_z == 0 { Matrix::zeros(t, 0) } else { Matrix::from_columns(&z_cols)? };
    Dataset::new(y, z, Matrix::from_columns(&x_cols)?, model.family(k))
}

/// Runs `minp test` without touching the output file.
pub fn cmd_test(req: &TestRequest) -> Result<TestReport> {
    let started = Instant::now();
    req.validate()?;
    let data = parse_csv(&req.input, req.model, req.k, req.intercept)?;
    let fit = fit_restricted(&data)?;
    let pack = score_pack(&data, &fit)?;
    let statistics = compute_stats(&pack)?;
    // B below 99 is allowed here: the pool then cannot resolve small levels
    // and every critical value is 0.
    let pool = build_pool_unchecked(&data, &fit, req.b, RngStream::new(req.seed, 0), Execution::Parallel)?;
    let variants =
        if req.variants.is_empty() { MinPVariant::ALL.to_vec() } else { req.variants.clone() };
    let mut global = Vec::new();
    let mut steps = Vec::new();
    for &v in &variants {
        let g = global_test(&pool, &statistics, v, req.alpha)?;
        if req.stepdown {
            steps.push(StepdownEntry { variant: v, result: stepdown(&pool, &g, req.alpha)? });
        }
        global.push(g);
    }
    let pvalues = ObservedPValues::from_pool(&pool, &statistics)?;
    Ok(TestReport {
        request: TestRequest { variants, ..req.clone() },
        fit: FitSummary {
            coefficients: fit.psi_hat.clone(),
            sigma2: fit.sigma2_hat,
            observations: data.len(),
        },
        statistics,
        pvalues,
        global,
        stepdown: steps,
        diagnostics: ReportDiagnostics {
            bootstrap_redraws: pool.redraws(),
            wall_time_secs: started.elapsed().as_secs_f64(),
            pivotality: pivotality_check(&data, &fit),
        },
    })
}

/// Either one study or a list of them.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    One(McConfig),
    Many(Vec<McConfig>),
}

/// Reads and validates a study config file.
pub fn read_config(path: &Path) -> Result<Vec<McConfig>> {
    let text = fs::read_to_string(path)?;
    let parsed: ConfigFile = serde_json::from_str(&text).map_err(|e| {
        // Untagged enums hide the field-level message; re-parse for it.
        let detail = serde_json::from_str::<McConfig>(&text).err().unwrap_or(e);
        Error::ConfigInvalid { field: "config".into(), message: detail.to_string() }
    })?;
    let configs = match parsed {
        ConfigFile::One(c) => vec![c],
        ConfigFile::Many(v) => v,
    };
    if configs.is_empty() {
        return Err(Error::ConfigInvalid { field: "config".into(), message: "no studies".into() });
    }
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

/// Runs every study in the config file and writes the rate table.
pub fn cmd_simulate(
    config: &Path,
    out: &Path,
    format: TableFormat,
    workers: Option<usize>,
) -> Result<Vec<McResult>> {
    let configs = read_config(config)?;
    let results = configs
        .iter()
        .map(|c| run_study_with_workers(c, workers))
        .collect::<Result<Vec<_>>>()?;
    fs::write(out, emit_table(&results, format))?;
    Ok(results)
}

/// Parses `"a,b;c,d"` (rows separated by `;` or newlines) into rows of numbers.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split([';', '\n'])
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(parse_vector)
        .collect()
}

/// Parses `"u1,u2,.."`.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("not a number: {:?}", c.trim())))
        })
        .collect()
}

/// Covariance from an inline spec or, when `arg` names a file, from its contents.
pub fn read_covariance(arg: &str) -> Result<SymMatrix> {
    let text = if Path::new(arg).is_file() { fs::read_to_string(arg)? } else { arg.to_string() };
    SymMatrix::from_rows(&parse_matrix(&text)?)
}

pub fn cmd_project(cov: &str, u: &str) -> Result<ConeProjection> {
    project_orthant(&parse_vector(u)?, &read_covariance(cov)?)
}

pub fn cmd_weights(cov: &str, draws: usize, seed: u64) -> Result<ChiBarWeights> {
    chibar_weights(&read_covariance(cov)?, draws, RngStream::new(seed, 0))
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    kind: &'a str,
    message: String,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Test { input, model, k, alpha, b, seed, variants, stepdown, no_intercept, output } => {
            let req = TestRequest {
                input,
                model,
                k,
                alpha,
                b,
                seed,
                variants: variants.into_iter().map(Into::into).collect(),
                stepdown,
                intercept: !no_intercept,
                output,
            };
            let report = cmd_test(&req)?;
            fs::write(&req.output, serde_json::to_string_pretty(&report)?)?;
        }
        Command::Simulate { config, out, format, workers } => {
            let format = match format {
                FormatArg::Csv => TableFormat::Csv,
                FormatArg::Md => TableFormat::Markdown,
            };
            let results = cmd_simulate(&config, &out, format, workers)?;
            println!("Monte Carlo standard errors (percentage points):");
            print!("{}", emit_se_table(&results, format));
        }
        Command::Project { cov, u } => {
            println!("{}", serde_json::to_string_pretty(&cmd_project(&cov, &u)?)?);
        }
        Command::Weights { cov, draws, seed } => {
            println!("{}", serde_json::to_string_pretty(&cmd_weights(&cov, draws, seed)?)?);
        }
    }
    Ok(())
}

/// Exit code for an error: 2 for data errors, 3 for numerical ones.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        2
    } else {
        3
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = ErrorReport {
                error: e.code(),
                kind: if e.is_data_error() { "data" } else { "numerical" },
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("plain strings"));
            exit_code(&e)
        }
    }
}
