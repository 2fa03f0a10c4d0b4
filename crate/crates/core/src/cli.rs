//! Command-line driver. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric,
//! 5 existence condition violated.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::crm::{CrmParams, Variant};
use crate::error::{Error, Result};
use crate::fit::{fit_dependence, Benchmark, BenchmarkSpec, FittedModel, OptimizerConfig};
use crate::glm::{fit_glms, GlmEstimates, IrlsConfig};
use crate::oracle::{run_verification, VerifyConfig};
use crate::portfolio::{
    ingest, predict_portfolio, read_premiums_csv, simulate_portfolio, simulation_schema, validate, weights_table,
    write_portfolio_csv, write_premiums_csv, write_weights_csv, Portfolio, SchemaConfig, SimulationSpec,
};

#[derive(Debug, Parser)]
#[command(name = "dyncrm", version, about = "Dynamic frequency-severity credibility premiums")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DYNCRM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Long-format CSV: policy_id, year, covariates, claim_count, total_loss.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON naming covariate columns and the hold-out year.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the first-step frequency and severity regressions.
    FitGlm {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a benchmark by maximum likelihood; writes <out-dir>/<benchmark>.json.
    FitDep {
        #[command(flatten)]
        data: DataArgs,
        /// naive, dglm, static, proposed or all.
        #[arg(long, default_value = "proposed", value_parser = parse_benchmarks)]
        benchmark: BenchmarkSet,
        #[arg(long, value_enum, default_value = "plain")]
        variant: VariantArg,
        /// Reuse first-step estimates from fit-glm instead of refitting.
        #[arg(long)]
        glm: Option<PathBuf>,
        /// Optimizer settings JSON.
        #[arg(long)]
        optimizer: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Premiums for a target year from all earlier years.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// fit-dep output, or bare parameters JSON.
        #[arg(long)]
        model: PathBuf,
        /// Overrides the benchmark recorded in the model file.
        #[arg(long)]
        benchmark: Option<Benchmark>,
        /// Defaults to the hold-out year, else the year after the last one observed.
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a synthetic portfolio from a parameters JSON.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        policies: usize,
        #[arg(long, default_value_t = 5)]
        years: usize,
        #[arg(long, default_value_t = 1)]
        first_year: i32,
        #[arg(long, default_value_t = 0.5)]
        covariate_sd: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a matching schema that holds out the last year.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Out-of-sample errors of premium files against the hold-out losses.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        /// NAME=PATH of a predict output; repeatable.
        #[arg(long = "premiums", required = true, value_parser = parse_named)]
        premiums: Vec<(String, PathBuf)>,
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare closed forms with the quadrature, particle and Monte-Carlo oracles.
    Verify {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        particles: usize,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Credibility weights of each policy's history, long format.
    Weights {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum VariantArg {
    Plain,
    EwmaSeverity,
    ThreePart,
    EwmaThreePart,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Plain => Variant::Plain,
            VariantArg::EwmaSeverity => Variant::EwmaSeverity,
            VariantArg::ThreePart => Variant::ThreePart,
            VariantArg::EwmaThreePart => Variant::EwmaThreePart,
        }
    }
}

#[derive(Debug, Clone)]
struct BenchmarkSet(Vec<Benchmark>);

fn parse_benchmarks(s: &str) -> std::result::Result<BenchmarkSet, String> {
    if s == "all" {
        return Ok(BenchmarkSet(Benchmark::ALL.to_vec()));
    }
    s.parse().map(|b| BenchmarkSet(vec![b])).map_err(|e: Error| e.to_string())
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

/// A model file: either fit-dep output or bare parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Fitted(Box<FittedModel>),
    Params(CrmParams),
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn params(&self) -> &CrmParams {
        match self {
            ModelFile::Fitted(f) => &f.params,
            ModelFile::Params(p) => p,
        }
    }

    pub fn benchmark(&self) -> Benchmark {
        match self {
            ModelFile::Fitted(f) => f.spec.benchmark,
            ModelFile::Params(_) => Benchmark::Proposed,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load(args: &DataArgs) -> Result<(Portfolio, SchemaConfig)> {
    let schema = SchemaConfig::from_path(&args.schema)?;
    Ok((ingest(&args.data, &schema)?, schema))
}

fn target_year(explicit: Option<i32>, schema: &SchemaConfig, pf: &Portfolio) -> Result<i32> {
    explicit
        .or(schema.holdout_year)
        .or_else(|| pf.last_year().map(|y| y + 1))
        .ok_or_else(|| Error::data("portfolio is empty"))
}

fn training_glm(pf: &Portfolio, schema: &SchemaConfig) -> Result<GlmEstimates> {
    let train = pf.before(schema.holdout_year);
    fit_glms(&train.design_names, &train.policies, &IrlsConfig::default())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::FitGlm { data, out } => {
            let (pf, schema) = load(&data)?;
            write_json(&out, &training_glm(&pf, &schema)?)
        }
        Command::FitDep { data, benchmark, variant, glm, optimizer, out_dir } => {
            let (pf, schema) = load(&data)?;
            let glm = match glm {
                Some(p) => read_json(&p)?,
                None => training_glm(&pf, &schema)?,
            };
            let cfg: OptimizerConfig = match optimizer {
                Some(p) => read_json(&p)?,
                None => OptimizerConfig::default(),
            };
            let train = pf.before(schema.holdout_year);
            fs::create_dir_all(&out_dir)?;
            for b in benchmark.0 {
                let spec = BenchmarkSpec::new(b, variant.into());
                let fit = fit_dependence(&train.policies, &glm, &train.design_names, &spec, &cfg)?;
                log::info!("{b}: loglik {:.6}, converged {}", fit.loglik, fit.converged);
                write_json(&out_dir.join(format!("{}.json", b.name())), &fit)?;
            }
            Ok(())
        }
        Command::Predict { data, model, benchmark, year, out } => {
            let (pf, schema) = load(&data)?;
            let model = ModelFile::read(&model)?;
            let year = target_year(year, &schema, &pf)?;
            let rows = predict_portfolio(&pf, model.params(), benchmark.unwrap_or(model.benchmark()), year)?;
            write_premiums_csv(&rows, create(&out)?)
        }
        Command::Simulate { params, seed, policies, years, first_year, covariate_sd, out, schema_out } => {
            let params: CrmParams = read_json(&params)?;
            let spec = SimulationSpec { policies, first_year, years, covariate_sd };
            let pf = simulate_portfolio(&params, &spec, seed)?;
            write_portfolio_csv(&pf, create(&out)?)?;
            match schema_out {
                Some(p) => write_json(&p, &simulation_schema(&params, &spec)),
                None => Ok(()),
            }
        }
        Command::Validate { data, premiums, year, out } => {
            let (pf, schema) = load(&data)?;
            let year = explicit_or_holdout(year, &schema)?;
            let sets = premiums
                .into_iter()
                .map(|(name, path)| Ok((name, read_premiums_csv(File::open(path)?)?)))
                .collect::<Result<Vec<_>>>()?;
            write_json(&out, &validate(&pf, &sets, year)?)
        }
        Command::Verify { seed, particles, draws, out } => {
            let report = run_verification(&VerifyConfig { seed, particles, draws })?;
            match out {
                Some(p) => write_json(&p, &report)?,
                None => {
                    let text = serde_json::to_string_pretty(&report)? + "\n";
                    match std::io::stdout().write_all(text.as_bytes()) {
                        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                        r => r?,
                    }
                }
            }
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(Error::numeric(format!("oracle checks failed: {}", failed.join(", "))))
            }
        }
        Command::Weights { data, model, year, out } => {
            let (pf, schema) = load(&data)?;
            let model = ModelFile::read(&model)?;
            let year = target_year(year, &schema, &pf)?;
            write_weights_csv(&weights_table(&pf, model.params(), year)?, create(&out)?)
        }
    }
}

fn explicit_or_holdout(year: Option<i32>, schema: &SchemaConfig) -> Result<i32> {
    year.or(schema.holdout_year)
        .ok_or_else(|| Error::data("no hold-out year: pass --year or set holdout_year in the schema"))
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                Error::Data(msgs) => msgs.iter().for_each(|m| eprintln!("error: {m}")),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}
