use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use automt::config::RunConfig;
use automt::pipeline::{Pipeline, PipelineError};
use automt::report::{kappa_output, read_rating_table, read_samples, ReportInputs};
use automt_core::stats::{welch_t_test, KappaWeights};

#[derive(Parser)]
#[command(name = "automt", version, about = "Metamorphic testing for autonomous-driving systems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding every stage's output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    region: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on concurrent backend requests.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Redo work even when outputs already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Backend endpoints: a TOML file or `kind=url,...`.
    #[arg(long, global = true)]
    backends: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a rule file into metamorphic relations.
    Extract {
        #[arg(long)]
        rules: PathBuf,
        /// Comma-separated parser profile names.
        #[arg(long, value_delimiter = ',')]
        parsers: Vec<String>,
    },
    /// Embed the extracted relations into the MR store.
    BuildStore,
    /// Describe every source case of a corpus.
    Analyze(Corpus),
    /// Match relations to cases and generate follow-ups.
    Generate(Corpus),
    /// Judge the generated follow-ups.
    Validate(Corpus),
    /// Run every ADS and detect violations.
    Evaluate(Corpus),
    /// Summarize a run as JSON and Markdown.
    Report {
        #[arg(long, default_value = "AutoMT")]
        method: String,
        /// Items x raters CSV for a kappa section.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        categories: u32,
        #[arg(long, value_enum, default_value_t = Weights::Linear)]
        weights: Weights,
        #[arg(long, requires = "sample_b")]
        sample_a: Option<PathBuf>,
        #[arg(long, requires = "sample_a")]
        sample_b: Option<PathBuf>,
    },
    /// Rater agreement and rate comparisons outside a run.
    #[command(subcommand)]
    Stats(Stats),
    /// Write the demo rule file and a synthetic corpus.
    Synth {
        #[arg(long, default_value = "demo")]
        dir: PathBuf,
        #[arg(long, default_value_t = 12)]
        cases: usize,
    },
}

#[derive(Args)]
struct Corpus {
    /// Directory of source cases, one subdirectory each.
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
}

#[derive(Subcommand)]
enum Stats {
    /// Weighted Fleiss' kappa of an items x raters CSV.
    Kappa {
        ratings: PathBuf,
        #[arg(long, default_value_t = 5)]
        categories: u32,
        #[arg(long, value_enum, default_value_t = Weights::Linear)]
        weights: Weights,
    },
    /// Two-sided Welch t-test of two sample files.
    Ttest { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Weights {
    Linear,
    Quadratic,
}

impl From<Weights> for KappaWeights {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Linear => KappaWeights::Linear,
            Weights::Quadratic => KappaWeights::Quadratic,
        }
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    code: &'a str,
    message: String,
}

fn fail(err: &PipelineError) -> ExitCode {
    let code = err.backend().map_or_else(|| err.code(), |b| b.code());
    let body = ErrorJson { code, message: err.to_string() };
    eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
    ExitCode::from(err.exit_code() as u8)
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn load_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env: BTreeMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with("AUTOMT_")).collect();
    config.apply_env(&env)?;
    if let Some(table) = &g.backends {
        config.apply_backend_table(table)?;
    }
    if let Some(region) = &g.region {
        config.region = region.clone();
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(parallel) = g.parallel {
        config.parallel = parallel;
    }
    if let Some(out) = &g.out {
        config.output_root = out.clone();
    }
    Ok(config)
}

fn stats(cmd: &Stats) -> Result<(), PipelineError> {
    match cmd {
        Stats::Kappa { ratings, categories, weights } => {
            let table = read_rating_table(ratings, *categories)?;
            print_json(&kappa_output(&table, (*weights).into()));
        }
        Stats::Ttest { a, b } => {
            let result = welch_t_test(&read_samples(a)?, &read_samples(b)?).map_err(automt::report::ReportError::from)?;
            print_json(&result);
        }
    }
    Ok(())
}

fn synth(dir: &Path, cases: usize) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", dir.display()));
    automt::synth::write_rules(&dir.join("rules_de.txt")).map_err(io)?;
    let ids = automt::synth::write_corpus(&dir.join("corpus"), cases).map_err(io)?;
    print_json(&serde_json::json!({ "rules": "rules_de.txt", "corpus": "corpus", "cases": ids.len() }));
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Stats(cmd) => return stats(cmd),
        Command::Synth { dir, cases } => return synth(dir, *cases),
        _ => {}
    }
    let mut config = load_config(&cli.global)?;
    if let Command::Extract { parsers, .. } = &cli.command {
        if !parsers.is_empty() {
            config.select_parsers(parsers)?;
        }
    }
    let pipeline = Pipeline::new(config, cli.global.force)?;
    pipeline.write_effective_config()?;
    match &cli.command {
        Command::Extract { rules, .. } => print_json(&pipeline.extract(rules)?),
        Command::BuildStore => print_json(&pipeline.build_store()?),
        Command::Analyze(c) => print_json(&pipeline.analyze(&c.corpus)?),
        Command::Generate(c) => print_json(&pipeline.generate(&c.corpus)?),
        Command::Validate(c) => print_json(&pipeline.validate(&c.corpus)?),
        Command::Evaluate(c) => print_json(&pipeline.evaluate(&c.corpus)?),
        Command::Report { method, ratings, categories, weights, sample_a, sample_b } => {
            let inputs = ReportInputs {
                method: method.clone(),
                ratings: ratings.clone().map(|p| (p, *categories, (*weights).into())),
                samples: sample_a.clone().zip(sample_b.clone()),
            };
            let report = pipeline.report(&inputs)?;
            print_json(&report.validation.summary);
        }
        Command::Stats(_) | Command::Synth { .. } => unreachable!(),
    }
    log::info!("{} backend calls", pipeline.backends.total_calls());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(&err),
    }
}
