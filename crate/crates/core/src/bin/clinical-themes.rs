use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clinical_themes::learn::ClassifierKind;
use clinical_themes::pipeline::{synth, Overrides, Pipeline, PipelineConfig, PipelineError};
use clinical_themes::synth::CohortSpec;
use clinical_themes::vectorize::Weighting;
use clinical_themes::Execution;

#[derive(Parser)]
#[command(name = "clinical-themes", version, about = "Topic mining and length-of-stay prediction over encounter text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    k_diag: Option<usize>,
    #[arg(long)]
    k_proc: Option<usize>,
    /// Restrict to these weightings (comma separated: tfidf,bow).
    #[arg(long, value_delimiter = ',', value_parser = parse_weighting)]
    weightings: Option<Vec<Weighting>>,
    /// Restrict to these classifiers (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    classifiers: Option<Vec<ClassifierKind>>,
    /// Disable the data-parallel loops.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse encounters and notes into cohort.jsonl.
    Ingest(Common),
    /// Build diagnostic and procedure documents.
    Preprocess(Common),
    /// Scan K and record UMass and C_v coherence.
    Coherence(Common),
    /// Fit one LDA model per weighting and source.
    FitTopics(Common),
    /// Assign dominant topics to every document.
    Label(Common),
    /// Assemble feature matrices and the train/test split.
    Features(Common),
    /// Train every configured classifier.
    Train(Common),
    /// Score classifiers and write report.json and keyword tables.
    Evaluate(Common),
    /// Write dominant-topic trajectories.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patient: Option<String>,
    },
    /// Every stage in order.
    Run(Common),
    /// Write a synthetic cohort with its ground-truth manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        k_diag: usize,
        #[arg(long, default_value_t = 4)]
        k_proc: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        flip: f64,
        #[arg(long, default_value_t = 0.2)]
        negation_rate: f64,
    },
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    Weighting::ALL.into_iter().find(|w| w.name() == s).ok_or_else(|| format!("unknown weighting `{s}`"))
}

fn parse_kind(s: &str) -> Result<ClassifierKind, String> {
    ClassifierKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown classifier `{s}`"))
}

fn pipeline(c: &Common) -> Result<Pipeline, PipelineError> {
    let mut config = PipelineConfig::load(&c.config)?;
    config.apply(&Overrides {
        seed: c.seed,
        workdir: c.workdir.clone(),
        k_diag: c.k_diag,
        k_proc: c.k_proc,
        weightings: c.weightings.clone(),
        kinds: c.classifiers.clone(),
    });
    config.validate()?;
    let exec = if c.sequential { Execution::Sequential } else { Execution::default() };
    Ok(Pipeline::new(config, exec))
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest(c) => pipeline(&c)?.ingest(),
        Command::Preprocess(c) => pipeline(&c)?.preprocess(),
        Command::Coherence(c) => pipeline(&c)?.coherence(),
        Command::FitTopics(c) => pipeline(&c)?.fit_topics(),
        Command::Label(c) => pipeline(&c)?.label(),
        Command::Features(c) => pipeline(&c)?.features(),
        Command::Train(c) => pipeline(&c)?.train(),
        Command::Evaluate(c) => pipeline(&c)?.evaluate().map(|r| print_report(&r)),
        Command::Trajectory { common, patient } => pipeline(&common)?.trajectory(patient.as_deref()),
        Command::Run(c) => pipeline(&c)?.run().map(|r| print_report(&r)),
        Command::Synth { out, n, k_diag, k_proc, seed, flip, negation_rate } => {
            let spec = CohortSpec { flip_prob: flip, negation_rate, ..CohortSpec::new(n, k_diag, k_proc, seed) };
            synth(&spec, &out)
        }
    }
}

fn print_report(r: &clinical_themes::pipeline::Report) {
    println!("classifier\tweighting\tsource\tprecision\trecall\taccuracy\troc_auc");
    for c in &r.results {
        println!(
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            c.classifier.name(),
            c.weighting.name(),
            c.source.name(),
            c.precision,
            c.recall,
            c.accuracy,
            c.roc_auc
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
