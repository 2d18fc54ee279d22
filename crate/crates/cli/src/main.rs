mod commands;
mod failure;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::{Failure, Result};
use settings::{Scorer, TruthChoice};

/// Real-time deterioration risk scoring for hospital ward patients.
#[derive(Parser)]
#[command(name = "wardrisk", version, about)]
struct Cli {
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, env = "WARDRISK_THREADS")]
    threads: Option<usize>,

    /// TOML config file, or the manifest of an earlier run. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and its hidden truth.
    Simulate(SimulateArgs),
    /// Fit a model with EM.
    Train(TrainArgs),
    /// Fit a grid of shapes and keep the one with the lowest BIC.
    SelectModel(SelectArgs),
    /// Write risk score traces for a cohort.
    Score(ScoreArgs),
    /// Alarm metrics of a model and its ablations on a labelled cohort.
    Evaluate(EvaluateArgs),
    /// Simulate, train, score and evaluate end to end.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct EmArgs {
    /// Seed of the initialization.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative log-likelihood gain below which EM stops.
    #[arg(long)]
    tol: Option<f64>,
    /// Rank of the low-rank task covariance.
    #[arg(long)]
    rank: Option<usize>,
    /// Longest epoch, in hours.
    #[arg(long)]
    t_max: Option<usize>,
    /// Fixed prior of the deteriorating class instead of the training fraction.
    #[arg(long)]
    prior_icu: Option<f64>,
}

impl EmArgs {
    fn apply(&self, em: &mut wardrisk::mixture::EmConfig) {
        set(&mut em.seed, self.seed);
        set(&mut em.max_iter, self.max_iter);
        set(&mut em.tol, self.tol);
        set(&mut em.rank, self.rank);
        set(&mut em.t_max, self.t_max);
        if self.prior_icu.is_some() {
            em.prior_icu = self.prior_icu;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of patients.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    truth: Option<TruthChoice>,
    /// Same as `--truth paper-scale`.
    #[arg(long)]
    paper_scale: bool,
    /// Sample from this model file instead of a built-in one.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(short = 'g', long)]
    phenotypes: Option<usize>,
    #[arg(short = 'k', long)]
    epochs: Option<usize>,
    /// Four phenotypes, twelve epochs, rank 3, epochs up to 168 h.
    #[arg(long)]
    paper_scale: bool,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Candidate phenotype counts, comma separated.
    #[arg(short = 'g', long, value_delimiter = ',')]
    phenotypes: Option<Vec<usize>>,
    /// Candidate epoch counts, comma separated.
    #[arg(short = 'k', long, value_delimiter = ',')]
    epochs: Option<Vec<usize>>,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    scorer: Option<Scorer>,
    /// Also re-evaluate the score on every whole hour.
    #[arg(long)]
    hourly_ticks: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// One-phenotype one-epoch model for the ablation columns.
    #[arg(long)]
    stationary_model: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    target_tpr: Option<f64>,
    /// Discharge thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    lower: Option<Vec<f64>>,
    #[arg(long)]
    hourly_ticks: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    truth: Option<TruthChoice>,
    #[arg(long)]
    paper_scale: bool,
    /// Seed of the simulated cohorts.
    #[arg(long)]
    bench_seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    target_tpr: Option<f64>,
    #[command(flatten)]
    em: EmArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut PathBuf, value: &Option<PathBuf>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::SimulateSettings>(config, "simulate")?;
            set_path(&mut s.out_dir, &a.out_dir);
            set(&mut s.patients, a.n);
            set(&mut s.seed, a.seed);
            set(&mut s.truth, a.truth);
            if a.paper_scale {
                s.truth = TruthChoice::PaperScale;
            }
            if a.model.is_some() {
                s.model = a.model.clone();
            }
            init_threads(cli.threads.or(threads))?;
            commands::simulate(&s)
        }
        Command::Train(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::TrainSettings>(config, "train")?;
            if a.paper_scale {
                s.phenotypes = 4;
                s.epochs = 12;
                s.em.rank = 3;
                s.em.t_max = 168;
            }
            set_path(&mut s.cohort, &a.cohort);
            set_path(&mut s.out_dir, &a.out_dir);
            set(&mut s.phenotypes, a.phenotypes);
            set(&mut s.epochs, a.epochs);
            a.em.apply(&mut s.em);
            init_threads(cli.threads.or(threads))?;
            commands::train(&s)
        }
        Command::SelectModel(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::SelectSettings>(config, "select-model")?;
            set_path(&mut s.cohort, &a.cohort);
            set_path(&mut s.out_dir, &a.out_dir);
            set(&mut s.phenotypes, a.phenotypes.clone());
            set(&mut s.epochs, a.epochs.clone());
            a.em.apply(&mut s.em);
            init_threads(cli.threads.or(threads))?;
            commands::select_model(&s)
        }
        Command::Score(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::ScoreSettings>(config, "score")?;
            set_path(&mut s.model, &a.model);
            set_path(&mut s.cohort, &a.cohort);
            set_path(&mut s.out_dir, &a.out_dir);
            set(&mut s.scorer, a.scorer);
            if a.hourly_ticks {
                s.options.hourly_ticks = true;
            }
            init_threads(cli.threads.or(threads))?;
            commands::score(&s)
        }
        Command::Evaluate(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::EvaluateSettings>(config, "evaluate")?;
            set_path(&mut s.model, &a.model);
            set_path(&mut s.cohort, &a.cohort);
            set_path(&mut s.out_dir, &a.out_dir);
            if a.stationary_model.is_some() {
                s.stationary_model = a.stationary_model.clone();
            }
            set(&mut s.target_tpr, a.target_tpr);
            set(&mut s.lower_thresholds, a.lower.clone());
            if a.hourly_ticks {
                s.options.hourly_ticks = true;
            }
            init_threads(cli.threads.or(threads))?;
            commands::evaluate(&s)
        }
        Command::Benchmark(a) => {
            let (mut s, threads) =
                settings::load_section::<settings::BenchmarkCmdSettings>(config, "benchmark")?;
            set_path(&mut s.out_dir, &a.out_dir);
            set(&mut s.truth, a.truth);
            if a.paper_scale {
                s.truth = TruthChoice::PaperScale;
            }
            set(&mut s.run.seed, a.bench_seed);
            set(&mut s.run.train_patients, a.n_train);
            set(&mut s.run.test_patients, a.n_test);
            set(&mut s.run.target_tpr, a.target_tpr);
            a.em.apply(&mut s.run.em);
            init_threads(cli.threads.or(threads))?;
            commands::benchmark(&s)
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
