//! Command-line front end: generate games and datasets, run the learners,
//! and reproduce the experiment tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gamelearn::compile::{build_wcsp, LearnerConfig};
use gamelearn::data::{random_game, sample_plays, Dataset, GroundTruth};
use gamelearn::equilibrium::{solve_lqre, LqreConfig};
use gamelearn::learn::{
    error, error_observed_only, learn_lqre, learn_naive, learn_naive_lqre, learn_naive_nash,
    run_experiment, Axis, ExperimentSpec, Method,
};
use gamelearn::Game;

#[derive(Parser)]
#[command(
    name = "gamelearn",
    version,
    about = "Learn games and strategies from observed play"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random normal-form game with uniform payoffs.
    GenGame(GenGameArgs),
    /// Simulate observed plays of a game under its exact LQRE strategies.
    GenData(GenDataArgs),
    /// Learn a game and strategy profile from a dataset.
    Learn(LearnArgs),
    /// Reproduce an experiment table (1: training size, 2: lambda, 3: wrong lambda).
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenGameArgs {
    #[arg(long, default_value_t = 2)]
    players: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    /// Lower payoff bound.
    #[arg(long, default_value_t = 1.0)]
    lo: f64,
    /// Upper payoff bound.
    #[arg(long, default_value_t = 2.0)]
    hi: f64,
    #[arg(long)]
    seed: u64,
    /// Output path for the game JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Path to a game JSON file.
    #[arg(long)]
    game: PathBuf,
    /// Rationality parameter for the generating LQRE strategies.
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Number of observed plays.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Payoff observation noise standard deviation (R).
    #[arg(long, default_value_t = 0.7)]
    noise_stddev: f64,
    #[arg(long)]
    seed: u64,
    /// Output path for the JSON-lines dataset (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the generating game/profile/lambda as JSON.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// Path to a JSON-lines dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: Method,
    /// Ground-truth JSON (required for naive-nash; enables error reporting).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Rationality parameter used for learning.
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Rationality constraint weight.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    /// Strategy grid step.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Payoff grid step.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Assumed payoff noise standard deviation (R).
    #[arg(long, default_value_t = 0.7)]
    noise_stddev: f64,
    /// Compile the rationality constraints monolithically instead of
    /// decomposed.
    #[arg(long)]
    monolithic: bool,
    /// Restrict rationality constraints to actions observed in the data.
    #[arg(long)]
    rationality_observed_actions_only: bool,
    /// Score with the error metric that skips unobserved payoff entries.
    #[arg(long)]
    error_observed_only: bool,
    /// Dump the compiled WCSP as JSON to this path.
    #[arg(long)]
    dump_wcsp: Option<PathBuf>,
    /// Output path for the estimate JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// 1 = training-size sweep, 2 = lambda sweep, 3 = wrong-lambda sweep.
    #[arg(long)]
    table: u8,
    #[arg(long, default_value_t = 10)]
    games: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0.7)]
    noise_stddev: f64,
    /// Lambda for table 1 (generation and learning).
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Sample count for tables 2 and 3.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Training sizes for table 1.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    m_values: Vec<usize>,
    /// Lambda values for table 2.
    #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
    lambda_values: Vec<f64>,
    /// Learning lambda for table 3.
    #[arg(long, default_value_t = 1.0)]
    learn_lambda: f64,
    /// True lambda values for table 3.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2")]
    true_lambda_values: Vec<f64>,
    /// Score with the error metric that skips unobserved payoff entries.
    #[arg(long)]
    error_observed_only: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the aggregated table as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Write the full results (rows + per-cell records) as JSON.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::GenGame(args) => {
            let game = random_game(args.players, args.actions, args.lo, args.hi, args.seed)?;
            write_json(&game, args.out.as_deref())?;
        }
        Command::GenData(args) => {
            let game: Game = read_json(&args.game)?;
            let profile = solve_lqre(&game, &LqreConfig::new(args.lambda)?)?;
            let truth = GroundTruth::new(game, profile, args.lambda)?;
            let dataset = sample_plays(&truth, args.m, args.noise_stddev, args.seed)?;
            match &args.out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    dataset.write_jsonl(&mut w)?;
                    w.flush()?;
                }
                None => {
                    let mut out = Vec::new();
                    dataset.write_jsonl(&mut out)?;
                    print!("{}", String::from_utf8(out)?);
                }
            }
            if let Some(path) = &args.truth_out {
                write_json(&truth, Some(path))?;
            }
        }
        Command::Learn(args) => {
            let dataset = Dataset::read_jsonl(BufReader::new(File::open(&args.data)?))?;
            let config = LearnerConfig {
                lambda: args.lambda,
                alpha: args.alpha,
                strategy_step: args.epsilon,
                payoff_step: args.delta,
                noise_stddev: args.noise_stddev,
                decomposed: !args.monolithic,
                rationality_only_observed_actions: args.rationality_observed_actions_only,
                ..LearnerConfig::default()
            };
            if let Some(path) = &args.dump_wcsp {
                let (wcsp, _) = build_wcsp(&dataset, &config)?;
                let text = serde_json::to_string_pretty(&wcsp.to_debug_json())?;
                std::fs::write(path, text)?;
            }
            let truth: Option<GroundTruth> = match &args.truth {
                Some(path) => Some(read_json(path)?),
                None => None,
            };
            let estimate = match args.method {
                Method::Lqre => learn_lqre(&dataset, &config)?,
                Method::Naive => learn_naive(&dataset, &config)?,
                Method::NaiveLqre => learn_naive_lqre(&dataset, &config)?,
                Method::NaiveNash => {
                    let truth = truth
                        .as_ref()
                        .ok_or("naive-nash needs --truth (it is oracle-assisted)")?;
                    learn_naive_nash(&dataset, &config, truth)?
                }
            };
            write_json(&estimate, args.out.as_deref())?;
            if let Some(truth) = &truth {
                let e = if args.error_observed_only {
                    error_observed_only(truth, &estimate)?
                } else {
                    error(truth, &estimate)?
                };
                eprintln!("error vs truth: {e:.6}");
            }
        }
        Command::Experiment(args) => {
            let axis = match args.table {
                1 => Axis::TrainingSize {
                    lambda: args.lambda,
                    m_values: args.m_values.clone(),
                },
                2 => Axis::Lambda {
                    m: args.m,
                    lambda_values: args.lambda_values.clone(),
                },
                3 => Axis::WrongLambda {
                    m: args.m,
                    learn_lambda: args.learn_lambda,
                    true_lambda_values: args.true_lambda_values.clone(),
                },
                other => return Err(format!("unknown table {other} (expected 1, 2, or 3)").into()),
            };
            let spec = ExperimentSpec {
                axis,
                game_count: args.games,
                base_seed: args.seed,
                config: LearnerConfig {
                    alpha: args.alpha,
                    strategy_step: args.epsilon,
                    payoff_step: args.delta,
                    noise_stddev: args.noise_stddev,
                    ..LearnerConfig::default()
                },
                observed_only: args.error_observed_only,
                threads: args.threads,
            };
            let table = run_experiment(&spec)?;
            let csv = table.to_csv();
            print!("{csv}");
            if let Some(path) = &args.out_csv {
                std::fs::write(path, &csv)?;
            }
            if let Some(path) = &args.out_json {
                std::fs::write(path, serde_json::to_string_pretty(&table)?)?;
            }
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
) -> Result<T, Box<dyn std::error::Error>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: serde::Serialize>(
    value: &T,
    path: Option<&std::path::Path>,
) -> Result<(), Box<dyn std::error::Error>> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
