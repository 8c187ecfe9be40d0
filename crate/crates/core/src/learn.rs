//! The four learners (rationality-constrained WCSP learning plus the Naive,
//! NaiveLQRE, and NaiveNash baselines), the combined-vector error metric,
//! and the experiment harness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::compile::{build_wcsp, extract_estimate, LearnerConfig};
use crate::data::{sample_plays, Dataset, GroundTruth};
use crate::equilibrium::{solve_lqre, solve_nash_2x2, LqreConfig};
use crate::game::{Game, MixedProfile};
use crate::rng::mix_seed;
use crate::wcsp::{SolveConfig, SolveOutcome};
use crate::{Error, Result};

/// Which learner produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lqre,
    Naive,
    NaiveLqre,
    NaiveNash,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Lqre => "lqre",
            Method::Naive => "naive",
            Method::NaiveLqre => "naive-lqre",
            Method::NaiveNash => "naive-nash",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lqre" => Ok(Method::Lqre),
            "naive" => Ok(Method::Naive),
            "naive-lqre" => Ok(Method::NaiveLqre),
            "naive-nash" => Ok(Method::NaiveNash),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// A learned game and strategy profile on the discretization grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// payoffs[player][joint profile index]; unobserved entries hold the
    /// midpoint of the payoff range.
    pub payoffs: Vec<Vec<f64>>,
    /// Whether the matching payoff entry was constrained by data.
    pub constrained: Vec<Vec<bool>>,
    pub profile: MixedProfile,
    pub method: Method,
}

impl Estimate {
    /// View the estimated payoffs as a game (midpoint fills included).
    pub fn as_game(&self, actions: &[usize]) -> Result<Game> {
        Game::new(actions.to_vec(), self.payoffs.clone())
    }

    /// Same payoffs and profile, ignoring the method tag.
    pub fn same_values(&self, other: &Estimate) -> bool {
        self.payoffs == other.payoffs
            && self.constrained == other.constrained
            && self.profile == other.profile
    }
}

/// Learn by compiling the rationality-constrained WCSP and solving exactly.
pub fn learn_lqre(dataset: &Dataset, config: &LearnerConfig) -> Result<Estimate> {
    let (wcsp, layout) = build_wcsp(dataset, config)?;
    let outcome = wcsp.solve(&SolveConfig::default())?;
    let solution = match outcome {
        SolveOutcome::Optimal(s) => s,
        SolveOutcome::Unsatisfiable => {
            return Err(Error::Internal(
                "compiled learning instance is unsatisfiable".into(),
            ))
        }
    };
    let mut est = extract_estimate(&layout, &solution, dataset)?;
    est.method = Method::Lqre;
    Ok(est)
}

/// Maximum-likelihood baseline: fit strategies and payoffs to the data
/// separately. Implemented as the alpha = 0 WCSP argmin so that it agrees
/// with [`learn_lqre`] at alpha = 0 by construction.
pub fn learn_naive(dataset: &Dataset, config: &LearnerConfig) -> Result<Estimate> {
    let naive_config = LearnerConfig {
        alpha: 0.0,
        decomposed: false,
        ..config.clone()
    };
    let (wcsp, layout) = build_wcsp(dataset, &naive_config)?;
    let outcome = wcsp.solve(&SolveConfig::default())?;
    let solution = match outcome {
        SolveOutcome::Optimal(s) => s,
        SolveOutcome::Unsatisfiable => {
            return Err(Error::Internal("naive instance is unsatisfiable".into()))
        }
    };
    let mut est = extract_estimate(&layout, &solution, dataset)?;
    est.method = Method::Naive;
    Ok(est)
}

/// Fit payoffs naively, then impose the lambda-LQRE of the fitted game as
/// the strategy profile (rounded to the strategy grid).
pub fn learn_naive_lqre(dataset: &Dataset, config: &LearnerConfig) -> Result<Estimate> {
    let mut est = learn_naive(dataset, config)?;
    let game = est.as_game(&dataset.actions_per_player)?;
    let lqre = solve_lqre(&game, &LqreConfig::new(config.lambda)?)?;
    let n = (1.0 / config.strategy_step).round() as usize;
    est.profile = round_profile_to_grid(&lqre, n)?;
    est.method = Method::NaiveLqre;
    Ok(est)
}

/// Fit payoffs naively, then impose a Nash equilibrium of the fitted game,
/// picking the equilibrium that scores best against the ground truth
/// (oracle-assisted by construction, hence the explicit `truth` argument).
pub fn learn_naive_nash(
    dataset: &Dataset,
    config: &LearnerConfig,
    truth: &GroundTruth,
) -> Result<Estimate> {
    let mut est = learn_naive(dataset, config)?;
    let game = est.as_game(&dataset.actions_per_player)?;
    let candidates = solve_nash_2x2(&game)?;
    let n = (1.0 / config.strategy_step).round() as usize;
    let mut best: Option<(f64, MixedProfile)> = None;
    for candidate in candidates {
        let rounded = round_profile_to_grid(&candidate, n)?;
        let mut trial = est.clone();
        trial.profile = rounded.clone();
        let e = error(truth, &trial)?;
        if best.as_ref().map_or(true, |(b, _)| e < *b) {
            best = Some((e, rounded));
        }
    }
    let (_, profile) = best.expect("solve_nash_2x2 returns at least one equilibrium");
    est.profile = profile;
    est.method = Method::NaiveNash;
    Ok(est)
}

/// Round each strategy onto the 1/n grid with largest-remainder repair so
/// every strategy still sums to exactly one grid unit total.
pub fn round_profile_to_grid(profile: &MixedProfile, n: usize) -> Result<MixedProfile> {
    let mut strategies = Vec::with_capacity(profile.num_players());
    for sigma in profile.strategies() {
        let scaled: Vec<f64> = sigma.iter().map(|p| p * n as f64).collect();
        let mut units: Vec<usize> = scaled.iter().map(|&x| x.floor() as usize).collect();
        let assigned: usize = units.iter().sum();
        let missing = n.saturating_sub(assigned);
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.partial_cmp(&ra)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &a in order.iter().take(missing) {
            units[a] += 1;
        }
        strategies.push(units.iter().map(|&u| u as f64 / n as f64).collect());
    }
    MixedProfile::new(strategies)
}

/// Euclidean distance between the concatenated true and learned vectors:
/// strategy entries (player-major, action-major) followed by payoff entries
/// (player-major, row-major joint order). Midpoint-filled unobserved payoff
/// entries are included.
pub fn error(truth: &GroundTruth, estimate: &Estimate) -> Result<f64> {
    error_impl(truth, estimate, false)
}

/// Variant that skips payoff entries the learner never saw data for.
pub fn error_observed_only(truth: &GroundTruth, estimate: &Estimate) -> Result<f64> {
    error_impl(truth, estimate, true)
}

fn error_impl(truth: &GroundTruth, estimate: &Estimate, observed_only: bool) -> Result<f64> {
    let game = &truth.game;
    if estimate.profile.num_players() != game.num_players() {
        return Err(Error::invalid("estimate and truth have different shapes"));
    }
    let mut sq = 0.0;
    for i in 0..game.num_players() {
        if estimate.profile.strategy(i).len() != game.num_actions(i) {
            return Err(Error::invalid("estimate and truth have different shapes"));
        }
        for a in 0..game.num_actions(i) {
            let d = truth.profile.prob(i, a) - estimate.profile.prob(i, a);
            sq += d * d;
        }
    }
    if estimate.payoffs.len() != game.num_players() {
        return Err(Error::invalid("estimate and truth have different shapes"));
    }
    for i in 0..game.num_players() {
        if estimate.payoffs[i].len() != game.num_profiles() {
            return Err(Error::invalid("estimate and truth have different shapes"));
        }
        for joint in 0..game.num_profiles() {
            if observed_only && !estimate.constrained[i][joint] {
                continue;
            }
            let d = game.payoff_at(i, joint) - estimate.payoffs[i][joint];
            sq += d * d;
        }
    }
    Ok(sq.sqrt())
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

/// Which experiment axis is being swept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Axis {
    /// Vary the number of observed plays at a fixed lambda.
    TrainingSize { lambda: f64, m_values: Vec<usize> },
    /// Vary lambda (used both to generate and to learn) at fixed M.
    Lambda { m: usize, lambda_values: Vec<f64> },
    /// Learn with a fixed lambda against data generated at other lambdas.
    WrongLambda {
        m: usize,
        learn_lambda: f64,
        true_lambda_values: Vec<f64>,
    },
}

impl Axis {
    pub fn len(&self) -> usize {
        match self {
            Axis::TrainingSize { m_values, .. } => m_values.len(),
            Axis::Lambda { lambda_values, .. } => lambda_values.len(),
            Axis::WrongLambda {
                true_lambda_values, ..
            } => true_lambda_values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (true lambda, learn lambda, M, axis value label) for position `t`.
    fn cell_params(&self, t: usize) -> (f64, f64, usize, f64) {
        match self {
            Axis::TrainingSize { lambda, m_values } => {
                (*lambda, *lambda, m_values[t], m_values[t] as f64)
            }
            Axis::Lambda { m, lambda_values } => {
                (lambda_values[t], lambda_values[t], *m, lambda_values[t])
            }
            Axis::WrongLambda {
                m,
                learn_lambda,
                true_lambda_values,
            } => (
                true_lambda_values[t],
                *learn_lambda,
                *m,
                true_lambda_values[t],
            ),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::TrainingSize { .. } => "training_size",
            Axis::Lambda { .. } => "lambda",
            Axis::WrongLambda { .. } => "wrong_lambda",
        }
    }
}

/// Full experiment description; deterministic given `base_seed`.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub axis: Axis,
    pub game_count: usize,
    pub base_seed: u64,
    pub config: LearnerConfig,
    /// Score with [`error_observed_only`] instead of the full vector.
    pub observed_only: bool,
    /// Worker threads (0 = available parallelism). Cells are independent;
    /// results are keyed and sorted, so the thread count never changes them.
    pub threads: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.game_count == 0 {
            return Err(Error::invalid("game_count must be positive"));
        }
        if self.axis.is_empty() {
            return Err(Error::invalid("axis has no values"));
        }
        self.config.validate()
    }
}

/// One (game, axis value, method) outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub game_index: usize,
    pub axis_value: f64,
    pub method: Method,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

/// Aggregated row: mean and standard error over games.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub method: Method,
    pub axis_value: f64,
    pub mean_error: f64,
    pub stderr: f64,
    pub games: usize,
    pub failures: usize,
}

/// The harness output: aggregated rows (method-major, axis-minor), the
/// percent-improvement row for the wrong-lambda axis, and per-cell records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub axis: String,
    pub rows: Vec<ExperimentRow>,
    /// (axis value, percent improvement of LQRE over Naive), wrong-lambda only.
    pub improvement: Vec<(f64, f64)>,
    pub cells: Vec<CellRecord>,
}

impl ExperimentTable {
    pub fn mean_error(&self, method: Method, axis_value: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.axis_value == axis_value)
            .map(|r| r.mean_error)
    }

    /// CSV with columns method, axis_value, mean_error, stderr. The
    /// wrong-lambda improvement row is appended as method
    /// `improvement_pct` with the percentage in the mean_error column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,axis_value,mean_error,stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.method.name(),
                r.axis_value,
                r.mean_error,
                r.stderr
            ));
        }
        for (axis_value, pct) in &self.improvement {
            out.push_str(&format!("improvement_pct,{axis_value},{pct:.2},\n"));
        }
        out
    }
}

/// Run every (game, axis value, method) cell and aggregate.
///
/// Per cell: draw a random 2x2 game with payoffs in [1, 2], compute its
/// exact LQRE at the cell's true lambda as ground truth, sample M noisy
/// plays, run all four learners, and score each against the truth. A
/// learner failure is recorded for that cell; the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentTable> {
    spec.validate()?;
    let axis_len = spec.axis.len();
    let n_cells = spec.game_count * axis_len;

    let results: Mutex<Vec<CellRecord>> = Mutex::new(Vec::with_capacity(n_cells * 4));
    let next_cell = AtomicUsize::new(0);
    let workers = if spec.threads > 0 {
        spec.threads
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    };

    std::thread::scope(|scope| {
        for _ in 0..workers.min(n_cells).max(1) {
            scope.spawn(|| loop {
                let cell = next_cell.fetch_add(1, Ordering::Relaxed);
                if cell >= n_cells {
                    break;
                }
                let g = cell / axis_len;
                let t = cell % axis_len;
                let records = run_cell(spec, g, t);
                results.lock().unwrap().extend(records);
            });
        }
    });

    let mut cells = results.into_inner().unwrap();
    cells.sort_by(|a, b| {
        (a.game_index, ord_f64(a.axis_value), a.method.name())
            .partial_cmp(&(b.game_index, ord_f64(b.axis_value), b.method.name()))
            .unwrap()
    });

    // Aggregate per (method, axis value).
    let mut rows = Vec::new();
    for method in [
        Method::Lqre,
        Method::Naive,
        Method::NaiveLqre,
        Method::NaiveNash,
    ] {
        for t in 0..axis_len {
            let (_, _, _, axis_value) = spec.axis.cell_params(t);
            let errs: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method && c.axis_value == axis_value)
                .filter_map(|c| c.error)
                .collect();
            let failures = cells
                .iter()
                .filter(|c| c.method == method && c.axis_value == axis_value && c.failure.is_some())
                .count();
            let mean = if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().sum::<f64>() / errs.len() as f64
            };
            let stderr = if errs.len() > 1 {
                let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / (errs.len() - 1) as f64;
                (var / errs.len() as f64).sqrt()
            } else {
                0.0
            };
            rows.push(ExperimentRow {
                method,
                axis_value,
                mean_error: mean,
                stderr,
                games: errs.len(),
                failures,
            });
        }
    }

    let mut improvement = Vec::new();
    if matches!(spec.axis, Axis::WrongLambda { .. }) {
        for t in 0..axis_len {
            let (_, _, _, axis_value) = spec.axis.cell_params(t);
            let lqre = rows
                .iter()
                .find(|r| r.method == Method::Lqre && r.axis_value == axis_value)
                .map(|r| r.mean_error);
            let naive = rows
                .iter()
                .find(|r| r.method == Method::Naive && r.axis_value == axis_value)
                .map(|r| r.mean_error);
            if let (Some(l), Some(n)) = (lqre, naive) {
                improvement.push((axis_value, 100.0 * (n - l) / n));
            }
        }
    }

    Ok(ExperimentTable {
        axis: spec.axis.name().to_string(),
        rows,
        improvement,
        cells,
    })
}

fn ord_f64(x: f64) -> u64 {
    x.to_bits()
}

fn run_cell(spec: &ExperimentSpec, g: usize, t: usize) -> Vec<CellRecord> {
    let (true_lambda, learn_lambda, m, axis_value) = spec.axis.cell_params(t);
    let mut records = Vec::with_capacity(4);
    let mut record = |method: Method, outcome: Result<f64>| match outcome {
        Ok(e) => records.push(CellRecord {
            game_index: g,
            axis_value,
            method,
            error: Some(e),
            failure: None,
        }),
        Err(err) => records.push(CellRecord {
            game_index: g,
            axis_value,
            method,
            error: None,
            failure: Some(err.to_string()),
        }),
    };

    let setup = (|| -> Result<(GroundTruth, Dataset, LearnerConfig)> {
        let game_seed = mix_seed(&[spec.base_seed, 0x67616d65, g as u64]);
        let game = crate::data::random_game(2, 2, 1.0, 2.0, game_seed)?;
        let profile = solve_lqre(&game, &LqreConfig::new(true_lambda)?)?;
        let truth = GroundTruth::new(game, profile, true_lambda)?;
        let data_seed = mix_seed(&[spec.base_seed, 0x64617461, g as u64, t as u64]);
        let dataset = sample_plays(&truth, m, spec.config.noise_stddev, data_seed)?;
        let config = LearnerConfig {
            lambda: learn_lambda,
            ..spec.config.clone()
        };
        Ok((truth, dataset, config))
    })();

    let (truth, dataset, config) = match setup {
        Ok(parts) => parts,
        Err(e) => {
            for method in [
                Method::Lqre,
                Method::Naive,
                Method::NaiveLqre,
                Method::NaiveNash,
            ] {
                record(method, Err(Error::Internal(format!("setup failed: {e}"))));
            }
            return records;
        }
    };

    let score = |est: Result<Estimate>| -> Result<f64> {
        let est = est?;
        if spec.observed_only {
            error_observed_only(&truth, &est)
        } else {
            error(&truth, &est)
        }
    };

    record(Method::Lqre, score(learn_lqre(&dataset, &config)));
    record(Method::Naive, score(learn_naive(&dataset, &config)));
    record(
        Method::NaiveLqre,
        score(learn_naive_lqre(&dataset, &config)),
    );
    record(
        Method::NaiveNash,
        score(learn_naive_nash(&dataset, &config, &truth)),
    );
    records
}
