//! Random game generation and simulation of the observation model: players
//! fix mixed strategies, an observer sees every joint pure action perfectly
//! and every realized payoff through Gaussian noise.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::game::{Game, MixedProfile};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// One observed play: the joint pure profile and each player's noisy payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaySample {
    /// Per-player action indices.
    pub joint_action: Vec<usize>,
    /// Per-player observed (noised) payoffs.
    pub observed_payoffs: Vec<f64>,
}

/// A set of observed plays of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_players: usize,
    pub actions_per_player: Vec<usize>,
    pub samples: Vec<PlaySample>,
    /// Standard deviation of the Gaussian payoff noise used to generate it.
    pub noise_stddev: f64,
    pub generator_seed: u64,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if self.actions_per_player.len() != self.num_players {
            return Err(Error::invalid("action counts do not match player count"));
        }
        for (idx, s) in self.samples.iter().enumerate() {
            if s.joint_action.len() != self.num_players
                || s.observed_payoffs.len() != self.num_players
            {
                return Err(Error::invalid(format!("sample {idx} has wrong arity")));
            }
            for (i, &a) in s.joint_action.iter().enumerate() {
                if a >= self.actions_per_player[i] {
                    return Err(Error::invalid(format!(
                        "sample {idx}: action {a} out of range for player {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Flat joint-profile index of a sample (row-major, player 0 slowest).
    pub fn joint_index(&self, sample: &PlaySample) -> usize {
        let mut idx = 0;
        for (a, &k) in sample.joint_action.iter().zip(&self.actions_per_player) {
            idx = idx * k + a;
        }
        idx
    }

    /// Lowest and highest observed payoff across all players and samples.
    pub fn payoff_extremes(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.samples {
            for &v in &s.observed_payoffs {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Serialize as JSON lines: a header line followed by one line per sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            players: self.num_players,
            actions: self.actions_per_player.clone(),
            r: self.noise_stddev,
            seed: self.generator_seed,
            m: self.samples.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let line = SampleLine {
                a: s.joint_action.clone(),
                v: s.observed_payoffs.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::invalid("empty dataset file"))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut samples = Vec::with_capacity(header.m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: SampleLine = serde_json::from_str(&line)?;
            samples.push(PlaySample {
                joint_action: s.a,
                observed_payoffs: s.v,
            });
        }
        if samples.len() != header.m {
            return Err(Error::invalid(format!(
                "header declares {} samples, file contains {}",
                header.m,
                samples.len()
            )));
        }
        let ds = Dataset {
            num_players: header.players,
            actions_per_player: header.actions,
            samples,
            noise_stddev: header.r,
            generator_seed: header.seed,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    players: usize,
    actions: Vec<usize>,
    #[serde(rename = "R")]
    r: f64,
    seed: u64,
    #[serde(rename = "M")]
    m: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    a: Vec<usize>,
    v: Vec<f64>,
}

/// The generating game, strategies, and rationality parameter behind a
/// dataset. Only the evaluation harness and the oracle-assisted NaiveNash
/// baseline may look at it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub game: Game,
    pub profile: MixedProfile,
    pub lambda: f64,
}

impl GroundTruth {
    pub fn new(game: Game, profile: MixedProfile, lambda: f64) -> Result<Self> {
        if profile.num_players() != game.num_players() {
            return Err(Error::invalid("profile does not match game"));
        }
        for i in 0..game.num_players() {
            if profile.strategy(i).len() != game.num_actions(i) {
                return Err(Error::invalid("profile does not match game"));
            }
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        Ok(GroundTruth {
            game,
            profile,
            lambda,
        })
    }
}

/// A game with every payoff drawn i.i.d. uniform on [lo, hi), `actions` pure
/// strategies per player. Deterministic per seed.
pub fn random_game(
    num_players: usize,
    actions: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<Game> {
    if num_players == 0 || actions == 0 {
        return Err(Error::invalid("players and actions must be positive"));
    }
    if !(lo < hi) {
        return Err(Error::invalid("payoff range requires lo < hi"));
    }
    let mut rng = SeededRng::new(seed);
    let profiles = actions.pow(num_players as u32);
    let payoffs: Vec<Vec<f64>> = (0..num_players)
        .map(|_| (0..profiles).map(|_| rng.uniform(lo, hi)).collect())
        .collect();
    Game::new(vec![actions; num_players], payoffs)
}

/// Simulate `m` observed plays: per sample each player draws an action from
/// their mixed strategy, then each player's payoff at the realized joint
/// profile is observed through N(0, noise_stddev^2) noise. Deterministic per
/// seed; draw order is actions player-by-player, then payoffs player-by-player.
pub fn sample_plays(
    truth: &GroundTruth,
    m: usize,
    noise_stddev: f64,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if !(noise_stddev > 0.0) {
        return Err(Error::invalid("noise_stddev must be positive"));
    }
    let game = &truth.game;
    let mut rng = SeededRng::new(seed);
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let joint: Vec<usize> = (0..game.num_players())
            .map(|i| rng.categorical(truth.profile.strategy(i)))
            .collect();
        let payoffs: Vec<f64> = (0..game.num_players())
            .map(|i| rng.normal(game.payoff(i, &joint), noise_stddev))
            .collect();
        samples.push(PlaySample {
            joint_action: joint,
            observed_payoffs: payoffs,
        });
    }
    Ok(Dataset {
        num_players: game.num_players(),
        actions_per_player: game.actions_per_player().to_vec(),
        samples,
        noise_stddev,
        generator_seed: seed,
    })
}

/// Sufficient statistics of a dataset: per-player action counts and, per
/// observed joint profile, each player's payoff observations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCounts {
    /// `action_counts[i][a]` = number of samples where player i played a.
    pub action_counts: Vec<Vec<usize>>,
    /// Joint profile index -> per-player lists of observed payoffs, in
    /// sample order.
    pub payoff_observations: BTreeMap<usize, Vec<Vec<f64>>>,
}

pub fn empirical_counts(dataset: &Dataset) -> Result<EmpiricalCounts> {
    dataset.validate()?;
    let mut action_counts: Vec<Vec<usize>> = dataset
        .actions_per_player
        .iter()
        .map(|&k| vec![0; k])
        .collect();
    let mut payoff_observations: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for s in &dataset.samples {
        for (i, &a) in s.joint_action.iter().enumerate() {
            action_counts[i][a] += 1;
        }
        let joint = dataset.joint_index(s);
        let per_player = payoff_observations
            .entry(joint)
            .or_insert_with(|| vec![Vec::new(); dataset.num_players]);
        for (i, &v) in s.observed_payoffs.iter().enumerate() {
            per_player[i].push(v);
        }
    }
    Ok(EmpiricalCounts {
        action_counts,
        payoff_observations,
    })
}
