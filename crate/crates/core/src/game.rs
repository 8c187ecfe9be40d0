//! Normal-form games, mixed strategies, expected payoffs, and the logit
//! response map.
//!
//! Joint pure profiles are flattened row-major with player 0 slowest-varying;
//! that one ordering is shared by payoff tensors, file formats, and the WCSP
//! compiler.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance for mixed-strategy simplex sums.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A finite N-player normal-form game.
///
/// `payoffs[i][j]` is player `i`'s payoff at the joint profile with flat
/// index `j` (row-major over player order).
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    actions: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

impl Game {
    pub fn new(actions: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("game must have at least one player"));
        }
        if actions.iter().any(|&k| k == 0) {
            return Err(Error::invalid("every player needs at least one action"));
        }
        let profiles: usize = actions.iter().product();
        if payoffs.len() != actions.len() {
            return Err(Error::invalid(format!(
                "expected {} payoff tensors, got {}",
                actions.len(),
                payoffs.len()
            )));
        }
        for (i, tensor) in payoffs.iter().enumerate() {
            if tensor.len() != profiles {
                return Err(Error::invalid(format!(
                    "player {i}: payoff tensor has {} entries, expected {profiles}",
                    tensor.len()
                )));
            }
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("player {i}: non-finite payoff")));
            }
        }
        Ok(Game { actions, payoffs })
    }

    pub fn num_players(&self) -> usize {
        self.actions.len()
    }

    pub fn num_actions(&self, player: usize) -> usize {
        self.actions[player]
    }

    pub fn actions_per_player(&self) -> &[usize] {
        &self.actions
    }

    pub fn num_profiles(&self) -> usize {
        self.actions.iter().product()
    }

    /// Flat index of a joint pure profile (player 0 slowest-varying).
    pub fn joint_index(&self, profile: &[usize]) -> usize {
        debug_assert_eq!(profile.len(), self.actions.len());
        let mut idx = 0;
        for (a, &k) in profile.iter().zip(&self.actions) {
            debug_assert!(*a < k);
            idx = idx * k + a;
        }
        idx
    }

    /// Inverse of [`joint_index`](Self::joint_index).
    pub fn profile_of_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.actions.len()];
        for i in (0..self.actions.len()).rev() {
            out[i] = idx % self.actions[i];
            idx /= self.actions[i];
        }
        out
    }

    /// Iterate all joint pure profiles in flat-index order.
    pub fn profiles(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.num_profiles()).map(|j| self.profile_of_index(j))
    }

    pub fn payoff(&self, player: usize, profile: &[usize]) -> f64 {
        self.payoffs[player][self.joint_index(profile)]
    }

    pub fn payoff_at(&self, player: usize, joint: usize) -> f64 {
        self.payoffs[player][joint]
    }

    pub fn payoff_tensor(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    fn check_player_action(&self, player: usize, action: usize) -> Result<()> {
        if player >= self.num_players() {
            return Err(Error::invalid(format!(
                "player index {player} out of range (N = {})",
                self.num_players()
            )));
        }
        if action >= self.actions[player] {
            return Err(Error::invalid(format!(
                "action {action} out of range for player {player} (|A| = {})",
                self.actions[player]
            )));
        }
        Ok(())
    }
}

/// JSON form: `{"players": N, "actions": [K_1..K_N], "payoffs": [[..] per player]}`.
#[derive(Serialize, Deserialize)]
struct GameJson {
    players: usize,
    actions: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

impl Serialize for Game {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GameJson {
            players: self.num_players(),
            actions: self.actions.clone(),
            payoffs: self.payoffs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Game {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GameJson::deserialize(d)?;
        if raw.players != raw.actions.len() {
            return Err(serde::de::Error::custom(format!(
                "players field is {} but {} action counts given",
                raw.players,
                raw.actions.len()
            )));
        }
        Game::new(raw.actions, raw.payoffs).map_err(serde::de::Error::custom)
    }
}

/// One mixed strategy per player.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MixedProfile {
    strategies: Vec<Vec<f64>>,
}

impl MixedProfile {
    pub fn new(strategies: Vec<Vec<f64>>) -> Result<Self> {
        for (i, sigma) in strategies.iter().enumerate() {
            if sigma.is_empty() {
                return Err(Error::invalid(format!("player {i}: empty strategy")));
            }
            if sigma.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!(
                    "player {i}: probability outside [0,1]"
                )));
            }
            let sum: f64 = sigma.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!(
                    "player {i}: probabilities sum to {sum}, not 1"
                )));
            }
        }
        Ok(MixedProfile { strategies })
    }

    /// The uniform profile for the given game shape.
    pub fn uniform(actions: &[usize]) -> Self {
        MixedProfile {
            strategies: actions.iter().map(|&k| vec![1.0 / k as f64; k]).collect(),
        }
    }

    pub fn strategy(&self, player: usize) -> &[f64] {
        &self.strategies[player]
    }

    pub fn strategies(&self) -> &[Vec<f64>] {
        &self.strategies
    }

    pub fn num_players(&self) -> usize {
        self.strategies.len()
    }

    pub fn prob(&self, player: usize, action: usize) -> f64 {
        self.strategies[player][action]
    }

    fn check_for_game(&self, game: &Game) -> Result<()> {
        if self.strategies.len() != game.num_players() {
            return Err(Error::invalid("profile has wrong number of players"));
        }
        for (i, sigma) in self.strategies.iter().enumerate() {
            if sigma.len() != game.num_actions(i) {
                return Err(Error::invalid(format!(
                    "player {i}: strategy has {} entries, game has {} actions",
                    sigma.len(),
                    game.num_actions(i)
                )));
            }
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for MixedProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<Vec<f64>>::deserialize(d)?;
        MixedProfile::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Expected payoff to `player` for playing `action` against the opponents'
/// mixed strategies in `profile` (the player's own mixing is ignored).
///
/// Sums over all opponent joint pure profiles: each term weighs the payoff
/// at (action, opponents) by the product of the opponents' probabilities.
pub fn expected_payoff(
    game: &Game,
    profile: &MixedProfile,
    player: usize,
    action: usize,
) -> Result<f64> {
    game.check_player_action(player, action)?;
    profile.check_for_game(game)?;
    Ok(expected_payoff_unchecked(game, profile, player, action))
}

pub(crate) fn expected_payoff_unchecked(
    game: &Game,
    profile: &MixedProfile,
    player: usize,
    action: usize,
) -> f64 {
    let n = game.num_players();
    let mut joint = vec![0usize; n];
    joint[player] = action;
    let mut total = 0.0;
    // Odometer over opponent actions, opponents ordered by player index so
    // the accumulation order is reproducible.
    loop {
        let mut weight = 1.0;
        for j in 0..n {
            if j != player {
                weight *= profile.prob(j, joint[j]);
            }
        }
        total += weight * game.payoff(player, &joint);

        // Advance the odometer, skipping `player`.
        let mut pos = n;
        for j in (0..n).rev() {
            if j == player {
                continue;
            }
            if joint[j] + 1 < game.num_actions(j) {
                pos = j;
                break;
            }
        }
        if pos == n {
            return total;
        }
        joint[pos] += 1;
        for j in pos + 1..n {
            if j != player {
                joint[j] = 0;
            }
        }
    }
}

/// Logit response of `player` to the opponents' strategies in `profile`:
/// softmax of lambda times the expected payoffs, computed with
/// max-subtraction so that lambda * payoff up to ~700 stays finite.
pub fn logit_response(
    game: &Game,
    profile: &MixedProfile,
    player: usize,
    lambda: f64,
) -> Result<Vec<f64>> {
    if player >= game.num_players() {
        return Err(Error::invalid("player index out of range"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    profile.check_for_game(game)?;
    let eps: Vec<f64> = (0..game.num_actions(player))
        .map(|a| expected_payoff_unchecked(game, profile, player, a))
        .collect();
    Ok(softmax_scaled(&eps, lambda))
}

/// Softmax of `lambda * values` with max-subtraction.
pub(crate) fn softmax_scaled(values: &[f64], lambda: f64) -> Vec<f64> {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (lambda * (v - m)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Worst violation of the logit fixed-point conditions, in the raw
/// exponentiated scale:
///
/// max over players i and actions k of
/// `| exp(lambda EP_i(k)) - sigma_i(k) * sum_j exp(lambda EP_i(j)) |`.
///
/// Zero exactly when `profile` is a lambda-LQRE.
pub fn lqre_residual(game: &Game, profile: &MixedProfile, lambda: f64) -> Result<f64> {
    profile.check_for_game(game)?;
    let mut worst: f64 = 0.0;
    for i in 0..game.num_players() {
        let eps: Vec<f64> = (0..game.num_actions(i))
            .map(|a| expected_payoff_unchecked(game, profile, i, a))
            .collect();
        let exps: Vec<f64> = eps.iter().map(|&e| (lambda * e).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, &e) in exps.iter().enumerate() {
            worst = worst.max((e - profile.prob(i, k) * sum).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn game_2x2(u1: [f64; 4], u2: [f64; 4]) -> Game {
        Game::new(vec![2, 2], vec![u1.to_vec(), u2.to_vec()]).unwrap()
    }

    #[test]
    fn joint_index_row_major() {
        let g = Game::new(vec![2, 3], vec![vec![0.0; 6], vec![0.0; 6]]).unwrap();
        assert_eq!(g.joint_index(&[0, 0]), 0);
        assert_eq!(g.joint_index(&[0, 2]), 2);
        assert_eq!(g.joint_index(&[1, 0]), 3);
        assert_eq!(g.profile_of_index(5), vec![1, 2]);
    }

    #[test]
    fn rejects_wrong_tensor_size() {
        assert!(Game::new(vec![2, 2], vec![vec![0.0; 3], vec![0.0; 4]]).is_err());
        assert!(Game::new(vec![2, 2], vec![vec![f64::NAN; 4], vec![0.0; 4]]).is_err());
    }

    #[test]
    fn expected_payoff_linear_mixture() {
        // u_1(a_1,b_1)=1, u_1(a_1,b_2)=2; opponent mixes (0.5, 0.5).
        let g = game_2x2([1.0, 2.0, 0.0, 0.0], [0.0; 4]);
        let p = MixedProfile::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!((expected_payoff(&g, &p, 0, 0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn expected_payoff_degenerate_opponent() {
        let g = game_2x2([1.0, 2.0, 3.0, 4.0], [0.0; 4]);
        let p = MixedProfile::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert_eq!(expected_payoff(&g, &p, 0, 0).unwrap(), 1.0);
        assert_eq!(expected_payoff(&g, &p, 0, 1).unwrap(), 3.0);
    }

    #[test]
    fn expected_payoff_three_player_uniform_is_mean() {
        // 3 players, 2 actions; uniform opponents: EP = mean of the 4
        // entries with the player's action fixed. Oracle: direct sum.
        let tensors: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..8).map(|j| ((i + 1) * (j + 3)) as f64 * 0.25).collect())
            .collect();
        let g = Game::new(vec![2, 2, 2], tensors).unwrap();
        let p = MixedProfile::uniform(&[2, 2, 2]);
        for player in 0..3 {
            for action in 0..2 {
                let mut brute = 0.0;
                for j in 0..8 {
                    let prof = g.profile_of_index(j);
                    if prof[player] == action {
                        brute += 0.25 * g.payoff_at(player, j);
                    }
                }
                let got = expected_payoff(&g, &p, player, action).unwrap();
                assert!((got - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expected_payoff_rejects_bad_indices() {
        let g = game_2x2([0.0; 4], [0.0; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        assert!(expected_payoff(&g, &p, 2, 0).is_err());
        assert!(expected_payoff(&g, &p, 0, 2).is_err());
    }

    #[test]
    fn logit_lambda_zero_uniform() {
        let g = game_2x2([5.0, -3.0, 2.0, 9.0], [1.0; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        let r = logit_response(&g, &p, 0, 0.0).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn logit_known_values() {
        // EPs (1, 2) at lambda=1: (1/(1+e), e/(1+e)).
        let g = game_2x2([1.0, 1.0, 2.0, 2.0], [0.0; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        let r = logit_response(&g, &p, 0, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((r[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_equal_payoffs_uniform_any_lambda() {
        let g = game_2x2([1.5; 4], [1.5; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        for lambda in [0.0, 1.0, 17.0, 300.0] {
            let r = logit_response(&g, &p, 0, lambda).unwrap();
            assert_eq!(r, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn logit_monotone_in_expected_payoff() {
        let g = game_2x2([1.0, 1.0, 1.2, 1.2], [0.0; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        let r = logit_response(&g, &p, 0, 3.0).unwrap();
        assert!(r[1] > r[0]);
    }

    #[test]
    fn residual_zero_at_lambda_zero_uniform() {
        let g = game_2x2([1.3, 1.9, 1.1, 1.4], [1.0, 1.8, 1.2, 1.6]);
        let p = MixedProfile::uniform(&[2, 2]);
        assert_eq!(lqre_residual(&g, &p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn residual_zero_for_flat_game() {
        let g = game_2x2([1.0; 4], [1.0; 4]);
        let p = MixedProfile::uniform(&[2, 2]);
        for lambda in [0.5, 2.0, 10.0] {
            assert!(lqre_residual(&g, &p, lambda).unwrap() < 1e-12);
        }
    }

    #[test]
    fn game_json_round_trip() {
        let g = game_2x2([1.25, 1.5, 1.75, 2.0], [1.1, 1.2, 1.3, 1.4]);
        let text = serde_json::to_string(&g).unwrap();
        let back: Game = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);

        let p = MixedProfile::new(vec![vec![0.3, 0.7], vec![0.45, 0.55]]).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: MixedProfile = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn profile_validation() {
        assert!(MixedProfile::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(MixedProfile::new(vec![vec![1.1, -0.1]]).is_err());
        assert!(MixedProfile::new(vec![vec![0.5, 0.5], vec![]]).is_err());
    }
}
