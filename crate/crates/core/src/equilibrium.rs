//! Equilibrium computation: logit quantal response equilibria by homotopy
//! continuation from the centroid, and Nash equilibria of 2x2 games by
//! support enumeration.

use crate::game::{
    expected_payoff_unchecked, logit_response, lqre_residual, softmax_scaled, Game, MixedProfile,
};
use crate::{Error, Result};

/// Parameters for [`solve_lqre`].
#[derive(Debug, Clone)]
pub struct LqreConfig {
    /// The lambda at which the equilibrium is wanted.
    pub lambda_target: f64,
    /// Number of equal lambda increments from 0 to the target.
    pub path_steps: usize,
    /// Initial damping factor in (0, 1] for the fixed-point iteration.
    pub damping: f64,
    /// Iteration cap per homotopy step.
    pub max_iters_per_step: usize,
    /// L-infinity change below which a step counts as converged.
    pub tolerance: f64,
}

impl LqreConfig {
    pub fn new(lambda_target: f64) -> Result<Self> {
        if !(lambda_target >= 0.0) {
            return Err(Error::invalid("lambda_target must be nonnegative"));
        }
        Ok(LqreConfig {
            lambda_target,
            path_steps: 50,
            damping: 0.5,
            max_iters_per_step: 10_000,
            tolerance: 1e-10,
        })
    }
}

/// Track the principal LQRE branch from the lambda = 0 centroid to
/// `config.lambda_target`.
///
/// At each lambda on the path the profile is updated by damped fixed-point
/// iteration on the logit response until the L-infinity change falls below
/// `config.tolerance`. If a step stalls, it is retried with halved damping
/// (strongly mixed games make the undamped map expansive at large lambda).
/// After the last step a Newton polish drives the fixed point to machine
/// precision so the raw-scale residual stays small even when the
/// exponentials are large.
pub fn solve_lqre(game: &Game, config: &LqreConfig) -> Result<MixedProfile> {
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    if config.tolerance <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if config.path_steps == 0 {
        return Err(Error::invalid("path_steps must be positive"));
    }
    let actions = game.actions_per_player().to_vec();
    let mut sigma = MixedProfile::uniform(&actions);
    if config.lambda_target == 0.0 {
        return Ok(sigma);
    }

    for step in 1..=config.path_steps {
        let lambda = config.lambda_target * step as f64 / config.path_steps as f64;
        sigma = converge_at_lambda(game, sigma, lambda, config)?;
    }

    // Polish at the target lambda: quadratic convergence pushes the
    // fixed-point error to the floating-point floor.
    sigma = newton_polish(game, sigma, config.lambda_target);
    Ok(sigma)
}

fn converge_at_lambda(
    game: &Game,
    start: MixedProfile,
    lambda: f64,
    config: &LqreConfig,
) -> Result<MixedProfile> {
    let mut damping = config.damping;
    for _attempt in 0..8 {
        let mut sigma = start.clone();
        for _ in 0..config.max_iters_per_step {
            let (next, change) = damped_step(game, &sigma, lambda, damping);
            sigma = next;
            if change < config.tolerance {
                return Ok(sigma);
            }
        }
        damping *= 0.5;
    }
    let residual = lqre_residual(game, &start, lambda).unwrap_or(f64::NAN);
    Err(Error::Convergence {
        lambda,
        residual,
        iterations: config.max_iters_per_step,
    })
}

fn damped_step(
    game: &Game,
    sigma: &MixedProfile,
    lambda: f64,
    damping: f64,
) -> (MixedProfile, f64) {
    let mut change: f64 = 0.0;
    let mut next = Vec::with_capacity(game.num_players());
    for i in 0..game.num_players() {
        let response = logit_response(game, sigma, i, lambda).expect("validated inputs");
        let mixed: Vec<f64> = response
            .iter()
            .zip(sigma.strategy(i))
            .map(|(&r, &s)| (1.0 - damping) * s + damping * r)
            .collect();
        for (m, s) in mixed.iter().zip(sigma.strategy(i)) {
            change = change.max((m - s).abs());
        }
        next.push(mixed);
    }
    (
        MixedProfile::new(next).expect("damped mix of distributions stays on the simplex"),
        change,
    )
}

/// Reduced coordinates: per player, all probabilities but the last (which is
/// one minus the rest). Newton's method on sigma - logit(sigma) = 0.
fn newton_polish(game: &Game, start: MixedProfile, lambda: f64) -> MixedProfile {
    let actions = game.actions_per_player().to_vec();
    let dim: usize = actions.iter().map(|k| k - 1).sum();
    if dim == 0 {
        return start;
    }
    let mut best = start.clone();
    let mut best_res = lqre_residual(game, &best, lambda).unwrap_or(f64::INFINITY);
    let mut x = to_reduced(&best, &actions);

    for _ in 0..40 {
        let f0 = match reduced_residual_map(game, &x, &actions, lambda) {
            Some(f) => f,
            None => break,
        };
        // Finite-difference Jacobian.
        let h = 1e-7;
        let mut jac = vec![vec![0.0; dim]; dim];
        let mut ok = true;
        for c in 0..dim {
            let mut xp = x.clone();
            xp[c] += h;
            match reduced_residual_map(game, &xp, &actions, lambda) {
                Some(fp) => {
                    for r in 0..dim {
                        jac[r][c] = (fp[r] - f0[r]) / h;
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let delta = match solve_linear(&mut jac, &f0) {
            Some(d) => d,
            None => break,
        };
        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi -= di;
        }
        let candidate = match from_reduced(&x, &actions) {
            Some(p) => p,
            None => break,
        };
        let res = lqre_residual(game, &candidate, lambda).unwrap_or(f64::INFINITY);
        if res < best_res {
            best_res = res;
            best = candidate;
        } else {
            break;
        }
        if best_res == 0.0 {
            break;
        }
    }
    best
}

fn to_reduced(profile: &MixedProfile, actions: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &k) in actions.iter().enumerate() {
        out.extend_from_slice(&profile.strategy(i)[..k - 1]);
    }
    out
}

fn from_reduced(x: &[f64], actions: &[usize]) -> Option<MixedProfile> {
    let mut strategies = Vec::with_capacity(actions.len());
    let mut pos = 0;
    for &k in actions {
        let head = &x[pos..pos + k - 1];
        pos += k - 1;
        let mut sigma: Vec<f64> = head.to_vec();
        let rest = 1.0 - head.iter().sum::<f64>();
        sigma.push(rest);
        if sigma.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return None;
        }
        strategies.push(sigma);
    }
    MixedProfile::new(strategies).ok()
}

/// sigma - logit_response(sigma), in reduced coordinates.
fn reduced_residual_map(
    game: &Game,
    x: &[f64],
    actions: &[usize],
    lambda: f64,
) -> Option<Vec<f64>> {
    let profile = from_reduced(x, actions)?;
    let mut out = Vec::with_capacity(x.len());
    for (i, &k) in actions.iter().enumerate() {
        let eps: Vec<f64> = (0..k)
            .map(|a| expected_payoff_unchecked(game, &profile, i, a))
            .collect();
        let response = softmax_scaled(&eps, lambda);
        for a in 0..k - 1 {
            out.push(profile.prob(i, a) - response[a]);
        }
    }
    Some(out)
}

/// Gaussian elimination with partial pivoting; None on a singular system.
fn solve_linear(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r1, &r2| {
            a[r1][col]
                .abs()
                .partial_cmp(&a[r2][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col][col];
        for row in 0..col {
            x[row] -= a[row][col] * x[col];
        }
    }
    Some(x)
}

/// All Nash equilibria of a 2x2 game by support enumeration: the four pure
/// profiles plus the interior mixed equilibrium from the indifference
/// conditions when it exists.
pub fn solve_nash_2x2(game: &Game) -> Result<Vec<MixedProfile>> {
    if game.num_players() != 2 || game.num_actions(0) != 2 || game.num_actions(1) != 2 {
        return Err(Error::invalid("Nash solver requires a 2x2 game"));
    }
    let u = |i: usize, a: usize, b: usize| game.payoff(i, &[a, b]);
    let mut found = Vec::new();

    // Pure profiles: no profitable unilateral pure deviation.
    for a in 0..2 {
        for b in 0..2 {
            let p1_ok = u(0, a, b) >= u(0, 1 - a, b) - 1e-12;
            let p2_ok = u(1, a, b) >= u(1, a, 1 - b) - 1e-12;
            if p1_ok && p2_ok {
                let mut s1 = vec![0.0, 0.0];
                let mut s2 = vec![0.0, 0.0];
                s1[a] = 1.0;
                s2[b] = 1.0;
                found.push(MixedProfile::new(vec![s1, s2]).unwrap());
            }
        }
    }

    // Interior mixed equilibrium: q makes player 1 indifferent, p makes
    // player 2 indifferent.
    let d1 = u(0, 0, 0) - u(0, 0, 1) - u(0, 1, 0) + u(0, 1, 1);
    let d2 = u(1, 0, 0) - u(1, 1, 0) - u(1, 0, 1) + u(1, 1, 1);
    if d1.abs() > 1e-12 && d2.abs() > 1e-12 {
        let q = (u(0, 1, 1) - u(0, 0, 1)) / d1;
        let p = (u(1, 1, 1) - u(1, 1, 0)) / d2;
        if p > 1e-9 && p < 1.0 - 1e-9 && q > 1e-9 && q < 1.0 - 1e-9 {
            found.push(MixedProfile::new(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]).unwrap());
        }
    }

    if found.is_empty() {
        return Err(Error::Internal(
            "no equilibrium found for a 2x2 game, which contradicts Nash existence".into(),
        ));
    }
    Ok(found)
}

/// Best-response gain: the most a single player can add to their expected
/// payoff by a unilateral deviation. Zero (to fp noise) at a Nash
/// equilibrium; used by tests and the deviation-check invariant.
pub fn best_unilateral_gain(game: &Game, profile: &MixedProfile) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..game.num_players() {
        let current: f64 = (0..game.num_actions(i))
            .map(|a| profile.prob(i, a) * expected_payoff_unchecked(game, profile, i, a))
            .sum();
        for a in 0..game.num_actions(i) {
            let ep = crate::game::expected_payoff(game, profile, i, a)?;
            worst = worst.max(ep - current);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::lqre_residual;

    fn game_2x2(u1: [f64; 4], u2: [f64; 4]) -> Game {
        Game::new(vec![2, 2], vec![u1.to_vec(), u2.to_vec()]).unwrap()
    }

    /// Matching pennies shifted into [1, 2].
    fn matching_pennies() -> Game {
        game_2x2([2.0, 1.0, 1.0, 2.0], [1.0, 2.0, 2.0, 1.0])
    }

    /// Action 0 strictly dominates for both players.
    fn dominant_game() -> Game {
        game_2x2([2.0, 1.8, 1.2, 1.0], [2.0, 1.2, 1.8, 1.0])
    }

    #[test]
    fn lqre_lambda_zero_is_uniform() {
        let g = matching_pennies();
        let cfg = LqreConfig::new(0.0).unwrap();
        let p = solve_lqre(&g, &cfg).unwrap();
        assert_eq!(p.strategy(0), &[0.5, 0.5]);
        assert_eq!(p.strategy(1), &[0.5, 0.5]);
    }

    #[test]
    fn lqre_dominant_action_gets_mass() {
        let g = dominant_game();
        let cfg = LqreConfig::new(50.0).unwrap();
        let p = solve_lqre(&g, &cfg).unwrap();
        assert!(p.prob(0, 0) > 0.99, "sigma_1 = {:?}", p.strategy(0));
        assert!(p.prob(1, 0) > 0.99, "sigma_2 = {:?}", p.strategy(1));
        // The raw-scale residual is only resolvable while exp(lambda * EP)
        // has ulps below the tolerance, so check it at moderate lambda.
        let cfg = LqreConfig::new(3.0).unwrap();
        let p = solve_lqre(&g, &cfg).unwrap();
        assert!(lqre_residual(&g, &p, 3.0).unwrap() < 1e-6);
    }

    #[test]
    fn lqre_symmetric_game_stays_centered() {
        let g = matching_pennies();
        for lambda in [0.5, 1.0, 3.0, 10.0] {
            let cfg = LqreConfig::new(lambda).unwrap();
            let p = solve_lqre(&g, &cfg).unwrap();
            assert!((p.prob(0, 0) - 0.5).abs() < 1e-9, "lambda {lambda}");
            assert!((p.prob(1, 0) - 0.5).abs() < 1e-9, "lambda {lambda}");
        }
    }

    #[test]
    fn lqre_residual_small_for_random_games() {
        use crate::data::random_game;
        for seed in 0..25 {
            let g = random_game(2, 2, 1.0, 2.0, seed).unwrap();
            for lambda in [0.5, 1.0, 3.0, 10.0] {
                let cfg = LqreConfig::new(lambda).unwrap();
                let p = solve_lqre(&g, &cfg).unwrap();
                let r = lqre_residual(&g, &p, lambda).unwrap();
                assert!(r < 1e-6, "seed {seed} lambda {lambda}: residual {r:.3e}");
            }
        }
    }

    #[test]
    fn lqre_deterministic() {
        let g = matching_pennies();
        let cfg = LqreConfig::new(3.0).unwrap();
        let a = solve_lqre(&g, &cfg).unwrap();
        let b = solve_lqre(&g, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lqre_reports_non_convergence() {
        // One iteration per step cannot move the profile from uniform to
        // the equilibrium; the error carries the failing step's lambda.
        let g = dominant_game();
        let mut cfg = LqreConfig::new(60.0).unwrap();
        cfg.path_steps = 2;
        cfg.max_iters_per_step = 1;
        match solve_lqre(&g, &cfg) {
            Err(crate::Error::Convergence { lambda, .. }) => {
                assert!(lambda > 0.0 && lambda <= 60.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn lqre_rejects_bad_config() {
        let g = matching_pennies();
        let mut cfg = LqreConfig::new(1.0).unwrap();
        cfg.damping = 0.0;
        assert!(solve_lqre(&g, &cfg).is_err());
        let mut cfg = LqreConfig::new(1.0).unwrap();
        cfg.tolerance = 0.0;
        assert!(solve_lqre(&g, &cfg).is_err());
        assert!(LqreConfig::new(-1.0).is_err());
    }

    #[test]
    fn nash_profiles_resist_grid_deviations() {
        use crate::data::random_game;
        for seed in 0..20 {
            let g = random_game(2, 2, 1.0, 2.0, seed).unwrap();
            for e in solve_nash_2x2(&g).unwrap() {
                for i in 0..2 {
                    let current: f64 = (0..2)
                        .map(|a| e.prob(i, a) * expected_payoff_unchecked(&g, &e, i, a))
                        .sum();
                    let mut step = 0.0;
                    while step <= 1.0 {
                        let dev = MixedProfile::new(if i == 0 {
                            vec![vec![step, 1.0 - step], e.strategy(1).to_vec()]
                        } else {
                            vec![e.strategy(0).to_vec(), vec![step, 1.0 - step]]
                        })
                        .unwrap();
                        let dev_payoff: f64 = (0..2)
                            .map(|a| dev.prob(i, a) * expected_payoff_unchecked(&g, &dev, i, a))
                            .sum();
                        assert!(
                            dev_payoff <= current + 1e-9,
                            "seed {seed}: deviation to {step} gains {}",
                            dev_payoff - current
                        );
                        step += 0.01;
                    }
                }
            }
        }
    }

    #[test]
    fn nash_matching_pennies_unique_mixed() {
        let eqs = solve_nash_2x2(&matching_pennies()).unwrap();
        assert_eq!(eqs.len(), 1);
        let e = &eqs[0];
        assert!((e.prob(0, 0) - 0.5).abs() < 1e-12);
        assert!((e.prob(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nash_dominant_unique_pure() {
        let eqs = solve_nash_2x2(&dominant_game()).unwrap();
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].prob(0, 0), 1.0);
        assert_eq!(eqs[0].prob(1, 0), 1.0);
    }

    #[test]
    fn nash_coordination_three_equilibria() {
        // Both prefer matching; two pure equilibria and one mixed.
        let g = game_2x2([2.0, 1.0, 1.0, 1.8], [2.0, 1.0, 1.0, 1.8]);
        let eqs = solve_nash_2x2(&g).unwrap();
        assert_eq!(eqs.len(), 3);
        // Verify no profitable deviation by brute force over grid deviations.
        for e in &eqs {
            for i in 0..2 {
                let current: f64 = (0..2)
                    .map(|a| e.prob(i, a) * expected_payoff_unchecked(&g, e, i, a))
                    .sum();
                let mut step = 0.0;
                while step <= 1.0 {
                    let dev = MixedProfile::new(if i == 0 {
                        vec![vec![step, 1.0 - step], e.strategy(1).to_vec()]
                    } else {
                        vec![e.strategy(0).to_vec(), vec![step, 1.0 - step]]
                    })
                    .unwrap();
                    let dev_payoff: f64 = (0..2)
                        .map(|a| dev.prob(i, a) * expected_payoff_unchecked(&g, &dev, i, a))
                        .sum();
                    assert!(dev_payoff <= current + 1e-9);
                    step += 0.01;
                }
            }
        }
    }

    #[test]
    fn nash_rejects_non_2x2() {
        let g = Game::new(vec![2, 3], vec![vec![0.0; 6], vec![0.0; 6]]).unwrap();
        assert!(solve_nash_2x2(&g).is_err());
    }

    #[test]
    fn lqre_converges_to_nash_for_dominance_solvable() {
        use crate::data::random_game;
        let mut checked = 0;
        let mut seed = 0;
        while checked < 10 && seed < 500 {
            let g = random_game(2, 2, 1.0, 2.0, seed).unwrap();
            seed += 1;
            // Strict dominance with margin: at lambda = 100 the logit mass
            // off the dominant action is at most 1/(1 + e^(100 * margin)),
            // so a 0.05 margin guarantees the 0.01 tolerance.
            if dominance_margin(&g) < 0.05 {
                continue;
            }
            checked += 1;
            let eqs = solve_nash_2x2(&g).unwrap();
            assert_eq!(eqs.len(), 1, "dominant games have a unique equilibrium");
            let cfg = LqreConfig::new(100.0).unwrap();
            let p = solve_lqre(&g, &cfg).unwrap();
            for i in 0..2 {
                for a in 0..2 {
                    assert!(
                        (p.prob(i, a) - eqs[0].prob(i, a)).abs() < 0.01,
                        "seed {}: lqre {:?} vs nash {:?}",
                        seed - 1,
                        p.strategies(),
                        eqs[0].strategies()
                    );
                }
            }
        }
        assert!(checked >= 10, "not enough dominant-margin games found");
    }
}

/// Worst-case margin by which some action strictly dominates for each
/// player of a 2x2 game; nonpositive when either player lacks a strictly
/// dominant action.
pub fn dominance_margin(game: &Game) -> f64 {
    let u = |i: usize, a: usize, b: usize| {
        if i == 0 {
            game.payoff(0, &[a, b])
        } else {
            game.payoff(1, &[b, a])
        }
    };
    let mut overall = f64::INFINITY;
    for i in 0..2 {
        let mut best = f64::NEG_INFINITY;
        for a in 0..2 {
            let margin = (0..2)
                .map(|b| u(i, a, b) - u(i, 1 - a, b))
                .fold(f64::INFINITY, f64::min);
            best = best.max(margin);
        }
        overall = overall.min(best);
    }
    overall
}
