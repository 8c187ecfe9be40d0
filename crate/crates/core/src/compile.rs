//! Compile a dataset plus learner configuration into a WCSP whose soft
//! costs balance maximum-likelihood data fit against logit-quantal-response
//! rationality.
//!
//! Two compilations of the same learning problem are supported:
//!
//! * **monolithic** — one soft rationality constraint per (player, action)
//!   over its full scope, and one K-ary simplex hard constraint per player;
//! * **decomposed** — the same objective expressed through chains of
//!   ternary functional constraints over auxiliary variables (partial sums
//!   for the simplex; product, sum, and exponential chains for the
//!   rationality terms, with the exponential terms shared between the
//!   numerator and the denominator).
//!
//! Auxiliary values are forced functionally from their parents, so both
//! compilations have identical optimal cost.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{empirical_counts, Dataset, EmpiricalCounts};
use crate::learn::{Estimate, Method};
use crate::wcsp::{Func, HardForm, SoftForm, Solution, VarIdx, Wcsp};
use crate::{Error, Result};

/// Simplex tolerance shared by the monolithic hard constraint and the
/// decomposed chain's terminal check.
const SUM_TOL: f64 = 1e-9;

/// Learner parameters.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// Rationality parameter used for learning.
    pub lambda: f64,
    /// Weight of the rationality constraints.
    pub alpha: f64,
    /// Strategy probability increment (1/strategy_step must be an integer).
    pub strategy_step: f64,
    /// Payoff value increment.
    pub payoff_step: f64,
    /// Assumed payoff noise standard deviation.
    pub noise_stddev: f64,
    /// Finite stand-in for -log(0) in strategy likelihood tables.
    pub log_zero_cap: f64,
    /// Emit the ternary-decomposed compilation instead of the monolithic one.
    pub decomposed: bool,
    /// Restrict rationality constraints to actions that appear in the data
    /// (an alternative reading of the observed-profiles restriction; off by
    /// default).
    pub rationality_only_observed_actions: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            lambda: 3.0,
            alpha: 100.0,
            strategy_step: 0.05,
            payoff_step: 0.1,
            noise_stddev: 0.7,
            log_zero_cap: 1e6,
            decomposed: true,
            rationality_only_observed_actions: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        if !(self.strategy_step > 0.0 && self.strategy_step <= 1.0) {
            return Err(Error::invalid("strategy_step must lie in (0, 1]"));
        }
        let n = 1.0 / self.strategy_step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::invalid(
                "1/strategy_step must be an integer so the grid contains 0 and 1",
            ));
        }
        if !(self.payoff_step > 0.0) {
            return Err(Error::invalid("payoff_step must be positive"));
        }
        if !(self.noise_stddev > 0.0) {
            return Err(Error::invalid("noise_stddev must be positive"));
        }
        if !(self.log_zero_cap > 0.0) {
            return Err(Error::invalid("log_zero_cap must be positive"));
        }
        Ok(())
    }

    /// Number of strategy grid intervals (1/strategy_step).
    pub fn strategy_grid_len(&self) -> usize {
        (1.0 / self.strategy_step).round() as usize + 1
    }
}

/// Where each quantity of the learning problem lives inside the WCSP.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    /// strategy_vars[player][action]
    pub strategy_vars: Vec<Vec<VarIdx>>,
    /// (player, joint profile index) -> payoff variable. Only observed
    /// profiles get variables.
    pub payoff_vars: BTreeMap<(usize, usize), VarIdx>,
    /// All auxiliary variables introduced by decompositions.
    pub aux_vars: Vec<VarIdx>,
    /// Variable ids, indexed by VarIdx (for reading solutions back).
    pub ids: Vec<String>,
    /// Shared strategy grid {0, eps, ..., 1}.
    pub strategy_grid: Vec<f64>,
    /// Shared payoff grid {u_min, u_min + delta, ..., >= u_max}.
    pub payoff_grid: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    /// Observed joint profile indices, ascending.
    pub observed_profiles: Vec<usize>,
    pub actions_per_player: Vec<usize>,
}

/// Negative log-likelihood of `count` observations of an action given its
/// grid probability `value`; log(0) is capped at `cap`.
pub fn strategy_ml_cost(count: usize, value: f64, cap: f64) -> f64 {
    if count == 0 {
        0.0
    } else if value <= 0.0 {
        cap
    } else {
        -(count as f64) * value.ln()
    }
}

/// Gaussian negative log-likelihood of observed payoffs given the grid mean
/// `value`; the constant term ln(R sqrt(2 pi)) per observation is retained.
pub fn payoff_ml_cost(observations: &[f64], value: f64, noise_stddev: f64) -> f64 {
    let norm = (noise_stddev * (2.0 * std::f64::consts::PI).sqrt()).ln();
    observations
        .iter()
        .map(|v| (v - value) * (v - value) / (2.0 * noise_stddev * noise_stddev) + norm)
        .sum()
}

/// Rationality cost for one (player, action): the absolute deviation of
/// `sigma_ik` from the logit response implied by the payoff entries, scaled
/// by `alpha`, with expected payoffs summed only over the profiles provided
/// in `payoff_terms` (one list per own action: (opponent actions, payoff)).
///
/// The accumulation order (opponent products left to right, profile terms
/// in the given order, exponential sums in action order) matches the
/// decomposed chains, so both compilations compute bit-identical costs.
pub fn rationality_cost(
    sigma_ik: f64,
    action_k: usize,
    opp_strategies: &[&[f64]],
    payoff_terms: &[Vec<(Vec<usize>, f64)>],
    lambda: f64,
    alpha: f64,
) -> f64 {
    let mut denom = 0.0;
    let mut numer = 0.0;
    for (j, terms) in payoff_terms.iter().enumerate() {
        let z = exp_term(terms, opp_strategies, lambda);
        denom += z;
        if j == action_k {
            numer = z;
        }
    }
    alpha * (numer - sigma_ik * denom).abs()
}

fn exp_term(terms: &[(Vec<usize>, f64)], opp_strategies: &[&[f64]], lambda: f64) -> f64 {
    let mut ep = 0.0;
    for (opp_actions, u) in terms {
        let mut p = 1.0;
        for (s, &a) in opp_strategies.iter().zip(opp_actions) {
            p *= s[a];
        }
        ep += p * u;
    }
    (lambda * ep).exp()
}

/// Compile `dataset` into a WCSP under `config`.
pub fn build_wcsp(dataset: &Dataset, config: &LearnerConfig) -> Result<(Wcsp, VariableLayout)> {
    config.validate()?;
    dataset.validate()?;
    let counts = empirical_counts(dataset)?;
    if counts.payoff_observations.is_empty() {
        return Err(Error::invalid("dataset has no payoff observations"));
    }

    let mut w = Wcsp::new();
    let players = dataset.num_players;
    let actions = dataset.actions_per_player.clone();

    // Grids. Strategy values are k/n so that decimals like 0.7 match their
    // shortest representation; the payoff grid extends past u_max so the
    // final step covers it.
    let n = (1.0 / config.strategy_step).round() as usize;
    let strategy_grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let (u_min, u_max) = dataset.payoff_extremes();
    let delta = config.payoff_step;
    // delta-lattice anchored at u_min, strictly inside [u_min, u_max); the
    // final step extends to u_max itself so the observed extremes are both
    // representable and no grid point leaves the observed range.
    let mut payoff_grid: Vec<f64> = Vec::new();
    let mut m = 0usize;
    loop {
        let v = u_min + m as f64 * delta;
        if v >= u_max {
            break;
        }
        payoff_grid.push(v);
        m += 1;
    }
    payoff_grid.push(u_max);

    // Strategy variables, declaration order (player, action).
    let mut strategy_vars: Vec<Vec<VarIdx>> = Vec::with_capacity(players);
    for i in 0..players {
        let mut per_action = Vec::with_capacity(actions[i]);
        for a in 0..actions[i] {
            per_action.push(w.add_variable(format!("s{i}_{a}"), strategy_grid.clone())?);
        }
        strategy_vars.push(per_action);
    }

    // Payoff variables for observed profiles only, grouped per player so
    // each player's rationality scope closes as early as possible.
    let observed_profiles: Vec<usize> = counts.payoff_observations.keys().copied().collect();
    let mut payoff_vars: BTreeMap<(usize, usize), VarIdx> = BTreeMap::new();
    for i in 0..players {
        for &joint in &observed_profiles {
            let v = w.add_variable(format!("u{i}_{joint}"), payoff_grid.clone())?;
            payoff_vars.insert((i, joint), v);
        }
    }

    let mut aux_vars: Vec<VarIdx> = Vec::new();

    // Strategy maximum-likelihood soft constraints (unary tables).
    for i in 0..players {
        for a in 0..actions[i] {
            let table: Vec<f64> = strategy_grid
                .iter()
                .map(|&p| strategy_ml_cost(counts.action_counts[i][a], p, config.log_zero_cap))
                .collect();
            w.add_soft(
                format!("strategy_ml_{i}_{a}"),
                &[strategy_vars[i][a]],
                SoftForm::Table(table),
            )?;
        }
    }

    // Strategy consistency (simplex) constraints.
    for i in 0..players {
        if !config.decomposed || actions[i] == 1 {
            if actions[i] == 1 {
                w.add_hard(
                    format!("simplex_{i}"),
                    &[strategy_vars[i][0]],
                    HardForm::ValueEquals {
                        target: 1.0,
                        tol: SUM_TOL,
                    },
                )?;
            } else {
                w.add_hard(
                    format!("simplex_{i}"),
                    &strategy_vars[i],
                    HardForm::SumEquals {
                        target: 1.0,
                        tol: SUM_TOL,
                    },
                )?;
            }
        } else {
            // Chain of ternary partial sums t_a = t_{a-1} + sigma_i(a),
            // each with the exact reachable (and still completable) values
            // as its domain; the final sum must equal 1.
            let mut reachable: Vec<f64> = strategy_grid.clone();
            let mut prev = strategy_vars[i][0];
            for a in 1..actions[i] {
                let mut next: Vec<f64> = Vec::new();
                for &t in &reachable {
                    for &g in &strategy_grid {
                        let s = t + g;
                        if s <= 1.0 + SUM_TOL {
                            next.push(s);
                        }
                    }
                }
                next.sort_by(|x, y| x.partial_cmp(y).unwrap());
                next.dedup();
                let t_var = w.add_forced_variable_with_domain(format!("t{i}_{a}"), next.clone())?;
                w.add_functional(
                    format!("partial_sum_{i}_{a}"),
                    &[prev, strategy_vars[i][a]],
                    t_var,
                    Func::Sum,
                )?;
                aux_vars.push(t_var);
                reachable = next;
                prev = t_var;
            }
            w.add_hard(
                format!("simplex_{i}"),
                &[prev],
                HardForm::ValueEquals {
                    target: 1.0,
                    tol: SUM_TOL,
                },
            )?;
        }
    }

    // Payoff maximum-likelihood soft constraints (unary tables).
    for (&(i, joint), &var) in &payoff_vars {
        let obs = &counts.payoff_observations[&joint][i];
        let table: Vec<f64> = payoff_grid
            .iter()
            .map(|&u| payoff_ml_cost(obs, u, config.noise_stddev))
            .collect();
        w.add_soft(
            format!("payoff_ml_{i}_{joint}"),
            &[var],
            SoftForm::Table(table),
        )?;
    }

    // Rationality constraints. With alpha = 0 every cost is identically
    // zero, so nothing is emitted and the optimum is unchanged.
    if config.alpha > 0.0 {
        for i in 0..players {
            emit_rationality(
                &mut w,
                &mut aux_vars,
                dataset,
                config,
                &counts,
                &strategy_vars,
                &payoff_vars,
                &observed_profiles,
                i,
            )?;
        }
    }

    let ids: Vec<String> = w.variables().iter().map(|v| v.id.clone()).collect();
    let layout = VariableLayout {
        strategy_vars,
        payoff_vars,
        aux_vars,
        ids,
        strategy_grid,
        payoff_grid,
        u_min,
        u_max,
        observed_profiles,
        actions_per_player: actions,
    };
    Ok((w, layout))
}

/// Opponent profile enumeration for player `i`: all joint assignments of
/// the other players, row-major in player order.
fn opponent_profiles(actions: &[usize], player: usize) -> Vec<Vec<usize>> {
    let opp_counts: Vec<usize> = actions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != player)
        .map(|(_, &k)| k)
        .collect();
    let total: usize = opp_counts.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut profile = vec![0usize; opp_counts.len()];
        for j in (0..opp_counts.len()).rev() {
            profile[j] = idx % opp_counts[j];
            idx /= opp_counts[j];
        }
        out.push(profile);
    }
    out
}

/// Flat joint index of (own action, opponent actions) for player `i`.
fn joint_of(actions: &[usize], player: usize, own: usize, opp: &[usize]) -> usize {
    let mut idx = 0;
    let mut oi = 0;
    for (j, &k) in actions.iter().enumerate() {
        let a = if j == player {
            own
        } else {
            let a = opp[oi];
            oi += 1;
            a
        };
        idx = idx * k + a;
    }
    idx
}

#[allow(clippy::too_many_arguments)]
fn emit_rationality(
    w: &mut Wcsp,
    aux_vars: &mut Vec<VarIdx>,
    dataset: &Dataset,
    config: &LearnerConfig,
    counts: &EmpiricalCounts,
    strategy_vars: &[Vec<VarIdx>],
    payoff_vars: &BTreeMap<(usize, usize), VarIdx>,
    observed_profiles: &[usize],
    i: usize,
) -> Result<()> {
    let actions = &dataset.actions_per_player;
    let k_i = actions[i];
    let opponents: Vec<usize> = (0..dataset.num_players).filter(|&j| j != i).collect();
    let opp_profiles = opponent_profiles(actions, i);

    // Per own action j: the observed profiles contributing to EP_i(j), as
    // (opponent actions, payoff variable), in opponent-profile order.
    let mut terms_per_action: Vec<Vec<(Vec<usize>, VarIdx)>> = Vec::with_capacity(k_i);
    for j in 0..k_i {
        let mut terms = Vec::new();
        for opp in &opp_profiles {
            let joint = joint_of(actions, i, j, opp);
            if let Some(&uv) = payoff_vars.get(&(i, joint)) {
                terms.push((opp.clone(), uv));
            }
        }
        terms_per_action.push(terms);
    }

    if !config.decomposed {
        // One soft constraint per (i, k) over sigma_i(k), all opponents'
        // strategy variables, and player i's observed payoff variables.
        for k in 0..k_i {
            if config.rationality_only_observed_actions && counts.action_counts[i][k] == 0 {
                continue;
            }
            let mut scope: Vec<VarIdx> = vec![strategy_vars[i][k]];
            let mut opp_slot: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for &j in &opponents {
                for a in 0..actions[j] {
                    opp_slot.insert((j, a), scope.len());
                    scope.push(strategy_vars[j][a]);
                }
            }
            let mut u_slot: BTreeMap<VarIdx, usize> = BTreeMap::new();
            for &joint in observed_profiles {
                let uv = payoff_vars[&(i, joint)];
                u_slot.insert(uv, scope.len());
                scope.push(uv);
            }
            // Slot-indexed evaluation program, mirroring the chain order.
            let program: Vec<Vec<(Vec<usize>, usize)>> = terms_per_action
                .iter()
                .map(|terms| {
                    terms
                        .iter()
                        .map(|(opp, uv)| {
                            let slots: Vec<usize> = opponents
                                .iter()
                                .zip(opp)
                                .map(|(&j, &a)| opp_slot[&(j, a)])
                                .collect();
                            (slots, u_slot[uv])
                        })
                        .collect()
                })
                .collect();
            let lambda = config.lambda;
            let alpha = config.alpha;
            w.add_soft(
                format!("rationality_{i}_{k}"),
                &scope,
                SoftForm::Custom(Arc::new(move |vals: &[f64]| {
                    let mut denom = 0.0;
                    let mut numer = 0.0;
                    for (j, terms) in program.iter().enumerate() {
                        let mut ep = 0.0;
                        for (slots, u_slot) in terms {
                            let mut p = 1.0;
                            for &s in slots {
                                p *= vals[s];
                            }
                            ep += p * vals[*u_slot];
                        }
                        let z = (lambda * ep).exp();
                        denom += z;
                        if j == k {
                            numer = z;
                        }
                    }
                    alpha * (numer - vals[0] * denom).abs()
                })),
            )?;
        }
        return Ok(());
    }

    // Decomposed: per own action j build the exponential term
    // z_{i,j} = exp(lambda * EP_i(j)) through product and sum chains; the
    // terms are shared between the numerator and the denominator sum.
    let mut z_vars: Vec<VarIdx> = Vec::with_capacity(k_i);
    for (j, terms) in terms_per_action.iter().enumerate() {
        if terms.is_empty() {
            // No observed profile involves this action: EP = 0, z = 1.
            let z = w.add_variable(format!("z{i}_{j}"), vec![1.0])?;
            z_vars.push(z);
            continue;
        }
        let mut x_vars: Vec<VarIdx> = Vec::with_capacity(terms.len());
        for (t, (opp, uv)) in terms.iter().enumerate() {
            // Product chain over opponents' sigma, then times the payoff.
            let mut factor = strategy_vars[opponents[0]][opp[0]];
            for (oi, &j_opp) in opponents.iter().enumerate().skip(1) {
                let p = w.add_forced_variable(format!("p{i}_{j}_{t}_{oi}"))?;
                w.add_functional(
                    format!("prod_{i}_{j}_{t}_{oi}"),
                    &[factor, strategy_vars[j_opp][opp[oi]]],
                    p,
                    Func::Product,
                )?;
                aux_vars.push(p);
                factor = p;
            }
            let x = w.add_forced_variable(format!("x{i}_{j}_{t}"))?;
            w.add_functional(
                format!("term_{i}_{j}_{t}"),
                &[factor, *uv],
                x,
                Func::Product,
            )?;
            aux_vars.push(x);
            x_vars.push(x);
        }
        // Sum chain y = sum of terms, then z = exp(lambda y).
        let mut y = x_vars[0];
        for (t, &x) in x_vars.iter().enumerate().skip(1) {
            let s = w.add_forced_variable(format!("y{i}_{j}_{t}"))?;
            w.add_functional(format!("sum_{i}_{j}_{t}"), &[y, x], s, Func::Sum)?;
            aux_vars.push(s);
            y = s;
        }
        let z = w.add_forced_variable(format!("z{i}_{j}"))?;
        w.add_functional(
            format!("exp_{i}_{j}"),
            &[y],
            z,
            Func::ExpScale(config.lambda),
        )?;
        aux_vars.push(z);
        z_vars.push(z);
    }

    // Denominator sum chain w_i = sum_j z_{i,j}.
    let mut w_var = z_vars[0];
    for (j, &z) in z_vars.iter().enumerate().skip(1) {
        let s = w.add_forced_variable(format!("w{i}_{j}"))?;
        w.add_functional(format!("denom_{i}_{j}"), &[w_var, z], s, Func::Sum)?;
        aux_vars.push(s);
        w_var = s;
    }

    // Final ternary soft constraint per (i, k).
    for k in 0..k_i {
        if config.rationality_only_observed_actions && counts.action_counts[i][k] == 0 {
            continue;
        }
        w.add_soft(
            format!("rationality_{i}_{k}"),
            &[z_vars[k], strategy_vars[i][k], w_var],
            SoftForm::AbsDiffProduct {
                alpha: config.alpha,
            },
        )?;
    }
    Ok(())
}

/// Read a solved WCSP back into an estimate. Payoffs for profiles that had
/// no observations (hence no variables) are filled with the midpoint of the
/// payoff range and flagged unconstrained.
pub fn extract_estimate(
    layout: &VariableLayout,
    solution: &Solution,
    dataset: &Dataset,
) -> Result<Estimate> {
    let players = dataset.num_players;
    let num_profiles: usize = dataset.actions_per_player.iter().product();
    let midpoint = 0.5 * (layout.u_min + layout.u_max);

    let mut strategies: Vec<Vec<f64>> = Vec::with_capacity(players);
    for i in 0..players {
        let mut sigma = Vec::with_capacity(dataset.actions_per_player[i]);
        for a in 0..dataset.actions_per_player[i] {
            let id = &layout.ids[layout.strategy_vars[i][a]];
            let value = solution
                .assignment
                .get(id)
                .ok_or_else(|| Error::Internal(format!("solution missing {id}")))?;
            sigma.push(*value);
        }
        strategies.push(sigma);
    }
    let profile = crate::game::MixedProfile::new(strategies)
        .map_err(|e| Error::Internal(format!("extracted profile invalid: {e}")))?;

    let mut payoffs = vec![vec![midpoint; num_profiles]; players];
    let mut constrained = vec![vec![false; num_profiles]; players];
    for (&(i, joint), &var) in &layout.payoff_vars {
        let id = &layout.ids[var];
        let value = solution
            .assignment
            .get(id)
            .ok_or_else(|| Error::Internal(format!("solution missing {id}")))?;
        payoffs[i][joint] = *value;
        constrained[i][joint] = true;
    }

    Ok(Estimate {
        payoffs,
        constrained,
        profile,
        method: Method::Lqre,
    })
}
