//! Learn a normal-form game's payoffs and the players' mixed strategies from
//! noisy observations of play.
//!
//! The learning problem is compiled into a weighted constraint satisfaction
//! problem (WCSP) whose soft costs balance maximum-likelihood data fit against
//! logit quantal-response rationality, and solved exactly by branch and bound.
//!
//! The crate is organised around that pipeline:
//!
//! * [`game`] — normal-form games, mixed strategies, expected payoffs, and the
//!   logit response map.
//! * [`equilibrium`] — logit quantal response equilibria by homotopy
//!   continuation, and Nash equilibria of 2x2 games by support enumeration.
//! * [`data`] — random game generation and seeded simulation of observed play
//!   (perfectly observed actions, Gaussian-noised payoffs).
//! * [`wcsp`] — a generic weighted CSP representation with an exact
//!   branch-and-bound solver and a brute-force oracle.
//! * [`compile`] — the compiler from a dataset plus learner configuration to a
//!   WCSP, in monolithic or ternary-decomposed form.
//! * [`learn`] — the four learners (rationality-constrained, naive, and the
//!   two equilibrium-imposing baselines), the error metric, and the
//!   experiment harness.

// Negated partial-order comparisons are deliberate: they reject NaN inputs
// at validation boundaries.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod compile;
pub mod data;
pub mod equilibrium;
mod error;
pub mod game;
pub mod learn;
pub mod rng;
pub mod wcsp;

pub use compile::{build_wcsp, LearnerConfig, VariableLayout};
pub use data::{Dataset, GroundTruth, PlaySample};
pub use equilibrium::{solve_lqre, solve_nash_2x2, LqreConfig};
pub use error::Error;
pub use game::{Game, MixedProfile};
pub use learn::{Estimate, ExperimentSpec, Method};
pub use wcsp::{Solution, SolveOutcome, Wcsp};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
