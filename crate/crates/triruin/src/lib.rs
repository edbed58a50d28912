//! Three-gambler ruin as a stochastic game.
//!
//! Three players with pairwise win probabilities `p = (p1, p2, p3)` split a
//! capital of `K` dollars. Each round a surviving player is picked uniformly
//! at random and *chooses* which surviving opponent to play; the pair
//! exchanges one dollar by the pairwise odds and play continues until one
//! player holds everything. The opponent choice makes this a stochastic
//! game rather than a plain random walk, and this crate is a toolkit for
//! analyzing it:
//!
//! - [`game`] — parameters, the canonical state space, stationary strategy
//!   profiles, and the Markov chain a profile induces.
//! - [`payoff`] — exact winning probabilities by dense LU solve, matrix
//!   powers, fixed-point iteration, and the fundamental matrix, plus the
//!   `K = 3` closed forms.
//! - [`equilibrium`] — best responses (always pure: the game is bang-bang),
//!   Nash certification, MultiValue Iteration, exhaustive enumeration of
//!   deterministic profiles, the analytic `K = 3` equilibrium, and the
//!   optimality residual `J`.
//! - [`discounted`] — the discounted auxiliary game behind the equilibrium
//!   existence argument.
//! - [`sim`] — a seeded Monte Carlo engine that verifies the exact solvers
//!   by playing the rules forward.
//! - [`experiments`] — JSON config, sampling, the convergence and
//!   benefit-of-optimal-play sweeps, CSV/JSON wire formats.
//!
//! # Examples directory
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example solve_payoffs        # exact payoffs, all methods
//! cargo run --release --example closed_form_k3       # K = 3 analytic oracle
//! cargo run --release --example best_response        # one player's optimal reply
//! cargo run --release --example verify_equilibrium   # certify / refute a profile
//! cargo run --release --example mvi_search           # MultiValue Iteration
//! cargo run --release --example enumerate_equilibria # all NE at small K
//! cargo run --release --example simulate_games       # Monte Carlo vs exact
//! cargo run --release --example discounted_game      # discounted auxiliary game
//! cargo run --release --example sweep_convergence    # MVI success rates per K
//! cargo run --release --example delta_v              # value of playing optimally
//! ```
//!
//! The `triruin` binary wraps the same entry points behind subcommands
//! (`solve`, `best-response`, `verify`, `mvi`, `enumerate`, `simulate`,
//! `sweep-convergence`, `delta-v`) driven by a JSON config; see the README.
//!
//! # Quick start
//!
//! ```
//! use triruin::game::{GameParams, StationaryProfile, TransitionMatrix};
//! use triruin::payoff::solve_payoff_direct;
//! use triruin::game::Player;
//!
//! let params = GameParams::new(0.9, 0.5, 0.2, 3)?;
//! let profile = StationaryProfile::uniform(3);
//! let chain = TransitionMatrix::new(&params, &profile)?;
//! let v1 = solve_payoff_direct(&chain, Player::P1)?;
//! assert!(v1.values().iter().all(|v| (0.0..=1.0).contains(v)));
//! # Ok::<(), triruin::Error>(())
//! ```

pub mod discounted;
pub mod equilibrium;
mod error;
pub mod experiments;
pub mod game;
pub mod payoff;
pub mod sim;

pub use error::{Error, Result};
