//! The discounted auxiliary game.
//!
//! The construction keeps the chain of the original game but demotes the
//! three terminal states to preterminal ones: each pays its owner a unit
//! turn payoff exactly once and then moves, with probability one, to a fresh
//! absorbing rest state worth nothing. Total payoff is the discounted sum of
//! turn payoffs, so a win at round `T` is worth `gamma^T`. The discounted
//! Bellman operator is a `gamma`-contraction, which is what guarantees a
//! deterministic stationary equilibrium exists; sending `gamma` to 1
//! recovers the winning-probability game.
//!
//! The rest state is implicit everywhere: its value is identically zero, so
//! vectors stay indexed by the original state space.

use crate::equilibrium::{BestResponse, DiscoveryMethod, Engine, EquilibriumCertificate, MviOutcome};
use crate::error::{Error, Result};
use crate::game::{GameParams, Player, StationaryProfile};
use crate::payoff::PayoffVector;

/// Parameters of the discounted game: the base game plus a discount in
/// `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedGameParams {
    params: GameParams,
    gamma: f64,
}

impl DiscountedGameParams {
    pub fn new(params: GameParams, gamma: f64) -> Result<DiscountedGameParams> {
        if !(gamma > 0.0 && gamma < 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "discount gamma = {gamma} must lie in the open interval (0, 1)"
            )));
        }
        Ok(DiscountedGameParams { params, gamma })
    }

    pub fn params(&self) -> &GameParams {
        &self.params
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn engine(&self) -> Result<Engine> {
        Engine::with_discount(&self.params, self.gamma)
    }
}

/// Expected discounted payoff of `profile` for player `n` at every state:
/// the unique solution of `V = q_n + gamma * P V` on the augmented chain.
pub fn discounted_value(
    dparams: &DiscountedGameParams,
    profile: &StationaryProfile,
    n: Player,
) -> Result<PayoffVector> {
    dparams.engine()?.exact_value(profile, n)
}

/// Player `n`'s best response in the discounted game. The inner value
/// iteration is a `gamma`-contraction, so it converges unconditionally.
pub fn discounted_best_response(
    dparams: &DiscountedGameParams,
    profile: &StationaryProfile,
    n: Player,
    tol: f64,
) -> Result<BestResponse> {
    dparams.engine()?.best_response(profile, n, tol)
}

/// Certify `profile` as a Nash equilibrium of the discounted game.
pub fn discounted_verify_ne(
    dparams: &DiscountedGameParams,
    profile: &StationaryProfile,
    tol: f64,
) -> Result<EquilibriumCertificate> {
    dparams
        .engine()?
        .verify(profile, tol, DiscoveryMethod::Verification)
}

/// MultiValue Iteration on the discounted Bellman operator. Same scheme as
/// the undiscounted [`crate::equilibrium::mvi`], certified by discounted
/// best responses.
pub fn discounted_mvi(
    dparams: &DiscountedGameParams,
    seed: &StationaryProfile,
    tol: f64,
    max_iters: usize,
) -> Result<MviOutcome> {
    dparams
        .engine()?
        .mvi(seed, tol, max_iters, DiscoveryMethod::DiscountedMvi)
}
