//! Nash equilibrium machinery: best responses, certification, MultiValue
//! Iteration, exhaustive enumeration, the analytic `K = 3` equilibrium, and
//! the optimality residual `J`.
//!
//! Every player's one-round payoff is affine in that player's selection
//! probability at each interior state, so best responses are bang-bang: a
//! pure choice per state always attains the maximum. All searches therefore
//! range over deterministic profiles, and certification reduces to exact
//! linear solves plus one-step lookahead comparisons.
//!
//! The same operators drive the discounted auxiliary game: a discount of 1
//! recovers the plain winning-probability game, so [`Engine`] carries the
//! discount as a parameter and the discounted module wraps it.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{
    interior_count_for, GameParams, Player, StateClass, StateSpace, StationaryProfile,
    TransitionMatrix,
};
use crate::payoff::{solve_system_all, PayoffVector};

/// Sup-norm tolerance of the best-response value iteration.
pub const BR_VI_TOL: f64 = 1e-12;
/// Iteration cap of the best-response value iteration.
pub const BR_VI_CAP: usize = 1_000_000;
/// Two lookahead values this close count as a tie; ties keep the incumbent
/// action so iterative schemes do not oscillate on indifference sets.
pub const TIE_EPS: f64 = 1e-12;

/// A pair of `(target state index, probability)` outcomes for one match.
type Outcomes = [(usize, f64); 2];

#[derive(Debug, Clone)]
struct PlayerMoves {
    /// Outcomes when the player selects its cyclic successor.
    next: Outcomes,
    /// Outcomes when the player selects its cyclic predecessor.
    prev: Outcomes,
}

#[derive(Debug, Clone)]
enum StateDyn {
    Terminal,
    /// Forced two-player round: the two outcomes of the surviving pair.
    Boundary(Outcomes),
    /// Per-player selectable matches.
    Interior([PlayerMoves; 3]),
}

/// Precomputed one-round structure of the chain: for every state, where one
/// round can lead and with what probability, split by who moves and whom
/// they select. Shared by value iteration, MVI and the residual.
#[derive(Debug, Clone)]
pub(crate) struct RoundDynamics {
    kinds: Vec<StateDyn>,
}

#[inline]
fn outcome_value(o: &Outcomes, v: &[f64]) -> f64 {
    o[0].1 * v[o[0].0] + o[1].1 * v[o[1].0]
}

impl RoundDynamics {
    pub(crate) fn new(space: &StateSpace, params: &GameParams) -> RoundDynamics {
        let kinds = space
            .states()
            .iter()
            .map(|s| match s.classify(space.k()).expect("space state") {
                StateClass::Terminal(_) => StateDyn::Terminal,
                StateClass::Boundary => {
                    let (a, b) = s.surviving_pair().expect("boundary");
                    let p = params.pairwise(a, b);
                    let win = space.index_of(&s.transfer(a, b).unwrap()).unwrap();
                    let lose = space.index_of(&s.transfer(b, a).unwrap()).unwrap();
                    StateDyn::Boundary([(win, p), (lose, 1.0 - p)])
                }
                StateClass::Interior => {
                    let mk = |m: Player, o: Player| -> Outcomes {
                        let p = params.pairwise(m, o);
                        let win = space.index_of(&s.transfer(m, o).unwrap()).unwrap();
                        let lose = space.index_of(&s.transfer(o, m).unwrap()).unwrap();
                        [(win, p), (lose, 1.0 - p)]
                    };
                    let per = Player::ALL.map(|m| PlayerMoves {
                        next: mk(m, m.next()),
                        prev: mk(m, m.prev()),
                    });
                    StateDyn::Interior(per)
                }
            })
            .collect();
        RoundDynamics { kinds }
    }

    /// One-step value with the owner of `v` (player `n`) free to pick its
    /// own best match and the opponents at their mixed selection
    /// probabilities. This is the best-response Bellman operator at state
    /// `i` (before discounting).
    #[inline]
    fn apply_bellman_mixed(&self, i: usize, n: Player, x: &[f64; 3], v: &[f64]) -> f64 {
        match &self.kinds[i] {
            StateDyn::Terminal => v[i],
            StateDyn::Boundary(o) => outcome_value(o, v),
            StateDyn::Interior(moves) => {
                let mut acc = 0.0;
                for (m, mv) in moves.iter().enumerate() {
                    if m == n.index() {
                        acc += outcome_value(&mv.next, v).max(outcome_value(&mv.prev, v));
                    } else {
                        acc += x[m] * outcome_value(&mv.next, v)
                            + (1.0 - x[m]) * outcome_value(&mv.prev, v);
                    }
                }
                acc / 3.0
            }
        }
    }

    /// Lookahead pair `(select successor, select predecessor)` for player
    /// `n` at interior state `i` under values `v`.
    #[inline]
    fn own_pair(&self, i: usize, n: Player, v: &[f64]) -> Option<(f64, f64)> {
        match &self.kinds[i] {
            StateDyn::Interior(moves) => {
                let mv = &moves[n.index()];
                Some((outcome_value(&mv.next, v), outcome_value(&mv.prev, v)))
            }
            _ => None,
        }
    }

    /// One-step value under mixed selection probabilities `x` (before
    /// discounting).
    #[inline]
    fn apply_mixed(&self, i: usize, x: &[f64; 3], v: &[f64]) -> f64 {
        match &self.kinds[i] {
            StateDyn::Terminal => v[i],
            StateDyn::Boundary(o) => outcome_value(o, v),
            StateDyn::Interior(moves) => {
                let mut acc = 0.0;
                for (m, mv) in moves.iter().enumerate() {
                    acc += x[m] * outcome_value(&mv.next, v)
                        + (1.0 - x[m]) * outcome_value(&mv.prev, v);
                }
                acc / 3.0
            }
        }
    }
}

/// Pure-choice bits per interior state, `bits[ordinal][player]`; true means
/// the player selects its cyclic successor.
type ChoiceGrid = Vec<[bool; 3]>;

fn grid_from_profile(profile: &StationaryProfile) -> ChoiceGrid {
    (0..profile.len())
        .map(|ord| {
            let x = profile.get(ord);
            [x[0] >= 0.5, x[1] >= 0.5, x[2] >= 0.5]
        })
        .collect()
}

fn profile_from_grid(k: u32, grid: &ChoiceGrid) -> StationaryProfile {
    let mut p = StationaryProfile::zeros(k);
    for (ord, bits) in grid.iter().enumerate() {
        p.set(
            ord,
            [
                bits[0] as u32 as f64,
                bits[1] as u32 as f64,
                bits[2] as u32 as f64,
            ],
        );
    }
    p
}

/// A player's payoff-maximizing deterministic strategy against fixed
/// opponents, with its exactly solved payoff vector.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub player: Player,
    /// One bit per interior state, canonical interior order; true selects
    /// the cyclic successor.
    pub strategy: Vec<bool>,
    /// Exact payoff of the extracted strategy against the fixed opponents.
    pub payoff: PayoffVector,
    /// Value-iteration sweeps used before extraction.
    pub iterations: usize,
}

/// How an equilibrium candidate was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryMethod {
    Mvi,
    DiscountedMvi,
    Enumeration,
    AnalyticK3,
    Verification,
}

impl DiscoveryMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscoveryMethod::Mvi => "mvi",
            DiscoveryMethod::DiscountedMvi => "discounted-mvi",
            DiscoveryMethod::Enumeration => "enumeration",
            DiscoveryMethod::AnalyticK3 => "analytic-k3",
            DiscoveryMethod::Verification => "verification",
        }
    }
}

/// Outcome of checking a profile against unilateral deviations.
#[derive(Debug, Clone)]
pub struct EquilibriumCertificate {
    pub profile: StationaryProfile,
    /// Per-player maximum over states of (best-response payoff - incumbent
    /// payoff). Nonpositive up to solver noise at an equilibrium.
    pub max_gain: [f64; 3],
    /// Gain threshold the certificate was checked against.
    pub tol: f64,
    pub method: DiscoveryMethod,
    /// Optimality residual of the profile's exact value vectors.
    pub residual_j: f64,
    /// True when every deviation gain is at most `tol`.
    pub certified: bool,
}

impl EquilibriumCertificate {
    pub fn worst_gain(&self) -> f64 {
        self.max_gain
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Why an MVI run did not end in a certified equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MviFailureReason {
    /// The iteration cap was reached before values and profile stabilized.
    IterationCap,
    /// Values stabilized but the resulting profile failed certification.
    CertificateGap,
}

/// Diagnostics of a failed MVI run.
#[derive(Debug, Clone)]
pub struct MviFailure {
    pub reason: MviFailureReason,
    pub iterations: usize,
    pub last_profile: StationaryProfile,
    pub residual_j: f64,
    /// Present when the failure was a certification gap.
    pub certificate: Option<EquilibriumCertificate>,
}

/// Result of a MultiValue Iteration run.
#[derive(Debug, Clone)]
pub enum MviOutcome {
    Converged(EquilibriumCertificate),
    Failed(MviFailure),
}

impl MviOutcome {
    pub fn converged(&self) -> bool {
        matches!(self, MviOutcome::Converged(_))
    }

    pub fn certificate(&self) -> Option<&EquilibriumCertificate> {
        match self {
            MviOutcome::Converged(c) => Some(c),
            MviOutcome::Failed(f) => f.certificate.as_ref(),
        }
    }
}

/// Shared solver state for one `(params, discount)` pair: the state space,
/// the one-round dynamics, and the Bellman/evaluation operators built on
/// them. A discount of exactly 1 is the winning-probability game; anything
/// in `(0, 1)` is the discounted auxiliary game, where the former terminal
/// states pay their unit turn payoff once and then move to the zero-payoff
/// rest state.
#[derive(Debug, Clone)]
pub(crate) struct Engine {
    space: Arc<StateSpace>,
    dynamics: RoundDynamics,
    params: GameParams,
    discount: f64,
}

impl Engine {
    pub(crate) fn new(params: &GameParams) -> Result<Engine> {
        Engine::with_discount(params, 1.0)
    }

    pub(crate) fn with_discount(params: &GameParams, discount: f64) -> Result<Engine> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount {discount} outside (0, 1]"
            )));
        }
        let space = Arc::new(StateSpace::new(params.k())?);
        let dynamics = RoundDynamics::new(&space, params);
        Ok(Engine {
            space,
            dynamics,
            params: *params,
            discount,
        })
    }

    pub(crate) fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    fn check_profile(&self, profile: &StationaryProfile) -> Result<()> {
        if profile.k() != self.params.k() || profile.len() != self.space.interior_count() {
            let s = self.space.state(self.space.interior_indices()[0]);
            return Err(Error::IncompleteProfile {
                s1: s.s1(),
                s2: s.s2(),
                s3: s.s3(),
            });
        }
        Ok(())
    }

    /// Exact (possibly discounted) value vectors of a fixed profile for all
    /// three players, by one LU factorization.
    pub(crate) fn exact_values(&self, profile: &StationaryProfile) -> Result<[PayoffVector; 3]> {
        let tm = TransitionMatrix::with_space(Arc::clone(&self.space), &self.params, profile)?;
        solve_system_all(&tm, self.discount)
    }

    pub(crate) fn exact_value(&self, profile: &StationaryProfile, n: Player) -> Result<PayoffVector> {
        Ok(self.exact_values(profile)?[n.index()].clone())
    }

    /// Greedy pure strategy of `n` with respect to values `v`, keeping
    /// `incumbent` on ties. Discounting scales both lookaheads equally, so
    /// the argmax ignores it.
    fn greedy_strategy(
        &self,
        n: Player,
        v: &[f64],
        incumbent: impl Fn(usize) -> bool,
    ) -> Vec<bool> {
        self.space
            .interior_indices()
            .iter()
            .enumerate()
            .map(|(ord, &i)| {
                let (dn, dp) = self.dynamics.own_pair(i, n, v).expect("interior");
                if (dn - dp).abs() <= TIE_EPS {
                    incumbent(ord)
                } else {
                    dn > dp
                }
            })
            .collect()
    }

    /// Best response of player `n` to `profile`'s other entries: value
    /// iteration to sup-norm `tol`, greedy extraction, exact re-solve.
    pub(crate) fn best_response(
        &self,
        profile: &StationaryProfile,
        n: Player,
        tol: f64,
    ) -> Result<BestResponse> {
        if tol <= 0.0 {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        self.check_profile(profile)?;
        let size = self.space.len();
        let mut v = vec![0.0; size];
        v[self.space.terminal_index(n)] = 1.0;
        let mut next = v.clone();
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut delta = 0.0f64;
            for i in 3..size {
                let x = self
                    .space
                    .interior_ordinal(i)
                    .map(|ord| profile.get(ord))
                    .unwrap_or([0.0; 3]);
                let nv = self.discount * self.dynamics.apply_bellman_mixed(i, n, &x, &v);
                delta = delta.max((nv - v[i]).abs());
                next[i] = nv;
            }
            std::mem::swap(&mut v, &mut next);
            if delta < tol {
                break;
            }
            if iterations >= BR_VI_CAP {
                return Err(Error::NonConvergence {
                    max_t: BR_VI_CAP,
                    last_delta: delta,
                    last: v,
                });
            }
        }

        let strategy = self.greedy_strategy(n, &v, |ord| {
            let x = profile.get(ord)[n.index()];
            if x == 0.0 || x == 1.0 {
                x == 1.0
            } else {
                true
            }
        });
        let pure: Vec<f64> = strategy.iter().map(|&b| b as u32 as f64).collect();
        let deviated = profile.with_player_strategy(n, &pure);
        let payoff = self.exact_value(&deviated, n)?;
        Ok(BestResponse {
            player: n,
            strategy,
            payoff,
            iterations,
        })
    }

    /// Certify `profile` against unilateral deviations at tolerance `tol`.
    pub(crate) fn verify(
        &self,
        profile: &StationaryProfile,
        tol: f64,
        method: DiscoveryMethod,
    ) -> Result<EquilibriumCertificate> {
        let incumbent = self.exact_values(profile)?;
        let mut max_gain = [f64::NEG_INFINITY; 3];
        for n in Player::ALL {
            let br = self.best_response(profile, n, BR_VI_TOL)?;
            let gain = incumbent[n.index()]
                .values()
                .iter()
                .zip(br.payoff.values())
                .map(|(inc, bp)| bp - inc)
                .fold(f64::NEG_INFINITY, f64::max);
            max_gain[n.index()] = gain;
        }
        let residual_j = self.residual_from_values(profile, &incumbent);
        let certified = max_gain.iter().all(|&g| g <= tol);
        Ok(EquilibriumCertificate {
            profile: profile.clone(),
            max_gain,
            tol,
            method,
            residual_j,
            certified,
        })
    }

    fn residual_from_values(
        &self,
        profile: &StationaryProfile,
        values: &[PayoffVector; 3],
    ) -> f64 {
        let mut j = 0.0;
        for n in Player::ALL {
            let v = values[n.index()].values();
            for i in 3..self.space.len() {
                let f = match self.space.interior_ordinal(i) {
                    Some(ord) => {
                        let x = profile.get(ord);
                        let mut with_own_max = x;
                        // The operator maximizes only the player's own
                        // choice; opponents stay at the profile.
                        let (dn, dp) = self.dynamics.own_pair(i, n, v).expect("interior");
                        with_own_max[n.index()] = if dn >= dp { 1.0 } else { 0.0 };
                        self.dynamics.apply_mixed(i, &with_own_max, v)
                    }
                    None => self.dynamics.apply_mixed(i, &[0.0; 3], v), // boundary: forced
                };
                let d = v[i] - self.discount * f;
                j += d * d;
            }
        }
        j
    }

    pub(crate) fn residual_j(&self, profile: &StationaryProfile) -> Result<f64> {
        let values = self.exact_values(profile)?;
        Ok(self.residual_from_values(profile, &values))
    }

    /// MultiValue Iteration from a seed profile. See [`mvi`].
    ///
    /// Players update in rotation inside each iteration: player `n` replaces
    /// its pure choices by the argmax of its one-step lookahead on its own
    /// value vector under the current joint profile (evaluated exactly, so
    /// boundary and terminal values sit at the values their defining
    /// recursions pin), and the next player already sees the refreshed
    /// profile. A fully synchronous schedule, with all players re-deriving
    /// from the same iterate at once, falls into profile cycles for most
    /// parameter draws by `K = 8`; the rotating schedule reaches the
    /// expected success rates, so the rotation is deliberate.
    pub(crate) fn mvi(
        &self,
        seed: &StationaryProfile,
        tol: f64,
        max_iters: usize,
        method: DiscoveryMethod,
    ) -> Result<MviOutcome> {
        if tol <= 0.0 {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        self.check_profile(seed)?;
        let mut grid = grid_from_profile(seed);
        let mut last_values: [Option<PayoffVector>; 3] = [None, None, None];
        let mut prev_grid: Option<ChoiceGrid> = None;
        let mut streak = 0usize;
        let mut iterations = 0usize;

        while iterations < max_iters {
            iterations += 1;
            let mut delta = 0.0f64;
            for n in Player::ALL {
                let profile = profile_from_grid(self.params.k(), &grid);
                let values = self.exact_value(&profile, n)?;
                match &last_values[n.index()] {
                    Some(prev) => {
                        let d = prev
                            .values()
                            .iter()
                            .zip(values.values())
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0f64, f64::max);
                        delta = delta.max(d);
                    }
                    None => delta = f64::INFINITY,
                }
                // Ties keep the incumbent choice so indifference sets cannot
                // drive oscillation.
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let (dn, dp) = self
                        .dynamics
                        .own_pair(i, n, values.values())
                        .expect("interior");
                    if (dn - dp).abs() > TIE_EPS {
                        grid[ord][n.index()] = dn > dp;
                    }
                }
                last_values[n.index()] = Some(values);
            }

            let profile_stable = prev_grid.as_ref() == Some(&grid);
            streak = if profile_stable && delta < tol {
                streak + 1
            } else {
                0
            };
            prev_grid = Some(grid.clone());

            if streak >= 3 {
                let profile = profile_from_grid(self.params.k(), &grid);
                let cert_tol = (10.0 * tol).min(1e-8);
                let cert = self.verify(&profile, cert_tol, method)?;
                return Ok(if cert.certified {
                    MviOutcome::Converged(cert)
                } else {
                    MviOutcome::Failed(MviFailure {
                        reason: MviFailureReason::CertificateGap,
                        iterations,
                        last_profile: profile,
                        residual_j: cert.residual_j,
                        certificate: Some(cert),
                    })
                });
            }
        }

        let last_profile = profile_from_grid(self.params.k(), &grid);
        let residual = self.residual_j(&last_profile)?;
        Ok(MviOutcome::Failed(MviFailure {
            reason: MviFailureReason::IterationCap,
            iterations,
            last_profile,
            residual_j: residual,
            certificate: None,
        }))
    }
}

/// Compute player `n`'s best response to `profile`'s other entries.
///
/// Runs value iteration on the one-player Bellman operator to sup-norm
/// `tol`, extracts the greedy strategy (bang-bang: a pure choice always
/// attains the maximum), then re-solves that strategy's payoff exactly so
/// certification does not inherit iteration error.
pub fn best_response(
    params: &GameParams,
    profile: &StationaryProfile,
    n: Player,
    tol: f64,
) -> Result<BestResponse> {
    Engine::new(params)?.best_response(profile, n, tol)
}

/// Verify whether `profile` is a Nash equilibrium: every player's best
/// response must improve on the incumbent payoff by at most `tol` at every
/// state.
pub fn verify_ne(
    params: &GameParams,
    profile: &StationaryProfile,
    tol: f64,
) -> Result<EquilibriumCertificate> {
    Engine::new(params)?.verify(profile, tol, DiscoveryMethod::Verification)
}

/// Optimality residual `J` of a profile: the summed squared gaps between
/// each player's exact value vector and its best-response operator image.
/// Zero exactly at solutions of the coupled optimality system.
pub fn residual_j(params: &GameParams, profile: &StationaryProfile) -> Result<f64> {
    Engine::new(params)?.residual_j(profile)
}

/// MultiValue Iteration: synchronous coupled value iteration over the three
/// players.
///
/// Each step derives every player's greedy pure choice from that player's
/// current value vector (ties keep the previous choice; the seed profile
/// supplies the initial incumbents, so the conventional all-zeros seed makes
/// the first derived profile the all-zeros profile), then advances all three
/// value vectors one lookahead step under the derived profile.
///
/// Convergence requires the value change to stay below `tol` and the derived
/// profile to stay unchanged for three consecutive iterations; the
/// stabilized profile is then certified by exact best responses at tolerance
/// `min(10 * tol, 1e-8)`. A run that stabilizes on a non-equilibrium is
/// reported as failed with the gap certificate, never as converged.
pub fn mvi(
    params: &GameParams,
    seed: &StationaryProfile,
    tol: f64,
    max_iters: usize,
) -> Result<MviOutcome> {
    Engine::new(params)?.mvi(seed, tol, max_iters, DiscoveryMethod::Mvi)
}

/// Everything exhaustive enumeration found for one instance.
#[derive(Debug, Clone)]
pub struct EnumerationResult {
    /// All certified equilibria, in increasing bitmask order.
    pub equilibria: Vec<EquilibriumCertificate>,
    /// Number of deterministic profiles examined, `2^(3g(K))`.
    pub profiles_evaluated: u64,
}

/// Enumerate all deterministic profiles and return every certified Nash
/// equilibrium. Guarded to `K <= 5`; use
/// [`exhaustive_enumeration_unbounded`] to force larger instances.
pub fn exhaustive_enumeration(params: &GameParams, tol: f64) -> Result<EnumerationResult> {
    if params.k() > 5 {
        let g = interior_count_for(params.k()) as u32;
        let profiles = if 3 * g >= 128 {
            u128::MAX
        } else {
            1u128 << (3 * g)
        };
        return Err(Error::EnumerationTooLarge {
            k: params.k(),
            profiles,
        });
    }
    exhaustive_enumeration_unbounded(params, tol)
}

/// Exhaustive enumeration without the size guard. The profile count is
/// `2^(3g(K))`, which grows past any feasible budget near `K = 6`.
pub fn exhaustive_enumeration_unbounded(
    params: &GameParams,
    tol: f64,
) -> Result<EnumerationResult> {
    let engine = Engine::new(params)?;
    let space = Arc::clone(engine.space());
    let g = space.interior_count();
    if 3 * g >= 64 {
        return Err(Error::InvalidParameter(format!(
            "enumeration needs {} choice bits, more than the 63 supported",
            3 * g
        )));
    }
    let total: u64 = 1 << (3 * g);

    // Cheap exact pre-filter: a profile can only be an equilibrium if every
    // player's choice is greedy with respect to that player's own exact
    // value vector. A one-state switch that improves the lookahead by more
    // than 3 * tol propagates to a best-response gain above tol, so rejected
    // profiles cannot certify; survivors get the full verification.
    let survivors: Result<Vec<u64>> = (0..total)
        .into_par_iter()
        .map(|bits| -> Result<Option<u64>> {
            let profile = StationaryProfile::from_bits(space.k(), bits).expect("guarded width");
            let values = engine.exact_values(&profile)?;
            for n in Player::ALL {
                let v = values[n.index()].values();
                for (ord, &i) in space.interior_indices().iter().enumerate() {
                    let (dn, dp) = engine.dynamics.own_pair(i, n, v).expect("interior");
                    let chosen = (bits >> (3 * ord + n.index())) & 1 == 1;
                    let improvement = if chosen { dp - dn } else { dn - dp };
                    if improvement / 3.0 > tol {
                        return Ok(None);
                    }
                }
            }
            Ok(Some(bits))
        })
        .filter_map(Result::transpose)
        .collect();
    let mut survivors = survivors?;
    survivors.sort_unstable();

    let equilibria: Result<Vec<EquilibriumCertificate>> = survivors
        .into_iter()
        .map(|bits| {
            let profile = StationaryProfile::from_bits(space.k(), bits).expect("guarded width");
            engine.verify(&profile, tol, DiscoveryMethod::Enumeration)
        })
        .collect();
    let equilibria = equilibria?.into_iter().filter(|c| c.certified).collect();
    Ok(EnumerationResult {
        equilibria,
        profiles_evaluated: total,
    })
}

/// The analytic `K = 3` equilibrium and which players are indifferent.
#[derive(Debug, Clone)]
pub struct AnalyticNe {
    pub profile: StationaryProfile,
    /// Players whose two choices tie exactly; their entry defaults to 1.
    pub indifferent: [bool; 3],
}

/// The analytic deterministic equilibrium of the `K = 3` game.
///
/// Player 1 selects player 2 exactly when `(p1 + p3 - 1)(p1 - p3) > 0`, and
/// player 3 otherwise; players 2 and 3 follow the cyclic analogues (player 2
/// compares `p2` with `p1`, player 3 compares `p3` with `p2`). A zero
/// product means the player is indifferent; the choice defaults to 1 and is
/// flagged.
pub fn k3_analytic_ne(params: &GameParams) -> Result<AnalyticNe> {
    if params.k() != 3 {
        return Err(Error::InvalidParameter(format!(
            "analytic equilibrium exists only for K = 3, got K = {}",
            params.k()
        )));
    }
    let [p1, p2, p3] = params.p();
    let products = [
        (p1 + p3 - 1.0) * (p1 - p3),
        (p2 + p1 - 1.0) * (p2 - p1),
        (p3 + p2 - 1.0) * (p3 - p2),
    ];
    let mut x = [0.0; 3];
    let mut indifferent = [false; 3];
    for (n, &c) in products.iter().enumerate() {
        if c > 0.0 {
            x[n] = 1.0;
        } else if c < 0.0 {
            x[n] = 0.0;
        } else {
            x[n] = 1.0;
            indifferent[n] = true;
        }
    }
    Ok(AnalyticNe {
        profile: StationaryProfile::constant(3, x)?,
        indifferent,
    })
}

/// The per-player decision products of the analytic `K = 3` rule; their
/// magnitudes measure how far each player is from indifference.
pub fn k3_decision_products(params: &GameParams) -> [f64; 3] {
    let [p1, p2, p3] = params.p();
    [
        (p1 + p3 - 1.0) * (p1 - p3),
        (p2 + p1 - 1.0) * (p2 - p1),
        (p3 + p2 - 1.0) * (p3 - p2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::State;
    use crate::payoff::solve_payoff_direct;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, k: u32) -> GameParams {
        GameParams::new(
            rng.random_range(0.02..0.98),
            rng.random_range(0.02..0.98),
            rng.random_range(0.02..0.98),
            k,
        )
        .unwrap()
    }

    fn random_profile(rng: &mut ChaCha8Rng, k: u32) -> StationaryProfile {
        let mut p = StationaryProfile::uniform(k);
        for ord in 0..p.len() {
            p.set(ord, [rng.random(), rng.random(), rng.random()]);
        }
        p
    }

    #[test]
    fn br_picks_x1_one_for_paper_parameters() {
        // (p1 + p3 - 1)(p1 - p3) = 0.1 * 0.7 > 0 at p = (0.9, 0.5, 0.2).
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let br = best_response(&params, &profile, Player::P1, BR_VI_TOL).unwrap();
        assert_eq!(br.strategy, vec![true]);
    }

    #[test]
    fn br_indifferent_under_full_symmetry() {
        let params = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let space = StateSpace::new(3).unwrap();
        let i111 = space.index_of(&State::new(1, 1, 1)).unwrap();
        for n in Player::ALL {
            let br = best_response(&params, &profile, n, BR_VI_TOL).unwrap();
            let tm = TransitionMatrix::new(&params, &profile).unwrap();
            let inc = solve_payoff_direct(&tm, n).unwrap();
            let gain = br.payoff.value(i111) - inc.value(i111);
            assert!(gain.abs() < 1e-9, "deviation gain {gain} should vanish");
        }
    }

    #[test]
    fn br_beats_incumbent_everywhere_and_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        for k in [3u32, 4] {
            for _ in 0..25 {
                let params = random_params(&mut rng, k);
                let profile = random_profile(&mut rng, k);
                let n = Player::from_index(rng.random_range(0..3)).unwrap();
                let br = best_response(&params, &profile, n, BR_VI_TOL).unwrap();
                let tm = TransitionMatrix::new(&params, &profile).unwrap();
                let incumbent = solve_payoff_direct(&tm, n).unwrap();

                // Brute force: try every deterministic strategy of player n.
                let g = profile.len();
                let mut best = vec![f64::NEG_INFINITY; incumbent.len()];
                for mask in 0..(1u64 << g) {
                    let strat: Vec<f64> = (0..g).map(|i| ((mask >> i) & 1) as f64).collect();
                    let dev = profile.with_player_strategy(n, &strat);
                    let tmd = TransitionMatrix::new(&params, &dev).unwrap();
                    let v = solve_payoff_direct(&tmd, n).unwrap();
                    for (b, &x) in best.iter_mut().zip(v.values()) {
                        *b = b.max(x);
                    }
                }
                for i in 0..incumbent.len() {
                    assert!(
                        br.payoff.value(i) >= incumbent.value(i) - 1e-10,
                        "BR below incumbent at state {i}"
                    );
                    assert_abs_diff_eq!(br.payoff.value(i), best[i], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn bang_bang_brackets_mixed_lookahead() {
        let params = GameParams::new(0.7, 0.3, 0.6, 5).unwrap();
        let space = StateSpace::new(5).unwrap();
        let dynamics = RoundDynamics::new(&space, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..space.len()).map(|_| rng.random()).collect();
        for &i in space.interior_indices() {
            for n in Player::ALL {
                let (dn, dp) = dynamics.own_pair(i, n, &v).unwrap();
                for _ in 0..5 {
                    let x: f64 = rng.random();
                    let mixed = x * dn + (1.0 - x) * dp;
                    assert!(mixed <= dn.max(dp) + 1e-15 && mixed >= dn.min(dp) - 1e-15);
                }
            }
        }
    }

    #[test]
    fn greedy_argmax_invariant_under_scaling() {
        let params = GameParams::new(0.81, 0.33, 0.57, 5).unwrap();
        let engine = Engine::new(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v: Vec<f64> = (0..engine.space().len()).map(|_| rng.random()).collect();
        let scaled: Vec<f64> = v.iter().map(|x| 2.5 * x).collect();
        for n in Player::ALL {
            let a = engine.greedy_strategy(n, &v, |_| true);
            let b = engine.greedy_strategy(n, &scaled, |_| true);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn analytic_ne_examples() {
        // p = (0.9, 0.5, 0.2): the three products are 0.1 * 0.7 > 0,
        // 0.4 * (-0.4) < 0 and (-0.3) * (-0.3) > 0.
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let ne = k3_analytic_ne(&params).unwrap();
        assert_eq!(ne.profile.get(0), [1.0, 0.0, 1.0]);
        assert_eq!(ne.indifferent, [false; 3]);

        let sym = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let ne = k3_analytic_ne(&sym).unwrap();
        assert_eq!(ne.indifferent, [true; 3]);
        assert_eq!(ne.profile.get(0), [1.0, 1.0, 1.0]);

        assert!(k3_analytic_ne(&GameParams::new(0.5, 0.5, 0.5, 4).unwrap()).is_err());
    }

    #[test]
    fn analytic_ne_certifies_and_flip_fails() {
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let ne = k3_analytic_ne(&params).unwrap();
        let cert = verify_ne(&params, &ne.profile, 1e-9).unwrap();
        assert!(cert.certified, "gains {:?}", cert.max_gain);
        assert!(cert.residual_j <= 1e-12);

        // Flip player 1's choice: certification must fail with positive gain.
        let mut flipped = ne.profile.clone();
        let mut x = flipped.get(0);
        x[0] = 1.0 - x[0];
        flipped.set(0, x);
        let cert = verify_ne(&params, &flipped, 1e-9).unwrap();
        assert!(!cert.certified);
        assert!(cert.max_gain[0] > 1e-6, "gain {:?}", cert.max_gain);

        // Monotone in tolerance: a certified profile stays certified looser.
        let loose = verify_ne(&params, &ne.profile, 1e-3).unwrap();
        assert!(loose.certified);
    }

    #[test]
    fn residual_zero_at_equilibrium_positive_off_it() {
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let ne = k3_analytic_ne(&params).unwrap();
        assert!(residual_j(&params, &ne.profile).unwrap() <= 1e-12);

        let mut anti = ne.profile.clone();
        let x = anti.get(0);
        anti.set(0, [1.0 - x[0], 1.0 - x[1], 1.0 - x[2]]);
        assert!(residual_j(&params, &anti).unwrap() > 1e-10);
    }

    #[test]
    fn residual_ignores_tied_entries() {
        // Fully symmetric game: every choice ties, so J is invariant in x.
        let params = GameParams::new(0.5, 0.5, 0.5, 4).unwrap();
        let a = residual_j(&params, &StationaryProfile::zeros(4)).unwrap();
        let b =
            residual_j(&params, &StationaryProfile::from_bits(4, 0b111_111_111).unwrap()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-18);
        assert!(a <= 1e-12);
    }

    #[test]
    fn enumeration_counts_and_k3_uniqueness() {
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let res = exhaustive_enumeration(&params, 1e-9).unwrap();
        assert_eq!(res.profiles_evaluated, 8);
        assert_eq!(res.equilibria.len(), 1);
        let ne = k3_analytic_ne(&params).unwrap();
        assert_eq!(res.equilibria[0].profile, ne.profile);

        let params4 = GameParams::new(0.9, 0.5, 0.2, 4).unwrap();
        let res4 = exhaustive_enumeration(&params4, 1e-9).unwrap();
        assert_eq!(res4.profiles_evaluated, 512);
        assert!(!res4.equilibria.is_empty());
    }

    #[test]
    fn enumeration_guard_refuses_large_k() {
        let params = GameParams::new(0.9, 0.5, 0.2, 6).unwrap();
        match exhaustive_enumeration(&params, 1e-9) {
            Err(Error::EnumerationTooLarge { k, profiles }) => {
                assert_eq!(k, 6);
                assert_eq!(profiles, 1u128 << 30);
            }
            other => panic!("expected guard, got {other:?}"),
        }
    }

    #[test]
    fn mvi_finds_k3_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let params = random_params(&mut rng, 3);
            let margins = k3_decision_products(&params);
            if margins.iter().any(|m| m.abs() < 1e-5) {
                continue; // near-indifferent draws have no unique target
            }
            let out = mvi(&params, &StationaryProfile::zeros(3), 1e-9, 500).unwrap();
            match out {
                MviOutcome::Converged(cert) => {
                    let ne = k3_analytic_ne(&params).unwrap();
                    assert_eq!(cert.profile, ne.profile, "params {:?}", params.p());
                }
                MviOutcome::Failed(f) => panic!("MVI failed at {:?}: {:?}", params.p(), f.reason),
            }
        }
    }

    #[test]
    fn mvi_respects_iteration_cap() {
        let params = GameParams::new(0.9, 0.5, 0.2, 5).unwrap();
        let out = mvi(&params, &StationaryProfile::zeros(5), 1e-9, 2).unwrap();
        match out {
            MviOutcome::Failed(f) => {
                assert_eq!(f.reason, MviFailureReason::IterationCap);
                assert_eq!(f.iterations, 2);
                assert!(f.residual_j.is_finite());
            }
            MviOutcome::Converged(_) => panic!("cannot converge in 2 iterations"),
        }
    }

    #[test]
    fn mvi_agrees_with_enumeration_at_k4() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..10 {
            let params = random_params(&mut rng, 4);
            let out = mvi(&params, &StationaryProfile::zeros(4), 1e-9, 500).unwrap();
            if let MviOutcome::Converged(cert) = out {
                let enumerated = exhaustive_enumeration(&params, 1e-9).unwrap();
                assert!(
                    enumerated
                        .equilibria
                        .iter()
                        .any(|e| e.profile == cert.profile),
                    "MVI profile not in enumerated set for {:?}",
                    params.p()
                );
            }
        }
    }
}
