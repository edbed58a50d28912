//! Monte Carlo play of the game under a stationary profile.
//!
//! The engine exists to verify the exact solvers from a statistically
//! independent direction: it never touches the transition matrix, it just
//! plays the rules forward round by round.
//!
//! # Random stream
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), a counter-based stream
//! cipher generator: the master seed keys the cipher and game `i` draws from
//! stream `i`. Games are therefore independent of each other and of the
//! order they run in, batches parallelize freely, and a run is reproducible
//! bit for bit from `(seed, games)` alone. Cross-language ports seeding the
//! same scheme match statistically (same family of independent streams),
//! though not necessarily bit for bit.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{GameParams, Player, State, StateClass, StateSpace, StationaryProfile};

/// Default per-game round cap. A game that lives this long signals a bug,
/// not bad luck: absorption times are geometric-tailed and tiny by
/// comparison.
pub const DEFAULT_ROUND_CAP: u64 = 10_000_000;

/// Aggregated outcome of a batch of simulated games.
///
/// Accumulators are integers so that merging partial batches is exact and
/// order-independent; the floating-point statistics are derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub params_p: [f64; 3],
    pub k: u32,
    pub start: State,
    pub games: u64,
    pub seed: u64,
    /// Wins per player; sums to `games`.
    pub wins: [u64; 3],
    sum_rounds: u128,
    sum_rounds_sq: u128,
}

impl SimulationResult {
    /// Empirical win frequencies; sum to 1.
    pub fn frequencies(&self) -> [f64; 3] {
        self.wins.map(|w| w as f64 / self.games as f64)
    }

    /// Mean game duration in rounds.
    pub fn mean_rounds(&self) -> f64 {
        self.sum_rounds as f64 / self.games as f64
    }

    /// Unbiased sample variance of the duration.
    pub fn variance_rounds(&self) -> f64 {
        if self.games < 2 {
            return 0.0;
        }
        let n = self.games as f64;
        let sum = self.sum_rounds as f64;
        let sumsq = self.sum_rounds_sq as f64;
        ((sumsq - sum * sum / n) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean duration.
    pub fn std_error_rounds(&self) -> f64 {
        (self.variance_rounds() / self.games as f64).sqrt()
    }
}

/// Sample mean duration with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub games: u64,
}

/// Play `games` independent games from `start` and aggregate the outcomes.
/// Uses the default round cap of 10^7.
pub fn simulate(
    params: &GameParams,
    profile: &StationaryProfile,
    start: State,
    games: u64,
    seed: u64,
) -> Result<SimulationResult> {
    simulate_with_cap(params, profile, start, games, seed, DEFAULT_ROUND_CAP)
}

/// [`simulate`] with an explicit per-game round cap. Exceeding the cap is an
/// error, never a truncation: truncating would bias every estimate.
pub fn simulate_with_cap(
    params: &GameParams,
    profile: &StationaryProfile,
    start: State,
    games: u64,
    seed: u64,
    cap: u64,
) -> Result<SimulationResult> {
    if games == 0 {
        return Err(Error::InvalidParameter("games must be >= 1".into()));
    }
    let space = StateSpace::new(params.k())?;
    match start.classify(params.k())? {
        StateClass::Terminal(_) => {
            return Err(Error::InvalidParameter(format!(
                "start state {start} is terminal; nothing to play"
            )));
        }
        _ => {}
    }
    if profile.k() != params.k() || profile.len() != space.interior_count() {
        let s = space.state(space.interior_indices()[0]);
        return Err(Error::IncompleteProfile {
            s1: s.s1(),
            s2: s.s2(),
            s3: s.s3(),
        });
    }

    let base = ChaCha8Rng::seed_from_u64(seed);
    let outcomes: Result<Vec<(Player, u64)>> = (0..games)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.clone();
            rng.set_stream(i);
            play_one(params, profile, &space, start, &mut rng, cap)
                .ok_or(Error::SimulationDivergence { cap, game: i })
        })
        .collect();

    let mut wins = [0u64; 3];
    let mut sum_rounds: u128 = 0;
    let mut sum_rounds_sq: u128 = 0;
    for (winner, rounds) in outcomes? {
        wins[winner.index()] += 1;
        sum_rounds += rounds as u128;
        sum_rounds_sq += (rounds as u128) * (rounds as u128);
    }
    Ok(SimulationResult {
        params_p: params.p(),
        k: params.k(),
        start,
        games,
        seed,
        wins,
        sum_rounds,
        sum_rounds_sq,
    })
}

/// Play a single game; `None` if the round cap is exceeded.
fn play_one(
    params: &GameParams,
    profile: &StationaryProfile,
    space: &StateSpace,
    start: State,
    rng: &mut ChaCha8Rng,
    cap: u64,
) -> Option<(Player, u64)> {
    let mut s = start;
    let mut rounds: u64 = 0;
    loop {
        if let StateClass::Terminal(winner) = s.classify(params.k()).expect("valid state") {
            return Some((winner, rounds));
        }
        if rounds >= cap {
            return None;
        }
        rounds += 1;

        let alive: Vec<Player> = Player::ALL
            .into_iter()
            .filter(|p| s.capital_of(*p) > 0)
            .collect();
        let mover = alive[rng.random_range(0..alive.len())];
        let opponent = if alive.len() == 2 {
            // Forced: the only other survivor.
            if alive[0] == mover { alive[1] } else { alive[0] }
        } else {
            let idx = space.index_of(&s).expect("state in space");
            let ord = space.interior_ordinal(idx).expect("interior");
            let x = profile.get(ord)[mover.index()];
            if rng.random::<f64>() < x {
                mover.next()
            } else {
                mover.prev()
            }
        };
        let mover_wins = rng.random::<f64>() < params.pairwise(mover, opponent);
        s = if mover_wins {
            s.transfer(mover, opponent).expect("opponent has capital")
        } else {
            s.transfer(opponent, mover).expect("mover has capital")
        };
    }
}

/// Sample mean and standard error of the game duration.
pub fn estimate_duration(
    params: &GameParams,
    profile: &StationaryProfile,
    start: State,
    games: u64,
    seed: u64,
) -> Result<DurationEstimate> {
    let r = simulate(params, profile, start, games, seed)?;
    Ok(DurationEstimate {
        mean: r.mean_rounds(),
        std_error: r.std_error_rounds(),
        games,
    })
}

/// Append a simulation result as one CSV row with columns
/// `K,p1,p2,p3,start,games,seed,f1,f2,f3,mean_rounds`. Set `header` to also
/// emit the column header first. The start state is encoded `s1-s2-s3`.
pub fn write_simulation_csv<W: Write>(
    result: &SimulationResult,
    header: bool,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record([
            "K",
            "p1",
            "p2",
            "p3",
            "start",
            "games",
            "seed",
            "f1",
            "f2",
            "f3",
            "mean_rounds",
        ])?;
    }
    let f = result.frequencies();
    w.write_record([
        result.k.to_string(),
        format!("{}", result.params_p[0]),
        format!("{}", result.params_p[1]),
        format!("{}", result.params_p[2]),
        format!(
            "{}-{}-{}",
            result.start.s1(),
            result.start.s2(),
            result.start.s3()
        ),
        result.games.to_string(),
        result.seed.to_string(),
        format!("{}", f[0]),
        format!("{}", f[1]),
        format!("{}", f[2]),
        format!("{}", result.mean_rounds()),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::TransitionMatrix;
    use crate::payoff::{absorption_report, solve_payoff_direct};

    #[test]
    fn rejects_terminal_start_and_zero_games() {
        let params = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        assert!(simulate(&params, &profile, State::new(3, 0, 0), 10, 1).is_err());
        assert!(simulate(&params, &profile, State::new(1, 1, 1), 0, 1).is_err());
    }

    #[test]
    fn identical_seed_identical_result() {
        let params = GameParams::new(0.6, 0.4, 0.7, 4).unwrap();
        let profile = StationaryProfile::uniform(4);
        let a = simulate(&params, &profile, State::new(2, 1, 1), 2000, 42).unwrap();
        let b = simulate(&params, &profile, State::new(2, 1, 1), 2000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params, &profile, State::new(2, 1, 1), 2000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn win_counts_sum_and_duration_at_least_one() {
        let params = GameParams::new(0.3, 0.8, 0.5, 4).unwrap();
        let profile = StationaryProfile::uniform(4);
        let r = simulate(&params, &profile, State::new(1, 2, 1), 5000, 7).unwrap();
        assert_eq!(r.wins.iter().sum::<u64>(), r.games);
        let f = r.frequencies();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.mean_rounds() >= 1.0);
    }

    #[test]
    fn symmetric_start_is_fair() {
        let params = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let games = 100_000;
        let r = simulate(&params, &profile, State::new(1, 1, 1), games, 11).unwrap();
        let sigma = (1.0 / 3.0 * 2.0 / 3.0 / games as f64).sqrt();
        for f in r.frequencies() {
            assert!(
                (f - 1.0 / 3.0).abs() < 3.0 * sigma,
                "frequency {f} outside 3 sigma of 1/3"
            );
        }
    }

    #[test]
    fn two_player_line_matches_closed_form() {
        // From (2,1,0) with p1 = 1/2 player 1 wins with probability 2/3.
        let params = GameParams::new(0.5, 0.2, 0.9, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let games = 100_000;
        let r = simulate(&params, &profile, State::new(2, 1, 0), games, 13).unwrap();
        let p = 2.0 / 3.0;
        let sigma = (p * (1.0 - p) / games as f64).sqrt();
        assert!((r.frequencies()[0] - p).abs() < 3.0 * sigma);
        assert_eq!(r.wins[2], 0, "player 3 is already bankrupt");
    }

    #[test]
    fn near_deterministic_two_player_game_ends_in_one_round() {
        // One dollar from terminal with the pair probability near 1: the
        // mean duration approaches 1.
        let params = GameParams::new(0.999999, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let d = estimate_duration(&params, &profile, State::new(2, 1, 0), 20_000, 3).unwrap();
        assert!(d.mean >= 1.0);
        assert!(d.mean < 1.01, "mean {} should be near 1", d.mean);
    }

    #[test]
    fn frequencies_and_durations_match_exact_solution() {
        let params = GameParams::new(0.7, 0.35, 0.55, 4).unwrap();
        let mut profile = StationaryProfile::uniform(4);
        profile.set(0, [0.2, 0.9, 0.4]);
        let start = State::new(1, 1, 2);
        let games = 100_000;
        let r = simulate(&params, &profile, start, games, 1234).unwrap();

        let tm = TransitionMatrix::new(&params, &profile).unwrap();
        let idx = tm.space().index_of(&start).unwrap();
        let f = r.frequencies();
        for n in Player::ALL {
            let exact = solve_payoff_direct(&tm, n).unwrap().value(idx);
            let sigma = (exact * (1.0 - exact) / games as f64).sqrt();
            assert!(
                (f[n.index()] - exact).abs() < 3.0 * sigma + 1e-9,
                "{n}: {f:?} vs exact {exact}"
            );
        }
        let report = absorption_report(&tm).unwrap();
        let expected = report.rounds_from(idx);
        let d = DurationEstimate {
            mean: r.mean_rounds(),
            std_error: r.std_error_rounds(),
            games,
        };
        assert!(
            (d.mean - expected).abs() < 3.0 * d.std_error,
            "duration {} vs fundamental-matrix {}",
            d.mean,
            expected
        );
    }

    #[test]
    fn round_cap_reported_as_divergence() {
        let params = GameParams::new(0.5, 0.5, 0.5, 5).unwrap();
        let profile = StationaryProfile::uniform(5);
        match simulate_with_cap(&params, &profile, State::new(2, 2, 1), 50, 5, 1) {
            Err(Error::SimulationDivergence { cap, .. }) => assert_eq!(cap, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn csv_row_shape() {
        let params = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let r = simulate(&params, &profile, State::new(1, 1, 1), 100, 9).unwrap();
        let mut buf = Vec::new();
        write_simulation_csv(&r, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("K,p1,p2,p3,start,games,seed,f1,f2,f3,mean_rounds")
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("3,0.5,0.5,0.5,1-1-1,100,9,"));
    }
}
