//! Game data model: parameters, states, strategy profiles, and the Markov
//! chain a stationary profile induces.
//!
//! The game has three players with pairwise win probabilities
//! `p = (p1, p2, p3)` and a total capital `K` split among them. A state is a
//! split `(s1, s2, s3)` with `s1 + s2 + s3 = K`. Each round one surviving
//! player is picked uniformly, picks a surviving opponent, and the pair
//! exchanges one dollar according to the pairwise probability. Play is
//! absorbed once a single player holds all `K` dollars.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One of the three players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    P1,
    P2,
    P3,
}

impl Player {
    pub const ALL: [Player; 3] = [Player::P1, Player::P2, Player::P3];

    /// Zero-based index, also the canonical index of the player's terminal
    /// state in a [`StateSpace`].
    pub fn index(self) -> usize {
        match self {
            Player::P1 => 0,
            Player::P2 => 1,
            Player::P3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Player> {
        Player::ALL.get(i).copied()
    }

    /// Cyclic successor: P1 -> P2 -> P3 -> P1. A player's selection
    /// probability `x_n` is the probability of selecting this successor.
    pub fn next(self) -> Player {
        match self {
            Player::P1 => Player::P2,
            Player::P2 => Player::P3,
            Player::P3 => Player::P1,
        }
    }

    /// Cyclic predecessor, the opponent selected with probability `1 - x_n`.
    pub fn prev(self) -> Player {
        match self {
            Player::P1 => Player::P3,
            Player::P2 => Player::P1,
            Player::P3 => Player::P2,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index() + 1)
    }
}

/// Game parameters: pairwise win probabilities and total capital.
///
/// The three numbers parameterize the full pairwise map:
/// `p12 = p1`, `p23 = p2`, `p31 = p3`, and complements for the reverse
/// directions. Every probability must lie strictly inside `(0, 1)` and the
/// capital must be at least 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    p: [f64; 3],
    k: u32,
}

impl GameParams {
    pub fn new(p1: f64, p2: f64, p3: f64, k: u32) -> Result<GameParams> {
        let p = [p1, p2, p3];
        for (i, &v) in p.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "p{} = {v} must lie in the open interval (0, 1)",
                    i + 1
                )));
            }
        }
        if k < 3 {
            return Err(Error::InvalidParameter(format!("K = {k} must be >= 3")));
        }
        Ok(GameParams { p, k })
    }

    pub fn p(&self) -> [f64; 3] {
        self.p
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Probability that `m` wins a round against `n`.
    ///
    /// `pairwise(P1, P2) = p1`, `pairwise(P2, P3) = p2`,
    /// `pairwise(P3, P1) = p3`; reverse directions are complements.
    pub fn pairwise(&self, m: Player, n: Player) -> f64 {
        debug_assert_ne!(m, n);
        if n == m.next() {
            self.p[m.index()]
        } else {
            1.0 - self.p[n.index()]
        }
    }
}

/// Classification of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateClass {
    /// One player holds the whole capital; play is absorbed.
    Terminal(Player),
    /// All three players hold positive capital.
    Interior,
    /// Exactly one player is bankrupt but nobody has won yet.
    Boundary,
}

/// A split of the total capital among the three players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State([u32; 3]);

impl State {
    pub fn new(s1: u32, s2: u32, s3: u32) -> State {
        State([s1, s2, s3])
    }

    pub fn coords(&self) -> [u32; 3] {
        self.0
    }

    pub fn s1(&self) -> u32 {
        self.0[0]
    }

    pub fn s2(&self) -> u32 {
        self.0[1]
    }

    pub fn s3(&self) -> u32 {
        self.0[2]
    }

    pub fn capital_of(&self, p: Player) -> u32 {
        self.0[p.index()]
    }

    fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Classify against a total capital `K`, rejecting splits that do not
    /// sum to `K`.
    pub fn classify(&self, k: u32) -> Result<StateClass> {
        if self.total() != k {
            return Err(Error::InvalidState {
                s1: self.s1(),
                s2: self.s2(),
                s3: self.s3(),
                k,
            });
        }
        for p in Player::ALL {
            if self.capital_of(p) == k {
                return Ok(StateClass::Terminal(p));
            }
        }
        if self.0.iter().all(|&s| s > 0) {
            Ok(StateClass::Interior)
        } else {
            Ok(StateClass::Boundary)
        }
    }

    /// The state after `winner` takes one dollar from `loser`. `None` if the
    /// loser has nothing left to pay (such a move cannot occur in play).
    pub fn transfer(&self, winner: Player, loser: Player) -> Option<State> {
        let mut c = self.0;
        if c[loser.index()] == 0 {
            return None;
        }
        c[winner.index()] += 1;
        c[loser.index()] -= 1;
        Some(State(c))
    }

    /// States reachable in one round. Terminal states have no neighbors;
    /// boundary states have the two states of the surviving pair's walk;
    /// interior states have all six one-dollar transfers.
    pub fn neighbors(&self) -> Vec<State> {
        let k = self.total();
        match self.classify(k).expect("own total always sums") {
            StateClass::Terminal(_) => Vec::new(),
            StateClass::Interior => {
                let mut out = Vec::with_capacity(6);
                for m in Player::ALL {
                    for n in [m.next(), m.prev()] {
                        if let Some(s) = self.transfer(m, n) {
                            if !out.contains(&s) {
                                out.push(s);
                            }
                        }
                    }
                }
                out
            }
            StateClass::Boundary => {
                let (a, b) = self.surviving_pair().expect("boundary has two survivors");
                vec![
                    self.transfer(a, b).expect("survivor can pay"),
                    self.transfer(b, a).expect("survivor can pay"),
                ]
            }
        }
    }

    /// For a boundary state, the two players still holding capital.
    pub fn surviving_pair(&self) -> Option<(Player, Player)> {
        let alive: Vec<Player> = Player::ALL
            .into_iter()
            .filter(|p| self.capital_of(*p) > 0)
            .collect();
        match alive.as_slice() {
            [a, b] => Some((*a, *b)),
            _ => None,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// Canonical enumeration of all states for a given `K`.
///
/// The first three states are the terminal states `(K,0,0)`, `(0,K,0)`,
/// `(0,0,K)` in that order; the remaining states follow in lexicographically
/// descending `(s1, s2)` order. The ordering is part of the crate's stable
/// output contract (payoff CSVs, matrices, fixtures).
#[derive(Debug, Clone)]
pub struct StateSpace {
    k: u32,
    states: Vec<State>,
    /// Flat `(K+1) x (K+1)` lookup from `(s1, s2)` to canonical index.
    lookup: Vec<usize>,
    /// Canonical indices of interior states, in canonical order.
    interior: Vec<usize>,
    /// For each canonical index, the interior ordinal or `usize::MAX`.
    interior_ordinal: Vec<usize>,
}

const NO_INDEX: usize = usize::MAX;

impl StateSpace {
    /// Enumerate all `(K+1)(K+2)/2` states for capital `K >= 3`.
    pub fn new(k: u32) -> Result<StateSpace> {
        if k < 3 {
            return Err(Error::InvalidParameter(format!("K = {k} must be >= 3")));
        }
        let mut rest: Vec<State> = Vec::new();
        for s1 in 0..=k {
            for s2 in 0..=(k - s1) {
                let s = State::new(s1, s2, k - s1 - s2);
                if !matches!(s.classify(k)?, StateClass::Terminal(_)) {
                    rest.push(s);
                }
            }
        }
        rest.sort_by(|a, b| (b.s1(), b.s2()).cmp(&(a.s1(), a.s2())));

        let mut states = vec![
            State::new(k, 0, 0),
            State::new(0, k, 0),
            State::new(0, 0, k),
        ];
        states.extend(rest);

        let side = (k + 1) as usize;
        let mut lookup = vec![NO_INDEX; side * side];
        for (i, s) in states.iter().enumerate() {
            lookup[s.s1() as usize * side + s.s2() as usize] = i;
        }
        let mut interior = Vec::new();
        let mut interior_ordinal = vec![NO_INDEX; states.len()];
        for (i, s) in states.iter().enumerate() {
            if s.classify(k)? == StateClass::Interior {
                interior_ordinal[i] = interior.len();
                interior.push(i);
            }
        }
        Ok(StateSpace {
            k,
            states,
            lookup,
            interior,
            interior_ordinal,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Total number of states, `(K+1)(K+2)/2`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> State {
        self.states[idx]
    }

    /// Canonical index of a state, if it belongs to this space.
    pub fn index_of(&self, s: &State) -> Option<usize> {
        if s.total() != self.k {
            return None;
        }
        let side = (self.k + 1) as usize;
        let i = self.lookup[s.s1() as usize * side + s.s2() as usize];
        (i != NO_INDEX).then_some(i)
    }

    /// Canonical indices of the interior states, `(K-1)(K-2)/2` of them.
    pub fn interior_indices(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    /// Number of boundary states, `3K`: everything outside the interior,
    /// terminal states included (they sit on the boundary lines too).
    pub fn boundary_count(&self) -> usize {
        self.len() - self.interior_count()
    }

    /// Interior ordinal (position among interior states) of a canonical
    /// index, if that state is interior.
    pub fn interior_ordinal(&self, idx: usize) -> Option<usize> {
        let o = *self.interior_ordinal.get(idx)?;
        (o != NO_INDEX).then_some(o)
    }

    /// Canonical index of the terminal state owned by `p` (0, 1 or 2).
    pub fn terminal_index(&self, p: Player) -> usize {
        p.index()
    }
}

/// Number of interior states for capital `K`, `(K-1)(K-2)/2`.
pub fn interior_count_for(k: u32) -> usize {
    ((k - 1) * (k - 2) / 2) as usize
}

/// Per-interior-state opponent-selection probabilities for the three
/// players.
///
/// Entry `n` of a state's triple is the probability that player `n+1`
/// selects its cyclic successor (`P1 -> P2`, `P2 -> P3`, `P3 -> P1`); the
/// complement selects the predecessor. Boundary and terminal states carry
/// no entries: the opponent there is forced.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProfile {
    k: u32,
    x: Vec<[f64; 3]>,
}

impl StationaryProfile {
    /// A profile with the same selection triple at every interior state.
    pub fn constant(k: u32, x: [f64; 3]) -> Result<StationaryProfile> {
        if k < 3 {
            return Err(Error::InvalidParameter(format!("K = {k} must be >= 3")));
        }
        for v in x {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "selection probability {v} outside [0, 1]"
                )));
            }
        }
        Ok(StationaryProfile {
            k,
            x: vec![x; interior_count_for(k)],
        })
    }

    /// The uniform profile: every player selects each opponent with
    /// probability 1/2 everywhere.
    pub fn uniform(k: u32) -> StationaryProfile {
        StationaryProfile::constant(k, [0.5; 3]).expect("0.5 is valid")
    }

    /// The all-zeros deterministic profile (everyone selects their cyclic
    /// predecessor), the seed the convergence experiments start from.
    pub fn zeros(k: u32) -> StationaryProfile {
        StationaryProfile::constant(k, [0.0; 3]).expect("0 is valid")
    }

    /// Deterministic profile from a packed bitmask: bit `3 * ordinal + n`
    /// is player `n+1`'s choice at the interior state with that ordinal.
    pub fn from_bits(k: u32, bits: u64) -> Result<StationaryProfile> {
        let g = interior_count_for(k);
        if 3 * g > 64 {
            return Err(Error::InvalidParameter(format!(
                "bitmask profiles support at most 64 choice bits, K = {k} needs {}",
                3 * g
            )));
        }
        let mut x = vec![[0.0; 3]; g];
        for (ord, triple) in x.iter_mut().enumerate() {
            for (n, slot) in triple.iter_mut().enumerate() {
                *slot = ((bits >> (3 * ord + n)) & 1) as f64;
            }
        }
        Ok(StationaryProfile { k, x })
    }

    /// Build from per-state triples keyed by interior [`State`].
    /// Every interior state of the space must be covered.
    pub fn from_state_map(
        space: &StateSpace,
        map: &std::collections::BTreeMap<State, [f64; 3]>,
    ) -> Result<StationaryProfile> {
        let mut x = vec![[f64::NAN; 3]; space.interior_count()];
        for (s, triple) in map {
            let idx = space.index_of(s).ok_or(Error::InvalidState {
                s1: s.s1(),
                s2: s.s2(),
                s3: s.s3(),
                k: space.k(),
            })?;
            let ord = space.interior_ordinal(idx).ok_or_else(|| {
                Error::InvalidParameter(format!("state {s} is not interior; its choice is forced"))
            })?;
            for v in triple {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::InvalidParameter(format!(
                        "selection probability {v} at {s} outside [0, 1]"
                    )));
                }
            }
            x[ord] = *triple;
        }
        for (ord, triple) in x.iter().enumerate() {
            if triple[0].is_nan() {
                let s = space.state(space.interior_indices()[ord]);
                return Err(Error::IncompleteProfile {
                    s1: s.s1(),
                    s2: s.s2(),
                    s3: s.s3(),
                });
            }
        }
        Ok(StationaryProfile { k: space.k(), x })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Number of interior states covered.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Selection triple at an interior ordinal.
    pub fn get(&self, ordinal: usize) -> [f64; 3] {
        self.x[ordinal]
    }

    pub fn set(&mut self, ordinal: usize, x: [f64; 3]) {
        self.x[ordinal] = x;
    }

    /// Replace one player's selection probabilities at every interior state.
    pub fn with_player_strategy(&self, p: Player, strategy: &[f64]) -> StationaryProfile {
        assert_eq!(strategy.len(), self.x.len());
        let mut out = self.clone();
        for (ord, &v) in strategy.iter().enumerate() {
            out.x[ord][p.index()] = v;
        }
        out
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_deterministic(&self) -> bool {
        self.x
            .iter()
            .flatten()
            .all(|&v| v == 0.0 || v == 1.0)
    }

    /// Pack a deterministic profile into the bitmask used by enumeration.
    /// `None` if any entry is mixed.
    pub fn to_bits(&self) -> Option<u64> {
        if !self.is_deterministic() || 3 * self.x.len() > 64 {
            return None;
        }
        let mut bits = 0u64;
        for (ord, triple) in self.x.iter().enumerate() {
            for (n, &v) in triple.iter().enumerate() {
                if v == 1.0 {
                    bits |= 1 << (3 * ord + n);
                }
            }
        }
        Some(bits)
    }

    fn check_matches(&self, space: &StateSpace) -> Result<()> {
        if self.k != space.k() || self.x.len() != space.interior_count() {
            let missing = space
                .interior_indices()
                .get(self.x.len())
                .map(|&i| space.state(i))
                .unwrap_or_else(|| space.state(space.interior_indices()[0]));
            return Err(Error::IncompleteProfile {
                s1: missing.s1(),
                s2: missing.s2(),
                s3: missing.s3(),
            });
        }
        Ok(())
    }
}

/// Dense row-stochastic transition matrix of the chain induced by a
/// parameter set and a stationary profile, over the canonical state order.
///
/// Rows 0..3 (the terminal states) are absorbing unit rows, so the matrix is
/// already in the canonical block form with the absorbing identity first.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    space: Arc<StateSpace>,
    params: GameParams,
    matrix: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Build the chain for `params` under `profile`.
    pub fn new(params: &GameParams, profile: &StationaryProfile) -> Result<TransitionMatrix> {
        let space = Arc::new(StateSpace::new(params.k())?);
        TransitionMatrix::with_space(space, params, profile)
    }

    /// Build the chain reusing an existing state space (hot loops build many
    /// matrices over one space).
    pub fn with_space(
        space: Arc<StateSpace>,
        params: &GameParams,
        profile: &StationaryProfile,
    ) -> Result<TransitionMatrix> {
        profile.check_matches(&space)?;
        let n = space.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, s) in space.states().iter().enumerate() {
            match s.classify(space.k())? {
                StateClass::Terminal(_) => m[(i, i)] = 1.0,
                StateClass::Boundary => {
                    let (a, b) = s.surviving_pair().expect("boundary");
                    // The surviving pair plays every round; the 1/2 selection
                    // factor cancels because either selection yields the same
                    // match, so the round winner follows the pairwise odds.
                    let p_ab = params.pairwise(a, b);
                    let win = s.transfer(a, b).expect("survivor pays");
                    let lose = s.transfer(b, a).expect("survivor pays");
                    m[(i, space.index_of(&win).unwrap())] += p_ab;
                    m[(i, space.index_of(&lose).unwrap())] += 1.0 - p_ab;
                }
                StateClass::Interior => {
                    let ord = space.interior_ordinal(i).expect("interior");
                    let x = profile.get(ord);
                    // Mass on the (n, next(n)) pairing is (x_n + 1 - x_next)/3:
                    // either n selects its successor or the successor selects n.
                    for pl in Player::ALL {
                        let opp = pl.next();
                        let coeff = (x[pl.index()] + 1.0 - x[opp.index()]) / 3.0;
                        let p_win = params.pairwise(pl, opp);
                        let win = s.transfer(pl, opp).expect("interior transfer");
                        let lose = s.transfer(opp, pl).expect("interior transfer");
                        m[(i, space.index_of(&win).unwrap())] += coeff * p_win;
                        m[(i, space.index_of(&lose).unwrap())] += coeff * (1.0 - p_win);
                    }
                }
            }
        }
        Ok(TransitionMatrix {
            space,
            params: *params,
            matrix: m,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<StateSpace> {
        Arc::clone(&self.space)
    }

    pub fn params(&self) -> &GameParams {
        &self.params
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Row-stochasticity check: every row sums to 1 within `tol` and every
    /// entry lies in `[0, 1]`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for i in 0..self.space.len() {
            let mut sum = 0.0;
            for j in 0..self.space.len() {
                let v = self.matrix[(i, j)];
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(Error::SolverFailure(format!(
                        "transition entry ({i},{j}) = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::SolverFailure(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok( ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn params_reject_out_of_range() {
        assert!(GameParams::new(0.0, 0.5, 0.5, 3).is_err());
        assert!(GameParams::new(1.0, 0.5, 0.5, 3).is_err());
        assert!(GameParams::new(0.5, 0.5, 0.5, 2).is_err());
        assert!(GameParams::new(0.5, 0.5, 0.5, 3).is_ok());
    }

    #[test]
    fn pairwise_map_matches_parameterization() {
        let g = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        assert_eq!(g.pairwise(Player::P1, Player::P2), 0.9);
        assert_eq!(g.pairwise(Player::P2, Player::P1), 1.0 - 0.9);
        assert_eq!(g.pairwise(Player::P2, Player::P3), 0.5);
        assert_eq!(g.pairwise(Player::P3, Player::P2), 0.5);
        assert_eq!(g.pairwise(Player::P3, Player::P1), 0.2);
        assert_abs_diff_eq!(g.pairwise(Player::P1, Player::P3), 0.8);
    }

    #[test]
    fn state_counts_match_formulas() {
        // N_K = (K+1)(K+2)/2, interior (K-1)(K-2)/2, boundary 3K.
        for k in 3..=12u32 {
            let space = StateSpace::new(k).unwrap();
            assert_eq!(space.len() as u32, (k + 1) * (k + 2) / 2, "K={k}");
            assert_eq!(space.interior_count() as u32, (k - 1) * (k - 2) / 2);
            assert_eq!(space.boundary_count() as u32, 3 * k);
        }
    }

    #[test]
    fn k3_has_ten_states_one_interior() {
        let space = StateSpace::new(3).unwrap();
        assert_eq!(space.len(), 10);
        assert_eq!(space.interior_count(), 1);
        assert_eq!(space.state(space.interior_indices()[0]), State::new(1, 1, 1));
    }

    #[test]
    fn k7_counts() {
        let space = StateSpace::new(7).unwrap();
        assert_eq!(space.len(), 36);
        assert_eq!(space.interior_count(), 15);
        assert_eq!(space.boundary_count(), 21);
    }

    #[test]
    fn terminal_states_come_first() {
        let space = StateSpace::new(5).unwrap();
        assert_eq!(space.state(0), State::new(5, 0, 0));
        assert_eq!(space.state(1), State::new(0, 5, 0));
        assert_eq!(space.state(2), State::new(0, 0, 5));
        // Remaining states strictly descend in (s1, s2).
        for w in space.states()[3..].windows(2) {
            assert!((w[0].s1(), w[0].s2()) > (w[1].s1(), w[1].s2()));
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(
            State::new(3, 0, 0).classify(3).unwrap(),
            StateClass::Terminal(Player::P1)
        );
        assert_eq!(State::new(1, 1, 1).classify(3).unwrap(), StateClass::Interior);
        assert_eq!(State::new(2, 1, 0).classify(3).unwrap(), StateClass::Boundary);
        assert!(State::new(2, 1, 1).classify(3).is_err());
    }

    #[test]
    fn neighbors_of_interior_and_boundary() {
        let mut got = State::new(1, 1, 1).neighbors();
        got.sort();
        let mut want = vec![
            State::new(2, 0, 1),
            State::new(0, 2, 1),
            State::new(1, 2, 0),
            State::new(1, 0, 2),
            State::new(2, 1, 0),
            State::new(0, 1, 2),
        ];
        want.sort();
        assert_eq!(got, want);

        let mut got = State::new(2, 1, 0).neighbors();
        got.sort();
        assert_eq!(got, vec![State::new(1, 2, 0), State::new(3, 0, 0)]);

        assert!(State::new(3, 0, 0).neighbors().is_empty());
    }

    #[test]
    fn boundary_rows_match_two_player_walk() {
        // Pr((2,1,0) -> (3,0,0)) = p1, Pr((2,1,0) -> (1,2,0)) = 1 - p1.
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let profile = StationaryProfile::uniform(3);
        let tm = TransitionMatrix::new(&params, &profile).unwrap();
        let sp = tm.space();
        let i = sp.index_of(&State::new(2, 1, 0)).unwrap();
        assert_abs_diff_eq!(tm.matrix()[(i, sp.index_of(&State::new(3, 0, 0)).unwrap())], 0.9);
        assert_abs_diff_eq!(tm.matrix()[(i, sp.index_of(&State::new(1, 2, 0)).unwrap())], 0.1);
        // (2,0,1): P1 vs P3, P1 wins with 1 - p3.
        let i = sp.index_of(&State::new(2, 0, 1)).unwrap();
        assert_abs_diff_eq!(
            tm.matrix()[(i, sp.index_of(&State::new(3, 0, 0)).unwrap())],
            0.8
        );
        assert_abs_diff_eq!(
            tm.matrix()[(i, sp.index_of(&State::new(1, 0, 2)).unwrap())],
            0.2
        );
    }

    #[test]
    fn symmetric_interior_row_is_uniform_sixth() {
        let params = GameParams::new(0.5, 0.5, 0.5, 3).unwrap();
        let profile = StationaryProfile::constant(3, [1.0, 1.0, 1.0]).unwrap();
        let tm = TransitionMatrix::new(&params, &profile).unwrap();
        let sp = tm.space();
        let i = sp.index_of(&State::new(1, 1, 1)).unwrap();
        for s in State::new(1, 1, 1).neighbors() {
            assert_abs_diff_eq!(
                tm.matrix()[(i, sp.index_of(&s).unwrap())],
                1.0 / 6.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn interior_row_hand_computed() {
        // x = (1, 0, 0), p = (0.9, 0.5, 0.2): the six bracketed coefficients.
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let profile = StationaryProfile::constant(3, [1.0, 0.0, 0.0]).unwrap();
        let tm = TransitionMatrix::new(&params, &profile).unwrap();
        let sp = tm.space();
        let i = sp.index_of(&State::new(1, 1, 1)).unwrap();
        let at = |s: State| tm.matrix()[(i, sp.index_of(&s).unwrap())];
        assert_abs_diff_eq!(at(State::new(2, 0, 1)), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(at(State::new(0, 2, 1)), 2.0 / 3.0 * 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(at(State::new(1, 2, 0)), 1.0 / 3.0 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(at(State::new(1, 0, 2)), 1.0 / 3.0 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(at(State::new(2, 1, 0)), 0.0);
        assert_abs_diff_eq!(at(State::new(0, 1, 2)), 0.0);
    }

    #[test]
    fn incomplete_profile_rejected() {
        let params = GameParams::new(0.5, 0.5, 0.5, 5).unwrap();
        let short = StationaryProfile::uniform(4); // wrong K
        assert!(matches!(
            TransitionMatrix::new(&params, &short),
            Err(Error::IncompleteProfile { .. })
        ));
    }

    #[test]
    fn from_state_map_requires_full_coverage() {
        let space = StateSpace::new(4).unwrap();
        let mut map = std::collections::BTreeMap::new();
        map.insert(State::new(1, 1, 2), [0.5, 0.5, 0.5]);
        assert!(matches!(
            StationaryProfile::from_state_map(&space, &map),
            Err(Error::IncompleteProfile { .. })
        ));
    }

    #[test]
    fn bits_round_trip() {
        let p = StationaryProfile::from_bits(4, 0b101_010_110).unwrap();
        assert!(p.is_deterministic());
        assert_eq!(p.to_bits(), Some(0b101_010_110));
        assert_eq!(StationaryProfile::uniform(4).to_bits(), None);
    }

    proptest! {
        /// Rows always sum to 1 and the matrix lives on the one-step
        /// neighborhood, for arbitrary parameters and profiles.
        #[test]
        fn rows_stochastic_and_supported_on_neighbors(
            k in 3u32..=7,
            p1 in 0.01f64..0.99,
            p2 in 0.01f64..0.99,
            p3 in 0.01f64..0.99,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let params = GameParams::new(p1, p2, p3, k).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let space = StateSpace::new(k).unwrap();
            let mut profile = StationaryProfile::uniform(k);
            for ord in 0..space.interior_count() {
                profile.set(ord, [rng.random(), rng.random(), rng.random()]);
            }
            let tm = TransitionMatrix::with_space(std::sync::Arc::new(space), &params, &profile).unwrap();
            tm.validate(1e-12).unwrap();
            let sp = tm.space();
            for (i, s) in sp.states().iter().enumerate() {
                let nbrs = s.neighbors();
                for (j, t) in sp.states().iter().enumerate() {
                    let v = tm.matrix()[(i, j)];
                    if i == j && nbrs.is_empty() {
                        prop_assert!((v - 1.0).abs() < 1e-15);
                    } else if v != 0.0 {
                        prop_assert!(nbrs.contains(t), "mass {v} from {s} to non-neighbor {t}");
                    }
                }
            }
        }

        /// The chain depends on x only through the three pairing sums
        /// (x1 + 1 - x2), (x2 + 1 - x3), (x3 + 1 - x1).
        #[test]
        fn matrix_depends_on_pairing_sums_only(
            x1 in 0.0f64..0.7,
            x2 in 0.0f64..0.7,
            x3 in 0.0f64..0.7,
            delta in 0.0f64..0.3,
        ) {
            let params = GameParams::new(0.9, 0.5, 0.2, 5).unwrap();
            let a = StationaryProfile::constant(5, [x1, x2, x3]).unwrap();
            let b = StationaryProfile::constant(5, [x1 + delta, x2 + delta, x3 + delta]).unwrap();
            let ta = TransitionMatrix::new(&params, &a).unwrap();
            let tb = TransitionMatrix::new(&params, &b).unwrap();
            let diff = (ta.matrix() - tb.matrix()).abs().max();
            prop_assert!(diff < 1e-12, "max diff {diff}");
        }
    }
}
