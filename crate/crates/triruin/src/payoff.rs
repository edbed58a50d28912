//! Exact winning probabilities for a fixed stationary profile.
//!
//! Three independent routes compute the same payoff vector: a dense LU solve
//! of the linear payoff system, iterated transition-matrix powers, and the
//! affine fixed-point iteration. The fundamental matrix of the transient
//! block supplies absorption probabilities and expected absorption times as
//! a fourth cross-check, and the `K = 3` closed forms give an analytic
//! oracle.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{GameParams, Player, State, StateSpace, TransitionMatrix};

/// Per-state winning probabilities for one player, in canonical state order.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffVector {
    player: Player,
    values: Vec<f64>,
}

impl PayoffVector {
    pub fn new(player: Player, values: Vec<f64>) -> PayoffVector {
        PayoffVector { player, values }
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Value at a state, if it belongs to the space.
    pub fn at(&self, space: &StateSpace, s: &State) -> Option<f64> {
        space.index_of(s).map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Absorption statistics of the chain: where the game ends and how long it
/// takes, per transient state.
///
/// Rows follow the canonical order with the three terminal states stripped,
/// so transient row `t` describes canonical state `t + 3`.
#[derive(Debug, Clone)]
pub struct AbsorptionReport {
    /// `(N-3) x 3` absorption probabilities into `(K,0,0)`, `(0,K,0)`,
    /// `(0,0,K)`, the transient rows of the limit matrix.
    pub absorb: Vec<[f64; 3]>,
    /// Expected rounds to absorption from each transient state.
    pub expected_rounds: Vec<f64>,
}

impl AbsorptionReport {
    /// Absorption probabilities from a canonical state index.
    /// Terminal states return their own indicator.
    pub fn absorb_from(&self, idx: usize) -> [f64; 3] {
        if idx < 3 {
            let mut row = [0.0; 3];
            row[idx] = 1.0;
            row
        } else {
            self.absorb[idx - 3]
        }
    }

    /// Expected rounds to absorption from a canonical state index.
    pub fn rounds_from(&self, idx: usize) -> f64 {
        if idx < 3 {
            0.0
        } else {
            self.expected_rounds[idx - 3]
        }
    }
}

fn unit_payoff_rhs(tm: &TransitionMatrix, n: Player) -> DVector<f64> {
    let mut b = DVector::zeros(tm.space().len());
    b[tm.space().terminal_index(n)] = 1.0;
    b
}

/// `I - discount * P~` where `P~` is the transition matrix with its three
/// terminal rows zeroed. The payoff system is `(I - P~) V = b_n`; with a
/// discount below 1 it becomes the evaluation system of the discounted
/// auxiliary game, where each former terminal state pays its unit turn
/// payoff once and then rests.
fn payoff_system_matrix(tm: &TransitionMatrix, discount: f64) -> DMatrix<f64> {
    let n = tm.space().len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 3..n {
        for j in 0..n {
            a[(i, j)] -= discount * tm.matrix()[(i, j)];
        }
    }
    a
}

/// Residual bound the direct solve must meet.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-11;

fn finalize_values(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    for x in &mut v {
        if !x.is_finite() || *x < -1e-9 || *x > 1.0 + 1e-9 {
            return Err(Error::SolverFailure(format!(
                "{what} produced value {x} outside [0, 1]"
            )));
        }
        *x = x.clamp(0.0, 1.0);
    }
    Ok(v)
}

/// Solve the payoff system `(I - P~) V = b_n` exactly by dense LU.
///
/// The solution is the unique vector with `V(terminal-for-n) = 1`, zero at
/// the other terminals, and harmonic on every transient state.
pub fn solve_payoff_direct(tm: &TransitionMatrix, n: Player) -> Result<PayoffVector> {
    let a = payoff_system_matrix(tm, 1.0);
    let b = unit_payoff_rhs(tm, n);
    let lu = a.clone().lu();
    let v = lu
        .solve(&b)
        .ok_or_else(|| Error::SolverFailure("singular payoff system".into()))?;
    let residual = (&a * &v - &b).abs().max();
    if residual > DIRECT_RESIDUAL_TOL {
        return Err(Error::SolverFailure(format!(
            "payoff solve residual {residual:.3e} exceeds {DIRECT_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(PayoffVector::new(
        n,
        finalize_values(v.iter().copied().collect(), "direct solve")?,
    ))
}

/// Factor the payoff system once and solve for all three players.
/// Cheaper than three [`solve_payoff_direct`] calls because `P~` does not
/// depend on the player, only the right-hand side does.
pub fn solve_all_payoffs(tm: &TransitionMatrix) -> Result<[PayoffVector; 3]> {
    solve_system_all(tm, 1.0)
}

/// Shared direct solve for the plain (`discount = 1`) and discounted
/// evaluation systems.
pub(crate) fn solve_system_all(tm: &TransitionMatrix, discount: f64) -> Result<[PayoffVector; 3]> {
    let a = payoff_system_matrix(tm, discount);
    let lu = a.clone().lu();
    let mut out = Vec::with_capacity(3);
    for n in Player::ALL {
        let b = unit_payoff_rhs(tm, n);
        let v = lu
            .solve(&b)
            .ok_or_else(|| Error::SolverFailure("singular payoff system".into()))?;
        let residual = (&a * &v - &b).abs().max();
        if residual > DIRECT_RESIDUAL_TOL {
            return Err(Error::SolverFailure(format!(
                "payoff solve residual {residual:.3e} exceeds {DIRECT_RESIDUAL_TOL:.0e}"
            )));
        }
        out.push(PayoffVector::new(
            n,
            finalize_values(v.iter().copied().collect(), "direct solve")?,
        ));
    }
    Ok(out.try_into().expect("three players"))
}

/// Compute the payoff vector as the limit of transition-matrix powers.
///
/// Iterates `c <- P c` starting from the indicator of player `n`'s terminal
/// state; `c_t(s)` is the probability of having been absorbed there within
/// `t` rounds, which increases to the winning probability.
pub fn solve_payoff_power(
    tm: &TransitionMatrix,
    n: Player,
    tol: f64,
    max_t: usize,
) -> Result<PayoffVector> {
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let mut c = unit_payoff_rhs(tm, n);
    let mut last_delta = f64::INFINITY;
    for _ in 0..max_t {
        let next = tm.matrix() * &c;
        last_delta = (&next - &c).abs().max();
        c = next;
        if last_delta < tol {
            return Ok(PayoffVector::new(
                n,
                finalize_values(c.iter().copied().collect(), "power iteration")?,
            ));
        }
    }
    Err(Error::NonConvergence {
        max_t,
        last_delta,
        last: c.iter().copied().collect(),
    })
}

/// Solve the payoff system by the affine fixed-point iteration
/// `U <- P~ U + b_n` from an arbitrary seed.
///
/// Every solution of the payoff system is harmonic, so the solution is
/// unique and the iteration converges to it regardless of the seed.
pub fn solve_payoff_fixed_point(
    tm: &TransitionMatrix,
    n: Player,
    seed: &[f64],
    tol: f64,
    max_t: usize,
) -> Result<PayoffVector> {
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let size = tm.space().len();
    if seed.len() != size {
        return Err(Error::InvalidParameter(format!(
            "seed length {} does not match state count {size}",
            seed.len()
        )));
    }
    let b = unit_payoff_rhs(tm, n);
    let mut u = DVector::from_column_slice(seed);
    let mut last_delta = f64::INFINITY;
    for _ in 0..max_t {
        // P~ u + b: the terminal rows of P~ are zero, so overwrite them
        // with b's entries instead of materializing P~.
        let mut next = tm.matrix() * &u;
        for i in 0..3 {
            next[i] = b[i];
        }
        last_delta = (&next - &u).abs().max();
        u = next;
        if last_delta < tol {
            return Ok(PayoffVector::new(
                n,
                finalize_values(u.iter().copied().collect(), "fixed-point iteration")?,
            ));
        }
    }
    Err(Error::NonConvergence {
        max_t,
        last_delta,
        last: u.iter().copied().collect(),
    })
}

/// Fundamental-matrix statistics: absorption probabilities `(I-U)^-1 W` and
/// expected absorption times `(I-U)^-1 1` for the transient block.
pub fn absorption_report(tm: &TransitionMatrix) -> Result<AbsorptionReport> {
    let n = tm.space().len();
    let t = n - 3;
    let u = tm.matrix().view((3, 3), (t, t));
    let w = tm.matrix().view((3, 0), (t, 3));
    let a = DMatrix::<f64>::identity(t, t) - u;
    let lu = a.lu();

    let absorb_mat = lu
        .solve(&w.into_owned())
        .ok_or_else(|| Error::SolverFailure("singular I - U block".into()))?;
    let times = lu
        .solve(&DVector::from_element(t, 1.0))
        .ok_or_else(|| Error::SolverFailure("singular I - U block".into()))?;

    let mut absorb = Vec::with_capacity(t);
    for i in 0..t {
        let row = [absorb_mat[(i, 0)], absorb_mat[(i, 1)], absorb_mat[(i, 2)]];
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SolverFailure(format!(
                "absorption probabilities from transient state {i} sum to {sum}"
            )));
        }
        absorb.push(row);
    }
    for (i, &t_i) in times.iter().enumerate() {
        if !t_i.is_finite() || t_i <= 0.0 {
            return Err(Error::SolverFailure(format!(
                "expected absorption time {t_i} from transient state {i} not finite and positive"
            )));
        }
    }
    Ok(AbsorptionReport {
        absorb,
        expected_rounds: times.iter().copied().collect(),
    })
}

/// Closed-form `K = 3` payoffs for one player, given the selection triple
/// `x = (x1, x2, x3)` at the single interior state `(1,1,1)`.
///
/// Player 1's values come from the two-player boundary recursions
/// (`V1(2,1,0) = p1 / (1 - p1 + p1^2)` and so on) and the four-term interior
/// expression; players 2 and 3 follow by relabeling along the cycle
/// `1 -> 2 -> 3 -> 1`, which maps `p` and `x` to their cyclic shifts and a
/// state `(s1,s2,s3)` to `(s2,s3,s1)`.
pub fn closed_form_k3(params: &GameParams, x: [f64; 3], player: Player) -> Result<PayoffVector> {
    if params.k() != 3 {
        return Err(Error::InvalidParameter(format!(
            "closed forms exist only for K = 3, got K = {}",
            params.k()
        )));
    }
    let space = StateSpace::new(3)?;
    let shift = player.index(); // relabel so `player` becomes player 1
    let p = params.p();
    let pc = [p[shift % 3], p[(shift + 1) % 3], p[(shift + 2) % 3]];
    let xc = [x[shift % 3], x[(shift + 1) % 3], x[(shift + 2) % 3]];

    let mut values = vec![0.0; space.len()];
    for (i, s) in space.states().iter().enumerate() {
        let c = s.coords();
        // Coordinates of the original state as seen by the relabeled player 1.
        let sc = [c[shift % 3], c[(shift + 1) % 3], c[(shift + 2) % 3]];
        values[i] = player1_closed_form_k3(pc, xc, sc);
    }
    Ok(PayoffVector::new(player, values))
}

/// Player 1's closed-form value at one `K = 3` state.
fn player1_closed_form_k3(p: [f64; 3], x: [f64; 3], s: [u32; 3]) -> f64 {
    let [p1, p2, p3] = p;
    let [x1, x2, x3] = x;
    let d1 = 1.0 - p1 + p1 * p1;
    let d3 = 1.0 - p3 + p3 * p3;
    match s {
        [3, 0, 0] => 1.0,
        [0, _, _] => 0.0,
        [2, 1, 0] => p1 / d1,
        [1, 2, 0] => p1 * p1 / d1,
        [2, 0, 1] => (1.0 - p3) / d3,
        [1, 0, 2] => (1.0 - 2.0 * p3 + p3 * p3) / d3,
        [1, 1, 1] => {
            (1.0 - p3) * (x1 + 1.0 - x2) * p1 / (3.0 * d3)
                + p1 * (x3 + 1.0 - x1) * (1.0 - p3) / (3.0 * d1)
                + (1.0 - p3) * (1.0 - p3) * (x2 + 1.0 - x3) * (1.0 - p2) / (3.0 * d3)
                + p1 * p1 * (x2 + 1.0 - x3) * p2 / (3.0 * d1)
        }
        _ => unreachable!("exhaustive over K = 3 states"),
    }
}

/// Write payoff vectors for the three players as CSV with columns
/// `s1,s2,s3,V1,V2,V3` in canonical state order.
pub fn write_payoff_csv<W: Write>(
    space: &StateSpace,
    payoffs: &[PayoffVector; 3],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s1", "s2", "s3", "V1", "V2", "V3"])?;
    for (i, s) in space.states().iter().enumerate() {
        w.write_record([
            s.s1().to_string(),
            s.s2().to_string(),
            s.s3().to_string(),
            format!("{}", payoffs[0].value(i)),
            format!("{}", payoffs[1].value(i)),
            format!("{}", payoffs[2].value(i)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
