// Temporary diagnostic: compare MVI variants' convergence rates at K = 8, 9.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triruin::equilibrium::verify_ne;
use triruin::game::{GameParams, Player, State, StateClass, StateSpace, StationaryProfile, TransitionMatrix};
use triruin::payoff::solve_all_payoffs;

type Grid = Vec<[bool; 3]>;

struct Probe {
    space: StateSpace,
    params: GameParams,
}

impl Probe {
    fn own_pair(&self, s: &State, n: Player, v: &[f64]) -> (f64, f64) {
        let pair = |m: Player, o: Player| -> f64 {
            let p = self.params.pairwise(m, o);
            let win = self.space.index_of(&s.transfer(m, o).unwrap()).unwrap();
            let lose = self.space.index_of(&s.transfer(o, m).unwrap()).unwrap();
            p * v[win] + (1.0 - p) * v[lose]
        };
        (pair(n, n.next()), pair(n, n.prev()))
    }

    fn greedy(&self, values: &[Vec<f64>; 3], incumbent: &Grid) -> Grid {
        self.space
            .interior_indices()
            .iter()
            .enumerate()
            .map(|(ord, &i)| {
                let s = self.space.state(i);
                Player::ALL.map(|n| {
                    let (dn, dp) = self.own_pair(&s, n, &values[n.index()]);
                    if (dn - dp).abs() <= 1e-12 {
                        incumbent[ord][n.index()]
                    } else {
                        dn > dp
                    }
                })
            })
            .collect()
    }

    fn profile(&self, grid: &Grid) -> StationaryProfile {
        let mut p = StationaryProfile::zeros(self.space.k());
        for (ord, bits) in grid.iter().enumerate() {
            p.set(ord, bits.map(|b| b as u32 as f64));
        }
        p
    }

    // Greedy-consistency: is grid an NE per exact values? (equivalent to BR check)
    fn is_ne(&self, grid: &Grid) -> bool {
        let profile = self.profile(grid);
        let tm = TransitionMatrix::new(&self.params, &profile).unwrap();
        let vs = solve_all_payoffs(&tm).unwrap();
        for n in Player::ALL {
            for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                let s = self.space.state(i);
                let (dn, dp) = self.own_pair(&s, n, vs[n.index()].values());
                let chosen = grid[ord][n.index()];
                let gain = if chosen { dp - dn } else { dn - dp };
                if gain / 3.0 > 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    fn boundary_values(&self) -> [Vec<f64>; 3] {
        // crude: fixed-point iterate the boundary subsystem to convergence
        let size = self.space.len();
        Player::ALL.map(|n| {
            let mut v = vec![0.0; size];
            v[n.index()] = 1.0;
            for _ in 0..200_000 {
                let mut delta = 0.0f64;
                let mut next = v.clone();
                for (i, s) in self.space.states().iter().enumerate() {
                    if matches!(s.classify(self.space.k()).unwrap(), StateClass::Boundary) {
                        let (a, b) = s.surviving_pair().unwrap();
                        let p = self.params.pairwise(a, b);
                        let win = self.space.index_of(&s.transfer(a, b).unwrap()).unwrap();
                        let lose = self.space.index_of(&s.transfer(b, a).unwrap()).unwrap();
                        let nv = p * v[win] + (1.0 - p) * v[lose];
                        delta = delta.max((nv - v[i]).abs());
                        next[i] = nv;
                    }
                }
                v = next;
                if delta < 1e-14 {
                    break;
                }
            }
            v
        })
    }

    fn full_lookahead(&self, s: &State, n: Player, grid_row: &[bool; 3], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for m in Player::ALL {
            let (dn, dp) = self.own_pair(s, m, v);
            if m == n {
                acc += dn.max(dp);
            } else {
                acc += if grid_row[m.index()] { dn } else { dp };
            }
        }
        acc / 3.0
    }

    /// Jacobi one-step MVI; returns (stabilized grid or None, visited grids).
    fn mvi_jacobi(&self, cap: usize) -> (Option<Grid>, Vec<Grid>) {
        let g = self.space.interior_count();
        let mut incumbent: Grid = vec![[false; 3]; g];
        let mut values = self.boundary_values();
        let mut visited: Vec<Grid> = Vec::new();
        let mut seen = HashSet::new();
        let mut prev: Option<Grid> = None;
        let mut streak = 0;
        for _ in 0..cap {
            let grid = self.greedy(&values, &incumbent);
            if seen.insert(grid.clone()) {
                visited.push(grid.clone());
            }
            let mut delta = 0.0f64;
            let mut next = values.clone();
            for n in Player::ALL {
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let s = self.space.state(i);
                    let f = self.full_lookahead(&s, n, &grid[ord], &values[n.index()]);
                    delta = delta.max((f - values[n.index()][i]).abs());
                    next[n.index()][i] = f;
                }
            }
            values = next;
            streak = if prev.as_ref() == Some(&grid) && delta < 1e-3 {
                streak + 1
            } else {
                0
            };
            incumbent = grid.clone();
            prev = Some(grid);
            if streak >= 3 {
                return (prev, visited);
            }
        }
        (None, visited)
    }

    /// Gauss-Seidel: in-place sweeps, values updated state by state.
    fn mvi_gauss_seidel(&self, cap: usize) -> Option<Grid> {
        let g = self.space.interior_count();
        let mut incumbent: Grid = vec![[false; 3]; g];
        let mut values = self.boundary_values();
        let mut prev: Option<Grid> = None;
        let mut streak = 0;
        for _ in 0..cap {
            let grid = self.greedy(&values, &incumbent);
            let mut delta = 0.0f64;
            for n in Player::ALL {
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let s = self.space.state(i);
                    let f = self.full_lookahead(&s, n, &grid[ord], &values[n.index()]);
                    delta = delta.max((f - values[n.index()][i]).abs());
                    values[n.index()][i] = f; // in place
                }
            }
            streak = if prev.as_ref() == Some(&grid) && delta < 1e-3 {
                streak + 1
            } else {
                0
            };
            incumbent = grid.clone();
            prev = Some(grid);
            if streak >= 3 {
                return prev;
            }
        }
        None
    }

    /// Exact simultaneous best-response dynamics on greedy-vs-own-value.
    fn br_dynamics(&self, cap: usize) -> Option<Grid> {
        let g = self.space.interior_count();
        let mut grid: Grid = vec![[false; 3]; g];
        for _ in 0..cap {
            let profile = self.profile(&grid);
            let tm = TransitionMatrix::new(&self.params, &profile).unwrap();
            let vs = solve_all_payoffs(&tm).unwrap();
            let values = [
                vs[0].values().to_vec(),
                vs[1].values().to_vec(),
                vs[2].values().to_vec(),
            ];
            let next = self.greedy(&values, &grid);
            if next == grid {
                return Some(grid);
            }
            grid = next;
        }
        None
    }
}

fn main() -> triruin::Result<()> {
    for k in [8u32, 9] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut jacobi_ok, mut visited_ok, mut gs_ok, mut brd_ok) = (0, 0, 0, 0);
        for _ in 0..100 {
            let p: [f64; 3] = [
                rng.random_range(1e-6..1.0 - 1e-6),
                rng.random_range(1e-6..1.0 - 1e-6),
                rng.random_range(1e-6..1.0 - 1e-6),
            ];
            let params = GameParams::new(p[0], p[1], p[2], k)?;
            let probe = Probe {
                space: StateSpace::new(k)?,
                params,
            };
            let (stab, visited) = probe.mvi_jacobi(150);
            if let Some(grid) = &stab {
                if probe.is_ne(grid) {
                    jacobi_ok += 1;
                    visited_ok += 1;
                } else if visited.iter().any(|v| probe.is_ne(v)) {
                    visited_ok += 1;
                }
            } else if visited.iter().any(|v| probe.is_ne(v)) {
                visited_ok += 1;
            }
            if let Some(grid) = probe.mvi_gauss_seidel(150) {
                if probe.is_ne(&grid) {
                    gs_ok += 1;
                }
            }
            if let Some(grid) = probe.br_dynamics(150) {
                if probe.is_ne(&grid) {
                    brd_ok += 1;
                }
            }
        }
        let mut rng4 = ChaCha8Rng::seed_from_u64(7);
        let (mut seq_ok, mut lag_ok, mut inplace_ok) = (0, 0, 0);
        for _ in 0..100 {
            let p: [f64; 3] = [
                rng4.random_range(1e-6..1.0 - 1e-6),
                rng4.random_range(1e-6..1.0 - 1e-6),
                rng4.random_range(1e-6..1.0 - 1e-6),
            ];
            let params = GameParams::new(p[0], p[1], p[2], k)?;
            let probe = Probe { space: StateSpace::new(k)?, params };
            if let Some(grid) = probe.seq_greedy(150) {
                if probe.is_ne(&grid) {
                    seq_ok += 1;
                }
            }
            if let Some(grid) = probe.mvi_lagged(150) {
                if probe.is_ne(&grid) {
                    lag_ok += 1;
                }
            }
            if let Some(grid) = probe.mvi_inplace(150) {
                if probe.is_ne(&grid) {
                    inplace_ok += 1;
                }
            }
        }
        println!(
            "K={k}: jacobi={jacobi_ok} visited-any={visited_ok} gauss-seidel={gs_ok} br-dynamics={brd_ok} seq-greedy={seq_ok} lagged={lag_ok} inplace={inplace_ok}"
        );
        let _ = verify_ne; // silence unused import if branches change
    }
    Ok(())
}

// ---- appended sequential variants ----
impl Probe {
    /// Sequential greedy policy improvement: players rotate, each re-derives
    /// its strategy from its own exact value under the current profile.
    fn seq_greedy(&self, cap: usize) -> Option<Grid> {
        let g = self.space.interior_count();
        let mut grid: Grid = vec![[false; 3]; g];
        let mut unchanged = 0;
        for t in 0..cap {
            let n = Player::ALL[t % 3];
            let profile = self.profile(&grid);
            let tm = TransitionMatrix::new(&self.params, &profile).unwrap();
            let vs = solve_all_payoffs(&tm).unwrap();
            let v = vs[n.index()].values().to_vec();
            let mut next = grid.clone();
            for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                let s = self.space.state(i);
                let (dn, dp) = self.own_pair(&s, n, &v);
                next[ord][n.index()] = if (dn - dp).abs() <= 1e-12 {
                    grid[ord][n.index()]
                } else {
                    dn > dp
                };
            }
            if next == grid {
                unchanged += 1;
                if unchanged >= 3 {
                    return Some(grid);
                }
            } else {
                unchanged = 0;
            }
            grid = next;
        }
        None
    }

    /// One-step Jacobi values but x derived sequentially in place during the
    /// derivation pass (later players see earlier players' fresh choices
    /// through nothing; only the update order of x entries changes).
    fn mvi_lagged(&self, cap: usize) -> Option<Grid> {
        // x^(t) = greedy(V^(t-1)), used to update V^(t) -> V^(t+1).
        let g = self.space.interior_count();
        let mut incumbent: Grid = vec![[false; 3]; g];
        let mut values = self.boundary_values();
        let mut prev: Option<Grid> = None;
        let mut streak = 0;
        let mut grid = incumbent.clone();
        for t in 0..cap {
            if t > 0 {
                grid = self.greedy(&values, &incumbent);
            }
            let mut delta = 0.0f64;
            let mut next = values.clone();
            for n in Player::ALL {
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let s = self.space.state(i);
                    let f = self.full_lookahead(&s, n, &grid[ord], &values[n.index()]);
                    delta = delta.max((f - values[n.index()][i]).abs());
                    next[n.index()][i] = f;
                }
            }
            values = next;
            streak = if prev.as_ref() == Some(&grid) && delta < 1e-3 {
                streak + 1
            } else {
                0
            };
            incumbent = grid.clone();
            prev = Some(grid.clone());
            if streak >= 3 {
                return prev;
            }
        }
        None
    }
}

// ---- in-place (player-ordered) value-iterative MVI ----
impl Probe {
    fn mvi_inplace(&self, cap: usize) -> Option<Grid> {
        let g = self.space.interior_count();
        let mut grid: Grid = vec![[false; 3]; g];
        let mut values = self.boundary_values();
        let mut prev: Option<Grid> = None;
        let mut streak = 0;
        for _ in 0..cap {
            let mut delta = 0.0f64;
            for n in Player::ALL {
                // x_n from V_n, in place: later players see it fresh.
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let s = self.space.state(i);
                    let (dn, dp) = self.own_pair(&s, n, &values[n.index()]);
                    grid[ord][n.index()] = if (dn - dp).abs() <= 1e-12 {
                        grid[ord][n.index()]
                    } else {
                        dn > dp
                    };
                }
                // V_n one lookahead step under the current (partly fresh) x.
                let mut next = values[n.index()].clone();
                for (ord, &i) in self.space.interior_indices().iter().enumerate() {
                    let s = self.space.state(i);
                    let f = self.full_lookahead(&s, n, &grid[ord], &values[n.index()]);
                    delta = delta.max((f - values[n.index()][i]).abs());
                    next[i] = f;
                }
                values[n.index()] = next;
            }
            streak = if prev.as_ref() == Some(&grid) && delta < 1e-3 {
                streak + 1
            } else {
                0
            };
            prev = Some(grid.clone());
            if streak >= 3 {
                return prev;
            }
        }
        None
    }
}
