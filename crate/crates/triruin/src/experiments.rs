//! Experiment harness: JSON configuration, random-instance sampling, the
//! convergence and benefit-of-optimal-play sweeps, and the JSON/CSV wire
//! formats every front end shares.
//!
//! A run is fully determined by its resolved configuration and master seed.
//! Sampling happens up front with a ChaCha8 generator keyed by the seed,
//! sweep cells are pure functions of their inputs, and output rows are
//! sorted before writing, so reruns are byte-identical apart from the
//! `# generated-unix` header line.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::discounted::{discounted_mvi, DiscountedGameParams};
use crate::equilibrium::{
    exhaustive_enumeration, exhaustive_enumeration_unbounded, k3_analytic_ne, mvi, verify_ne,
    BestResponse, EnumerationResult, EquilibriumCertificate, MviOutcome,
};
use crate::error::{Error, Result};
use crate::game::{GameParams, Player, State, StateSpace, StationaryProfile, TransitionMatrix};
use crate::payoff::{
    closed_form_k3, solve_all_payoffs, solve_payoff_direct, write_payoff_csv, PayoffVector,
};
use crate::sim::{simulate, write_simulation_csv};

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    BestResponse,
    Verify,
    Mvi,
    Enumerate,
    Simulate,
    SweepConvergence,
    DeltaV,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::BestResponse => "best-response",
            ExperimentKind::Verify => "verify",
            ExperimentKind::Mvi => "mvi",
            ExperimentKind::Enumerate => "enumerate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SweepConvergence => "sweep-convergence",
            ExperimentKind::DeltaV => "delta-v",
        }
    }
}

/// How random probability vectors are drawn: each coordinate independently
/// uniform on `(eps, 1 - eps)` unless pinned to a fixed value, which is
/// clamped into the same interval (so "fix p1 = 1" becomes `1 - eps`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default = "default_sample_count")]
    pub count: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub fix_p1: Option<f64>,
    #[serde(default)]
    pub fix_p2: Option<f64>,
    #[serde(default)]
    pub fix_p3: Option<f64>,
}

fn default_sample_count() -> usize {
    100
}

fn default_eps() -> f64 {
    1e-6
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: default_sample_count(),
            eps: default_eps(),
            fix_p1: None,
            fix_p2: None,
            fix_p3: None,
        }
    }
}

impl SampleSpec {
    /// Draw one probability vector.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let fixed = [self.fix_p1, self.fix_p2, self.fix_p3];
        fixed.map(|f| match f {
            Some(v) => v.clamp(self.eps, 1.0 - self.eps),
            None => rng.random_range(self.eps..1.0 - self.eps),
        })
    }
}

/// A game instance document: parameters plus a stationary profile, the JSON
/// form `{"p": [p1, p2, p3], "K": K, "x": {"s1,s2,s3": [x1, x2, x3], ...}}`.
/// A missing `"x"` means the uniform profile; an explicit map must cover
/// every interior state.
#[derive(Debug, Clone, PartialEq)]
pub struct GameDoc {
    pub params: GameParams,
    pub profile: StationaryProfile,
    /// Whether the document spelled out `"x"` (an explicit profile) rather
    /// than defaulting to uniform.
    pub explicit_profile: bool,
}

#[derive(Serialize, Deserialize)]
struct GameDocRaw {
    p: [f64; 3],
    #[serde(rename = "K")]
    k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<BTreeMap<String, [f64; 3]>>,
}

fn parse_state_key(key: &str) -> Result<State> {
    let parts: Vec<&str> = key.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "state key {key:?} must be \"s1,s2,s3\""
        )));
    }
    let mut c = [0u32; 3];
    for (slot, part) in c.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("state key {key:?} has a non-integer part")))?;
    }
    Ok(State::new(c[0], c[1], c[2]))
}

fn state_key(s: &State) -> String {
    format!("{},{},{}", s.s1(), s.s2(), s.s3())
}

impl GameDoc {
    pub fn new(params: GameParams, profile: StationaryProfile) -> GameDoc {
        GameDoc {
            params,
            profile,
            explicit_profile: true,
        }
    }

    fn from_raw(raw: GameDocRaw) -> Result<GameDoc> {
        let params = GameParams::new(raw.p[0], raw.p[1], raw.p[2], raw.k)?;
        let space = StateSpace::new(raw.k)?;
        let (profile, explicit) = match raw.x {
            None => (StationaryProfile::uniform(raw.k), false),
            Some(map) => {
                let mut by_state = BTreeMap::new();
                for (key, triple) in map {
                    by_state.insert(parse_state_key(&key)?, triple);
                }
                (
                    StationaryProfile::from_state_map(&space, &by_state)?,
                    true,
                )
            }
        };
        Ok(GameDoc {
            params,
            profile,
            explicit_profile: explicit,
        })
    }

    fn to_raw(&self) -> GameDocRaw {
        GameDocRaw {
            p: self.params.p(),
            k: self.params.k(),
            x: Some(profile_map(&self.profile)),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("plain data")
    }

    pub fn from_json_str(s: &str) -> Result<GameDoc> {
        let raw: GameDocRaw = serde_json::from_str(s).map_err(config_error)?;
        GameDoc::from_raw(raw)
    }
}

impl Serialize for GameDoc {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_raw().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GameDoc {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = GameDocRaw::deserialize(deserializer)?;
        GameDoc::from_raw(raw).map_err(serde::de::Error::custom)
    }
}

/// Interior-state map of a profile, keyed `"s1,s2,s3"`.
pub fn profile_map(profile: &StationaryProfile) -> BTreeMap<String, [f64; 3]> {
    let space = StateSpace::new(profile.k()).expect("profile k is valid");
    space
        .interior_indices()
        .iter()
        .enumerate()
        .map(|(ord, &i)| (state_key(&space.state(i)), profile.get(ord)))
        .collect()
}

/// Certificate wire form: profile map, per-player deviation gains, method,
/// tolerance and residual.
pub fn certificate_json(cert: &EquilibriumCertificate) -> serde_json::Value {
    json!({
        "profile": profile_map(&cert.profile),
        "max_gain": cert.max_gain,
        "tol": cert.tol,
        "method": cert.method.as_str(),
        "residual_j": cert.residual_j,
        "certified": cert.certified,
    })
}

/// MVI outcome wire form.
pub fn mvi_outcome_json(out: &MviOutcome) -> serde_json::Value {
    match out {
        MviOutcome::Converged(cert) => json!({
            "converged": true,
            "certificate": certificate_json(cert),
        }),
        MviOutcome::Failed(f) => json!({
            "converged": false,
            "reason": match f.reason {
                crate::equilibrium::MviFailureReason::IterationCap => "iteration-cap",
                crate::equilibrium::MviFailureReason::CertificateGap => "certificate-gap",
            },
            "iterations": f.iterations,
            "residual_j": f.residual_j,
            "last_profile": profile_map(&f.last_profile),
            "certificate": f.certificate.as_ref().map(certificate_json),
        }),
    }
}

/// Enumeration wire form.
pub fn enumeration_json(res: &EnumerationResult) -> serde_json::Value {
    json!({
        "profiles_evaluated": res.profiles_evaluated,
        "equilibria_found": res.equilibria.len(),
        "equilibria": res.equilibria.iter().map(certificate_json).collect::<Vec<_>>(),
    })
}

fn payoff_state_map(space: &StateSpace, v: &PayoffVector) -> BTreeMap<String, f64> {
    space
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| (state_key(s), v.value(i)))
        .collect()
}

/// Best-response wire form.
pub fn best_response_json(space: &StateSpace, br: &BestResponse, max_gain: f64) -> serde_json::Value {
    let strategy: BTreeMap<String, u8> = space
        .interior_indices()
        .iter()
        .enumerate()
        .map(|(ord, &i)| (state_key(&space.state(i)), br.strategy[ord] as u8))
        .collect();
    json!({
        "player": br.player.index() + 1,
        "iterations": br.iterations,
        "strategy": strategy,
        "payoff": payoff_state_map(space, &br.payoff),
        "max_gain_vs_incumbent": max_gain,
    })
}

/// The most balanced split of `K` among the three players: the start state
/// used when a config does not name one, `(3,3,3)` at `K = 9`.
pub fn balanced_start(k: u32) -> State {
    let base = k / 3;
    let rem = k % 3;
    State::new(
        base + u32::from(rem > 0),
        base + u32::from(rem > 1),
        base,
    )
}

/// One experiment specification. Every field except `kind` has a default,
/// so sparse JSON documents and flag-only invocations both work; CLI flags
/// override file fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Fixed game instance; required by the single-instance kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameDoc>,
    /// Random-instance sampling for the sweep kinds.
    #[serde(default)]
    pub sample: SampleSpec,
    /// Capital for kinds that sample `p` at fixed `K` (delta-v).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u32>,
    /// 1-based player for best-response runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Certification / oracle tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// MVI value-stabilization tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvi_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvi_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub games: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// With `solve` at `K = 3`: also report the closed-form comparison.
    #[serde(default)]
    pub compare_closed_form: bool,
    /// Lift the enumeration size guard.
    #[serde(default)]
    pub force: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Explicit probability rows for delta-v; sampled when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_list: Vec<[f64; 3]>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            game: None,
            sample: SampleSpec::default(),
            k: None,
            k_min: None,
            k_max: None,
            player: None,
            seed: None,
            tol: None,
            mvi_tol: None,
            mvi_max_iters: None,
            games: None,
            start: None,
            gamma: None,
            compare_closed_form: false,
            force: false,
            out: None,
            threads: None,
            p_list: Vec::new(),
        }
    }

    /// Parse a config document, reporting the offending line and column on
    /// malformed input.
    pub fn from_json_str(s: &str) -> Result<ExperimentConfig> {
        serde_json::from_str(s).map_err(config_error)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-9)
    }

    /// Default MVI value tolerance. The convergence sweep runs under the
    /// paper's 150-iteration budget, within which deep chains only settle to
    /// about 1e-4 per step, so it stabilizes values loosely and relies on the
    /// exact certification pass; unbudgeted runs iterate to 1e-9.
    pub fn mvi_tol(&self) -> f64 {
        self.mvi_tol.unwrap_or(match self.kind {
            ExperimentKind::SweepConvergence => 1e-3,
            _ => 1e-9,
        })
    }

    pub fn mvi_max_iters(&self) -> usize {
        self.mvi_max_iters.unwrap_or(match self.kind {
            ExperimentKind::SweepConvergence => 150,
            _ => 5000,
        })
    }

    pub fn games(&self) -> u64 {
        self.games.unwrap_or(100_000)
    }

    pub fn k_range(&self) -> (u32, u32) {
        (self.k_min.unwrap_or(3), self.k_max.unwrap_or(9))
    }

    pub fn delta_v_k(&self) -> u32 {
        self.k.unwrap_or(9)
    }

    fn game(&self) -> Result<&GameDoc> {
        self.game.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "kind {:?} needs a \"game\" document ({{\"p\": [...], \"K\": ...}})",
                self.kind.as_str()
            ))
        })
    }

    /// The configuration with every default spelled out, for archival next
    /// to the outputs it produced.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.seed = Some(self.seed());
        c.tol = Some(self.tol());
        c.mvi_tol = Some(self.mvi_tol());
        c.mvi_max_iters = Some(self.mvi_max_iters());
        c.games = Some(self.games());
        let (lo, hi) = self.k_range();
        c.k_min = Some(lo);
        c.k_max = Some(hi);
        if matches!(self.kind, ExperimentKind::DeltaV) {
            c.k = Some(self.delta_v_k());
            let s = self
                .start
                .unwrap_or_else(|| balanced_start(self.delta_v_k()).coords());
            c.start = Some(s);
        }
        c
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

fn config_error(e: serde_json::Error) -> Error {
    Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
}

fn meta_header(kind: &str, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("# triruin {kind}\n"));
    out.push_str(&format!("# generated-unix {ts}\n"));
    out.push_str(&format!("# seed {}\n", cfg.seed()));
    for (k, v) in extra {
        out.push_str(&format!("# {k} {v}\n"));
    }
    out
}

/// Per-`K` convergence proportions of MVI over sampled instances.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k: u32,
    pub converged: usize,
    pub runs: usize,
}

impl SweepRow {
    pub fn proportion(&self) -> f64 {
        self.converged as f64 / self.runs as f64
    }
}

/// The paper's convergence experiment: sample probability vectors, run MVI
/// from the all-zeros profile for every `K` in the configured range, and
/// tabulate the fraction of certified convergences per `K`.
///
/// Solver errors inside a cell count as failures for that cell rather than
/// aborting the sweep.
pub fn run_sweep_convergence(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let (k_lo, k_hi) = cfg.k_range();
    if k_lo < 3 || k_hi < k_lo {
        return Err(Error::Config(format!("bad K range [{k_lo}, {k_hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let samples: Vec<[f64; 3]> = (0..cfg.sample.count)
        .map(|_| cfg.sample.draw(&mut rng))
        .collect();
    let tol = cfg.mvi_tol();
    let cap = cfg.mvi_max_iters();

    let cells: Vec<(u32, bool)> = samples
        .par_iter()
        .flat_map_iter(|p| {
            (k_lo..=k_hi).map(move |k| {
                let ok = GameParams::new(p[0], p[1], p[2], k)
                    .and_then(|params| mvi(&params, &StationaryProfile::zeros(k), tol, cap))
                    .map(|out| out.converged())
                    .unwrap_or(false);
                (k, ok)
            })
        })
        .collect();

    let mut rows: Vec<SweepRow> = (k_lo..=k_hi)
        .map(|k| SweepRow {
            k,
            converged: 0,
            runs: 0,
        })
        .collect();
    for (k, ok) in cells {
        let row = &mut rows[(k - k_lo) as usize];
        row.runs += 1;
        row.converged += ok as usize;
    }
    Ok(rows)
}

/// CSV form of a convergence sweep: `k,proportion` plus metadata lines.
pub fn sweep_csv(cfg: &ExperimentConfig, rows: &[SweepRow]) -> String {
    let mut out = meta_header(
        "sweep-convergence",
        cfg,
        &[
            ("samples", cfg.sample.count.to_string()),
            ("mvi-max-iters", cfg.mvi_max_iters().to_string()),
            ("mvi-tol", format!("{:e}", cfg.mvi_tol())),
        ],
    );
    out.push_str("k,proportion\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.k, r.proportion()));
    }
    out
}

/// One row of the benefit-of-optimal-play experiment.
#[derive(Debug, Clone)]
pub struct DeltaVRow {
    pub p: [f64; 3],
    /// None when MVI failed to produce an equilibrium for this `p`.
    pub deltas: Option<DeltaVValues>,
}

/// Payoff losses at the start state when one player abandons equilibrium
/// play while the others keep it.
#[derive(Debug, Clone, Copy)]
pub struct DeltaVValues {
    /// Against a strategy drawn uniformly at random per interior state.
    pub random: [f64; 3],
    /// Against the uniform (select-equiprobably) strategy.
    pub uniform: [f64; 3],
}

/// The benefit-of-optimal-play experiment at fixed `K` (9 unless
/// configured): find an equilibrium by MVI, then measure each player's loss
/// from replacing its equilibrium strategy by a random or a uniform one,
/// opponents unchanged, all payoffs by exact solve at the start state.
pub fn run_delta_v(cfg: &ExperimentConfig) -> Result<Vec<DeltaVRow>> {
    let k = cfg.delta_v_k();
    let start = match cfg.start {
        Some(c) => State::new(c[0], c[1], c[2]),
        None => balanced_start(k),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let rows_p: Vec<[f64; 3]> = if cfg.p_list.is_empty() {
        (0..cfg.sample.count)
            .map(|_| cfg.sample.draw(&mut rng))
            .collect()
    } else {
        cfg.p_list.clone()
    };

    let mut rows = Vec::with_capacity(rows_p.len());
    for p in rows_p {
        let params = GameParams::new(p[0], p[1], p[2], k)?;
        let space = StateSpace::new(k)?;
        let start_idx = space.index_of(&start).ok_or_else(|| {
            Error::Config(format!("start state {start} does not belong to K = {k}"))
        })?;
        let outcome = mvi(
            &params,
            &StationaryProfile::zeros(k),
            cfg.mvi_tol(),
            cfg.mvi_max_iters(),
        )?;
        let cert = match outcome {
            MviOutcome::Converged(c) => c,
            MviOutcome::Failed(_) => {
                rows.push(DeltaVRow { p, deltas: None });
                continue;
            }
        };
        let ne = cert.profile;
        let tm = TransitionMatrix::new(&params, &ne)?;
        let at_equilibrium = solve_all_payoffs(&tm)?;

        let mut random = [0.0; 3];
        let mut uniform = [0.0; 3];
        for n in Player::ALL {
            let g = ne.len();
            let drawn: Vec<f64> = (0..g).map(|_| rng.random()).collect();
            let dev_random = ne.with_player_strategy(n, &drawn);
            let dev_uniform = ne.with_player_strategy(n, &vec![0.5; g]);
            let v_eq = at_equilibrium[n.index()].value(start_idx);
            let tm_r = TransitionMatrix::new(&params, &dev_random)?;
            let tm_u = TransitionMatrix::new(&params, &dev_uniform)?;
            random[n.index()] = v_eq - solve_payoff_direct(&tm_r, n)?.value(start_idx);
            uniform[n.index()] = v_eq - solve_payoff_direct(&tm_u, n)?.value(start_idx);
        }
        rows.push(DeltaVRow {
            p,
            deltas: Some(DeltaVValues { random, uniform }),
        });
    }
    Ok(rows)
}

/// CSV form of the delta-v experiment, one row per probability vector.
pub fn delta_v_csv(cfg: &ExperimentConfig, rows: &[DeltaVRow]) -> String {
    let k = cfg.delta_v_k();
    let start = match cfg.start {
        Some(c) => State::new(c[0], c[1], c[2]),
        None => balanced_start(k),
    };
    let mut out = meta_header(
        "delta-v",
        cfg,
        &[
            ("k", k.to_string()),
            (
                "start",
                format!("{}-{}-{}", start.s1(), start.s2(), start.s3()),
            ),
        ],
    );
    out.push_str(
        "p1,p2,p3,status,dv_bar_1,dv_bar_2,dv_bar_3,dv_tilde_1,dv_tilde_2,dv_tilde_3\n",
    );
    for row in rows {
        let p = row.p;
        match &row.deltas {
            Some(d) => out.push_str(&format!(
                "{},{},{},ok,{},{},{},{},{},{}\n",
                p[0],
                p[1],
                p[2],
                d.random[0],
                d.random[1],
                d.random[2],
                d.uniform[0],
                d.uniform[1],
                d.uniform[2]
            )),
            None => out.push_str(&format!("{},{},{},failed,,,,,,\n", p[0], p[1], p[2])),
        }
    }
    out
}

/// Run any experiment kind and return the full output document (CSV with
/// metadata lines, or pretty JSON).
pub fn run(cfg: &ExperimentConfig) -> Result<String> {
    match cfg.kind {
        ExperimentKind::Solve => run_solve(cfg),
        ExperimentKind::BestResponse => run_best_response(cfg),
        ExperimentKind::Verify => run_verify(cfg),
        ExperimentKind::Mvi => run_mvi(cfg),
        ExperimentKind::Enumerate => run_enumerate(cfg),
        ExperimentKind::Simulate => run_simulate(cfg),
        ExperimentKind::SweepConvergence => {
            let rows = run_sweep_convergence(cfg)?;
            Ok(sweep_csv(cfg, &rows))
        }
        ExperimentKind::DeltaV => {
            let rows = run_delta_v(cfg)?;
            Ok(delta_v_csv(cfg, &rows))
        }
    }
}

fn run_solve(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    let tm = TransitionMatrix::new(&doc.params, &doc.profile)?;
    let payoffs = solve_all_payoffs(&tm)?;
    let mut extra = vec![(
        "game",
        serde_json::to_string(&doc.to_json()).expect("plain data"),
    )];
    if cfg.compare_closed_form {
        if doc.params.k() != 3 {
            return Err(Error::Config(
                "closed-form comparison requires K = 3".into(),
            ));
        }
        let x = doc.profile.get(0);
        let mut max_diff = 0.0f64;
        for n in Player::ALL {
            let closed = closed_form_k3(&doc.params, x, n)?;
            for i in 0..tm.space().len() {
                max_diff = max_diff.max((closed.value(i) - payoffs[n.index()].value(i)).abs());
            }
        }
        extra.push(("max-abs-diff-closed-form", format!("{max_diff:e}")));
    }
    let extra: Vec<(&str, String)> = extra;
    let mut out = meta_header("solve", cfg, &extra);
    let mut buf = Vec::new();
    write_payoff_csv(tm.space(), &payoffs, &mut buf)?;
    out.push_str(&String::from_utf8(buf).expect("csv is utf-8"));
    Ok(out)
}

fn run_best_response(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    let player = match cfg.player {
        Some(n @ 1..=3) => Player::from_index(n - 1).unwrap(),
        Some(n) => {
            return Err(Error::Config(format!("player {n} must be 1, 2 or 3")));
        }
        None => Player::P1,
    };
    let br = crate::equilibrium::best_response(
        &doc.params,
        &doc.profile,
        player,
        crate::equilibrium::BR_VI_TOL,
    )?;
    let tm = TransitionMatrix::new(&doc.params, &doc.profile)?;
    let incumbent = solve_payoff_direct(&tm, player)?;
    let max_gain = incumbent
        .values()
        .iter()
        .zip(br.payoff.values())
        .map(|(a, b)| b - a)
        .fold(f64::NEG_INFINITY, f64::max);
    let v = best_response_json(tm.space(), &br, max_gain);
    Ok(serde_json::to_string_pretty(&v).expect("plain data") + "\n")
}

fn run_verify(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    let cert = verify_ne(&doc.params, &doc.profile, cfg.tol())?;
    let v = certificate_json(&cert);
    Ok(serde_json::to_string_pretty(&v).expect("plain data") + "\n")
}

fn run_mvi(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    // The seed profile is the document's explicit profile when present, the
    // conventional all-zeros profile otherwise.
    let seed_profile = if doc.explicit_profile {
        doc.profile.clone()
    } else {
        StationaryProfile::zeros(doc.params.k())
    };
    let out = match cfg.gamma {
        Some(gamma) => {
            let dp = DiscountedGameParams::new(doc.params, gamma)?;
            discounted_mvi(&dp, &seed_profile, cfg.mvi_tol(), cfg.mvi_max_iters())?
        }
        None => mvi(&doc.params, &seed_profile, cfg.mvi_tol(), cfg.mvi_max_iters())?,
    };
    let v = mvi_outcome_json(&out);
    Ok(serde_json::to_string_pretty(&v).expect("plain data") + "\n")
}

fn run_enumerate(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    let res = if cfg.force {
        exhaustive_enumeration_unbounded(&doc.params, cfg.tol())?
    } else {
        exhaustive_enumeration(&doc.params, cfg.tol())?
    };
    let v = enumeration_json(&res);
    Ok(serde_json::to_string_pretty(&v).expect("plain data") + "\n")
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<String> {
    let doc = cfg.game()?;
    let start = match cfg.start {
        Some(c) => State::new(c[0], c[1], c[2]),
        None => balanced_start(doc.params.k()),
    };
    let result = simulate(&doc.params, &doc.profile, start, cfg.games(), cfg.seed())?;
    let mut out = meta_header("simulate", cfg, &[]);
    let mut buf = Vec::new();
    write_simulation_csv(&result, true, &mut buf)?;
    out.push_str(&String::from_utf8(buf).expect("csv is utf-8"));
    Ok(out)
}

/// Write an output document, creating parent directories as needed.
pub fn write_output(path: &PathBuf, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Also try the analytic `K = 3` equilibrium as a certificate, for callers
/// that want the analytic route exposed through the same wire format.
pub fn analytic_k3_certificate(params: &GameParams, tol: f64) -> Result<EquilibriumCertificate> {
    let ne = k3_analytic_ne(params)?;
    let mut cert = verify_ne(params, &ne.profile, tol)?;
    cert.method = crate::equilibrium::DiscoveryMethod::AnalyticK3;
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn game_doc_round_trip_and_uniform_default() {
        let doc = GameDoc::from_json_str(r#"{"p":[0.9,0.5,0.2],"K":3}"#).unwrap();
        assert_eq!(doc.params.p(), [0.9, 0.5, 0.2]);
        assert!(!doc.explicit_profile);
        assert_eq!(doc.profile.get(0), [0.5, 0.5, 0.5]);

        let explicit =
            GameDoc::from_json_str(r#"{"p":[0.9,0.5,0.2],"K":3,"x":{"1,1,1":[1,0,0]}}"#).unwrap();
        assert!(explicit.explicit_profile);
        assert_eq!(explicit.profile.get(0), [1.0, 0.0, 0.0]);

        let json = explicit.to_json();
        let back = GameDoc::from_json_str(&serde_json::to_string(&json).unwrap()).unwrap();
        assert_eq!(back.profile, explicit.profile);
        assert_eq!(back.params, explicit.params);
    }

    #[test]
    fn game_doc_rejects_partial_profile() {
        let err = GameDoc::from_json_str(r#"{"p":[0.9,0.5,0.2],"K":4,"x":{"1,1,2":[1,0,0]}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::IncompleteProfile { .. }), "{err}");
    }

    #[test]
    fn game_doc_rejects_non_interior_key() {
        let err = GameDoc::from_json_str(r#"{"p":[0.9,0.5,0.2],"K":3,"x":{"2,1,0":[1,0,0]}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
    }

    #[test]
    fn config_error_carries_position() {
        let err = ExperimentConfig::from_json_str("{\"kind\": \"solve\",\n  bogus").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err =
            ExperimentConfig::from_json_str(r#"{"kind":"solve","no_such_field":1}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn balanced_start_examples() {
        assert_eq!(balanced_start(9), State::new(3, 3, 3));
        assert_eq!(balanced_start(10), State::new(4, 3, 3));
        assert_eq!(balanced_start(11), State::new(4, 4, 3));
        assert_eq!(balanced_start(3), State::new(1, 1, 1));
    }

    #[test]
    fn sample_spec_respects_fixed_coordinates() {
        let spec = SampleSpec {
            fix_p1: Some(1.0),
            ..SampleSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = spec.draw(&mut rng);
            assert_eq!(p[0], 1.0 - spec.eps, "p1 clamped to 1 - eps");
            assert!(p[1] > 0.0 && p[1] < 1.0);
            assert!(p[2] > 0.0 && p[2] < 1.0);
        }
    }

    #[test]
    fn resolved_config_fills_defaults() {
        let cfg = ExperimentConfig::new(ExperimentKind::DeltaV);
        let r = cfg.resolved();
        assert_eq!(r.k, Some(9));
        assert_eq!(r.start, Some([3, 3, 3]));
        assert_eq!(r.mvi_max_iters, Some(5000));
        let sweep = ExperimentConfig::new(ExperimentKind::SweepConvergence).resolved();
        assert_eq!(sweep.mvi_max_iters, Some(150));
    }

    #[test]
    fn solve_output_reports_closed_form_agreement() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Solve);
        cfg.game = Some(GameDoc::new(
            GameParams::new(0.9, 0.5, 0.2, 3).unwrap(),
            StationaryProfile::constant(3, [1.0, 0.0, 0.0]).unwrap(),
        ));
        cfg.compare_closed_form = true;
        let out = run(&cfg).unwrap();
        let diff_line = out
            .lines()
            .find(|l| l.starts_with("# max-abs-diff-closed-form"))
            .expect("comparison line present");
        let diff: f64 = diff_line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(diff <= 1e-10, "{diff_line}");
        assert!(out.contains("s1,s2,s3,V1,V2,V3"));
    }

    #[test]
    fn outputs_reproducible_modulo_timestamp() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::SweepConvergence);
        cfg.sample.count = 3;
        cfg.k_min = Some(3);
        cfg.k_max = Some(4);
        cfg.seed = Some(9);
        let strip = |s: String| -> String {
            s.lines()
                .filter(|l| !l.starts_with("# generated-unix"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = strip(run(&cfg).unwrap());
        let b = strip(run(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn verify_run_produces_certificate_json() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Verify);
        let params = GameParams::new(0.9, 0.5, 0.2, 3).unwrap();
        let ne = k3_analytic_ne(&params).unwrap();
        cfg.game = Some(GameDoc::new(params, ne.profile));
        let out = run(&cfg).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["certified"], serde_json::Value::Bool(true));
        assert_eq!(v["method"], "verification");
        assert!(v["profile"]["1,1,1"].is_array());
    }
}
