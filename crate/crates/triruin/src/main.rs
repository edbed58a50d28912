//! Thin command-line front end: flags and config files in, library calls
//! out. All logic lives in the `triruin` library; this binary only resolves
//! the configuration and writes the result.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use triruin::experiments::{run, write_output, ExperimentConfig, ExperimentKind, GameDoc};

#[derive(Parser)]
#[command(
    name = "triruin",
    about = "Three-gambler ruin stochastic game: exact payoffs, Nash equilibria, simulations",
    version
)]
struct Cli {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for sampling and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Certification / oracle tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the fully resolved config as JSON and exit without running.
    #[arg(long, global = true)]
    emit_config: bool,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the single-instance subcommands.
#[derive(Args, Default)]
struct GameFlags {
    /// Pairwise probabilities as `p1,p2,p3`.
    #[arg(long, value_parser = parse_p)]
    p: Option<[f64; 3]>,

    /// Total capital K.
    #[arg(long)]
    k: Option<u32>,
}

fn parse_p(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated probabilities".into());
    }
    let mut p = [0.0; 3];
    for (slot, part) in p.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|e| format!("{e}"))?;
    }
    Ok(p)
}

fn parse_start(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated capitals".into());
    }
    let mut c = [0u32; 3];
    for (slot, part) in c.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|e| format!("{e}"))?;
    }
    Ok(c)
}

#[derive(Subcommand)]
enum Command {
    /// Exact winning probabilities of a fixed profile.
    Solve {
        #[command(flatten)]
        game: GameFlags,
        /// Also compare against the K = 3 closed forms.
        #[arg(long)]
        compare_closed_form: bool,
    },
    /// One player's optimal reply to a fixed profile.
    BestResponse {
        #[command(flatten)]
        game: GameFlags,
        /// Player 1, 2 or 3.
        #[arg(long)]
        player: Option<usize>,
    },
    /// Certify a profile as a Nash equilibrium.
    Verify {
        #[command(flatten)]
        game: GameFlags,
    },
    /// MultiValue Iteration equilibrium search.
    Mvi {
        #[command(flatten)]
        game: GameFlags,
        /// Search the discounted game with this discount factor.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Enumerate all deterministic profiles and report every equilibrium.
    Enumerate {
        #[command(flatten)]
        game: GameFlags,
        /// Lift the K <= 5 size guard.
        #[arg(long)]
        force: bool,
    },
    /// Monte Carlo play of a fixed profile.
    Simulate {
        #[command(flatten)]
        game: GameFlags,
        /// Start state as `s1,s2,s3` (most balanced split by default).
        #[arg(long, value_parser = parse_start)]
        start: Option<[u32; 3]>,
        #[arg(long)]
        games: Option<u64>,
    },
    /// MVI convergence proportions over random instances, per K.
    SweepConvergence {
        #[arg(long)]
        k_min: Option<u32>,
        #[arg(long)]
        k_max: Option<u32>,
        /// Number of sampled probability vectors.
        #[arg(long)]
        samples: Option<usize>,
        /// Fix p1 (clamped into (0, 1)).
        #[arg(long)]
        fix_p1: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Benefit of optimal play: equilibrium vs random / uniform strategies.
    DeltaV {
        #[arg(long)]
        k: Option<u32>,
        /// Start state as `s1,s2,s3`.
        #[arg(long, value_parser = parse_start)]
        start: Option<[u32; 3]>,
        /// Number of sampled probability vectors (when no explicit list).
        #[arg(long)]
        samples: Option<usize>,
        /// Explicit probability vector, repeatable.
        #[arg(long = "p", value_parser = parse_p)]
        p_rows: Vec<[f64; 3]>,
    },
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Solve { .. } => ExperimentKind::Solve,
            Command::BestResponse { .. } => ExperimentKind::BestResponse,
            Command::Verify { .. } => ExperimentKind::Verify,
            Command::Mvi { .. } => ExperimentKind::Mvi,
            Command::Enumerate { .. } => ExperimentKind::Enumerate,
            Command::Simulate { .. } => ExperimentKind::Simulate,
            Command::SweepConvergence { .. } => ExperimentKind::SweepConvergence,
            Command::DeltaV { .. } => ExperimentKind::DeltaV,
        }
    }
}

fn apply_game_flags(cfg: &mut ExperimentConfig, flags: &GameFlags) -> triruin::Result<()> {
    if flags.p.is_none() && flags.k.is_none() {
        return Ok(());
    }
    let (p, k) = match &cfg.game {
        Some(doc) => (
            flags.p.unwrap_or(doc.params.p()),
            flags.k.unwrap_or(doc.params.k()),
        ),
        None => (
            flags.p.ok_or_else(|| {
                triruin::Error::Config("--p is required without a config game".into())
            })?,
            flags.k.unwrap_or(3),
        ),
    };
    let params = triruin::game::GameParams::new(p[0], p[1], p[2], k)?;
    // Keep an explicit profile from the config only if the capital still
    // matches; otherwise fall back to uniform for the new K.
    let profile = match &cfg.game {
        Some(doc) if doc.params.k() == k && doc.explicit_profile => doc.profile.clone(),
        _ => triruin::game::StationaryProfile::uniform(k),
    };
    let explicit = matches!(&cfg.game, Some(doc) if doc.params.k() == k && doc.explicit_profile);
    cfg.game = Some(GameDoc {
        params,
        profile,
        explicit_profile: explicit,
    });
    Ok(())
}

fn build_config(cli: &Cli) -> triruin::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut cfg = ExperimentConfig::from_json_str(&text)?;
            cfg.kind = cli.command.kind();
            cfg
        }
        None => ExperimentConfig::new(cli.command.kind()),
    };

    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(tol) = cli.tol {
        cfg.tol = Some(tol);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }

    match &cli.command {
        Command::Solve {
            game,
            compare_closed_form,
        } => {
            apply_game_flags(&mut cfg, game)?;
            cfg.compare_closed_form |= compare_closed_form;
        }
        Command::BestResponse { game, player } => {
            apply_game_flags(&mut cfg, game)?;
            if player.is_some() {
                cfg.player = *player;
            }
        }
        Command::Verify { game } => apply_game_flags(&mut cfg, game)?,
        Command::Mvi {
            game,
            gamma,
            max_iters,
        } => {
            apply_game_flags(&mut cfg, game)?;
            if gamma.is_some() {
                cfg.gamma = *gamma;
            }
            if max_iters.is_some() {
                cfg.mvi_max_iters = *max_iters;
            }
        }
        Command::Enumerate { game, force } => {
            apply_game_flags(&mut cfg, game)?;
            cfg.force |= force;
        }
        Command::Simulate { game, start, games } => {
            apply_game_flags(&mut cfg, game)?;
            if start.is_some() {
                cfg.start = *start;
            }
            if games.is_some() {
                cfg.games = *games;
            }
        }
        Command::SweepConvergence {
            k_min,
            k_max,
            samples,
            fix_p1,
            max_iters,
        } => {
            if k_min.is_some() {
                cfg.k_min = *k_min;
            }
            if k_max.is_some() {
                cfg.k_max = *k_max;
            }
            if let Some(s) = samples {
                cfg.sample.count = *s;
            }
            if fix_p1.is_some() {
                cfg.sample.fix_p1 = *fix_p1;
            }
            if max_iters.is_some() {
                cfg.mvi_max_iters = *max_iters;
            }
        }
        Command::DeltaV {
            k,
            start,
            samples,
            p_rows,
        } => {
            if k.is_some() {
                cfg.k = *k;
            }
            if start.is_some() {
                cfg.start = *start;
            }
            if let Some(s) = samples {
                cfg.sample.count = *s;
            }
            if !p_rows.is_empty() {
                cfg.p_list = p_rows.clone();
            }
        }
    }
    Ok(cfg)
}

fn run_cli(cli: &Cli) -> triruin::Result<()> {
    let cfg = build_config(cli)?;
    if let Some(threads) = cfg.threads {
        if threads > 0 {
            // Ignore failure: the global pool may already exist in tests.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    if cli.emit_config {
        println!("{}", cfg.resolved().to_json_pretty());
        return Ok(());
    }
    let output = run(&cfg)?;
    match &cfg.out {
        Some(path) => {
            write_output(path, &output)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{output}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Machine-readable error on stderr, nonzero exit.
            let v = serde_json::json!({
                "error": err.to_string(),
                "kind": match &err {
                    triruin::Error::Config(_) => "config",
                    triruin::Error::InvalidParameter(_) => "invalid-parameter",
                    triruin::Error::InvalidState { .. } => "invalid-state",
                    triruin::Error::IncompleteProfile { .. } => "incomplete-profile",
                    triruin::Error::NonConvergence { .. } => "non-convergence",
                    triruin::Error::SolverFailure(_) => "solver-failure",
                    triruin::Error::SimulationDivergence { .. } => "simulation-divergence",
                    triruin::Error::EnumerationTooLarge { .. } => "enumeration-too-large",
                    triruin::Error::Io(_) => "io",
                    triruin::Error::Json(_) => "json",
                    triruin::Error::Csv(_) => "csv",
                },
            });
            eprintln!("{v}");
            ExitCode::FAILURE
        }
    }
}
