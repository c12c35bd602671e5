//! `bellsim` command-line front end.

mod commands;
mod config;
mod error;
mod render;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bellsim::protocol::{PulseMode, SourceState};
use clap::{Args, Parser, Subcommand};

use crate::config::{FeasibilityGridConfig, Format, RunConfig, DEFAULT_SEED};
use crate::error::CliError;
use crate::render::render;

#[derive(Parser, Debug)]
#[command(name = "bellsim", version, about = "Atom–photon Bell test simulator")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Strict JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate both CHSH experiments and report the correlation table.
    Chsh(ChshArgs),
    /// Bell-signal window implied by a fidelity.
    Bounds(BoundsArgs),
    /// Local deterministic strategies and the quantum grid maximum.
    Lhv(LhvArgs),
    /// Locality, detection and fiber-loss arithmetic.
    Loopholes(LoopholesArgs),
    /// Entanglement swapping between two remote pairs.
    Swap(SwapArgs),
}

#[derive(Args, Debug)]
struct ChshArgs {
    #[arg(long)]
    events_per_setting: Option<usize>,
    /// Emit Werner pairs with this visibility.
    #[arg(long)]
    werner_p: Option<f64>,
    /// Perfect atomic state discrimination.
    #[arg(long)]
    ideal: bool,
    /// Recompute the Bell signals from the published correlation table.
    #[arg(long)]
    table1_fixture: bool,
    #[arg(long)]
    bright_error: Option<f64>,
    #[arg(long)]
    dark_error: Option<f64>,
    #[arg(long)]
    pmt_efficiency_1: Option<f64>,
    #[arg(long)]
    pmt_efficiency_2: Option<f64>,
    #[arg(long)]
    dark_count_probability: Option<f64>,
    /// Bootstrap resamples per sub-run (0 disables).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Use one rotation pulse referenced to the absolute microwave phase.
    #[arg(long)]
    single_pulse: bool,
    /// Transfer-pulse phase in units of π.
    #[arg(long, allow_negative_numbers = true)]
    transfer_phase: Option<f64>,
    /// Role-A polar angles in units of π.
    #[arg(
        long,
        num_args = 2,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    role_a_angles: Option<Vec<f64>>,
    /// Role-B polar angles in units of π.
    #[arg(
        long,
        num_args = 2,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    role_b_angles: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    fidelity: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct LhvArgs {
    /// Grid points per angle for the quantum scan.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args, Debug)]
struct LoopholesArgs {
    /// Atomic readout time in seconds.
    #[arg(long)]
    detection_time: Option<f64>,
    #[arg(long)]
    rotation_time: Option<f64>,
    /// Metres between the atom and the photon analysis.
    #[arg(long)]
    separation: Option<f64>,
    /// Attenuation sweep in dB/km.
    #[arg(long, value_delimiter = ',')]
    attenuation: Option<Vec<f64>>,
    /// Metres of fiber; defaults to the midpoint distance.
    #[arg(long)]
    fiber_length: Option<f64>,
    #[arg(long)]
    coupling: Option<f64>,
    /// Detection stage efficiencies.
    #[arg(long, value_delimiter = ',')]
    efficiency: Option<Vec<f64>>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Add a separation × detection-time feasibility grid.
    #[arg(long)]
    grid: bool,
    #[arg(long, value_delimiter = ',')]
    grid_separations: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid_detection_times: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SwapArgs {
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    werner_p: Option<f64>,
    #[arg(long)]
    nodes: Option<u32>,
    /// Link attempts per second.
    #[arg(long)]
    attempt_rate: Option<f64>,
    /// Per-attempt heralding probability before fiber loss.
    #[arg(long)]
    success_probability: Option<f64>,
    #[arg(long)]
    fiber_length: Option<f64>,
    /// dB/km.
    #[arg(long)]
    attenuation: Option<f64>,
    #[arg(long)]
    coupling: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn pair(v: Option<Vec<f64>>) -> Option<[f64; 2]> {
    v.map(|v| [v[0], v[1]])
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => config::load(path)?,
        None => RunConfig {
            seed: DEFAULT_SEED,
            ..RunConfig::default()
        },
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.format, cli.format);
    match &cli.command {
        Command::Chsh(a) => {
            let c = &mut cfg.chsh;
            set(&mut c.events_per_setting, a.events_per_setting);
            if let Some(p) = a.werner_p {
                c.source.state = SourceState::Werner { p };
            }
            if a.ideal {
                c.detector.atom_bright_error = 0.0;
                c.detector.atom_dark_error = 0.0;
            }
            c.table1_fixture |= a.table1_fixture;
            set(&mut c.detector.atom_bright_error, a.bright_error);
            set(&mut c.detector.atom_dark_error, a.dark_error);
            set(&mut c.detector.pmt_efficiency_1, a.pmt_efficiency_1);
            set(&mut c.detector.pmt_efficiency_2, a.pmt_efficiency_2);
            set(
                &mut c.detector.dark_count_probability,
                a.dark_count_probability,
            );
            set(&mut c.bootstrap_resamples, a.bootstrap);
            if a.single_pulse {
                c.pulse_mode = PulseMode::SinglePulse;
            }
            set(&mut c.transfer_phase, a.transfer_phase);
            set(&mut c.role_a_angles, pair(a.role_a_angles.clone()));
            set(&mut c.role_b_angles, pair(a.role_b_angles.clone()));
        }
        Command::Bounds(a) => {
            let c = &mut cfg.bounds;
            set(&mut c.fidelity, a.fidelity);
            set(&mut c.optimizer.restarts, a.restarts);
            set(&mut c.optimizer.iterations, a.iterations);
        }
        Command::Lhv(a) => set(&mut cfg.lhv.grid, a.grid),
        Command::Loopholes(a) => {
            let c = &mut cfg.loopholes;
            set(&mut c.geometry.atom_measurement_time, a.detection_time);
            set(&mut c.geometry.rotation_time, a.rotation_time);
            set(&mut c.geometry.atom_to_analysis_distance, a.separation);
            set(&mut c.attenuations, a.attenuation.clone());
            if a.fiber_length.is_some() {
                c.fiber_length = a.fiber_length;
            }
            set(&mut c.coupling_efficiency, a.coupling);
            set(&mut c.efficiencies, a.efficiency.clone());
            if a.threshold.is_some() {
                c.efficiency_threshold = a.threshold;
            }
            if a.grid || a.grid_separations.is_some() || a.grid_detection_times.is_some() {
                let g = c.grid.get_or_insert_with(FeasibilityGridConfig::default);
                set(&mut g.separations, a.grid_separations.clone());
                set(&mut g.detection_times, a.grid_detection_times.clone());
            }
        }
        Command::Swap(a) => {
            let c = &mut cfg.swap;
            set(&mut c.trials, a.trials);
            if a.werner_p.is_some() {
                c.werner_p = a.werner_p;
            }
            set(&mut c.nodes, a.nodes);
            set(&mut c.attempt_rate, a.attempt_rate);
            set(&mut c.success_probability, a.success_probability);
            set(&mut c.link.fiber_length, a.fiber_length);
            set(&mut c.link.attenuation, a.attenuation);
            set(&mut c.link.coupling_efficiency, a.coupling);
        }
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut warnings = Vec::new();
    let seed = cfg.seed;
    let text = match &cli.command {
        Command::Chsh(_) => render(
            "chsh",
            &cfg,
            &warnings,
            &commands::chsh(&cfg.chsh, seed)?,
            cfg.format,
        ),
        Command::Bounds(_) => {
            let r = commands::bounds(&cfg.bounds, seed, &mut warnings)?;
            render("bounds", &cfg, &warnings, &r, cfg.format)
        }
        Command::Lhv(_) => render(
            "lhv",
            &cfg,
            &warnings,
            &commands::lhv(&cfg.lhv)?,
            cfg.format,
        ),
        Command::Loopholes(_) => render(
            "loopholes",
            &cfg,
            &warnings,
            &commands::loopholes(&cfg.loopholes)?,
            cfg.format,
        ),
        Command::Swap(_) => render(
            "swap",
            &cfg,
            &warnings,
            &commands::swap(&cfg.swap, seed)?,
            cfg.format,
        ),
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    match &cli.output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bellsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
