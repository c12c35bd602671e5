//! Run configuration: strict JSON file plus command-line overrides.

use std::path::Path;

use bellsim::bounds::OptimizerOptions;
use bellsim::protocol::{DetectorParams, PulseMode, SourceParams};
use bellsim::remote::{GeometryConfig, LinkBudget};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub format: Format,
    pub chsh: ChshConfig,
    pub bounds: BoundsConfig,
    pub lhv: LhvConfig,
    pub loopholes: LoopholesConfig,
    pub swap: SwapConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChshConfig {
    pub events_per_setting: usize,
    pub source: SourceParams,
    pub detector: DetectorParams,
    /// Polar angles (units of π) for the qubit in role A; shared by both experiments.
    pub role_a_angles: [f64; 2],
    pub role_b_angles: [f64; 2],
    pub pulse_mode: PulseMode,
    /// Units of π.
    pub transfer_phase: f64,
    pub microwave_frequency: f64,
    pub bootstrap_resamples: usize,
    /// Recompute the Bell signals from the published correlation table instead of sampling.
    pub table1_fixture: bool,
}

impl Default for ChshConfig {
    fn default() -> Self {
        Self {
            events_per_setting: 2000,
            source: SourceParams::default(),
            detector: DetectorParams::default(),
            role_a_angles: [0.0, 0.5],
            role_b_angles: [0.25, 0.75],
            pulse_mode: PulseMode::TwoPulse,
            transfer_phase: 0.0,
            microwave_frequency: 14.5e9,
            bootstrap_resamples: 0,
            table1_fixture: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub fidelity: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            fidelity: 0.87,
            optimizer: OptimizerOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LhvConfig {
    pub grid: usize,
}

impl Default for LhvConfig {
    fn default() -> Self {
        Self { grid: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopholesConfig {
    pub geometry: GeometryConfig,
    /// dB/km values swept for the photon survival table.
    pub attenuations: Vec<f64>,
    /// Metres of fiber per photon; the midpoint distance when absent.
    pub fiber_length: Option<f64>,
    pub coupling_efficiency: f64,
    /// Detection stages multiplied into the overall efficiency.
    pub efficiencies: Vec<f64>,
    pub efficiency_threshold: Option<f64>,
    pub grid: Option<FeasibilityGridConfig>,
}

impl Default for LoopholesConfig {
    fn default() -> Self {
        let source = SourceParams::default();
        Self {
            geometry: GeometryConfig::default(),
            attenuations: vec![0.2, 1.0, 3.0, 10.0, 100.0],
            fiber_length: None,
            coupling_efficiency: 1.0,
            efficiencies: vec![
                source.excitation_probability,
                source.collection_efficiency,
                source.detector_quantum_efficiency,
            ],
            efficiency_threshold: None,
            grid: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasibilityGridConfig {
    /// Metres.
    pub separations: Vec<f64>,
    /// Seconds.
    pub detection_times: Vec<f64>,
}

impl Default for FeasibilityGridConfig {
    fn default() -> Self {
        Self {
            separations: vec![1.1, 100.0, 1_000.0, 10_000.0, 15_000.0, 40_000.0],
            detection_times: vec![1e-6, 10e-6, 50e-6, 125e-6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapConfig {
    pub trials: u64,
    /// Werner visibility of both input pairs; ideal pairs when absent.
    pub werner_p: Option<f64>,
    pub nodes: u32,
    /// Attempts per second on each link.
    pub attempt_rate: f64,
    pub success_probability: f64,
    pub link: LinkBudget,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            werner_p: None,
            nodes: 2,
            attempt_rate: 8.3e3,
            success_probability: 2.0e-4,
            link: LinkBudget::default(),
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse(text: &str) -> Result<RunConfig, serde_json::Error> {
    serde_json::from_str(text)
}
