use std::f64::consts::PI;

use bellsim::bounds::{
    extremal_bell_closed_form, extremal_bell_numeric, lhv_enumerate, tsirelson_scan,
    witness_fidelity, FidelityConstraint, LhvStrategy,
};
use bellsim::harness::{
    reference_bell_results, run_experiment, BellResult, ExperimentPlan, RunOptions, SettingsPlan,
    REFERENCE_SIGMA_Q, REFERENCE_TABLE,
};
use bellsim::quantum::{
    bell_pair_ideal, bell_signal_of, fidelity, werner, BellAngles, DensityMatrix,
    MeasurementSetting, Qubit,
};
use bellsim::remote::{
    adapted_angles, chain_latency, detection_accounting, feasibility_grid, heralded_ion_state,
    locality_check, photon_midpoint_distance, photon_survival, swap_batch, swap_branches,
    BsaOutcome, DetectionReport, FeasibilityCell, LinkBudget,
};
use serde::{Deserialize, Serialize};

use crate::config::{BoundsConfig, ChshConfig, LhvConfig, LoopholesConfig, SwapConfig};
use crate::error::CliError;
use crate::render::{Cell, Results, Table};

fn role_name(q: Qubit) -> &'static str {
    match q {
        Qubit::Atom => "atom",
        Qubit::Photon => "photon",
    }
}

fn pi_units(x: f64) -> f64 {
    x / PI
}

fn polar_pi(x: f64) -> Result<MeasurementSetting, CliError> {
    Ok(MeasurementSetting::polar(x * PI)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshRow {
    pub experiment: usize,
    pub theta_s: f64,
    pub phi_s: f64,
    pub theta_p: f64,
    pub phi_p: f64,
    pub q: f64,
    pub sigma: f64,
    pub sigma_bootstrap: Option<f64>,
    pub q_normal: Option<f64>,
    pub q_swapped: Option<f64>,
    pub events: u64,
    pub attempts: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshBell {
    pub experiment: usize,
    pub role_a: String,
    pub b: f64,
    pub sigma_b: f64,
    pub signed_b: f64,
    pub events: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshResults {
    pub source: String,
    pub settings: Vec<ChshRow>,
    pub bell: Vec<ChshBell>,
}

fn bell_row(e: usize, r: &BellResult) -> ChshBell {
    ChshBell {
        experiment: e + 1,
        role_a: role_name(r.role_a).into(),
        b: r.b,
        sigma_b: r.sigma_b,
        signed_b: r.signed_b,
        events: r.events_used,
    }
}

pub fn chsh(cfg: &ChshConfig, seed: u64) -> Result<ChshResults, CliError> {
    if cfg.table1_fixture {
        let bell = reference_bell_results()?;
        let settings = REFERENCE_TABLE
            .iter()
            .enumerate()
            .map(|(k, &(ts, tp, q))| ChshRow {
                experiment: k / 4 + 1,
                theta_s: ts,
                phi_s: 0.0,
                theta_p: tp,
                phi_p: 0.0,
                q,
                sigma: REFERENCE_SIGMA_Q,
                sigma_bootstrap: None,
                q_normal: None,
                q_swapped: None,
                events: 0,
                attempts: 0,
            })
            .collect();
        return Ok(ChshResults {
            source: "published_table".into(),
            settings,
            bell: bell
                .iter()
                .enumerate()
                .map(|(e, r)| bell_row(e, r))
                .collect(),
        });
    }

    let a = [
        polar_pi(cfg.role_a_angles[0])?,
        polar_pi(cfg.role_a_angles[1])?,
    ];
    let b = [
        polar_pi(cfg.role_b_angles[0])?,
        polar_pi(cfg.role_b_angles[1])?,
    ];
    let plan = SettingsPlan {
        experiments: [
            ExperimentPlan {
                role_a: Qubit::Atom,
                a,
                b,
            },
            ExperimentPlan {
                role_a: Qubit::Photon,
                a,
                b,
            },
        ],
        events_per_setting: cfg.events_per_setting,
    };
    let options = RunOptions {
        pulse_mode: cfg.pulse_mode,
        transfer_phase: cfg.transfer_phase * PI,
        microwave_frequency: cfg.microwave_frequency,
        bootstrap_resamples: cfg.bootstrap_resamples,
    };
    let report = run_experiment(&plan, &cfg.source, &cfg.detector, &options, seed)?;
    let settings = report
        .table
        .iter()
        .map(|r| ChshRow {
            experiment: r.experiment + 1,
            theta_s: pi_units(r.setting_s.theta()),
            phi_s: pi_units(r.setting_s.phi()),
            theta_p: pi_units(r.setting_p.theta()),
            phi_p: pi_units(r.setting_p.phi()),
            q: r.estimate.q,
            sigma: r.estimate.sigma,
            sigma_bootstrap: r.sigma_bootstrap,
            q_normal: Some(r.runs[0].q),
            q_swapped: Some(r.runs[1].q),
            events: r.events(),
            attempts: r.attempts,
        })
        .collect();
    Ok(ChshResults {
        source: "monte_carlo".into(),
        settings,
        bell: report
            .experiments
            .iter()
            .enumerate()
            .map(|(e, r)| bell_row(e, r))
            .collect(),
    })
}

impl Results for ChshResults {
    fn tables(&self) -> Vec<Table> {
        let mut settings = Table::new(
            "settings",
            &[
                "experiment",
                "theta_s",
                "phi_s",
                "theta_p",
                "phi_p",
                "q",
                "sigma",
                "sigma_bootstrap",
                "q_normal",
                "q_swapped",
                "events",
                "attempts",
            ],
        );
        for r in &self.settings {
            settings.push(vec![
                r.experiment.into(),
                r.theta_s.into(),
                r.phi_s.into(),
                r.theta_p.into(),
                r.phi_p.into(),
                r.q.into(),
                r.sigma.into(),
                r.sigma_bootstrap.into(),
                r.q_normal.into(),
                r.q_swapped.into(),
                r.events.into(),
                r.attempts.into(),
            ]);
        }
        let mut bell = Table::new(
            "bell",
            &["experiment", "role_a", "b", "sigma_b", "signed_b", "events"],
        );
        for r in &self.bell {
            bell.push(vec![
                r.experiment.into(),
                r.role_a.as_str().into(),
                r.b.into(),
                r.sigma_b.into(),
                r.signed_b.into(),
                r.events.into(),
            ]);
        }
        vec![settings, bell]
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extrema {
    pub b_min: f64,
    pub b_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessSummary {
    pub extremum: String,
    pub fidelity: f64,
    pub purity: f64,
    pub eigenvalues: [f64; 4],
    pub signed_b: f64,
    pub abs_b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsResults {
    pub fidelity: f64,
    pub out_of_regime: bool,
    pub closed_form: Extrema,
    pub numeric: Extrema,
    pub converged: bool,
    pub max_disagreement: f64,
    pub witnesses: Vec<WitnessSummary>,
}

pub fn bounds(
    cfg: &BoundsConfig,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<BoundsResults, CliError> {
    let constraint = FidelityConstraint::new(cfg.fidelity)?;
    let (lo, hi) = extremal_bell_closed_form(cfg.fidelity)?;
    let r = extremal_bell_numeric(&constraint, &cfg.optimizer, seed)?;
    if r.out_of_regime {
        warnings.push(format!(
            "fidelity {} is below 1/2: the signed minimum is negative and the window no longer certifies entanglement",
            cfg.fidelity
        ));
    }
    if !r.converged {
        warnings.push("numeric optimizer restarts disagree by more than 1e-6".into());
    }
    let summary = |name: &str, w: &DensityMatrix, signed: f64, abs_b: f64| WitnessSummary {
        extremum: name.into(),
        fidelity: witness_fidelity(&constraint, w),
        purity: w.purity(),
        eigenvalues: w.eigenvalues(),
        signed_b: signed,
        abs_b,
    };
    Ok(BoundsResults {
        fidelity: cfg.fidelity,
        out_of_regime: r.out_of_regime,
        closed_form: Extrema {
            b_min: lo,
            b_max: hi,
        },
        numeric: Extrema {
            b_min: r.b_min,
            b_max: r.b_max,
        },
        converged: r.converged,
        max_disagreement: (r.b_min - lo).abs().max((r.b_max - hi).abs()),
        witnesses: vec![
            summary("min", &r.witness_min, r.b_min, r.abs_b_min_witness),
            summary("max", &r.witness_max, r.b_max, r.abs_b_max_witness),
        ],
    })
}

impl Results for BoundsResults {
    fn tables(&self) -> Vec<Table> {
        let mut summary = Table::new(
            "summary",
            &["fidelity", "out_of_regime", "converged", "max_disagreement"],
        );
        summary.push(vec![
            self.fidelity.into(),
            self.out_of_regime.into(),
            self.converged.into(),
            self.max_disagreement.into(),
        ]);
        let mut ext = Table::new("extrema", &["method", "b_min", "b_max"]);
        ext.push(vec![
            "closed_form".into(),
            self.closed_form.b_min.into(),
            self.closed_form.b_max.into(),
        ]);
        ext.push(vec![
            "numeric".into(),
            self.numeric.b_min.into(),
            self.numeric.b_max.into(),
        ]);
        let mut wit = Table::new(
            "witnesses",
            &[
                "extremum", "fidelity", "purity", "eig0", "eig1", "eig2", "eig3", "signed_b",
                "abs_b",
            ],
        );
        for w in &self.witnesses {
            let mut row: Vec<Cell> = vec![
                w.extremum.as_str().into(),
                w.fidelity.into(),
                w.purity.into(),
            ];
            row.extend(w.eigenvalues.iter().map(|&e| Cell::from(e)));
            row.push(w.signed_b.into());
            row.push(w.abs_b.into());
            wit.push(row);
        }
        vec![summary, ext, wit]
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyRow {
    pub index: usize,
    pub a1: i8,
    pub a2: i8,
    pub b1: i8,
    pub b2: i8,
    pub b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSummary {
    pub resolution: usize,
    pub max_b: f64,
    /// Maximizing polar angles in units of π.
    pub theta_a1: f64,
    pub theta_a2: f64,
    pub theta_b1: f64,
    pub theta_b2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LhvResults {
    pub strategies: Vec<StrategyRow>,
    pub local_max_b: f64,
    pub maximizers: Vec<usize>,
    pub scan: ScanSummary,
}

pub fn lhv(cfg: &LhvConfig) -> Result<LhvResults, CliError> {
    let scan = tsirelson_scan(cfg.grid)?;
    let e = lhv_enumerate(&BellAngles::canonical());
    let all = LhvStrategy::all();
    let strategies = e
        .table
        .iter()
        .enumerate()
        .map(|(index, r)| StrategyRow {
            index,
            a1: r.strategy.a1,
            a2: r.strategy.a2,
            b1: r.strategy.b1,
            b2: r.strategy.b2,
            b: r.b,
        })
        .collect();
    let maximizers = e
        .argmax
        .iter()
        .map(|s| {
            all.iter()
                .position(|t| t == s)
                .expect("enumerated strategy")
        })
        .collect();
    let th = |s: MeasurementSetting| pi_units(s.theta());
    Ok(LhvResults {
        strategies,
        local_max_b: e.max_b,
        maximizers,
        scan: ScanSummary {
            resolution: scan.resolution,
            max_b: scan.max_b,
            theta_a1: th(scan.argmax.a1),
            theta_a2: th(scan.argmax.a2),
            theta_b1: th(scan.argmax.b1),
            theta_b2: th(scan.argmax.b2),
        },
    })
}

impl Results for LhvResults {
    fn tables(&self) -> Vec<Table> {
        let mut strategies = Table::new("strategies", &["index", "a1", "a2", "b1", "b2", "b"]);
        for s in &self.strategies {
            strategies.push(vec![
                s.index.into(),
                Cell::Text(s.a1.to_string()),
                Cell::Text(s.a2.to_string()),
                Cell::Text(s.b1.to_string()),
                Cell::Text(s.b2.to_string()),
                s.b.into(),
            ]);
        }
        let mut summary = Table::new(
            "summary",
            &[
                "local_max_b",
                "maximizers",
                "scan_resolution",
                "scan_max_b",
                "theta_a1",
                "theta_a2",
                "theta_b1",
                "theta_b2",
            ],
        );
        let maximizers: Vec<String> = self.maximizers.iter().map(usize::to_string).collect();
        summary.push(vec![
            self.local_max_b.into(),
            maximizers.join(";").into(),
            self.scan.resolution.into(),
            self.scan.max_b.into(),
            self.scan.theta_a1.into(),
            self.scan.theta_a2.into(),
            self.scan.theta_b1.into(),
            self.scan.theta_b2.into(),
        ]);
        vec![strategies, summary]
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalitySummary {
    pub separation: f64,
    pub detection_time: f64,
    pub rotation_time: f64,
    pub required_separation: f64,
    pub closed: bool,
    pub midpoint_distance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalRow {
    pub attenuation: f64,
    pub fiber_length: f64,
    pub survival: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopholesResults {
    pub locality: LocalitySummary,
    pub detection: DetectionReport,
    pub survival: Vec<SurvivalRow>,
    pub feasibility: Option<Vec<FeasibilityCell>>,
}

pub fn loopholes(cfg: &LoopholesConfig) -> Result<LoopholesResults, CliError> {
    let verdict = locality_check(&cfg.geometry)?;
    let midpoint = photon_midpoint_distance(cfg.geometry.atom_to_analysis_distance)?;
    let fiber_length = cfg.fiber_length.unwrap_or(midpoint);
    let survival = cfg
        .attenuations
        .iter()
        .map(|&attenuation| {
            let link = LinkBudget {
                fiber_length,
                attenuation,
                coupling_efficiency: cfg.coupling_efficiency,
            };
            Ok(SurvivalRow {
                attenuation,
                fiber_length,
                survival: photon_survival(&link)?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let feasibility = match &cfg.grid {
        Some(g) => Some(feasibility_grid(
            &g.separations,
            &g.detection_times,
            cfg.geometry.rotation_time,
        )?),
        None => None,
    };
    Ok(LoopholesResults {
        locality: LocalitySummary {
            separation: verdict.separation,
            detection_time: cfg.geometry.atom_measurement_time,
            rotation_time: cfg.geometry.rotation_time,
            required_separation: verdict.required_separation,
            closed: verdict.closed,
            midpoint_distance: midpoint,
        },
        detection: detection_accounting(&cfg.efficiencies, cfg.efficiency_threshold)?,
        survival,
        feasibility,
    })
}

impl Results for LoopholesResults {
    fn tables(&self) -> Vec<Table> {
        let l = &self.locality;
        let mut locality = Table::new(
            "locality",
            &[
                "separation",
                "detection_time",
                "rotation_time",
                "required_separation",
                "closed",
                "midpoint_distance",
            ],
        );
        locality.push(vec![
            l.separation.into(),
            l.detection_time.into(),
            l.rotation_time.into(),
            l.required_separation.into(),
            l.closed.into(),
            l.midpoint_distance.into(),
        ]);
        let d = &self.detection;
        let stages: Vec<String> = d.stages.iter().map(|&s| crate::render::sig6(s)).collect();
        let mut detection = Table::new(
            "detection",
            &["stages", "overall_efficiency", "threshold", "passes"],
        );
        detection.push(vec![
            stages.join(";").into(),
            d.overall_efficiency.into(),
            d.threshold.into(),
            d.passes.into(),
        ]);
        let mut survival = Table::new("survival", &["attenuation", "fiber_length", "survival"]);
        for s in &self.survival {
            survival.push(vec![
                s.attenuation.into(),
                s.fiber_length.into(),
                s.survival.into(),
            ]);
        }
        let mut tables = vec![locality, detection, survival];
        if let Some(cells) = &self.feasibility {
            let mut grid = Table::new(
                "feasibility",
                &[
                    "separation",
                    "detection_time",
                    "required_separation",
                    "closed",
                ],
            );
            for c in cells {
                grid.push(vec![
                    c.separation.into(),
                    c.detection_time.into(),
                    c.required_separation.into(),
                    c.closed.into(),
                ]);
            }
            tables.push(grid);
        }
        tables
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSummary {
    pub outcome: BsaOutcome,
    pub probability: f64,
    pub fidelity: Option<f64>,
    pub bell_signal: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySummary {
    pub nodes: u32,
    pub attempt_rate: f64,
    pub success_probability: f64,
    pub photon_survival: f64,
    pub expected_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapResults {
    pub trials: u64,
    pub successes: u64,
    pub psi_plus: u64,
    pub psi_minus: u64,
    pub success_rate: f64,
    pub input_bell_signal: f64,
    pub branches: Vec<BranchSummary>,
    pub latency: LatencySummary,
}

pub fn swap(cfg: &SwapConfig, seed: u64) -> Result<SwapResults, CliError> {
    if cfg.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let pair = match cfg.werner_p {
        Some(p) => werner(p)?,
        None => bell_pair_ideal().density(),
    };
    let stats = swap_batch(&pair, &pair, cfg.trials, seed)?;
    let branches = swap_branches(&pair, &pair)
        .into_iter()
        .map(|(outcome, probability, state)| {
            let target = heralded_ion_state(outcome).expect("heralded outcome");
            BranchSummary {
                outcome,
                probability,
                fidelity: state.as_ref().map(|s| fidelity(s, &target)),
                bell_signal: state
                    .as_ref()
                    .map(|s| bell_signal_of(s, &adapted_angles(outcome, &BellAngles::canonical()))),
            }
        })
        .collect();
    let survival = photon_survival(&cfg.link)?;
    Ok(SwapResults {
        trials: stats.trials,
        successes: stats.successes,
        psi_plus: stats.psi_plus,
        psi_minus: stats.psi_minus,
        success_rate: stats.success_rate,
        input_bell_signal: bell_signal_of(&pair, &BellAngles::canonical()),
        branches,
        latency: LatencySummary {
            nodes: cfg.nodes,
            attempt_rate: cfg.attempt_rate,
            success_probability: cfg.success_probability,
            photon_survival: survival,
            expected_seconds: chain_latency(
                cfg.nodes,
                &cfg.link,
                cfg.attempt_rate,
                cfg.success_probability,
            )?,
        },
    })
}

fn outcome_name(o: BsaOutcome) -> &'static str {
    match o {
        BsaOutcome::PsiPlus => "psi_plus",
        BsaOutcome::PsiMinus => "psi_minus",
        BsaOutcome::Fail => "fail",
    }
}

impl Results for SwapResults {
    fn tables(&self) -> Vec<Table> {
        let mut mc = Table::new(
            "monte_carlo",
            &[
                "trials",
                "successes",
                "psi_plus",
                "psi_minus",
                "success_rate",
                "input_bell_signal",
            ],
        );
        mc.push(vec![
            self.trials.into(),
            self.successes.into(),
            self.psi_plus.into(),
            self.psi_minus.into(),
            self.success_rate.into(),
            self.input_bell_signal.into(),
        ]);
        let mut branches = Table::new(
            "branches",
            &["outcome", "probability", "fidelity", "bell_signal"],
        );
        for b in &self.branches {
            branches.push(vec![
                outcome_name(b.outcome).into(),
                b.probability.into(),
                b.fidelity.into(),
                b.bell_signal.into(),
            ]);
        }
        let l = &self.latency;
        let mut latency = Table::new(
            "latency",
            &[
                "nodes",
                "attempt_rate",
                "success_probability",
                "photon_survival",
                "expected_seconds",
            ],
        );
        latency.push(vec![
            (l.nodes as u64).into(),
            l.attempt_rate.into(),
            l.success_probability.into(),
            l.photon_survival.into(),
            l.expected_seconds.into(),
        ]);
        vec![mc, branches, latency]
    }
}
