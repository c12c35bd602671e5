//! Four-setting CHSH runs in the layout of the published correlation table.
//!
//! Each correlation is measured in two sub-runs with the PMT roles exchanged, the two
//! run-level correlations are averaged with equal weight, and statistical errors follow
//! the multinomial closed form (an optional bootstrap gives an independent check).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::protocol::{
    Apparatus, DetectorParams, EventRecord, PulseMode, PulseSequence, SourceParams, TrialSettings,
};
use crate::quantum::{bell_signal, signed_chsh, BellAngles, MeasurementSetting, Qubit};
use crate::rng::stream;

/// Bootstrap streams start here so they never collide with sampling streams.
const BOOTSTRAP_STREAM_BASE: u64 = 1 << 32;

/// One CHSH measurement: which qubit plays role A and the two settings per role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub role_a: Qubit,
    pub a: [MeasurementSetting; 2],
    pub b: [MeasurementSetting; 2],
}

impl ExperimentPlan {
    pub fn angles(&self) -> BellAngles {
        BellAngles::new(self.a[0], self.a[1], self.b[0], self.b[1])
    }

    /// (atom setting, photon setting) for role-A index `i` and role-B index `j`.
    pub fn atom_photon(&self, i: usize, j: usize) -> (MeasurementSetting, MeasurementSetting) {
        match self.role_a {
            Qubit::Atom => (self.a[i], self.b[j]),
            Qubit::Photon => (self.b[j], self.a[i]),
        }
    }

    /// (i, j) role indices in table order: atom setting outer, photon setting inner.
    pub fn table_order(&self) -> [(usize, usize); 4] {
        match self.role_a {
            Qubit::Atom => [(0, 0), (0, 1), (1, 0), (1, 1)],
            Qubit::Photon => [(0, 0), (1, 0), (0, 1), (1, 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingsPlan {
    pub experiments: [ExperimentPlan; 2],
    pub events_per_setting: usize,
}

impl Default for SettingsPlan {
    fn default() -> Self {
        Self::canonical(2000)
    }
}

impl SettingsPlan {
    /// Experiment 1 rotates the atom by 0, π/2 and the photon by π/4, 3π/4; experiment 2
    /// exchanges the angle sets, with the photon in role A.
    pub fn canonical(events_per_setting: usize) -> Self {
        let s = |x: f64| MeasurementSetting::polar(x * PI).expect("finite");
        Self {
            experiments: [
                ExperimentPlan {
                    role_a: Qubit::Atom,
                    a: [s(0.0), s(0.5)],
                    b: [s(0.25), s(0.75)],
                },
                ExperimentPlan {
                    role_a: Qubit::Photon,
                    a: [s(0.0), s(0.5)],
                    b: [s(0.25), s(0.75)],
                },
            ],
            events_per_setting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events_per_setting < 2 {
            return Err(invalid(
                "events_per_setting",
                "need at least 2 events (one per PMT role)",
            ));
        }
        Ok(())
    }
}

/// Outcome counts indexed by (atom outcome, PMT that clicked).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationTally {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
    pub pmt_role_swapped: bool,
}

impl CorrelationTally {
    pub fn new(pmt_role_swapped: bool) -> Self {
        Self {
            pmt_role_swapped,
            ..Self::default()
        }
    }

    pub fn from_counts(counts: [u64; 4], pmt_role_swapped: bool) -> Self {
        Self {
            n00: counts[0],
            n01: counts[1],
            n10: counts[2],
            n11: counts[3],
            pmt_role_swapped,
        }
    }

    pub fn counts(&self) -> [u64; 4] {
        [self.n00, self.n01, self.n10, self.n11]
    }

    pub fn total(&self) -> u64 {
        self.counts().iter().sum()
    }

    pub fn record(&mut self, event: &EventRecord) {
        match (event.atom_outcome.index(), event.photon_outcome) {
            (0, 0) => self.n00 += 1,
            (0, _) => self.n01 += 1,
            (_, 0) => self.n10 += 1,
            _ => self.n11 += 1,
        }
    }

    /// Counts with the photon label mapped back to the qubit outcome.
    pub fn logical_counts(&self) -> [u64; 4] {
        if self.pmt_role_swapped {
            [self.n01, self.n00, self.n11, self.n10]
        } else {
            self.counts()
        }
    }

    /// The same data seen with the opposite role flag.
    pub fn relabeled(&self) -> Self {
        Self::from_counts(
            [self.n01, self.n00, self.n11, self.n10],
            !self.pmt_role_swapped,
        )
    }

    pub fn merged(&self, other: &Self) -> Self {
        let a = self.logical_counts();
        let b = other.logical_counts();
        Self::from_counts(std::array::from_fn(|k| a[k] + b[k]), false)
    }
}

/// A correlation with its statistical uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub q: f64,
    pub sigma: f64,
}

/// `q = (n00 + n11 − n01 − n10)/N`, `σ = √((1 − q²)/N)`.
pub fn estimate_correlation(tally: &CorrelationTally) -> Result<Estimate> {
    let [n00, n01, n10, n11] = tally.logical_counts();
    let n = tally.total();
    if n == 0 {
        return Err(Error::EmptyTally);
    }
    let n = n as f64;
    let q = ((n00 + n11) as f64 - (n01 + n10) as f64) / n;
    let sigma = ((1.0 - q * q).max(0.0) / n).sqrt();
    Ok(Estimate { q, sigma })
}

/// Equal-weight mean of the normal-role and swapped-role correlations.
pub fn combine_swapped_runs(
    normal: &CorrelationTally,
    swapped: &CorrelationTally,
) -> Result<Estimate> {
    if normal.pmt_role_swapped {
        return Err(Error::RoleMismatch(
            "first tally must use the normal PMT roles",
        ));
    }
    if !swapped.pmt_role_swapped {
        return Err(Error::RoleMismatch(
            "second tally must use the swapped PMT roles",
        ));
    }
    let a = estimate_correlation(normal)?;
    let b = estimate_correlation(swapped)?;
    Ok(combine_estimates(a, b))
}

pub fn combine_estimates(a: Estimate, b: Estimate) -> Estimate {
    Estimate {
        q: 0.5 * (a.q + b.q),
        sigma: 0.5 * (a.sigma * a.sigma + b.sigma * b.sigma).sqrt(),
    }
}

/// Bootstrap standard deviation of the correlation: resample the counts from the
/// observed multinomial and take the spread of the recomputed q.
pub fn bootstrap_sigma<R: Rng + ?Sized>(
    tally: &CorrelationTally,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    let counts = tally.logical_counts();
    let n = tally.total();
    if n == 0 {
        return Err(Error::EmptyTally);
    }
    if resamples < 2 {
        return Err(invalid("resamples", "need at least 2"));
    }
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut qs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut left = n;
        let mut mass = 1.0;
        let mut draw = [0u64; 4];
        for k in 0..3 {
            let p = if mass > 0.0 {
                (probs[k] / mass).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let c = Binomial::new(left, p)
                .map_err(|e| invalid("bootstrap", e.to_string()))?
                .sample(rng);
            draw[k] = c;
            left -= c;
            mass -= probs[k];
        }
        draw[3] = left;
        let q = ((draw[0] + draw[3]) as f64 - (draw[1] + draw[2]) as f64) / n as f64;
        qs.push(q);
    }
    let mean = qs.iter().sum::<f64>() / resamples as f64;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

/// Correlations `qij = q(Ai, Bj)` entering one Bell signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationQuad {
    pub q11: Estimate,
    pub q12: Estimate,
    pub q21: Estimate,
    pub q22: Estimate,
}

impl CorrelationQuad {
    pub fn get(&self, i: usize, j: usize) -> Estimate {
        match (i, j) {
            (0, 0) => self.q11,
            (0, _) => self.q12,
            (_, 0) => self.q21,
            _ => self.q22,
        }
    }

    fn from_fn(f: impl Fn(usize, usize) -> Estimate) -> Self {
        Self {
            q11: f(0, 0),
            q12: f(0, 1),
            q21: f(1, 0),
            q22: f(1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellResult {
    pub role_a: Qubit,
    pub angles: BellAngles,
    pub correlations: CorrelationQuad,
    /// `|q22 − q12| + |q21 + q11|`.
    pub b: f64,
    pub sigma_b: f64,
    /// `q22 − q12 + q21 + q11`.
    pub signed_b: f64,
    pub events_used: u64,
}

/// Bell signal and its propagated uncertainty `σ_B = √(Σ σ_qij²)`.
pub fn bell_from_correlations(
    correlations: CorrelationQuad,
    angles: BellAngles,
    role_a: Qubit,
    events_used: u64,
) -> Result<BellResult> {
    let c = &correlations;
    let b = bell_signal(c.q22.q, c.q12.q, c.q21.q, c.q11.q)?;
    let sigma_b = [c.q11, c.q12, c.q21, c.q22]
        .iter()
        .map(|e| e.sigma * e.sigma)
        .sum::<f64>()
        .sqrt();
    Ok(BellResult {
        role_a,
        angles,
        correlations,
        b,
        sigma_b,
        signed_b: signed_chsh(c.q22.q, c.q12.q, c.q21.q, c.q11.q),
        events_used,
    })
}

/// One row of the correlation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub experiment: usize,
    pub setting_s: MeasurementSetting,
    pub setting_p: MeasurementSetting,
    pub estimate: Estimate,
    /// Equal-weight bootstrap σ of the combined correlation, when requested.
    pub sigma_bootstrap: Option<f64>,
    pub runs: [Estimate; 2],
    pub tallies: [CorrelationTally; 2],
    pub attempts: u64,
}

impl SettingResult {
    pub fn events(&self) -> u64 {
        self.tallies.iter().map(CorrelationTally::total).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub experiments: [BellResult; 2],
    /// Eight rows, experiment 1 then 2, atom setting outer and photon setting inner.
    pub table: Vec<SettingResult>,
}

/// Microwave configuration shared by every setting of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub pulse_mode: PulseMode,
    pub transfer_phase: f64,
    pub microwave_frequency: f64,
    /// 0 disables the bootstrap cross-check.
    pub bootstrap_resamples: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pulse_mode: PulseMode::TwoPulse,
            transfer_phase: 0.0,
            microwave_frequency: PulseSequence::default().microwave_frequency,
            bootstrap_resamples: 0,
        }
    }
}

impl RunOptions {
    fn pulse_for(&self, atom: &MeasurementSetting) -> PulseSequence {
        let rotation_phase = match self.pulse_mode {
            PulseMode::TwoPulse => atom.phi() + self.transfer_phase,
            PulseMode::SinglePulse => atom.phi(),
        };
        PulseSequence {
            mode: self.pulse_mode,
            transfer_phase: self.transfer_phase,
            rotation_theta: atom.theta(),
            rotation_phase,
            microwave_frequency: self.microwave_frequency,
        }
    }
}

struct SubRun {
    experiment: usize,
    i: usize,
    j: usize,
    swapped: bool,
    events: usize,
    stream: u64,
    apparatus: Apparatus,
}

/// Run both CHSH experiments of `plan`.
///
/// Every sub-run (experiment, setting, PMT role) owns the ChaCha stream
/// `experiment·8 + setting·2 + role`, so the report is identical for any thread count.
pub fn run_experiment(
    plan: &SettingsPlan,
    source: &SourceParams,
    detector: &DetectorParams,
    options: &RunOptions,
    seed: u64,
) -> Result<ExperimentReport> {
    plan.validate()?;
    let half = plan.events_per_setting / 2;
    let extra = plan.events_per_setting % 2;

    let mut subruns = Vec::with_capacity(16);
    for (e, exp) in plan.experiments.iter().enumerate() {
        for (k, &(i, j)) in exp.table_order().iter().enumerate() {
            let (atom, photon) = exp.atom_photon(i, j);
            for (r, swapped) in [false, true].into_iter().enumerate() {
                let trial = TrialSettings {
                    pulse: options.pulse_for(&atom),
                    photon,
                    pmt_role_swapped: swapped,
                };
                let apparatus = Apparatus::new(source.clone(), detector.clone(), trial)?;
                subruns.push(SubRun {
                    experiment: e,
                    i,
                    j,
                    swapped,
                    events: if swapped { half } else { half + extra },
                    stream: (e * 8 + k * 2 + r) as u64,
                    apparatus,
                });
            }
        }
    }

    let tallied: Vec<(CorrelationTally, u64)> = subruns
        .par_iter_mut()
        .map(|run| {
            let mut rng = stream(seed, run.stream);
            let mut tally = CorrelationTally::new(run.swapped);
            for _ in 0..run.events {
                tally.record(&run.apparatus.next_event(&mut rng)?);
            }
            Ok((tally, run.apparatus.attempts()))
        })
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(8);
    for pair in subruns.chunks(2).zip(tallied.chunks(2)) {
        let (runs, counts) = pair;
        let (normal, swapped) = (counts[0].0, counts[1].0);
        let estimate = combine_swapped_runs(&normal, &swapped)?;
        let sigma_bootstrap = if options.bootstrap_resamples > 0 {
            let mut rng = stream(seed, BOOTSTRAP_STREAM_BASE + runs[0].stream);
            let s1 = bootstrap_sigma(&normal, options.bootstrap_resamples, &mut rng)?;
            let s2 = bootstrap_sigma(&swapped, options.bootstrap_resamples, &mut rng)?;
            Some(0.5 * (s1 * s1 + s2 * s2).sqrt())
        } else {
            None
        };
        let exp = &plan.experiments[runs[0].experiment];
        let (setting_s, setting_p) = exp.atom_photon(runs[0].i, runs[0].j);
        table.push(SettingResult {
            experiment: runs[0].experiment,
            setting_s,
            setting_p,
            estimate,
            sigma_bootstrap,
            runs: [
                estimate_correlation(&normal)?,
                estimate_correlation(&swapped)?,
            ],
            tallies: [normal, swapped],
            attempts: counts[0].1 + counts[1].1,
        });
    }

    let bell = |e: usize| -> Result<BellResult> {
        let exp = &plan.experiments[e];
        let rows: Vec<&SettingResult> = table.iter().filter(|r| r.experiment == e).collect();
        let lookup = |i: usize, j: usize| {
            let pos = exp
                .table_order()
                .iter()
                .position(|&p| p == (i, j))
                .expect("four settings");
            rows[pos].estimate
        };
        let events = rows.iter().map(|r| r.events()).sum();
        bell_from_correlations(
            CorrelationQuad::from_fn(lookup),
            exp.angles(),
            exp.role_a,
            events,
        )
    };
    Ok(ExperimentReport {
        seed,
        experiments: [bell(0)?, bell(1)?],
        table,
    })
}

/// Published correlation table: (θS, θP) in units of π and the measured q, in print order.
pub const REFERENCE_TABLE: [(f64, f64, f64); 8] = [
    (0.0, 0.25, 0.558),
    (0.0, 0.75, -0.519),
    (0.5, 0.25, 0.513),
    (0.5, 0.75, 0.613),
    (0.25, 0.0, 0.636),
    (0.25, 0.5, 0.461),
    (0.75, 0.0, -0.516),
    (0.75, 0.5, 0.605),
];

/// Published Bell signals for the two experiments and their common uncertainty.
pub const REFERENCE_B: [f64; 2] = [2.203, 2.218];
pub const REFERENCE_SIGMA_B: f64 = 0.028;

/// Per-correlation σ that reproduces the published σ_B when combined in quadrature.
pub const REFERENCE_SIGMA_Q: f64 = REFERENCE_SIGMA_B / 2.0;

/// Bell results recomputed from [`REFERENCE_TABLE`].
pub fn reference_bell_results() -> Result<[BellResult; 2]> {
    let plan = SettingsPlan::canonical(0);
    let mut out = Vec::with_capacity(2);
    for (e, exp) in plan.experiments.iter().enumerate() {
        let rows = &REFERENCE_TABLE[4 * e..4 * e + 4];
        let quad = CorrelationQuad::from_fn(|i, j| {
            let pos = exp
                .table_order()
                .iter()
                .position(|&p| p == (i, j))
                .expect("four settings");
            Estimate {
                q: rows[pos].2,
                sigma: REFERENCE_SIGMA_Q,
            }
        });
        out.push(bell_from_correlations(quad, exp.angles(), exp.role_a, 0)?);
    }
    Ok([out[0].clone(), out[1].clone()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(q: f64, sigma: f64) -> Estimate {
        Estimate { q, sigma }
    }

    #[test]
    fn estimate_examples() {
        let e =
            estimate_correlation(&CorrelationTally::from_counts([500, 0, 0, 500], false)).unwrap();
        assert_eq!((e.q, e.sigma), (1.0, 0.0));
        let e = estimate_correlation(&CorrelationTally::from_counts([450, 50, 50, 450], false))
            .unwrap();
        assert!((e.q - 0.8).abs() < 1e-15);
        assert!((e.sigma - (0.36f64 / 1000.0).sqrt()).abs() < 1e-15);
        assert!((e.sigma - 0.01897).abs() < 1e-5);
        let e = estimate_correlation(&CorrelationTally::from_counts([250; 4], false)).unwrap();
        assert_eq!(e.q, 0.0);
        assert!((e.sigma - 0.03162).abs() < 1e-5);
        assert_eq!(
            estimate_correlation(&CorrelationTally::default()),
            Err(Error::EmptyTally)
        );
    }

    #[test]
    fn bootstrap_agrees_with_closed_form() {
        let tally = CorrelationTally::from_counts([450, 50, 50, 450], false);
        let mut rng = stream(21, 0);
        let s = bootstrap_sigma(&tally, 1000, &mut rng).unwrap();
        let closed = estimate_correlation(&tally).unwrap().sigma;
        // σ of a sample std-dev over 1000 resamples is ≈ 2.2%.
        assert!((s / closed - 1.0).abs() < 0.1, "{s} vs {closed}");
    }

    #[test]
    fn combine_examples() {
        let normal = CorrelationTally::from_counts([430, 70, 60, 440], false);
        let same_logical = normal.relabeled();
        assert!(same_logical.pmt_role_swapped);
        let single = estimate_correlation(&normal).unwrap();
        let combined = combine_swapped_runs(&normal, &same_logical).unwrap();
        assert!((combined.q - single.q).abs() < 1e-15);
        assert!((combined.sigma - single.sigma / 2f64.sqrt()).abs() < 1e-15);

        let c = combine_estimates(est(0.6, 0.02), est(0.5, 0.02));
        assert!((c.q - 0.55).abs() < 1e-15);
        assert!((c.sigma - 0.01414).abs() < 1e-5);

        assert!(matches!(
            combine_swapped_runs(&normal, &normal),
            Err(Error::RoleMismatch(_))
        ));
        assert_eq!(
            combine_swapped_runs(&normal, &CorrelationTally::new(true)),
            Err(Error::EmptyTally)
        );
    }

    #[test]
    fn reference_table_reproduces_published_signals() {
        let [one, two] = reference_bell_results().unwrap();
        assert!((one.b - 2.203).abs() < 5e-4, "{}", one.b);
        assert!((two.b - 2.218).abs() < 5e-4, "{}", two.b);
        assert!((one.sigma_b - 0.028).abs() < 1e-12);
        assert!((two.sigma_b - 0.028).abs() < 1e-12);
    }

    #[test]
    fn zero_correlations_give_zero_signal() {
        let quad = CorrelationQuad::from_fn(|_, _| est(0.0, 0.01));
        let r = bell_from_correlations(quad, BellAngles::canonical(), Qubit::Atom, 0).unwrap();
        assert_eq!(r.b, 0.0);
        assert!((r.sigma_b - 0.02).abs() < 1e-15);
    }

    #[test]
    fn table_order_matches_published_layout() {
        let plan = SettingsPlan::canonical(2);
        let mut rows = Vec::new();
        for exp in &plan.experiments {
            for (i, j) in exp.table_order() {
                let (s, p) = exp.atom_photon(i, j);
                rows.push((s.theta() / PI, p.theta() / PI));
            }
        }
        for (row, reference) in rows.iter().zip(REFERENCE_TABLE) {
            assert!((row.0 - reference.0).abs() < 1e-15 && (row.1 - reference.1).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_plan_is_rejected_before_sampling() {
        let plan = SettingsPlan::canonical(1);
        let err = run_experiment(
            &plan,
            &SourceParams::default(),
            &DetectorParams::default(),
            &RunOptions::default(),
            1,
        );
        assert!(matches!(err, Err(Error::InvalidParameter { .. })));
        let bad_source = SourceParams {
            collection_efficiency: 2.0,
            ..SourceParams::default()
        };
        let err = run_experiment(
            &SettingsPlan::canonical(10),
            &bad_source,
            &DetectorParams::default(),
            &RunOptions::default(),
            1,
        );
        assert!(err.is_err());
    }

    #[test]
    fn run_is_deterministic_and_consistent() {
        let plan = SettingsPlan::canonical(501);
        let opts = RunOptions {
            bootstrap_resamples: 50,
            ..RunOptions::default()
        };
        let a = run_experiment(
            &plan,
            &SourceParams::default(),
            &DetectorParams::ideal(),
            &opts,
            99,
        )
        .unwrap();
        let b = run_experiment(
            &plan,
            &SourceParams::default(),
            &DetectorParams::ideal(),
            &opts,
            99,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table.len(), 8);
        for row in &a.table {
            assert_eq!(row.events(), 501);
            assert_eq!(row.tallies[0].total(), 251);
            assert!(row.estimate.q.abs() <= 1.0);
            assert!(row.sigma_bootstrap.is_some());
        }
        for r in &a.experiments {
            assert!(r.b <= 4.0 && r.b >= 0.0);
            assert_eq!(r.events_used, 4 * 501);
        }
    }
}
