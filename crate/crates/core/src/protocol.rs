//! Stochastic model of one experimental trial.
//!
//! An attempt excites the atom; with a small probability a photon is collected and
//! detected, heralding an atom–photon pair. The photon passes the half-wave plate and
//! the polarizing beam splitter and clicks one of two PMTs. The atom then receives the
//! microwave pulse sequence and is read out by state-dependent fluorescence.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Error, Result};
use crate::quantum::{
    bell_pair_ideal, rotation_unitary, werner, DensityMatrix, MeasurementSetting, Operator2, Qubit,
    QubitDensity, C64,
};

/// Consecutive PMT rejections tolerated before a run is declared stalled.
const MAX_CONSECUTIVE_REJECTIONS: u64 = 10_000_000;

/// State emitted on a successful excitation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceState {
    Ideal,
    Werner { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    pub excitation_probability: f64,
    pub collection_efficiency: f64,
    pub detector_quantum_efficiency: f64,
    /// Seconds.
    pub excitation_window: f64,
    /// Attempts per second.
    pub repetition_rate: f64,
    pub state: SourceState,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            excitation_probability: 0.10,
            collection_efficiency: 0.01,
            detector_quantum_efficiency: 0.20,
            excitation_window: 50e-9,
            repetition_rate: 8.3e3,
            state: SourceState::Ideal,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("excitation_probability", self.excitation_probability)?;
        check_probability("collection_efficiency", self.collection_efficiency)?;
        check_probability(
            "detector_quantum_efficiency",
            self.detector_quantum_efficiency,
        )?;
        if !(self.excitation_window.is_finite() && self.excitation_window > 0.0) {
            return Err(invalid("excitation_window", "must be positive"));
        }
        if !(self.repetition_rate.is_finite() && self.repetition_rate > 0.0) {
            return Err(invalid("repetition_rate", "must be positive"));
        }
        if let SourceState::Werner { p } = self.state {
            check_probability("state.p", p)?;
        }
        Ok(())
    }

    /// Heralded-pair probability per attempt.
    pub fn success_probability(&self) -> f64 {
        self.excitation_probability * self.collection_efficiency * self.detector_quantum_efficiency
    }

    /// Expected heralded pairs in `seconds` of running.
    pub fn expected_events(&self, seconds: f64) -> f64 {
        seconds * self.repetition_rate * self.success_probability()
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        match self.state {
            SourceState::Ideal => Ok(bell_pair_ideal().density()),
            SourceState::Werner { p } => werner(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// One rotation pulse referenced to the absolute microwave phase.
    SinglePulse,
    /// π transfer pulse followed by the rotation pulse; only the phase difference matters.
    TwoPulse,
}

/// Microwave pulses applied to the atom after the photon click.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSequence {
    pub mode: PulseMode,
    pub transfer_phase: f64,
    pub rotation_theta: f64,
    pub rotation_phase: f64,
    /// Hz; sets how fast the atomic coherence runs against the microwave reference.
    pub microwave_frequency: f64,
}

impl Default for PulseSequence {
    fn default() -> Self {
        Self {
            mode: PulseMode::TwoPulse,
            transfer_phase: 0.0,
            rotation_theta: 0.0,
            rotation_phase: 0.0,
            microwave_frequency: 14.5e9,
        }
    }
}

impl PulseSequence {
    /// Area of the transfer pulse in two-pulse mode.
    pub const TRANSFER_AREA: f64 = PI;

    pub fn two_pulse(rotation_theta: f64, rotation_phase: f64, transfer_phase: f64) -> Self {
        Self {
            mode: PulseMode::TwoPulse,
            transfer_phase,
            rotation_theta,
            rotation_phase,
            ..Self::default()
        }
    }

    pub fn single_pulse(rotation_theta: f64, rotation_phase: f64) -> Self {
        Self {
            mode: PulseMode::SinglePulse,
            rotation_theta,
            rotation_phase,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("transfer_phase", self.transfer_phase),
            ("rotation_theta", self.rotation_theta),
            ("rotation_phase", self.rotation_phase),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.microwave_frequency.is_finite() && self.microwave_frequency >= 0.0) {
            return Err(invalid("microwave_frequency", "must be non-negative"));
        }
        Ok(())
    }

    /// The analysis setting the sequence realises on the atomic qubit
    /// (exact in two-pulse mode, nominal in single-pulse mode).
    pub fn atom_setting(&self) -> Result<MeasurementSetting> {
        match self.mode {
            PulseMode::TwoPulse => MeasurementSetting::new(
                self.rotation_theta,
                self.rotation_phase - self.transfer_phase,
            ),
            PulseMode::SinglePulse => {
                MeasurementSetting::new(self.rotation_theta, self.rotation_phase)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Relative efficiency of the PMT that receives photon outcome 0 in the normal role.
    pub pmt_efficiency_1: f64,
    pub pmt_efficiency_2: f64,
    /// Probability a bright atom is recorded dark.
    pub atom_bright_error: f64,
    /// Probability a dark atom is recorded bright.
    pub atom_dark_error: f64,
    /// Seconds of fluorescence detection.
    pub atom_detection_duration: f64,
    /// Extra half-wave-plate rotation (radians) used to swap the PMT roles.
    pub waveplate_angle: f64,
    /// Per-attempt probability of a false click with no emission.
    pub dark_count_probability: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            pmt_efficiency_1: 1.0,
            pmt_efficiency_2: 1.0,
            atom_bright_error: 0.025,
            atom_dark_error: 0.025,
            atom_detection_duration: 125e-6,
            waveplate_angle: FRAC_PI_4,
            dark_count_probability: 0.0,
        }
    }
}

impl DetectorParams {
    /// Defaults with perfect atomic state discrimination.
    pub fn ideal() -> Self {
        Self {
            atom_bright_error: 0.0,
            atom_dark_error: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("pmt_efficiency_1", self.pmt_efficiency_1)?;
        check_probability("pmt_efficiency_2", self.pmt_efficiency_2)?;
        check_probability("atom_bright_error", self.atom_bright_error)?;
        check_probability("atom_dark_error", self.atom_dark_error)?;
        check_probability("dark_count_probability", self.dark_count_probability)?;
        if !(self.atom_detection_duration.is_finite() && self.atom_detection_duration >= 0.0) {
            return Err(invalid("atom_detection_duration", "must be non-negative"));
        }
        if !self.waveplate_angle.is_finite() {
            return Err(invalid("waveplate_angle", "must be finite"));
        }
        Ok(())
    }

    fn pmt_efficiency(&self, pmt: usize) -> f64 {
        if pmt == 0 {
            self.pmt_efficiency_1
        } else {
            self.pmt_efficiency_2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomOutcome {
    /// Fluorescing, read as |0⟩S.
    Bright,
    /// No fluorescence, read as |1̃⟩S.
    Dark,
}

impl AtomOutcome {
    pub fn index(self) -> usize {
        match self {
            AtomOutcome::Bright => 0,
            AtomOutcome::Dark => 1,
        }
    }
}

/// One heralded trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub attempt_index: u64,
    /// Seconds after the start of the excitation window.
    pub arrival_time: f64,
    pub setting_s: MeasurementSetting,
    pub setting_p: MeasurementSetting,
    /// Index of the PMT that clicked (0 or 1).
    pub photon_outcome: u8,
    pub atom_outcome: AtomOutcome,
    pub pmt_role_swapped: bool,
}

impl EventRecord {
    /// Photon qubit outcome with the PMT role swap undone.
    pub fn logical_photon_outcome(&self) -> usize {
        (self.photon_outcome as usize) ^ (self.pmt_role_swapped as usize)
    }
}

/// Per-setting configuration of a trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSettings {
    pub pulse: PulseSequence,
    pub photon: MeasurementSetting,
    pub pmt_role_swapped: bool,
}

/// Photon click plus the atom state it leaves behind.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonDetection {
    pub pmt: u8,
    pub atom: QubitDensity,
}

/// One excitation attempt: the emitted pair state and its arrival time on success.
pub fn attempt_entanglement<R: Rng + ?Sized>(
    params: &SourceParams,
    rng: &mut R,
) -> Option<(DensityMatrix, f64)> {
    if !rng.random_bool(params.success_probability()) {
        return None;
    }
    let arrival = rng.random::<f64>() * params.excitation_window;
    let rho = params.density().ok()?;
    Some((rho, arrival))
}

/// `P(|0⟩S) = (1 − cos φS sin θS)/2` for a single pulse on (|0⟩S + |1̃⟩S)/√2.
pub fn single_pulse_probability(theta: f64, phi: f64) -> f64 {
    (1.0 - phi.cos() * theta.sin()) / 2.0
}

/// `P(|0⟩S) = (1 − cos(φS − φ̃S) sin θS)/2` for the transfer + rotation sequence.
pub fn two_pulse_probability(theta: f64, phi: f64, transfer_phase: f64) -> f64 {
    (1.0 - (phi - transfer_phase).cos() * theta.sin()) / 2.0
}

fn phase_gate(phase: f64) -> Operator2 {
    Matrix2::new(
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, phase),
    )
}

/// Apply the microwave pulses to the atom.
///
/// The microwave phase seen by the atom advances by `2π f t` with the random photon
/// arrival time `t`. In two-pulse mode the transfer maps |1⟩S → e^{iφ̃}|1̃⟩S and the
/// returned state is expressed relative to the transfer-pulse phase, so a common offset
/// of both phases leaves it unchanged.
pub fn apply_pulse_sequence(
    atom: &QubitDensity,
    seq: &PulseSequence,
    arrival_time: f64,
) -> QubitDensity {
    let offset = (TAU * seq.microwave_frequency * arrival_time).rem_euclid(TAU);
    match seq.mode {
        PulseMode::SinglePulse => atom.apply(&rotation_unitary(
            seq.rotation_theta,
            seq.rotation_phase + offset,
        )),
        PulseMode::TwoPulse => {
            let reference = seq.transfer_phase + offset;
            let transfer = phase_gate(reference);
            let rotation = rotation_unitary(seq.rotation_theta, seq.rotation_phase + offset);
            let frame = phase_gate(-reference);
            atom.apply(&(frame * rotation * transfer))
        }
    }
}

/// Sample which PMT clicks for a state whose photon has already passed the wave plate.
/// Returns `None` when the click is lost to PMT inefficiency.
pub fn measure_photon<R: Rng + ?Sized>(
    state: &DensityMatrix,
    det: &DetectorParams,
    rng: &mut R,
) -> Option<PhotonDetection> {
    let (p0, atom0) = state.condition_on_photon(0);
    let pmt = if rng.random::<f64>() < p0 { 0 } else { 1 };
    if !rng.random_bool(det.pmt_efficiency(pmt)) {
        return None;
    }
    let atom = if pmt == 0 {
        atom0
    } else {
        state.condition_on_photon(1).1
    }?;
    Some(PhotonDetection {
        pmt: pmt as u8,
        atom,
    })
}

/// Fluorescence readout with bright/dark misclassification.
pub fn measure_atom<R: Rng + ?Sized>(
    atom: &QubitDensity,
    det: &DetectorParams,
    rng: &mut R,
) -> AtomOutcome {
    let bright = rng.random::<f64>() < atom.prob_zero();
    let flip = if bright {
        rng.random_bool(det.atom_bright_error)
    } else {
        rng.random_bool(det.atom_dark_error)
    };
    if bright != flip {
        AtomOutcome::Bright
    } else {
        AtomOutcome::Dark
    }
}

/// Wave plate unitary for the photon, including the role-swap rotation when requested.
pub fn photon_unitary(
    setting: &MeasurementSetting,
    det: &DetectorParams,
    swapped: bool,
) -> Operator2 {
    let u = setting.unitary();
    if swapped {
        // A half-wave plate turned by α rotates the polarization Bloch vector by 4α.
        rotation_unitary(4.0 * det.waveplate_angle, setting.phi()) * u
    } else {
        u
    }
}

fn detect_rotated<R: Rng + ?Sized>(
    rotated: &DensityMatrix,
    arrival_time: f64,
    trial: &TrialSettings,
    det: &DetectorParams,
    attempt_index: u64,
    rng: &mut R,
) -> Result<Option<EventRecord>> {
    let Some(click) = measure_photon(rotated, det, rng) else {
        return Ok(None);
    };
    let atom = apply_pulse_sequence(&click.atom, &trial.pulse, arrival_time);
    let atom_outcome = measure_atom(&atom, det, rng);
    Ok(Some(EventRecord {
        attempt_index,
        arrival_time,
        setting_s: MeasurementSetting::new(trial.pulse.rotation_theta, trial.pulse.rotation_phase)?,
        setting_p: trial.photon,
        photon_outcome: click.pmt,
        atom_outcome,
        pmt_role_swapped: trial.pmt_role_swapped,
    }))
}

fn dark_count_event<R: Rng + ?Sized>(
    source: &SourceParams,
    trial: &TrialSettings,
    det: &DetectorParams,
    attempt_index: u64,
    rng: &mut R,
) -> Result<EventRecord> {
    let arrival_time = rng.random::<f64>() * source.excitation_window;
    let pmt = u8::from(rng.random_bool(0.5));
    let atom = apply_pulse_sequence(&QubitDensity::basis(0), &trial.pulse, arrival_time);
    Ok(EventRecord {
        attempt_index,
        arrival_time,
        setting_s: MeasurementSetting::new(trial.pulse.rotation_theta, trial.pulse.rotation_phase)?,
        setting_p: trial.photon,
        photon_outcome: pmt,
        atom_outcome: measure_atom(&atom, det, rng),
        pmt_role_swapped: trial.pmt_role_swapped,
    })
}

/// One full attempt: excitation, photon detection, microwave pulses, atom readout.
pub fn run_trial<R: Rng + ?Sized>(
    source: &SourceParams,
    trial: &TrialSettings,
    det: &DetectorParams,
    attempt_index: u64,
    rng: &mut R,
) -> Result<Option<EventRecord>> {
    match attempt_entanglement(source, rng) {
        Some((rho, arrival)) => {
            let u = photon_unitary(&trial.photon, det, trial.pmt_role_swapped);
            let rotated = rho.apply_local(Qubit::Photon, &u);
            detect_rotated(&rotated, arrival, trial, det, attempt_index, rng)
        }
        None if det.dark_count_probability > 0.0 && rng.random_bool(det.dark_count_probability) => {
            dark_count_event(source, trial, det, attempt_index, rng).map(Some)
        }
        None => Ok(None),
    }
}

/// A configured apparatus that jumps straight to the next heralded event.
///
/// Failed attempts are skipped with a geometric draw, which has the same per-attempt
/// law as calling [`run_trial`] repeatedly but costs O(1) per event.
#[derive(Clone, Debug)]
pub struct Apparatus {
    source: SourceParams,
    detector: DetectorParams,
    trial: TrialSettings,
    rotated: DensityMatrix,
    emission_share: f64,
    gap: Geometric,
    next_attempt: u64,
}

impl Apparatus {
    pub fn new(
        source: SourceParams,
        detector: DetectorParams,
        trial: TrialSettings,
    ) -> Result<Self> {
        source.validate()?;
        detector.validate()?;
        trial.pulse.validate()?;
        let p_emit = source.success_probability();
        let p_dark = (1.0 - p_emit) * detector.dark_count_probability;
        let p_event = p_emit + p_dark;
        if p_event <= 0.0 {
            return Err(invalid("source", "per-attempt event probability is zero"));
        }
        if p_emit > 0.0
            && detector.pmt_efficiency_1 == 0.0
            && detector.pmt_efficiency_2 == 0.0
            && p_dark == 0.0
        {
            return Err(invalid("detector", "both PMT efficiencies are zero"));
        }
        let u = photon_unitary(&trial.photon, &detector, trial.pmt_role_swapped);
        let rotated = source.density()?.apply_local(Qubit::Photon, &u);
        let gap = Geometric::new(p_event).map_err(|e| invalid("source", e.to_string()))?;
        Ok(Self {
            emission_share: p_emit / p_event,
            source,
            detector,
            trial,
            rotated,
            gap,
            next_attempt: 0,
        })
    }

    /// Attempts consumed so far.
    pub fn attempts(&self) -> u64 {
        self.next_attempt
    }

    pub fn next_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<EventRecord> {
        let mut rejected = 0u64;
        loop {
            let attempt = self.next_attempt + self.gap.sample(rng);
            self.next_attempt = attempt + 1;
            let event = if rng.random::<f64>() < self.emission_share {
                let arrival = rng.random::<f64>() * self.source.excitation_window;
                detect_rotated(
                    &self.rotated,
                    arrival,
                    &self.trial,
                    &self.detector,
                    attempt,
                    rng,
                )?
            } else {
                Some(dark_count_event(
                    &self.source,
                    &self.trial,
                    &self.detector,
                    attempt,
                    rng,
                )?)
            };
            if let Some(ev) = event {
                return Ok(ev);
            }
            rejected += 1;
            if rejected >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Stalled(format!(
                    "{rejected} consecutive photon clicks lost to PMT inefficiency"
                )));
            }
        }
    }

    pub fn take_events<R: Rng + ?Sized>(
        &mut self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<EventRecord>> {
        (0..n).map(|_| self.next_event(rng)).collect()
    }

    /// Events heralded within the next `attempts` attempts.
    pub fn count_events<R: Rng + ?Sized>(&mut self, attempts: u64, rng: &mut R) -> Result<u64> {
        let end = self.next_attempt + attempts;
        let mut n = 0;
        loop {
            let ev = self.next_event(rng)?;
            if ev.attempt_index >= end {
                self.next_attempt = end;
                return Ok(n);
            }
            n += 1;
        }
    }
}
