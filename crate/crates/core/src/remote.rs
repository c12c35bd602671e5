//! Loophole arithmetic and the remote ion–ion scheme: two atom–photon pairs, photons
//! sent to a midpoint partial Bell-state analyzer, ions projected onto a Bell state.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Error, Result};
use crate::quantum::{
    kron, BellAngles, DensityMatrix, MeasurementSetting, Operator4, Qubit, TwoQubitState, C64,
};
use crate::rng::stream;

/// Metres per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Metres between the atom and the photon analysis.
    pub atom_to_analysis_distance: f64,
    /// Seconds needed to read out the atom.
    pub atom_measurement_time: f64,
    /// Seconds needed to rotate the atom before readout.
    pub rotation_time: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            atom_to_analysis_distance: 1.1,
            atom_measurement_time: 125e-6,
            rotation_time: 0.0,
        }
    }
}

impl GeometryConfig {
    pub fn speed_of_light(&self) -> f64 {
        SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("atom_to_analysis_distance", self.atom_to_analysis_distance),
            ("atom_measurement_time", self.atom_measurement_time),
            ("rotation_time", self.rotation_time),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("{v} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityVerdict {
    pub required_separation: f64,
    pub separation: f64,
    pub closed: bool,
}

/// Space-like separation test: the measurement must finish before light crosses the
/// separation, `d ≥ c·(t_rotation + t_measurement)`.
pub fn locality_check(geom: &GeometryConfig) -> Result<LocalityVerdict> {
    geom.validate()?;
    let required = SPEED_OF_LIGHT * (geom.rotation_time + geom.atom_measurement_time);
    Ok(LocalityVerdict {
        required_separation: required,
        separation: geom.atom_to_analysis_distance,
        closed: geom.atom_to_analysis_distance >= required,
    })
}

/// Fiber run from each trap to an analyzer placed at the midpoint.
pub fn photon_midpoint_distance(separation: f64) -> Result<f64> {
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(invalid("separation", "must be non-negative"));
    }
    Ok(separation / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub stages: Vec<f64>,
    pub overall_efficiency: f64,
    pub threshold: Option<f64>,
    pub passes: Option<bool>,
}

/// Product of per-stage efficiencies, compared with an optional caller-supplied
/// threshold. No sufficiency threshold is built in.
pub fn detection_accounting(stages: &[f64], threshold: Option<f64>) -> Result<DetectionReport> {
    for &e in stages {
        check_probability("efficiency", e)?;
    }
    if let Some(t) = threshold {
        check_probability("threshold", t)?;
    }
    let overall: f64 = stages.iter().product();
    Ok(DetectionReport {
        stages: stages.to_vec(),
        overall_efficiency: overall,
        threshold,
        passes: threshold.map(|t| overall >= t),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    /// Metres.
    pub fiber_length: f64,
    /// dB per km.
    pub attenuation: f64,
    pub coupling_efficiency: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            fiber_length: 0.0,
            attenuation: 0.2,
            coupling_efficiency: 1.0,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.fiber_length.is_finite() && self.fiber_length >= 0.0) {
            return Err(invalid("fiber_length", "must be non-negative"));
        }
        if !(self.attenuation.is_finite() && self.attenuation >= 0.0) {
            return Err(invalid("attenuation", "must be non-negative"));
        }
        check_probability("coupling_efficiency", self.coupling_efficiency)
    }
}

/// `coupling · 10^(−α·L_km/10)`.
pub fn photon_survival(link: &LinkBudget) -> Result<f64> {
    link.validate()?;
    let loss_db = link.attenuation * link.fiber_length / 1000.0;
    Ok(link.coupling_efficiency * 10f64.powf(-loss_db / 10.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsaOutcome {
    PsiPlus,
    PsiMinus,
    Fail,
}

fn bell_vector(outcome: BsaOutcome) -> Option<[C64; 4]> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let z = C64::new(0.0, 0.0);
    match outcome {
        BsaOutcome::PsiPlus => Some([z, h, h, z]),
        BsaOutcome::PsiMinus => Some([z, h, -h, z]),
        BsaOutcome::Fail => None,
    }
}

/// Weights of ψ+, ψ− and the unresolved Φ± subspace for a two-photon state.
pub fn bell_basis_weights(photons: &DensityMatrix) -> [f64; 3] {
    let w = |o| {
        let v = nalgebra::Vector4::from(bell_vector(o).expect("psi outcome"));
        (v.adjoint() * photons.matrix() * v)[(0, 0)].re.max(0.0)
    };
    let plus = w(BsaOutcome::PsiPlus);
    let minus = w(BsaOutcome::PsiMinus);
    [plus, minus, (1.0 - plus - minus).max(0.0)]
}

/// Partial Bell-state analysis: heralds ψ+ or ψ−, blind to Φ±.
pub fn bell_state_analysis<R: Rng + ?Sized>(photons: &DensityMatrix, rng: &mut R) -> BsaOutcome {
    let [plus, minus, _] = bell_basis_weights(photons);
    let u: f64 = rng.random();
    if u < plus {
        BsaOutcome::PsiPlus
    } else if u < plus + minus {
        BsaOutcome::PsiMinus
    } else {
        BsaOutcome::Fail
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapResult {
    pub success: bool,
    pub bsa_outcome: BsaOutcome,
    pub ion_ion_state: Option<DensityMatrix>,
}

/// 16×16 state of two pairs, ordered (atom A, photon A, atom B, photon B).
pub fn joint_state(pair_a: &DensityMatrix, pair_b: &DensityMatrix) -> DMatrix<C64> {
    let a = pair_a.matrix();
    let b = pair_b.matrix();
    DMatrix::from_fn(16, 16, |r, c| a[(r / 4, c / 4)] * b[(r % 4, c % 4)])
}

fn joint_index(sa: usize, pa: usize, sb: usize, pb: usize) -> usize {
    8 * sa + 4 * pa + 2 * sb + pb
}

/// Unnormalized ion–ion state left by projecting the photons onto `outcome`.
fn project_photons(joint: &DMatrix<C64>, outcome: BsaOutcome) -> Option<Operator4> {
    let c = bell_vector(outcome)?;
    let mut out = Operator4::zeros();
    for sa in 0..2 {
        for sb in 0..2 {
            for ta in 0..2 {
                for tb in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for pa in 0..2 {
                        for pb in 0..2 {
                            let bra = c[2 * pa + pb].conj();
                            for qa in 0..2 {
                                for qb in 0..2 {
                                    acc += bra
                                        * c[2 * qa + qb]
                                        * joint[(
                                            joint_index(sa, pa, sb, pb),
                                            joint_index(ta, qa, tb, qb),
                                        )];
                                }
                            }
                        }
                    }
                    out[(2 * sa + sb, 2 * ta + tb)] = acc;
                }
            }
        }
    }
    Some(out)
}

/// Two-photon state reaching the analyzer.
pub fn photon_pair_state(pair_a: &DensityMatrix, pair_b: &DensityMatrix) -> Result<DensityMatrix> {
    let pa = pair_a.reduced(Qubit::Photon);
    let pb = pair_b.reduced(Qubit::Photon);
    DensityMatrix::from_positive(kron(pa.matrix(), pb.matrix()))
}

/// Herald probability and normalized ion–ion state for each successful outcome.
pub fn swap_branches(
    pair_a: &DensityMatrix,
    pair_b: &DensityMatrix,
) -> Vec<(BsaOutcome, f64, Option<DensityMatrix>)> {
    let joint = joint_state(pair_a, pair_b);
    [BsaOutcome::PsiPlus, BsaOutcome::PsiMinus]
        .into_iter()
        .map(|o| {
            let sigma = project_photons(&joint, o).expect("psi outcome");
            let p = sigma.trace().re.max(0.0);
            let state = if p > 0.0 {
                DensityMatrix::from_positive(sigma).ok()
            } else {
                None
            };
            (o, p, state)
        })
        .collect()
}

/// Entanglement swapping through the midpoint analyzer.
pub fn entanglement_swap<R: Rng + ?Sized>(
    pair_a: &DensityMatrix,
    pair_b: &DensityMatrix,
    rng: &mut R,
) -> Result<SwapResult> {
    let photons = photon_pair_state(pair_a, pair_b)?;
    let outcome = bell_state_analysis(&photons, rng);
    let fail = SwapResult {
        success: false,
        bsa_outcome: BsaOutcome::Fail,
        ion_ion_state: None,
    };
    if outcome == BsaOutcome::Fail {
        return Ok(fail);
    }
    let joint = joint_state(pair_a, pair_b);
    let sigma = project_photons(&joint, outcome).expect("psi outcome");
    if sigma.trace().re <= 0.0 {
        return Ok(fail);
    }
    Ok(SwapResult {
        success: true,
        bsa_outcome: outcome,
        ion_ion_state: Some(DensityMatrix::from_positive(sigma)?),
    })
}

/// Ion–ion Bell state heralded by `outcome` for ideal inputs.
pub fn heralded_ion_state(outcome: BsaOutcome) -> Option<TwoQubitState> {
    bell_vector(outcome).map(|c| TwoQubitState::new(c).expect("unit Bell vector"))
}

/// Role-B settings rewritten so that the heralded state shows the same correlations as
/// the ideal pair: ψ+ = (I⊗X)Φ+ maps (θ, φ) → (π − θ, −φ), ψ− = (I⊗XZ)Φ+ maps
/// (θ, φ) → (π − θ, π − φ).
pub fn adapted_angles(outcome: BsaOutcome, angles: &BellAngles) -> BellAngles {
    let adapt = |s: MeasurementSetting| {
        let phi = match outcome {
            BsaOutcome::PsiPlus => -s.phi(),
            BsaOutcome::PsiMinus => PI - s.phi(),
            BsaOutcome::Fail => return s,
        };
        MeasurementSetting::new(PI - s.theta(), phi).expect("finite angles")
    };
    BellAngles::new(angles.a1, angles.a2, adapt(angles.b1), adapt(angles.b2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapStats {
    pub trials: u64,
    pub successes: u64,
    pub psi_plus: u64,
    pub psi_minus: u64,
    pub success_rate: f64,
}

/// Monte Carlo batch of swaps; chunk k draws from stream k so results are independent
/// of the thread count.
pub fn swap_batch(
    pair_a: &DensityMatrix,
    pair_b: &DensityMatrix,
    trials: u64,
    seed: u64,
) -> Result<SwapStats> {
    const CHUNK: u64 = 10_000;
    let chunks = trials.div_ceil(CHUNK);
    let counts: Vec<[u64; 2]> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            let n = CHUNK.min(trials - k * CHUNK);
            let photons = photon_pair_state(pair_a, pair_b)?;
            let mut c = [0u64; 2];
            for _ in 0..n {
                match bell_state_analysis(&photons, &mut rng) {
                    BsaOutcome::PsiPlus => c[0] += 1,
                    BsaOutcome::PsiMinus => c[1] += 1,
                    BsaOutcome::Fail => {}
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let psi_plus: u64 = counts.iter().map(|c| c[0]).sum();
    let psi_minus: u64 = counts.iter().map(|c| c[1]).sum();
    let successes = psi_plus + psi_minus;
    Ok(SwapStats {
        trials,
        successes,
        psi_plus,
        psi_minus,
        success_rate: if trials > 0 {
            successes as f64 / trials as f64
        } else {
            0.0
        },
    })
}

/// Expected number of rounds until all `links` independent geometric(p) processes have
/// succeeded.
pub fn expected_max_geometric(links: u32, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(
            "per_attempt_success",
            format!("{p} must be in (0, 1]"),
        ));
    }
    if links == 0 {
        return Err(invalid("links", "need at least one link"));
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let log_q = (-p).ln_1p();
    // 1 − (1 − p)^j without cancellation for small p.
    let hit = |j: f64| -(j * log_q).exp_m1();
    if links <= 30 {
        let mut sum = 0.0;
        let mut binom = 1.0;
        for j in 1..=links {
            binom *= (links - j + 1) as f64 / j as f64;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * binom / hit(j as f64);
        }
        return Ok(sum);
    }
    // Tail sum Σ_k P(max > k) = Σ_k [1 − (1 − q^k)^L].
    let l = links as f64;
    let mut sum = 0.0;
    let mut k = 0u64;
    loop {
        let qk = (k as f64 * log_q).exp();
        let term = -(l * (-qk).ln_1p()).exp_m1();
        sum += term;
        if qk * l < 1e-17 || term < 1e-17 * sum {
            break;
        }
        k += 1;
        if k > 1_000_000_000 {
            return Err(Error::Stalled("tail sum did not converge".into()));
        }
    }
    Ok(sum)
}

/// Expected seconds until every link of a repeater chain holds entanglement. Links are
/// attempted in parallel at `attempt_rate`; each attempt succeeds with
/// `per_attempt_success × photon_survival(link)`. Swaps are taken as instantaneous.
pub fn chain_latency(
    nodes: u32,
    link: &LinkBudget,
    attempt_rate: f64,
    per_attempt_success: f64,
) -> Result<f64> {
    if nodes < 2 {
        return Err(invalid("nodes", "a chain needs at least two nodes"));
    }
    if !(attempt_rate.is_finite() && attempt_rate > 0.0) {
        return Err(invalid("attempt_rate", "must be positive"));
    }
    if !(per_attempt_success > 0.0 && per_attempt_success <= 1.0) {
        return Err(invalid("per_attempt_success", "must be in (0, 1]"));
    }
    let p = per_attempt_success * photon_survival(link)?;
    Ok(expected_max_geometric(nodes - 1, p)? / attempt_rate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCell {
    pub separation: f64,
    pub detection_time: f64,
    pub required_separation: f64,
    pub closed: bool,
}

/// Locality verdicts over a separation × detection-time grid.
pub fn feasibility_grid(
    separations: &[f64],
    detection_times: &[f64],
    rotation_time: f64,
) -> Result<Vec<FeasibilityCell>> {
    let mut cells = Vec::with_capacity(separations.len() * detection_times.len());
    for &d in separations {
        for &t in detection_times {
            let v = locality_check(&GeometryConfig {
                atom_to_analysis_distance: d,
                atom_measurement_time: t,
                rotation_time,
            })?;
            cells.push(FeasibilityCell {
                separation: d,
                detection_time: t,
                required_separation: v.required_separation,
                closed: v.closed,
            });
        }
    }
    Ok(cells)
}
