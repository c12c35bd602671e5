//! Exact two-qubit algebra for the atom (S) ⊗ photon (P) pair.
//!
//! Amplitudes and matrix indices follow the order |0S0P⟩, |0S1P⟩, |1S0P⟩, |1S1P⟩.
//!
//! A measurement setting (θ, φ) is realised as the rotation
//!
//! ```text
//! U(θ, φ) = | cos θ/2            −e^{−iφ} sin θ/2 |
//!           | e^{iφ} sin θ/2      cos θ/2         |
//! ```
//!
//! followed by a computational-basis readout, which is the same as measuring
//! `O(θ, φ) = U†σzU = cos θ σz − sin θ (cos φ σx + sin φ σy)`. With this convention the
//! ideal pair has `q(θA, θB) = cos(θA − θB)` at zero azimuth and a single pulse on
//! (|0⟩ + |1⟩)/√2 leaves `P(|0⟩) = (1 − cos φ sin θ)/2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI, TAU};

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Error, Result};

pub type C64 = Complex64;
pub type Operator2 = Matrix2<C64>;
pub type Operator4 = Matrix4<C64>;

/// Pure-state normalization tolerance.
pub const NORM_TOL: f64 = 1e-12;
/// Entry-wise Hermiticity tolerance for density matrices.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as positive semidefinite (rotation round-off).
pub const EIGEN_FLOOR: f64 = -1e-10;
/// Slack allowed on |q| before a correlation is rejected.
pub const CORRELATION_SLACK: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub fn sigma_x() -> Operator2 {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Operator2 {
    Matrix2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Operator2 {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

/// Kronecker product of two single-qubit operators (first argument acts on the atom).
pub fn kron(a: &Operator2, b: &Operator2) -> Operator4 {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qubit {
    /// The trapped-ion qubit, first tensor factor.
    Atom,
    /// The photon polarization qubit, second tensor factor.
    Photon,
}

impl Qubit {
    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Qubit::Atom),
            1 => Ok(Qubit::Photon),
            other => Err(Error::InvalidQubit(other)),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Qubit::Atom => 0,
            Qubit::Photon => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Qubit::Atom => Qubit::Photon,
            Qubit::Photon => Qubit::Atom,
        }
    }

    /// Embed a single-qubit operator acting on this qubit into the two-qubit space.
    pub fn embed(self, op: &Operator2) -> Operator4 {
        match self {
            Qubit::Atom => kron(op, &Operator2::identity()),
            Qubit::Photon => kron(&Operator2::identity(), op),
        }
    }
}

/// Bloch-sphere analysis direction. `theta` is kept in [0, π] and `phi` in [0, 2π);
/// out-of-range input is folded onto the same physical direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSetting")]
pub struct MeasurementSetting {
    theta: f64,
    phi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetting {
    theta: f64,
    #[serde(default)]
    phi: f64,
}

impl TryFrom<RawSetting> for MeasurementSetting {
    type Error = Error;

    fn try_from(raw: RawSetting) -> Result<Self> {
        MeasurementSetting::new(raw.theta, raw.phi)
    }
}

impl MeasurementSetting {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(invalid("theta", format!("{theta} is not finite")));
        }
        if !phi.is_finite() {
            return Err(invalid("phi", format!("{phi} is not finite")));
        }
        let mut theta = theta.rem_euclid(TAU);
        let mut phi = phi;
        if theta > PI {
            theta = TAU - theta;
            phi += PI;
        }
        let mut phi = phi.rem_euclid(TAU);
        if phi >= TAU {
            phi = 0.0;
        }
        Ok(Self { theta, phi })
    }

    /// Setting with zero azimuth.
    pub fn polar(theta: f64) -> Result<Self> {
        Self::new(theta, 0.0)
    }

    /// Angles given in units of π (0.25 means π/4).
    pub fn from_pi_units(theta: f64, phi: f64) -> Result<Self> {
        Self::new(theta * PI, phi * PI)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unitary(&self) -> Operator2 {
        rotation_unitary(self.theta, self.phi)
    }

    /// `cos θ σz − sin θ (cos φ σx + sin φ σy)`.
    pub fn observable(&self) -> Operator2 {
        let (s, c) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        sigma_z().scale(c) - (sigma_x().scale(cp) + sigma_y().scale(sp)).scale(s)
    }
}

/// The qubit rotation used by both the waveplate and the microwave pulses.
pub fn rotation_unitary(theta: f64, phi: f64) -> Operator2 {
    let (s, c) = (theta / 2.0).sin_cos();
    let e = C64::from_polar(1.0, phi);
    Matrix2::new(C64::from(c), -e.conj() * s, e * s, C64::from(c))
}

/// The four settings of a CHSH measurement. Index 1/2 follow the A1, A2, B1, B2 labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellAngles {
    pub a1: MeasurementSetting,
    pub a2: MeasurementSetting,
    pub b1: MeasurementSetting,
    pub b2: MeasurementSetting,
}

impl BellAngles {
    pub fn new(
        a1: MeasurementSetting,
        a2: MeasurementSetting,
        b1: MeasurementSetting,
        b2: MeasurementSetting,
    ) -> Self {
        Self { a1, a2, b1, b2 }
    }

    /// Zero-azimuth settings from four polar angles in radians.
    pub fn polar(a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        Ok(Self {
            a1: MeasurementSetting::polar(a1)?,
            a2: MeasurementSetting::polar(a2)?,
            b1: MeasurementSetting::polar(b1)?,
            b2: MeasurementSetting::polar(b2)?,
        })
    }

    /// (0, π/2; π/4, 3π/4).
    pub fn canonical() -> Self {
        Self::polar(0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4).expect("finite angles")
    }

    pub fn a(&self, i: usize) -> MeasurementSetting {
        if i == 1 {
            self.a1
        } else {
            self.a2
        }
    }

    pub fn b(&self, j: usize) -> MeasurementSetting {
        if j == 1 {
            self.b1
        } else {
            self.b2
        }
    }
}

/// Fractions of events per joint outcome, first index atom/role A, second photon/role B.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFractions {
    pub f00: f64,
    pub f01: f64,
    pub f10: f64,
    pub f11: f64,
}

impl OutcomeFractions {
    pub fn as_array(&self) -> [f64; 4] {
        [self.f00, self.f01, self.f10, self.f11]
    }

    pub fn correlation(&self) -> f64 {
        self.f00 + self.f11 - self.f10 - self.f01
    }
}

/// Pure state of the atom–photon pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState {
    amplitudes: Vector4<C64>,
}

impl TwoQubitState {
    pub fn new(amplitudes: [C64; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let norm2 = v.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm2));
        }
        Ok(Self { amplitudes: v })
    }

    /// Normalizes a nonzero vector.
    pub fn normalized(amplitudes: [C64; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotNormalized(n * n));
        }
        Ok(Self {
            amplitudes: v.unscale(n),
        })
    }

    /// Product of two single-qubit pure states.
    pub fn product(atom: [C64; 2], photon: [C64; 2]) -> Result<Self> {
        Self::normalized([
            atom[0] * photon[0],
            atom[0] * photon[1],
            atom[1] * photon[0],
            atom[1] * photon[1],
        ])
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        [
            self.amplitudes[0],
            self.amplitudes[1],
            self.amplitudes[2],
            self.amplitudes[3],
        ]
    }

    pub fn vector(&self) -> &Vector4<C64> {
        &self.amplitudes
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }

    pub fn apply_local(&self, qubit: Qubit, op: &Operator2) -> Self {
        Self {
            amplitudes: qubit.embed(op) * self.amplitudes,
        }
    }

    pub fn rotate(&self, qubit: Qubit, setting: &MeasurementSetting) -> Self {
        self.apply_local(qubit, &setting.unitary())
    }
}

/// (|0S0P⟩ + |1S1P⟩)/√2.
pub fn bell_pair_ideal() -> TwoQubitState {
    let h = C64::from(FRAC_1_SQRT_2);
    TwoQubitState {
        amplitudes: Vector4::new(h, ZERO, ZERO, h),
    }
}

/// Mixed state of the pair. Construction validates Hermiticity, unit trace and
/// positivity; every operation in this crate maps valid matrices to valid matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: Operator4,
}

impl DensityMatrix {
    pub fn new(entries: Operator4) -> Result<Self> {
        validate_density(&entries)?;
        Ok(Self { entries })
    }

    /// Normalizes a Hermitian positive operator to unit trace.
    pub fn from_positive(op: Operator4) -> Result<Self> {
        let tr = op.trace().re;
        if !(tr.is_finite() && tr > 0.0) {
            return Err(Error::NonPhysical(format!(
                "trace {tr} cannot be normalized"
            )));
        }
        Self::new(hermitize(&op.unscale(tr)))
    }

    pub(crate) fn from_entries_unchecked(entries: Operator4) -> Self {
        Self { entries }
    }

    pub fn from_pure(psi: &TwoQubitState) -> Self {
        let v = psi.vector();
        Self {
            entries: v * v.adjoint(),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            entries: Operator4::identity().scale(0.25),
        }
    }

    pub fn matrix(&self) -> &Operator4 {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigenvalues(&self.entries)
    }

    pub fn purity(&self) -> f64 {
        (self.entries * self.entries).trace().re
    }

    pub fn apply_local(&self, qubit: Qubit, op: &Operator2) -> Self {
        let u = qubit.embed(op);
        Self {
            entries: hermitize(&(u * self.entries * u.adjoint())),
        }
    }

    pub fn rotate(&self, qubit: Qubit, setting: &MeasurementSetting) -> Self {
        self.apply_local(qubit, &setting.unitary())
    }

    /// `λ·self + (1 − λ)·other`.
    pub fn mix(&self, lambda: f64, other: &DensityMatrix) -> Result<Self> {
        check_probability("lambda", lambda)?;
        Ok(Self {
            entries: self.entries.scale(lambda) + other.entries.scale(1.0 - lambda),
        })
    }

    /// Reduced state of one qubit.
    pub fn reduced(&self, keep: Qubit) -> QubitDensity {
        let m = &self.entries;
        let r = match keep {
            Qubit::Atom => Matrix2::from_fn(|i, j| m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)]),
            Qubit::Photon => Matrix2::from_fn(|k, l| m[(k, l)] + m[(2 + k, 2 + l)]),
        };
        QubitDensity { entries: r }
    }

    /// Probability of the photon reading `outcome` in the computational basis together
    /// with the normalized conditional atom state (`None` when the branch is empty).
    pub fn condition_on_photon(&self, outcome: usize) -> (f64, Option<QubitDensity>) {
        let k = outcome & 1;
        let m = &self.entries;
        let block = Matrix2::from_fn(|i, j| m[(2 * i + k, 2 * j + k)]);
        let p = block.trace().re.max(0.0);
        if p <= 0.0 {
            return (0.0, None);
        }
        (
            p,
            Some(QubitDensity {
                entries: block.unscale(p),
            }),
        )
    }

    /// Diagonal in the computational basis, clamped at zero.
    pub fn populations(&self) -> OutcomeFractions {
        let d = |k: usize| self.entries[(k, k)].re.max(0.0);
        OutcomeFractions {
            f00: d(0),
            f01: d(1),
            f10: d(2),
            f11: d(3),
        }
    }

    /// `Tr(ρ·O)` for a Hermitian operator.
    pub fn expectation(&self, op: &Operator4) -> f64 {
        (self.entries * op).trace().re
    }
}

/// Single-qubit mixed state, used for the atom after the photon has been detected.
#[derive(Clone, Debug, PartialEq)]
pub struct QubitDensity {
    entries: Operator2,
}

impl QubitDensity {
    pub fn new(entries: Operator2) -> Result<Self> {
        let herm = (entries - entries.adjoint()).camax();
        if herm > HERMITIAN_TOL {
            return Err(Error::NonPhysical(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = entries.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::NonPhysical(format!("trace {tr}")));
        }
        let q = Self { entries };
        let [lo, _] = q.eigenvalues();
        if lo < EIGEN_FLOOR {
            return Err(Error::NonPhysical(format!("negative eigenvalue {lo:e}")));
        }
        Ok(q)
    }

    pub fn from_pure(a0: C64, a1: C64) -> Result<Self> {
        let n = (a0.norm_sqr() + a1.norm_sqr()).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotNormalized(n * n));
        }
        let v = nalgebra::Vector2::new(a0 / n, a1 / n);
        Ok(Self {
            entries: v * v.adjoint(),
        })
    }

    pub fn basis(k: usize) -> Self {
        let mut m = Operator2::zeros();
        m[(k & 1, k & 1)] = ONE;
        Self { entries: m }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            entries: Operator2::identity().scale(0.5),
        }
    }

    pub fn matrix(&self) -> &Operator2 {
        &self.entries
    }

    pub fn apply(&self, op: &Operator2) -> Self {
        let m = op * self.entries * op.adjoint();
        Self {
            entries: (m + m.adjoint()).scale(0.5),
        }
    }

    pub fn rotate(&self, setting: &MeasurementSetting) -> Self {
        self.apply(&setting.unitary())
    }

    /// Population of |0⟩.
    pub fn prob_zero(&self) -> f64 {
        self.entries[(0, 0)].re.clamp(0.0, 1.0)
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.entries[(0, 0)].re;
        let d = self.entries[(1, 1)].re;
        let b = self.entries[(0, 1)].norm();
        let mean = 0.5 * (a + d);
        let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mean - half_gap, mean + half_gap]
    }

    /// Von Neumann entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .filter(|&&l| l > 1e-300)
            .map(|&l| -l * l.ln())
            .sum()
    }
}

/// Implemented by both pure and mixed two-qubit states.
pub trait Rotate: Sized {
    fn rotate_qubit(&self, qubit: Qubit, setting: &MeasurementSetting) -> Self;
}

impl Rotate for TwoQubitState {
    fn rotate_qubit(&self, qubit: Qubit, setting: &MeasurementSetting) -> Self {
        self.rotate(qubit, setting)
    }
}

impl Rotate for DensityMatrix {
    fn rotate_qubit(&self, qubit: Qubit, setting: &MeasurementSetting) -> Self {
        self.rotate(qubit, setting)
    }
}

/// Apply the analysis rotation of `setting` to one qubit.
pub fn rotate<S: Rotate>(state: &S, qubit: Qubit, setting: &MeasurementSetting) -> S {
    state.rotate_qubit(qubit, setting)
}

/// Index-based variant of [`rotate`] for callers holding raw qubit indices.
pub fn rotate_index<S: Rotate>(state: &S, qubit: usize, setting: &MeasurementSetting) -> Result<S> {
    Ok(state.rotate_qubit(Qubit::from_index(qubit)?, setting))
}

/// Joint outcome fractions after rotating the atom by `setting_a` and the photon by
/// `setting_b`.
pub fn outcome_probabilities(
    rho: &DensityMatrix,
    setting_a: &MeasurementSetting,
    setting_b: &MeasurementSetting,
) -> OutcomeFractions {
    let w = kron(&setting_a.unitary(), &setting_b.unitary());
    let rotated = w * rho.matrix() * w.adjoint();
    DensityMatrix::from_entries_unchecked(rotated).populations()
}

/// `q = f00 + f11 − f10 − f01`.
pub fn correlation(
    rho: &DensityMatrix,
    setting_a: &MeasurementSetting,
    setting_b: &MeasurementSetting,
) -> f64 {
    outcome_probabilities(rho, setting_a, setting_b)
        .correlation()
        .clamp(-1.0, 1.0)
}

/// CHSH Bell signal `|q22 − q12| + |q21 + q11|`, where `qij = q(Ai, Bj)`.
pub fn bell_signal(q22: f64, q12: f64, q21: f64, q11: f64) -> Result<f64> {
    for q in [q22, q12, q21, q11] {
        if !q.is_finite() || q.abs() > 1.0 + CORRELATION_SLACK {
            return Err(Error::CorrelationOutOfRange(q));
        }
    }
    Ok((q22 - q12).abs() + (q21 + q11).abs())
}

/// The absolute-value-free combination `q22 − q12 + q21 + q11`.
pub fn signed_chsh(q22: f64, q12: f64, q21: f64, q11: f64) -> f64 {
    q22 - q12 + q21 + q11
}

/// The four correlations `[q11, q12, q21, q22]` of `rho` at `angles`, role A on the atom.
pub fn correlations(rho: &DensityMatrix, angles: &BellAngles) -> [f64; 4] {
    [
        correlation(rho, &angles.a1, &angles.b1),
        correlation(rho, &angles.a1, &angles.b2),
        correlation(rho, &angles.a2, &angles.b1),
        correlation(rho, &angles.a2, &angles.b2),
    ]
}

/// Bell signal of `rho` with role A on the atom.
pub fn bell_signal_of(rho: &DensityMatrix, angles: &BellAngles) -> f64 {
    let [q11, q12, q21, q22] = correlations(rho, angles);
    bell_signal(q22, q12, q21, q11).expect("correlations are clamped to [-1, 1]")
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, psi: &TwoQubitState) -> f64 {
    let v = psi.vector();
    (v.adjoint() * rho.matrix() * v)[(0, 0)].re
}

/// `p·|Ψ⟩⟨Ψ| + (1 − p)·I/4` around the ideal pair.
pub fn werner(p: f64) -> Result<DensityMatrix> {
    check_probability("p", p)?;
    let pure = DensityMatrix::from_pure(&bell_pair_ideal());
    pure.mix(p, &DensityMatrix::maximally_mixed())
}

/// Operator whose expectation is the signed CHSH combination
/// `q22 − q12 + q21 + q11`: `O(a2)⊗(O(b2) + O(b1)) + O(a1)⊗(O(b1) − O(b2))`.
pub fn chsh_operator(angles: &BellAngles) -> Operator4 {
    let a1 = angles.a1.observable();
    let a2 = angles.a2.observable();
    let b1 = angles.b1.observable();
    let b2 = angles.b2.observable();
    kron(&a2, &(b2 + b1)) + kron(&a1, &(b1 - b2))
}

/// Ascending eigenvalues of a Hermitian 4×4 operator.
pub fn hermitian_eigenvalues(op: &Operator4) -> [f64; 4] {
    let mut ev: Vec<f64> = hermitize(op)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    [ev[0], ev[1], ev[2], ev[3]]
}

pub(crate) fn hermitize(op: &Operator4) -> Operator4 {
    (op + op.adjoint()).scale(0.5)
}

fn validate_density(m: &Operator4) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonPhysical("non-finite entry".into()));
    }
    let herm = (m - m.adjoint()).camax();
    if herm > HERMITIAN_TOL {
        return Err(Error::NonPhysical(format!(
            "not Hermitian (deviation {herm:e})"
        )));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::NonPhysical(format!("trace {tr}")));
    }
    let lo = hermitian_eigenvalues(m)[0];
    if lo < EIGEN_FLOOR {
        return Err(Error::NonPhysical(format!("negative eigenvalue {lo:e}")));
    }
    Ok(())
}

/// Random pure state with Haar-distributed amplitudes.
pub fn random_pure<R: Rng + ?Sized>(rng: &mut R) -> TwoQubitState {
    let mut draw = || C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    TwoQubitState::normalized([draw(), draw(), draw(), draw()]).expect("gaussian vector is nonzero")
}

/// Random density matrix `GG†/Tr` from a 4×k complex Ginibre matrix with a random rank k.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let rank = rng.random_range(1..=4usize);
    let g = nalgebra::DMatrix::<C64>::from_fn(4, rank, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let gg = &g * g.adjoint();
    let op = Operator4::from_fn(|r, c| gg[(r, c)]);
    DensityMatrix::from_positive(op).expect("Ginibre products are positive")
}
