//! Bell-signal limits: fidelity-constrained extrema, local deterministic strategies and
//! the quantum ceiling.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Result};
use crate::quantum::{
    bell_pair_ideal, bell_signal, bell_signal_of, chsh_operator, fidelity, hermitize, BellAngles,
    DensityMatrix, Operator4, TwoQubitState, C64,
};
use crate::rng::stream;

/// Quantum maximum of the CHSH signal.
pub const TSIRELSON: f64 = 2.0 * SQRT_2;
/// Local hidden-variable maximum.
pub const LOCAL_BOUND: f64 = 2.0;

/// `(B_min, B_max) = (2√2(2F − 1), 2√2F)` for the signed CHSH operator at canonical
/// angles. The operator has spectrum {2√2, 0, 0, −2√2} with the ideal pair as its top
/// eigenvector, so only the weight on the bottom eigenvector can vary.
pub fn extremal_bell_closed_form(fidelity: f64) -> Result<(f64, f64)> {
    check_probability("fidelity", fidelity)?;
    Ok((TSIRELSON * (2.0 * fidelity - 1.0), TSIRELSON * fidelity))
}

/// `B = 2√2·p` for a Werner state at canonical angles.
pub fn werner_bell(p: f64) -> Result<f64> {
    check_probability("p", p)?;
    Ok(TSIRELSON * p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityConstraint {
    pub fidelity: f64,
    pub target: TwoQubitState,
    pub angles: BellAngles,
}

impl FidelityConstraint {
    /// Ideal pair at canonical angles.
    pub fn new(fidelity: f64) -> Result<Self> {
        check_probability("fidelity", fidelity)?;
        Ok(Self {
            fidelity,
            target: bell_pair_ideal(),
            angles: BellAngles::canonical(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub restarts: usize,
    /// Maximum coordinate sweeps per restart.
    pub iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            iterations: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalResult {
    /// Signed operator expectation, minimized.
    pub b_min: f64,
    /// Signed operator expectation, maximized.
    pub b_max: f64,
    pub witness_min: DensityMatrix,
    pub witness_max: DensityMatrix,
    /// Absolute-value Bell signal evaluated on each witness.
    pub abs_b_min_witness: f64,
    pub abs_b_max_witness: f64,
    /// The two best restarts agree within 1e-6 for both extrema.
    pub converged: bool,
    /// Fidelity below 1/2, where the signed minimum is negative.
    pub out_of_regime: bool,
}

const AGREEMENT_TOL: f64 = 1e-6;
const PARAMS: usize = 32;

/// Orthonormal basis (as columns) whose first vector is `target`.
fn completion_basis(target: &TwoQubitState) -> Matrix4<C64> {
    let mut cols: Vec<Vector4<C64>> = vec![*target.vector()];
    for k in 0..4 {
        let mut v = Vector4::<C64>::zeros();
        v[k] = C64::new(1.0, 0.0);
        for c in &cols {
            let overlap = c.dotc(&v);
            v -= c * overlap;
        }
        let n = v.norm();
        if n > 1e-6 && cols.len() < 4 {
            cols.push(v.unscale(n));
        }
    }
    Matrix4::from_columns(&cols)
}

/// Maps 32 free reals onto a density matrix with `⟨target|ρ|target⟩ = F` exactly:
/// in the completion basis ρ = MM†, with the first row of M scaled to norm √F and the
/// other three rows jointly scaled to norm √(1 − F).
struct Parameterization {
    fidelity: f64,
    basis: Matrix4<C64>,
    operator_in_basis: Operator4,
}

impl Parameterization {
    fn new(constraint: &FidelityConstraint) -> Self {
        let basis = completion_basis(&constraint.target);
        let op = chsh_operator(&constraint.angles);
        Self {
            fidelity: constraint.fidelity,
            operator_in_basis: basis.adjoint() * op * basis,
            basis,
        }
    }

    fn factor(&self, x: &[f64; PARAMS]) -> Matrix4<C64> {
        let mut m = Matrix4::from_fn(|r, c| C64::new(x[8 * r + 2 * c], x[8 * r + 2 * c + 1]));
        let head: f64 = (0..4).map(|c| m[(0, c)].norm_sqr()).sum::<f64>().sqrt();
        let tail: f64 = (1..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        let hs = if head > 0.0 {
            self.fidelity.sqrt() / head
        } else {
            0.0
        };
        let ts = if tail > 0.0 {
            (1.0 - self.fidelity).sqrt() / tail
        } else {
            0.0
        };
        for c in 0..4 {
            m[(0, c)] *= hs;
            for r in 1..4 {
                m[(r, c)] *= ts;
            }
        }
        m
    }

    fn objective(&self, x: &[f64; PARAMS]) -> f64 {
        let m = self.factor(x);
        ((m * m.adjoint()) * self.operator_in_basis).trace().re
    }

    fn density(&self, x: &[f64; PARAMS]) -> Result<DensityMatrix> {
        let m = self.factor(x);
        let rho = self.basis * (m * m.adjoint()) * self.basis.adjoint();
        DensityMatrix::from_positive(hermitize(&rho))
    }
}

/// Coordinate pattern search maximizing `sign · objective`.
fn refine(
    param: &Parameterization,
    mut x: [f64; PARAMS],
    sign: f64,
    iterations: usize,
) -> ([f64; PARAMS], f64) {
    let mut best = sign * param.objective(&x);
    let mut step = 0.5;
    for _ in 0..iterations {
        let mut improved = false;
        for k in 0..PARAMS {
            for delta in [step, -step] {
                let old = x[k];
                x[k] = old + delta;
                let v = sign * param.objective(&x);
                if v > best {
                    best = v;
                    improved = true;
                    break;
                }
                x[k] = old;
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    (x, sign * best)
}

struct Extremum {
    value: f64,
    witness: [f64; PARAMS],
    converged: bool,
}

fn extremize(
    param: &Parameterization,
    sign: f64,
    options: &OptimizerOptions,
    seed: u64,
    stream_base: u64,
) -> Extremum {
    let runs: Vec<([f64; PARAMS], f64)> = (0..options.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, stream_base + r as u64);
            let x0: [f64; PARAMS] = std::array::from_fn(|_| rng.sample(StandardNormal));
            refine(param, x0, sign, options.iterations)
        })
        .collect();
    // Deterministic reduction: best value, ties to the lowest restart index.
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        (sign * runs[b].1)
            .total_cmp(&(sign * runs[a].1))
            .then(a.cmp(&b))
    });
    let best = order[0];
    let converged = order
        .get(1)
        .is_some_and(|&second| (runs[best].1 - runs[second].1).abs() < AGREEMENT_TOL);
    Extremum {
        value: runs[best].1,
        witness: runs[best].0,
        converged,
    }
}

/// Numerically extremize `Tr(ρ·Ô)` over density matrices at fixed fidelity.
pub fn extremal_bell_numeric(
    constraint: &FidelityConstraint,
    options: &OptimizerOptions,
    seed: u64,
) -> Result<ExtremalResult> {
    check_probability("fidelity", constraint.fidelity)?;
    if options.restarts == 0 {
        return Err(invalid("restarts", "need at least one restart"));
    }
    let param = Parameterization::new(constraint);
    let hi = extremize(&param, 1.0, options, seed, 0);
    let lo = extremize(&param, -1.0, options, seed, options.restarts as u64);
    let witness_max = param.density(&hi.witness)?;
    let witness_min = param.density(&lo.witness)?;
    Ok(ExtremalResult {
        b_min: lo.value,
        b_max: hi.value,
        abs_b_min_witness: bell_signal_of(&witness_min, &constraint.angles),
        abs_b_max_witness: bell_signal_of(&witness_max, &constraint.angles),
        witness_min,
        witness_max,
        converged: hi.converged && lo.converged,
        out_of_regime: constraint.fidelity < 0.5,
    })
}

/// Deterministic ±1 outcome assignment for the four settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LhvStrategy {
    pub a1: i8,
    pub a2: i8,
    pub b1: i8,
    pub b2: i8,
}

impl LhvStrategy {
    /// All 16 strategies, bit k of the index selecting −1 for (a1, a2, b1, b2)[k].
    pub fn all() -> [LhvStrategy; 16] {
        std::array::from_fn(|idx| {
            let s = |bit: usize| if idx >> bit & 1 == 1 { -1 } else { 1 };
            LhvStrategy {
                a1: s(0),
                a2: s(1),
                b1: s(2),
                b2: s(3),
            }
        })
    }

    /// `[q11, q12, q21, q22]` with `qij = ai·bj`.
    pub fn correlations(&self) -> [f64; 4] {
        let (a1, a2, b1, b2) = (
            self.a1 as f64,
            self.a2 as f64,
            self.b1 as f64,
            self.b2 as f64,
        );
        [a1 * b1, a1 * b2, a2 * b1, a2 * b2]
    }

    pub fn bell_signal(&self) -> f64 {
        let [q11, q12, q21, q22] = self.correlations();
        bell_signal(q22, q12, q21, q11).expect("±1 correlations")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LhvRow {
    pub strategy: LhvStrategy,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LhvEnumeration {
    pub max_b: f64,
    pub argmax: Vec<LhvStrategy>,
    pub table: Vec<LhvRow>,
}

/// Exhaustive enumeration of deterministic local strategies. Deterministic outcomes do
/// not depend on the angles; every stochastic local model is a mixture of these, so the
/// maximum bounds them all.
pub fn lhv_enumerate(_angles: &BellAngles) -> LhvEnumeration {
    let table: Vec<LhvRow> = LhvStrategy::all()
        .into_iter()
        .map(|strategy| LhvRow {
            strategy,
            b: strategy.bell_signal(),
        })
        .collect();
    let max_b = table.iter().map(|r| r.b).fold(f64::NEG_INFINITY, f64::max);
    let argmax = table
        .iter()
        .filter(|r| r.b == max_b)
        .map(|r| r.strategy)
        .collect();
    LhvEnumeration {
        max_b,
        argmax,
        table,
    }
}

/// Bell signal of a weighted mixture of deterministic strategies.
pub fn lhv_mixture_bell(weights: &[f64; 16]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(invalid("weights", "must be a probability vector"));
    }
    let mut q = [0.0; 4];
    for (w, s) in weights.iter().zip(LhvStrategy::all()) {
        for (acc, c) in q.iter_mut().zip(s.correlations()) {
            *acc += w * c;
        }
    }
    bell_signal(q[3], q[1], q[2], q[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub resolution: usize,
    pub max_b: f64,
    pub argmax: BellAngles,
}

fn grid(resolution: usize) -> Result<Vec<f64>> {
    if resolution < 8 {
        return Err(invalid(
            "grid_resolution",
            format!("{resolution} < 8 points per angle"),
        ));
    }
    Ok((0..resolution)
        .map(|k| k as f64 * PI / resolution as f64)
        .collect())
}

/// Grid search of the ideal-pair Bell signal with `q = cos(θA − θB)` over θ = kπ/n.
/// Multiples of π/4 lie on the grid whenever n is divisible by 4.
pub fn tsirelson_scan(resolution: usize) -> Result<ScanResult> {
    let th = grid(resolution)?;
    let n = th.len();
    let cos: Vec<f64> = (0..n * n).map(|k| (th[k / n] - th[k % n]).cos()).collect();
    let q = |a: usize, b: usize| cos[a * n + b];
    let mut best = (f64::NEG_INFINITY, [0usize; 4]);
    for a1 in 0..n {
        for a2 in 0..n {
            for b1 in 0..n {
                let right = (q(a2, b1) + q(a1, b1)).abs();
                for b2 in 0..n {
                    let v = (q(a2, b2) - q(a1, b2)).abs() + right;
                    if v > best.0 {
                        best = (v, [a1, a2, b1, b2]);
                    }
                }
            }
        }
    }
    let [a1, a2, b1, b2] = best.1;
    Ok(ScanResult {
        resolution,
        max_b: best.0,
        argmax: BellAngles::polar(th[a1], th[a2], th[b1], th[b2])?,
    })
}

/// Best (θB1, θB2) on the grid for fixed role-A angles, with the signal reached.
pub fn scan_b_angles(a1: f64, a2: f64, resolution: usize) -> Result<(f64, f64, f64)> {
    let th = grid(resolution)?;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &b1 in &th {
        for &b2 in &th {
            let v = bell_signal(
                (a2 - b2).cos(),
                (a1 - b2).cos(),
                (a2 - b1).cos(),
                (a1 - b1).cos(),
            )?;
            if v > best.0 {
                best = (v, b1, b2);
            }
        }
    }
    Ok((best.1, best.2, best.0))
}

/// Fidelity of a witness with respect to the constraint target.
pub fn witness_fidelity(constraint: &FidelityConstraint, witness: &DensityMatrix) -> f64 {
    fidelity(witness, &constraint.target)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let (lo, hi) = extremal_bell_closed_form(0.87).unwrap();
        assert!((lo - 2.0930).abs() < 5e-5, "{lo}");
        assert!((hi - 2.4607).abs() < 5e-5, "{hi}");
        assert_eq!(format!("{lo:.2}/{hi:.2}"), "2.09/2.46");
        let (lo, hi) = extremal_bell_closed_form(1.0).unwrap();
        assert!((lo - TSIRELSON).abs() < 1e-15 && (hi - TSIRELSON).abs() < 1e-15);
        let (lo, hi) = extremal_bell_closed_form(0.75).unwrap();
        assert!((lo - 1.41421).abs() < 1e-5 && (hi - 2.12132).abs() < 1e-5);
        assert!(extremal_bell_closed_form(1.2).is_err());
    }

    #[test]
    fn numeric_pins_pure_state_at_unit_fidelity() {
        let c = FidelityConstraint::new(1.0).unwrap();
        let r = extremal_bell_numeric(
            &c,
            &OptimizerOptions {
                restarts: 4,
                iterations: 200,
            },
            1,
        )
        .unwrap();
        assert!((r.b_min - TSIRELSON).abs() < 1e-6);
        assert!((r.b_max - TSIRELSON).abs() < 1e-6);
        assert!(!r.out_of_regime);
    }

    #[test]
    fn numeric_flags_low_fidelity() {
        let c = FidelityConstraint::new(0.3).unwrap();
        let r = extremal_bell_numeric(
            &c,
            &OptimizerOptions {
                restarts: 4,
                iterations: 2000,
            },
            1,
        )
        .unwrap();
        assert!(r.out_of_regime);
        assert!(r.b_min < 0.0);
        let (lo, hi) = extremal_bell_closed_form(0.3).unwrap();
        assert!((r.b_min - lo).abs() < 1e-3 && (r.b_max - hi).abs() < 1e-3);
    }

    #[test]
    fn lhv_examples() {
        let e = lhv_enumerate(&BellAngles::canonical());
        assert_eq!(e.max_b, 2.0);
        assert_eq!(e.table.len(), 16);
        let all_plus = LhvStrategy {
            a1: 1,
            a2: 1,
            b1: 1,
            b2: 1,
        };
        assert_eq!(all_plus.bell_signal(), 2.0);
        assert_eq!(lhv_mixture_bell(&[1.0 / 16.0; 16]).unwrap(), 0.0);
        // Every deterministic strategy sits at exactly 2 (one bracket is 0, the other 2).
        assert!(e.table.iter().all(|r| r.b == 2.0));
    }

    #[test]
    fn scan_examples() {
        let coarse = tsirelson_scan(8).unwrap();
        assert!(coarse.max_b <= TSIRELSON + 1e-9);
        assert!(tsirelson_scan(7).is_err());
        let (b1, b2, v) = scan_b_angles(0.0, PI / 2.0, 64).unwrap();
        assert!((b1 - PI / 4.0).abs() < 1e-12 && (b2 - 3.0 * PI / 4.0).abs() < 1e-12);
        assert!((v - TSIRELSON).abs() < 1e-12);
    }

    #[test]
    fn werner_bell_examples() {
        assert!((werner_bell(1.0).unwrap() - 2.82843).abs() < 1e-5);
        assert!((werner_bell(0.82667).unwrap() - 2.0 * SQRT_2 * 0.82667).abs() < 1e-15);
        assert!((werner_bell(0.70711).unwrap() - 2.0).abs() < 1e-4);
        assert!(werner_bell(1.01).is_err());
    }
}
