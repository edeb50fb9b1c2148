//! Exchange-only qubit physics.
//!
//! The logical qubit lives in the `S = 1/2, S_z = +1/2` subspace of three
//! spins. Within that subspace the Heisenberg Hamiltonian reduces to
//! `hz σz + hx σx` (up to an energy offset), which is what the training loop
//! propagates. The full eight-dimensional model is kept for leakage.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron_unchecked, pauli2_exp, ComplexMatrix, Mat2, C64};
use crate::noise::{apply_noise, ExchangeNoise};

/// Pair of nearest-neighbour exchange couplings in MHz.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangePair {
    pub j12: f64,
    pub j23: f64,
}

impl ExchangePair {
    pub const ZERO: ExchangePair = ExchangePair { j12: 0.0, j23: 0.0 };

    pub fn new(j12: f64, j23: f64) -> Self {
        Self { j12, j23 }
    }

    pub fn midpoint(&self, other: &ExchangePair) -> ExchangePair {
        ExchangePair { j12: 0.5 * (self.j12 + other.j12), j23: 0.5 * (self.j23 + other.j23) }
    }

    pub fn get(&self, channel: usize) -> f64 {
        match channel {
            0 => self.j12,
            _ => self.j23,
        }
    }
}

/// Exchange samples on a uniform collocation grid spanning `total_time`.
///
/// Sample `k` sits at `t_k = k·T/(N−1)`. Propagation runs over the `N−1`
/// intervals between neighbouring samples, holding the interval-averaged
/// couplings constant within each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    samples: Vec<ExchangePair>,
    total_time: f64,
}

impl PulseSchedule {
    pub fn new(samples: Vec<ExchangePair>, total_time: f64) -> Result<Self> {
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(Error::Domain(format!("pulse duration must be positive, got {total_time}")));
        }
        if samples.len() < 2 {
            return Err(Error::Domain(format!("need at least 2 collocation samples, got {}", samples.len())));
        }
        if samples.iter().any(|s| !s.j12.is_finite() || !s.j23.is_finite()) {
            return Err(Error::Numeric("non-finite exchange sample".into()));
        }
        Ok(Self { samples, total_time })
    }

    /// A flat pulse held for `total_time`.
    pub fn constant(j: ExchangePair, n_steps: usize, total_time: f64) -> Result<Self> {
        Self::new(vec![j; n_steps.max(2)], total_time)
    }

    pub fn n_steps(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ExchangePair] {
        &self.samples
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    /// Spacing between collocation points in ns.
    pub fn step_duration(&self) -> f64 {
        self.total_time / (self.samples.len() - 1) as f64
    }

    pub fn interval_couplings(&self) -> impl Iterator<Item = ExchangePair> + '_ {
        self.samples.windows(2).map(|w| w[0].midpoint(&w[1]))
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.step_duration();
        (0..self.samples.len()).map(|k| k as f64 * dt).collect()
    }
}

/// `(hz, hx)` of the logical two-level Hamiltonian, in MHz.
pub fn effective_hamiltonian(j: ExchangePair) -> (f64, f64) {
    (j.j23 / 4.0 - j.j12 / 2.0, 3f64.sqrt() * j.j23 / 4.0)
}

/// Partial derivatives of `(hz, hx)` with respect to `(j12, j23)`.
pub(crate) const HZ_DJ: [f64; 2] = [-0.5, 0.25];
pub(crate) const HX_DJ: [f64; 2] = [0.0, 0.433_012_701_892_219_3];

pub(crate) fn interval_propagators<'a>(p: &'a PulseSchedule, noise: &ExchangeNoise) -> impl Iterator<Item = Mat2> + 'a {
    let dt = p.step_duration();
    let noise = *noise;
    p.interval_couplings().map(move |j| {
        let (hz, hx) = effective_hamiltonian(apply_noise(j, &noise));
        pauli2_exp(hz, hx, dt)
    })
}

/// Ordered product of interval propagators, last interval leftmost.
pub fn sequence_propagator(p: &PulseSchedule, noise: &ExchangeNoise) -> Result<ComplexMatrix> {
    if !(p.total_time() > 0.0) {
        return Err(Error::Domain("pulse duration must be positive".into()));
    }
    Ok(effective_propagator(p, noise).to_matrix())
}

pub(crate) fn effective_propagator(p: &PulseSchedule, noise: &ExchangeNoise) -> Mat2 {
    interval_propagators(p, noise).fold(Mat2::IDENTITY, |acc, step| step.mul(&acc))
}

/// `U_A ⊗ U_B` for two independently driven logical qubits.
pub fn two_qubit_propagator(ua: &ComplexMatrix, ub: &ComplexMatrix) -> Result<ComplexMatrix> {
    for (name, u) in [("first", ua), ("second", ub)] {
        if u.dim() != 2 {
            return Err(Error::Dimension(format!("{name} factor must be 2x2, got {}x{}", u.dim(), u.dim())));
        }
        let defect = u.unitarity_defect();
        if !(defect < 1e-8) {
            return Err(Error::Contract(format!("{name} factor is not unitary (defect {defect:e})")));
        }
    }
    Ok(kron_unchecked(ua, ub))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Spin-1/2 operator `σ/2` acting on `site` (0, 1 or 2) of the three-spin register.
pub fn spin_operator(site: usize, axis: Axis) -> ComplexMatrix {
    let half = |m: ComplexMatrix| m.scale_real(0.5);
    let local = match axis {
        Axis::X => half(crate::linalg::pauli_x()),
        Axis::Y => half(crate::linalg::pauli_y()),
        Axis::Z => half(crate::linalg::pauli_z()),
    };
    let id = ComplexMatrix::identity(2);
    let factors: Vec<&ComplexMatrix> = (0..3).map(|s| if s == site { &local } else { &id }).collect();
    kron_unchecked(&kron_unchecked(factors[0], factors[1]), factors[2])
}

fn heisenberg(a: usize, b: usize) -> ComplexMatrix {
    [Axis::X, Axis::Y, Axis::Z]
        .iter()
        .map(|&ax| spin_operator(a, ax).matmul(&spin_operator(b, ax)))
        .fold(ComplexMatrix::zeros(8), |acc, m| &acc + &m)
}

/// `S1·S2` and `S2·S3` on the three-spin register.
pub fn exchange_operators() -> &'static [ComplexMatrix; 2] {
    static OPS: OnceLock<[ComplexMatrix; 2]> = OnceLock::new();
    OPS.get_or_init(|| [heisenberg(0, 1), heisenberg(1, 2)])
}

pub fn total_sz() -> ComplexMatrix {
    (0..3).map(|s| spin_operator(s, Axis::Z)).fold(ComplexMatrix::zeros(8), |acc, m| &acc + &m)
}

/// Total spin `S²` of the three-spin register.
pub fn total_spin_squared() -> ComplexMatrix {
    [Axis::X, Axis::Y, Axis::Z]
        .iter()
        .map(|&ax| {
            let s = (0..3).map(|site| spin_operator(site, ax)).fold(ComplexMatrix::zeros(8), |acc, m| &acc + &m);
            s.matmul(&s)
        })
        .fold(ComplexMatrix::zeros(8), |acc, m| &acc + &m)
}

/// `J12 S1·S2 + J23 S2·S3` in MHz.
pub fn three_spin_hamiltonian(j: ExchangePair) -> ComplexMatrix {
    let [k12, k23] = exchange_operators();
    &k12.scale_real(j.j12) + &k23.scale_real(j.j23)
}

/// A normalised state vector, either in the logical (2) or full three-spin (8) space.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalState {
    amplitudes: Vec<C64>,
}

impl LogicalState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if !matches!(amplitudes.len(), 2 | 8) {
            return Err(Error::Dimension(format!("state must have 2 or 8 amplitudes, got {}", amplitudes.len())));
        }
        let norm_sq: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-8 {
            return Err(Error::Contract(format!("state is not normalised (‖ψ‖² = {norm_sq})")));
        }
        Ok(Self { amplitudes })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn inner(&self, other: &LogicalState) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }
}

// Site 0 is the most significant bit; bit value 1 is spin down.
const UUD: usize = 0b001;
const UDU: usize = 0b010;
const DUU: usize = 0b100;

fn logical_vectors() -> &'static [[C64; 8]; 2] {
    static BASIS: OnceLock<[[C64; 8]; 2]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let r = |x: f64| C64::new(x, 0.0);
        let mut zero = [C64::new(0.0, 0.0); 8];
        zero[UDU] = r(1.0 / 2f64.sqrt());
        zero[DUU] = r(-1.0 / 2f64.sqrt());
        // sqrt(2/3)|T+>|down> - sqrt(1/3)|T0>|up>
        let mut one = [C64::new(0.0, 0.0); 8];
        one[UUD] = r((2.0 / 3.0f64).sqrt());
        one[UDU] = r(-(1.0 / 6.0f64).sqrt());
        one[DUU] = r(-(1.0 / 6.0f64).sqrt());
        [zero, one]
    })
}

/// `|0_L⟩` (singlet on spins 1–2, spin 3 up) and its `S = 1/2, S_z = +1/2` partner `|1_L⟩`.
pub fn logical_basis() -> (LogicalState, LogicalState) {
    let [zero, one] = logical_vectors();
    (LogicalState { amplitudes: zero.to_vec() }, LogicalState { amplitudes: one.to_vec() })
}

/// Embeds a logical-space state into the three-spin register.
pub(crate) fn embed_logical(c0: C64, c1: C64) -> [C64; 8] {
    let [zero, one] = logical_vectors();
    let mut out = [C64::new(0.0, 0.0); 8];
    for i in 0..8 {
        out[i] = c0 * zero[i] + c1 * one[i];
    }
    out
}

/// Component of `psi` orthogonal to the logical subspace.
pub(crate) fn leaked_component(psi: &[C64; 8]) -> [C64; 8] {
    let [zero, one] = logical_vectors();
    let overlap = |b: &[C64; 8]| -> C64 { b.iter().zip(psi).map(|(a, p)| a.conj() * p).sum() };
    let (a0, a1) = (overlap(zero), overlap(one));
    let mut out = *psi;
    for i in 0..8 {
        out[i] -= a0 * zero[i] + a1 * one[i];
    }
    out
}

/// Probability outside the logical subspace, `1 − |⟨0_L|ψ⟩|² − |⟨1_L|ψ⟩|²`.
pub fn leakage_probability(psi: &LogicalState) -> Result<f64> {
    let amps: [C64; 8] = psi
        .amplitudes()
        .try_into()
        .map_err(|_| Error::Dimension("leakage needs a three-spin (8-dim) state".into()))?;
    // the norm of the orthogonal component equals 1 − ‖Πψ‖² for normalised ψ
    Ok(leaked_component(&amps).iter().map(|z| z.norm_sqr()).sum())
}
