//! Loss terms and their gradients with respect to the pulse samples.
//!
//! Gradients of unitaries follow the convention `Ū = ∂ℓ/∂Re U + i·∂ℓ/∂Im U`,
//! so a perturbation `dU` changes the loss by `Re tr(Ū† dU)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{active_cx, CxSequence, GateSpec};
use crate::linalg::{expm_frechet, kron_unchecked, pauli2_exp_grad, ComplexMatrix, Mat2, C64, PHASE_PER_MHZ_NS};
use crate::model::{effective_hamiltonian, embed_logical, exchange_operators, leaked_component, ExchangePair, PulseSchedule, HX_DJ, HZ_DJ};
use crate::noise::{apply_noise, noise_factor, ExchangeNoise, NoiseRealisation};
use crate::parallel::par_map;

/// A loss value and its gradient with respect to each collocation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub grad: Vec<ExchangePair>,
}

impl TermValue {
    pub fn zero(n: usize) -> Self {
        Self { value: 0.0, grad: vec![ExchangePair::ZERO; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.j12.is_finite() && g.j23.is_finite())
    }

    fn accumulate(&mut self, other: &TermValue, weight: f64) {
        self.value += weight * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            a.j12 += weight * b.j12;
            a.j23 += weight * b.j23;
        }
    }

    /// Sequential mean, so the result does not depend on how terms were produced.
    fn mean(terms: &[TermValue], n: usize) -> TermValue {
        let mut acc = TermValue::zero(n);
        let w = 1.0 / terms.len().max(1) as f64;
        for t in terms {
            acc.accumulate(t, w);
        }
        acc
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Error of one propagator and its adjoint `Ū`.
fn probability_error_grad(ideal: &[Vec<f64>], u: &ComplexMatrix) -> (f64, ComplexMatrix) {
    let d = u.dim();
    let mut bar = ComplexMatrix::zeros(d);
    let mut err = 0.0;
    for (b, col) in ideal.iter().enumerate() {
        for s in 0..d {
            let diff = u[(s, b)].norm_sqr() - col[s];
            err += diff * diff;
            bar[(s, b)] = u[(s, b)] * (4.0 * diff / d as f64);
        }
    }
    (err / d as f64, bar)
}

/// Gradient of `Re tr(Ū† U_total)` for a noisy 1Q schedule, plus `U_total`.
struct SingleQubitPass {
    steps: Vec<(Mat2, Mat2, Mat2)>,
    prefixes: Vec<Mat2>,
    total: Mat2,
}

impl SingleQubitPass {
    fn new(p: &PulseSchedule, noise: &ExchangeNoise) -> Self {
        let dt = p.step_duration();
        let steps: Vec<_> = p
            .interval_couplings()
            .map(|j| {
                let (hz, hx) = effective_hamiltonian(apply_noise(j, noise));
                pauli2_exp_grad(hz, hx, dt)
            })
            .collect();
        let mut prefixes = Vec::with_capacity(steps.len());
        let mut acc = Mat2::IDENTITY;
        for (e, _, _) in &steps {
            prefixes.push(acc);
            acc = e.mul(&acc);
        }
        Self { steps, prefixes, total: acc }
    }

    /// Pushes `Ū` back onto the collocation samples.
    fn backprop(&self, bar: &Mat2, noise: &ExchangeNoise, grad: &mut [ExchangePair]) {
        let f = [noise_factor(noise.delta12), noise_factor(noise.delta23)];
        let mut g = *bar;
        for k in (0..self.steps.len()).rev() {
            let (e, dz, dx) = &self.steps[k];
            let e_bar = g.mul(&self.prefixes[k].adjoint());
            let (gz, gx) = (e_bar.real_inner(dz), e_bar.real_inner(dx));
            let d12 = (gz * HZ_DJ[0] + gx * HX_DJ[0]) * f[0] * 0.5;
            let d23 = (gz * HZ_DJ[1] + gx * HX_DJ[1]) * f[1] * 0.5;
            for idx in [k, k + 1] {
                grad[idx].j12 += d12;
                grad[idx].j23 += d23;
            }
            g = e.adjoint().mul(&g);
        }
    }
}

fn mat2_bar(m: &ComplexMatrix) -> Mat2 {
    Mat2::from_matrix(m).expect("2x2")
}

/// Splits the adjoint of `A ⊗ B` into adjoints for `A` and `B`.
fn kron_adjoints(bar: &ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) -> (Mat2, Mat2) {
    let mut abar = Mat2::ZERO;
    let mut bbar = Mat2::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let u = bar[(2 * i + k, 2 * j + l)];
                    abar.0[2 * i + j] += u * b[(k, l)].conj();
                    bbar.0[2 * k + l] += u * a[(i, j)].conj();
                }
            }
        }
    }
    (abar, bbar)
}

/// Trapezoid weights so that `Σ w_k J_k` is the pulse area in MHz·ns.
fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * dt } else { dt }).collect()
}

/// Exchange areas of the two channels, in MHz·ns.
pub fn pulse_areas(p: &PulseSchedule) -> [f64; 2] {
    let w = trapezoid_weights(p.n_steps(), p.step_duration());
    let mut a = [0.0; 2];
    for (j, wk) in p.samples().iter().zip(&w) {
        a[0] += wk * j.j12;
        a[1] += wk * j.j23;
    }
    a
}

/// Error and sample gradient of one realisation.
fn realisation_error(gate: &GateSpec, cx: Option<&CxSequence>, p: &PulseSchedule, noise: &NoiseRealisation) -> Result<(f64, Vec<ExchangePair>)> {
    let n = p.n_steps();
    let mut grad = vec![ExchangePair::ZERO; n];
    let ideal = gate.ideal_probabilities();
    let err = match (noise, gate.qubit_count) {
        (NoiseRealisation::Single(nz), 1) => {
            let pass = SingleQubitPass::new(p, nz);
            let (err, bar) = probability_error_grad(ideal, &pass.total.to_matrix());
            pass.backprop(&mat2_bar(&bar), nz, &mut grad);
            err
        }
        (NoiseRealisation::Pair(na, nb), 2) if cx.is_none() => {
            let (pa, pb) = (SingleQubitPass::new(p, na), SingleQubitPass::new(p, nb));
            let (ua, ub) = (pa.total.to_matrix(), pb.total.to_matrix());
            let (err, bar) = probability_error_grad(ideal, &kron_unchecked(&ua, &ub));
            let (abar, bbar) = kron_adjoints(&bar, &ua, &ub);
            pa.backprop(&abar, na, &mut grad);
            pb.backprop(&bbar, nb, &mut grad);
            err
        }
        (NoiseRealisation::Swap(deltas), 2) => {
            let seq = cx.ok_or_else(|| Error::Contract("√SWAP noise given for a non-CX gate".into()))?;
            let areas = pulse_areas(p);
            let f = [noise_factor(deltas[0]), noise_factor(deltas[1])];
            let phases = [PHASE_PER_MHZ_NS * areas[0] * f[0], PHASE_PER_MHZ_NS * areas[1] * f[1]];
            let (u, du) = seq.unitary_with_phase_grads(phases);
            let (err, bar) = probability_error_grad(ideal, &u);
            let dphi = [bar.real_inner(&du[0]), bar.real_inner(&du[1])];
            for (k, wk) in trapezoid_weights(n, p.step_duration()).into_iter().enumerate() {
                grad[k].j12 += dphi[0] * PHASE_PER_MHZ_NS * f[0] * wk;
                grad[k].j23 += dphi[1] * PHASE_PER_MHZ_NS * f[1] * wk;
            }
            err
        }
        _ => return Err(Error::Contract(format!("noise realisation {noise:?} does not match gate {}", gate.name))),
    };
    Ok((err, grad))
}

/// Ensemble MSE with its gradient and the per-realisation errors.
pub fn ensemble_mse_detailed(gate: &GateSpec, schedule: &PulseSchedule, ensemble: &[NoiseRealisation]) -> Result<(TermValue, Vec<f64>)> {
    if ensemble.is_empty() {
        return Err(Error::Domain("empty noise ensemble".into()));
    }
    let cx = match gate.name {
        crate::gates::GateName::Cx => Some(active_cx()?),
        _ => None,
    };
    let parts = par_map(ensemble.len(), |i| realisation_error(gate, cx, schedule, &ensemble[i])).into_iter().collect::<Result<Vec<_>>>()?;
    let n = schedule.n_steps();
    let scale = 1.0 / parts.len() as f64;
    let mut acc = TermValue::zero(n);
    let mut errors = Vec::with_capacity(parts.len());
    for (err, grad) in &parts {
        acc.accumulate(&TermValue { value: *err, grad: grad.clone() }, scale);
        errors.push(*err);
    }
    Ok((acc, errors))
}

/// Mean squared probability error over basis inputs and noise realisations.
pub fn ensemble_mse(gate: &GateSpec, schedule: &PulseSchedule, ensemble: &[NoiseRealisation]) -> Result<TermValue> {
    ensemble_mse_detailed(gate, schedule, ensemble).map(|(t, _)| t)
}

/// Mean squared midpoint residual of the Schrödinger equation over the grid.
///
/// The residual at interval `k` is right-multiplied by the unitary `U(t_k)`,
/// which leaves its Frobenius norm unchanged, so only the local step enters.
pub fn pde_residual(schedule: &PulseSchedule) -> TermValue {
    let n = schedule.n_steps();
    let dt = schedule.step_duration();
    let w = PHASE_PER_MHZ_NS;
    let mut out = TermValue::zero(n);
    let inv = 1.0 / (n - 1) as f64;
    let sz = Mat2([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
    let sx = Mat2([c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    let iw = c(0.0, w);
    for (k, j) in schedule.interval_couplings().enumerate() {
        let (hz, hx) = effective_hamiltonian(j);
        let (e, dz, dx) = pauli2_exp_grad(hz, hx, dt);
        let h = sz.scale(c(hz, 0.0)).add(&sx.scale(c(hx, 0.0)));
        let e_plus = e.add(&Mat2::IDENTITY);
        let m = e.sub(&Mat2::IDENTITY).scale(c(1.0 / dt, 0.0)).add(&h.mul(&e_plus).scale(iw * 0.5));
        let r2: f64 = m.0.iter().map(|z| z.norm_sqr()).sum();
        out.value += r2 * inv;
        let dm = |de: &Mat2, dh: &Mat2| de.scale(c(1.0 / dt, 0.0)).add(&dh.mul(&e_plus).scale(iw * 0.5)).add(&h.mul(de).scale(iw * 0.5));
        let gz = 2.0 * m.real_inner(&dm(&dz, &sz)) * inv;
        let gx = 2.0 * m.real_inner(&dm(&dx, &sx)) * inv;
        let d12 = 0.5 * (gz * HZ_DJ[0] + gx * HX_DJ[0]);
        let d23 = 0.5 * (gz * HZ_DJ[1] + gx * HX_DJ[1]);
        for idx in [k, k + 1] {
            out.grad[idx].j12 += d12;
            out.grad[idx].j23 += d23;
        }
    }
    out
}

/// Three-spin leakage of both logical inputs for one noise draw, averaged over
/// basis inputs and collocation points. `ops` are the generators multiplying
/// J12 and J23.
fn leakage_single(ops: &[ComplexMatrix; 2], p: &PulseSchedule, noise: &ExchangeNoise) -> Result<TermValue> {
    let n = p.n_steps();
    let dt = p.step_duration();
    let f = [noise_factor(noise.delta12), noise_factor(noise.delta23)];
    let gens: [ComplexMatrix; 2] = [ops[0].scale(c(0.0, -PHASE_PER_MHZ_NS * dt)), ops[1].scale(c(0.0, -PHASE_PER_MHZ_NS * dt))];
    let mut steps = Vec::with_capacity(n - 1);
    for j in p.interval_couplings() {
        let jn = apply_noise(j, noise);
        let a = &gens[0].scale_real(jn.j12) + &gens[1].scale_real(jn.j23);
        let e = crate::linalg::expm_general(&a)?;
        steps.push((a, e));
    }
    let inputs = [embed_logical(c(1.0, 0.0), c(0.0, 0.0)), embed_logical(c(0.0, 0.0), c(1.0, 0.0))];
    let weight = 1.0 / (2 * n) as f64;
    let mut states: Vec<Vec<[C64; 8]>> = Vec::with_capacity(2);
    let mut value = 0.0;
    for psi0 in inputs {
        let mut traj = Vec::with_capacity(n);
        traj.push(psi0);
        for (_, e) in &steps {
            let next: [C64; 8] = e.mul_vec(traj.last().expect("start")).try_into().expect("8-dim");
            traj.push(next);
        }
        value += traj.iter().map(|psi| leaked_component(psi).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>() * weight;
        states.push(traj);
    }
    let mut grad = vec![ExchangePair::ZERO; n];
    // adjoint of each trajectory point: 2·w·(I − Π)ψ
    let seed = |psi: &[C64; 8]| leaked_component(psi).map(|z| z * (2.0 * weight));
    let mut g: Vec<[C64; 8]> = states.iter().map(|t| seed(&t[n - 1])).collect();
    for k in (0..n - 1).rev() {
        let (a, e) = &steps[k];
        let mut e_bar = ComplexMatrix::zeros(8);
        for (gb, traj) in g.iter().zip(&states) {
            for r in 0..8 {
                for col in 0..8 {
                    e_bar[(r, col)] += gb[r] * traj[k][col].conj();
                }
            }
        }
        let w = expm_frechet(&a.adjoint(), &e_bar)?;
        let gc = [w.real_inner(&gens[0]), w.real_inner(&gens[1])];
        let d12 = gc[0] * f[0] * 0.5;
        let d23 = gc[1] * f[1] * 0.5;
        for idx in [k, k + 1] {
            grad[idx].j12 += d12;
            grad[idx].j23 += d23;
        }
        let e_adj = e.adjoint();
        for (gb, traj) in g.iter_mut().zip(&states) {
            let back = e_adj.mul_vec(gb);
            let local = seed(&traj[k]);
            for i in 0..8 {
                gb[i] = back[i] + local[i];
            }
        }
    }
    Ok(TermValue { value, grad })
}

/// How many leading ensemble members the leakage term uses; 0 means all.
fn leakage_members(ensemble: &[NoiseRealisation], subsample: usize) -> &[NoiseRealisation] {
    match subsample {
        0 => ensemble,
        m => &ensemble[..m.min(ensemble.len())],
    }
}

fn leakage_with_ops(ops: &[ComplexMatrix; 2], gate: &GateSpec, schedule: &PulseSchedule, ensemble: &[NoiseRealisation], subsample: usize) -> Result<TermValue> {
    let n = schedule.n_steps();
    let members = leakage_members(ensemble, subsample);
    if gate.name == crate::gates::GateName::Cx || members.is_empty() {
        return Ok(TermValue::zero(n));
    }
    let terms = par_map(members.len(), |i| -> Result<Vec<TermValue>> {
        match &members[i] {
            NoiseRealisation::Single(a) => Ok(vec![leakage_single(ops, schedule, a)?]),
            NoiseRealisation::Pair(a, b) => Ok(vec![leakage_single(ops, schedule, a)?, leakage_single(ops, schedule, b)?]),
            other => Err(Error::Contract(format!("leakage needs exchange noise, got {other:?}"))),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let flat: Vec<TermValue> = terms.into_iter().flatten().collect();
    Ok(TermValue::mean(&flat, n))
}

/// Mean leakage out of the logical subspace along the pulse.
///
/// Two-qubit gates average both qubits; the CX model has no leakage channel
/// and returns zero.
pub fn leakage_loss(gate: &GateSpec, schedule: &PulseSchedule, ensemble: &[NoiseRealisation], subsample: usize) -> Result<TermValue> {
    leakage_with_ops(exchange_operators(), gate, schedule, ensemble, subsample)
}

/// Squared overshoot above `j_max` plus a weighted squared slew rate, both averaged per coupling.
pub fn physical_penalty(schedule: &PulseSchedule, j_max: f64, lambda_slew: f64) -> TermValue {
    let s = schedule.samples();
    let n = s.len();
    let dt = schedule.step_duration();
    let mut out = TermValue::zero(n);
    for ch in 0..2 {
        let get = |k: usize| s[k].get(ch);
        let mut add = |k: usize, v: f64| match ch {
            0 => out.grad[k].j12 += v,
            _ => out.grad[k].j23 += v,
        };
        for k in 0..n {
            let over = (get(k) - j_max).max(0.0);
            out.value += over * over / n as f64;
            add(k, 2.0 * over / n as f64);
        }
        let scale = lambda_slew / ((n - 1) as f64 * dt * dt);
        for k in 0..n - 1 {
            let d = get(k + 1) - get(k);
            out.value += scale * d * d;
            add(k + 1, 2.0 * scale * d);
            add(k, -2.0 * scale * d);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_pde: f64,
    pub w_leak: f64,
    pub w_phys: f64,
    pub w_t: f64,
    pub w_pen: f64,
    /// Slew-rate weight in ns²/MHz².
    pub lambda_slew: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_mse: 1.0, w_pde: 0.1, w_leak: 0.1, w_phys: 0.01, w_t: 0.05, w_pen: 100.0, lambda_slew: 1e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_mse, self.w_pde, self.w_leak, self.w_phys, self.w_t, self.w_pen, self.lambda_slew];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted loss components; `total` is their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub pde: f64,
    pub leak: f64,
    pub phys: f64,
    /// `T_g / T_g⁽⁰⁾`, zero in the first stage.
    pub time_term: f64,
    /// `max(0, F_th − F)²`, zero in the first stage.
    pub penalty: f64,
    pub total: f64,
    pub fidelity: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.w_mse * self.mse + w.w_pde * self.pde + w.w_leak * self.leak + w.w_phys * self.phys + w.w_t * self.time_term + w.w_pen * self.penalty
    }

    /// Names and values of every component, in trace order.
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("mse", self.mse),
            ("pde", self.pde),
            ("leak", self.leak),
            ("phys", self.phys),
            ("time", self.time_term),
            ("penalty", self.penalty),
        ]
    }
}

pub fn fidelity_from_mse(mse: f64) -> f64 {
    (1.0 - mse).clamp(0.0, 1.0)
}

/// First-stage terms evaluated on one schedule.
#[derive(Clone, Debug)]
pub struct StageTerms {
    pub mse: TermValue,
    pub pde: TermValue,
    pub leak: TermValue,
    pub phys: TermValue,
}

impl StageTerms {
    pub fn evaluate(gate: &GateSpec, schedule: &PulseSchedule, ensemble: &[NoiseRealisation], weights: &LossWeights, j_max: f64, leak_subsample: usize) -> Result<Self> {
        let n = schedule.n_steps();
        let skip = |w: f64| w == 0.0;
        // numeric failures name the term; the caller fills in the iteration
        let named = |term: &str, e: Error| match e {
            Error::Numeric(_) => Error::NonFinite { iteration: 0, term: term.to_string() },
            other => other,
        };
        Ok(Self {
            mse: ensemble_mse(gate, schedule, ensemble).map_err(|e| named("mse", e))?,
            pde: if skip(weights.w_pde) { TermValue::zero(n) } else { pde_residual(schedule) },
            leak: if skip(weights.w_leak) {
                TermValue::zero(n)
            } else {
                leakage_loss(gate, schedule, ensemble, leak_subsample).map_err(|e| named("leak", e))?
            },
            phys: if skip(weights.w_phys) { TermValue::zero(n) } else { physical_penalty(schedule, j_max, weights.lambda_slew) },
        })
    }

    pub fn named(&self) -> [(&'static str, &TermValue); 4] {
        [("mse", &self.mse), ("pde", &self.pde), ("leak", &self.leak), ("phys", &self.phys)]
    }
}

/// Weighted first-stage loss and its sample gradient.
pub fn stage1_loss(terms: &StageTerms, weights: &LossWeights) -> (LossBreakdown, Vec<ExchangePair>) {
    let n = terms.mse.grad.len();
    let mut acc = TermValue::zero(n);
    acc.accumulate(&terms.mse, weights.w_mse);
    acc.accumulate(&terms.pde, weights.w_pde);
    acc.accumulate(&terms.leak, weights.w_leak);
    acc.accumulate(&terms.phys, weights.w_phys);
    let b = LossBreakdown {
        mse: terms.mse.value,
        pde: terms.pde.value,
        leak: terms.leak.value,
        phys: terms.phys.value,
        time_term: 0.0,
        penalty: 0.0,
        total: acc.value,
        fidelity: fidelity_from_mse(terms.mse.value),
    };
    (b, acc.grad)
}

/// First-stage loss plus the normalised duration and the fidelity hinge.
pub fn stage2_loss(terms: &StageTerms, weights: &LossWeights, t_g: f64, t_nominal: f64, f_th: f64) -> Result<(LossBreakdown, Vec<ExchangePair>)> {
    if !(t_nominal > 0.0) {
        return Err(Error::Domain(format!("nominal gate time must be positive, got {t_nominal}")));
    }
    let (mut b, mut grad) = stage1_loss(terms, weights);
    let gap = (f_th - b.fidelity).max(0.0);
    b.time_term = t_g / t_nominal;
    b.penalty = gap * gap;
    b.total += weights.w_t * b.time_term + weights.w_pen * b.penalty;
    // F = 1 − MSE, so the hinge pushes along the MSE gradient
    let k = 2.0 * weights.w_pen * gap;
    if k != 0.0 {
        for (g, m) in grad.iter_mut().zip(&terms.mse.grad) {
            g.j12 += k * m.j12;
            g.j23 += k * m.j23;
        }
    }
    Ok((b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{baseline_pulse, GateName};
    use crate::linalg::testing::{rng, taylor_expm};
    use crate::model::spin_operator;
    use crate::noise::{draw_ensemble, EnsembleSpec};
    use rand_distr::{Distribution, StandardNormal};

    fn wavy(n: usize, t: f64) -> PulseSchedule {
        let s = (0..n)
            .map(|k| {
                let x = k as f64 / (n - 1) as f64;
                ExchangePair::new(60.0 * (std::f64::consts::PI * x).sin().powi(2) + 5.0 * x, 90.0 * (std::f64::consts::PI * x).sin() + 3.0 * (7.0 * x).cos())
            })
            .collect();
        PulseSchedule::new(s, t).unwrap()
    }

    fn dot(a: &[ExchangePair], b: &[ExchangePair]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.j12 * y.j12 + x.j23 * y.j23).sum()
    }

    fn shifted(p: &PulseSchedule, v: &[ExchangePair], h: f64) -> PulseSchedule {
        let s = p.samples().iter().zip(v).map(|(j, d)| ExchangePair::new(j.j12 + h * d.j12, j.j23 + h * d.j23)).collect();
        PulseSchedule::new(s, p.total_time()).unwrap()
    }

    fn random_direction(n: usize, seed: u64) -> Vec<ExchangePair> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                ExchangePair::new(a, b)
            })
            .collect()
    }

    fn check_fd(f: impl Fn(&PulseSchedule) -> TermValue, p: &PulseSchedule, seeds: std::ops::Range<u64>, h: f64, tol: f64) {
        let g = f(p).grad;
        for seed in seeds {
            let v = random_direction(p.n_steps(), seed);
            let analytic = dot(&g, &v);
            let fd = (f(&shifted(p, &v, h)).value - f(&shifted(p, &v, -h)).value) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-300);
            assert!(rel < tol, "seed {seed}: {analytic} vs {fd} ({rel:e})");
        }
    }

    fn ensemble(gate: &GateSpec, sigma: f64, n: usize) -> Vec<NoiseRealisation> {
        draw_ensemble(&EnsembleSpec::new(sigma, n, 9, 1).unwrap(), gate.noise_mode())
    }

    #[test]
    fn identity_target_with_zero_schedule_is_free() {
        // Z⊗Z and Z have diagonal probabilities like the identity
        for (g, q) in [(GateName::Z, 1), (GateName::Z, 2)] {
            let gate = GateSpec::new(g, q).unwrap();
            let p = PulseSchedule::constant(ExchangePair::ZERO, 16, 5.0).unwrap();
            let t = ensemble_mse(&gate, &p, &ensemble(&gate, 0.1, 64)).unwrap();
            assert_eq!(t.value, 0.0);
        }
    }

    #[test]
    fn exact_pulses_have_zero_error() {
        let gate = GateSpec::new(GateName::X, 1).unwrap();
        let p = PulseSchedule::constant(ExchangePair::new(50.0, 100.0), 64, 5.773502691896258).unwrap();
        assert!(ensemble_mse(&gate, &p, &ensemble(&gate, 0.0, 4)).unwrap().value < 1e-12);
        let gate2 = GateSpec::new(GateName::X, 2).unwrap();
        assert!(ensemble_mse(&gate2, &p, &ensemble(&gate2, 0.0, 4)).unwrap().value < 1e-12);
    }

    #[test]
    fn baseline_x_matches_taylor_oracle() {
        let gate = GateSpec::new(GateName::X, 1).unwrap();
        let base = baseline_pulse(&gate, 100.0).unwrap();
        let seg = base.segments[0];
        let p = PulseSchedule::constant(seg.j, 32, seg.duration).unwrap();
        let ens = ensemble(&gate, 0.05, 200);
        let value = ensemble_mse(&gate, &p, &ens).unwrap().value;
        let mut oracle = 0.0;
        for r in &ens {
            let NoiseRealisation::Single(nz) = r else { unreachable!() };
            let (hz, hx) = effective_hamiltonian(apply_noise(seg.j, nz));
            let h = &crate::linalg::pauli_z().scale_real(hz) + &crate::linalg::pauli_x().scale_real(hx);
            let u = taylor_expm(&h.scale(c(0.0, -PHASE_PER_MHZ_NS * seg.duration)), 200);
            oracle += gate.probability_error(&u) / ens.len() as f64;
        }
        assert!((value - oracle).abs() < 1e-8, "{value} vs {oracle}");
        assert!(value > 1e-5);
    }

    #[test]
    fn mse_gradients_match_finite_differences() {
        let p = wavy(24, 9.0);
        for (g, q) in [(GateName::H, 1), (GateName::Y, 2), (GateName::Cx, 2)] {
            let gate = GateSpec::new(g, q).unwrap();
            let ens = ensemble(&gate, 0.05, 6);
            check_fd(|s| ensemble_mse(&gate, s, &ens).unwrap(), &p, 0..5, 1e-5, 1e-6);
        }
    }

    #[test]
    fn cx_phase_follows_pulse_area() {
        let gate = GateSpec::new(GateName::Cx, 2).unwrap();
        // a flat 20 MHz pulse over 12.5 ns has area 250 on both channels
        let p = PulseSchedule::constant(ExchangePair::new(20.0, 20.0), 32, 12.5).unwrap();
        assert!((pulse_areas(&p)[0] - 250.0).abs() < 1e-9);
        assert!(ensemble_mse(&gate, &p, &ensemble(&gate, 0.0, 2)).unwrap().value < 1e-20);
    }

    #[test]
    fn pde_residual_properties() {
        let zero = PulseSchedule::constant(ExchangePair::ZERO, 64, 10.0).unwrap();
        assert_eq!(pde_residual(&zero).value, 0.0);
        let j = ExchangePair::new(40.0, 90.0);
        let coarse = pde_residual(&PulseSchedule::constant(j, 64, 10.0).unwrap()).value;
        let fine = pde_residual(&PulseSchedule::constant(j, 127, 10.0).unwrap()).value;
        // RMS residual halves in Δt twice over, the mean square by 16
        let rms_ratio = (coarse / fine).sqrt();
        assert!((rms_ratio - 4.0).abs() < 0.8, "{rms_ratio}");
        assert!(coarse >= 0.0 && fine >= 0.0);
        check_fd(pde_residual, &wavy(20, 8.0), 10..15, 1e-4, 1e-5);
    }

    #[test]
    fn leakage_vanishes_for_exchange() {
        let p = wavy(16, 10.0);
        for (g, q) in [(GateName::X, 1), (GateName::H, 2)] {
            let gate = GateSpec::new(g, q).unwrap();
            for sigma in [0.0, 0.1] {
                let t = leakage_loss(&gate, &p, &ensemble(&gate, sigma, 3), 0).unwrap();
                assert!(t.value < 1e-10 && t.value >= 0.0);
            }
        }
        let cx = GateSpec::new(GateName::Cx, 2).unwrap();
        assert_eq!(leakage_loss(&cx, &p, &ensemble(&cx, 0.1, 3), 0).unwrap().value, 0.0);
    }

    #[test]
    fn leakage_gradient_with_symmetry_breaking_term() {
        // a transverse field on spin 1 lets population escape, so the
        // adjoint path has something to differentiate
        let [k12, k23] = exchange_operators();
        let ops = [k12 + &spin_operator(0, crate::model::Axis::X).scale_real(0.3), k23.clone()];
        let gate = GateSpec::new(GateName::X, 1).unwrap();
        let ens = ensemble(&gate, 0.05, 2);
        let p = wavy(12, 6.0);
        let t = leakage_with_ops(&ops, &gate, &p, &ens, 0).unwrap();
        assert!(t.value > 1e-4 && t.value <= 1.0);
        check_fd(|s| leakage_with_ops(&ops, &gate, s, &ens, 0).unwrap(), &p, 20..24, 1e-4, 1e-5);
    }

    #[test]
    fn physical_penalty_examples() {
        let flat = PulseSchedule::constant(ExchangePair::new(100.0, 100.0), 32, 5.0).unwrap();
        assert_eq!(physical_penalty(&flat, 100.0, 0.0).value, 0.0);
        let over = PulseSchedule::constant(ExchangePair::new(110.0, 110.0), 32, 5.0).unwrap();
        assert!((physical_penalty(&over, 100.0, 0.0).value - 200.0).abs() < 1e-9);
        // triangle 0 → A → 0 over T: squared slope (2A/T)² on each channel
        let (a, t, n) = (80.0, 10.0, 65);
        let s = (0..n)
            .map(|k| {
                let x = k as f64 / (n - 1) as f64;
                let v = a * (1.0 - (2.0 * x - 1.0).abs());
                ExchangePair::new(v, v)
            })
            .collect();
        let tri = PulseSchedule::new(s, t).unwrap();
        let expected = 2.0 * (2.0 * a / t).powi(2);
        assert!((physical_penalty(&tri, 100.0, 1.0).value - expected).abs() / expected < 0.02);
        check_fd(|s| physical_penalty(s, 50.0, 1e-2), &wavy(18, 7.0), 30..34, 1e-5, 1e-6);
    }

    #[test]
    fn stage_compositions() {
        let gate = GateSpec::new(GateName::Z, 1).unwrap();
        let zero = PulseSchedule::constant(ExchangePair::ZERO, 16, 10.0).unwrap();
        let w = LossWeights::default();
        let terms = StageTerms::evaluate(&gate, &zero, &ensemble(&gate, 0.05, 8), &w, 100.0, 0).unwrap();
        assert!(stage1_loss(&terms, &w).0.total < 1e-30);

        let gate = GateSpec::new(GateName::H, 1).unwrap();
        let p = wavy(16, 12.0);
        let ens = ensemble(&gate, 0.05, 8);
        let only_mse = LossWeights { w_mse: 1.0, w_pde: 0.0, w_leak: 0.0, w_phys: 0.0, ..w };
        let terms = StageTerms::evaluate(&gate, &p, &ens, &only_mse, 100.0, 0).unwrap();
        let (b, g) = stage1_loss(&terms, &only_mse);
        let direct = ensemble_mse(&gate, &p, &ens).unwrap();
        assert_eq!(b.total, direct.value);
        assert_eq!(g, direct.grad);

        let terms = StageTerms::evaluate(&gate, &p, &ens, &w, 100.0, 0).unwrap();
        let (b, _) = stage1_loss(&terms, &w);
        assert!((b.total - b.weighted_total(&w)).abs() < 1e-12);
        assert_eq!(b.fidelity, fidelity_from_mse(b.mse));
    }

    fn fake_terms(mse: f64) -> StageTerms {
        let z = TermValue::zero(4);
        StageTerms { mse: TermValue { value: mse, grad: vec![ExchangePair::new(1.0, 0.0); 4] }, pde: z.clone(), leak: z.clone(), phys: z }
    }

    #[test]
    fn stage2_hinge_and_time_term() {
        let w = LossWeights::default();
        let (b, g) = stage2_loss(&fake_terms(0.005), &w, 5.77, 5.77, 0.99).unwrap();
        assert_eq!(b.penalty, 0.0);
        assert_eq!(w.w_t * b.time_term, w.w_t);
        assert_eq!(g[0].j12, 1.0);
        let (b, g) = stage2_loss(&fake_terms(0.02), &w, 5.0, 10.0, 0.99).unwrap();
        assert!((w.w_pen * b.penalty - w.w_pen * 1e-4).abs() < 1e-15);
        assert!((g[0].j12 - (1.0 + 2.0 * 100.0 * 0.01)).abs() < 1e-9);
        assert!((b.total - b.weighted_total(&w)).abs() < 1e-12);
        assert!(stage2_loss(&fake_terms(0.0), &w, 1.0, 0.0, 0.99).is_err());
    }

    #[test]
    fn ensemble_reduction_is_order_independent() {
        let gate = GateSpec::new(GateName::H, 2).unwrap();
        let p = wavy(32, 15.0);
        let ens = ensemble(&gate, 0.1, 200);
        let a = ensemble_mse(&gate, &p, &ens).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| ensemble_mse(&gate, &p, &ens).unwrap());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.grad, b.grad);
    }
}
