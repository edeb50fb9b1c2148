//! Self-check battery run by `verify`.

use std::fmt::Write;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gates::{active_cx, cnot, sqrt_swap_phase, swap, x_rotation_time, GateName};
use crate::linalg::{expm_frechet, expm_general, expm_general_with, global_phase_distance, ComplexMatrix, ExpmOptions, C64, PHASE_PER_MHZ_NS};
use crate::model::{effective_hamiltonian, leakage_probability, logical_basis, three_spin_hamiltonian, ExchangePair, LogicalState};
use crate::noise::{apply_noise, draw_ensemble, EnsembleSpec, NoiseMode, NoiseRealisation};
use crate::train::{gradient_check, TrainConfig};

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Evaluates matrix exponentials with a second-order polynomial, which must trip the unitarity row.
    pub inject_fault: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{:<width$}  {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(dim: usize, r: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |_, _| C64::new(StandardNormal.sample(r), StandardNormal.sample(r)))
}

fn random_hermitian(dim: usize, r: &mut ChaCha8Rng) -> ComplexMatrix {
    let m = random_matrix(dim, r);
    (&m + &m.adjoint()).scale_real(0.5)
}

fn taylor_series(a: &ComplexMatrix, terms: usize) -> ComplexMatrix {
    let mut sum = ComplexMatrix::identity(a.dim());
    let mut term = sum.clone();
    for k in 1..terms {
        term = term.matmul(a).scale_real(1.0 / k as f64);
        sum = &sum + &term;
    }
    sum
}

fn check(name: &'static str, result: Result<(bool, String)>) -> CheckResult {
    match result {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn expm_opts(o: &VerifyOptions) -> ExpmOptions {
    if o.inject_fault {
        ExpmOptions { taylor_order: 2, ..ExpmOptions::default() }
    } else {
        ExpmOptions::default()
    }
}

pub fn unitarity(o: &VerifyOptions) -> Result<(bool, String)> {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let dim = [2, 4, 8][case % 3];
        let t = 0.5 + 4.5 * (case as f64 / 99.0);
        let h = random_hermitian(dim, &mut r).scale(C64::new(0.0, -t));
        worst = worst.max(expm_general_with(&h, &expm_opts(o))?.unitarity_defect());
    }
    Ok((worst < 1e-10, format!("max ‖U†U − I‖ = {worst:.2e} over 100 cases")))
}

pub fn taylor_oracle(o: &VerifyOptions) -> Result<(bool, String)> {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let a = random_matrix([2, 4, 8][case % 3], &mut r).scale_real(0.3);
        let e = expm_general_with(&a, &expm_opts(o))?;
        let t = taylor_series(&a, 200);
        worst = worst.max((&e - &t).frobenius_norm() / t.frobenius_norm());
    }
    Ok((worst < 1e-9, format!("max relative deviation {worst:.2e}")))
}

pub fn frechet() -> Result<(bool, String)> {
    let mut r = rng(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..12 {
        let dim = [2, 4, 8][case % 3];
        let a = random_hermitian(dim, &mut r).scale(C64::new(0.0, -0.7));
        let e = random_matrix(dim, &mut r);
        let l = expm_frechet(&a, &e)?;
        let fd = (&expm_general(&(&a + &e.scale_real(h)))? - &expm_general(&(&a - &e.scale_real(h)))?).scale_real(0.5 / h);
        worst = worst.max((&l - &fd).frobenius_norm() / l.frobenius_norm());
    }
    Ok((worst < 1e-7, format!("max relative deviation {worst:.2e}")))
}

pub fn loss_gradient() -> Result<(bool, String)> {
    let cfg = TrainConfig { n_real: 16, leak_realizations: 4, ..TrainConfig::default() };
    let report = gradient_check(&cfg, 10)?;
    Ok((report.passed(1e-3), format!("max relative error {:.2e} over {} directions", report.max_rel_error, report.directions.len())))
}

pub fn cx_decomposition() -> Result<(bool, String)> {
    let seq = active_cx()?;
    let d = seq.defect()?;
    Ok((d < 1e-9, format!("{:?} sequence, distance to CX {d:.2e}", seq.variant)))
}

pub fn sqrt_swap_squared() -> Result<(bool, String)> {
    let s = sqrt_swap_phase(PHASE_PER_MHZ_NS * crate::gates::SQRT_SWAP_AREA);
    let d = global_phase_distance(&s.matmul(&s), &swap())?;
    let c = global_phase_distance(&cnot(), &cnot())?;
    Ok((d < 1e-10 && c < 1e-12, format!("distance to SWAP {d:.2e}")))
}

pub fn noise_statistics() -> Result<(bool, String)> {
    let sigma = 0.05;
    let n = 20_000;
    let ens = draw_ensemble(&EnsembleSpec::new(sigma, n, 7, 1)?, NoiseMode::Single);
    let xs: Vec<f64> = ens.iter().flat_map(|r| r.offsets()).collect();
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let zero = draw_ensemble(&EnsembleSpec::new(0.0, 100, 7, 1)?, NoiseMode::Single).iter().all(|r| r.offsets().iter().all(|d| *d == 0.0));
    let ok = (std / sigma - 1.0).abs() < 0.03 && mean.abs() < 4.0 * sigma / m.sqrt() && zero;
    Ok((ok, format!("mean {mean:+.2e}, std {std:.4} (target {sigma})")))
}

fn evolve(u: &ComplexMatrix, psi: &LogicalState) -> Result<LogicalState> {
    LogicalState::new(u.mul_vec(psi.amplitudes()))
}

pub fn leakage() -> Result<(bool, String)> {
    let mut r = rng(4);
    let (zero, one) = logical_basis();
    let unit = rand_distr::Uniform::new(0.0, 100.0).expect("valid range");
    let mut worst: f64 = 0.0;
    for sigma in [0.0, 0.01, 0.05, 0.1] {
        let ens = draw_ensemble(&EnsembleSpec::new(sigma, 4, 11, 0)?, NoiseMode::Single);
        for real in &ens {
            let NoiseRealisation::Single(noise) = real else { unreachable!() };
            let mut u = ComplexMatrix::identity(8);
            for _ in 0..16 {
                let j = ExchangePair::new(unit.sample(&mut r), unit.sample(&mut r));
                let h = three_spin_hamiltonian(apply_noise(j, noise));
                u = expm_general(&h.scale(C64::new(0.0, -PHASE_PER_MHZ_NS * 0.4)))?.matmul(&u);
            }
            for psi in [&zero, &one] {
                worst = worst.max(leakage_probability(&evolve(&u, psi)?)?);
            }
        }
    }
    Ok((worst < 1e-10, format!("max leakage {worst:.2e}")))
}

pub fn sweet_spot_and_timing() -> Result<(bool, String)> {
    let (hz, _) = effective_hamiltonian(ExchangePair::new(37.5, 75.0));
    let t = x_rotation_time(std::f64::consts::PI, 100.0);
    let rel = (t - GateName::X.nominal_time()).abs() / GateName::X.nominal_time();
    Ok((hz == 0.0 && rel < 2e-3, format!("hz = {hz}, T_X = {t:.4} ns")))
}

pub fn run_verify(o: &VerifyOptions) -> VerifyReport {
    let checks = vec![
        check("unitarity", unitarity(o)),
        check("expm vs taylor", taylor_oracle(o)),
        check("frechet vs fd", frechet()),
        check("loss gradient", loss_gradient()),
        check("cx decomposition", cx_decomposition()),
        check("sqrt-swap squared", sqrt_swap_squared()),
        check("noise statistics", noise_statistics()),
        check("leakage", leakage()),
        check("sweet spot / T_X", sweet_spot_and_timing()),
    ];
    VerifyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_rows_pass() {
        let o = VerifyOptions::default();
        for (name, r) in [("u", unitarity(&o)), ("t", taylor_oracle(&o)), ("f", frechet()), ("l", leakage()), ("s", sqrt_swap_squared()), ("n", noise_statistics())] {
            let (ok, detail) = r.unwrap();
            assert!(ok, "{name}: {detail}");
        }
    }

    #[test]
    fn fault_trips_unitarity() {
        let (ok, _) = unitarity(&VerifyOptions { inject_fault: true }).unwrap();
        assert!(!ok);
    }

    #[test]
    fn table_lists_every_row() {
        let rep = VerifyReport {
            checks: vec![CheckResult { name: "a", passed: true, detail: "x".into() }, CheckResult { name: "bb", passed: false, detail: "y".into() }],
        };
        assert!(!rep.all_passed());
        let t = rep.table();
        assert!(t.contains("a   PASS  x") && t.contains("bb  FAIL  y") && t.contains("2 checks, 1 failed"));
    }
}
