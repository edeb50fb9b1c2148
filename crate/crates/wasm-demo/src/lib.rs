//! Browser bindings. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use eo_pinn::gates::{baseline_fidelity_sweep, GateName, GateSpec};
use eo_pinn::io::TraceRecord;
use eo_pinn::losses::{ensemble_mse_detailed, fidelity_from_mse};
use eo_pinn::noise::{draw_ensemble, EnsembleSpec};
use eo_pinn::train::{exported_samples, train_gate, TrainConfig, TrainEvent};
use eo_pinn::{ExchangePair, PulseSchedule};

#[derive(Serialize)]
struct Pulse {
    time_ns: Vec<f64>,
    j12_mhz: Vec<f64>,
    j23_mhz: Vec<f64>,
}

impl Pulse {
    fn from_samples(s: &[(f64, ExchangePair)]) -> Self {
        Self { time_ns: s.iter().map(|p| p.0).collect(), j12_mhz: s.iter().map(|p| p.1.j12).collect(), j23_mhz: s.iter().map(|p| p.1.j23).collect() }
    }
}

#[derive(Serialize)]
struct Simulation {
    fidelity: f64,
    std_error: f64,
    pulse: Pulse,
}

#[derive(Serialize)]
struct DemoRun {
    trace: Vec<TraceRecord>,
    final_fidelity: f64,
    final_t_g_ns: f64,
    crossing_iteration: Option<usize>,
    pulse: Pulse,
}

fn js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

fn gate_spec(gate: &str) -> Result<GateSpec, JsError> {
    let name: GateName = gate.parse().map_err(js)?;
    GateSpec::new(name, if name == GateName::Cx { 2 } else { 1 }).map_err(js)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

/// Baseline fidelity for each comma-separated σ.
#[wasm_bindgen]
pub fn baseline_sweep(gate: &str, sigmas: &str, n_real: usize, seed: u64) -> Result<String, JsError> {
    let spec = gate_spec(gate)?;
    let sigmas = sigmas.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(js)?;
    to_json(&baseline_fidelity_sweep(&spec, &sigmas, n_real, seed).map_err(js)?)
}

/// Ensemble fidelity of a `sin²` pulse pair with the given peaks over `t_ns`.
#[wasm_bindgen]
pub fn simulate_pulse(gate: &str, j12_peak: f64, j23_peak: f64, t_ns: f64, sigma: f64, n_real: usize, seed: u64) -> Result<String, JsError> {
    let spec = gate_spec(gate)?;
    let n = 96;
    let samples: Vec<ExchangePair> = (0..n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / (n - 1) as f64).sin().powi(2);
            ExchangePair::new(j12_peak * s, j23_peak * s)
        })
        .collect();
    let schedule = PulseSchedule::new(samples, t_ns).map_err(js)?;
    let ensemble = draw_ensemble(&EnsembleSpec::new(sigma, n_real, seed, 0).map_err(js)?, spec.noise_mode());
    let (mse, errors) = ensemble_mse_detailed(&spec, &schedule, &ensemble).map_err(js)?;
    let m = errors.len() as f64;
    let var = errors.iter().map(|e| (e - mse.value).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let pts: Vec<(f64, ExchangePair)> = schedule.times().into_iter().zip(schedule.samples().iter().copied()).collect();
    to_json(&Simulation { fidelity: fidelity_from_mse(mse.value), std_error: (var / m).sqrt(), pulse: Pulse::from_samples(&pts) })
}

/// A short two-stage run on a small network, sized for a browser tab.
#[wasm_bindgen]
pub fn train_demo(gate: &str, sigma: f64, iterations: usize, seed: u64) -> Result<String, JsError> {
    let spec = gate_spec(gate)?;
    let cfg = TrainConfig {
        gate: spec.name,
        qubits: spec.qubit_count,
        sigma,
        seed,
        iterations_total: iterations,
        stage1_end: iterations * 2 / 5,
        n_real: 64,
        n_t: 32,
        hidden_layers: 2,
        width: 32,
        leak_realizations: 2,
        ..TrainConfig::default()
    };
    let mut trace = Vec::new();
    let outcome = train_gate(&cfg, &mut |e| {
        if let TrainEvent::Row(r) = e {
            trace.push(TraceRecord::from(r));
        }
        Ok(())
    })
    .map_err(js)?;
    let pulse = Pulse::from_samples(&exported_samples(&outcome.params, &cfg, outcome.t_g).map_err(js)?);
    to_json(&DemoRun { trace, final_fidelity: outcome.final_fidelity, final_t_g_ns: outcome.t_g, crossing_iteration: outcome.crossing_iteration, pulse })
}
