//! Two-stage training loop.
//!
//! Stage I optimises the pulse shape at the nominal gate time. Stage II keeps
//! optimising and shrinks the gate time geometrically whenever the ensemble
//! fidelity is at or above threshold.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{mean_and_std_error, GateName, GateSpec};
use crate::losses::{ensemble_mse_detailed, fidelity_from_mse, stage1_loss, stage2_loss, LossBreakdown, LossWeights, StageTerms};
use crate::model::{ExchangePair, PulseSchedule};
use crate::net::{backward, forward_grid, init_params, GridForward, MlpParams, NetConfig, WarmStart};
use crate::noise::{draw_ensemble, EnsembleSpec, NoiseRealisation};

/// Every training setting, flat so it reads naturally as a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gate: GateName,
    pub qubits: usize,
    pub sigma: f64,
    pub seed: u64,
    pub iterations_total: usize,
    pub stage1_end: usize,
    pub n_real: usize,
    pub n_t: usize,
    pub f_th: f64,
    pub alpha: f64,
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Starting gate time in ns; the gate's hardware time when absent.
    pub t_g_initial: Option<f64>,
    /// Shrink only while fidelity ≥ `f_th`. Off means shrink every Stage-II step.
    pub compression_gate: bool,
    /// Number of recent fidelities averaged for the gate decision; 1 uses the current one.
    pub gate_smoothing: usize,
    /// Ensemble members used for the three-spin leakage term; 0 uses all.
    pub leak_realizations: usize,
    pub warm_start: WarmStart,
    pub hidden_layers: usize,
    pub width: usize,
    pub j_max: f64,
    pub w_mse: f64,
    pub w_pde: f64,
    pub w_leak: f64,
    pub w_phys: f64,
    pub w_t: f64,
    pub w_pen: f64,
    pub lambda_slew: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let net = NetConfig::default();
        Self {
            gate: GateName::X,
            qubits: 1,
            sigma: 0.01,
            seed: 0,
            iterations_total: 250,
            stage1_end: 100,
            n_real: 2000,
            n_t: 64,
            f_th: 0.99,
            alpha: 0.018,
            lr_init: 3e-3,
            lr_final: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t_g_initial: None,
            compression_gate: true,
            gate_smoothing: 1,
            leak_realizations: 8,
            warm_start: WarmStart::EchoSymmetric,
            hidden_layers: net.hidden_layers,
            width: net.width,
            j_max: net.j_max,
            w_mse: w.w_mse,
            w_pde: w.w_pde,
            w_leak: w.w_leak,
            w_phys: w.w_phys,
            w_t: w.w_t,
            w_pen: w.w_pen,
            lambda_slew: w.lambda_slew,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_mse: self.w_mse,
            w_pde: self.w_pde,
            w_leak: self.w_leak,
            w_phys: self.w_phys,
            w_t: self.w_t,
            w_pen: self.w_pen,
            lambda_slew: self.lambda_slew,
        }
    }

    pub fn net(&self) -> NetConfig {
        NetConfig { hidden_layers: self.hidden_layers, width: self.width, j_max: self.j_max, ..NetConfig::default() }
    }

    pub fn gate_spec(&self) -> Result<GateSpec> {
        GateSpec::new(self.gate, self.qubits)
    }

    pub fn initial_time(&self) -> f64 {
        self.t_g_initial.unwrap_or_else(|| self.gate.nominal_time())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.gate_spec()?;
        self.net().validate()?;
        self.weights().validate()?;
        EnsembleSpec::new(self.sigma, self.n_real, self.seed, 0).map_err(|e| Error::Config(e.to_string()))?;
        if self.stage1_end >= self.iterations_total || self.iterations_total < 2 {
            return bad(format!("stage1_end ({}) must be below iterations_total ({})", self.stage1_end, self.iterations_total));
        }
        if self.n_t < 2 {
            return bad(format!("n_t must be at least 2, got {}", self.n_t));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.f_th > 0.0 && self.f_th <= 1.0) {
            return bad(format!("f_th must lie in (0, 1], got {}", self.f_th));
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if self.gate_smoothing == 0 {
            return bad("gate_smoothing must be at least 1".into());
        }
        let spec = self.gate_spec()?;
        let t0 = self.initial_time();
        if !(t0 > 0.0) || !(spec.pulse_window(t0) > 0.0) {
            return bad(format!("initial gate time {t0} ns leaves no room for the pulse"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Dimension(format!("Adam sizes differ: {} params, {} grads, {} moments", params.len(), grads.len(), state.m.len())));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    state.step += 1;
    let b1t = 1.0 - cfg.beta1.powi(state.step as i32);
    let b2t = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / b1t;
        let v_hat = *v / b2t;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Cosine-annealed learning rate for a 1-based iteration.
pub fn cosine_lr(iteration: usize, cfg: &TrainConfig) -> f64 {
    let span = (cfg.iterations_total.max(2) - 1) as f64;
    let x = (iteration.clamp(1, cfg.iterations_total) - 1) as f64 / span;
    cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + (PI * x).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressFlag {
    /// Stage I; the gate time is not touched.
    Fixed,
    Compressed,
    Held,
}

impl CompressFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CompressFlag::Fixed => "fixed",
            CompressFlag::Compressed => "compressed",
            CompressFlag::Held => "held",
        }
    }
}

/// One geometric compression step, applied only when the gate is open.
pub fn compress_time(t_g: f64, fidelity: f64, cfg: &TrainConfig) -> Result<(f64, CompressFlag)> {
    if !(t_g > 0.0) {
        return Err(Error::Domain(format!("gate time must be positive, got {t_g}")));
    }
    let open = !cfg.compression_gate || fidelity >= cfg.f_th;
    let next = t_g * (1.0 - cfg.alpha);
    let room = cfg.gate_spec()?.pulse_window(next) > 0.0;
    if open && room {
        Ok((next, CompressFlag::Compressed))
    } else {
        Ok((t_g, CompressFlag::Held))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: u8,
    pub fidelity: f64,
    pub loss: LossBreakdown,
    /// Gate time the row was evaluated at.
    pub t_g: f64,
    pub lr: f64,
    /// What happened to the gate time after this row.
    pub flag: CompressFlag,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    /// First iteration whose fidelity reached `f_th`.
    pub fn crossing_iteration(&self, f_th: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.fidelity >= f_th).map(|r| r.iteration)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointReason {
    StageBoundary,
    Final,
    Abort,
}

pub enum TrainEvent<'a> {
    Row(&'a TraceRow),
    Checkpoint { reason: CheckpointReason, iteration: usize, params: &'a MlpParams, t_g: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub t_g: f64,
    pub trace: TrainTrace,
    /// Fidelity of the final pulse on a fresh ensemble.
    pub final_fidelity: f64,
    pub final_std_error: f64,
    pub crossing_iteration: Option<usize>,
}

impl TrainOutcome {
    pub fn schedule(&self, cfg: &TrainConfig) -> Result<PulseSchedule> {
        pulse_schedule(&self.params, cfg, self.t_g)
    }
}

/// Network pulse for gate time `t_g`.
pub fn pulse_schedule(params: &MlpParams, cfg: &TrainConfig, t_g: f64) -> Result<PulseSchedule> {
    let window = cfg.gate_spec()?.pulse_window(t_g);
    PulseSchedule::new(forward_grid(params, cfg.n_t, cfg.sigma)?.outputs().to_vec(), window)
}

/// Loss, fidelity and parameter gradient at one iteration.
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

fn finite_or(iteration: usize, term: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration, term: term.to_string() })
    }
}

/// Evaluates the stage loss and its parameter gradient.
pub fn evaluate(params: &MlpParams, cfg: &TrainConfig, gate: &GateSpec, ensemble: &[NoiseRealisation], t_g: f64, stage: u8, iteration: usize) -> Result<Evaluation> {
    let cache: GridForward = forward_grid(params, cfg.n_t, cfg.sigma)?;
    let window = gate.pulse_window(t_g);
    let schedule = PulseSchedule::new(cache.outputs().to_vec(), window).map_err(|e| match e {
        Error::Numeric(_) => Error::NonFinite { iteration, term: "pulse".into() },
        other => other,
    })?;
    let weights = cfg.weights();
    let terms = StageTerms::evaluate(gate, &schedule, ensemble, &weights, cfg.j_max, cfg.leak_realizations).map_err(|e| match e {
        Error::NonFinite { term, .. } => Error::NonFinite { iteration, term },
        other => other,
    })?;
    for (name, t) in terms.named() {
        finite_or(iteration, name, t.is_finite())?;
    }
    let (breakdown, sample_grad) = if stage == 1 {
        stage1_loss(&terms, &weights)
    } else {
        stage2_loss(&terms, &weights, t_g, cfg.initial_time(), cfg.f_th)?
    };
    finite_or(iteration, "total", breakdown.total.is_finite())?;
    let grad = backward(params, &cache, &sample_grad)?;
    finite_or(iteration, "gradient", grad.iter().all(|g| g.is_finite()))?;
    Ok(Evaluation { breakdown, grad })
}

fn ensemble_for(cfg: &TrainConfig, gate: &GateSpec, iteration: usize) -> Result<Vec<NoiseRealisation>> {
    let spec = EnsembleSpec::new(cfg.sigma, cfg.n_real, cfg.seed, iteration as u64)?;
    Ok(draw_ensemble(&spec, gate.noise_mode()))
}

/// Fidelity of a fixed pulse on the ensemble drawn for `iteration`.
pub fn ensemble_fidelity(params: &MlpParams, cfg: &TrainConfig, t_g: f64, iteration: usize) -> Result<(f64, f64)> {
    let gate = cfg.gate_spec()?;
    let schedule = pulse_schedule(params, cfg, t_g)?;
    let (mse, errors) = ensemble_mse_detailed(&gate, &schedule, &ensemble_for(cfg, &gate, iteration)?)?;
    let (_, se) = mean_and_std_error(&errors);
    Ok((fidelity_from_mse(mse.value), se))
}

/// Runs both stages, reporting every row and checkpoint to `observer`.
pub fn train_gate(cfg: &TrainConfig, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gate = cfg.gate_spec()?;
    let mut params = init_params(&cfg.net(), cfg.seed, cfg.warm_start)?;
    let mut adam = AdamState::new(params.len());
    let adam_cfg = AdamConfig { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let mut t_g = cfg.initial_time();
    let mut trace = TrainTrace::default();
    let mut recent: Vec<f64> = Vec::new();

    for iteration in 1..=cfg.iterations_total {
        let stage = if iteration <= cfg.stage1_end { 1 } else { 2 };
        let lr = cosine_lr(iteration, cfg);
        let ensemble = ensemble_for(cfg, &gate, iteration)?;
        let eval = match evaluate(&params, cfg, &gate, &ensemble, t_g, stage, iteration) {
            Ok(e) => e,
            Err(e) => {
                observer(TrainEvent::Checkpoint { reason: CheckpointReason::Abort, iteration: iteration - 1, params: &params, t_g })?;
                return Err(e);
            }
        };
        let fidelity = eval.breakdown.fidelity;
        recent.push(fidelity);
        let (next_t, flag) = if stage == 1 {
            (t_g, CompressFlag::Fixed)
        } else {
            let w = cfg.gate_smoothing.min(recent.len());
            let gate_f = recent[recent.len() - w..].iter().sum::<f64>() / w as f64;
            compress_time(t_g, gate_f, cfg)?
        };
        let row = TraceRow { iteration, stage, fidelity, loss: eval.breakdown, t_g, lr, flag };
        observer(TrainEvent::Row(&row))?;
        trace.rows.push(row);

        adam_step(&mut params.values, &eval.grad, &mut adam, lr, &adam_cfg)?;
        t_g = next_t;
        if iteration == cfg.stage1_end {
            observer(TrainEvent::Checkpoint { reason: CheckpointReason::StageBoundary, iteration, params: &params, t_g })?;
        }
    }

    let (final_fidelity, final_std_error) = ensemble_fidelity(&params, cfg, t_g, cfg.iterations_total + 1)?;
    observer(TrainEvent::Checkpoint { reason: CheckpointReason::Final, iteration: cfg.iterations_total, params: &params, t_g })?;
    let crossing_iteration = trace.crossing_iteration(cfg.f_th);
    Ok(TrainOutcome { params, t_g, trace, final_fidelity, final_std_error, crossing_iteration })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `(analytic, finite difference)` directional derivatives.
    pub directions: Vec<(f64, f64)>,
    pub max_rel_error: f64,
}

impl GradientReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the Stage-I gradient with central differences along random unit directions.
pub fn gradient_check(cfg: &TrainConfig, n_directions: usize) -> Result<GradientReport> {
    cfg.validate()?;
    let gate = cfg.gate_spec()?;
    let params = init_params(&cfg.net(), cfg.seed, cfg.warm_start)?;
    let ensemble = ensemble_for(cfg, &gate, 1)?;
    let t_g = cfg.initial_time();
    let eval = evaluate(&params, cfg, &gate, &ensemble, t_g, 1, 1)?;
    let loss_at = |values: Vec<f64>| -> Result<f64> {
        let p = MlpParams::from_values(params.config.clone(), values)?;
        Ok(evaluate(&p, cfg, &gate, &ensemble, t_g, 1, 1)?.breakdown.total)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let h = 1e-4;
    let mut directions = Vec::with_capacity(n_directions);
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_directions {
        let mut v: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let analytic: f64 = eval.grad.iter().zip(&v).map(|(g, d)| g * d).sum();
        let shifted = |s: f64| params.values.iter().zip(&v).map(|(p, d)| p + s * d).collect::<Vec<_>>();
        let fd = (loss_at(shifted(h))? - loss_at(shifted(-h))?) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs());
        let rel = if scale == 0.0 { 0.0 } else { (analytic - fd).abs() / scale };
        max_rel = max_rel.max(rel);
        directions.push((analytic, fd));
    }
    Ok(GradientReport { directions, max_rel_error: max_rel })
}

/// Pulse samples of a trained network, on its own grid.
pub fn exported_samples(params: &MlpParams, cfg: &TrainConfig, t_g: f64) -> Result<Vec<(f64, ExchangePair)>> {
    let s = pulse_schedule(params, cfg, t_g)?;
    Ok(s.times().into_iter().zip(s.samples().iter().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(gate: GateName) -> TrainConfig {
        TrainConfig { gate, width: 16, hidden_layers: 2, n_real: 16, n_t: 12, iterations_total: 12, stage1_end: 5, ..TrainConfig::default() }
    }

    #[test]
    fn defaults_match_the_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.iterations_total, c.stage1_end, c.n_real, c.n_t), (250, 100, 2000, 64));
        assert_eq!((c.f_th, c.alpha, c.lr_init, c.lr_final), (0.99, 0.018, 3e-3, 1e-5));
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        assert_eq!((c.hidden_layers, c.width), (4, 256));
        c.validate().unwrap();
    }

    #[test]
    fn adam_examples() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut theta = vec![0.5];
        let mut s = AdamState::new(1);
        adam_step(&mut theta, &[1.0], &mut s, 0.1, &cfg).unwrap();
        assert!((theta[0] - 0.4).abs() < 1e-6);

        let (mut a, mut b) = (vec![0.3, 0.7], vec![0.3, 0.7]);
        let (mut sa, mut sb) = (AdamState::new(2), AdamState::new(2));
        for _ in 0..3 {
            adam_step(&mut a, &[0.2, -1.0], &mut sa, 0.01, &cfg).unwrap();
            adam_step(&mut b, &[0.2, -1.0], &mut sb, 0.01, &cfg).unwrap();
        }
        assert_eq!(a, b);
        assert!(adam_step(&mut a, &[f64::NAN, 0.0], &mut sa, 0.01, &cfg).is_err());
    }

    #[test]
    fn cosine_schedule() {
        let c = TrainConfig::default();
        assert_eq!(cosine_lr(1, &c), 3e-3);
        assert!((cosine_lr(250, &c) - 1e-5).abs() < 1e-18);
        let mid = 0.5 * (cosine_lr(125, &c) + cosine_lr(126, &c));
        assert!((mid - 1.505e-3).abs() < 1e-9);
        for i in 1..250 {
            assert!(cosine_lr(i + 1, &c) < cosine_lr(i, &c));
        }
    }

    #[test]
    fn compression_examples() {
        let c = TrainConfig { gate: GateName::Cx, qubits: 2, ..TrainConfig::default() };
        let (t, f) = compress_time(31.0, 0.995, &c).unwrap();
        assert!((t - 30.442).abs() < 1e-9);
        assert_eq!(f, CompressFlag::Compressed);
        assert_eq!(compress_time(22.0, 0.985, &c).unwrap(), (22.0, CompressFlag::Held));
        assert!(compress_time(0.0, 1.0, &c).is_err());
        // the rotations alone take 5.77 ns, so the CX pulse window closes before 2 ns
        let ungated = TrainConfig { compression_gate: false, ..c.clone() };
        let mut t = 31.0;
        for _ in 0..150 {
            t = compress_time(t, 0.0, &ungated).unwrap().0;
        }
        assert!(t > crate::gates::cx_rotation_time());
        let x = TrainConfig { compression_gate: false, ..TrainConfig::default() };
        let mut t = 31.0;
        for _ in 0..150 {
            t = compress_time(t, 0.0, &x).unwrap().0;
        }
        assert!((t - 31.0 * 0.982f64.powi(150)).abs() < 1e-9 && (t - 2.05).abs() < 0.05);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TrainConfig { gate: GateName::H, sigma: 0.1, t_g_initial: Some(18.0), ..TrainConfig::default() };
        let text = toml::to_string(&c).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(c, back);
        let partial: TrainConfig = toml::from_str("gate = \"z\"\nsigma = 0.05\n").unwrap();
        assert_eq!(partial.gate, GateName::Z);
        assert_eq!(partial.n_real, 2000);
        assert!(toml::from_str::<TrainConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(TrainConfig { stage1_end: 250, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { sigma: -0.1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gate: GateName::Cx, qubits: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gate: GateName::Cx, qubits: 2, t_g_initial: Some(4.0), ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn tiny_runs_are_reproducible_and_well_formed() {
        for (g, q) in [(GateName::X, 1), (GateName::H, 2), (GateName::Cx, 2)] {
            let cfg = TrainConfig { qubits: q, ..tiny(g) };
            let mut events = Vec::new();
            let a = train_gate(&cfg, &mut |e| {
                if let TrainEvent::Checkpoint { reason, iteration, .. } = e {
                    events.push((reason, iteration));
                }
                Ok(())
            })
            .unwrap();
            let b = train_gate(&cfg, &mut |_| Ok(())).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.params, b.params);
            assert_eq!(a.trace.rows.len(), cfg.iterations_total);
            assert_eq!(events, vec![(CheckpointReason::StageBoundary, 5), (CheckpointReason::Final, 12)]);
            let t0 = cfg.initial_time();
            for r in &a.trace.rows {
                if r.iteration <= cfg.stage1_end {
                    assert_eq!((r.t_g, r.flag, r.stage), (t0, CompressFlag::Fixed, 1));
                }
                assert!((r.loss.total - r.loss.weighted_total(&cfg.weights())).abs() <= 1e-12 * r.loss.total.abs().max(1.0));
            }
            for w in a.trace.rows.windows(2) {
                let ratio = w[1].t_g / w[0].t_g;
                assert!(ratio == 1.0 || (ratio - (1.0 - cfg.alpha)).abs() < 1e-12);
                assert_eq!(ratio != 1.0, w[0].flag == CompressFlag::Compressed);
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_checkpoint() {
        let cfg = TrainConfig { j_max: 1e308, ..tiny(GateName::X) };
        let mut aborted = false;
        let err = train_gate(&cfg, &mut |e| {
            if let TrainEvent::Checkpoint { reason: CheckpointReason::Abort, .. } = e {
                aborted = true;
            }
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 1, .. }), "{err}");
        assert!(aborted);
    }

    #[test]
    fn gradient_check_small_network() {
        let cfg = TrainConfig { sigma: 0.05, ..tiny(GateName::H) };
        let r = gradient_check(&cfg, 10).unwrap();
        assert!(r.passed(1e-3), "{r:?}");
        assert_eq!(r, gradient_check(&cfg, 10).unwrap());
        let zero = TrainConfig { w_mse: 0.0, w_pde: 0.0, w_leak: 0.0, w_phys: 0.0, ..cfg };
        let r = gradient_check(&zero, 3).unwrap();
        assert!(r.directions.iter().all(|&(a, f)| a == 0.0 && f == 0.0));
    }
}
