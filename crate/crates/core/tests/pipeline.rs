use eo_pinn::gates::GateName;
use eo_pinn::io::{read_trace, train_to_dir, Checkpoint, RunSummary, SUMMARY_NAME, TRACE_NAME};
use eo_pinn::losses::leakage_loss;
use eo_pinn::noise::{draw_ensemble, EnsembleSpec};
use eo_pinn::train::{ensemble_fidelity, exported_samples, pulse_schedule, TrainConfig};

fn small(gate: GateName) -> TrainConfig {
    TrainConfig {
        gate,
        qubits: if gate == GateName::Cx { 2 } else { 1 },
        iterations_total: 30,
        stage1_end: 10,
        n_real: 64,
        n_t: 24,
        hidden_layers: 2,
        width: 24,
        ..TrainConfig::default()
    }
}

#[test]
fn final_checkpoint_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(GateName::H);
    let summary = train_to_dir(&cfg, dir.path(), &mut |_| {}).unwrap();
    let ck = Checkpoint::load(&dir.path().join("checkpoint_final.json")).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.t_g_ns, summary.final_t_g_ns);
    let (f, _) = ensemble_fidelity(&ck.mlp().unwrap(), &cfg, ck.t_g_ns, cfg.iterations_total + 1).unwrap();
    assert_eq!(f, summary.final_fidelity);
    assert_eq!(RunSummary::load(&dir.path().join(SUMMARY_NAME)).unwrap(), summary);

    let pulse = exported_samples(&ck.mlp().unwrap(), &cfg, ck.t_g_ns).unwrap();
    assert_eq!(pulse.len(), cfg.n_t);
    assert!(pulse.iter().all(|(_, j)| (0.0..=cfg.j_max).contains(&j.j12) && (0.0..=cfg.j_max).contains(&j.j23)));
}

#[test]
fn trace_is_consistent_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(GateName::X);
    let summary = train_to_dir(&cfg, dir.path(), &mut |_| {}).unwrap();
    let rows = read_trace(&dir.path().join(TRACE_NAME)).unwrap();
    assert_eq!(rows.len(), cfg.iterations_total);
    assert!(rows.iter().all(|r| r.stage == if r.iteration <= cfg.stage1_end { 1 } else { 2 }));
    assert!(rows.windows(2).all(|w| w[1].t_g_ns <= w[0].t_g_ns && w[1].lr < w[0].lr));
    if let Some(c) = summary.crossing_iteration {
        assert!(rows[c - 1].fidelity >= cfg.f_th);
        assert!(rows[..c - 1].iter().all(|r| r.fidelity < cfg.f_th));
    }
}

#[test]
fn trained_pulse_does_not_leak() {
    let cfg = TrainConfig { sigma: 0.1, ..small(GateName::Y) };
    let dir = tempfile::tempdir().unwrap();
    train_to_dir(&cfg, dir.path(), &mut |_| {}).unwrap();
    let ck = Checkpoint::load(&dir.path().join("checkpoint_final.json")).unwrap();
    let schedule = pulse_schedule(&ck.mlp().unwrap(), &cfg, ck.t_g_ns).unwrap();
    let gate = cfg.gate_spec().unwrap();
    let ens = draw_ensemble(&EnsembleSpec::new(0.1, 16, 5, 0).unwrap(), gate.noise_mode());
    assert!(leakage_loss(&gate, &schedule, &ens, 0).unwrap().value < 1e-10);
}

#[test]
fn cx_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let s = train_to_dir(&small(GateName::Cx), dir.path(), &mut |_| {}).unwrap();
    assert!(s.final_fidelity.is_finite() && s.final_t_g_ns > 0.0);
}
