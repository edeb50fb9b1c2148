use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use rayon::prelude::*;

use eo_pinn::gates::{baseline_fidelity_sweep, baseline_pulse, GateName, GateSpec};
use eo_pinn::io::{read_sweep, read_trace, train_to_dir, write_pulse_csv, write_sweep, Checkpoint, RunManifest, SweepRecord, MANIFEST_NAME};
use eo_pinn::plot::{convergence_plot, duration_plot, sigma_sweep_plot};
use eo_pinn::train::{exported_samples, TrainConfig};
use eo_pinn::verify::{run_verify, VerifyOptions};
use eo_pinn::Error;

use crate::config::{build_config, default_base_dir, parse_gate, run_name};
use crate::{usage, ConfigArgs, Kind, SweepMode};

fn core_err(e: Error) -> anyhow::Error {
    match e {
        Error::Config(_) => usage(e.to_string()),
        other => other.into(),
    }
}

pub fn train(args: &ConfigArgs, out_dir: Option<PathBuf>, quiet: bool) -> anyhow::Result<ExitCode> {
    let cfg = build_config(args)?;
    let dir = out_dir.unwrap_or_else(|| default_base_dir().join(run_name(&cfg)));
    let every = (cfg.iterations_total / 10).max(1);
    let summary = train_to_dir(&cfg, &dir, &mut |row| {
        if !quiet && (row.iteration % every == 0 || row.iteration == 1) {
            eprintln!("iter {:>4}  stage {}  F = {:.5}  T_g = {:.4} ns  {}", row.iteration, row.stage, row.fidelity, row.t_g, row.flag.as_str());
        }
    })
    .map_err(core_err)
    .with_context(|| format!("training {} in {}", cfg.gate, dir.display()))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn parse_gates(list: &str) -> anyhow::Result<Vec<GateName>> {
    let gates = list.split(',').map(str::trim).filter(|t| !t.is_empty()).map(parse_gate).collect::<anyhow::Result<Vec<_>>>()?;
    if gates.is_empty() {
        return Err(usage("--gates needs at least one gate"));
    }
    Ok(gates)
}

fn qubits_for(gate: GateName, requested: usize) -> usize {
    if gate == GateName::Cx {
        2
    } else {
        requested
    }
}

fn fresh_dir(dir: &Path) -> anyhow::Result<()> {
    if dir.join(MANIFEST_NAME).exists() {
        return Err(usage(format!("{} already holds a manifest; use a fresh output directory", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn sweep(mode: SweepMode, gates: &str, sigmas: &[f64], args: &ConfigArgs, out_dir: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let gates = parse_gates(gates)?;
    if sigmas.is_empty() || sigmas.iter().any(|s| s.is_nan() || *s < 0.0 || s.is_infinite()) {
        return Err(usage("--sigmas needs finite values >= 0"));
    }
    let base = build_config(args)?;
    let dir = out_dir.unwrap_or_else(|| default_base_dir().join(format!("sweep-{}", if mode == SweepMode::Pinn { "pinn" } else { "baseline" })));
    fresh_dir(&dir)?;
    let mut manifest = RunManifest::new("sweep", Some(&base));

    let rows: Vec<SweepRecord> = match mode {
        SweepMode::Baseline => baseline_rows(&gates, sigmas, &base),
        SweepMode::Pinn => pinn_rows(&gates, sigmas, &base, &dir),
    };
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    write_sweep(&dir.join("sweep.csv"), &rows)?;
    for r in &rows {
        let f = r.fidelity.map(|f| format!("{f:.5}")).unwrap_or_else(|| "-".into());
        let t = r.t_g_ns.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into());
        let c = r.crossing_iteration.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<3} {}q  sigma {:<5}  F {f:<8} T_g {t:<8} cross {c:<4} {}", r.gate.token(), r.qubits, r.sigma, r.status);
    }
    let mut outputs = vec!["sweep.csv".to_string()];
    if mode == SweepMode::Pinn {
        outputs.extend(rows.iter().map(|r| cell_name(r.gate, r.qubits, r.sigma)));
    }
    manifest.finish(if failed == 0 { "completed" } else { "partial" }, outputs);
    manifest.write_once(&dir)?;
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", rows.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn baseline_rows(gates: &[GateName], sigmas: &[f64], base: &TrainConfig) -> Vec<SweepRecord> {
    gates
        .par_iter()
        .map(|&g| {
            let qubits = qubits_for(g, base.qubits);
            let points = GateSpec::new(g, qubits).and_then(|spec| baseline_fidelity_sweep(&spec, sigmas, base.n_real, base.seed));
            let t_g = GateSpec::new(g, qubits).and_then(|spec| baseline_pulse(&spec, base.j_max)).map(|p| p.total_time()).unwrap_or(g.nominal_time());
            match points {
                Ok(pts) => pts
                    .into_iter()
                    .map(|p| SweepRecord { mode: "baseline".into(), gate: g, qubits, sigma: p.sigma, fidelity: Some(p.fidelity), std_error: Some(p.std_error), t_g_ns: Some(t_g), crossing_iteration: None, status: "ok".into() })
                    .collect(),
                Err(e) => sigmas.iter().map(|&s| failed_cell("baseline", g, qubits, s, &e.to_string())).collect(),
            }
        })
        .collect::<Vec<Vec<_>>>()
        .concat()
}

fn cell_name(g: GateName, qubits: usize, sigma: f64) -> String {
    format!("{g}-{qubits}q-s{sigma}")
}

fn failed_cell(mode: &str, gate: GateName, qubits: usize, sigma: f64, msg: &str) -> SweepRecord {
    SweepRecord { mode: mode.into(), gate, qubits, sigma, fidelity: None, std_error: None, t_g_ns: None, crossing_iteration: None, status: format!("failed: {msg}") }
}

fn pinn_rows(gates: &[GateName], sigmas: &[f64], base: &TrainConfig, dir: &Path) -> Vec<SweepRecord> {
    let cells: Vec<(GateName, f64)> = gates.iter().flat_map(|&g| sigmas.iter().map(move |&s| (g, s))).collect();
    cells
        .par_iter()
        .map(|&(gate, sigma)| {
            let qubits = qubits_for(gate, base.qubits);
            let cfg = TrainConfig { gate, sigma, qubits, ..base.clone() };
            match train_to_dir(&cfg, &dir.join(cell_name(gate, qubits, sigma)), &mut |_| {}) {
                Ok(s) => SweepRecord {
                    mode: "pinn".into(),
                    gate,
                    qubits,
                    sigma,
                    fidelity: Some(s.final_fidelity),
                    std_error: Some(s.final_fidelity_std_error),
                    t_g_ns: Some(s.final_t_g_ns),
                    crossing_iteration: s.crossing_iteration,
                    status: "ok".into(),
                },
                Err(e) => failed_cell("pinn", gate, qubits, sigma, &e.to_string()),
            }
        })
        .collect()
}

fn label_for(path: &Path, i: usize, labels: &[String]) -> String {
    if let Some(l) = labels.get(i) {
        return l.clone();
    }
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("run {}", i + 1))
}

pub fn plot(kind: Kind, out: &Path, labels: &[String], inputs: &[PathBuf]) -> anyhow::Result<ExitCode> {
    if !labels.is_empty() && labels.len() != inputs.len() {
        return Err(usage(format!("{} labels for {} inputs", labels.len(), inputs.len())));
    }
    let svg = match kind {
        Kind::Convergence | Kind::Duration => {
            let traces = inputs.iter().enumerate().map(|(i, p)| Ok((label_for(p, i, labels), read_trace(p)?))).collect::<eo_pinn::Result<Vec<_>>>()?;
            if kind == Kind::Convergence {
                convergence_plot(&traces)?
            } else {
                duration_plot(&traces)?
            }
        }
        Kind::SigmaSweep => {
            let mut rows = Vec::new();
            for p in inputs {
                rows.extend(read_sweep(p)?);
            }
            sigma_sweep_plot(&rows)?
        }
    };
    fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn verify(inject_fault: bool) -> anyhow::Result<ExitCode> {
    let report = run_verify(&VerifyOptions { inject_fault });
    print!("{}", report.table());
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn export_pulse(checkpoint: &Path, out: &Path, samples: Option<usize>) -> anyhow::Result<ExitCode> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(n) = samples {
        if n < 2 {
            return Err(usage("--samples must be at least 2"));
        }
        cfg.n_t = n;
    }
    let rows = exported_samples(&ck.mlp()?, &cfg, ck.t_g_ns)?;
    write_pulse_csv(out, &rows)?;
    println!("{} samples over {:.4} ns -> {}", rows.len(), rows.last().map(|r| r.0).unwrap_or(0.0), out.display());
    Ok(ExitCode::SUCCESS)
}
