use std::path::PathBuf;

use eo_pinn::gates::GateName;
use eo_pinn::io::load_config;
use eo_pinn::train::TrainConfig;

use crate::{usage, ConfigArgs};

pub const OUT_DIR_ENV: &str = "EO_PINN_OUT_DIR";

pub fn parse_gate(token: &str) -> anyhow::Result<GateName> {
    token.trim().parse::<GateName>().map_err(|e| usage(e.to_string()))
}

fn set_key(cfg: TrainConfig, assignment: &str) -> anyhow::Result<TrainConfig> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
    let key = key.trim();
    // bare words are taken as strings, everything else as a TOML literal
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut table = toml::Table::try_from(&cfg)?;
    if !table.contains_key(key) && key != "t_g_initial" {
        return Err(usage(format!("unknown config key '{key}'")));
    }
    table.insert(key.to_string(), value);
    table.try_into().map_err(|e: toml::de::Error| usage(format!("--set {assignment}: {}", e.message())))
}

/// File values first, then flags, then `--set` pairs.
pub fn build_config(args: &ConfigArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p).map_err(|e| usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    if let Some(g) = &args.gate {
        cfg.gate = parse_gate(g)?;
        if cfg.gate == GateName::Cx {
            cfg.qubits = 2;
        }
    }
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    if let Some(q) = args.qubits {
        cfg.qubits = q;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iterations {
        cfg.iterations_total = n;
    }
    if let Some(n) = args.stage1_end {
        cfg.stage1_end = n;
    }
    if let Some(n) = args.n_real {
        cfg.n_real = n;
    }
    if let Some(n) = args.n_t {
        cfg.n_t = n;
    }
    for a in &args.set {
        cfg = set_key(cfg, a)?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn default_base_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn run_name(cfg: &TrainConfig) -> String {
    format!("{}-{}q-s{}-seed{}", cfg.gate, cfg.qubits, cfg.sigma, cfg.seed)
}
