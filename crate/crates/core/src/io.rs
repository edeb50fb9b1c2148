//! Run artefacts: trace CSV, checkpoints, manifests, summaries and pulse exports.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateName;
use crate::net::{MlpParams, NetConfig};
use crate::train::{train_gate, CheckpointReason, CompressFlag, TraceRow, TrainConfig, TrainEvent, TrainOutcome};

pub const TRACE_HEADER: &str = "iteration,stage,fidelity,loss_mse,loss_pde,loss_leak,loss_phys,loss_time,loss_pen,t_g_ns,lr,compress_flag";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const PULSE_HEADER: &str = "time_ns,j12_mhz,j23_mhz";
pub const MANIFEST_NAME: &str = "manifest.json";

/// One trace line as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub stage: u8,
    pub fidelity: f64,
    pub loss_mse: f64,
    pub loss_pde: f64,
    pub loss_leak: f64,
    pub loss_phys: f64,
    pub loss_time: f64,
    pub loss_pen: f64,
    pub t_g_ns: f64,
    pub lr: f64,
    pub compress_flag: CompressFlag,
}

impl From<&TraceRow> for TraceRecord {
    fn from(r: &TraceRow) -> Self {
        Self {
            iteration: r.iteration,
            stage: r.stage,
            fidelity: r.fidelity,
            loss_mse: r.loss.mse,
            loss_pde: r.loss.pde,
            loss_leak: r.loss.leak,
            loss_phys: r.loss.phys,
            loss_time: r.loss.time_term,
            loss_pen: r.loss.penalty,
            t_g_ns: r.t_g,
            lr: r.lr,
            compress_flag: r.flag,
        }
    }
}

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

/// Appends trace rows and flushes after each, so a crash keeps every finished row.
pub struct TraceWriter {
    inner: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let inner = csv::WriterBuilder::new().has_headers(true).from_path(path).map_err(format_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<()> {
        self.inner.serialize(TraceRecord::from(row)).map_err(format_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a trace, rejecting a wrong header and naming the first bad row.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(format_err)?.iter().collect::<Vec<_>>().join(",");
    if header != TRACE_HEADER {
        return Err(Error::Format(format!("{}: unexpected header '{header}'", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<TraceRecord>().enumerate() {
        // line 1 is the header
        let rec = rec.map_err(|e| Error::Format(format!("{}: row {} is malformed: {e}", path.display(), i + 2)))?;
        if !rec.fidelity.is_finite() || !rec.t_g_ns.is_finite() {
            return Err(Error::Format(format!("{}: row {} has non-finite values", path.display(), i + 2)));
        }
        rows.push(rec);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub reason: CheckpointReason,
    pub iteration: usize,
    pub t_g_ns: f64,
    pub config: TrainConfig,
    pub net: NetConfig,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(reason: CheckpointReason, iteration: usize, t_g: f64, config: &TrainConfig, params: &MlpParams) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            reason,
            iteration,
            t_g_ns: t_g,
            config: config.clone(),
            net: params.config.clone(),
            params: params.values.clone(),
        }
    }

    pub fn mlp(&self) -> Result<MlpParams> {
        MlpParams::from_values(self.net.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write then rename, so a reader never sees a half-written file
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self).map_err(format_err)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(Error::Format(format!("{}: unsupported checkpoint version {v}", path.display()))),
            None => return Err(Error::Format(format!("{}: missing format_version", path.display()))),
        }
        let ck: Checkpoint = serde_json::from_value(raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ck.mlp()?;
        Ok(ck)
    }
}

pub fn checkpoint_name(reason: CheckpointReason, iteration: usize) -> String {
    match reason {
        CheckpointReason::StageBoundary => format!("checkpoint_iter{iteration:04}.json"),
        CheckpointReason::Final => "checkpoint_final.json".into(),
        CheckpointReason::Abort => "checkpoint_abort.json".into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub status: String,
    pub seed: Option<u64>,
    pub gate: Option<GateName>,
    pub sigma: Option<f64>,
    pub config: Option<TrainConfig>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&TrainConfig>) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            started_unix_s: unix_now(),
            finished_unix_s: None,
            status: "running".into(),
            seed: config.map(|c| c.seed),
            gate: config.map(|c| c.gate),
            sigma: config.map(|c| c.sigma),
            config: config.cloned(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, status: &str, outputs: Vec<String>) {
        self.finished_unix_s = Some(unix_now());
        self.status = status.into();
        self.outputs = outputs;
    }

    /// Writes `manifest.json`; refuses to replace an existing one.
    pub fn write_once(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => Error::Config(format!("{} already holds a manifest; use a fresh output directory", dir.display())),
            _ => Error::Io(e),
        })?;
        f.write_all(&serde_json::to_vec_pretty(self).map_err(format_err)?)?;
        Ok(path)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub gate: GateName,
    pub qubits: usize,
    pub sigma: f64,
    pub seed: u64,
    pub manifest: String,
    pub initial_t_g_ns: f64,
    pub final_t_g_ns: f64,
    pub reduction_percent: f64,
    pub final_fidelity: f64,
    pub final_fidelity_std_error: f64,
    pub crossing_iteration: Option<usize>,
    pub iterations: usize,
}

impl RunSummary {
    pub fn from_outcome(cfg: &TrainConfig, outcome: &TrainOutcome) -> Self {
        let t0 = cfg.initial_time();
        Self {
            gate: cfg.gate,
            qubits: cfg.qubits,
            sigma: cfg.sigma,
            seed: cfg.seed,
            manifest: MANIFEST_NAME.into(),
            initial_t_g_ns: t0,
            final_t_g_ns: outcome.t_g,
            reduction_percent: 100.0 * (1.0 - outcome.t_g / t0),
            final_fidelity: outcome.final_fidelity,
            final_fidelity_std_error: outcome.final_std_error,
            crossing_iteration: outcome.crossing_iteration,
            iterations: outcome.trace.rows.len(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let nums = [self.initial_t_g_ns, self.final_t_g_ns, self.reduction_percent, self.final_fidelity, self.final_fidelity_std_error, self.sigma];
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("summary holds non-finite values: {self:?}")));
        }
        fs::write(path, serde_json::to_vec_pretty(self).map_err(format_err)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Reads a TOML training config.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes `time_ns,j12_mhz,j23_mhz` rows.
pub fn write_pulse_csv(path: &Path, samples: &[(f64, crate::model::ExchangePair)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(format_err)?;
    w.write_record(PULSE_HEADER.split(',')).map_err(format_err)?;
    for (t, j) in samples {
        w.write_record([t.to_string(), j.j12.to_string(), j.j23.to_string()]).map_err(format_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of a gate × σ sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub mode: String,
    pub gate: GateName,
    pub qubits: usize,
    pub sigma: f64,
    pub fidelity: Option<f64>,
    pub std_error: Option<f64>,
    pub t_g_ns: Option<f64>,
    pub crossing_iteration: Option<usize>,
    pub status: String,
}

pub fn write_sweep(path: &Path, rows: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(format_err)?;
    for r in rows {
        w.serialize(r).map_err(format_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Format(format!("{}: row {} is malformed: {e}", path.display(), i + 2))))
        .collect()
}

pub const TRACE_NAME: &str = "trace.csv";
pub const SUMMARY_NAME: &str = "summary.json";

/// Trains into `dir`: trace, checkpoints, summary, then the manifest listing them.
///
/// The manifest is written last, once, whether training finished or aborted.
pub fn train_to_dir(cfg: &TrainConfig, dir: &Path, progress: &mut dyn FnMut(&TraceRow)) -> Result<RunSummary> {
    if dir.join(MANIFEST_NAME).exists() {
        return Err(Error::Config(format!("{} already holds a manifest; use a fresh output directory", dir.display())));
    }
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("train", Some(cfg));
    let mut outputs = vec![TRACE_NAME.to_string()];
    let mut writer = TraceWriter::create(&dir.join(TRACE_NAME))?;
    let result = train_gate(cfg, &mut |event| match event {
        TrainEvent::Row(row) => {
            writer.write(row)?;
            progress(row);
            Ok(())
        }
        TrainEvent::Checkpoint { reason, iteration, params, t_g } => {
            let name = checkpoint_name(reason, iteration);
            Checkpoint::new(reason, iteration, t_g, cfg, params).save(&dir.join(&name))?;
            outputs.push(name);
            Ok(())
        }
    });
    drop(writer);
    match result {
        Ok(outcome) => {
            let summary = RunSummary::from_outcome(cfg, &outcome);
            summary.save(&dir.join(SUMMARY_NAME))?;
            outputs.push(SUMMARY_NAME.into());
            manifest.finish("completed", outputs);
            manifest.write_once(dir)?;
            Ok(summary)
        }
        Err(e) => {
            manifest.finish(&format!("aborted: {e}"), outputs);
            manifest.write_once(dir)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossBreakdown;
    use crate::net::{init_params, WarmStart};

    fn row(i: usize) -> TraceRow {
        TraceRow {
            iteration: i,
            stage: 1,
            fidelity: 0.1 * i as f64,
            loss: LossBreakdown { mse: 1.0 / 3.0, pde: 1e-17, total: 0.5, fidelity: 0.1, ..Default::default() },
            t_g: 5.77,
            lr: 3e-3,
            flag: CompressFlag::Fixed,
        }
    }

    #[test]
    fn trace_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut w = TraceWriter::create(&path).unwrap();
        for i in 1..=3 {
            w.write(&row(i)).unwrap();
        }
        drop(w);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        let back = read_trace(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0], TraceRecord::from(&row(1)));
        assert!(text.contains(",fixed"));
    }

    #[test]
    fn malformed_trace_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let good = "1,1,0.5,0.5,0,0,0,0,0,5.77,0.003,fixed";
        fs::write(&path, format!("{TRACE_HEADER}\n{good}\n2,1,oops,0.5,0,0,0,0,0,5.77,0.003,fixed\n")).unwrap();
        let err = read_trace(&path).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_trace(&path).unwrap_err().to_string().contains("header"));
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { width: 8, hidden_layers: 2, ..TrainConfig::default() };
        let p = init_params(&cfg.net(), 4, WarmStart::EchoSymmetric).unwrap();
        let ck = Checkpoint::new(CheckpointReason::Final, 250, 4.123456789012345, &cfg, &p);
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.mlp().unwrap(), p);

        let mut raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        raw["format_version"] = 99.into();
        fs::write(&path, raw.to_string()).unwrap();
        assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("version 99"));
    }

    #[test]
    fn manifest_is_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("train", Some(&TrainConfig::default()));
        m.write_once(dir.path()).unwrap();
        assert!(m.write_once(dir.path()).is_err());
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "gate = \"h\"\nsigma = 0.1\nn_real = 500\nw_pen = 50.0\n").unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!((c.gate, c.sigma, c.n_real, c.w_pen), (GateName::H, 0.1, 500, 50.0));
        fs::write(&path, "gate = \"q\"\n").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Config(_))));
    }

    #[test]
    fn training_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { width: 8, hidden_layers: 2, iterations_total: 6, stage1_end: 3, n_real: 8, n_t: 16, ..TrainConfig::default() };
        let mut rows = 0;
        let s = train_to_dir(&cfg, dir.path(), &mut |_| rows += 1).unwrap();
        assert_eq!(rows, 6);
        assert_eq!(read_trace(&dir.path().join(TRACE_NAME)).unwrap().len(), 6);
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(m.status, "completed");
        for f in &m.outputs {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(m.outputs.contains(&"checkpoint_iter0003.json".to_string()));
        assert_eq!(RunSummary::load(&dir.path().join(SUMMARY_NAME)).unwrap(), s);
        assert!(train_to_dir(&cfg, dir.path(), &mut |_| {}).is_err());
    }

    #[test]
    fn sweep_round_trip_keeps_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows = vec![
            SweepRecord { mode: "baseline".into(), gate: GateName::X, qubits: 1, sigma: 0.05, fidelity: Some(0.97), std_error: Some(1e-3), t_g_ns: Some(5.77), crossing_iteration: None, status: "ok".into() },
            SweepRecord { mode: "pinn".into(), gate: GateName::Cx, qubits: 2, sigma: 0.1, fidelity: None, std_error: None, t_g_ns: None, crossing_iteration: None, status: "failed: boom".into() },
        ];
        write_sweep(&path, &rows).unwrap();
        assert_eq!(read_sweep(&path).unwrap(), rows);
    }
}
