use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--iterations", "8", "--stage1-end", "4", "--n-real", "16", "--n-t", "16", "--set", "width=16", "--set", "hidden_layers=2"];

fn eo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eo-pinn")).args(args).current_dir(cwd).env_remove("EO_PINN_OUT_DIR").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(dir: &Path, name: &str, threads: &str) -> Output {
    let mut args = vec!["--threads", threads, "train", "--gate", "x", "--sigma", "0.01", "--quiet", "--out-dir", name];
    args.extend_from_slice(SMALL);
    eo(&args, dir)
}

#[test]
fn unknown_gate_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eo(&["train", "--gate", "t"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("x, y, z, h, cx"), "{}", stderr(&o));
}

#[test]
fn negative_sigma_and_empty_gate_list_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&eo(&["train", "--gate", "x", "--sigma", "-0.1"], dir.path())), 2);
    assert_eq!(code(&eo(&["sweep", "--mode", "baseline", "--gates", ""], dir.path())), 2);
    assert_eq!(code(&eo(&["sweep", "--mode", "pinn", "--gates", " , "], dir.path())), 2);
    assert_eq!(code(&eo(&["plot", "--kind", "pie", "--out", "a.svg", "t.csv"], dir.path())), 2);
}

#[test]
fn verify_passes_and_fault_trips_unitarity() {
    let dir = tempfile::tempdir().unwrap();
    let a = eo(&["verify"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    let b = eo(&["verify"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    let f = eo(&["verify", "--inject-fault"], dir.path());
    assert_eq!(code(&f), 1);
    let out = String::from_utf8_lossy(&f.stdout);
    let row = out.lines().find(|l| l.starts_with("unitarity")).unwrap();
    assert!(row.contains("FAIL"), "{out}");
}

#[test]
fn train_writes_run_directory_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a", "1");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = train_small(dir.path(), "b", "4");
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    let ta = fs::read(dir.path().join("a/trace.csv")).unwrap();
    assert_eq!(ta, fs::read(dir.path().join("b/trace.csv")).unwrap());
    assert!(String::from_utf8_lossy(&ta).starts_with("iteration,stage,fidelity,loss_mse,loss_pde,loss_leak,loss_phys,loss_time,loss_pen,t_g_ns,lr,compress_flag\n"));
    for f in ["manifest.json", "summary.json", "checkpoint_iter0004.json", "checkpoint_final.json"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(summary["final_t_g_ns"].as_f64().unwrap().is_finite());

    // a second run into the same directory must not replace its manifest
    assert_eq!(code(&train_small(dir.path(), "a", "1")), 2);
}

#[test]
fn default_out_dir_follows_env() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--gate", "z", "--sigma", "0.05", "--seed", "3", "--quiet"];
    args.extend_from_slice(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_eo-pinn")).args(&args).current_dir(dir.path()).env("EO_PINN_OUT_DIR", "elsewhere").output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("elsewhere/z-1q-s0.05-seed3/trace.csv").exists());
}

#[test]
fn plot_and_export_from_a_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "r", "2")), 0);
    let o = eo(&["plot", "--kind", "convergence", "--out", "c.svg", "r/trace.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("c.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains("class=\"threshold\""));

    let o = eo(&["plot", "--kind", "duration", "--out", "d.svg", "--labels", "a,b,c", "r/trace.csv", "r/trace.csv", "r/trace.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("d.svg")).unwrap();
    assert_eq!(svg.matches("class=\"legend\"").count(), 3);
    assert!(svg.contains("class=\"boundary\""));

    let o = eo(&["export-pulse", "--checkpoint", "r/checkpoint_final.json", "--out", "p.csv", "--samples", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "time_ns,j12_mhz,j23_mhz");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "0,0,0");

    let mut bad = fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    bad.push_str("9,2,nan?,0,0,0,0,0,0,1,1,held\n");
    fs::write(dir.path().join("bad.csv"), bad).unwrap();
    let o = eo(&["plot", "--kind", "convergence", "--out", "e.svg", "bad.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 10"), "{}", stderr(&o));
}

#[test]
fn baseline_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = eo(&["sweep", "--mode", "baseline", "--gates", "x,y,z,h", "--sigmas", "0.01,0.05,0.1", "--out-dir", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let mut rdr: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    rdr.sort_by(|a, b| a[1].cmp(&b[1]));
    for g in rdr.chunks(3) {
        let f: Vec<f64> = g.iter().map(|r| r[4].parse().unwrap()).collect();
        assert!(f[0] >= f[1] && f[1] >= f[2], "{g:?}");
    }
    assert!(dir.path().join("s/manifest.json").exists());
    let o = eo(&["plot", "--kind", "sigma-sweep", "--out", "s.svg", "s/sweep.csv"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("s.svg")).unwrap().matches("<polyline").count(), 4);
}

#[test]
fn pinn_sweep_gives_each_cell_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--mode", "pinn", "--gates", "x,cx", "--sigmas", "0.01,0.1", "--out-dir", "p"];
    args.extend_from_slice(SMALL);
    let o = eo(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for cell in ["x-1q-s0.01", "x-1q-s0.1", "cx-2q-s0.01", "cx-2q-s0.1"] {
        assert!(dir.path().join("p").join(cell).join("manifest.json").exists(), "{cell}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("p/sweep.csv")).unwrap().lines().count(), 5);
}
