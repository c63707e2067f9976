use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn homog(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("HOMOG_OUT_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"))
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_homog")).args(["sweep", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config not found"));
}

#[test]
fn invalid_config_values_exit_2() {
    let dir = workdir("n_per");
    let o = homog(&dir, &["sweep"], r#"{"preset": "sine_g", "n_per": 2, "eps_list": [0.25, 0.125, 0.0625], "times": [0.25], "sweep": {}}"#);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = homog(&dir, &["sweep"], r#"{"preset": "sine_g", "unknown_key": 1}"#);
    assert_eq!(code(&o), 2);
}

#[test]
fn constant_preset_sweep_passes() {
    let dir = workdir("constant");
    let o = homog(
        &dir,
        &["sweep"],
        r#"{"preset": "constant", "n_per": 8, "eps_list": [0.25, 0.125, 0.0625], "times": [0.25], "sweep": {"measures": ["l2", "h1_corrector"]}}"#,
    );
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

const SINE_SWEEP: &str = r#"{
  "preset": "sine_g", "n_per": 8, "seed": 3,
  "eps_list": [0.125, 0.0625, 0.03125, 0.015625], "max_eps": 0.125, "times": [0.25],
  "sweep": {"measures": ["l2", "flux"], "envelope_times": ["eps2", 0.25]}
}"#;

#[test]
fn sweep_writes_outputs_and_report_reflects_edits() {
    let dir = workdir("sine");
    let o = homog(&dir, &["sweep", "--jobs", "1"], SINE_SWEEP);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = dir.join("out");
    for f in ["report.json", "tables.csv", "timings.json", "plot_l2_t_0.25.dat", "plot_flux_t_0.25.dat"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let slope = report["tables"].as_array().unwrap().iter().find(|t| t["measure"] == "l2").unwrap()["fit"]["slope"].as_f64().unwrap();
    assert!((0.85..=1.15).contains(&slope), "{slope}");
    let tables = std::fs::read_to_string(out.join("tables.csv")).unwrap();
    assert_eq!(tables.lines().next(), Some("measure,label,eps,value"));
    assert!(tables.lines().any(|l| l.starts_with("l2,t=0.25,")), "{tables}");

    // rerun is byte-identical
    let first = std::fs::read(out.join("report.json")).unwrap();
    let first_csv = std::fs::read(out.join("tables.csv")).unwrap();
    let o = homog(&dir, &["sweep"], SINE_SWEEP);
    assert_eq!(code(&o), 0);
    assert_eq!(first, std::fs::read(out.join("report.json")).unwrap());
    assert_eq!(first_csv, std::fs::read(out.join("tables.csv")).unwrap());

    // report re-reads the file: untouched passes, a failed gate exits 4
    let o = homog(&dir, &["report"], SINE_SWEEP);
    assert_eq!(code(&o), 0);
    let mut v = report.clone();
    v["gates"][0]["passed"] = serde_json::Value::Bool(false);
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let o = homog(&dir, &["report"], SINE_SWEEP);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn heat_snapshot_matches_closed_form_and_contour() {
    let dir = workdir("heat");
    let t = 0.1;
    let o = homog(
        &dir,
        &["evolve"],
        r#"{"preset": "heat", "n_per": 16, "evolve": {"eps": 0.0625, "t": 0.1, "initial": {"kind": "sine", "mode": 1}, "contour": true}}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv(&dir.join("out/snapshot.csv"));
    let (x, re, im, cre, cim) = (col(&header, "x"), col(&header, "u_eps_re"), col(&header, "u_eps_im"), col(&header, "u_eps_contour_re"), col(&header, "u_eps_contour_im"));
    let scale = (-PI * PI * t).exp();
    let (mut err, mut dev) = (0.0f64, 0.0f64);
    for r in &rows {
        err = err.max((r[re] - scale * (PI * r[x]).sin()).abs()).max(r[im].abs());
        dev = dev.max((r[cre] - r[re]).abs()).max((r[cim] - r[im]).abs());
    }
    assert!(err <= 1e-4 * scale, "closed form error {err:e}");
    assert!(dev <= 1e-6 * scale, "contour deviation {dev:e}");
}

#[test]
fn cell_and_effective_write_json() {
    let dir = workdir("cell");
    let cfg = r#"{"preset": "sine_g", "cell": {"resolution": 64}}"#;
    assert_eq!(code(&homog(&dir, &["cell"], cfg)), 0);
    for f in ["cell_data.json", "lambda.json", "lambda_tilde.json", "cell_summary.txt"] {
        assert!(dir.join("out").join(f).is_file(), "missing {f}");
    }
    let o = homog(&dir, &["effective"], cfg);
    assert_eq!(code(&o), 0);
    let eff: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("out/effective.json")).unwrap()).unwrap();
    assert!(eff.to_string().contains("0.5"), "{eff}");
}
