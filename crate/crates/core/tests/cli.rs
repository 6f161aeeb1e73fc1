use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ioncavity-sim");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn dressed_states_symmetric_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "g1_mhz = 1.0\ng2_mhz = 1.0\n");
    let out = dir.path().join("out");
    let o = run(&["dressed-states", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("dressed-states.csv"));
    let ev: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((ev[0] + 1.414).abs() < 1e-3 && ev[1] == 0.0 && (ev[2] - 1.414).abs() < 1e-3);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn doppler_correction_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "g0_ideal_mhz = 17.3\ndelta_z_nm = 94.0\nwavelength_nm = 866.0\n");
    let out = dir.path().join("out");
    let o = run(&["doppler-correction", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let g: f64 = csv_rows(&out.join("doppler-correction.csv"))[0][3].parse().unwrap();
    assert!((g - 15.6).abs() < 0.05, "{g}");
}

#[test]
fn empty_cavity_transmission_has_hwhm_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "kappa_mhz = 4.1\ndrive_e_mhz = 0.032\nfock_cutoff = 3\nscan_start_mhz = -20.0\nscan_stop_mhz = 20.0\nscan_points = 41\n",
    );
    let out = dir.path().join("out");
    let o = run(&[
        "transmission-scan",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--set",
        "ion_present=false",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hwhm: f64 = csv_rows(&out.join("fit.csv"))[0][1].parse().unwrap();
    assert!((hwhm - 4.1).abs() < 1e-6, "{hwhm}");
    let head = fs::read_to_string(out.join("transmission-scan.csv")).unwrap();
    assert!(head.starts_with("# protocol=transmission-scan, params hash="));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "scan_points = 9\nscan_start_mhz = -14.0\nscan_stop_mhz = -6.0\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "emission-scan",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["emission-scan.csv", "fit.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["protocol"], "emission-scan");
    assert_eq!(ma["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(ma["config"]["g0_mhz"], 15.1);
}

#[test]
fn validate_only_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "g0_mhz = 15.1\n");
    let out = dir.path().join("never");
    let o = run(&["emission-scan", "--config", &cfg, "--out", out.to_str().unwrap(), "--validate-only"]);
    assert!(o.status.success());
    assert!(!out.exists());
    let o = run(&["emission-scan", "--config", &cfg, "--validate-only"]);
    assert!(o.status.success());
}

#[test]
fn config_errors_exit_2_and_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "g0_mhz = -3.0\nkappa_mhz = 0.0\nmystery = 1\n");
    let o = run(&["emission-scan", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error [config]"));
    for key in ["g0_mhz", "kappa_mhz", "mystery"] {
        assert!(err.contains(key), "{key} missing in {err}");
    }
    let o = run(&["no-such-protocol", "--config", &cfg, "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_3_with_the_scan_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "transmission_model = \"steady-state\"\nscan_start_mhz = 1.0\nscan_stop_mhz = 2.0\nscan_points = 2\n",
    );
    let o = run(&["transmission-scan", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error [solver]") && err.contains("detuning 1 MHz"), "{err}");
}

#[test]
fn refused_extrapolation_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "peak_ratio = 0.95\ndrive_grid_points = 3\nscan_start_mhz = -15.0\nscan_stop_mhz = 15.0\nscan_points = 11\n",
    );
    let o = run(&["estimate-drive", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("extrapolation refused"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = run(&["dressed-states", "--config", "/nonexistent/run.cfg", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn linewidth_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let lor = |x: f64, c: f64, a: f64| a * 4.1 * 4.1 / ((x - c).powi(2) + 4.1 * 4.1);
    let mut csv = String::from("# protocol=measured, params hash=none\ndetuning_mhz,signal,signal_error\n");
    for i in 0..=240 {
        // axis deliberately mislabelled by a factor 1.3
        let x = -60.0 + 0.5 * i as f64;
        let y = lor(x, 0.0, 1.0) + lor(x, 45.0, 0.4) + lor(x, -45.0, 0.4);
        csv.push_str(&format!("{},{},\n", x * 1.3, y));
    }
    fs::write(dir.path().join("scan.csv"), csv).unwrap();
    let cfg = write_cfg(dir.path(), "scan_csv = \"scan.csv\"\nsideband_offset_mhz = 45.0\n");
    let out = dir.path().join("out");
    let o = run(&["linewidth-fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kappa: f64 = csv_rows(&out.join("linewidth-fit.csv"))[0][0].parse().unwrap();
    assert!((kappa - 4.1).abs() < 1e-6, "{kappa}");
}

#[test]
fn dispersion_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let body = "g0_mhz = 14.0\ndelta_p_points = 5\ndispersion_points = 41\nfit_bracket_lo_mhz = 10.0\nfit_bracket_hi_mhz = 18.0\n";
    let cfg = write_cfg(dir.path(), body);
    let d = dir.path().join("disp");
    let o = run(&["raman-dispersion", "--config", &cfg, "--out", d.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = dir.path().join("fit");
    let measured = d.join("raman-dispersion.csv");
    let o = run(&[
        "fit-g0",
        "--config",
        &cfg,
        "--out",
        f.to_str().unwrap(),
        "--set",
        &format!("measured_curve=\"{}\"", measured.display()),
        "--set",
        "g0_mhz=15.1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g: f64 = csv_rows(&f.join("fit.csv"))[0][0].parse().unwrap();
    assert!((g - 14.0).abs() < 0.01, "{g}");
}
