use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn condinf(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_condinf"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("CONDINF_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn small_rw_config(dir: &Path) -> String {
    let path = dir.join("rw.json");
    fs::write(
        &path,
        r#"{"family": "rw", "T": 15, "n": 3, "n_truths": 3, "n_reps": 40, "seed": 11,
            "methods": ["mode_conditional", "mode_marginal", "bc_conditional"]}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = condinf(&["sim-rw", "--bogus"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(condinf(&[], None).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = condinf(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sim-rw-missing"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let out = condinf(&["fit-rw", "--data", "/nonexistent/rw.csv"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn family_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rw_config(dir.path());
    let out = condinf(&["sim-gam", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sim_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rw_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = condinf(&["sim-rw", "--config", &cfg, "--out", out.to_str().unwrap()], Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["coverage.csv", "bias.csv", "report.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }
    for f in ["coverage.csv", "bias.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let cov = fs::read_to_string(a.join("coverage.csv")).unwrap();
    assert!(cov.starts_with("# condinf coverage v1\nmethod,component_index,coverage,se,q05,q95\n"));
    assert_eq!(cov.lines().count(), 2 + 3 * 15);

    let svg = dir.path().join("coverage.svg");
    let o = condinf(
        &["report", "--in", a.join("coverage.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()],
        None,
    );
    assert!(o.status.success());
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("bc_conditional") && text.contains("stroke-dasharray"));
    let svg2 = dir.path().join("coverage2.svg");
    condinf(
        &["report", "--in", a.join("coverage.csv").to_str().unwrap(), "--out", svg2.to_str().unwrap()],
        None,
    );
    assert_eq!(fs::read(&svg).unwrap(), fs::read(&svg2).unwrap());

    let bias_svg = dir.path().join("bias.svg");
    let o = condinf(
        &["report", "--in", a.join("bias.csv").to_str().unwrap(), "--out", bias_svg.to_str().unwrap()],
        None,
    );
    assert!(o.status.success());
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rw_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    condinf(&["sim-rw", "--config", &cfg, "--out", a.to_str().unwrap()], Some("1"));
    condinf(&["sim-rw", "--config", &cfg, "--seed", "12", "--out", b.to_str().unwrap()], Some("1"));
    assert_ne!(fs::read(a.join("bias.csv")).unwrap(), fs::read(b.join("bias.csv")).unwrap());
}

#[test]
fn fit_gam_writes_curve_with_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("anomalies.txt");
    let mut text = String::from("% comment\nYear Anomaly Unc\n");
    for (i, y) in (1900..=1960).enumerate() {
        let v = 0.3 * ((i as f64) / 9.0).sin() + 0.05 * ((i * 7 % 11) as f64 / 11.0 - 0.5);
        text.push_str(&format!("{y} {v:.4} 0.1\n"));
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("curve.csv");
    let o = condinf(
        &[
            "fit-gam",
            "--data",
            data.to_str().unwrap(),
            "--from",
            "1905",
            "--to",
            "1955",
            "--basis",
            "12",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("log_lambda"));
    let curve = fs::read_to_string(&out).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "year,anomaly,fitted,marginal_lower,marginal_upper,bc_fitted,bc_lower,bc_upper");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 51);
    for r in rows {
        assert!(r[3] <= r[2] && r[2] <= r[4]);
        assert!(r[6] <= r[5] && r[5] <= r[7]);
    }
}

#[test]
fn fit_rw_handles_missing_tail() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rw.csv");
    let mut text = String::new();
    let mut level = 0.0;
    for t in 0..20 {
        level += 0.8 * ((t * 37 % 13) as f64 / 13.0 - 0.5);
        if t >= 17 {
            text.push_str("NA,NA,NA\n");
        } else {
            let e = |k: usize| 0.3 * (((t + k) * 29 % 17) as f64 / 17.0 - 0.5);
            text.push_str(&format!("{},{},{}\n", level + e(1), level + e(2), level + e(3)));
        }
    }
    fs::write(&data, text).unwrap();
    let o = condinf(&["fit-rw", "--data", data.to_str().unwrap(), "--gamma-c", "0.1"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("# corrected estimator: sd_conditional"));
    let rows: Vec<Vec<f64>> = stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("time"))
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    // unobserved steps keep the posterior mode and its marginal interval
    for r in &rows[17..] {
        assert!((r[2] - r[5]).abs() < 1e-8);
        assert!((r[3] - r[6]).abs() < 1e-8 && (r[4] - r[7]).abs() < 1e-8);
    }
    let bad = condinf(&["fit-rw", "--data", data.to_str().unwrap(), "--gamma-c", "-1"], None);
    assert_eq!(bad.status.code(), Some(1));
}
