use std::process::Command;

fn varpose() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varpose"))
}

#[test]
fn default_config_is_the_case1_preset() {
    let out = varpose().arg("--print-default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = varpose::harness::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, varpose::harness::ExperimentConfig::preset(varpose::harness::Preset::Case1));
}

#[test]
fn run_writes_identical_outputs_for_identical_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "estimator_horizon = 4.0\n[gains]\nkappa = 2.0\n").unwrap();
    for sub in ["a", "b"] {
        let status = varpose()
            .args(["run", "--preset", "case2", "--seed", "11", "--noise-width", "0.002", "--velocity-source", "gyro"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    let a = std::fs::read_to_string(dir.path().join("a/trace.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/trace.csv")).unwrap();
    assert!(a == b);
    assert_eq!(a.lines().count(), 1 + 201);
    let written = std::fs::read_to_string(dir.path().join("a/config.toml")).unwrap();
    let cfg = varpose::harness::ExperimentConfig::from_toml(&written).unwrap();
    assert_eq!((cfg.seed, cfg.gains.kappa, cfg.sensors.noise_width), (11, 2.0, 0.002));
    assert_eq!(cfg.sensors.half_angle_deg, 25.0);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[gains]\nkapa = 1.0\n").unwrap();
    let out = varpose().arg("run").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gains.kapa"));

    let out = varpose().args(["run", "--config"]).arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&bad, "dt = -1.0\n").unwrap();
    let out = varpose().arg("run").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = varpose().args(["sweep", "--vary", "gains.nope=1,2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "estimator_horizon = 2.0\n").unwrap();
    let out = varpose()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .args(["--vary", "seed=1,2,3", "--vary", "gains.kappa=0.5,-1"])
        .arg("--out")
        .arg(dir.path().join("sw"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    // A negative κ is rejected per cell; the others still run.
    assert_eq!(rows.iter().filter(|r| r.contains(",ok,")).count(), 3);
    assert!(dir.path().join("sw/cell_000/trace.csv").exists());
}
