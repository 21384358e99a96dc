//! Contract tests for the `ldmd` binary: artifacts, exit codes, messages.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ldmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldmd"))
        .args(args)
        .output()
        .expect("spawn ldmd")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_oscillator(dir: &Path, count: usize, seed: u64) {
    let out = ldmd(&[
        "synth",
        "--system",
        "oscillator",
        "--count",
        &count.to_string(),
        "--t-final",
        "1.0",
        "--dt",
        "0.01",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    synth_oscillator(&a, 3, 42);
    synth_oscillator(&b, 3, 42);
    synth_oscillator(&c, 3, 43);
    for i in 0..3 {
        let name = format!("traj_{i:04}.csv");
        let bytes_a = fs::read(a.join(&name)).unwrap();
        let bytes_b = fs::read(b.join(&name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical seeds");
    }
    assert_ne!(
        fs::read(a.join("traj_0000.csv")).unwrap(),
        fs::read(c.join("traj_0000.csv")).unwrap(),
        "different seeds should differ"
    );
}

#[test]
fn synth_zero_count_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    synth_oscillator(&out_dir, 0, 1);
    assert_eq!(fs::read_dir(&out_dir).unwrap().count(), 0);
}

#[test]
fn synth_unknown_system_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldmd(&[
        "synth",
        "--system",
        "lorenz",
        "--count",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn decompose_writes_all_artifacts_with_one_row_per_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth_oscillator(&data, 10, 7);
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["model.json", "eigenvalues.csv", "modes.csv", "run_meta.json"] {
        assert!(run.join(name).exists(), "{name} missing");
    }
    let eigen = fs::read_to_string(run.join("eigenvalues.csv")).unwrap();
    let lines: Vec<&str> = eigen.trim_end().lines().collect();
    assert_eq!(lines[0], "index,re,im");
    assert_eq!(lines.len(), 11, "header plus one row per trajectory");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["num_input_files"], 10);
    assert_eq!(meta["num_trajectories"], 10);
    assert_eq!(meta["endpoint_estimate"], "raw samples");
    assert!(meta["eps_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn decompose_empty_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let run = dir.path().join("run");
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("no trajectories found"), "{}", stderr(&out));
    assert!(!run.join("eigenvalues.csv").exists(), "no partial artifacts");
}

#[test]
fn decompose_corrupt_csv_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("bad.csv"), "t,x1\n0.0,1.0\n0.5,two\n").unwrap();
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("bad.csv:3"), "{msg}");
}

#[test]
fn decompose_energy_order_requires_x0() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_oscillator(&data, 2, 1);
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--order",
        "energy",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn decompose_rejects_out_of_range_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_oscillator(&data, 2, 1);
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--scale-a",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_file_values_lose_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_oscillator(&data, 3, 3);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "mu = 1.0\nscale_a = 0.9\n").unwrap();
    let run = dir.path().join("run");
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--mu",
        "5.0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["kernel"]["mu"], 5.0, "flag wins");
    assert_eq!(meta["scaling"], 0.9, "config file fills the gap");
}

#[test]
fn reconstruct_two_point_grid_and_digest_check() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth_oscillator(&data, 4, 11);
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let rec = dir.path().join("rec");
    let out = ldmd(&[
        "reconstruct",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--x0",
        "0.5,0.0",
        "--t-grid",
        "0:1:2",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(rec.join("reconstruction.csv")).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(lines[0], "t,x1,x2,imag_residual");
    assert_eq!(lines.len(), 3, "header plus two rows");

    // tampering with a data file must be caught by the digest check
    let victim = data.join("traj_0001.csv");
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push_str("9.9e0,0.0e0,0.0e0\n");
    fs::write(&victim, text).unwrap();
    let out = ldmd(&[
        "reconstruct",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--x0",
        "0.5,0.0",
        "--t-grid",
        "0:1:2",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("stale model"), "{}", stderr(&out));
}

#[test]
fn spectrum_rows_and_log_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth_oscillator(&data, 4, 19);
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--mu",
        "5.0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let spec_dir = dir.path().join("spec");
    let out = ldmd(&[
        "spectrum",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--x0",
        "0.5,0.0",
        "--out",
        spec_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let plain = fs::read_to_string(spec_dir.join("spectrum.csv")).unwrap();
    let rows: Vec<&str> = plain.trim_end().lines().skip(1).collect();
    // one row per eigenvalue with non-negative imaginary part
    let eigen = fs::read_to_string(run.join("eigenvalues.csv")).unwrap();
    let nonneg = eigen
        .trim_end()
        .lines()
        .skip(1)
        .filter(|l| {
            let im: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
            im >= 0.0
        })
        .count();
    assert_eq!(rows.len(), nonneg);
    for row in &rows {
        let mag: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(mag >= 0.0);
    }

    let out = ldmd(&[
        "spectrum",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--x0",
        "0.5,0.0",
        "--log",
        "--out",
        spec_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let logged = fs::read_to_string(spec_dir.join("spectrum.csv")).unwrap();
    for (row, lrow) in plain
        .trim_end()
        .lines()
        .skip(1)
        .zip(logged.trim_end().lines().skip(1))
    {
        let mag: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        let lmag: f64 = lrow.split(',').nth(1).unwrap().parse().unwrap();
        assert!((lmag - mag.max(1e-12).log10()).abs() < 1e-12);
    }
}

#[test]
fn reconstruct_reproduces_a_training_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let out = ldmd(&[
        "synth",
        "--system",
        "oscillator",
        "--count",
        "10",
        "--t-final",
        "1.0",
        "--dt",
        "0.005",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--mu",
        "5.0",
        "--segment-len",
        "40",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // initial condition and reference samples from the first training file
    let train = fs::read_to_string(data.join("traj_0000.csv")).unwrap();
    let rows: Vec<Vec<f64>> = train
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    let x0 = format!("{},{}", rows[0][1], rows[0][2]);

    let rec_dir = dir.path().join("rec");
    let out = ldmd(&[
        "reconstruct",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--x0",
        &x0,
        "--t-grid",
        "0:1:201",
        "--out",
        rec_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rec = fs::read_to_string(rec_dir.join("reconstruction.csv")).unwrap();
    let mut sq = 0.0;
    let mut count = 0usize;
    for line in rec.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        // the training file is sampled at the same 201 times
        let reference = &rows[count];
        assert!((cells[0] - reference[0]).abs() < 1e-12);
        sq += (cells[1] - reference[1]).powi(2) + (cells[2] - reference[2]).powi(2);
        count += 1;
    }
    let rmse = (sq / count as f64).sqrt();
    assert!(rmse < 0.05, "training-trajectory RMSE {rmse}");
}

#[test]
fn non_uniform_sampling_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    // irregular grids fall back to trapezoid weights
    for k in 0..4 {
        let mut text = String::from("t,x1,x2\n");
        let mut t = 0.0f64;
        for i in 0..80 {
            let x: f64 = 0.5 + 0.1 * k as f64;
            text.push_str(&format!("{t},{},{}\n", x * t.cos(), -x * t.sin()));
            t += if i % 3 == 0 { 0.013 } else { 0.011 };
        }
        fs::write(data.join(format!("t{k}.csv")), text).unwrap();
    }
    let run = dir.path().join("run");
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--mu",
        "5.0",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["quadrature_rules_used"]["trapezoid"], 4);
}

#[test]
fn single_file_with_id_layout_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("all.csv");
    let mut text = String::from("traj_id,t,x1\n");
    for id in 0..3 {
        for i in 0..40 {
            let t = i as f64 * 0.025;
            text.push_str(&format!("{id},{t},{}\n", (t + id as f64).sin()));
        }
    }
    fs::write(&data, text).unwrap();
    let run = dir.path().join("run");
    let out = ldmd(&[
        "decompose",
        "--input",
        data.to_str().unwrap(),
        "--layout",
        "with-id",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let eigen = fs::read_to_string(run.join("eigenvalues.csv")).unwrap();
    assert_eq!(eigen.trim_end().lines().count(), 4, "header plus three rows");
}
