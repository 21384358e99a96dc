//! The four subcommands: decompose, reconstruct, spectrum, synth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use liouville_dmd::{
    load_trajectories, segment_with_stride, simulate, DecompositionModel, Error, FileDigest,
    InputLayout, ModelFile, ModelProvenance, QuadratureRule, Result, Trajectory,
    TransposeVariant, VectorFieldSpec, WeightedTrajectory,
};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ModeOrder, Overrides, RunConfig};
use crate::output::{fmt_f64, log_magnitude, ArtifactSet};
use crate::{DecomposeArgs, ReconstructArgs, SpectrumArgs, SynthArgs, SystemArg};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn data_error(path: &Path, message: &str) -> Error {
    io_error(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, message.to_string()),
    )
}

/// Input files in the order `load_trajectories` will read them.
fn list_input_files(path: &Path, layout: InputLayout) -> Result<Vec<PathBuf>> {
    match layout {
        InputLayout::OneFilePerTrajectory if path.is_dir() => {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| io_error(path, e))?
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|e| io_error(path, e))?
                .into_iter()
                .map(|entry| entry.path())
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            files.sort();
            Ok(files)
        }
        _ => Ok(vec![path.to_path_buf()]),
    }
}

fn digest_files(files: &[PathBuf]) -> Result<Vec<FileDigest>> {
    files
        .iter()
        .map(|path| {
            let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let digest = hasher.finalize();
            let mut hex = String::with_capacity(64);
            for b in digest {
                hex.push_str(&format!("{b:02x}"));
            }
            Ok(FileDigest {
                name: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: hex,
            })
        })
        .collect()
}

fn prepare_trajectories(
    input: &Path,
    layout: InputLayout,
    segment_len: Option<usize>,
    segment_stride: Option<usize>,
    quadrature: QuadratureRule,
) -> Result<Vec<WeightedTrajectory>> {
    let trajs = load_trajectories(input, layout)?;
    if trajs.is_empty() {
        return Err(data_error(input, "no trajectories found"));
    }
    let segmented: Vec<Trajectory> = match segment_len {
        Some(len) => {
            let stride = segment_stride.unwrap_or(len);
            let mut out = Vec::new();
            for traj in &trajs {
                out.extend(segment_with_stride(traj, len, stride)?);
            }
            out
        }
        None => trajs,
    };
    segmented
        .into_iter()
        .map(|t| WeightedTrajectory::new(t, quadrature))
        .collect()
}

#[derive(Serialize)]
struct Timings {
    load_ms: u128,
    fit_ms: u128,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'static str,
    kernel: &'a liouville_dmd::KernelSpec,
    scaling: f64,
    eps: f64,
    eps_hat: f64,
    quadrature_requested: QuadratureRule,
    quadrature_rules_used: BTreeMap<String, usize>,
    segment_len: Option<usize>,
    segment_stride: Option<usize>,
    layout: InputLayout,
    mode_order: &'a str,
    transpose: TransposeVariant,
    num_input_files: usize,
    num_trajectories: usize,
    num_modes: usize,
    state_dim: usize,
    /// Trajectory endpoints are taken from the raw first/last samples.
    endpoint_estimate: &'static str,
    /// Eigenpairs with Gram norm below this (relative to sqrt(trace G))
    /// are discarded as orthogonal to the data span.
    degenerate_eigenvector_threshold: f64,
    input_files: &'a [FileDigest],
    timings: Timings,
}

fn eigenvalues_csv(model: &DecompositionModel) -> String {
    let mut out = String::from("index,re,im\n");
    for (i, lam) in model.eigenvalues().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            fmt_f64(lam.re),
            fmt_f64(lam.im)
        ));
    }
    out
}

fn modes_csv(model: &DecompositionModel) -> String {
    let m = model.num_modes();
    let n = model.state_dim();
    let mut out = String::new();
    for i in 0..m {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("mode{0}_re,mode{0}_im", i + 1));
    }
    out.push('\n');
    let modes = model.modes();
    for j in 0..n {
        for i in 0..m {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(modes[[j, i]].re));
            out.push(',');
            out.push_str(&fmt_f64(modes[[j, i]].im));
        }
        out.push('\n');
    }
    out
}

pub fn decompose(args: DecomposeArgs) -> Result<()> {
    let cfg = RunConfig::resolve(
        args.config.as_deref(),
        Overrides {
            kernel: args.kernel,
            mu: args.mu,
            scale_a: args.scale_a,
            eps: args.eps,
            quadrature: args.quadrature,
            segment_len: args.segment_len,
            segment_stride: args.segment_stride,
            order: args.order,
            modes_transpose: args.modes_transpose,
            layout: args.layout,
        },
    )?;
    let x0 = args.x0.map(Array1::from_vec);
    if cfg.order == ModeOrder::Energy && x0.is_none() {
        return Err(Error::InvalidInput(
            "--order energy requires --x0".to_string(),
        ));
    }

    let files = list_input_files(&args.input, cfg.layout)?;
    if files.is_empty() {
        return Err(data_error(&args.input, "no trajectories found"));
    }
    let digests = digest_files(&files)?;

    let started = Instant::now();
    let wts = prepare_trajectories(
        &args.input,
        cfg.layout,
        cfg.segment_len,
        cfg.segment_stride,
        cfg.quadrature,
    )?;
    let load_ms = started.elapsed().as_millis();

    let fit_started = Instant::now();
    let mut model = DecompositionModel::fit(
        wts,
        cfg.kernel,
        cfg.scaling,
        cfg.eps,
        cfg.transpose,
    )?;
    if cfg.order == ModeOrder::Energy {
        let x0 = x0.as_ref().expect("checked above");
        model.reorder_by_energy(x0.view())?;
    }
    let fit_ms = fit_started.elapsed().as_millis();

    let mut rules_used: BTreeMap<String, usize> = BTreeMap::new();
    for wt in model.trajectories() {
        let name = serde_json::to_value(wt.weights().rule_used())
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_else(|| format!("{:?}", wt.weights().rule_used()));
        *rules_used.entry(name).or_insert(0) += 1;
    }

    let provenance = ModelProvenance {
        quadrature: cfg.quadrature,
        segment_len: cfg.segment_len,
        segment_stride: cfg.segment_stride.or(cfg.segment_len),
        input_layout: cfg.layout,
        input_path: args.input.to_string_lossy().into_owned(),
        input_files: digests.clone(),
    };
    let model_file = ModelFile::from_model(&model, provenance);
    let meta = RunMeta {
        command: "decompose",
        kernel: model.kernel(),
        scaling: model.scaling(),
        eps: model.eps(),
        eps_hat: model.eps_hat(),
        quadrature_requested: cfg.quadrature,
        quadrature_rules_used: rules_used,
        segment_len: cfg.segment_len,
        segment_stride: cfg.segment_stride.or(cfg.segment_len),
        layout: cfg.layout,
        mode_order: cfg.order.as_str(),
        transpose: cfg.transpose,
        num_input_files: files.len(),
        num_trajectories: model.num_trajectories(),
        num_modes: model.num_modes(),
        state_dim: model.state_dim(),
        endpoint_estimate: "raw samples",
        degenerate_eigenvector_threshold:
            liouville_dmd::decomposition::DEGENERATE_EIGENVECTOR_THRESHOLD,
        input_files: &digests,
        timings: Timings { load_ms, fit_ms },
    };

    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut artifacts = ArtifactSet::new();
    let result = (|| -> Result<()> {
        artifacts.write(
            &args.out.join("model.json"),
            model_file.to_json()?.as_bytes(),
        )?;
        artifacts.write(
            &args.out.join("eigenvalues.csv"),
            eigenvalues_csv(&model).as_bytes(),
        )?;
        artifacts.write(&args.out.join("modes.csv"), modes_csv(&model).as_bytes())?;
        let meta_json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        artifacts.write(&args.out.join("run_meta.json"), meta_json.as_bytes())?;
        Ok(())
    })();
    if result.is_err() {
        artifacts.discard();
    }
    result
}

/// Loads a model file, digest-checks the trajectory data, and rebuilds the
/// in-memory model.
fn load_model_with_data(
    model_path: &Path,
    data_override: Option<&Path>,
) -> Result<DecompositionModel> {
    let file = ModelFile::load(model_path)?;
    let data_path = data_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&file.input_path));
    let files = list_input_files(&data_path, file.input_layout)?;
    let digests = digest_files(&files)?;
    if digests != file.input_files {
        return Err(Error::StaleModel(format!(
            "trajectory data under {} does not match the digests recorded in {}",
            data_path.display(),
            model_path.display()
        )));
    }
    let wts = prepare_trajectories(
        &data_path,
        file.input_layout,
        file.segment_len,
        file.segment_stride,
        file.quadrature,
    )?;
    file.instantiate(wts)
}

fn parse_t_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let usage = || {
        Error::InvalidInput(format!(
            "--t-grid must be start:stop:count with count >= 2, got {spec:?}"
        ))
    };
    if parts.len() != 3 {
        return Err(usage());
    }
    let start: f64 = parts[0].parse().map_err(|_| usage())?;
    let stop: f64 = parts[1].parse().map_err(|_| usage())?;
    let count: usize = parts[2].parse().map_err(|_| usage())?;
    if count < 2 || !(stop > start) {
        return Err(usage());
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let model = load_model_with_data(&args.model, args.data.as_deref())?;
    let x0 = Array1::from_vec(args.x0);
    let grid = parse_t_grid(&args.t_grid)?;
    let recon = model.reconstruct(x0.view(), &grid)?;
    if recon.extrapolated {
        eprintln!(
            "note: grid extends past the longest training duration {}",
            model.max_duration()
        );
    }

    let n = model.state_dim();
    let mut csv = String::from("t");
    for j in 0..n {
        csv.push_str(&format!(",x{}", j + 1));
    }
    csv.push_str(",imag_residual\n");
    for (row, (&t, residual)) in recon
        .requested_times
        .iter()
        .zip(&recon.imag_residuals)
        .enumerate()
    {
        csv.push_str(&fmt_f64(t));
        for j in 0..n {
            csv.push(',');
            csv.push_str(&fmt_f64(recon.trajectory.states()[[row, j]]));
        }
        csv.push(',');
        csv.push_str(&fmt_f64(*residual));
        csv.push('\n');
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut artifacts = ArtifactSet::new();
    artifacts.write(&args.out.join("reconstruction.csv"), csv.as_bytes())
}

pub fn spectrum(args: SpectrumArgs) -> Result<()> {
    let model = load_model_with_data(&args.model, args.data.as_deref())?;
    let x0 = Array1::from_vec(args.x0);
    let entries = model.spectrum(x0.view())?;

    let mut csv = String::from("frequency_hz,magnitude\n");
    for entry in &entries {
        let magnitude = if args.log {
            log_magnitude(entry.magnitude)
        } else {
            entry.magnitude
        };
        csv.push_str(&format!(
            "{},{}\n",
            fmt_f64(entry.frequency_hz),
            fmt_f64(magnitude)
        ));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut artifacts = ArtifactSet::new();
    artifacts.write(&args.out.join("spectrum.csv"), csv.as_bytes())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if !(args.t_final > 0.0) || !(args.dt > 0.0) || args.dt > args.t_final {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt <= t-final, got dt = {}, t-final = {}",
            args.dt, args.t_final
        )));
    }
    if args.noise < 0.0 {
        return Err(Error::InvalidInput(format!(
            "--noise must be non-negative, got {}",
            args.noise
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    // record the generator settings so a run can be reproduced exactly
    if args.count > 0 {
        #[derive(Serialize)]
        struct SynthMeta<'a> {
            command: &'static str,
            system: &'a str,
            count: usize,
            t_final: f64,
            dt: f64,
            seed: u64,
            freq: f64,
            noise: f64,
        }
        let meta = SynthMeta {
            command: "synth",
            system: match args.system {
                SystemArg::Oscillator => "oscillator",
                SystemArg::Decay => "decay",
                SystemArg::Vdp => "vdp",
                SystemArg::Sine => "sine",
            },
            count: args.count,
            t_final: args.t_final,
            dt: args.dt,
            seed: args.seed,
            freq: args.freq,
            noise: args.noise,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        crate::output::write_atomic(&args.out.join("synth_meta.json"), json.as_bytes())?;
    }

    for index in 0..args.count {
        let traj = match args.system {
            SystemArg::Oscillator => {
                let field =
                    VectorFieldSpec::linear(array![[0.0, 1.0], [-1.0, 0.0]]).expect("square");
                let x0 = random_unit_box(&mut rng, 2);
                simulate(&field, x0.view(), args.t_final, args.dt)?
            }
            SystemArg::Decay => {
                let field =
                    VectorFieldSpec::linear(array![[-1.0, 0.0], [0.0, -2.0]]).expect("square");
                let x0 = random_unit_box(&mut rng, 2);
                simulate(&field, x0.view(), args.t_final, args.dt)?
            }
            SystemArg::Vdp => {
                let field = VectorFieldSpec::VanDerPol(1.0);
                let x0 = random_unit_box(&mut rng, 2);
                simulate(&field, x0.view(), args.t_final, args.dt)?
            }
            SystemArg::Sine => sine_trajectory(&mut rng, &args)?,
        };
        let path = args.out.join(format!("traj_{index:04}.csv"));
        traj.save_csv(&path)?;
    }
    Ok(())
}

fn random_unit_box(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)))
}

/// Scalar `sin(2 pi f t + phase) + noise`, phase uniform in [0, 2 pi).
fn sine_trajectory(rng: &mut ChaCha8Rng, args: &SynthArgs) -> Result<Trajectory> {
    let steps = (args.t_final / args.dt + 1e-9).floor() as usize;
    let phase = rng.random_range(0.0..(2.0 * std::f64::consts::PI));
    let normal = Normal::new(0.0, 1.0).expect("unit sigma");
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * args.dt).collect();
    let mut states = Array2::zeros((steps + 1, 1));
    for (i, &t) in times.iter().enumerate() {
        let noise = if args.noise > 0.0 {
            args.noise * normal.sample(rng)
        } else {
            0.0
        };
        states[[i, 0]] = (2.0 * std::f64::consts::PI * args.freq * t + phase).sin() + noise;
    }
    Trajectory::new(times, states)
}
