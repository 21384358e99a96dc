//! Sampled trajectories: construction, CSV ingestion, segmentation, and
//! synthetic generation through a fixed-step RK4 integrator.
//!
//! A trajectory is a strictly increasing time grid plus one state vector per
//! time. Times are re-based so the first sample sits at t = 0; only
//! durations, integrals, and endpoint states enter the decomposition, so
//! absolute offsets carry no information. Sampling may be non-uniform; the
//! quadrature module picks an appropriate rule per grid.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-stamped state samples of one path of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Array2<f64>, // one sample per row
}

impl Trajectory {
    /// Builds a trajectory, re-basing times so the first sample is t = 0.
    ///
    /// Requires at least two samples, strictly increasing times, and finite
    /// values throughout; `states` holds one sample per row.
    pub fn new(mut times: Vec<f64>, states: Array2<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a trajectory needs at least 2 samples, got {}",
                times.len()
            )));
        }
        if times.len() != states.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if states.ncols() == 0 {
            return Err(Error::InvalidInput(
                "state dimension must be at least 1".into(),
            ));
        }
        if !times.iter().all(|t| t.is_finite()) || !states.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(
                "times and states must be finite".into(),
            ));
        }
        let t0 = times[0];
        if t0 != 0.0 {
            for t in times.iter_mut() {
                *t -= t0;
            }
        }
        for (i, pair) in times.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(Error::InvalidInput(format!(
                    "times must be strictly increasing; sample {} has t = {} after t = {}",
                    i + 1,
                    pair[1],
                    pair[0]
                )));
            }
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    /// State dimension n.
    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    /// Duration T of the re-based trajectory.
    pub fn duration(&self) -> f64 {
        *self.times.last().expect("at least two samples")
    }

    pub fn start_state(&self) -> ArrayView1<'_, f64> {
        self.states.row(0)
    }

    pub fn end_state(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.states.nrows() - 1)
    }

    /// Writes the trajectory as CSV with header `t,x1,...,xn` using 17
    /// significant digits, enough to round-trip every f64 exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push('t');
        for j in 0..self.dim() {
            out.push_str(&format!(",x{}", j + 1));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(self.states.rows()) {
            out.push_str(&format!("{t:.16e}"));
            for x in row.iter() {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(out.as_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// How trajectory CSV data is laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    /// Each file holds one trajectory with header `t,x1,...,xn`.
    OneFilePerTrajectory,
    /// A single file with a leading integer `traj_id` column; rows are
    /// grouped by id and time-sorted within each id.
    SingleFileWithId,
}

/// Loads trajectories from a file or directory.
///
/// With [`InputLayout::OneFilePerTrajectory`] a directory is scanned for
/// `.csv` files in lexicographic filename order. Times are re-based so each
/// trajectory starts at t = 0.
pub fn load_trajectories(path: &Path, layout: InputLayout) -> Result<Vec<Trajectory>> {
    match layout {
        InputLayout::OneFilePerTrajectory => {
            if path.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(path)
                    .map_err(|source| Error::Io {
                        path: path.to_path_buf(),
                        source,
                    })?
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(|source| Error::Io {
                        path: path.to_path_buf(),
                        source,
                    })?
                    .into_iter()
                    .map(|entry| entry.path())
                    .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                    .collect();
                files.sort();
                files.iter().map(|f| load_single_file(f)).collect()
            } else {
                Ok(vec![load_single_file(path)?])
            }
        }
        InputLayout::SingleFileWithId => load_grouped_file(path),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })
}

fn parse_cell(path: &Path, line: u64, field: &str) -> Result<f64> {
    let value: f64 = field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric cell {field:?}"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(value)
}

fn record_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        csv::ErrorKind::UnequalLengths { pos, len, expected_len } => Error::Parse {
            path: path.to_path_buf(),
            line: pos.as_ref().map_or(line, csv::Position::line),
            message: format!("ragged row: {len} fields where {expected_len} were expected"),
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn load_single_file(path: &Path) -> Result<Trajectory> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| record_error(path, e))?.clone();
    if headers.get(0).map(str::trim) != Some("t") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header starting with `t`".into(),
        });
    }
    let dim = headers.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected at least one state column after `t`".into(),
        });
    }

    let mut times = Vec::new();
    let mut flat = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| record_error(path, e))?;
        let line = record.position().map_or(0, csv::Position::line);
        let t = parse_cell(path, line, record.get(0).unwrap_or(""))?;
        if let Some(prev) = times.last() {
            if t <= *prev {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-increasing time: {t} after {prev}"),
                });
            }
        }
        times.push(t);
        for j in 1..headers.len() {
            flat.push(parse_cell(path, line, record.get(j).unwrap_or(""))?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("a trajectory needs at least 2 samples, got {}", times.len()),
        });
    }
    let rows = times.len();
    let states = Array2::from_shape_vec((rows, dim), flat)
        .expect("row-major sample buffer matches its declared shape");
    Trajectory::new(times, states)
}

fn load_grouped_file(path: &Path) -> Result<Vec<Trajectory>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| record_error(path, e))?.clone();
    if headers.get(0).map(str::trim) != Some("traj_id") || headers.get(1).map(str::trim) != Some("t")
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header starting with `traj_id,t`".into(),
        });
    }
    let dim = headers.len().saturating_sub(2);
    if dim == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected at least one state column after `traj_id,t`".into(),
        });
    }

    // (id, times, flattened states) in first-appearance order
    let mut groups: Vec<(i64, Vec<f64>, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| record_error(path, e))?;
        let line = record.position().map_or(0, csv::Position::line);
        let id_field = record.get(0).unwrap_or("");
        let id: i64 = id_field.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-integer traj_id {id_field:?}"),
        })?;
        let is_current = groups.last().is_some_and(|g| g.0 == id);
        if !is_current {
            if groups.iter().any(|g| g.0 == id) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("traj_id {id} appears in non-contiguous blocks"),
                });
            }
            groups.push((id, Vec::new(), Vec::new()));
        }
        let group = groups.last_mut().expect("group pushed above");
        let t = parse_cell(path, line, record.get(1).unwrap_or(""))?;
        if let Some(prev) = group.1.last() {
            if t <= *prev {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-increasing time: {t} after {prev} within traj_id {id}"),
                });
            }
        }
        group.1.push(t);
        for j in 2..headers.len() {
            group.2.push(parse_cell(path, line, record.get(j).unwrap_or(""))?);
        }
    }

    groups
        .into_iter()
        .map(|(id, times, flat)| {
            if times.len() < 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("traj_id {id} has fewer than 2 samples"),
                });
            }
            let rows = times.len();
            let states = Array2::from_shape_vec((rows, dim), flat)
                .expect("row-major sample buffer matches its declared shape");
            Trajectory::new(times, states)
        })
        .collect()
}

/// Splits a trajectory into consecutive non-overlapping windows of
/// `samples_per_segment` samples. A trailing remainder with at least two
/// samples becomes a final shorter segment; a single leftover sample is
/// dropped. Each segment is re-based to start at t = 0.
pub fn segment(traj: &Trajectory, samples_per_segment: usize) -> Result<Vec<Trajectory>> {
    segment_with_stride(traj, samples_per_segment, samples_per_segment)
}

/// [`segment`] with an explicit window stride.
///
/// Windows of `len` samples start at 0, `stride`, `2*stride`, ... while they
/// fit; `stride < len` yields overlapping windows (151 samples with `len = 5`
/// and `stride = 1` give 147 windows). The remainder rule only applies in the
/// non-overlapping case `stride == len`.
pub fn segment_with_stride(traj: &Trajectory, len: usize, stride: usize) -> Result<Vec<Trajectory>> {
    if len < 2 {
        return Err(Error::InvalidInput(format!(
            "segment length must be at least 2, got {len}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidInput("segment stride must be at least 1".into()));
    }
    let total = traj.num_samples();
    if total < len {
        return Err(Error::InvalidInput(format!(
            "trajectory has {total} samples, fewer than the segment length {len}"
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= total {
        out.push(slice_trajectory(traj, start, start + len)?);
        start += stride;
    }
    if stride == len && start < total && total - start >= 2 {
        out.push(slice_trajectory(traj, start, total)?);
    }
    Ok(out)
}

fn slice_trajectory(traj: &Trajectory, start: usize, end: usize) -> Result<Trajectory> {
    Trajectory::new(
        traj.times()[start..end].to_vec(),
        traj.states().slice(s![start..end, ..]).to_owned(),
    )
}

/// Dynamics callback for [`VectorFieldSpec::Custom`].
pub type FieldFn = Arc<dyn Fn(ArrayView1<f64>) -> Array1<f64> + Send + Sync>;

/// Right-hand side f of `dx/dt = f(x)`, used to manufacture ground-truth
/// data for tests and the `synth` command.
#[derive(Clone)]
pub enum VectorFieldSpec {
    /// `dx/dt = A x` for a square matrix A.
    LinearSystem(Array2<f64>),
    /// Van der Pol oscillator with damping parameter mu.
    VanDerPol(f64),
    /// Arbitrary user-supplied dynamics.
    Custom { dim: usize, field: FieldFn },
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LinearSystem(a) => f.debug_tuple("LinearSystem").field(a).finish(),
            Self::VanDerPol(mu) => f.debug_tuple("VanDerPol").field(mu).finish(),
            Self::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl VectorFieldSpec {
    /// Linear dynamics `dx/dt = A x`; A must be square.
    pub fn linear(a: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "linear system matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self::LinearSystem(a))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::LinearSystem(a) => a.nrows(),
            Self::VanDerPol(_) => 2,
            Self::Custom { dim, .. } => *dim,
        }
    }

    fn deriv(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match self {
            Self::LinearSystem(a) => a.dot(&x),
            Self::VanDerPol(mu) => {
                ndarray::array![x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]]
            }
            Self::Custom { field, .. } => field(x),
        }
    }
}

/// Integrates `dx/dt = f(x)` with fixed-step classical RK4, sampling at
/// `t = 0, dt, 2 dt, ..., floor(t_final / dt) * dt`.
pub fn simulate(
    field: &VectorFieldSpec,
    x0: ArrayView1<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidInput(format!(
            "simulation horizon must be positive, got {t_final}"
        )));
    }
    if !(dt > 0.0) || dt > t_final {
        return Err(Error::InvalidInput(format!(
            "time step must satisfy 0 < dt <= {t_final}, got {dt}"
        )));
    }
    if x0.len() != field.dim() {
        return Err(Error::InvalidInput(format!(
            "initial condition has dimension {} but the field expects {}",
            x0.len(),
            field.dim()
        )));
    }
    // tolerate t_final/dt landing just below an integer
    let steps = (t_final / dt + 1e-9).floor() as usize;
    let n = x0.len();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Array2::zeros((steps + 1, n));
    let mut x = x0.to_owned();
    times.push(0.0);
    states.row_mut(0).assign(&x);
    for p in 1..=steps {
        let k1 = field.deriv(x.view());
        let k2 = field.deriv((&x + &(&k1 * (dt / 2.0))).view());
        let k3 = field.deriv((&x + &(&k2 * (dt / 2.0))).view());
        let k4 = field.deriv((&x + &(&k3 * dt)).view());
        x += &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
        let t = p as f64 * dt;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        states.row_mut(p).assign(&x);
    }
    Trajectory::new(times, states)
}
