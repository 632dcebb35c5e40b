//! Python module `lauerl`.
//!
//! Observations cross the boundary as 84x84 nested lists, frames as flat
//! row-major lists; `numpy.asarray` accepts both directly.

use std::path::PathBuf;

use laue::env::{LaueEnv, StepInfo};
use laue::geometry::{angular_distance as distance_to_targets, beam_axis, reflection_allowed as allowed, CrystalSpec, Mat3, SpaceGroup};
use laue::inference::{hough_fine_align, Calibration};
use laue::pattern_io::{extract_spots as extract, frame_to_observation, read_frame as read, RawFrame};
use laue::render::{Observation, OBS_SIZE};
use laue::simulator::{DetectorGeometry, LaueSimulator, WavelengthBand};
use lauerl_cli::commands::{load_agent, load_classifier, spot_canvas};
use lauerl_cli::config::RunConfig;
use lauerl_cli::CliError;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: impl Into<CliError>) -> PyErr {
    match e.into() {
        CliError::Config(m) => PyValueError::new_err(m),
        CliError::Data(m) => PyOSError::new_err(m),
        CliError::Other(m) => PyRuntimeError::new_err(m),
    }
}

/// A CLI configuration document, or the named preset when none is given.
fn run_config(preset: &str, config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => RunConfig::from_json(text).map_err(py_err),
        None => RunConfig::from_json(&format!("{{\"version\": 1, \"preset\": {preset:?}}}")).map_err(py_err),
    }
}

type Grid = Vec<Vec<f32>>;

fn to_grid(obs: &Observation) -> Grid {
    obs.data.chunks(OBS_SIZE).map(<[f32]>::to_vec).collect()
}

fn from_grid(grid: Grid) -> PyResult<Observation> {
    if grid.len() != OBS_SIZE || grid.iter().any(|r| r.len() != OBS_SIZE) {
        return Err(PyValueError::new_err(format!("observation must be {OBS_SIZE}x{OBS_SIZE}")));
    }
    Ok(Observation { data: grid.into_iter().flatten().collect() })
}

fn to_matrix(m: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| m[i][j])
}

fn from_matrix(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn info_dict<'py>(py: Python<'py>, info: &StepInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("distance_deg", info.distance_deg)?;
    d.set_item("theta_cum", info.theta_cum)?;
    d.set_item("phi_cum", info.phi_cum)?;
    d.set_item("step", info.step)?;
    Ok(d)
}

fn load(path: PathBuf) -> PyResult<RawFrame> {
    read(&path).map_err(py_err)
}

/// Whether reflection (h, k, l) survives the centering conditions of a space group.
#[pyfunction]
fn reflection_allowed(space_group: u16, h: i32, k: i32, l: i32) -> PyResult<bool> {
    let spec = CrystalSpec::preset(SpaceGroup::from_number(space_group).map_err(py_err)?);
    allowed(&spec, h, k, l).map_err(py_err)
}

/// Spots `(x_px, y_px, hkl, intensity)` for an orientation matrix, preset lattice.
#[pyfunction]
#[pyo3(signature = (space_group, orientation, distance_cm=None))]
fn simulate_spots(space_group: u16, orientation: [[f64; 3]; 3], distance_cm: Option<f64>) -> PyResult<Vec<(f64, f64, Option<(i32, i32, i32)>, f64)>> {
    let spec = CrystalSpec::preset(SpaceGroup::from_number(space_group).map_err(py_err)?);
    let mut det = DetectorGeometry::default();
    if let Some(d) = distance_cm {
        det = det.with_distance(d);
    }
    let sim = LaueSimulator::new(&spec).map_err(py_err)?;
    let spots = sim.compute(&to_matrix(orientation), &det, &WavelengthBand::default()).map_err(py_err)?;
    Ok(spots.iter().map(|s| (s.x_px, s.y_px, s.hkl.map(|[h, k, l]| (h, k, l)), s.intensity)).collect())
}

/// `(width, height, pixels)` of a 16-bit PGM or TIFF frame.
#[pyfunction]
fn read_frame(path: PathBuf) -> PyResult<(usize, usize, Vec<u16>)> {
    let f = load(path)?;
    Ok((f.width, f.height, f.data))
}

/// Detected spot centers `(x_px, y_px, response)` in detector pixels.
#[pyfunction]
#[pyo3(signature = (path, preset="cubic", config=None))]
fn extract_spots(path: PathBuf, preset: &str, config: Option<&str>) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = run_config(preset, config)?;
    let spots = extract(&load(path)?, &cfg.pipeline, &cfg.env.detector);
    Ok(spots.iter().map(|s| (s.x_px, s.y_px, s.intensity)).collect())
}

/// The agent observation for a recorded frame.
#[pyfunction]
#[pyo3(signature = (path, preset="cubic", config=None))]
fn frame_observation(path: PathBuf, preset: &str, config: Option<&str>) -> PyResult<Grid> {
    let cfg = run_config(preset, config)?;
    Ok(to_grid(&frame_to_observation(&load(path)?, &cfg.pipeline, &cfg.env.detector).0))
}

/// Hough correction `(delta_theta_deg, delta_phi_deg)` for a near-aligned frame.
#[pyfunction]
#[pyo3(signature = (path, k1, preset="cubic", config=None))]
fn fine_align(path: PathBuf, k1: f64, preset: &str, config: Option<&str>) -> PyResult<(f64, f64)> {
    let cfg = run_config(preset, config)?;
    let spots = extract(&load(path)?, &cfg.pipeline, &cfg.env.detector);
    let r = hough_fine_align(&spot_canvas(&spots, &cfg), &cfg.env.detector, &Calibration { k1 }).map_err(py_err)?;
    Ok((r.delta_theta_deg, r.delta_phi_deg))
}

/// The alignment environment.
#[pyclass]
struct Env {
    inner: LaueEnv,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (preset="cubic", seed=0, config=None))]
    fn new(preset: &str, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let cfg = run_config(preset, config)?;
        Ok(Self { inner: LaueEnv::new(cfg.env, seed).map_err(py_err)? })
    }

    /// `(observation, info)`.
    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<(Grid, Bound<'py, PyDict>)> {
        let (obs, info) = self.inner.reset().map_err(py_err)?;
        Ok((to_grid(&obs), info_dict(py, &info)?))
    }

    /// `(observation, reward, terminated, truncated, info)`.
    fn step<'py>(&mut self, py: Python<'py>, action: (f64, f64)) -> PyResult<(Grid, f64, bool, bool, Bound<'py, PyDict>)> {
        let r = self.inner.step([action.0, action.1]).map_err(py_err)?;
        Ok((to_grid(&r.observation), r.reward, r.terminated, r.truncated, info_dict(py, &r.info)?))
    }

    /// The scripted controller's action for the current state.
    fn oracle_action(&self) -> Option<(f64, f64)> {
        self.inner.oracle_action().map(|a| (a[0], a[1]))
    }

    /// Current crystal orientation in the lab frame.
    fn orientation(&self) -> Option<[[f64; 3]; 3]> {
        self.inner.episode().map(|e| from_matrix(&e.orientation()))
    }

    /// Angle between the beam and the nearest target axis.
    fn distance_deg(&self) -> Option<f64> {
        let targets = self.inner.targets();
        self.inner.episode().map(|e| distance_to_targets(&e.orientation(), targets, &beam_axis()))
    }
}

/// A trained actor loaded from a weights file.
#[pyclass]
struct Agent {
    inner: laue::agent::Agent,
}

#[pymethods]
impl Agent {
    #[staticmethod]
    #[pyo3(signature = (path, preset="cubic", config=None))]
    fn load(path: PathBuf, preset: &str, config: Option<&str>) -> PyResult<Self> {
        let cfg = run_config(preset, config)?;
        Ok(Self { inner: load_agent(&path, &cfg).map_err(py_err)? })
    }

    /// Deterministic action in [-1, 1]^2.
    fn act(&self, observation: Grid) -> PyResult<(f64, f64)> {
        let obs = from_grid(observation)?;
        let a = self.inner.act(&obs, 0.0, 0.0, true, &mut ChaCha8Rng::seed_from_u64(0)).map_err(py_err)?;
        Ok((a[0], a[1]))
    }
}

/// The four-class orientation classifier.
#[pyclass]
struct Classifier {
    inner: laue::inference::Classifier,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    #[pyo3(signature = (path, preset="cubic", config=None))]
    fn load(path: PathBuf, preset: &str, config: Option<&str>) -> PyResult<Self> {
        let cfg = run_config(preset, config)?;
        Ok(Self { inner: load_classifier(&path, &cfg).map_err(py_err)? })
    }

    /// `(label, probabilities)`.
    fn classify(&self, observation: Grid) -> PyResult<(usize, Vec<f64>)> {
        let c = self.inner.classify(&from_grid(observation)?).map_err(py_err)?;
        Ok((c.label, c.probabilities.to_vec()))
    }
}

#[pymodule]
#[pyo3(name = "lauerl")]
fn lauerl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OBS_SIZE", OBS_SIZE)?;
    m.add_function(wrap_pyfunction!(reflection_allowed, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_spots, m)?)?;
    m.add_function(wrap_pyfunction!(read_frame, m)?)?;
    m.add_function(wrap_pyfunction!(extract_spots, m)?)?;
    m.add_function(wrap_pyfunction!(frame_observation, m)?)?;
    m.add_function(wrap_pyfunction!(fine_align, m)?)?;
    m.add_class::<Env>()?;
    m.add_class::<Agent>()?;
    m.add_class::<Classifier>()?;
    Ok(())
}
