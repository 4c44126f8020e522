//! Python bindings for the racing environment and policies. Observations
//! cross the boundary as flat `[C*H*W]` lists of floats with the shape
//! reported separately.

use std::collections::HashMap;
use std::sync::Arc;

use attnracer::config::load_track;
use attnracer::env::{BotConfig, EnvConfig, Environment, RacingEnv};
use attnracer::eval;
use attnracer::kinematics::{slip_angle as slip, VehicleParams};
use attnracer::policy::{NetworkSpec, Policy};
use attnracer::render::DomainAppearance;
use attnracer::tensor::Tensor;
use attnracer::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) => PyIOError::new_err(e.to_string()),
        Error::TrainingAborted(_) | Error::Numeric { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn env_config(bots: usize) -> EnvConfig {
    EnvConfig {
        bots: BotConfig {
            count: bots,
            ..BotConfig::default()
        },
        ..EnvConfig::default()
    }
}

/// Vision-only racing environment. `step` resets automatically at the end
/// of an episode and reports how it ended.
#[pyclass(unsendable, name = "RacingEnv")]
struct PyRacingEnv {
    inner: RacingEnv,
}

#[pymethods]
impl PyRacingEnv {
    #[new]
    #[pyo3(signature = (track = "loop-A", appearance = "asphalt", seed = 0, bots = 0))]
    fn new(track: &str, appearance: &str, seed: u64, bots: usize) -> PyResult<Self> {
        let track = Arc::new(load_track(track).map_err(to_py)?);
        let app = DomainAppearance::named(appearance).map_err(to_py)?;
        let inner = RacingEnv::new(track, app, env_config(bots), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    /// `(C, H, W)`.
    #[getter]
    fn observation_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.observation().shape();
        (s[0], s[1], s[2])
    }

    #[getter]
    fn progress(&self) -> f64 {
        self.inner.progress_fraction()
    }

    fn observation(&self) -> Vec<f64> {
        self.inner.observation().data().to_vec()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset();
        self.observation()
    }

    /// Returns `(reward, done, status)`; status is `None` mid-episode.
    fn step(&mut self, action: usize) -> PyResult<(f64, bool, Option<String>)> {
        let t = self.inner.step(action).map_err(to_py)?;
        Ok((t.reward, t.done, t.outcome.map(|o| format!("{:?}", o.status))))
    }
}

/// A policy network, trained or freshly initialised.
#[pyclass(unsendable, name = "Policy")]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    /// Loads a checkpoint written by training (its `network.json` must sit
    /// beside it).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Policy::load(path).map_err(to_py)?,
        })
    }

    /// Untrained network for the default 64×48 camera and 5×3 action grid.
    #[staticmethod]
    #[pyo3(signature = (name, seed = 0))]
    fn preset(name: &str, seed: u64) -> PyResult<Self> {
        let cfg = EnvConfig::default();
        let input = (3, cfg.camera.height, cfg.camera.width);
        let spec = NetworkSpec::preset(name, input, cfg.actions.steering_bins, cfg.actions.throttle_bins())
            .map_err(to_py)?;
        Ok(Self {
            inner: Policy::new(spec, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec().name.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Greedy action and value estimate for one flat observation.
    fn act(&self, observation: Vec<f64>) -> PyResult<(usize, f64)> {
        let (c, h, w) = self.inner.spec().input;
        let obs = Tensor::new(vec![c, h, w], observation).map_err(to_py)?;
        let (out, _) = self.inner.forward(&obs).map_err(to_py)?;
        Ok((out.greedy(), out.value))
    }

    /// Attention weights over the final feature map, row-major `[H', W']`;
    /// `None` for networks without attention.
    fn attention(&self, observation: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        let (c, h, w) = self.inner.spec().input;
        let obs = Tensor::new(vec![c, h, w], observation).map_err(to_py)?;
        let (_, att) = self.inner.forward(&obs).map_err(to_py)?;
        Ok(att.map(|a| a.weights.data().to_vec()))
    }

    /// Greedy evaluation; returns the summary metrics.
    #[pyo3(signature = (track = "loop-A", appearance = "asphalt", episodes = 5, seed = 0, bots = 0))]
    fn evaluate(
        &self,
        track: &str,
        appearance: &str,
        episodes: usize,
        seed: u64,
        bots: usize,
    ) -> PyResult<HashMap<String, f64>> {
        let track = Arc::new(load_track(track).map_err(to_py)?);
        let app = DomainAppearance::named(appearance).map_err(to_py)?;
        let s = eval::evaluate(&self.inner, track, &app, &env_config(bots), episodes, seed)
            .map_err(to_py)?
            .summary;
        Ok(HashMap::from([
            ("completion_rate".into(), s.completion_rate),
            ("mean_progress".into(), s.mean_progress),
            ("mean_speed".into(), s.mean_speed),
            ("episodes".into(), s.episodes as f64),
            ("off_track_count".into(), s.off_track_count as f64),
            ("crash_count".into(), s.crash_count as f64),
        ]))
    }
}

/// Slip angle β for front steering `delta` under the default vehicle.
#[pyfunction]
fn slip_angle(delta: f64) -> PyResult<f64> {
    slip(&VehicleParams::default(), delta).map_err(to_py)
}

#[pyfunction]
fn network_presets() -> Vec<&'static str> {
    attnracer::policy::preset_names().to_vec()
}

#[pymodule]
fn attnracer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRacingEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(slip_angle, m)?)?;
    m.add_function(wrap_pyfunction!(network_presets, m)?)?;
    Ok(())
}
