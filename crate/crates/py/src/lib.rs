//! Python bindings: schedules, ego-velocity estimation, point-cloud metrics
//! and a simulated radar frame that can be encoded and refined.
//!
//! Volumes cross the boundary as flat lists in range-major order
//! (`index = (r * A + a) * E + e`); velocities and points as 3-tuples.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sddiff_core::cube::{adc_to_cube, cube_to_sddr, Sddr, Window, DEFAULT_VALIDITY_FLOOR};
use sddiff_core::eve::{self, DopplerObservation, EgoVelocity};
use sddiff_core::metrics::{self, EmdMode, MetricParams, PointCloud};
use sddiff_core::pipeline::{refine, ShrinkageParams};
use sddiff_core::schedule;
use sddiff_core::simulate::{ground_truth, inject_ghosts, random_scene, synthesize_adc, RadarConfig, Scene};

type Vec3 = (f64, f64, f64);

fn err(e: sddiff_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ego(v: Vec3) -> EgoVelocity {
    EgoVelocity::new(v.0, v.1, v.2)
}

fn tuple(v: EgoVelocity) -> Vec3 {
    (v.vx, v.vy, v.vz)
}

fn observations(obs: Vec<(f64, f64, f64, f64)>) -> Vec<DopplerObservation> {
    obs.into_iter().map(|(a, e, v, w)| DopplerObservation::new(a, e, v, w)).collect()
}

fn cloud(points: Vec<Vec3>) -> PyResult<PointCloud> {
    PointCloud::from_positions(points.into_iter().map(|p| [p.0, p.1, p.2])).map_err(err)
}

fn check_step(s: &schedule::Schedule, t: usize) -> PyResult<()> {
    if t == 0 || t > s.steps() {
        return Err(PyValueError::new_err(format!("step {t} outside 1..={}", s.steps())));
    }
    Ok(())
}

/// Directional diffusion schedule.
#[pyclass(frozen)]
struct Schedule {
    inner: schedule::Schedule,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (steps=20, alpha_bar_start=0.99, alpha_bar_end=0.01, noise_scale=0.1))]
    fn new(steps: usize, alpha_bar_start: f64, alpha_bar_end: f64, noise_scale: f64) -> PyResult<Self> {
        let inner = schedule::Schedule::linear(steps, alpha_bar_start, alpha_bar_end, noise_scale).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_parts(alpha_bar: Vec<f64>, noise_scale: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: schedule::Schedule::from_parts(alpha_bar, noise_scale).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: schedule::Schedule::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        check_step(&self.inner, t)?;
        Ok(self.inner.alpha_bar(t))
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        check_step(&self.inner, t)?;
        Ok(self.inner.beta(t))
    }

    fn sigma_sq(&self, t: usize) -> PyResult<f64> {
        check_step(&self.inner, t)?;
        Ok(self.inner.sigma_sq(t))
    }

    fn __len__(&self) -> usize {
        self.inner.steps()
    }

    fn __repr__(&self) -> String {
        format!("Schedule(steps={}, max_sigma={:.4})", self.inner.steps(), self.inner.max_sigma())
    }
}

/// Radial velocity seen at a bearing while moving with `ego`.
#[pyfunction]
fn radial_velocity(azimuth: f64, elevation: f64, ego_velocity: Vec3) -> f64 {
    eve::radial_velocity(azimuth, elevation, ego(ego_velocity))
}

/// Weighted least-squares ego velocity from `(azimuth, elevation, v_r, weight)` rows.
#[pyfunction]
fn eve_wls(obs: Vec<(f64, f64, f64, f64)>) -> PyResult<Vec3> {
    eve::eve_wls(&observations(obs)).map(tuple).map_err(err)
}

/// RANSAC ego velocity; returns `(velocity, inlier flags, inlier rate)`.
#[pyfunction]
#[pyo3(signature = (obs, threshold=0.08, iterations=500, seed=0))]
fn eve_ransac(obs: Vec<(f64, f64, f64, f64)>, threshold: f64, iterations: usize, seed: u64) -> PyResult<(Vec3, Vec<bool>, f64)> {
    let fit = eve::eve_ransac(&observations(obs), threshold, iterations, seed).map_err(err)?;
    Ok((tuple(fit.velocity), fit.inliers, fit.inlier_rate))
}

#[pyfunction]
fn chamfer(p: Vec<Vec3>, q: Vec<Vec3>) -> PyResult<f64> {
    metrics::chamfer(&cloud(p)?, &cloud(q)?).map_err(err)
}

#[pyfunction]
fn modified_hausdorff(p: Vec<Vec3>, q: Vec<Vec3>) -> PyResult<f64> {
    metrics::modified_hausdorff(&cloud(p)?, &cloud(q)?).map_err(err)
}

/// Earth mover's distance; `mode` is "exact" or "approximate".
#[pyfunction]
#[pyo3(signature = (p, q, mode="exact"))]
fn emd(p: Vec<Vec3>, q: Vec<Vec3>, mode: &str) -> PyResult<f64> {
    let mode: EmdMode = mode.parse().map_err(err)?;
    metrics::emd(&cloud(p)?, &cloud(q)?, mode).map_err(err)
}

/// VPR, SRL and EGD of `pred` against `truth`, with the set sizes behind them.
#[pyfunction]
#[pyo3(signature = (pred, truth, tau1=0.3, tau2=0.3))]
fn quality<'py>(py: Python<'py>, pred: Vec<Vec3>, truth: Vec<Vec3>, tau1: f64, tau2: f64) -> PyResult<Bound<'py, PyDict>> {
    let params = MetricParams::new(tau1, tau2).map_err(err)?;
    let q = metrics::quality(&cloud(pred)?, &cloud(truth)?, &params).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("vpr", q.vpr)?;
    d.set_item("srl", q.srl)?;
    d.set_item("egd", q.egd)?;
    d.set_item("predicted", q.predicted)?;
    d.set_item("reference", q.reference)?;
    d.set_item("clutter", q.clutter)?;
    d.set_item("shot", q.shot)?;
    Ok(d)
}

/// One simulated frame under the default radar: the scene, its encoded
/// SDDR and the exact ground truth.
#[pyclass(frozen)]
struct Frame {
    cfg: RadarConfig,
    scene: Scene,
    sddr: Sddr,
    truth: PointCloud,
}

#[pymethods]
impl Frame {
    #[new]
    #[pyo3(signature = (scatterers, ego_velocity, seed=0, ghost_fraction=0.0, noise_floor=0.01))]
    fn new(scatterers: usize, ego_velocity: Vec3, seed: u64, ghost_fraction: f64, noise_floor: f64) -> PyResult<Self> {
        let cfg = RadarConfig::default();
        let scene = random_scene(&cfg, scatterers, ego(ego_velocity), 0.8, 0.4, seed);
        let scene = inject_ghosts(&scene, &cfg, ghost_fraction, seed.wrapping_add(1)).map_err(err)?;
        let adc = synthesize_adc(&scene, &cfg, seed.wrapping_add(2), noise_floor).map_err(err)?;
        let cube = adc_to_cube(&adc, &cfg, Window::Hann).map_err(err)?;
        let sddr = cube_to_sddr(&cube, DEFAULT_VALIDITY_FLOOR);
        let (truth, _) = ground_truth(&scene, &cfg);
        Ok(Self { cfg, scene, sddr, truth })
    }

    /// `(range, azimuth, elevation)` bins.
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [r, a, e] = self.sddr.occupancy.dims();
        (r, a, e)
    }

    #[getter]
    fn ego_velocity(&self) -> Vec3 {
        tuple(self.scene.ego_velocity)
    }

    #[getter]
    fn ghosts(&self) -> usize {
        self.scene.ghost_count()
    }

    #[getter]
    fn occupancy(&self) -> Vec<f64> {
        self.sddr.occupancy.values().to_vec()
    }

    /// Per-cell Doppler, `None` where no valid return was seen.
    #[getter]
    fn doppler(&self) -> Vec<Option<f64>> {
        self.sddr.doppler.velocities().to_vec()
    }

    /// Scatterer positions without ghosts.
    fn truth_points(&self) -> Vec<Vec3> {
        self.truth.positions().into_iter().map(|p| (p[0], p[1], p[2])).collect()
    }

    /// Exact per-scatterer observations, Doppler snapped to bins if `quantize`.
    #[pyo3(signature = (quantize=true))]
    fn scene_observations(&self, quantize: bool) -> Vec<(f64, f64, f64, f64)> {
        self.scene
            .observations(&self.cfg, quantize)
            .into_iter()
            .map(|o| (o.azimuth, o.elevation, o.radial_velocity, o.weight))
            .collect()
    }

    /// Cells above `threshold` as Cartesian points.
    #[pyo3(signature = (threshold=0.3, max_points=4096))]
    fn points(&self, threshold: f64, max_points: usize) -> PyResult<Vec<Vec3>> {
        let pc = metrics::sddr_to_points(&self.sddr, threshold, max_points).map_err(err)?;
        Ok(pc.positions().into_iter().map(|p| (p[0], p[1], p[2])).collect())
    }

    /// Shrinkage refinement; returns `(occupancy, raw ego, refined ego)`.
    #[pyo3(signature = (seed=0, steps=20))]
    fn refine(&self, seed: u64, steps: usize) -> PyResult<(Vec<f64>, Vec3, Vec3)> {
        let s = schedule::Schedule::linear(steps, 0.99, 0.01, 0.1).map_err(err)?;
        let r = refine(&self.sddr, &s, ShrinkageParams::default(), seed).map_err(err)?;
        Ok((r.occupancy.values().to_vec(), tuple(r.ego_raw), tuple(r.ego_refined)))
    }

    fn __repr__(&self) -> String {
        format!("Frame(scatterers={}, ghosts={})", self.scene.scatterers.len(), self.scene.ghost_count())
    }
}

#[pymodule]
pub fn sddiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schedule>()?;
    m.add_class::<Frame>()?;
    m.add_function(wrap_pyfunction!(radial_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(eve_wls, m)?)?;
    m.add_function(wrap_pyfunction!(eve_ransac, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(modified_hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(emd, m)?)?;
    m.add_function(wrap_pyfunction!(quality, m)?)?;
    Ok(())
}
