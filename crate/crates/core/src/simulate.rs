//! Synthetic FMCW radar frames with exact ground truth.
//!
//! Each point scatterer contributes one complex exponential per ADC sample
//! with three linear phase ramps: fast time (beat frequency, proportional to
//! range), slow time across chirps (proportional to radial velocity) and the
//! two virtual-array axes (proportional to the direction cosines).
//!
//! The virtual array lies in the y-z plane: `azimuth_elements` along y and
//! `elevation_elements` along z, antenna index `p * elevation_elements + q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cube::{PolarGrid, Sddr};
use crate::diffusion::{DopplerProfile, Volume};
use crate::eve::{line_of_sight, DopplerObservation, EgoVelocity};
use crate::metrics::PointCloud;
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub azimuth_elements: usize,
    pub elevation_elements: usize,
    /// Element pitch in wavelengths.
    pub element_spacing: f64,
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Swept bandwidth, Hz.
    pub bandwidth: f64,
    /// Chirp repetition interval, s.
    pub chirp_duration: f64,
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub doppler_bins: usize,
    /// Apply 1/r^2 amplitude falloff.
    #[serde(default)]
    pub range_falloff: bool,
}

impl Default for RadarConfig {
    /// 77 GHz single-chip radar: 8x4 virtual array, 15 cm range bins,
    /// +-2.5 m/s unambiguous Doppler over 64 chirps.
    fn default() -> Self {
        let wavelength = SPEED_OF_LIGHT / 77e9;
        Self {
            samples_per_chirp: 32,
            chirps_per_frame: 64,
            azimuth_elements: 8,
            elevation_elements: 4,
            element_spacing: 0.5,
            wavelength,
            bandwidth: 1e9,
            chirp_duration: wavelength / (4.0 * 2.5),
            range_bins: 32,
            azimuth_bins: 16,
            elevation_bins: 8,
            doppler_bins: 64,
            range_falloff: false,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("samples_per_chirp", self.samples_per_chirp),
            ("chirps_per_frame", self.chirps_per_frame),
            ("azimuth_elements", self.azimuth_elements),
            ("elevation_elements", self.elevation_elements),
            ("range_bins", self.range_bins),
            ("azimuth_bins", self.azimuth_bins),
            ("elevation_bins", self.elevation_bins),
            ("doppler_bins", self.doppler_bins),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
        if self.doppler_bins != self.chirps_per_frame {
            return Err(Error::InvalidParameter("doppler_bins must equal chirps_per_frame".into()));
        }
        if self.range_bins > self.samples_per_chirp {
            return Err(Error::InvalidParameter("range_bins cannot exceed samples_per_chirp".into()));
        }
        if self.azimuth_bins < self.azimuth_elements || self.elevation_bins < self.elevation_elements {
            return Err(Error::InvalidParameter("angle bins must cover the physical array".into()));
        }
        for (name, v) in [
            ("element_spacing", self.element_spacing),
            ("wavelength", self.wavelength),
            ("bandwidth", self.bandwidth),
            ("chirp_duration", self.chirp_duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn antennas(&self) -> usize {
        self.azimuth_elements * self.elevation_elements
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    /// Unambiguous Doppler span, `wavelength / (4 chirp_duration)`.
    pub fn v_max(&self) -> f64 {
        self.wavelength / (4.0 * self.chirp_duration)
    }

    pub fn min_range(&self) -> f64 {
        self.range_resolution()
    }

    pub fn max_range(&self) -> f64 {
        (self.range_bins - 1) as f64 * self.range_resolution()
    }

    pub fn grid(&self) -> PolarGrid {
        PolarGrid {
            range_bins: self.range_bins,
            azimuth_bins: self.azimuth_bins,
            elevation_bins: self.elevation_bins,
            doppler_bins: self.doppler_bins,
            range_resolution: self.range_resolution(),
            element_spacing: self.element_spacing,
            v_max: self.v_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Cartesian position, m.
    pub position: [f64; 3],
    /// Linear amplitude.
    pub reflectivity: f64,
    #[serde(default)]
    pub is_ghost: bool,
    #[serde(default)]
    pub own_velocity: [f64; 3],
    /// Forced radial velocity; set on ghosts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler: Option<f64>,
}

impl Scatterer {
    pub fn new(position: [f64; 3], reflectivity: f64) -> Self {
        Self { position, reflectivity, is_ghost: false, own_velocity: [0.0; 3], doppler: None }
    }

    pub fn range(&self) -> f64 {
        norm(self.position)
    }

    /// `(azimuth, elevation)` in radians.
    pub fn bearing(&self) -> (f64, f64) {
        let [x, y, z] = self.position;
        let r = self.range();
        (y.atan2(x), (z / r).clamp(-1.0, 1.0).asin())
    }

    /// Radial velocity the radar measures: the forced value for ghosts,
    /// otherwise the line-of-sight projection of `ego - own_velocity`.
    pub fn radial_velocity(&self, ego: EgoVelocity) -> f64 {
        if let Some(v) = self.doppler {
            return v;
        }
        let (a, e) = self.bearing();
        let d = line_of_sight(a, e);
        let rel = [ego.vx - self.own_velocity[0], ego.vy - self.own_velocity[1], ego.vz - self.own_velocity[2]];
        d[0] * rel[0] + d[1] * rel[1] + d[2] * rel[2]
    }
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    pub ego_velocity: EgoVelocity,
}

impl Scene {
    pub fn new(scatterers: Vec<Scatterer>, ego_velocity: EgoVelocity) -> Self {
        Self { scatterers, ego_velocity }
    }

    pub fn ghost_count(&self) -> usize {
        self.scatterers.iter().filter(|s| s.is_ghost).count()
    }

    /// Checks every scatterer against range, field-of-view and Doppler
    /// coverage of `cfg`.
    pub fn validate(&self, cfg: &RadarConfig) -> Result<()> {
        let grid = cfg.grid();
        for (index, s) in self.scatterers.iter().enumerate() {
            let reject = |reason: String| Error::ScattererOutOfCoverage { index, reason };
            if !s.position.iter().all(|v| v.is_finite()) || !s.reflectivity.is_finite() || s.reflectivity < 0.0 {
                return Err(reject("non-finite position or negative reflectivity".into()));
            }
            let r = s.range();
            if r < cfg.min_range() || r > cfg.max_range() {
                return Err(reject(format!(
                    "range {r:.3} m outside [{:.3}, {:.3}]",
                    cfg.min_range(),
                    cfg.max_range()
                )));
            }
            if s.position[0] <= 0.0 {
                return Err(reject("behind the array plane".into()));
            }
            if grid.cell_of(s.position).is_none() {
                return Err(reject("direction outside the angle grid".into()));
            }
            let v = s.radial_velocity(self.ego_velocity);
            if v.abs() >= cfg.v_max() {
                return Err(reject(format!("radial velocity {v:.3} m/s aliases beyond +-{:.3}", cfg.v_max())));
            }
        }
        Ok(())
    }

    /// One Doppler observation per scatterer at its exact bearing. With
    /// `quantize`, velocities snap to the Doppler bin centres of `cfg`.
    pub fn observations(&self, cfg: &RadarConfig, quantize: bool) -> Vec<DopplerObservation> {
        let grid = cfg.grid();
        self.scatterers
            .iter()
            .map(|s| {
                let (a, e) = s.bearing();
                let mut v = s.radial_velocity(self.ego_velocity);
                if quantize {
                    v = grid.bin_to_velocity(grid.velocity_to_bin(v));
                }
                DopplerObservation::new(a, e, v, 1.0)
            })
            .collect()
    }
}

/// Complex ADC samples indexed `(antenna, chirp, sample)`, sample fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcFrame {
    dims: [usize; 3],
    samples: Vec<Complex64>,
}

impl AdcFrame {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, samples: vec![Complex64::new(0.0, 0.0); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 3], samples: Vec<Complex64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if samples.len() != n {
            return Err(Error::DimensionMismatch { expected: vec![n], found: vec![samples.len()] });
        }
        if samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidParameter("ADC samples must be finite".into()));
        }
        Ok(Self { dims, samples })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn get(&self, antenna: usize, chirp: usize, sample: usize) -> Complex64 {
        self.samples[(antenna * self.dims[1] + chirp) * self.dims[2] + sample]
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Sums the three-ramp point-scatterer model over the scene and adds
/// circular Gaussian noise with total per-sample standard deviation
/// `noise_floor`.
pub fn synthesize_adc(scene: &Scene, cfg: &RadarConfig, seed: u64, noise_floor: f64) -> Result<AdcFrame> {
    cfg.validate()?;
    scene.validate(cfg)?;
    if !(noise_floor >= 0.0 && noise_floor.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise floor {noise_floor} must be non-negative")));
    }
    let ns = cfg.samples_per_chirp;
    let nc = cfg.chirps_per_frame;
    let (pa, pe) = (cfg.azimuth_elements, cfg.elevation_elements);
    let mut frame = AdcFrame::zeros([pa * pe, nc, ns]);
    let tau = std::f64::consts::TAU;
    let dr = cfg.range_resolution();
    let d = cfg.element_spacing;

    for s in &scene.scatterers {
        let r = s.range();
        let [_, y, z] = s.position;
        let range_cycles = r / dr / ns as f64;
        let doppler_cycles = s.radial_velocity(scene.ego_velocity) / (2.0 * cfg.v_max());
        let az_cycles = d * y / r;
        let el_cycles = d * z / r;
        let mut amp = s.reflectivity;
        if cfg.range_falloff {
            amp /= r * r;
        }
        let carrier = 2.0 * tau * r / cfg.wavelength;
        let fast: Vec<Complex64> = (0..ns).map(|n| Complex64::from_polar(1.0, tau * range_cycles * n as f64)).collect();
        for p in 0..pa {
            for q in 0..pe {
                let ant = p * pe + q;
                let spatial = tau * (az_cycles * p as f64 + el_cycles * q as f64);
                for m in 0..nc {
                    let phase = carrier + spatial + tau * doppler_cycles * m as f64;
                    let head = Complex64::from_polar(amp, phase);
                    let base = (ant * nc + m) * ns;
                    for (n, f) in fast.iter().enumerate() {
                        frame.samples[base + n] += head * f;
                    }
                }
            }
        }
    }

    if noise_floor > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = noise_floor / std::f64::consts::SQRT_2;
        for c in &mut frame.samples {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *c += Complex64::new(sd * re, sd * im);
        }
    }
    Ok(frame)
}

/// Appends multipath-style ghosts so that ghosts make up `ghost_fraction` of
/// the scene: `round(n f / (1 - f))` ghosts for `n` real scatterers.
///
/// Each ghost mirrors a random real scatterer across the boresight plane
/// (y -> -y), inflates its range by 20-60 % (clipped to the config's
/// maximum), keeps 50-100 % of its reflectivity and carries a Doppler drawn
/// uniformly in `(-v_max, v_max)`.
pub fn inject_ghosts(scene: &Scene, cfg: &RadarConfig, ghost_fraction: f64, seed: u64) -> Result<Scene> {
    if !(0.0..1.0).contains(&ghost_fraction) {
        return Err(Error::InvalidParameter(format!("ghost fraction {ghost_fraction} must lie in [0, 1)")));
    }
    let real: Vec<&Scatterer> = scene.scatterers.iter().filter(|s| !s.is_ghost).collect();
    let count = (real.len() as f64 * ghost_fraction / (1.0 - ghost_fraction)).round() as usize;
    let mut out = scene.clone();
    if count == 0 || real.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_max = cfg.v_max();
    let r_max = cfg.max_range();
    for _ in 0..count {
        let src = real[rng.random_range(0..real.len())];
        let [x, y, z] = src.position;
        let r = src.range();
        let scale = (rng.random_range(1.2..1.6) * r).min(r_max) / r;
        let position = [x * scale, -y * scale, z * scale];
        let reflectivity = src.reflectivity * rng.random_range(0.5..1.0);
        let doppler = rng.random_range(-v_max..v_max);
        out.scatterers.push(Scatterer {
            position,
            reflectivity,
            is_ghost: true,
            own_velocity: [0.0; 3],
            doppler: Some(doppler),
        });
    }
    Ok(out)
}

/// Truth cloud of the real scatterers and the matching SDDR: occupancy 1 at
/// each scatterer's polar cell, Doppler equal to its radial velocity.
pub fn ground_truth(scene: &Scene, cfg: &RadarConfig) -> (PointCloud, Sddr) {
    let grid = cfg.grid();
    let dims = grid.spatial_dims();
    let mut occupancy = Volume::zeros(dims);
    let mut doppler = DopplerProfile::empty(dims, grid.v_max);
    let mut cloud = PointCloud::default();
    for s in scene.scatterers.iter().filter(|s| !s.is_ghost) {
        let v = s.radial_velocity(scene.ego_velocity);
        cloud.push_with(s.position, Some(s.reflectivity), Some(v));
        if let Some((k, i, j)) = grid.cell_of(s.position) {
            occupancy.set(k, i, j, 1.0);
            doppler.set(k, i, j, Some(v.clamp(-grid.v_max, grid.v_max)));
        }
    }
    (cloud, Sddr { occupancy, doppler, grid })
}

/// Random static scene: `count` scatterers at distinct polar cells, ranges
/// within the config's coverage and bearings within `max_azimuth` /
/// `max_elevation` (radians). Reflectivities are log-uniform in [0.2, 1].
pub fn random_scene(
    cfg: &RadarConfig,
    count: usize,
    ego: EgoVelocity,
    max_azimuth: f64,
    max_elevation: f64,
    seed: u64,
) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = cfg.grid();
    let mut used = std::collections::HashSet::new();
    let mut scatterers = Vec::with_capacity(count);
    let lo = cfg.min_range() * 2.0;
    let hi = cfg.max_range() * 0.6;
    let mut attempts = 0;
    while scatterers.len() < count && attempts < count * 1000 {
        attempts += 1;
        let r = rng.random_range(lo..hi);
        let a = rng.random_range(-max_azimuth..max_azimuth);
        let e = rng.random_range(-max_elevation..max_elevation);
        let d = line_of_sight(a, e);
        let position = [r * d[0], r * d[1], r * d[2]];
        let Some(cell) = grid.cell_of(position) else { continue };
        if !used.insert(cell) {
            continue;
        }
        let reflectivity = (rng.random_range(0.2f64.ln()..0.0)).exp();
        scatterers.push(Scatterer::new(position, reflectivity));
    }
    Scene::new(scatterers, ego)
}
