//! Radar cube formation and the spatial-Doppler representation.
//!
//! `adc_to_cube` runs four DFTs: fast time to range, chirps to Doppler and
//! the two virtual-array axes to azimuth/elevation (zero-padded to the
//! configured bin counts). Doppler and both angle axes are FFT-shifted so the
//! centre bin is zero velocity / boresight.
//!
//! Angle bins are uniform in direction cosine, not in angle: azimuth bin `i`
//! holds `sin(a) cos(e) = (i - A/2) / (A d)` and elevation bin `j` holds
//! `sin(e) = (j - E/2) / (E d)` for element pitch `d` wavelengths. Cells whose
//! cosines fall outside the unit circle are not visible and have no
//! direction.

use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DopplerProfile, Volume};
use crate::eve::DopplerObservation;
use crate::simulate::{AdcFrame, RadarConfig};
use crate::{Error, Result};

/// Bin-to-physical calibration shared by cubes and SDDRs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub doppler_bins: usize,
    /// m per range bin.
    pub range_resolution: f64,
    /// Element pitch in wavelengths.
    pub element_spacing: f64,
    pub v_max: f64,
}

impl PolarGrid {
    pub const CALIBRATION_LEN: usize = 7;

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.range_bins, self.azimuth_bins, self.elevation_bins]
    }

    pub fn range(&self, k: usize) -> f64 {
        k as f64 * self.range_resolution
    }

    pub fn azimuth_cosine(&self, i: usize) -> f64 {
        (i as f64 - (self.azimuth_bins / 2) as f64) / (self.azimuth_bins as f64 * self.element_spacing)
    }

    pub fn elevation_sine(&self, j: usize) -> f64 {
        (j as f64 - (self.elevation_bins / 2) as f64) / (self.elevation_bins as f64 * self.element_spacing)
    }

    /// `(azimuth, elevation)` of a bearing cell, `None` outside the visible
    /// region.
    pub fn direction(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        let se = self.elevation_sine(j);
        if se.abs() >= 1.0 {
            return None;
        }
        let ce = (1.0 - se * se).sqrt();
        let sa = self.azimuth_cosine(i) / ce;
        if sa.abs() >= 1.0 {
            return None;
        }
        Some((sa.asin(), se.asin()))
    }

    /// Elevation of each elevation bin's centre (NaN where invisible).
    pub fn elevation_grid(&self) -> Vec<f64> {
        (0..self.elevation_bins)
            .map(|j| {
                let s = self.elevation_sine(j);
                if s.abs() < 1.0 {
                    s.asin()
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    /// Azimuth of each azimuth bin's centre at zero elevation.
    pub fn azimuth_grid(&self) -> Vec<f64> {
        (0..self.azimuth_bins)
            .map(|i| {
                let s = self.azimuth_cosine(i);
                if s.abs() < 1.0 {
                    s.asin()
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    /// Polar cell containing a Cartesian point.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<(usize, usize, usize)> {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 || !r.is_finite() {
            return None;
        }
        let k = (r / self.range_resolution).round();
        let i = ((self.azimuth_bins / 2) as f64 + self.azimuth_bins as f64 * self.element_spacing * p[1] / r).round();
        let j = ((self.elevation_bins / 2) as f64 + self.elevation_bins as f64 * self.element_spacing * p[2] / r).round();
        let inside = |v: f64, n: usize| v >= 0.0 && v < n as f64;
        if !inside(k, self.range_bins) || !inside(i, self.azimuth_bins) || !inside(j, self.elevation_bins) {
            return None;
        }
        Some((k as usize, i as usize, j as usize))
    }

    /// Cartesian centre of a polar cell.
    pub fn cell_center(&self, k: usize, i: usize, j: usize) -> Option<[f64; 3]> {
        let (a, e) = self.direction(i, j)?;
        Some(polar_to_cartesian(self.range(k), a, e))
    }

    pub fn velocity_resolution(&self) -> f64 {
        2.0 * self.v_max / self.doppler_bins as f64
    }

    /// `(bin - D/2) * 2 v_max / D`, unchecked.
    pub fn bin_to_velocity(&self, bin: usize) -> f64 {
        (bin as f64 - (self.doppler_bins / 2) as f64) * self.velocity_resolution()
    }

    /// Nearest Doppler bin, clipped to the axis.
    pub fn velocity_to_bin(&self, v: f64) -> usize {
        let b = (v / self.velocity_resolution() + (self.doppler_bins / 2) as f64).round();
        b.clamp(0.0, (self.doppler_bins - 1) as f64) as usize
    }

    pub fn to_calibration(&self) -> Vec<f64> {
        vec![
            self.range_bins as f64,
            self.azimuth_bins as f64,
            self.elevation_bins as f64,
            self.doppler_bins as f64,
            self.range_resolution,
            self.element_spacing,
            self.v_max,
        ]
    }

    pub fn from_calibration(c: &[f64]) -> Result<Self> {
        if c.len() != Self::CALIBRATION_LEN {
            return Err(Error::Format(format!("calibration block has {} values, expected 7", c.len())));
        }
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("bad bin count {v} in calibration")))
            }
        };
        Ok(Self {
            range_bins: count(c[0])?,
            azimuth_bins: count(c[1])?,
            elevation_bins: count(c[2])?,
            doppler_bins: count(c[3])?,
            range_resolution: c[4],
            element_spacing: c[5],
            v_max: c[6],
        })
    }
}

/// Spherical `(range, azimuth, elevation)` to Cartesian (x boresight, y
/// left, z up).
pub fn polar_to_cartesian(range: f64, azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    [range * ca * ce, range * sa * ce, range * se]
}

/// Checked Doppler calibration for one bin of `cfg`.
pub fn doppler_bin_to_velocity(bin: usize, cfg: &RadarConfig) -> Result<f64> {
    if bin >= cfg.doppler_bins {
        return Err(Error::InvalidParameter(format!("Doppler bin {bin} outside 0..{}", cfg.doppler_bins)));
    }
    Ok(cfg.grid().bin_to_velocity(bin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

impl Window {
    /// Periodic coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "rect" | "rectangular" => Ok(Window::None),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(Error::InvalidParameter(format!("unsupported window '{other}' (expected none|hann)"))),
        }
    }
}

/// Non-negative magnitudes over `(range, azimuth, elevation, Doppler)`,
/// Doppler fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    pub grid: PolarGrid,
    magnitude: Vec<f64>,
}

impl RadarCube {
    pub fn from_vec(grid: PolarGrid, magnitude: Vec<f64>) -> Result<Self> {
        let n = grid.range_bins * grid.azimuth_bins * grid.elevation_bins * grid.doppler_bins;
        if magnitude.len() != n {
            return Err(Error::DimensionMismatch { expected: vec![n], found: vec![magnitude.len()] });
        }
        if magnitude.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter("cube magnitudes must be finite and non-negative".into()));
        }
        Ok(Self { grid, magnitude })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.grid.range_bins, self.grid.azimuth_bins, self.grid.elevation_bins, self.grid.doppler_bins]
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitude
    }

    fn offset(&self, k: usize, i: usize, j: usize) -> usize {
        ((k * self.grid.azimuth_bins + i) * self.grid.elevation_bins + j) * self.grid.doppler_bins
    }

    pub fn get(&self, k: usize, i: usize, j: usize, d: usize) -> f64 {
        self.magnitude[self.offset(k, i, j) + d]
    }

    /// Doppler spectrum of one spatial cell.
    pub fn spectrum(&self, k: usize, i: usize, j: usize) -> &[f64] {
        let o = self.offset(k, i, j);
        &self.magnitude[o..o + self.grid.doppler_bins]
    }

    pub fn energy(&self) -> f64 {
        self.magnitude.iter().map(|m| m * m).sum()
    }

    /// Location and value of the global maximum, `(k, i, j, d)`.
    pub fn argmax(&self) -> ([usize; 4], f64) {
        let (idx, v) = self
            .magnitude
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        let [_, a, e, d] = self.dims();
        ([idx / (a * e * d), (idx / (e * d)) % a, (idx / d) % e, idx % d], v)
    }

    /// Ratio of the highest to the second-highest local maximum along the
    /// (circular) Doppler axis of one cell; infinite for a single peak.
    pub fn peak_dominance(&self, k: usize, i: usize, j: usize) -> f64 {
        let s = self.spectrum(k, i, j);
        let n = s.len();
        let mut peaks: Vec<f64> = (0..n)
            .filter(|d| {
                let prev = s[(d + n - 1) % n];
                let next = s[(d + 1) % n];
                s[*d] > prev && s[*d] >= next
            })
            .map(|d| s[d])
            .collect();
        peaks.sort_by(|a, b| b.total_cmp(a));
        match peaks.as_slice() {
            [] => 1.0,
            [_] => f64::INFINITY,
            [first, second, ..] => {
                if *second > 0.0 {
                    first / second
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Windowed 4D DFT of one ADC frame. Magnitudes are normalized so a
/// unit-amplitude scatterer centred on a bin reads 1.
///
/// The window applies to fast time and chirps; the short array axes are
/// left unwindowed.
pub fn adc_to_cube(adc: &AdcFrame, cfg: &RadarConfig, window: Window) -> Result<RadarCube> {
    cfg.validate()?;
    let (ns, nc) = (cfg.samples_per_chirp, cfg.chirps_per_frame);
    let (pa, pe) = (cfg.azimuth_elements, cfg.elevation_elements);
    let expected = [pa * pe, nc, ns];
    if adc.dims() != expected {
        return Err(Error::DimensionMismatch { expected: expected.to_vec(), found: adc.dims().to_vec() });
    }
    let grid = cfg.grid();
    let (rb, ab, eb, db) = (cfg.range_bins, cfg.azimuth_bins, cfg.elevation_bins, cfg.doppler_bins);

    let wr = window.coefficients(ns);
    let wd = window.coefficients(nc);
    let gain = wr.iter().sum::<f64>() * wd.iter().sum::<f64>() * (pa * pe) as f64;

    let mut planner = FftPlanner::<f64>::new();
    let fft_r = planner.plan_fft_forward(ns);
    let fft_d = planner.plan_fft_forward(nc);
    let fft_a = planner.plan_fft_forward(ab);
    let fft_e = planner.plan_fft_forward(eb);

    // range: [ant][chirp][k], first rb bins kept
    let mut ranged = vec![Complex64::new(0.0, 0.0); pa * pe * nc * rb];
    let mut buf = vec![Complex64::new(0.0, 0.0); ns];
    for ant in 0..pa * pe {
        for m in 0..nc {
            for n in 0..ns {
                buf[n] = adc.get(ant, m, n) * wr[n];
            }
            fft_r.process(&mut buf);
            let o = (ant * nc + m) * rb;
            ranged[o..o + rb].copy_from_slice(&buf[..rb]);
        }
    }

    // Doppler: [ant][k][d] with zero velocity at d = D/2
    let mut doppler = vec![Complex64::new(0.0, 0.0); pa * pe * rb * db];
    let mut buf = vec![Complex64::new(0.0, 0.0); nc];
    for ant in 0..pa * pe {
        for k in 0..rb {
            for m in 0..nc {
                buf[m] = ranged[(ant * nc + m) * rb + k] * wd[m];
            }
            fft_d.process(&mut buf);
            for (d, v) in buf.iter().enumerate() {
                doppler[(ant * rb + k) * db + (d + db / 2) % db] = *v;
            }
        }
    }

    // angles: zero-padded 2D DFT per (k, d)
    let mut magnitude = vec![0.0; rb * ab * eb * db];
    let mut plane = vec![Complex64::new(0.0, 0.0); ab * eb];
    let mut col = vec![Complex64::new(0.0, 0.0); ab];
    for k in 0..rb {
        for d in 0..db {
            plane.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for p in 0..pa {
                for q in 0..pe {
                    plane[p * eb + q] = doppler[((p * pe + q) * rb + k) * db + d];
                }
            }
            for row in plane.chunks_mut(eb) {
                fft_e.process(row);
            }
            for j in 0..eb {
                for i in 0..ab {
                    col[i] = plane[i * eb + j];
                }
                fft_a.process(&mut col);
                for i in 0..ab {
                    plane[i * eb + j] = col[i];
                }
            }
            for i in 0..ab {
                for j in 0..eb {
                    let si = (i + ab / 2) % ab;
                    let sj = (j + eb / 2) % eb;
                    magnitude[((k * ab + si) * eb + sj) * db + d] = plane[i * eb + j].norm() / gain;
                }
            }
        }
    }
    RadarCube::from_vec(grid, magnitude)
}

/// Paired occupancy and Doppler fields over the polar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sddr {
    pub occupancy: Volume,
    pub doppler: DopplerProfile,
    pub grid: PolarGrid,
}

pub const DEFAULT_VALIDITY_FLOOR: f64 = 0.05;

impl Sddr {
    /// One observation per valid cell with a visible direction, weighted by
    /// occupancy.
    pub fn observations(&self) -> Vec<DopplerObservation> {
        let [r, a, e] = self.occupancy.dims();
        let mut out = Vec::new();
        for k in 0..r {
            for i in 0..a {
                for j in 0..e {
                    let (Some(v), Some((az, el))) = (self.doppler.get(k, i, j), self.grid.direction(i, j)) else {
                        continue;
                    };
                    out.push(DopplerObservation::new(az, el, v, self.occupancy.get(k, i, j)));
                }
            }
        }
        out
    }
}

/// Collapses the Doppler axis: occupancy is the per-cell spectral peak
/// (globally max-normalized), Doppler is the velocity of the peak bin.
///
/// Ties on the peak resolve toward zero Doppler (then toward the lower bin).
/// Cells below `validity_floor` of the normalized maximum get no velocity.
pub fn cube_to_sddr(cube: &RadarCube, validity_floor: f64) -> Sddr {
    let grid = cube.grid;
    let dims = grid.spatial_dims();
    let db = grid.doppler_bins;
    let centre = db / 2;
    let n = dims.iter().product();
    let mut peak = vec![0.0; n];
    let mut bin = vec![centre; n];
    for (cell, spectrum) in cube.magnitude.chunks(db).enumerate() {
        let mut best = (centre, spectrum[centre]);
        for (d, m) in spectrum.iter().enumerate() {
            let closer = d.abs_diff(centre) < best.0.abs_diff(centre)
                || (d.abs_diff(centre) == best.0.abs_diff(centre) && d < best.0);
            if *m > best.1 || (*m == best.1 && closer) {
                best = (d, *m);
            }
        }
        peak[cell] = best.1;
        bin[cell] = best.0;
    }
    let max = peak.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let mut velocity = vec![None; n];
    for (cell, u) in peak.iter_mut().enumerate() {
        *u *= scale;
        if max > 0.0 && *u >= validity_floor {
            velocity[cell] = Some(grid.bin_to_velocity(bin[cell]));
        }
    }
    Sddr {
        occupancy: Volume::from_vec(dims, peak).expect("finite peaks"),
        doppler: DopplerProfile::from_vec(dims, velocity, grid.v_max).expect("bin velocities within span"),
        grid,
    }
}

pub const DEFAULT_SOFTEN_SIGMAS: [f64; 3] = [0.2, 0.5, 1.0];

fn blur_axis(values: &mut [f64], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    let radius = (kernel.len() - 1) / 2;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let len = dims[axis];
    let stride = strides[axis];
    let src = values.to_vec();
    let mut line = vec![0.0; len];
    for base in 0..values.len() {
        // visit each line once, from its first element
        if (base / stride) % len != 0 {
            continue;
        }
        for (x, out) in line.iter_mut().enumerate() {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(len - 1);
            *out = (lo..=hi).map(|y| src[base + y * stride] * kernel[y + radius - x]).sum();
        }
        for (x, v) in line.iter().enumerate() {
            values[base + x * stride] = *v;
        }
    }
}

/// Gaussian softening of a (binary) occupancy field.
///
/// At each sigma (grid-cell units) the field is blurred with the
/// unnormalized kernel `exp(-d^2 / 2 sigma^2)` (truncated at 4 sigma, zero
/// outside the grid); the blurred fields are max-combined and rescaled so the
/// peak is 1.
pub fn soften(occupancy: &Volume, sigmas: &[f64]) -> Result<Volume> {
    if sigmas.is_empty() {
        return Err(Error::InvalidParameter("at least one sigma is required".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("sigma {s} must be positive")));
    }
    let dims = occupancy.dims();
    let mut combined = vec![f64::NEG_INFINITY; occupancy.len()];
    for sigma in sigmas {
        let radius = (4.0 * sigma).ceil() as usize;
        let kernel: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let mut values = occupancy.values().to_vec();
        for axis in 0..3 {
            blur_axis(&mut values, dims, axis, &kernel);
        }
        for (c, v) in combined.iter_mut().zip(values) {
            *c = c.max(v);
        }
    }
    let peak = combined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        for c in &mut combined {
            *c /= peak;
        }
    }
    Volume::from_vec(dims, combined)
}
