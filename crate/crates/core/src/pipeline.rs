//! Analytic refinement: a Doppler-consistency shrinkage denoiser and the
//! mask-weighted ego-velocity estimate that goes with it.
//!
//! Without a trained network, the denoiser builds its clean-field guess from
//! the radar prior itself. Every step it forms the soft mask of the current
//! sample, re-estimates ego velocity from the masked Doppler evidence, and
//! shrinks each cell of `u0` by how badly its Doppler disagrees with the
//! radial velocity that estimate predicts for the cell's bearing. Ghosts and
//! angular sidelobes carry Doppler from elsewhere and fade; consistent
//! returns keep their occupancy.

use serde::{Deserialize, Serialize};

use crate::cube::{PolarGrid, Sddr};
use crate::diffusion::{implied_noise, sample, Denoiser, DopplerProfile, Volume};
use crate::eve::{eve_ransac, eve_wls, soft_mask, BearingEvidence, EgoVelocity};
use crate::schedule::Schedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageParams {
    /// Softmax temperature of the bearing mask.
    pub temperature: f64,
    /// Residual (m/s) at which a cell keeps `exp(-1/2)` of its occupancy.
    pub residual_scale: f64,
    /// Consensus threshold (m/s) for the initial RANSAC fit and for gating
    /// the per-step re-estimate.
    pub gate: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
}

impl Default for ShrinkageParams {
    fn default() -> Self {
        Self { temperature: 0.05, residual_scale: 0.1, gate: 0.08, ransac_iterations: 300, seed: 0 }
    }
}

impl ShrinkageParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("temperature", self.temperature), ("residual_scale", self.residual_scale), ("gate", self.gate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Mask-weighted WLS ego velocity of an occupancy field: the soft mask of
/// `occupancy` weights the per-bearing Doppler evidence.
pub fn masked_ego(occupancy: &Volume, doppler: &DopplerProfile, grid: &PolarGrid, temperature: f64) -> Result<EgoVelocity> {
    let mask = soft_mask(occupancy, temperature)?;
    let evidence = BearingEvidence::from_profile(occupancy, doppler, |i, j| grid.direction(i, j))?;
    eve_wls(&evidence.observations(&mask)?)
}

#[derive(Debug, Clone)]
pub struct ShrinkageDenoiser {
    grid: PolarGrid,
    initial: EgoVelocity,
    params: ShrinkageParams,
}

impl ShrinkageDenoiser {
    /// Seeds the ego estimate with RANSAC over the SDDR's valid cells.
    pub fn from_sddr(sddr: &Sddr, params: ShrinkageParams) -> Result<Self> {
        params.validate()?;
        let fit = eve_ransac(&sddr.observations(), params.gate, params.ransac_iterations, params.seed)?;
        Ok(Self { grid: sddr.grid, initial: fit.velocity, params })
    }

    pub fn initial_ego(&self) -> EgoVelocity {
        self.initial
    }

    /// Ego re-estimate from the soft mask of `x_t`, keeping only bearings
    /// whose evidence agrees with the initial fit to within the gate. Falls
    /// back to the initial fit when the gated geometry is degenerate.
    pub fn refine_ego(&self, x_t: &Volume, doppler: &DopplerProfile) -> Result<EgoVelocity> {
        let mut clamped = x_t.clone();
        clamped.clamp_unit();
        let mask = soft_mask(&clamped, self.params.temperature)?;
        let evidence = BearingEvidence::from_profile(&clamped, doppler, |i, j| self.grid.direction(i, j))?;
        let gated: Vec<_> = evidence
            .observations(&mask)?
            .into_iter()
            .filter(|o| o.residual(self.initial).abs() <= self.params.gate)
            .collect();
        match eve_wls(&gated) {
            Ok(v) => Ok(v),
            Err(Error::DegenerateGeometry { .. }) | Err(Error::InvalidParameter(_)) => Ok(self.initial),
            Err(e) => Err(e),
        }
    }

    /// `u0` with each cell scaled by `exp(-(residual / scale)^2 / 2)`;
    /// cells without Doppler or a visible direction are zeroed.
    pub fn clean_estimate(&self, u0: &Volume, doppler: &DopplerProfile, ego: EgoVelocity) -> Result<Volume> {
        if u0.dims() != doppler.dims() || u0.dims() != self.grid.spatial_dims() {
            return Err(Error::DimensionMismatch { expected: self.grid.spatial_dims().to_vec(), found: u0.dims().to_vec() });
        }
        let [r, a, e] = u0.dims();
        let mut out = Volume::zeros(u0.dims());
        for i in 0..a {
            for j in 0..e {
                let Some((az, el)) = self.grid.direction(i, j) else { continue };
                let predicted = crate::eve::radial_velocity(az, el, ego);
                for k in 0..r {
                    if let Some(v) = doppler.get(k, i, j) {
                        let z = (v - predicted) / self.params.residual_scale;
                        out.set(k, i, j, u0.get(k, i, j) * (-0.5 * z * z).exp());
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Denoiser for ShrinkageDenoiser {
    fn predict_noise(
        &self,
        x_t: &Volume,
        u0: &Volume,
        doppler: &DopplerProfile,
        t: usize,
        schedule: &Schedule,
    ) -> Result<Volume> {
        let ego = self.refine_ego(x_t, doppler)?;
        let x0 = self.clean_estimate(u0, doppler, ego)?;
        implied_noise(x_t, &x0, u0, t, schedule)
    }
}

/// Outcome of refining one SDDR.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub occupancy: Volume,
    /// Occupancy-weighted WLS over every valid SDDR cell.
    pub ego_raw: EgoVelocity,
    /// Mask-weighted WLS over the refined occupancy.
    pub ego_refined: EgoVelocity,
}

/// Runs the reverse chain with the shrinkage denoiser and re-estimates ego
/// velocity from the refined field.
pub fn refine(sddr: &Sddr, schedule: &Schedule, params: ShrinkageParams, seed: u64) -> Result<Refinement> {
    let denoiser = ShrinkageDenoiser::from_sddr(sddr, params)?;
    let occupancy = sample(&sddr.occupancy, &sddr.doppler, schedule, &denoiser, seed)?;
    let ego_raw = eve_wls(&sddr.observations())?;
    let ego_refined = masked_ego(&occupancy, &sddr.doppler, &sddr.grid, params.temperature)?;
    Ok(Refinement { occupancy, ego_raw, ego_refined })
}
