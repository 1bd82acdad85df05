//! Ego-velocity estimation from Doppler geometry.
//!
//! For a static reflector seen at azimuth `a` and elevation `e`, the measured
//! radial velocity is linear in the platform velocity:
//!
//! ```text
//! v_r = [cos a cos e, sin a cos e, sin e] . v_ego
//! ```
//!
//! so a weighted least-squares fit over many bearings recovers `v_ego` in
//! closed form, and RANSAC over minimal 3-bearing samples rejects reflectors
//! (ghosts, movers) that do not share the static-world surface.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DopplerProfile, Volume};
use crate::schedule::Schedule;
use crate::{Error, Result};

/// Platform velocity in the radar body frame, m/s. x is boresight, y left,
/// z up. Serialized as a 3-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct EgoVelocity {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl EgoVelocity {
    pub const DEFAULT_SPEED_CAP: f64 = 20.0;

    pub fn new(vx: f64, vy: f64, vz: f64) -> Self {
        Self { vx, vy, vz }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.vz]
    }

    pub fn norm(self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy + self.vz * self.vz).sqrt()
    }

    pub fn distance(self, other: EgoVelocity) -> f64 {
        let d = [self.vx - other.vx, self.vy - other.vy, self.vz - other.vz];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Rejects non-finite components and speeds above `cap`.
    pub fn validate(self, cap: f64) -> Result<Self> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("ego velocity must be finite".into()));
        }
        if self.norm() > cap {
            return Err(Error::InvalidParameter(format!("ego speed {:.3} m/s exceeds cap {cap}", self.norm())));
        }
        Ok(self)
    }

    fn vector(self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<[f64; 3]> for EgoVelocity {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<EgoVelocity> for [f64; 3] {
    fn from(v: EgoVelocity) -> Self {
        v.to_array()
    }
}

/// One bearing with its measured radial velocity and a non-negative weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerObservation {
    pub azimuth: f64,
    pub elevation: f64,
    pub radial_velocity: f64,
    pub weight: f64,
}

impl DopplerObservation {
    pub fn new(azimuth: f64, elevation: f64, radial_velocity: f64, weight: f64) -> Self {
        Self { azimuth, elevation, radial_velocity, weight }
    }

    fn direction(&self) -> Vector3<f64> {
        Vector3::from(line_of_sight(self.azimuth, self.elevation))
    }

    pub fn residual(&self, v: EgoVelocity) -> f64 {
        self.radial_velocity - radial_velocity(self.azimuth, self.elevation, v)
    }
}

/// Unit line-of-sight vector for a bearing.
pub fn line_of_sight(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    [ca * ce, sa * ce, se]
}

/// Radial velocity a static reflector at `(azimuth, elevation)` shows for
/// platform velocity `v`.
pub fn radial_velocity(azimuth: f64, elevation: f64, v: EgoVelocity) -> f64 {
    let d = line_of_sight(azimuth, elevation);
    d[0] * v.vx + d[1] * v.vy + d[2] * v.vz
}

const RANK_TOLERANCE: f64 = 1e-9;

struct NormalEquations {
    matrix: Matrix3<f64>,
    rhs: Vector3<f64>,
}

fn accumulate<'a>(obs: impl IntoIterator<Item = &'a DopplerObservation>) -> Result<NormalEquations> {
    let mut matrix = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    let mut positive = 0;
    for o in obs {
        if !(o.weight >= 0.0 && o.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("observation weight {} must be finite and >= 0", o.weight)));
        }
        if !o.radial_velocity.is_finite() || !o.azimuth.is_finite() || !o.elevation.is_finite() {
            return Err(Error::InvalidParameter("observation contains non-finite values".into()));
        }
        if o.weight == 0.0 {
            continue;
        }
        positive += 1;
        let d = o.direction();
        matrix += o.weight * d * d.transpose();
        rhs += o.weight * o.radial_velocity * d;
    }
    if positive < 3 {
        return Err(Error::DegenerateGeometry { rank: positive.min(3), null_direction: [0.0; 3] });
    }
    Ok(NormalEquations { matrix, rhs })
}

impl NormalEquations {
    fn solve(&self) -> Result<Vector3<f64>> {
        let eig = SymmetricEigen::new(self.matrix);
        let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
        let rank = eig.eigenvalues.iter().filter(|l| **l > RANK_TOLERANCE * max).count();
        if max <= 0.0 || rank < 3 {
            let (idx, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three eigenvalues");
            let mut null = eig.eigenvectors.column(idx).into_owned();
            // sign-normalize so the largest component is positive
            let big = null.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
            if big < 0.0 {
                null = -null;
            }
            return Err(Error::DegenerateGeometry { rank, null_direction: [null[0], null[1], null[2]] });
        }
        let chol = self.matrix.cholesky().ok_or(Error::DegenerateGeometry { rank, null_direction: [0.0; 3] })?;
        Ok(chol.solve(&self.rhs))
    }
}

/// Closed-form weighted least squares on the radial-velocity model.
///
/// Needs at least three positively weighted bearings whose line-of-sight
/// vectors span 3D; otherwise reports the unobservable direction.
pub fn eve_wls(obs: &[DopplerObservation]) -> Result<EgoVelocity> {
    let ne = accumulate(obs)?;
    Ok(EgoVelocity::from_vector(ne.solve()?))
}

/// RANSAC fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacFit {
    pub velocity: EgoVelocity,
    pub inliers: Vec<bool>,
    pub inlier_rate: f64,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|f| **f).count()
    }
}

fn solve_minimal(obs: [&DopplerObservation; 3]) -> Option<Vector3<f64>> {
    let m = Matrix3::from_rows(&[
        obs[0].direction().transpose(),
        obs[1].direction().transpose(),
        obs[2].direction().transpose(),
    ]);
    if m.determinant().abs() < 1e-6 {
        return None;
    }
    let y = Vector3::new(obs[0].radial_velocity, obs[1].radial_velocity, obs[2].radial_velocity);
    m.lu().solve(&y)
}

/// Hypothesize-and-verify over 3-bearing samples, then a WLS refit on the
/// best consensus set.
///
/// Hypotheses are ranked by inlier count, then by summed inlier residual,
/// then by draw order, so a given seed always selects the same model.
pub fn eve_ransac(
    obs: &[DopplerObservation],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<RansacFit> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} must be positive")));
    }
    if obs.len() < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 observations, got {}", obs.len())));
    }
    let candidates: Vec<usize> = (0..obs.len()).filter(|i| obs[*i].weight > 0.0).collect();
    if candidates.len() < 3 {
        return Err(Error::ConsensusFailure);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..iterations {
        let pick = sample_indices(&mut rng, candidates.len(), 3);
        let sample = [&obs[candidates[pick.index(0)]], &obs[candidates[pick.index(1)]], &obs[candidates[pick.index(2)]]];
        let Some(v) = solve_minimal(sample) else { continue };
        let v = EgoVelocity::from_vector(v);
        let mut count = 0;
        let mut cost = 0.0;
        let flags: Vec<bool> = obs
            .iter()
            .map(|o| {
                let r = o.residual(v).abs();
                let inside = o.weight > 0.0 && r <= threshold;
                if inside {
                    count += 1;
                    cost += r;
                }
                inside
            })
            .collect();
        let better = match &best {
            None => true,
            Some((c, e, _)) => count > *c || (count == *c && cost < *e),
        };
        if better {
            best = Some((count, cost, flags));
        }
    }
    let Some((count, _, inliers)) = best else { return Err(Error::ConsensusFailure) };
    if count < 3 {
        return Err(Error::ConsensusFailure);
    }
    let consensus: Vec<DopplerObservation> =
        obs.iter().zip(&inliers).filter(|(_, f)| **f).map(|(o, _)| *o).collect();
    let velocity = eve_wls(&consensus)?;
    let inlier_rate = count as f64 / obs.len() as f64;
    Ok(RansacFit { velocity, inliers, inlier_rate })
}

/// Softmax weights over the `(azimuth, elevation)` surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    dims: [usize; 2],
    weights: Vec<f64>,
}

impl SoftMask {
    pub fn from_weights(dims: [usize; 2], weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dims[0] * dims[1] {
            return Err(Error::DimensionMismatch { expected: vec![dims[0] * dims[1]], found: vec![weights.len()] });
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("mask weights must be finite and non-negative".into()));
        }
        Ok(Self { dims, weights })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, a: usize, e: usize) -> f64 {
        self.weights[a * self.dims[1] + e]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dims: self.dims, weights: self.weights.iter().map(|w| w * factor).collect() }
    }
}

/// Maximum over range, then a softmax over the flattened bearing surface at
/// `temperature`.
pub fn soft_mask(x_t: &Volume, temperature: f64) -> Result<SoftMask> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature {temperature} must be positive")));
    }
    let [r, a, e] = x_t.dims();
    let mut reduced = vec![f64::NEG_INFINITY; a * e];
    for k in 0..r {
        for i in 0..a {
            for j in 0..e {
                let slot = &mut reduced[i * e + j];
                *slot = slot.max(x_t.get(k, i, j));
            }
        }
    }
    let peak = reduced.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = reduced.iter().map(|v| ((v - peak) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(SoftMask { dims: [a, e], weights })
}

/// Per-bearing Doppler evidence: the bearing's direction and the Doppler of
/// its dominant range cell. Bearings outside the visible region or without
/// any valid Doppler carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingEvidence {
    dims: [usize; 2],
    cells: Vec<Option<(f64, f64, f64)>>,
}

impl BearingEvidence {
    /// `cells[i * E + j] = Some((azimuth, elevation, radial_velocity))`.
    pub fn from_cells(dims: [usize; 2], cells: Vec<Option<(f64, f64, f64)>>) -> Result<Self> {
        if cells.len() != dims[0] * dims[1] {
            return Err(Error::DimensionMismatch { expected: vec![dims[0] * dims[1]], found: vec![cells.len()] });
        }
        Ok(Self { dims, cells })
    }

    /// Range reduction by occupancy: per bearing, the valid-Doppler range
    /// cell with the highest occupancy supplies the velocity.
    pub fn from_profile(
        occupancy: &Volume,
        doppler: &DopplerProfile,
        direction: impl Fn(usize, usize) -> Option<(f64, f64)>,
    ) -> Result<Self> {
        if occupancy.dims() != doppler.dims() {
            return Err(Error::DimensionMismatch {
                expected: occupancy.dims().to_vec(),
                found: doppler.dims().to_vec(),
            });
        }
        let [r, a, e] = occupancy.dims();
        let mut cells = Vec::with_capacity(a * e);
        for i in 0..a {
            for j in 0..e {
                let Some((az, el)) = direction(i, j) else {
                    cells.push(None);
                    continue;
                };
                let mut best: Option<(f64, f64)> = None;
                for k in 0..r {
                    if let Some(v) = doppler.get(k, i, j) {
                        let u = occupancy.get(k, i, j);
                        if best.is_none_or(|(bu, _)| u > bu) {
                            best = Some((u, v));
                        }
                    }
                }
                cells.push(best.map(|(_, v)| (az, el, v)));
            }
        }
        Ok(Self { dims: [a, e], cells })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn cells(&self) -> &[Option<(f64, f64, f64)>] {
        &self.cells
    }

    /// Observations weighted by `mask`; bearings without evidence are skipped.
    pub fn observations(&self, mask: &SoftMask) -> Result<Vec<DopplerObservation>> {
        if mask.dims != self.dims {
            return Err(Error::DimensionMismatch { expected: self.dims.to_vec(), found: mask.dims.to_vec() });
        }
        Ok(self
            .cells
            .iter()
            .zip(&mask.weights)
            .filter_map(|(c, w)| c.map(|(a, e, v)| DopplerObservation::new(a, e, v, *w)))
            .collect())
    }
}

/// Doppler-consistency loss value and its factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerLoss {
    pub value: f64,
    pub step_weight: f64,
    pub squared_error: f64,
    pub estimate: EgoVelocity,
}

/// `w_t * ||v_true - f(M_t, v)||^2` with `f` the mask-weighted WLS estimator.
pub fn doppler_consistency_loss(
    mask: &SoftMask,
    evidence: &BearingEvidence,
    v_true: EgoVelocity,
    t: usize,
    s: &Schedule,
) -> Result<DopplerLoss> {
    let step_weight = s.doppler_loss_weight(t)?;
    let estimate = eve_wls(&evidence.observations(mask)?)?;
    let squared_error = estimate.distance(v_true).powi(2);
    Ok(DopplerLoss { value: step_weight * squared_error, step_weight, squared_error, estimate })
}

/// Gradient of the unweighted squared error `||v_true - v_hat(M)||^2` with
/// respect to every mask entry, via the normal-equations sensitivity
/// `d v_hat / d w_i = N^-1 d_i (y_i - d_i . v_hat)`.
pub fn squared_error_gradient(mask: &SoftMask, evidence: &BearingEvidence, v_true: EgoVelocity) -> Result<Vec<f64>> {
    let obs = evidence.observations(mask)?;
    let ne = accumulate(&obs)?;
    let v_hat = ne.solve()?;
    let inv = ne.matrix.try_inverse().ok_or(Error::DegenerateGeometry { rank: 2, null_direction: [0.0; 3] })?;
    let err = v_true.vector() - v_hat;
    let left = inv * err;
    Ok(evidence
        .cells
        .iter()
        .map(|c| match c {
            Some((a, e, y)) => {
                let d = Vector3::from(line_of_sight(*a, *e));
                let r = y - d.dot(&v_hat);
                -2.0 * left.dot(&d) * r
            }
            None => 0.0,
        })
        .collect())
}

/// Radial-velocity surface over a separable bearing grid, row-major
/// `[azimuth][elevation]`.
///
/// By Cauchy-Schwarz every value is at most `|v|`, with equality only where
/// the grid contains the motion direction.
pub fn doppler_surface(v: EgoVelocity, azimuth_grid: &[f64], elevation_grid: &[f64]) -> Vec<f64> {
    azimuth_grid
        .iter()
        .flat_map(|a| elevation_grid.iter().map(move |e| radial_velocity(*a, *e, v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    fn generic_bearings() -> Vec<(f64, f64)> {
        vec![(0.0, 0.0), (0.5, 0.1), (-0.6, 0.3), (0.2, -0.4), (-0.3, -0.2), (0.9, 0.5)]
    }

    fn clean(v: EgoVelocity, bearings: &[(f64, f64)]) -> Vec<DopplerObservation> {
        bearings.iter().map(|(a, e)| DopplerObservation::new(*a, *e, radial_velocity(*a, *e, v), 1.0)).collect()
    }

    #[test]
    fn radial_velocity_cases() {
        assert!((radial_velocity(0.0, 0.0, EgoVelocity::new(3.0, 0.0, 0.0)) - 3.0).abs() < 1e-15);
        assert!((radial_velocity(FRAC_PI_2, 0.0, EgoVelocity::new(0.0, 2.0, 0.0)) - 2.0).abs() < 1e-15);
        assert!((radial_velocity(FRAC_PI_3, 0.0, EgoVelocity::new(1.0, 0.0, 0.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn wls_recovers_exact_velocity() {
        let v = EgoVelocity::new(1.0, 0.5, 0.2);
        let est = eve_wls(&clean(v, &generic_bearings())).unwrap();
        assert!(est.distance(v) < 1e-9);
    }

    #[test]
    fn wls_flat_geometry_names_vertical() {
        let v = EgoVelocity::new(1.0, 0.5, 0.2);
        let flat: Vec<(f64, f64)> = [-0.5, -0.2, 0.0, 0.3, 0.7].iter().map(|a| (*a, 0.0)).collect();
        match eve_wls(&clean(v, &flat)) {
            Err(Error::DegenerateGeometry { rank, null_direction }) => {
                assert_eq!(rank, 2);
                assert!((null_direction[2].abs() - 1.0).abs() < 1e-9);
            }
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
    }

    #[test]
    fn wls_weight_semantics() {
        let v = EgoVelocity::new(1.0, -0.3, 0.4);
        let mut obs = clean(v, &generic_bearings());
        for (i, o) in obs.iter_mut().enumerate() {
            o.radial_velocity += 0.01 * (i as f64 - 2.5);
        }
        let mut doubled = obs.clone();
        doubled[2].weight = 2.0;
        let mut duplicated = obs.clone();
        duplicated.push(obs[2]);
        let a = eve_wls(&doubled).unwrap();
        let b = eve_wls(&duplicated).unwrap();
        assert!(a.distance(b) < 1e-12);
    }

    #[test]
    fn wls_rejects_too_few() {
        let v = EgoVelocity::new(1.0, 0.0, 0.0);
        let obs = clean(v, &generic_bearings()[..2]);
        assert!(matches!(eve_wls(&obs), Err(Error::DegenerateGeometry { .. })));
        let mut bad = clean(v, &generic_bearings());
        bad[0].weight = -1.0;
        assert!(matches!(eve_wls(&bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ransac_rejects_gross_outliers() {
        let v = EgoVelocity::new(1.0, 0.5, 0.2);
        let mut bearings = generic_bearings();
        bearings.extend([(0.4, -0.1), (-0.8, 0.2)]);
        let mut obs = clean(v, &bearings);
        let reference = eve_wls(&obs).unwrap();
        obs.push(DopplerObservation::new(0.1, 0.1, radial_velocity(0.1, 0.1, v) + 1.5, 1.0));
        obs.push(DopplerObservation::new(-0.2, 0.2, radial_velocity(-0.2, 0.2, v) - 2.0, 1.0));
        let fit = eve_ransac(&obs, 0.08, 200, 7).unwrap();
        assert!(fit.velocity.distance(v) < 1e-6);
        assert!(fit.velocity.distance(reference) < 1e-6);
        assert!((fit.inlier_rate - 0.8).abs() < 1e-12);
        assert_eq!(&fit.inliers[8..], &[false, false]);
    }

    #[test]
    fn ransac_without_outliers_is_wls() {
        let v = EgoVelocity::new(-0.7, 0.1, 0.3);
        let obs = clean(v, &generic_bearings());
        let fit = eve_ransac(&obs, 0.08, 50, 1).unwrap();
        assert_eq!(fit.velocity, eve_wls(&obs).unwrap());
        assert_eq!(fit.inlier_rate, 1.0);
    }

    #[test]
    fn ransac_deterministic_and_validated() {
        let v = EgoVelocity::new(1.0, 0.5, 0.2);
        let mut obs = clean(v, &generic_bearings());
        obs[1].radial_velocity += 1.0;
        assert_eq!(eve_ransac(&obs, 0.08, 40, 3).unwrap(), eve_ransac(&obs, 0.08, 40, 3).unwrap());
        assert!(eve_ransac(&obs, 0.0, 40, 3).is_err());
        assert!(eve_ransac(&obs[..2], 0.08, 40, 3).is_err());
    }

    #[test]
    fn ransac_consensus_failure() {
        // every triple is coplanar in direction space: no minimal solution
        let flat: Vec<DopplerObservation> =
            (0..5).map(|i| DopplerObservation::new(i as f64 * 0.1, 0.0, 1.0, 1.0)).collect();
        assert!(matches!(eve_ransac(&flat, 0.08, 30, 0), Err(Error::ConsensusFailure)));
    }

    #[test]
    fn soft_mask_uniform() {
        let mask = soft_mask(&Volume::filled([3, 4, 2], 0.3), 1.0).unwrap();
        assert!(mask.weights().iter().all(|w| (w - 1.0 / 8.0).abs() < 1e-15));
    }

    #[test]
    fn soft_mask_cold_limit() {
        let mut x = Volume::filled([3, 4, 2], 0.1);
        x.set(1, 2, 1, 0.9);
        let mask = soft_mask(&x, 1e-3).unwrap();
        assert!((mask.get(2, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_mask_two_equal_columns() {
        let mut x = Volume::zeros([2, 2, 2]);
        x.set(0, 0, 0, 1.0);
        x.set(1, 1, 1, 1.0);
        let mask = soft_mask(&x, 0.5).unwrap();
        // direct softmax: two cells at 1/0.5 = 2, two at 0
        let z = 2.0 * 2f64.exp() + 2.0;
        let hot = 2f64.exp() / z;
        assert!((mask.get(0, 0) - hot).abs() < 1e-15);
        assert!((mask.get(1, 1) - hot).abs() < 1e-15);
        let residual = 2.0 / z;
        assert!((mask.get(0, 0) - 0.5 * (1.0 - residual)).abs() < 1e-15);
        assert!(soft_mask(&x, 0.0).is_err());
    }

    fn bearing_grid(v: EgoVelocity, corrupt: &[usize]) -> BearingEvidence {
        let az = [-0.6, -0.2, 0.2, 0.6];
        let el = [-0.3, 0.0, 0.3];
        let mut cells = Vec::new();
        for a in az {
            for e in el {
                cells.push(Some((a, e, radial_velocity(a, e, v))));
            }
        }
        for (n, i) in corrupt.iter().enumerate() {
            if let Some(c) = cells[*i].as_mut() {
                c.2 += 0.5 + 0.3 * n as f64;
            }
        }
        BearingEvidence::from_cells([4, 3], cells).unwrap()
    }

    #[test]
    fn consistency_loss_zero_on_consistent_cells() {
        let s = Schedule::default_sampling();
        let v = EgoVelocity::new(1.2, 0.3, -0.1);
        let ev = bearing_grid(v, &[]);
        let mask = SoftMask::from_weights([4, 3], (0..12).map(|i| 0.5 + i as f64 * 0.1).collect()).unwrap();
        let loss = doppler_consistency_loss(&mask, &ev, v, 5, &s).unwrap();
        assert!(loss.value < 1e-20);
    }

    #[test]
    fn consistency_loss_on_ghost_cells() {
        let s = Schedule::default_sampling();
        let v = EgoVelocity::new(1.2, 0.3, -0.1);
        let ghosts = [0, 4, 7, 11];
        let ev = bearing_grid(v, &ghosts);
        let weights: Vec<f64> = (0..12).map(|i| if ghosts.contains(&i) { 0.25 } else { 0.0 }).collect();
        let mask = SoftMask::from_weights([4, 3], weights).unwrap();
        // explicit WLS on the corrupted cells only
        let obs: Vec<DopplerObservation> = ghosts
            .iter()
            .map(|i| {
                let (a, e, y) = ev.cells()[*i].unwrap();
                DopplerObservation::new(a, e, y, 1.0)
            })
            .collect();
        let expected_sq = eve_wls(&obs).unwrap().distance(v).powi(2);
        let l5 = doppler_consistency_loss(&mask, &ev, v, 5, &s).unwrap();
        assert!(l5.value > 0.0);
        assert!((l5.squared_error - expected_sq).abs() < 1e-12);
        let l9 = doppler_consistency_loss(&mask, &ev, v, 9, &s).unwrap();
        let ratio = s.doppler_loss_weight(9).unwrap() / s.doppler_loss_weight(5).unwrap();
        assert!((l9.value / l5.value - ratio).abs() < 1e-9);
    }

    #[test]
    fn consistency_loss_mask_scale_invariant() {
        let s = Schedule::default_sampling();
        let v = EgoVelocity::new(1.2, 0.3, -0.1);
        let ev = bearing_grid(v, &[1, 5]);
        let mask = SoftMask::from_weights([4, 3], (0..12).map(|i| 1.0 + (i % 5) as f64).collect()).unwrap();
        let a = doppler_consistency_loss(&mask, &ev, v, 3, &s).unwrap();
        let b = doppler_consistency_loss(&mask.scaled(7.5), &ev, v, 3, &s).unwrap();
        assert!((a.value - b.value).abs() <= 1e-12 * a.value.max(1e-300));
    }

    #[test]
    fn consistency_loss_degenerate_geometry() {
        let s = Schedule::default_sampling();
        let v = EgoVelocity::new(1.0, 0.0, 0.0);
        let cells = vec![Some((0.1, 0.0, 1.0)), Some((0.2, 0.0, 1.0)), Some((0.3, 0.0, 1.0)), None];
        let ev = BearingEvidence::from_cells([2, 2], cells).unwrap();
        let mask = SoftMask::from_weights([2, 2], vec![0.25; 4]).unwrap();
        assert!(matches!(
            doppler_consistency_loss(&mask, &ev, v, 2, &s),
            Err(Error::DegenerateGeometry { .. })
        ));
        assert!(matches!(doppler_consistency_loss(&mask, &ev, v, 1, &s), Err(Error::DegenerateStep { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let v = EgoVelocity::new(1.2, 0.3, -0.1);
        let ev = bearing_grid(v, &[2, 9]);
        let weights: Vec<f64> = (0..12).map(|i| 0.3 + 0.07 * i as f64).collect();
        let mask = SoftMask::from_weights([4, 3], weights.clone()).unwrap();
        let grad = squared_error_gradient(&mask, &ev, v).unwrap();
        let f = |w: Vec<f64>| {
            let m = SoftMask::from_weights([4, 3], w).unwrap();
            eve_wls(&ev.observations(&m).unwrap()).unwrap().distance(v).powi(2)
        };
        for i in 0..12 {
            let h = 1e-6;
            let mut up = weights.clone();
            up[i] += h;
            let mut down = weights.clone();
            down[i] -= h;
            let fd = (f(up) - f(down)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-6), "i={i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn surface_peak_at_motion_direction() {
        let az: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.2).collect();
        let el: Vec<f64> = (-2..=2).map(|i| i as f64 * 0.2).collect();
        let s = doppler_surface(EgoVelocity::new(1.0, 0.0, 0.0), &az, &el);
        let (idx, max) = s.iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        assert!((max - 1.0).abs() < 1e-15);
        assert_eq!(idx, 4 * el.len() + 2);
    }

    #[test]
    fn surface_capped_elevation() {
        let az: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.2).collect();
        let el: Vec<f64> = (0..=9).map(|i| i as f64 * FRAC_PI_4 / 9.0).collect();
        let s = doppler_surface(EgoVelocity::new(0.0, 0.0, 1.0), &az, &el);
        let max = s.iter().copied().fold(f64::MIN, f64::max);
        assert!((max - FRAC_PI_4.sin()).abs() < 1e-12);
        assert!(max < 1.0);
    }

    #[test]
    fn surface_zero_velocity() {
        let s = doppler_surface(EgoVelocity::default(), &[0.0, 0.3], &[0.1, -0.2]);
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ego_velocity_serializes_as_array() {
        let v = EgoVelocity::new(1.0, 0.5, -0.25);
        assert_eq!(serde_json::to_string(&v).unwrap(), "[1.0,0.5,-0.25]");
        assert!(EgoVelocity::new(30.0, 0.0, 0.0).validate(EgoVelocity::DEFAULT_SPEED_CAP).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn surface_bounded_by_speed(vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0,
                                        a in -1.5f64..1.5, e in -1.5f64..1.5) {
                let v = EgoVelocity::new(vx, vy, vz);
                prop_assert!(radial_velocity(a, e, v) <= v.norm() * (1.0 + 1e-12));
            }

            #[test]
            fn wls_exact_for_full_rank(vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0,
                                       bearings in prop::collection::vec((-1.2f64..1.2, -0.8f64..0.8), 6..20)) {
                let v = EgoVelocity::new(vx, vy, vz);
                let obs = clean(v, &bearings);
                if let Ok(est) = eve_wls(&obs) {
                    prop_assert!(est.distance(v) < 1e-9 * (1.0 + v.norm()) * 10.0);
                }
            }
        }
    }
}
