//! Directional diffusion toward a radar prior.
//!
//! The forward chain drifts a clean occupancy field `x0` toward the radar
//! prior `u0` while injecting Gaussian noise. Because the drift target is
//! data-dependent rather than zero, the reverse chain starts at (a noisy copy
//! of) `u0` and needs only a handful of steps.
//!
//! The denoiser is a pluggable [`Denoiser`] predicting the injected noise.
//! Sign convention: substituting the closed-form marginal into the posterior
//! mean gives a *negative* coefficient on the noise,
//! `mu = x_t / alpha + (alpha - 1) / alpha * u0 - lambda^2 / (alpha * beta_t) * eps`,
//! and [`epsilon_mean`] uses that form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::schedule::Schedule;
use crate::{Error, Result};

/// Scalar field over a polar `(range, azimuth, elevation)` grid, elevation
/// fastest in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, values: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        Self { dims, values: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::DimensionMismatch { expected: vec![n], found: vec![values.len()] });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("volume values must be finite".into()));
        }
        Ok(Self { dims, values })
    }

    /// A 1x1x1 volume, handy for scalar checks.
    pub fn scalar(value: f64) -> Self {
        Self { dims: [1, 1, 1], values: vec![value] }
    }

    /// Independent standard-normal draws per cell.
    pub fn standard_normal<R: rand::Rng + ?Sized>(dims: [usize; 3], rng: &mut R) -> Self {
        let n = dims.iter().product();
        let values = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Self { dims, values }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, r: usize, a: usize, e: usize) -> usize {
        (r * self.dims[1] + a) * self.dims[2] + e
    }

    pub fn get(&self, r: usize, a: usize, e: usize) -> f64 {
        self.values[self.index(r, a, e)]
    }

    pub fn set(&mut self, r: usize, a: usize, e: usize, value: f64) {
        let i = self.index(r, a, e);
        self.values[i] = value;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &Volume) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.values {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume { dims: self.dims, values: self.values.iter().map(|v| f(*v)).collect() }
    }
}

fn check_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::DimensionMismatch { expected: a.dims.to_vec(), found: b.dims.to_vec() });
    }
    Ok(())
}

/// Cell-wise `ca * a + cb * b + cc * c`.
fn combine(a: &Volume, ca: f64, b: &Volume, cb: f64, c: &Volume, cc: f64) -> Result<Volume> {
    check_dims(a, b)?;
    check_dims(a, c)?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&c.values)
        .map(|((x, y), z)| ca * x + cb * y + cc * z)
        .collect();
    Ok(Volume { dims: a.dims, values })
}

/// Per-cell Doppler velocity; cells without a detectable peak carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerProfile {
    dims: [usize; 3],
    velocity: Vec<Option<f64>>,
    v_max: f64,
}

impl DopplerProfile {
    pub fn empty(dims: [usize; 3], v_max: f64) -> Self {
        Self { dims, velocity: vec![None; dims.iter().product()], v_max }
    }

    pub fn from_vec(dims: [usize; 3], velocity: Vec<Option<f64>>, v_max: f64) -> Result<Self> {
        let n: usize = dims.iter().product();
        if velocity.len() != n {
            return Err(Error::DimensionMismatch { expected: vec![n], found: vec![velocity.len()] });
        }
        if !(v_max > 0.0) {
            return Err(Error::InvalidParameter(format!("v_max={v_max} must be positive")));
        }
        let tol = v_max * 1e-9;
        if let Some(v) = velocity.iter().flatten().find(|v| !v.is_finite() || v.abs() > v_max + tol) {
            return Err(Error::InvalidParameter(format!("Doppler {v} outside +-{v_max}")));
        }
        Ok(Self { dims, velocity, v_max })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn velocities(&self) -> &[Option<f64>] {
        &self.velocity
    }

    pub fn get(&self, r: usize, a: usize, e: usize) -> Option<f64> {
        self.velocity[(r * self.dims[1] + a) * self.dims[2] + e]
    }

    pub fn set(&mut self, r: usize, a: usize, e: usize, value: Option<f64>) {
        let i = (r * self.dims[1] + a) * self.dims[2] + e;
        self.velocity[i] = value;
    }

    pub fn valid_count(&self) -> usize {
        self.velocity.iter().filter(|v| v.is_some()).count()
    }
}

/// Predicts the standard-normal noise that produced `x_t` from `x0` under the
/// closed-form marginal at step `t`.
pub trait Denoiser {
    fn predict_noise(
        &self,
        x_t: &Volume,
        u0: &Volume,
        doppler: &DopplerProfile,
        t: usize,
        schedule: &Schedule,
    ) -> Result<Volume>;
}

impl<F> Denoiser for F
where
    F: Fn(&Volume, &Volume, &DopplerProfile, usize, &Schedule) -> Result<Volume>,
{
    fn predict_noise(
        &self,
        x_t: &Volume,
        u0: &Volume,
        doppler: &DopplerProfile,
        t: usize,
        schedule: &Schedule,
    ) -> Result<Volume> {
        self(x_t, u0, doppler, t, schedule)
    }
}

/// Noise implied by a known clean field: inverts the closed-form marginal.
pub fn implied_noise(x_t: &Volume, x0: &Volume, u0: &Volume, t: usize, s: &Schedule) -> Result<Volume> {
    s.require_step(t)?;
    let ab = s.alpha_bar(t);
    let beta = s.beta(t);
    if beta == 0.0 {
        check_dims(x_t, x0)?;
        check_dims(x_t, u0)?;
        return Ok(Volume::zeros(x_t.dims));
    }
    combine(x_t, 1.0 / beta, x0, -ab / beta, u0, -(1.0 - ab) / beta)
}

/// Denoiser with access to the true clean field; returns the exact noise.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub x0: Volume,
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(
        &self,
        x_t: &Volume,
        u0: &Volume,
        _doppler: &DopplerProfile,
        t: usize,
        schedule: &Schedule,
    ) -> Result<Volume> {
        implied_noise(x_t, &self.x0, u0, t, schedule)
    }
}

/// One forward kernel step: `alpha_t x_prev + (1 - alpha_t) u0 + lambda_t noise`.
pub fn forward_step(x_prev: &Volume, u0: &Volume, t: usize, s: &Schedule, noise: &Volume) -> Result<Volume> {
    s.require_step(t)?;
    let a = s.alpha(t);
    combine(x_prev, a, u0, 1.0 - a, noise, s.lambda(t))
}

/// Closed-form marginal: `alpha_bar_t x0 + (1 - alpha_bar_t) u0 + beta_t noise`.
///
/// `(x_t, noise)` is the training pair for a noise-predicting denoiser.
pub fn forward_marginal(x0: &Volume, u0: &Volume, t: usize, s: &Schedule, noise: &Volume) -> Result<Volume> {
    s.require_step(t)?;
    let ab = s.alpha_bar(t);
    combine(x0, ab, u0, 1.0 - ab, noise, s.beta(t))
}

/// Coefficients of the posterior mean on `x_t`, `x0` and `u0`; they sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub x_t: f64,
    pub x0: f64,
    pub u0: f64,
    pub variance: f64,
}

impl PosteriorCoefficients {
    pub fn at(s: &Schedule, t: usize) -> Result<Self> {
        s.require_step(t)?;
        if t == 1 {
            return Err(Error::DegenerateStep { step: 1 });
        }
        let beta_sq = s.beta_sq(t);
        let ab_prev = s.alpha_bar(t - 1);
        if beta_sq == 0.0 {
            // noiseless chain: x_{t-1} is pinned to its marginal mean
            return Ok(Self { x_t: 0.0, x0: ab_prev, u0: 1.0 - ab_prev, variance: 0.0 });
        }
        let a = s.alpha(t);
        let l2 = s.lambda(t) * s.lambda(t);
        let prev = s.beta_sq(t - 1);
        let x_t = a * prev / beta_sq;
        let x0 = l2 * ab_prev / beta_sq;
        let u0 = (beta_sq - a * prev - l2 * ab_prev) / beta_sq;
        Ok(Self { x_t, x0, u0, variance: s.sigma_sq(t) })
    }
}

/// Posterior of `x_{t-1}` given `x_t`, `x0`, `u0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Volume,
    pub variance: f64,
}

pub fn posterior_params(x_t: &Volume, x0: &Volume, u0: &Volume, t: usize, s: &Schedule) -> Result<Posterior> {
    let c = PosteriorCoefficients::at(s, t)?;
    let mean = combine(x_t, c.x_t, x0, c.x0, u0, c.u0)?;
    Ok(Posterior { mean, variance: c.variance })
}

/// Clean-field estimate implied by a noise prediction.
pub fn predict_x0(x_t: &Volume, u0: &Volume, t: usize, s: &Schedule, eps_hat: &Volume) -> Result<Volume> {
    s.require_step(t)?;
    let ab = s.alpha_bar(t);
    if ab < 1e-12 {
        return Err(Error::IllConditionedStep { step: t, alpha_bar: ab });
    }
    combine(x_t, 1.0 / ab, u0, -(1.0 - ab) / ab, eps_hat, -s.beta(t) / ab)
}

/// Posterior mean written directly in terms of the predicted noise.
pub fn epsilon_mean(x_t: &Volume, u0: &Volume, eps_hat: &Volume, t: usize, s: &Schedule) -> Result<Volume> {
    s.require_step(t)?;
    if t == 1 {
        return Err(Error::DegenerateStep { step: 1 });
    }
    let beta = s.beta(t);
    if beta == 0.0 {
        return Err(Error::DegenerateStep { step: t });
    }
    let a = s.alpha(t);
    let l2 = s.lambda(t) * s.lambda(t);
    combine(x_t, 1.0 / a, u0, (a - 1.0) / a, eps_hat, -l2 / (a * beta))
}

fn check_prediction(eps: &Volume, like: &Volume) -> Result<()> {
    if eps.dims != like.dims {
        return Err(Error::Denoiser(format!(
            "prediction dims {:?} differ from input dims {:?}",
            eps.dims, like.dims
        )));
    }
    if eps.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Denoiser("prediction contains non-finite values".into()));
    }
    Ok(())
}

/// One reverse step via the x0-substitution route.
///
/// For `t >= 2` returns the posterior mean plus `sigma_t * noise`; at `t = 1`
/// the posterior collapses and the clean-field estimate itself is returned.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step<D: Denoiser + ?Sized>(
    x_t: &Volume,
    u0: &Volume,
    doppler: &DopplerProfile,
    t: usize,
    s: &Schedule,
    denoiser: &D,
    noise: &Volume,
) -> Result<Volume> {
    s.require_step(t)?;
    check_dims(x_t, u0)?;
    check_dims(x_t, noise)?;
    let eps_hat = denoiser.predict_noise(x_t, u0, doppler, t, s)?;
    check_prediction(&eps_hat, x_t)?;
    let x0_hat = predict_x0(x_t, u0, t, s, &eps_hat)?;
    if t == 1 {
        return Ok(x0_hat);
    }
    let post = posterior_params(x_t, &x0_hat, u0, t, s)?;
    let sd = post.variance.sqrt();
    let mut out = post.mean;
    for (o, n) in out.values.iter_mut().zip(&noise.values) {
        *o += sd * n;
    }
    Ok(out)
}

/// Runs the full reverse chain from the radar prior and returns the clean
/// estimate clamped to `[0, 1]`.
///
/// `x_T` is drawn from the closed-form marginal with the unknown clean field
/// replaced by `u0`, i.e. `N(u0, beta_T^2)`. Noise for every step comes from
/// a ChaCha8 stream seeded by `seed`.
pub fn sample<D: Denoiser + ?Sized>(
    u0: &Volume,
    doppler: &DopplerProfile,
    s: &Schedule,
    denoiser: &D,
    seed: u64,
) -> Result<Volume> {
    if doppler.dims() != u0.dims() {
        return Err(Error::DimensionMismatch { expected: u0.dims.to_vec(), found: doppler.dims.to_vec() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Volume::standard_normal(u0.dims, &mut rng);
    let x_t = forward_marginal(u0, u0, s.steps(), s, &init)?;
    run_chain(x_t, u0, doppler, s, denoiser, &mut rng)
}

/// Reverse chain from a given `x_T` rather than the prior start. With a
/// noiseless schedule `x_T` is a deterministic function of `x0`, and only a
/// state that actually came from `x0` can be walked back to it.
pub fn sample_from<D: Denoiser + ?Sized>(
    x_t: &Volume,
    u0: &Volume,
    doppler: &DopplerProfile,
    s: &Schedule,
    denoiser: &D,
    seed: u64,
) -> Result<Volume> {
    if doppler.dims() != u0.dims() || x_t.dims() != u0.dims() {
        return Err(Error::DimensionMismatch { expected: u0.dims.to_vec(), found: x_t.dims.to_vec() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_chain(x_t.clone(), u0, doppler, s, denoiser, &mut rng)
}

fn run_chain<D: Denoiser + ?Sized>(
    mut x: Volume,
    u0: &Volume,
    doppler: &DopplerProfile,
    s: &Schedule,
    denoiser: &D,
    rng: &mut ChaCha8Rng,
) -> Result<Volume> {
    for t in (1..=s.steps()).rev() {
        let noise = if t >= 2 { Volume::standard_normal(u0.dims, rng) } else { Volume::zeros(u0.dims) };
        x = reverse_step(&x, u0, doppler, t, s, denoiser, &noise)?;
    }
    x.clamp_unit();
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(v: f64) -> Volume {
        Volume::scalar(v)
    }

    fn no_doppler() -> DopplerProfile {
        DopplerProfile::empty([1, 1, 1], 1.0)
    }

    #[test]
    fn identity_step() {
        let s = Schedule::from_parts(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let x = Volume::from_vec([1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let u0 = Volume::filled([1, 2, 2], 0.9);
        let noise = Volume::filled([1, 2, 2], 3.0);
        assert_eq!(forward_step(&x, &u0, 2, &s, &noise).unwrap(), x);
    }

    #[test]
    fn prior_is_fixed_point() {
        let s = Schedule::from_parts(vec![0.7, 0.3], vec![0.0, 0.0]).unwrap();
        let u0 = Volume::from_vec([1, 1, 2], vec![0.25, 0.75]).unwrap();
        let out = forward_step(&u0, &u0, 2, &s, &Volume::filled([1, 1, 2], 1.0)).unwrap();
        assert!(out.sup_distance(&u0).unwrap() < 1e-15);
    }

    #[test]
    fn forward_step_scalar() {
        // alpha_1 = 0.8, lambda = 0.1: 0.8 * 1 + 0.2 * 0 + 0.1 * 0.5
        let s = Schedule::from_parts(vec![0.8], vec![0.1]).unwrap();
        let out = forward_step(&sc(1.0), &sc(0.0), 1, &s, &sc(0.5)).unwrap();
        assert!((out.values()[0] - 0.85).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = Schedule::default_sampling();
        let a = Volume::zeros([2, 2, 2]);
        let b = Volume::zeros([2, 2, 1]);
        assert!(matches!(forward_step(&a, &b, 1, &s, &a), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(forward_marginal(&a, &a, 1, &s, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn marginal_at_prior_when_noiseless() {
        let s = Schedule::from_parts(vec![0.9, 0.5, 0.2], vec![0.0; 3]).unwrap();
        let u0 = Volume::from_vec([1, 1, 3], vec![0.1, 0.5, 0.9]).unwrap();
        for t in 1..=3 {
            let xt = forward_marginal(&u0, &u0, t, &s, &Volume::filled([1, 1, 3], 2.0)).unwrap();
            assert!(xt.sup_distance(&u0).unwrap() < 1e-15);
        }
    }

    #[test]
    fn marginal_concentrates_at_prior() {
        let s = Schedule::from_parts(vec![0.5, 1e-9], vec![0.1, 0.1]).unwrap();
        let xt = forward_marginal(&sc(1.0), &sc(0.3), 2, &s, &sc(0.0)).unwrap();
        assert!((xt.values()[0] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn posterior_matches_gaussian_bayes() {
        let s = Schedule::from_parts(vec![0.9, 0.5], vec![0.1, 0.1]).unwrap();
        let (x_t, x0, u0) = (0.4, 1.0, 0.0);
        // prior on x_1 from the marginal, likelihood from one forward step
        let prior_mean = 0.9 * x0 + 0.1 * u0;
        let prior_var = s.beta_sq(1);
        let a = 0.5 / 0.9;
        let lik_var = 0.01;
        let precision = 1.0 / prior_var + a * a / lik_var;
        let bayes_var = 1.0 / precision;
        let bayes_mean = bayes_var * (prior_mean / prior_var + a * (x_t - (1.0 - a) * u0) / lik_var);

        let post = posterior_params(&sc(x_t), &sc(x0), &sc(u0), 2, &s).unwrap();
        assert!((post.mean.values()[0] - bayes_mean).abs() < 1e-12);
        assert!((post.variance - bayes_var).abs() < 1e-12);

        let c = PosteriorCoefficients::at(&s, 2).unwrap();
        assert!((c.x_t - a * s.beta_sq(1) / s.beta_sq(2)).abs() < 1e-15);
        assert!((c.x0 - 0.01 * 0.9 / s.beta_sq(2)).abs() < 1e-15);
        assert!((c.x_t + c.x0 + c.u0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_of_constant_field_is_constant() {
        let s = Schedule::default_sampling();
        let v = Volume::filled([2, 2, 2], 0.37);
        for t in 2..=20 {
            let p = posterior_params(&v, &v, &v, t, &s).unwrap();
            assert!(p.mean.sup_distance(&v).unwrap() < 1e-12);
        }
    }

    #[test]
    fn posterior_rejects_first_step() {
        let s = Schedule::default_sampling();
        let v = sc(0.5);
        assert!(matches!(posterior_params(&v, &v, &v, 1, &s), Err(Error::DegenerateStep { step: 1 })));
    }

    #[test]
    fn predict_x0_scalar_inversion() {
        // alpha_bar = 0.8, beta = 0.1 (single step with lambda = 0.1)
        let s = Schedule::from_parts(vec![0.8], vec![0.1]).unwrap();
        let x0 = predict_x0(&sc(0.85), &sc(0.0), 1, &s, &sc(0.5)).unwrap();
        assert!((x0.values()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn predict_x0_round_trip() {
        let s = Schedule::default_sampling();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Volume::standard_normal([3, 2, 2], &mut rng);
        let u0 = Volume::standard_normal([3, 2, 2], &mut rng);
        let eps = Volume::standard_normal([3, 2, 2], &mut rng);
        for t in 1..=20 {
            let xt = forward_marginal(&x0, &u0, t, &s, &eps).unwrap();
            let back = predict_x0(&xt, &u0, t, &s, &eps).unwrap();
            assert!(back.sup_distance(&x0).unwrap() < 1e-10, "t={t}");
            let clean = forward_marginal(&x0, &u0, t, &s, &Volume::zeros([3, 2, 2])).unwrap();
            let back = predict_x0(&clean, &u0, t, &s, &Volume::zeros([3, 2, 2])).unwrap();
            assert!(back.sup_distance(&x0).unwrap() < 1e-10);
        }
    }

    #[test]
    fn predict_x0_ill_conditioned() {
        let s = Schedule::from_parts(vec![1e-13], vec![0.1]).unwrap();
        assert!(matches!(
            predict_x0(&sc(0.0), &sc(0.0), 1, &s, &sc(0.0)),
            Err(Error::IllConditionedStep { step: 1, .. })
        ));
    }

    #[test]
    fn oracle_reverse_step_equals_true_posterior() {
        let s = Schedule::default_sampling();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [2, 3, 2];
        let x0 = Volume::standard_normal(dims, &mut rng);
        let u0 = Volume::standard_normal(dims, &mut rng);
        let eps = Volume::standard_normal(dims, &mut rng);
        let oracle = OracleDenoiser { x0: x0.clone() };
        let doppler = DopplerProfile::empty(dims, 1.0);
        for t in 2..=20 {
            let xt = forward_marginal(&x0, &u0, t, &s, &eps).unwrap();
            let step = reverse_step(&xt, &u0, &doppler, t, &s, &oracle, &Volume::zeros(dims)).unwrap();
            let post = posterior_params(&xt, &x0, &u0, t, &s).unwrap();
            assert!(step.sup_distance(&post.mean).unwrap() < 1e-10);
        }
    }

    #[test]
    fn noiseless_reverse_inverts_forward() {
        let s = Schedule::from_parts(vec![0.9, 0.6, 0.3], vec![0.0; 3]).unwrap();
        let x0 = Volume::from_vec([1, 1, 2], vec![0.2, 0.8]).unwrap();
        let u0 = Volume::from_vec([1, 1, 2], vec![0.6, 0.1]).unwrap();
        let zero = Volume::zeros([1, 1, 2]);
        let oracle = OracleDenoiser { x0: x0.clone() };
        let doppler = DopplerProfile::empty([1, 1, 2], 1.0);
        let mut chain = vec![x0.clone()];
        for t in 1..=3 {
            let next = forward_step(chain.last().unwrap(), &u0, t, &s, &zero).unwrap();
            chain.push(next);
        }
        for t in (1..=3).rev() {
            let back = reverse_step(&chain[t], &u0, &doppler, t, &s, &oracle, &zero).unwrap();
            assert!(back.sup_distance(&chain[t - 1]).unwrap() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn reverse_step_scalar_chain() {
        // continues the posterior worked example: t = 2, alpha_bar = (0.9, 0.5)
        let s = Schedule::from_parts(vec![0.9, 0.5], vec![0.1, 0.1]).unwrap();
        let (x_t, x0, u0) = (0.4, 1.0, 0.0);
        let oracle = OracleDenoiser { x0: sc(x0) };
        let noise = 0.3;
        let out = reverse_step(&sc(x_t), &sc(u0), &no_doppler(), 2, &s, &oracle, &sc(noise)).unwrap();

        let a: f64 = 0.5 / 0.9;
        let prior_var = 0.01;
        let bayes_var = 1.0 / (1.0 / prior_var + a * a / 0.01);
        let bayes_mean = bayes_var * (0.9 / prior_var + a * x_t / 0.01);
        let expected = bayes_mean + bayes_var.sqrt() * noise;
        assert!((out.values()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn epsilon_route_matches_substitution_route() {
        let s = Schedule::default_sampling();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [4, 1, 1];
        for t in 2..=20 {
            let x_t = Volume::standard_normal(dims, &mut rng);
            let u0 = Volume::standard_normal(dims, &mut rng);
            let eps = Volume::standard_normal(dims, &mut rng);
            let x0_hat = predict_x0(&x_t, &u0, t, &s, &eps).unwrap();
            let via_x0 = posterior_params(&x_t, &x0_hat, &u0, t, &s).unwrap().mean;
            let via_eps = epsilon_mean(&x_t, &u0, &eps, t, &s).unwrap();
            assert!(via_x0.sup_distance(&via_eps).unwrap() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn denoiser_failures_propagate() {
        let s = Schedule::default_sampling();
        let v = Volume::zeros([2, 1, 1]);
        let doppler = DopplerProfile::empty([2, 1, 1], 1.0);
        let failing = |_: &Volume, _: &Volume, _: &DopplerProfile, _: usize, _: &Schedule| -> Result<Volume> {
            Err(Error::Denoiser("boom".into()))
        };
        assert!(matches!(reverse_step(&v, &v, &doppler, 3, &s, &failing, &v), Err(Error::Denoiser(_))));
        let wrong_dims = |_: &Volume, _: &Volume, _: &DopplerProfile, _: usize, _: &Schedule| -> Result<Volume> {
            Ok(Volume::zeros([1, 1, 1]))
        };
        assert!(matches!(reverse_step(&v, &v, &doppler, 3, &s, &wrong_dims, &v), Err(Error::Denoiser(_))));
    }

    #[test]
    fn single_step_sample_is_posterior_mean() {
        let s = Schedule::linear(1, 0.5, 0.5, 0.1).unwrap();
        let x0 = Volume::from_vec([1, 1, 2], vec![0.2, 0.9]).unwrap();
        let u0 = Volume::from_vec([1, 1, 2], vec![0.5, 0.4]).unwrap();
        let oracle = OracleDenoiser { x0: x0.clone() };
        let out = sample(&u0, &DopplerProfile::empty([1, 1, 2], 1.0), &s, &oracle, 9).unwrap();
        assert!(out.sup_distance(&x0).unwrap() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = Schedule::default_sampling();
        let dims = [3, 2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = Volume::standard_normal(dims, &mut rng).map(|v| v.abs().min(1.0));
        let shrink = |x_t: &Volume, u0: &Volume, _: &DopplerProfile, t: usize, s: &Schedule| {
            implied_noise(x_t, &u0.map(|v| 0.5 * v), u0, t, s)
        };
        let doppler = DopplerProfile::empty(dims, 1.0);
        let a = sample(&u0, &doppler, &s, &shrink, 42).unwrap();
        let b = sample(&u0, &doppler, &s, &shrink, 42).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn doppler_profile_bounds() {
        assert!(DopplerProfile::from_vec([1, 1, 2], vec![Some(0.5), None], 1.0).is_ok());
        assert!(DopplerProfile::from_vec([1, 1, 2], vec![Some(1.5), None], 1.0).is_err());
        assert!(DopplerProfile::from_vec([1, 1, 1], vec![Some(0.5), None], 1.0).is_err());
    }
}
