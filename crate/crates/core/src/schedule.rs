//! Diffusion time-axis coefficients.
//!
//! Steps are 1-based throughout: `t = 1` is the step nearest the data end and
//! `t = T` the step nearest the radar prior. Boundary conventions are
//! `alpha_bar(0) = 1` and `beta_sq(0) = 0`.
//!
//! The forward kernel moves `x_{t-1}` toward the prior `u0`:
//! `x_t = alpha_t x_{t-1} + (1 - alpha_t) u0 + lambda_t eps`, and the marginal
//! variance accumulates as `beta_t^2 = alpha_t^2 beta_{t-1}^2 + lambda_t^2`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Immutable per-step coefficients for a directional diffusion chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    beta_sq: Vec<f64>,
    sigma_sq: Vec<f64>,
}

/// On-disk form: only the free parameters, everything else is re-derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Schedule {
    /// Linear `alpha_bar` between `alpha_bar_near_data` (t = 1) and
    /// `alpha_bar_near_prior` (t = T), constant noise scale.
    ///
    /// With the defaults (0.99, 0.01) `alpha_bar` decreases with `t`, so the
    /// closed-form marginal at `t = T` concentrates on the radar prior. The
    /// opposite orientation is constructible by swapping the endpoints.
    pub fn linear(
        steps: usize,
        alpha_bar_near_data: f64,
        alpha_bar_near_prior: f64,
        lambda: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("step count must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha_bar_near_data", alpha_bar_near_data),
            ("alpha_bar_near_prior", alpha_bar_near_prior),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name}={v} must lie in (0, 1)")));
            }
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda={lambda} must be positive")));
        }
        let alpha_bar = (0..steps)
            .map(|i| {
                if steps == 1 {
                    alpha_bar_near_data
                } else {
                    let frac = i as f64 / (steps - 1) as f64;
                    alpha_bar_near_data + (alpha_bar_near_prior - alpha_bar_near_data) * frac
                }
            })
            .collect();
        Self::from_parts(alpha_bar, vec![lambda; steps])
    }

    /// Twenty steps from 0.99 to 0.01 with noise scale 0.1.
    pub fn default_sampling() -> Self {
        Self::linear(20, 0.99, 0.01, 0.1).expect("default schedule parameters are valid")
    }

    /// Builds a schedule from explicit per-step `alpha_bar` and `lambda`.
    ///
    /// Unlike [`Schedule::linear`], zero noise scales are accepted so that
    /// noiseless chains can be constructed.
    pub fn from_parts(alpha_bar: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let steps = alpha_bar.len();
        if steps == 0 {
            return Err(Error::InvalidParameter("step count must be at least 1".into()));
        }
        if lambda.len() != steps {
            return Err(Error::DimensionMismatch { expected: vec![steps], found: vec![lambda.len()] });
        }
        if let Some(v) = alpha_bar.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidParameter(format!("alpha_bar entry {v} must lie in (0, 1]")));
        }
        if let Some(v) = lambda.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("lambda entry {v} must be non-negative")));
        }

        let mut alpha = Vec::with_capacity(steps);
        let mut beta_sq = Vec::with_capacity(steps + 1);
        let mut sigma_sq = Vec::with_capacity(steps);
        beta_sq.push(0.0);
        let mut prev_bar = 1.0;
        for t in 0..steps {
            let a = alpha_bar[t] / prev_bar;
            let prev_beta = beta_sq[t];
            let l2 = lambda[t] * lambda[t];
            let b = a * a * prev_beta + l2;
            // noiseless prefix: the posterior is a point mass
            let s = if b > 0.0 { l2 * prev_beta / b } else { 0.0 };
            alpha.push(a);
            beta_sq.push(b);
            sigma_sq.push(s);
            prev_bar = alpha_bar[t];
        }
        Ok(Self { alpha_bar, alpha, lambda, beta_sq, sigma_sq })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { step: t, steps: self.steps() });
        }
        Ok(())
    }

    /// `alpha_bar(t)` for `0 <= t <= T`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t - 1]
    }

    /// `beta_t^2` for `0 <= t <= T`, with `beta_0^2 = 0`.
    pub fn beta_sq(&self, t: usize) -> f64 {
        self.beta_sq[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta_sq[t].sqrt()
    }

    /// Posterior variance of `x_{t-1}` given `x_t`, `x0` and `u0`.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.sigma_sq[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    /// Accumulated variances indexed `0..=T`.
    pub fn beta_sqs(&self) -> &[f64] {
        &self.beta_sq
    }

    pub fn sigma_sqs(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma_sq.iter().fold(0.0_f64, |m, s| m.max(*s)).sqrt()
    }

    /// Per-step weight of the noise-matching loss,
    /// `lambda_t^2 / (2 alpha_t^2 beta_{t-1}^2)`.
    pub fn spatial_loss_weight(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        let prev = self.beta_sq(t - 1);
        if prev <= 0.0 {
            return Err(Error::DegenerateStep { step: t });
        }
        let a = self.alpha(t);
        let l = self.lambda(t);
        Ok(l * l / (2.0 * a * a * prev))
    }

    /// Per-step weight of the Doppler-consistency loss,
    /// `lambda_t^2 alpha_bar_{t-1}^2 / (2 beta_t^2 beta_{t-1}^2)`.
    pub fn doppler_loss_weight(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        let prev = self.beta_sq(t - 1);
        if prev <= 0.0 {
            return Err(Error::DegenerateStep { step: t });
        }
        let l = self.lambda(t);
        let ab = self.alpha_bar(t - 1);
        Ok(l * l * ab * ab / (2.0 * self.beta_sq(t) * prev))
    }

    pub(crate) fn require_step(&self, t: usize) -> Result<()> {
        self.check(t)
    }

    pub fn to_document(&self) -> ScheduleDocument {
        ScheduleDocument {
            steps: self.steps(),
            alpha_bar: self.alpha_bar.clone(),
            lambda: self.lambda.clone(),
        }
    }

    pub fn from_document(doc: ScheduleDocument) -> Result<Self> {
        if doc.steps != doc.alpha_bar.len() {
            return Err(Error::Format(format!(
                "schedule declares {} steps but lists {} alpha_bar values",
                doc.steps,
                doc.alpha_bar.len()
            )));
        }
        Self::from_parts(doc.alpha_bar, doc.lambda)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}
