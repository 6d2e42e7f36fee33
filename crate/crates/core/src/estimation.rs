//! Ability estimation under a normal prior: posterior mode (MAP) by
//! safeguarded Newton iteration and posterior mean (EAP) by fixed-grid
//! quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{grad_hess, response_log_likelihood, Response};

/// Abilities are searched for, and clamped to, this interval.
pub const THETA_BOUND: f64 = 6.0;
/// Convergence threshold on the log-posterior gradient.
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
pub const DEFAULT_QUADRATURE: usize = 61;
pub const MIN_QUADRATURE: usize = 21;
const MAX_STEP: f64 = 2.0;

/// Normal prior over a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    mean: f64,
    sd: f64,
}

impl Prior {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::invalid(format!("prior mean must be finite, got {mean}")));
        }
        if !sd.is_finite() || sd <= 0.0 {
            return Err(Error::invalid(format!("prior sd must be finite and > 0, got {sd}")));
        }
        Ok(Self { mean, sd })
    }

    pub const fn standard_normal() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    /// Log density up to an additive constant.
    #[inline]
    pub(crate) fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z
    }

    #[inline]
    pub(crate) fn grad(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.sd * self.sd)
    }

    #[inline]
    pub(crate) fn hess(&self) -> f64 {
        -1.0 / (self.sd * self.sd)
    }
}

impl Default for Prior {
    fn default() -> Self {
        Self::standard_normal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Map,
    Eap,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "map" => Ok(Method::Map),
            "eap" => Ok(Method::Eap),
            other => Err(Error::invalid(format!("unknown estimator '{other}' (expected map or eap)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub value: f64,
    pub method: Method,
    pub n_responses: usize,
}

/// Maximizes a strictly concave function on `[-THETA_BOUND, THETA_BOUND]`
/// given its first and second derivative.
///
/// Newton steps are capped at `MAX_STEP`; any step that leaves the current
/// sign bracket of the gradient is replaced by bisection. If the gradient
/// does not change sign on the interval, the maximizing endpoint is returned.
pub(crate) fn maximize_concave<F>(start: f64, mut derivs: F) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut lo, mut hi) = (-THETA_BOUND, THETA_BOUND);
    if derivs(lo).0 <= 0.0 {
        return Ok(lo);
    }
    if derivs(hi).0 >= 0.0 {
        return Ok(hi);
    }
    let mut theta = start.clamp(lo, hi);
    for _ in 0..MAX_ITER {
        let (g, h) = derivs(theta);
        if g.abs() < GRAD_TOL {
            return Ok(theta);
        }
        if g > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let step = (-g / h).clamp(-MAX_STEP, MAX_STEP);
        let next = theta + step;
        theta = if next > lo && next < hi && step.is_finite() {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::EstimationFailed {
        last: theta,
        iterations: MAX_ITER,
    })
}

/// Posterior mode of ability. Empty response lists return the prior mode.
pub fn estimate_map(responses: &[Response], prior: &Prior) -> Result<AbilityEstimate> {
    let value = maximize_concave(prior.mean(), |t| {
        let (g, h) = grad_hess(responses, t);
        (g + prior.grad(t), h + prior.hess())
    })?;
    Ok(AbilityEstimate {
        value,
        method: Method::Map,
        n_responses: responses.len(),
    })
}

/// Posterior mean of ability by equally spaced quadrature over
/// `[mean - 5 sd, mean + 5 sd]`.
pub fn estimate_eap(responses: &[Response], prior: &Prior, n_quadrature: usize) -> Result<AbilityEstimate> {
    if n_quadrature < MIN_QUADRATURE {
        return Err(Error::invalid(format!(
            "n_quadrature must be at least {MIN_QUADRATURE}, got {n_quadrature}"
        )));
    }
    let lo = prior.mean() - 5.0 * prior.sd();
    let step = 10.0 * prior.sd() / (n_quadrature - 1) as f64;
    let nodes: Vec<f64> = (0..n_quadrature).map(|i| lo + i as f64 * step).collect();
    let log_post: Vec<f64> = nodes
        .iter()
        .map(|&t| {
            prior.log_density(t)
                + responses
                    .iter()
                    .map(|r| response_log_likelihood(r.outcome, &r.params, t))
                    .sum::<f64>()
        })
        .collect();
    let peak = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &lp) in nodes.iter().zip(&log_post) {
        let w = (lp - peak).exp();
        num += w * t;
        den += w;
    }
    Ok(AbilityEstimate {
        value: num / den,
        method: Method::Eap,
        n_responses: responses.len(),
    })
}

/// Dispatches on `method`; EAP uses [`DEFAULT_QUADRATURE`] nodes.
pub fn estimate(responses: &[Response], prior: &Prior, method: Method) -> Result<AbilityEstimate> {
    match method {
        Method::Map => estimate_map(responses, prior),
        Method::Eap => estimate_eap(responses, prior, DEFAULT_QUADRATURE),
    }
}

/// Estimates after each prefix of `responses`; element `l - 1` uses the
/// first `l` responses.
pub fn sequential_trace(responses: &[Response], prior: &Prior, method: Method) -> Result<Vec<AbilityEstimate>> {
    if responses.is_empty() {
        return Err(Error::invalid("response list is empty"));
    }
    (1..=responses.len())
        .map(|l| estimate(&responses[..l], prior, method).map_err(|e| e.at_position(l)))
        .collect()
}
