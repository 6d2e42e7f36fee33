//! Two-parameter logistic item response model.
//!
//! The response probability of an examinee with ability `theta` on an item
//! with discrimination `a` and difficulty `b` is
//!
//! ```text
//! P = 1 / (1 + exp(-1.7 a (theta - b))),   Q = 1 - P
//! ```
//!
//! All log-probabilities are evaluated through a stable softplus so that
//! large `|1.7 a (theta - b)|` neither overflows nor loses the tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic-to-normal-ogive scaling constant.
pub const SCALE: f64 = 1.7;

/// Discrimination and difficulty of one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    a: f64,
    b: f64,
}

impl ItemParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || a <= 0.0 {
            return Err(Error::invalid(format!("discrimination must be finite and > 0, got {a}")));
        }
        if !b.is_finite() {
            return Err(Error::invalid(format!("difficulty must be finite, got {b}")));
        }
        Ok(Self { a, b })
    }

    /// The uncalibrated defaults every new item starts with: `a = 1, b = 0`.
    pub const fn default_params() -> Self {
        Self { a: 1.0, b: 0.0 }
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Logit `1.7 a (theta - b)`.
    #[inline]
    pub fn logit(&self, theta: f64) -> f64 {
        SCALE * self.a * (theta - self.b)
    }

    /// Unchecked correct-response probability.
    #[inline]
    pub fn prob(&self, theta: f64) -> f64 {
        logistic(self.logit(theta))
    }
}

impl Default for ItemParams {
    fn default() -> Self {
        Self::default_params()
    }
}

/// Shorthand for [`ItemParams::default_params`].
pub fn default_params() -> ItemParams {
    ItemParams::default_params()
}

/// Examinee ability on the standard-normal metric.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Ability(f64);

impl Ability {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() {
            Ok(Self(theta))
        } else {
            Err(Error::invalid(format!("ability must be finite, got {theta}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Graded result of one item encounter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Correct,
    Incorrect,
    /// The examinee left the item unfinished. Graded as incorrect.
    Abandoned,
}

impl Outcome {
    /// Likelihood indicator: 1 for `Correct`, 0 otherwise.
    #[inline]
    pub fn delta(self) -> f64 {
        match self {
            Outcome::Correct => 1.0,
            Outcome::Incorrect | Outcome::Abandoned => 0.0,
        }
    }

    #[inline]
    pub fn is_correct(self) -> bool {
        matches!(self, Outcome::Correct)
    }

    pub fn code(self) -> char {
        match self {
            Outcome::Correct => 'C',
            Outcome::Incorrect => 'I',
            Outcome::Abandoned => 'A',
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "C" => Some(Outcome::Correct),
            "I" => Some(Outcome::Incorrect),
            "A" => Some(Outcome::Abandoned),
            _ => None,
        }
    }
}

/// One scored response against a known item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub outcome: Outcome,
    pub params: ItemParams,
}

impl Response {
    pub fn new(outcome: Outcome, params: ItemParams) -> Self {
        Self { outcome, params }
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `P * Q` for logit `z`, accurate in both tails.
#[inline]
pub(crate) fn pq(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Item characteristic curve. Saturates to 0 or 1 only where the true
/// value is closer to the bound than f64 can represent.
pub fn icc(theta: Ability, params: &ItemParams) -> f64 {
    params.prob(theta.value())
}

/// Fisher information `1.7^2 a^2 P Q`, maximal at `theta = b`.
pub fn item_information(theta: Ability, params: &ItemParams) -> f64 {
    let da = SCALE * params.a;
    da * da * pq(params.logit(theta.value()))
}

/// Log-likelihood contribution of a single response, `δ ln P + (1-δ) ln Q`.
#[inline]
pub(crate) fn response_log_likelihood(outcome: Outcome, params: &ItemParams, theta: f64) -> f64 {
    let z = params.logit(theta);
    if outcome.is_correct() {
        -softplus(-z)
    } else {
        -softplus(z)
    }
}

fn require_nonempty(responses: &[Response]) -> Result<()> {
    if responses.is_empty() {
        Err(Error::invalid("response list is empty"))
    } else {
        Ok(())
    }
}

pub fn log_likelihood(responses: &[Response], theta: Ability) -> Result<f64> {
    require_nonempty(responses)?;
    let theta = theta.value();
    Ok(responses
        .iter()
        .map(|r| response_log_likelihood(r.outcome, &r.params, theta))
        .sum())
}

/// Derivative of [`log_likelihood`] with respect to theta: `Σ 1.7 a (δ - P)`.
pub fn log_likelihood_grad(responses: &[Response], theta: Ability) -> Result<f64> {
    require_nonempty(responses)?;
    Ok(grad_hess(responses, theta.value()).0)
}

/// Gradient and (always negative) second derivative of the log-likelihood.
pub(crate) fn grad_hess(responses: &[Response], theta: f64) -> (f64, f64) {
    let mut grad = 0.0;
    let mut hess = 0.0;
    for r in responses {
        let da = SCALE * r.params.a;
        let z = r.params.logit(theta);
        grad += da * (r.outcome.delta() - logistic(z));
        hess -= da * da * pq(z);
    }
    (grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn th(x: f64) -> Ability {
        Ability::new(x).unwrap()
    }

    fn ip(a: f64, b: f64) -> ItemParams {
        ItemParams::new(a, b).unwrap()
    }

    #[test]
    fn icc_examples() {
        assert_eq!(icc(th(0.0), &ip(1.0, 0.0)), 0.5);
        let expected = 1.0 / (1.0 + (-1.7f64).exp());
        assert!((icc(th(1.0), &ip(1.0, 0.0)) - expected).abs() < 1e-15);
        assert!((icc(th(1.0), &ip(1.0, 0.0)) - 0.84553).abs() < 1e-5);
        assert!((icc(th(-1.0), &ip(1.0, 0.0)) - 0.15447).abs() < 1e-5);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Ability::new(f64::NAN).is_err());
        assert!(Ability::new(f64::INFINITY).is_err());
        assert!(ItemParams::new(0.0, 0.0).is_err());
        assert!(ItemParams::new(-1.0, 0.0).is_err());
        assert!(ItemParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let p = ip(3.0, 0.0);
        let lo = icc(th(-200.0), &p);
        let hi = icc(th(200.0), &p);
        assert!((0.0..1e-300).contains(&lo));
        assert_eq!(hi, 1.0);
        let r = [Response::new(Outcome::Correct, p)];
        let ll = log_likelihood(&r, th(-200.0)).unwrap();
        assert!(ll.is_finite());
        assert!((ll - (-1.7 * 3.0 * 200.0)).abs() < 1e-9);
        assert!(item_information(th(-200.0), &p).is_finite());
    }

    #[test]
    fn information_examples() {
        assert!((item_information(th(0.0), &ip(1.0, 0.0)) - 0.7225).abs() < 1e-12);
        assert!((item_information(th(-0.37), &ip(2.0, -0.37)) - 2.89).abs() < 1e-12);

        let p = ip(1.0, 0.8);
        let step = 1e-3;
        let argmax = (0..=8000)
            .map(|i| -4.0 + i as f64 * step)
            .max_by(|x, y| {
                item_information(th(*x), &p)
                    .partial_cmp(&item_information(th(*y), &p))
                    .unwrap()
            })
            .unwrap();
        assert!((argmax - 0.8).abs() <= step);
    }

    #[test]
    fn likelihood_examples() {
        let p = ip(1.0, 0.0);
        let c = Response::new(Outcome::Correct, p);
        let i = Response::new(Outcome::Incorrect, p);
        let ln_half = 0.5f64.ln();
        assert!((log_likelihood(&[c], th(0.0)).unwrap() - ln_half).abs() < 1e-15);
        assert!((log_likelihood(&[c, i], th(0.0)).unwrap() - 2.0 * ln_half).abs() < 1e-15);
        let ll1 = log_likelihood(&[c], th(1.0)).unwrap();
        assert!((ll1 - icc(th(1.0), &p).ln()).abs() < 1e-15);
        assert!((ll1 - (-0.16780)).abs() < 5e-5);
        assert!(log_likelihood(&[], th(0.0)).is_err());
        assert!(log_likelihood_grad(&[], th(0.0)).is_err());
    }

    #[test]
    fn abandoned_scores_as_incorrect() {
        let p = ip(1.3, 0.4);
        let a = [Response::new(Outcome::Abandoned, p)];
        let i = [Response::new(Outcome::Incorrect, p)];
        assert_eq!(log_likelihood(&a, th(0.2)).unwrap(), log_likelihood(&i, th(0.2)).unwrap());
    }

    #[test]
    fn gradient_examples() {
        let p = ip(1.0, 0.0);
        let c = Response::new(Outcome::Correct, p);
        let i = Response::new(Outcome::Incorrect, p);
        assert!((log_likelihood_grad(&[c], th(0.0)).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(log_likelihood_grad(&[c, i], th(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn gradient_zero_at_mle() {
        // Mixed pattern has a finite MLE; bisect on the gradient to find it.
        let rs = [
            Response::new(Outcome::Correct, ip(1.2, -0.5)),
            Response::new(Outcome::Incorrect, ip(0.8, 0.3)),
            Response::new(Outcome::Correct, ip(1.5, 0.9)),
            Response::new(Outcome::Incorrect, ip(1.0, 1.4)),
        ];
        let (mut lo, mut hi) = (-6.0, 6.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if log_likelihood_grad(&rs, th(mid)).unwrap() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(log_likelihood_grad(&rs, th(lo)).unwrap().abs() < 1e-8);
    }

    fn outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![Just(Outcome::Correct), Just(Outcome::Incorrect), Just(Outcome::Abandoned)]
    }

    proptest! {
        #[test]
        fn midpoint_is_half(a in 0.05f64..5.0, b in -10.0f64..10.0) {
            prop_assert_eq!(icc(th(b), &ip(a, b)), 0.5);
        }

        #[test]
        fn logistic_symmetry(a in 0.05f64..5.0, b in -4.0f64..4.0, d in -6.0f64..6.0) {
            let p = ip(a, b);
            let s = icc(th(b + d), &p) + icc(th(b - d), &p);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_theta(a in 0.05f64..3.0, b in -3.0f64..3.0, t in -3.0f64..3.0, dt in 1e-3f64..1.0) {
            let p = ip(a, b);
            prop_assert!(icc(th(t + dt), &p) > icc(th(t), &p));
        }

        #[test]
        fn information_peaks_at_difficulty(a in 0.05f64..5.0, b in -4.0f64..4.0, t in -8.0f64..8.0) {
            let p = ip(a, b);
            prop_assert!(item_information(th(t), &p) <= item_information(th(b), &p));
        }

        #[test]
        fn gradient_matches_central_difference(
            rs in prop::collection::vec((outcome(), 0.3f64..2.5, -2.5f64..2.5), 1..10),
            t in -3.0f64..3.0,
        ) {
            let rs: Vec<Response> = rs.into_iter().map(|(o, a, b)| Response::new(o, ip(a, b))).collect();
            let h = 1e-5;
            let fd = (log_likelihood(&rs, th(t + h)).unwrap() - log_likelihood(&rs, th(t - h)).unwrap()) / (2.0 * h);
            let g = log_likelihood_grad(&rs, th(t)).unwrap();
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0));
        }

        #[test]
        fn log_likelihood_nonpositive(
            rs in prop::collection::vec((outcome(), 0.3f64..2.5, -2.5f64..2.5), 1..10),
            t in -5.0f64..5.0,
        ) {
            let rs: Vec<Response> = rs.into_iter().map(|(o, a, b)| Response::new(o, ip(a, b))).collect();
            prop_assert!(log_likelihood(&rs, th(t)).unwrap() <= 0.0);
        }
    }
}
