#![allow(dead_code)]

use std::collections::HashSet;

use adaptest_core::bank::{Item, ItemBank};
use adaptest_core::calibration::ResponseMatrix;
use adaptest_core::estimation::estimate_map;
use adaptest_core::irt::log_likelihood;
use adaptest_core::session::TraceEntry;
use adaptest_core::{Ability, ItemParams, Outcome, Prior, Response};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Known-parameter recovery setup: `a ~ U[0.7, 1.3]`, `b ~ U[-2, 2]`,
/// `theta ~ N(0, 1)`; each cell kept with probability `keep`.
pub struct Recovery {
    pub params: Vec<ItemParams>,
    pub thetas: Vec<f64>,
    pub matrix: ResponseMatrix,
}

pub fn recovery(n_examinees: usize, n_items: usize, keep: f64, seed: u64) -> Recovery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<ItemParams> = (0..n_items)
        .map(|_| ItemParams::new(rng.random_range(0.7..=1.3), rng.random_range(-2.0..=2.0)).unwrap())
        .collect();
    let thetas: Vec<f64> = (0..n_examinees).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut matrix = ResponseMatrix::new();
    for (e, &t) in thetas.iter().enumerate() {
        for (j, p) in params.iter().enumerate() {
            let u: f64 = rng.random();
            let k: f64 = rng.random();
            if k < keep {
                matrix.insert(e as u64, j as u32, u < p.prob(t)).unwrap();
            }
        }
    }
    Recovery { params, thetas, matrix }
}

pub fn rmse(x: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (s, n) = x.into_iter().fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).powi(2), n + 1));
    (s / n as f64).sqrt()
}

/// `sections` sections of `per_section` items with `b ~ N(0, 1)`, `a = 1`.
pub fn normal_bank(sections: u32, per_section: u32, seed: u64) -> ItemBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for s in 0..sections {
        for i in 0..per_section {
            let b: f64 = StandardNormal.sample(&mut rng);
            items.push(Item::new(1000 * (s + 1) + i, 30 + s, ItemParams::new(1.0, b).unwrap()));
        }
    }
    ItemBank::new(items).unwrap()
}

/// `n` items, `b` uniform on `[-3, 3]` (random draws), `a = 1`.
pub fn dense_bank(n: u32, seed: u64) -> ItemBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ItemBank::new((0..n).map(|i| {
        Item::new(i + 1, 1, ItemParams::new(1.0, rng.random_range(-3.0..=3.0)).unwrap())
    }))
    .unwrap()
}

/// Unnormalized log posterior under a normal prior, from public pieces only.
pub fn log_post(responses: &[Response], prior: &Prior, theta: f64) -> f64 {
    let z = (theta - prior.mean()) / prior.sd();
    log_likelihood(responses, Ability::new(theta).unwrap()).unwrap() - 0.5 * z * z
}

/// Posterior mode by exhaustive search on a `step` grid over `[-6, 6]`.
pub fn grid_map(responses: &[Response], prior: &Prior, step: f64) -> f64 {
    let n = (12.0 / step).round() as usize;
    (0..=n)
        .map(|i| -6.0 + i as f64 * step)
        .map(|t| (t, log_post(responses, prior, t)))
        .fold((0.0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
        .0
}

/// Posterior mean by the trapezoid rule on `points` nodes over mean ± 8 sd.
pub fn trapezoid_eap(responses: &[Response], prior: &Prior, points: usize) -> f64 {
    let lo = prior.mean() - 8.0 * prior.sd();
    let h = 16.0 * prior.sd() / (points - 1) as f64;
    let lp: Vec<f64> = (0..points).map(|i| log_post(responses, prior, lo + i as f64 * h)).collect();
    let peak = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, l) in lp.iter().enumerate() {
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 } * (l - peak).exp();
        num += w * (lo + i as f64 * h);
        den += w;
    }
    num / den
}

/// Random short pattern: `len` items with `a ~ U[0.5, 2]`, `b ~ U[-2.5, 2.5]`
/// and uniformly random outcomes (abandons included).
pub fn random_pattern<R: Rng>(rng: &mut R, len: usize) -> Vec<Response> {
    (0..len)
        .map(|_| {
            let params = ItemParams::new(rng.random_range(0.5..2.0), rng.random_range(-2.5..2.5)).unwrap();
            let outcome = match rng.random_range(0..5) {
                0 | 1 => Outcome::Correct,
                2 | 3 => Outcome::Incorrect,
                _ => Outcome::Abandoned,
            };
            Response::new(outcome, params)
        })
        .collect()
}

/// Checks one finished session trace against the selection rules using only
/// the bank and the recorded outcomes. Returns a description of the first
/// violation.
type Band = fn(f64) -> bool;

pub fn check_selection_rules(bank: &ItemBank, section: u32, trace: &[TraceEntry]) -> Result<(), String> {
    let items = bank.section(section).map_err(|e| e.to_string())?;
    let mut used: HashSet<u32> = HashSet::new();
    let mut responses = Vec::new();
    for (idx, entry) in trace.iter().enumerate() {
        let pos = idx + 1;
        let b = entry.item.params.b();
        if !used.insert(entry.item.item_id) {
            return Err(format!("position {pos}: item {} repeated", entry.item.item_id));
        }
        let pool: Vec<f64> = items
            .iter()
            .filter(|it| !used.contains(&it.item_id) || it.item_id == entry.item.item_id)
            .map(|it| it.params.b())
            .collect();
        match pos {
            1 => {
                let is_default = |p: &ItemParams| (p.a() - 1.0).abs() <= 1e-9 && p.b().abs() <= 1e-9;
                let has_default = items.iter().any(|it| is_default(&it.params));
                let ok = if has_default {
                    is_default(&entry.item.params)
                } else {
                    (-0.25..=0.25).contains(&b)
                };
                if !ok {
                    return Err(format!("position 1: b = {b} breaks the initial rule"));
                }
            }
            2 => {
                let (primary, widened): (Band, Band) = if trace[0].outcome.is_correct() {
                    (|b| (0.5..=1.0).contains(&b), |b| b >= 0.0)
                } else {
                    (|b| (-1.0..=-0.5).contains(&b), |b| b <= 0.0)
                };
                let ok = if pool.iter().any(|&x| primary(x)) {
                    primary(b)
                } else if pool.iter().any(|&x| widened(x)) {
                    widened(b)
                } else {
                    pool.iter().all(|&x| b.abs() <= x.abs())
                };
                if !ok {
                    return Err(format!("position 2: b = {b} breaks the conditioned rule"));
                }
            }
            _ => {
                let target = trace[idx - 1].theta_hat;
                if let Some(&x) = pool.iter().find(|&&x| (x - target).abs() < (b - target).abs()) {
                    return Err(format!("position {pos}: b = {b} but {x} is nearer to {target}"));
                }
            }
        }
        responses.push(Response::new(entry.outcome, entry.item.params));
        let expected = estimate_map(&responses, &Prior::standard_normal()).map_err(|e| e.to_string())?.value;
        if expected != entry.theta_hat {
            return Err(format!("position {pos}: recorded estimate {} != {expected}", entry.theta_hat));
        }
    }
    Ok(())
}

/// Random bank for rule checks: mixes sections with and without default
/// items, sparse and dense difficulty ranges, and exact ties.
pub fn rule_bank<R: Rng>(rng: &mut R) -> ItemBank {
    let mut items = Vec::new();
    let n = rng.random_range(12..60u32);
    let spread: f64 = rng.random_range(0.5..3.5);
    for i in 0..n {
        let b = match rng.random_range(0..10) {
            0 => 0.0,
            1 => (rng.random_range(-6..=6) as f64) * 0.25,
            _ => rng.random_range(-spread..spread),
        };
        let a = if rng.random_range(0..4) == 0 { 1.0 } else { rng.random_range(0.6..1.6) };
        items.push(Item::new(i + 1, 7, ItemParams::new(a, b).unwrap()));
    }
    // Guarantee an admissible first item.
    items.push(Item::new(n + 1, 7, ItemParams::new(1.3, rng.random_range(-0.25..=0.25)).unwrap()));
    ItemBank::new(items).unwrap()
}

pub fn random_outcome<R: Rng>(rng: &mut R) -> Outcome {
    match rng.random_range(0..7) {
        0..=2 => Outcome::Correct,
        3..=5 => Outcome::Incorrect,
        _ => Outcome::Abandoned,
    }
}
