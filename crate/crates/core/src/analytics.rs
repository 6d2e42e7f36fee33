//! Correct-answer rates (CAR) and the per-item, per-section and per-period
//! statistics used to judge whether an adaptive test is adapting.
//!
//! CAR counts abandoned items in the denominator. Intervals default to the
//! Wald normal approximation; Wilson is available through [`car_ci_with`].

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bank::{ItemBank, ItemId, SectionId};
use crate::error::{Error, Result};
use crate::records::{ResponseLog, ResponseRecord};
use crate::session::{award_for, PointsLedger};

pub mod report;

pub fn car(correct: u64, total: u64) -> Result<f64> {
    check_counts(correct, total)?;
    Ok(correct as f64 / total as f64)
}

fn check_counts(correct: u64, total: u64) -> Result<()> {
    if total == 0 {
        return Err(Error::invalid("total must be at least 1"));
    }
    if correct > total {
        return Err(Error::invalid(format!("correct ({correct}) exceeds total ({total})")));
    }
    Ok(())
}

/// Two-sided standard-normal quantile for a confidence level.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must be in (0, 1), got {level}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalMethod {
    #[default]
    Wald,
    Wilson,
}

/// Wald interval `p ± z sqrt(p(1-p)/n)` clamped to `[0, 1]`.
pub fn car_ci(correct: u64, total: u64, level: f64) -> Result<(f64, f64)> {
    car_ci_with(correct, total, level, IntervalMethod::Wald)
}

pub fn car_ci_with(correct: u64, total: u64, level: f64, method: IntervalMethod) -> Result<(f64, f64)> {
    let p = car(correct, total)?;
    let z = z_for_level(level)?;
    let n = total as f64;
    let (lo, hi) = match method {
        IntervalMethod::Wald => {
            let half = z * (p * (1.0 - p) / n).sqrt();
            (p - half, p + half)
        }
        IntervalMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / n;
            let centre = (p + z2 / (2.0 * n)) / denom;
            let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
            (centre - half, centre + half)
        }
    };
    Ok((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0)))
}

/// CAR of one group with its Wald interval and binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CarResult {
    pub correct: u64,
    pub total: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub sd: f64,
}

impl CarResult {
    pub fn new(correct: u64, total: u64, level: f64) -> Result<Self> {
        let rate = car(correct, total)?;
        let (ci_low, ci_high) = car_ci(correct, total, level)?;
        Ok(Self {
            correct,
            total,
            rate,
            ci_low,
            ci_high,
            sd: (rate * (1.0 - rate) / total as f64).sqrt(),
        })
    }
}

/// Rounds half to even at three decimals.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round_ties_even() / 1000.0
}

/// Display form used in reports.
pub fn fmt3(x: f64) -> String {
    format!("{:.3}", round3(x))
}

/// Incremental arithmetic mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean {
    n: u64,
    mean: f64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.mean += (x - self.mean) / self.n as f64;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }
}

/// Mean post-response ability over every record of the item.
pub fn mu_all(log: &ResponseLog, item_id: ItemId) -> Result<f64> {
    let (sum, n) = log
        .iter()
        .filter(|r| r.item_id == item_id)
        .fold((0.0, 0usize), |(s, n), r| (s + r.theta_after, n + 1));
    if n == 0 {
        return Err(Error::UnknownItem(item_id));
    }
    Ok(sum / n as f64)
}

/// Mean post-response ability over records where the item was the `k`-th
/// (final) item of its session.
pub fn mu_final(log: &ResponseLog, item_id: ItemId, k: usize) -> Option<f64> {
    let (sum, n) = log
        .iter()
        .filter(|r| r.item_id == item_id && r.position == k)
        .fold((0.0, 0usize), |(s, n), r| (s + r.theta_after, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} pair(s); need at least 2", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between bank difficulty and `mu_all` over the items
/// of `section` that appear in the log.
pub fn difficulty_ability_correlation(log: &ResponseLog, bank: &ItemBank, section: SectionId) -> Result<f64> {
    let items = bank.section(section)?;
    let mut means: BTreeMap<ItemId, RunningMean> = items.iter().map(|it| (it.item_id, RunningMean::default())).collect();
    for r in log {
        if let Some(m) = means.get_mut(&r.item_id) {
            m.push(r.theta_after);
        }
    }
    let pairs: Vec<(f64, f64)> = items
        .iter()
        .filter_map(|it| means[&it.item_id].mean().map(|mu| (it.b(), mu)))
        .collect();
    pearson(&pairs)
}

/// CAR per group. Every record falls in exactly one group.
pub fn grouped_car<K, F>(log: &ResponseLog, level: f64, mut key: F) -> Result<BTreeMap<K, CarResult>>
where
    K: Ord,
    F: FnMut(&ResponseRecord) -> K,
{
    if log.is_empty() {
        return Err(Error::invalid("log is empty"));
    }
    let mut counts: BTreeMap<K, (u64, u64)> = BTreeMap::new();
    for r in log {
        let c = counts.entry(key(r)).or_default();
        c.0 += r.outcome.is_correct() as u64;
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(k, (c, t))| CarResult::new(c, t, level).map(|res| (k, res)))
        .collect()
}

/// Grouping key for a bank section.
pub fn section_key(bank: &ItemBank) -> impl Fn(&ResponseRecord) -> Option<SectionId> + '_ {
    |r| bank.item(r.item_id).map(|it| it.section_id)
}

/// Points ledgers rebuilt from a log: each examinee's sessions are scored in
/// session-id order.
pub fn ledgers_from_log(log: &ResponseLog, base_points: u64) -> Vec<PointsLedger> {
    let mut sessions: BTreeMap<u64, BTreeMap<u64, bool>> = BTreeMap::new();
    for r in log {
        let perfect = sessions.entry(r.examinee_id).or_default().entry(r.session_id).or_insert(true);
        *perfect &= r.outcome.is_correct();
    }
    sessions
        .into_iter()
        .map(|(examinee, ss)| {
            ss.into_values()
                .fold(PointsLedger::new(examinee), |l, perfect| award_for(l, perfect, base_points))
        })
        .collect()
}

/// Highest points first, ties by ascending examinee id.
pub fn leaderboard(ledgers: &[PointsLedger], top_n: usize) -> Result<Vec<PointsLedger>> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }
    let mut ranked = ledgers.to_vec();
    ranked.sort_by(|x, y| y.points.cmp(&x.points).then(x.examinee_id.cmp(&y.examinee_id)));
    ranked.truncate(top_n);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemStats {
    pub item_id: ItemId,
    pub section_id: SectionId,
    pub a: f64,
    pub b: f64,
    pub n_responses: u64,
    pub correct: u64,
    pub car: f64,
    pub mu_all: f64,
    pub mu_final: Option<f64>,
}

/// One row per item present in the log, in item-id order, joined with its
/// bank parameters.
pub fn per_item_report(log: &ResponseLog, bank: &ItemBank, k: usize) -> Result<Vec<ItemStats>> {
    if log.is_empty() {
        return Err(Error::invalid("log is empty"));
    }
    #[derive(Default)]
    struct Acc {
        n: u64,
        correct: u64,
        all: RunningMean,
        last: RunningMean,
    }
    let mut acc: BTreeMap<ItemId, Acc> = BTreeMap::new();
    for r in log {
        let a = acc.entry(r.item_id).or_default();
        a.n += 1;
        a.correct += r.outcome.is_correct() as u64;
        a.all.push(r.theta_after);
        if r.position == k {
            a.last.push(r.theta_after);
        }
    }
    acc.into_iter()
        .map(|(item_id, a)| {
            let item = bank.item(item_id).ok_or(Error::UnknownItem(item_id))?;
            Ok(ItemStats {
                item_id,
                section_id: item.section_id,
                a: item.params.a(),
                b: item.params.b(),
                n_responses: a.n,
                correct: a.correct,
                car: car(a.correct, a.n)?,
                mu_all: a.all.mean().expect("non-empty"),
                mu_final: a.last.mean(),
            })
        })
        .collect()
}
