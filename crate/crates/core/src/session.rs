//! Per-examinee adaptive test.
//!
//! A session presents `k` items from one section. The first item is drawn by
//! [`pick_initial`], the second by [`pick_second`] keyed on the first answer,
//! and every later item by [`pick_nearest`] around the most recent ability
//! estimate. After each answer the ability is re-estimated from all answers
//! so far.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{pick_initial, pick_nearest, pick_second, Item, ItemBank, ItemId, SectionId};
use crate::error::{Error, Result};
use crate::estimation::{estimate, AbilityEstimate, Method, Prior};
use crate::irt::{Ability, Outcome, Response};
use crate::records::ResponseRecord;

pub const MIN_SESSION_LENGTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub k: usize,
    pub section: SectionId,
    pub method: Method,
    pub prior: Prior,
    pub seed: u64,
}

impl SessionConfig {
    /// MAP estimation under a standard-normal prior.
    pub fn new(k: usize, section: SectionId, seed: u64) -> Result<Self> {
        let cfg = Self {
            k,
            section,
            method: Method::Map,
            prior: Prior::standard_normal(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = prior;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < MIN_SESSION_LENGTH {
            return Err(Error::invalid(format!(
                "session length k must be at least {MIN_SESSION_LENGTH}, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub item: Item,
    pub outcome: Outcome,
    pub theta_hat: f64,
}

#[derive(Debug, Clone)]
pub struct Session<'a> {
    bank: &'a ItemBank,
    config: SessionConfig,
    rng: ChaCha8Rng,
    used: HashSet<ItemId>,
    current: Option<Item>,
    trace: Vec<TraceEntry>,
    responses: Vec<Response>,
}

/// Opens a session and selects its first item.
pub fn start_session(bank: &ItemBank, config: SessionConfig) -> Result<Session<'_>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = *pick_initial(bank, config.section, &mut rng)?;
    Ok(Session {
        bank,
        config,
        rng,
        used: HashSet::from([first.item_id]),
        current: Some(first),
        trace: Vec::with_capacity(config.k),
        responses: Vec::with_capacity(config.k),
    })
}

impl<'a> Session<'a> {
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// 1-based position of the item currently presented (or `k + 1` once
    /// finished).
    pub fn position(&self) -> usize {
        self.trace.len() + 1
    }

    pub fn current_item(&self) -> Option<&Item> {
        self.current.as_ref()
    }

    pub fn used(&self) -> &HashSet<ItemId> {
        &self.used
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.trace.len() == self.config.k
    }

    /// Records the answer to the current item, re-estimates ability and
    /// selects the next item. On error the session is left unchanged apart
    /// from its random stream.
    pub fn submit_outcome(&mut self, outcome: Outcome) -> Result<()> {
        let item = self
            .current
            .ok_or_else(|| Error::SessionState("session is already finished".into()))?;
        let position = self.position();
        self.responses.push(Response::new(outcome, item.params));
        let est = match estimate(&self.responses, &self.config.prior, self.config.method) {
            Ok(est) => est,
            Err(e) => {
                self.responses.pop();
                return Err(e.at_position(position));
            }
        };

        let next = if position == self.config.k {
            None
        } else {
            let picked = if position == 1 {
                pick_second(self.bank, self.config.section, outcome.is_correct(), &self.used, &mut self.rng)
            } else {
                Ability::new(est.value).and_then(|theta| {
                    pick_nearest(self.bank, self.config.section, theta, &self.used, &mut self.rng)
                })
            };
            match picked {
                Ok(it) => Some(*it),
                Err(e) => {
                    self.responses.pop();
                    return Err(e);
                }
            }
        };

        self.trace.push(TraceEntry {
            item,
            outcome,
            theta_hat: est.value,
        });
        if let Some(it) = next {
            self.used.insert(it.item_id);
        }
        self.current = next;
        Ok(())
    }

    pub fn result(&self) -> Result<SessionResult> {
        if !self.is_finished() {
            return Err(Error::SessionState(format!(
                "session has answered {} of {} items",
                self.trace.len(),
                self.config.k
            )));
        }
        let last = self.trace.last().expect("finished sessions are non-empty");
        Ok(SessionResult {
            final_estimate: AbilityEstimate {
                value: last.theta_hat,
                method: self.config.method,
                n_responses: self.trace.len(),
            },
            trace: self.trace.clone(),
            correct_count: self.trace.iter().filter(|t| t.outcome.is_correct()).count(),
            total_count: self.trace.len(),
        })
    }

    /// Trace rows in log-export form.
    pub fn to_records(&self, examinee_id: u64, session_id: u64, period_tag: &str) -> Vec<ResponseRecord> {
        self.trace
            .iter()
            .enumerate()
            .map(|(i, t)| ResponseRecord {
                examinee_id,
                session_id,
                position: i + 1,
                item_id: t.item.item_id,
                params: t.item.params,
                outcome: t.outcome,
                theta_after: t.theta_hat,
                period_tag: period_tag.to_string(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub final_estimate: AbilityEstimate,
    pub trace: Vec<TraceEntry>,
    pub correct_count: usize,
    /// Includes abandoned items.
    pub total_count: usize,
}

impl SessionResult {
    pub fn is_perfect(&self) -> bool {
        self.correct_count == self.total_count
    }
}

/// Accumulated leaderboard points for one examinee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointsLedger {
    pub examinee_id: u64,
    pub points: u64,
    pub consecutive_perfect_sessions: u32,
}

impl PointsLedger {
    pub fn new(examinee_id: u64) -> Self {
        Self {
            examinee_id,
            points: 0,
            consecutive_perfect_sessions: 0,
        }
    }
}

/// A perfect session extends the streak `s` and earns `base_points * 2^(s-1)`;
/// any other session resets the streak and earns nothing.
pub fn award_points(ledger: PointsLedger, session: &SessionResult, base_points: u64) -> PointsLedger {
    award_for(ledger, session.is_perfect(), base_points)
}

pub(crate) fn award_for(mut ledger: PointsLedger, perfect: bool, base_points: u64) -> PointsLedger {
    if perfect {
        ledger.consecutive_perfect_sessions = ledger.consecutive_perfect_sessions.saturating_add(1);
        let multiplier = 1u64
            .checked_shl(ledger.consecutive_perfect_sessions - 1)
            .unwrap_or(u64::MAX);
        ledger.points = ledger.points.saturating_add(base_points.saturating_mul(multiplier));
    } else {
        ledger.consecutive_perfect_sessions = 0;
    }
    ledger
}
