//! Synthetic examinee populations and seeded adaptive-testing campaigns.
//!
//! Every examinee draws from private random streams derived from the master
//! seed and the examinee id, so a campaign's log does not depend on how many
//! threads run it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bank::{ItemBank, SectionId};
use crate::error::{Error, Result};
use crate::irt::{ItemParams, Outcome};
use crate::records::{ResponseLog, ResponseRecord};
use crate::session::{start_session, SessionConfig};

/// Chance of answering correctly by blind guessing on a typical item.
pub const DEFAULT_GUESS_FLOOR: f64 = 0.01;
pub const DEFAULT_PERIOD_TAG: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationConfig {
    pub n: usize,
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub seed: u64,
}

impl PopulationConfig {
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            n,
            theta_mean: 0.0,
            theta_sd: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Examinee {
    pub examinee_id: u64,
    pub true_theta: f64,
}

/// `n` normal draws; examinee ids run from 1 to `n`.
pub fn generate_population(config: &PopulationConfig) -> Result<Vec<Examinee>> {
    if config.n == 0 {
        return Err(Error::invalid("population size must be at least 1"));
    }
    if !config.theta_mean.is_finite() {
        return Err(Error::invalid("theta_mean must be finite"));
    }
    if !(config.theta_sd.is_finite() && config.theta_sd > 0.0) {
        return Err(Error::invalid(format!("theta_sd must be > 0, got {}", config.theta_sd)));
    }
    let normal = Normal::new(config.theta_mean, config.theta_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((1..=config.n as u64)
        .map(|examinee_id| Examinee {
            examinee_id,
            true_theta: normal.sample(&mut rng),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorConfig {
    /// Lower bound on the probability of a correct answer.
    pub guess_floor: f64,
    /// Probability that an item is left unfinished, independent of ability.
    pub abandon_prob: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            guess_floor: DEFAULT_GUESS_FLOOR,
            abandon_prob: 0.0,
        }
    }
}

impl BehaviorConfig {
    /// Pure model responses: no guessing, no abandonment.
    pub fn ideal() -> Self {
        Self {
            guess_floor: 0.0,
            abandon_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.guess_floor) {
            return Err(Error::invalid(format!("guess_floor must be in [0, 1), got {}", self.guess_floor)));
        }
        if !(0.0..=1.0).contains(&self.abandon_prob) {
            return Err(Error::invalid(format!("abandon_prob must be in [0, 1], got {}", self.abandon_prob)));
        }
        Ok(())
    }
}

/// Draws one response. Consumes exactly two uniforms per call.
pub fn simulate_outcome<R: Rng + ?Sized>(
    true_theta: f64,
    item: &ItemParams,
    behavior: &BehaviorConfig,
    rng: &mut R,
) -> Outcome {
    let u_abandon: f64 = rng.random();
    let u_answer: f64 = rng.random();
    if u_abandon < behavior.abandon_prob {
        Outcome::Abandoned
    } else if u_answer < item.prob(true_theta).max(behavior.guess_floor) {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    }
}

/// SplitMix64 finalizer over the master seed, examinee and stream index.
pub fn derive_seed(master: u64, examinee_id: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ examinee_id) ^ stream)
}

/// How sessions are laid out over sections and periods.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPlan {
    /// Session `s` of the `i`-th examinee runs in
    /// `sections[(i * sessions_per_examinee + s) % len]`.
    pub sections: Vec<SectionId>,
    pub sessions_per_examinee: u32,
    /// Session `s` is tagged `period_tags[s % len]`.
    pub period_tags: Vec<String>,
}

impl CampaignPlan {
    pub fn single(section: SectionId) -> Self {
        Self {
            sections: vec![section],
            sessions_per_examinee: 1,
            period_tags: vec![DEFAULT_PERIOD_TAG.to_string()],
        }
    }

    /// One session per examinee, examinees assigned to sections round-robin.
    pub fn round_robin(sections: Vec<SectionId>) -> Self {
        Self {
            sections,
            ..Self::single(0)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::invalid("campaign plan has no sections"));
        }
        if self.sessions_per_examinee == 0 {
            return Err(Error::invalid("sessions_per_examinee must be positive"));
        }
        if self.period_tags.is_empty() {
            return Err(Error::invalid("campaign plan has no period tags"));
        }
        Ok(())
    }
}

/// One complete session per examinee in `session.section`; `session.seed`
/// is the master seed.
pub fn run_campaign(
    bank: &ItemBank,
    population: &[Examinee],
    session: &SessionConfig,
    behavior: &BehaviorConfig,
) -> Result<ResponseLog> {
    run_campaign_with(bank, population, session, behavior, &CampaignPlan::single(session.section))
}

pub fn run_campaign_with(
    bank: &ItemBank,
    population: &[Examinee],
    session: &SessionConfig,
    behavior: &BehaviorConfig,
    plan: &CampaignPlan,
) -> Result<ResponseLog> {
    session.validate()?;
    behavior.validate()?;
    plan.validate()?;
    let master = session.seed;
    let per_examinee: Vec<Vec<ResponseRecord>> = population
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let mut answer_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, ex.examinee_id, 0));
            let mut records = Vec::with_capacity(session.k * plan.sessions_per_examinee as usize);
            for s in 0..plan.sessions_per_examinee {
                let slot = index * plan.sessions_per_examinee as usize + s as usize;
                let cfg = SessionConfig {
                    section: plan.sections[slot % plan.sections.len()],
                    seed: derive_seed(master, ex.examinee_id, 1 + s as u64),
                    ..*session
                };
                let mut state = start_session(bank, cfg)?;
                while let Some(item) = state.current_item().copied() {
                    let outcome = simulate_outcome(ex.true_theta, &item.params, behavior, &mut answer_rng);
                    state.submit_outcome(outcome)?;
                }
                let tag = &plan.period_tags[s as usize % plan.period_tags.len()];
                records.extend(state.to_records(ex.examinee_id, s as u64 + 1, tag));
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    ResponseLog::new(per_examinee.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Item;

    #[test]
    fn population_is_seeded() {
        let cfg = PopulationConfig::standard(50, 7);
        assert_eq!(generate_population(&cfg).unwrap(), generate_population(&cfg).unwrap());
        assert_eq!(generate_population(&PopulationConfig::standard(1, 7)).unwrap().len(), 1);
        assert!(generate_population(&PopulationConfig::standard(0, 7)).is_err());
        let bad = PopulationConfig {
            theta_sd: 0.0,
            ..PopulationConfig::standard(5, 1)
        };
        assert!(generate_population(&bad).is_err());
    }

    #[test]
    fn population_moments() {
        // 3 sigma bounds for n = 1e5: mean 0.0095, sd about 0.0067.
        let pop = generate_population(&PopulationConfig::standard(100_000, 11)).unwrap();
        let n = pop.len() as f64;
        let mean = pop.iter().map(|e| e.true_theta).sum::<f64>() / n;
        let var = pop.iter().map(|e| (e.true_theta - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "{}", var.sqrt());
    }

    #[test]
    fn outcome_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let always = BehaviorConfig {
            guess_floor: 0.0,
            abandon_prob: 1.0,
        };
        let p = ItemParams::default_params();
        assert!((0..1000).all(|_| simulate_outcome(0.0, &p, &always, &mut rng) == Outcome::Abandoned));

        let n = 100_000;
        let hard = ItemParams::new(1.0, 3.0).unwrap();
        let guess = BehaviorConfig::default();
        let c = (0..n)
            .filter(|_| simulate_outcome(-10.0, &hard, &guess, &mut rng).is_correct())
            .count() as f64
            / n as f64;
        assert!((c - 0.01).abs() < 0.003, "{c}");

        let c = (0..n)
            .filter(|_| simulate_outcome(0.0, &p, &BehaviorConfig::ideal(), &mut rng).is_correct())
            .count() as f64
            / n as f64;
        assert!((c - 0.5).abs() < 0.005, "{c}");
    }

    #[test]
    fn behavior_validation() {
        assert!(BehaviorConfig { guess_floor: 1.0, abandon_prob: 0.0 }.validate().is_err());
        assert!(BehaviorConfig { guess_floor: 0.0, abandon_prob: -0.1 }.validate().is_err());
        assert!(BehaviorConfig::default().validate().is_ok());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 1, 0);
        assert_ne!(a, derive_seed(1, 2, 0));
        assert_ne!(a, derive_seed(1, 1, 1));
        assert_ne!(a, derive_seed(2, 1, 0));
        assert_eq!(a, derive_seed(1, 1, 0));
    }

    fn small_bank() -> ItemBank {
        ItemBank::new((0..45).map(|i| {
            let b = -2.2 + 0.1 * i as f64;
            Item::new(i, 1, ItemParams::new(1.0, b).unwrap())
        }))
        .unwrap()
    }

    #[test]
    fn campaign_size_and_multi_session_layout() {
        let bank = small_bank();
        let pop = generate_population(&PopulationConfig::standard(100, 1)).unwrap();
        let cfg = SessionConfig::new(5, 1, 42).unwrap();
        let log = run_campaign(&bank, &pop, &cfg, &BehaviorConfig::default()).unwrap();
        assert_eq!(log.len(), 500);

        let plan = CampaignPlan {
            sections: vec![1],
            sessions_per_examinee: 3,
            period_tags: vec!["pre".into(), "covid".into()],
        };
        let log = run_campaign_with(&bank, &pop[..10], &cfg, &BehaviorConfig::default(), &plan).unwrap();
        assert_eq!(log.len(), 10 * 3 * 5);
        let r = &log.records()[10];
        assert_eq!((r.examinee_id, r.session_id, r.position), (1, 3, 1));
        assert_eq!(r.period_tag, "pre");
        assert_eq!(log.records()[5].period_tag, "covid");
    }

    #[test]
    fn campaign_propagates_exhaustion() {
        let bank = small_bank();
        let pop = generate_population(&PopulationConfig::standard(3, 1)).unwrap();
        let cfg = SessionConfig::new(46, 1, 42).unwrap();
        assert!(matches!(
            run_campaign(&bank, &pop, &cfg, &BehaviorConfig::default()),
            Err(Error::SelectionExhausted { .. })
        ));
    }
}
