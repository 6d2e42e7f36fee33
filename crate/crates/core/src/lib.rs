//! Computerized adaptive testing on the two-parameter logistic model.
//!
//! - [`irt`]: response probabilities, information and likelihood
//! - [`estimation`]: MAP and EAP ability estimates under a normal prior
//! - [`bank`]: sectioned item banks and the item-selection rules
//! - [`session`]: the per-examinee adaptive test and the points ledger
//! - [`calibration`]: joint MAP item calibration from sparse responses
//! - [`simulation`]: synthetic populations and seeded campaigns
//! - [`analytics`]: correct-answer rates, per-item ability means,
//!   correlations, grouped tables and leaderboards
//! - [`records`]: the response-log CSV format

pub mod analytics;
pub mod bank;
pub mod calibration;
pub mod error;
pub mod estimation;
pub mod irt;
pub mod records;
pub mod session;
pub mod simulation;

pub use bank::{Item, ItemBank, ItemId, SectionId};
pub use error::{Error, Result};
pub use estimation::{AbilityEstimate, Method, Prior};
pub use irt::{Ability, ItemParams, Outcome, Response};
pub use records::{ResponseLog, ResponseRecord};
pub use session::{PointsLedger, SessionConfig, SessionResult};
