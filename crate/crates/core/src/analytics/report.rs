//! Report tables for a response log, rendered as fixed-header CSV files plus
//! one JSON summary.
//!
//! | file | header |
//! |------|--------|
//! | `items.csv` | `item_id,section_id,a,b,n_responses,correct,car,mu_all,mu_final` |
//! | `sections.csv` | `section_id,n_items,correct,total,car,ci_low,ci_high,sd,correlation` |
//! | `positions.csv` | `position,correct,total,car,ci_low,ci_high,sd` |
//! | `periods.csv` | `period_tag,correct,total,car,ci_low,ci_high,sd` |
//! | `correlations.csv` | `section_id,n_items,correlation` |
//! | `leaderboard.csv` | `rank,examinee_id,points,consecutive_perfect_sessions` |
//!
//! CSV numbers are rounded half-to-even at three decimals; a correlation
//! that cannot be computed is written as `undefined`. `summary.json` keeps
//! full precision and uses `null` for undefined values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{
    difficulty_ability_correlation, fmt3, grouped_car, ledgers_from_log, leaderboard, per_item_report, CarResult,
    ItemStats,
};
use crate::bank::{ItemBank, SectionId};
use crate::error::{Error, Result};
use crate::records::ResponseLog;
use crate::session::PointsLedger;

pub const ITEMS_HEADER: &str = "item_id,section_id,a,b,n_responses,correct,car,mu_all,mu_final";
pub const SECTIONS_HEADER: &str = "section_id,n_items,correct,total,car,ci_low,ci_high,sd,correlation";
pub const POSITIONS_HEADER: &str = "position,correct,total,car,ci_low,ci_high,sd";
pub const PERIODS_HEADER: &str = "period_tag,correct,total,car,ci_low,ci_high,sd";
pub const CORRELATIONS_HEADER: &str = "section_id,n_items,correlation";
pub const LEADERBOARD_HEADER: &str = "rank,examinee_id,points,consecutive_perfect_sessions";

pub const REPORT_FILES: [&str; 7] = [
    "items.csv",
    "sections.csv",
    "positions.csv",
    "periods.csv",
    "correlations.csv",
    "leaderboard.csv",
    "summary.json",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    /// Session length used for `mu_final`; `None` takes the largest
    /// position in the log.
    pub k: Option<usize>,
    pub level: f64,
    pub top_n: usize,
    pub base_points: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: None,
            level: 0.95,
            top_n: 10,
            base_points: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionRow {
    pub section_id: SectionId,
    pub n_items: usize,
    pub car: CarResult,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n_records: usize,
    pub k: usize,
    pub level: f64,
    pub overall: CarResult,
    pub sections: Vec<SectionRow>,
    pub positions: BTreeMap<usize, CarResult>,
    pub periods: BTreeMap<String, CarResult>,
    #[serde(skip)]
    pub items: Vec<ItemStats>,
    pub leaderboard: Vec<PointsLedger>,
}

impl AnalysisReport {
    pub fn build(log: &ResponseLog, bank: &ItemBank, config: &AnalysisConfig) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::invalid("log is empty"));
        }
        let k = config
            .k
            .unwrap_or_else(|| log.iter().map(|r| r.position).max().unwrap_or(1));
        let items = per_item_report(log, bank, k)?;
        let overall = grouped_car(log, config.level, |_| ())?[&()];
        let by_section = grouped_car(log, config.level, |r| {
            bank.item(r.item_id).map(|it| it.section_id).expect("items checked above")
        })?;
        let sections = by_section
            .into_iter()
            .map(|(section_id, car)| SectionRow {
                section_id,
                n_items: items.iter().filter(|it| it.section_id == section_id).count(),
                car,
                correlation: difficulty_ability_correlation(log, bank, section_id).ok(),
            })
            .collect();
        let positions = grouped_car(log, config.level, |r| r.position)?;
        let periods = grouped_car(log, config.level, |r| r.period_tag.clone())?;
        let ledgers = ledgers_from_log(log, config.base_points);
        Ok(Self {
            n_records: log.len(),
            k,
            level: config.level,
            overall,
            sections,
            positions,
            periods,
            items,
            leaderboard: leaderboard(&ledgers, config.top_n)?,
        })
    }

    /// `(file name, contents)` for every report file.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            (REPORT_FILES[0], self.items_csv()),
            (REPORT_FILES[1], self.sections_csv()),
            (REPORT_FILES[2], car_table(POSITIONS_HEADER, &self.positions)),
            (REPORT_FILES[3], car_table(PERIODS_HEADER, &self.periods)),
            (REPORT_FILES[4], self.correlations_csv()),
            (REPORT_FILES[5], self.leaderboard_csv()),
            (REPORT_FILES[6], self.summary_json()),
        ]
    }

    fn items_csv(&self) -> String {
        let mut s = format!("{ITEMS_HEADER}\n");
        for it in &self.items {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                it.item_id,
                it.section_id,
                fmt3(it.a),
                fmt3(it.b),
                it.n_responses,
                it.correct,
                fmt3(it.car),
                fmt3(it.mu_all),
                it.mu_final.map(fmt3).unwrap_or_default()
            );
        }
        s
    }

    fn sections_csv(&self) -> String {
        let mut s = format!("{SECTIONS_HEADER}\n");
        for row in &self.sections {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                row.section_id,
                row.n_items,
                car_cells(&row.car),
                fmt_corr(row.correlation)
            );
        }
        s
    }

    fn correlations_csv(&self) -> String {
        let mut s = format!("{CORRELATIONS_HEADER}\n");
        for row in &self.sections {
            let _ = writeln!(s, "{},{},{}", row.section_id, row.n_items, fmt_corr(row.correlation));
        }
        s
    }

    fn leaderboard_csv(&self) -> String {
        let mut s = format!("{LEADERBOARD_HEADER}\n");
        for (rank, l) in self.leaderboard.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                rank + 1,
                l.examinee_id,
                l.points,
                l.consecutive_perfect_sessions
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn car_cells(c: &CarResult) -> String {
    format!(
        "{},{},{},{},{},{}",
        c.correct,
        c.total,
        fmt3(c.rate),
        fmt3(c.ci_low),
        fmt3(c.ci_high),
        fmt3(c.sd)
    )
}

fn fmt_corr(r: Option<f64>) -> String {
    r.map(fmt3).unwrap_or_else(|| "undefined".into())
}

fn car_table<K: std::fmt::Display>(header: &str, rows: &BTreeMap<K, CarResult>) -> String {
    let mut s = format!("{header}\n");
    for (k, c) in rows {
        let _ = writeln!(s, "{k},{}", car_cells(c));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Item;
    use crate::irt::{ItemParams, Outcome};
    use crate::records::ResponseRecord;

    #[test]
    fn single_record_degrades_gracefully() {
        let bank = ItemBank::new([Item::new(1, 5, ItemParams::default_params())]).unwrap();
        let log = ResponseLog::new(vec![ResponseRecord {
            examinee_id: 1,
            session_id: 1,
            position: 1,
            item_id: 1,
            params: ItemParams::default_params(),
            outcome: Outcome::Correct,
            theta_after: 0.5,
            period_tag: "pre".into(),
        }])
        .unwrap();
        let report = AnalysisReport::build(&log, &bank, &AnalysisConfig::default()).unwrap();
        assert_eq!(report.sections[0].correlation, None);
        let files = report.files();
        assert_eq!(files.len(), REPORT_FILES.len());
        let sections = &files[1].1;
        assert_eq!(sections, &format!("{SECTIONS_HEADER}\n5,1,1,1,1.000,1.000,1.000,0.000,undefined\n"));
        assert!(files[6].1.contains("\"correlation\": null"));
    }
}
