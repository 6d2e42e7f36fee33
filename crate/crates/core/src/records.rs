//! Response logs: one row per examinee–item encounter, shared by the
//! session trace export, the simulator, calibration input and analytics.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::bank::ItemId;
use crate::error::{Error, Result};
use crate::irt::{ItemParams, Outcome};

pub const LOG_HEADER: [&str; 9] = [
    "examinee_id",
    "session_id",
    "position",
    "item_id",
    "a",
    "b",
    "outcome",
    "theta_after",
    "period_tag",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub examinee_id: u64,
    pub session_id: u64,
    /// 1-based position within the session.
    pub position: usize,
    pub item_id: ItemId,
    pub params: ItemParams,
    pub outcome: Outcome,
    /// Ability estimate immediately after this response.
    pub theta_after: f64,
    pub period_tag: String,
}

/// Ordered collection of records with unique `(examinee, session, position)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseLog {
    records: Vec<ResponseRecord>,
}

#[derive(Deserialize)]
struct RawRecord {
    examinee_id: u64,
    session_id: u64,
    position: usize,
    item_id: ItemId,
    a: f64,
    b: f64,
    outcome: String,
    theta_after: f64,
    period_tag: String,
}

impl ResponseLog {
    pub fn new(records: Vec<ResponseRecord>) -> Result<Self> {
        let mut keys = HashSet::with_capacity(records.len());
        for r in &records {
            if !keys.insert((r.examinee_id, r.session_id, r.position)) {
                return Err(Error::invalid(format!(
                    "duplicate record for examinee {}, session {}, position {}",
                    r.examinee_id, r.session_id, r.position
                )));
            }
            if !r.theta_after.is_finite() {
                return Err(Error::invalid("theta_after must be finite"));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ResponseRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ResponseRecord> {
        self.records.iter()
    }

    /// Writes the CSV export. Floats carry six decimal places.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record(&[
                r.examinee_id.to_string(),
                r.session_id.to_string(),
                r.position.to_string(),
                r.item_id.to_string(),
                format!("{:.6}", r.params.a()),
                format!("{:.6}", r.params.b()),
                r.outcome.code().to_string(),
                format!("{:.6}", r.theta_after),
                r.period_tag.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Parses a log export. Errors name the 1-based file line.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
        if header.iter().ne(LOG_HEADER) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header '{}'", LOG_HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<RawRecord>() {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(line, e)
            })?;
            let line = records.len() as u64 + 2;
            let outcome = Outcome::from_code(&row.outcome).ok_or_else(|| Error::Parse {
                line,
                message: format!("outcome must be C, I or A, got '{}'", row.outcome),
            })?;
            let params = ItemParams::new(row.a, row.b).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.position == 0 {
                return Err(Error::Parse {
                    line,
                    message: "position is 1-based".into(),
                });
            }
            records.push(ResponseRecord {
                examinee_id: row.examinee_id,
                session_id: row.session_id,
                position: row.position,
                item_id: row.item_id,
                params,
                outcome,
                theta_after: row.theta_after,
                period_tag: row.period_tag,
            });
        }
        Self::new(records)
    }
}

impl<'a> IntoIterator for &'a ResponseLog {
    type Item = &'a ResponseRecord;
    type IntoIter = std::slice::Iter<'a, ResponseRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("{other:?}")),
    }
}

pub(crate) fn parse_err(line: u64, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}
