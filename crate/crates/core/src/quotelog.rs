//! Newline-delimited JSON quote logs: one quote per line, money in integer
//! cents, timestamps in ISO-8601 UTC with a trailing `Z`.
//!
//! ```json
//! {"schema_version":1,"quote_id":"q000000001","timestamp":"2024-01-01T00:00:30Z",
//!  "features":{"business":1.0,"region":"north"},
//!  "options":[{"index":1,"day_of_week":"Mon","available":true,"price":2850,"cost_estimate":2000}],
//!  "chosen":1,"canceled":false}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::calendar::LeadTimeCalendar;
use crate::choice::ChoiceObservation;
use crate::dataset::{LoggedSecondLevel, TrainingRow, TrainingSet, WindowOffer};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};
use crate::simulator::{from_cents, to_cents};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedOption {
    pub index: usize,
    pub day_of_week: String,
    pub available: bool,
    pub price: i64,
    pub cost_estimate: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedWindow {
    pub lead_time: usize,
    pub index: usize,
    pub price: i64,
    pub cost: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedWindows {
    pub clicked_lead_time: Option<usize>,
    pub windows: Vec<LoggedWindow>,
    pub chosen_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteLogRow {
    pub schema_version: u32,
    pub quote_id: String,
    pub timestamp: String,
    pub features: FeatureVector,
    pub options: Vec<LoggedOption>,
    pub chosen: usize,
    pub canceled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_level: Option<LoggedWindows>,
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses an RFC 3339 instant that must be written in UTC with `Z`.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    if !s.ends_with('Z') {
        return Err(Error::invalid(format!(
            "timestamp {s:?} is not UTC (must end in Z)"
        )));
    }
    if s.as_bytes().get(10) != Some(&b'T') {
        return Err(Error::invalid(format!("timestamp {s:?} is not ISO-8601")));
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::invalid(format!("timestamp {s:?}: {e}")))
}

fn money(cents: i64, what: &str) -> Result<f64> {
    if cents < 0 {
        return Err(Error::invalid(format!("negative {what}")));
    }
    Ok(from_cents(cents))
}

impl QuoteLogRow {
    pub fn from_training_row(row: &TrainingRow<f64>) -> Self {
        let cal = &row.choice.calendar;
        let options = (0..cal.num_options())
            .map(|k| LoggedOption {
                index: k + 1,
                day_of_week: cal.day_of_week(k + 1).expect("index in range").to_string(),
                available: cal.availability()[k],
                price: to_cents(row.choice.prices[k]),
                cost_estimate: to_cents(row.costs[k]),
            })
            .collect();
        let second_level = row.second_level.as_ref().map(|sl| LoggedWindows {
            clicked_lead_time: sl.clicked,
            windows: sl
                .windows
                .iter()
                .enumerate()
                .flat_map(|(k, ws)| {
                    ws.iter().enumerate().map(move |(j, w)| LoggedWindow {
                        lead_time: k + 1,
                        index: j + 1,
                        price: to_cents(w.price),
                        cost: to_cents(w.cost),
                    })
                })
                .collect(),
            chosen_window: sl.chosen_window,
        });
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            quote_id: row.quote_id.clone(),
            timestamp: format_timestamp(&row.timestamp),
            features: row.features.clone(),
            options,
            chosen: row.choice.chosen,
            canceled: row.canceled,
            second_level,
        }
    }

    /// Validates the row and rebuilds reference prices from the offered prices.
    pub fn to_training_row(&self) -> Result<TrainingRow<f64>> {
        if self.schema_version != LOG_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: LOG_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        let timestamp = parse_timestamp(&self.timestamp)?;
        if self.options.is_empty() {
            return Err(Error::Empty("options"));
        }
        let l = self.options.len();
        let mut start = None;
        for (k, opt) in self.options.iter().enumerate() {
            if opt.index != k + 1 {
                return Err(Error::invalid(format!(
                    "option {} listed at position {}",
                    opt.index,
                    k + 1
                )));
            }
            let day = Weekday::from_str(&opt.day_of_week)
                .map_err(|_| Error::invalid(format!("bad day_of_week {:?}", opt.day_of_week)))?;
            let expected_start = (0..k).fold(day, |d, _| d.pred());
            match start {
                None => start = Some(day),
                Some(s) if s != expected_start => {
                    return Err(Error::invalid(format!(
                        "option {} day_of_week breaks the calendar",
                        opt.index
                    )))
                }
                _ => {}
            }
        }
        let calendar = LeadTimeCalendar::with_availability(
            start.expect("non-empty"),
            self.options.iter().map(|o| o.available).collect(),
        )?;
        let prices = self
            .options
            .iter()
            .map(|o| money(o.price, "price"))
            .collect::<Result<Vec<_>>>()?;
        let costs = self
            .options
            .iter()
            .map(|o| money(o.cost_estimate, "cost_estimate"))
            .collect::<Result<Vec<_>>>()?;
        if self.chosen > l {
            return Err(Error::IndexOutOfRange {
                index: self.chosen,
                len: l,
            });
        }
        if self.canceled && self.chosen == 0 {
            return Err(Error::invalid("canceled without a booking"));
        }
        let choice = ChoiceObservation::new(calendar, prices, self.chosen)?;
        let second_level = self
            .second_level
            .as_ref()
            .map(|sl| self.windows(sl, l))
            .transpose()?;
        Ok(TrainingRow {
            quote_id: self.quote_id.clone(),
            timestamp,
            features: self.features.clone(),
            choice,
            costs,
            canceled: self.canceled,
            second_level,
        })
    }

    fn windows(&self, sl: &LoggedWindows, l: usize) -> Result<LoggedSecondLevel<f64>> {
        let mut windows: Vec<Vec<WindowOffer<f64>>> = vec![Vec::new(); l];
        for w in &sl.windows {
            if w.lead_time == 0 || w.lead_time > l {
                return Err(Error::IndexOutOfRange {
                    index: w.lead_time,
                    len: l,
                });
            }
            let slot = &mut windows[w.lead_time - 1];
            if w.index != slot.len() + 1 {
                return Err(Error::invalid(format!(
                    "window {} of lead time {} is out of order",
                    w.index, w.lead_time
                )));
            }
            slot.push(WindowOffer {
                price: money(w.price, "window price")?,
                cost: money(w.cost, "window cost")?,
            });
        }
        if let Some(c) = sl.clicked_lead_time {
            if c == 0 || c > l {
                return Err(Error::IndexOutOfRange { index: c, len: l });
            }
        }
        if sl.chosen_window > 0 {
            let clicked = sl
                .clicked_lead_time
                .ok_or_else(|| Error::invalid("window chosen without a clicked lead time"))?;
            if clicked != self.chosen {
                return Err(Error::invalid(
                    "clicked lead time differs from the booked option",
                ));
            }
            if sl.chosen_window > windows[clicked - 1].len() {
                return Err(Error::IndexOutOfRange {
                    index: sl.chosen_window,
                    len: windows[clicked - 1].len(),
                });
            }
        } else if self.chosen > 0 && !sl.windows.is_empty() {
            return Err(Error::invalid("booking without a chosen window"));
        }
        Ok(LoggedSecondLevel {
            clicked: sl.clicked_lead_time,
            windows,
            chosen_window: sl.chosen_window,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    /// Abort when more than this fraction of rows is malformed.
    pub max_reject_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_reject_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub data: TrainingSet<f64>,
    pub rejected: Vec<Rejection>,
}

pub fn ingest_reader<R: BufRead>(reader: R, config: &IngestConfig) -> Result<Ingested> {
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<QuoteLogRow>(&line)
            .map_err(Error::from)
            .and_then(|r| r.to_training_row());
        match parsed {
            Ok(row) => rows.push(row),
            Err(e @ Error::SchemaVersion { .. }) => return Err(e),
            Err(e) => {
                log::warn!("line {}: {e}", k + 1);
                rejected.push(Rejection {
                    line: k + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("quote log"));
    }
    if rejected.len() as f64 > config.max_reject_fraction * total as f64 {
        let first = &rejected[0];
        return Err(Error::TooManyRejects {
            rejected: rejected.len(),
            total,
            limit: 100.0 * config.max_reject_fraction,
            first: format!("line {}: {}", first.line, first.reason),
        });
    }
    let schema = FeatureSchema::infer(rows.iter().map(|r| &r.features))?;
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        schema.check(&row.features)?;
        kept.push(row);
    }
    Ok(Ingested {
        data: TrainingSet::with_schema(schema, kept),
        rejected,
    })
}

pub fn ingest_path(path: &Path, config: &IngestConfig) -> Result<Ingested> {
    ingest_reader(BufReader::new(File::open(path)?), config)
}

pub fn write_log<W: Write>(rows: &[TrainingRow<f64>], mut writer: W) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut writer, &QuoteLogRow::from_training_row(row))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = r#"{"schema_version":1,"quote_id":"a","timestamp":"2024-03-01T10:00:00Z","features":{"region":"north"},"options":[{"index":1,"day_of_week":"Fri","available":true,"price":1000,"cost_estimate":400},{"index":2,"day_of_week":"Sat","available":false,"price":1100,"cost_estimate":400}],"chosen":1,"canceled":false}"#;

    #[test]
    fn parses_a_row() {
        let row: QuoteLogRow = serde_json::from_str(ROW).unwrap();
        let t = row.to_training_row().unwrap();
        assert_eq!(t.choice.prices, vec![10.0, 11.0]);
        assert_eq!(t.choice.reference, vec![10.0, 11.0]);
        assert_eq!(t.choice.calendar.start_day(), Weekday::Fri);
        assert_eq!(
            serde_json::to_string(&QuoteLogRow::from_training_row(&t)).unwrap(),
            ROW
        );
    }

    #[test]
    fn timestamps_must_be_utc() {
        assert!(parse_timestamp("2024-03-01T10:00:00+01:00").is_err());
        assert!(parse_timestamp("2024-03-01 10:00:00Z").is_err());
        assert!(parse_timestamp("2024-03-01T10:00:00.250Z").is_ok());
    }

    #[test]
    fn unavailable_choice_is_rejected() {
        let bad = ROW.replace(r#""chosen":1"#, r#""chosen":2"#);
        let row: QuoteLogRow = serde_json::from_str(&bad).unwrap();
        assert!(matches!(
            row.to_training_row(),
            Err(Error::ChosenNotOffered { .. })
        ));
    }

    #[test]
    fn empty_and_bad_versions() {
        assert!(matches!(
            ingest_reader("".as_bytes(), &IngestConfig::default()),
            Err(Error::Empty(_))
        ));
        let v2 = ROW.replace(r#""schema_version":1"#, r#""schema_version":2"#);
        assert!(matches!(
            ingest_reader(v2.as_bytes(), &IngestConfig::default()),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }

    #[test]
    fn reject_budget() {
        let mut text = String::new();
        for _ in 0..99 {
            text.push_str(ROW);
            text.push('\n');
        }
        text.push_str("{not json}\n");
        let ok = ingest_reader(text.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(ok.data.len(), 99);
        assert_eq!(ok.rejected[0].line, 100);
        text.push_str("{not json}\n");
        assert!(matches!(
            ingest_reader(text.as_bytes(), &IngestConfig::default()),
            Err(Error::TooManyRejects { rejected: 2, .. })
        ));
    }
}
