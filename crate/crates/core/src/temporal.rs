//! Acquisition windows and dynamic label assignment.
//!
//! Interval 0 is the one-year reference window starting on the calendar
//! anchor; intervals 1..=12 are consecutive three-month assessment windows.
//! All bounds are inclusive calendar dates.

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of intervals in the default calendar (reference + 12 assessment).
pub const INTERVAL_COUNT: usize = 13;

/// Assessment periods that precede the invasion.
pub const PRE_INVASION_PERIODS: std::ops::RangeInclusive<u8> = 1..=4;

/// Assessment periods that follow the invasion.
pub const POST_INVASION_PERIODS: std::ops::RangeInclusive<u8> = 5..=12;

/// 2022-02-24.
pub fn invasion_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 2, 24).expect("valid constant date")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemporalError {
    #[error("interval index {index} out of range 0..={max}")]
    IndexOutOfRange { index: i64, max: usize },
    #[error("invalid date '{0}': expected YYYY-MM-DD")]
    BadDate(String),
    #[error("invalid period list '{0}'")]
    BadPeriods(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeInterval {
    pub index: u8,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TimeInterval {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

/// Interval anchors. The defaults reproduce the study calendar; other
/// anchors allow reuse for a different conflict start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalCalendar {
    pub anchor: NaiveDate,
    pub reference_months: u32,
    pub step_months: u32,
    pub count: usize,
}

impl Default for IntervalCalendar {
    fn default() -> Self {
        Self {
            anchor: NaiveDate::from_ymd_opt(2020, 2, 24).expect("valid constant date"),
            reference_months: 12,
            step_months: 3,
            count: INTERVAL_COUNT,
        }
    }
}

impl IntervalCalendar {
    pub fn interval(&self, n: i64) -> Result<TimeInterval, TemporalError> {
        if n < 0 || n as usize >= self.count {
            return Err(TemporalError::IndexOutOfRange {
                index: n,
                max: self.count - 1,
            });
        }
        let start = self.start_of(n as u32);
        let end = self.start_of(n as u32 + 1).pred_opt().expect("date in range");
        Ok(TimeInterval {
            index: n as u8,
            start,
            end,
        })
    }

    fn start_of(&self, n: u32) -> NaiveDate {
        if n == 0 {
            return self.anchor;
        }
        let months = self.reference_months + (n - 1) * self.step_months;
        self.anchor
            .checked_add_months(Months::new(months))
            .expect("date in range")
    }

    pub fn all(&self) -> Vec<TimeInterval> {
        (0..self.count as i64)
            .map(|n| self.interval(n).expect("index in range"))
            .collect()
    }

    /// Index of the interval containing `date`, if any.
    pub fn interval_of(&self, date: NaiveDate) -> Option<u8> {
        if date < self.anchor {
            return None;
        }
        self.all()
            .into_iter()
            .find(|iv| iv.contains(date))
            .map(|iv| iv.index)
    }

    pub fn first_day(&self) -> NaiveDate {
        self.anchor
    }

    pub fn last_day(&self) -> NaiveDate {
        self.start_of(self.count as u32).pred_opt().expect("date in range")
    }
}

/// Canonical interval `n` of the default calendar.
pub fn interval(n: i64) -> Result<TimeInterval, TemporalError> {
    IntervalCalendar::default().interval(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelContext {
    pub invasion_date: NaiveDate,
    pub unosat_date: NaiveDate,
}

impl LabelContext {
    pub fn new(unosat_date: NaiveDate) -> Self {
        Self {
            invasion_date: invasion_date(),
            unosat_date,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Intact,
    Damaged,
    Discard,
}

impl Label {
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Label::Intact => Some(0),
            Label::Damaged => Some(1),
            Label::Discard => None,
        }
    }
}

/// Label of a series whose assessment window ends on `t_max`.
///
/// Intact when the window ends on or before the invasion, damaged when it
/// ends strictly after the annotation image date, discarded otherwise.
pub fn assign_label(t_max: NaiveDate, ctx: &LabelContext) -> Label {
    if t_max <= ctx.invasion_date {
        Label::Intact
    } else if t_max > ctx.unosat_date {
        Label::Damaged
    } else {
        Label::Discard
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, TemporalError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| TemporalError::BadDate(s.into()))
}

pub fn format_date(d: NaiveDate) -> String {
    format!("{:04}-{:02}-{:02}", d.year(), d.month(), d.day())
}

/// Parses a period list such as `1-4,7,9-12` into sorted unique indices.
pub fn parse_periods(s: &str) -> Result<Vec<u8>, TemporalError> {
    let bad = || TemporalError::BadPeriods(s.to_string());
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (
                a.trim().parse::<u8>().map_err(|_| bad())?,
                b.trim().parse::<u8>().map_err(|_| bad())?,
            ),
            None => {
                let v = part.parse::<u8>().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo > hi || hi as usize >= INTERVAL_COUNT {
            return Err(bad());
        }
        out.extend(lo..=hi);
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
