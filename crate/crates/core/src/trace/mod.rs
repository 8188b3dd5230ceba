//! Polling-log ingestion and session reconstruction.
//!
//! The pipeline runs in a fixed order:
//!
//! 1. [`parse_polls`]: CSV (optionally gzip) to sorted [`PollRecord`]s.
//! 2. [`filter_window`]: working hours, weekdays, date exclusions.
//! 3. [`filter_invalid_days`]: drops AP-days with too little service.
//! 4. [`build_attachments`] and [`resolve_multi_association`]: one AP per
//!    user at a time, ping-pong returns bridged.
//! 5. [`pad_gaps`]: short absences padded, long ones split sessions.
//! 6. [`classify_open_closed`]: users present nearly all day are closed.
//! 7. [`extract_sessions`]: stage sequences and the stage-count table.
//!
//! [`analyze`] runs all of it and then estimates per-AP parameters, tests
//! new arrivals for Poisson-ness, applies an exclusion mode and resamples
//! occupancy at the poll cadence.
//!
//! Timestamps are seconds since the Unix epoch. Calendar decisions (date,
//! weekday, time of day) use the configured fixed UTC offset.

mod analysis;
pub mod fixture;
mod parse;
mod preprocess;
pub mod reference;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats::{DEFAULT_TEST_INTERVAL, DEFAULT_THRESHOLD};

pub use analysis::*;
pub use parse::*;
pub use preprocess::*;

/// One poll of one user by one AP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub timestamp: f64,
    pub ap: String,
    pub user: String,
    pub packets: u64,
}

/// A contiguous stay of a user at one AP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub ap: String,
    pub entry: f64,
    pub exit: f64,
}

impl Stage {
    pub fn holding(&self) -> f64 {
        self.exit - self.entry
    }
}

/// One reconstructed session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user: String,
    pub day: NaiveDate,
    pub stages: Vec<Stage>,
    /// The first stage starts exactly at the window opening, so the true
    /// start is unobserved.
    pub censored_start: bool,
    /// The last stage ends exactly at the window closing.
    pub censored_end: bool,
}

impl SessionRecord {
    pub fn first_ap(&self) -> &str {
        &self.stages[0].ap
    }
}

/// Inclusive range of calendar dates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Daily observation window `[start, end)` on the listed weekdays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkingWindow {
    #[serde(with = "hhmm")]
    pub start: NaiveTime,
    #[serde(with = "hhmm")]
    pub end: NaiveTime,
    pub weekdays: Vec<Weekday>,
    /// Offset of local time from UTC, minutes.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl Default for WorkingWindow {
    fn default() -> Self {
        use Weekday::*;
        Self {
            start: NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(17, 0, 0).unwrap(),
            weekdays: vec![Mon, Tue, Wed, Thu, Fri],
            utc_offset_minutes: 0,
        }
    }
}

impl WorkingWindow {
    /// Window length, seconds.
    pub fn length(&self) -> f64 {
        f64::from(self.end.num_seconds_from_midnight()) - f64::from(self.start.num_seconds_from_midnight())
    }

    fn offset(&self) -> f64 {
        f64::from(self.utc_offset_minutes) * 60.0
    }

    /// Local date and seconds since local midnight.
    pub fn local(&self, ts: f64) -> (NaiveDate, f64) {
        let local = ts + self.offset();
        let day = (local / 86_400.0).floor();
        let date = DateTime::from_timestamp((day * 86_400.0) as i64, 0).map_or(NaiveDate::MIN, |d| d.date_naive());
        (date, local - day * 86_400.0)
    }

    /// Epoch seconds of the window opening and closing on `date`.
    pub fn bounds(&self, date: NaiveDate) -> (f64, f64) {
        let midnight = date.and_time(NaiveTime::MIN).and_utc().timestamp() as f64 - self.offset();
        (
            midnight + f64::from(self.start.num_seconds_from_midnight()),
            midnight + f64::from(self.end.num_seconds_from_midnight()),
        )
    }
}

mod hhmm {
    use super::*;

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> std::result::Result<S::Ok, S::Error> {
        if t.second() == 0 {
            s.serialize_str(&t.format("%H:%M").to_string())
        } else {
            s.serialize_str(&t.format("%H:%M:%S").to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveTime::parse_from_str(&s, "%H:%M:%S")
            .or_else(|_| NaiveTime::parse_from_str(&s, "%H:%M"))
            .map_err(serde::de::Error::custom)
    }
}

/// How sessions and APs are excluded before fitting the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ExclusionMode {
    /// Drop sessions whose first stage is at an invalid AP.
    SessionsFromInvalid,
    /// Drop invalid APs as occupancy dimensions; keep all sessions.
    InvalidAps,
    #[default]
    None,
}

impl TryFrom<u8> for ExclusionMode {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::SessionsFromInvalid),
            2 => Ok(Self::InvalidAps),
            3 => Ok(Self::None),
            _ => Err(Error::Unknown { kind: "exclusion mode", value: v.to_string() }),
        }
    }
}

impl From<ExclusionMode> for u8 {
    fn from(m: ExclusionMode) -> u8 {
        match m {
            ExclusionMode::SessionsFromInvalid => 1,
            ExclusionMode::InvalidAps => 2,
            ExclusionMode::None => 3,
        }
    }
}

impl fmt::Display for ExclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Preprocessing and analysis settings. Durations are seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Absences shorter than this are padded; longer ones end the session.
    pub departure_threshold: f64,
    /// Returns to the same AP sooner than this are bridged.
    pub pingpong_return: f64,
    /// Daily presence at or above this many hours makes a user closed.
    pub closed_user_hours: f64,
    /// AP-days with service below this fraction of the AP's average are dropped.
    pub valid_day_fraction: f64,
    pub window: WorkingWindow,
    /// Only dates inside this range are used, when set.
    pub period: Option<DateRange>,
    pub excluded_dates: Vec<DateRange>,
    /// Poll cadence; inferred from the data (modal gap) when unset.
    pub cadence: Option<f64>,
    pub test_interval: f64,
    pub threshold_eta: f64,
    pub threshold_theta: f64,
    pub exclude_mode: ExclusionMode,
    pub exclude_one_stage: bool,
    /// Stages in the holding-time dependence check.
    pub dependence_stages: usize,
    /// Bin width for holding times in the dependence check; cadence when unset.
    pub dependence_bin: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            departure_threshold: 600.0,
            pingpong_return: 300.0,
            closed_user_hours: 7.5,
            valid_day_fraction: 1.0 / 3.0,
            window: WorkingWindow::default(),
            period: None,
            excluded_dates: Vec::new(),
            cadence: None,
            test_interval: DEFAULT_TEST_INTERVAL,
            threshold_eta: DEFAULT_THRESHOLD,
            threshold_theta: DEFAULT_THRESHOLD,
            exclude_mode: ExclusionMode::None,
            exclude_one_stage: false,
            dependence_stages: 4,
            dependence_bin: None,
        }
    }
}

impl PreprocessConfig {
    /// Settings for the Dartmouth academic-area SNMP trace: Nov 1, 2003 to
    /// Feb 28, 2004, with the Thanksgiving and winter breaks removed, local
    /// time US Eastern (standard time throughout the period).
    pub fn dartmouth() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        Self {
            window: WorkingWindow { utc_offset_minutes: -300, ..WorkingWindow::default() },
            period: Some(DateRange { start: d(2003, 11, 1), end: d(2004, 2, 28) }),
            excluded_dates: vec![
                DateRange { start: d(2003, 11, 26), end: d(2003, 11, 30) },
                DateRange { start: d(2003, 12, 17), end: d(2004, 1, 4) },
            ],
            cadence: Some(300.0),
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "dartmouth" => Ok(Self::dartmouth()),
            _ => Err(Error::Unknown { kind: "preprocess preset", value: name.into() }),
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("departure_threshold", self.departure_threshold),
            ("pingpong_return", self.pingpong_return),
            ("closed_user_hours", self.closed_user_hours),
            ("test_interval", self.test_interval),
            ("threshold_eta", self.threshold_eta),
            ("threshold_theta", self.threshold_theta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.valid_day_fraction > 0.0 && self.valid_day_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("valid_day_fraction must be in (0, 1), got {}", self.valid_day_fraction)));
        }
        if self.window.length() <= 0.0 {
            return Err(Error::InvalidArgument("working window must end after it starts".into()));
        }
        if let Some(c) = self.cadence {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!("cadence must be positive, got {c}")));
            }
        }
        if self.dependence_stages < 2 {
            return Err(Error::InvalidArgument("dependence_stages must be at least 2".into()));
        }
        Ok(())
    }

    /// Whether `date` is an observation day.
    pub fn is_working_day(&self, date: NaiveDate) -> bool {
        self.window.weekdays.contains(&date.weekday())
            && self.period.is_none_or(|p| p.contains(date))
            && !self.excluded_dates.iter().any(|r| r.contains(date))
    }

    /// Observation days from `from` onwards, in order.
    pub fn working_days(&self, from: NaiveDate) -> impl Iterator<Item = NaiveDate> + '_ {
        from.iter_days().filter(|&d| self.is_working_day(d))
    }

    /// Local date of `ts` if it falls inside the working window.
    pub fn window_day(&self, ts: f64) -> Option<NaiveDate> {
        let (date, sec) = self.window.local(ts);
        let start = f64::from(self.window.start.num_seconds_from_midnight());
        let end = f64::from(self.window.end.num_seconds_from_midnight());
        (self.is_working_day(date) && sec >= start && sec < end).then_some(date)
    }
}

/// Distinct APs mentioned by `records`, sorted.
pub fn access_points(records: &[PollRecord]) -> Vec<String> {
    records.iter().map(|r| r.ap.as_str()).collect::<BTreeSet<_>>().into_iter().map(String::from).collect()
}
