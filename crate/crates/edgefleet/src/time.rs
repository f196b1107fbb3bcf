//! Timestamps and the simulated clock.
//!
//! Instants are integer epoch milliseconds (UTC) internally and RFC 3339
//! strings in every file format.

use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};

pub const SECOND_MS: i64 = 1_000;
pub const MINUTE_MS: i64 = 60 * SECOND_MS;
pub const HOUR_MS: i64 = 60 * MINUTE_MS;
pub const DAY_MS: i64 = 24 * HOUR_MS;

/// A UTC instant with millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    /// Parses an RFC 3339 instant, e.g. `2020-03-15T00:00:00Z`.
    pub fn parse_rfc3339(s: &str) -> Result<Self, TimeParseError> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
            .map_err(|_| TimeParseError(s.to_string()))
    }

    /// Renders as RFC 3339 UTC; fractional seconds only when non-zero.
    pub fn to_rfc3339(self) -> String {
        let dt = Utc
            .timestamp_millis_opt(self.0)
            .single()
            .expect("timestamp in range");
        if self.0.rem_euclid(1000) == 0 {
            dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
        } else {
            dt.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
        }
    }

    pub fn add_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    /// Date part (`YYYY-MM-DD`) of the instant.
    pub fn date_string(self) -> String {
        let dt = Utc
            .timestamp_millis_opt(self.0)
            .single()
            .expect("timestamp in range");
        dt.format("%Y-%m-%d").to_string()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_rfc3339())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeParseError(pub String);

impl fmt::Display for TimeParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid RFC 3339 timestamp: {:?}", self.0)
    }
}

impl std::error::Error for TimeParseError {}

/// Source of "now" for components that stamp messages or records.
pub trait TimeSource: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Simulated clock owned by a scenario runner. Cheap to clone and share.
#[derive(Clone)]
pub struct SimClock {
    now_ms: Arc<AtomicI64>,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        SimClock {
            now_ms: Arc::new(AtomicI64::new(start.0)),
        }
    }

    pub fn set(&self, to: Timestamp) {
        self.now_ms.store(to.0, Ordering::Release);
    }
}

impl TimeSource for SimClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now_ms.load(Ordering::Acquire))
    }
}
