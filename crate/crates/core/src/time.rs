//! Day bin grid and analyst-selected time windows.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::seconds_of_day;

pub const DEFAULT_BIN_MINUTES: u16 = 60;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("window `{0}` is not of the form `start-end`")]
    Syntax(String),
    #[error("window {start}-{end} is outside the day grid of {bins} bins")]
    OutOfRange { start: u16, end: u16, bins: u16 },
    #[error("bin width {0} min does not divide the day")]
    BinWidth(u16),
}

/// Contiguous half-open range of day bins `[start_bin, end_bin)`.
///
/// With the default 60-minute bins, `7-10` covers 07:00 to 10:00.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_bin: u16,
    pub end_bin: u16,
    pub bin_width_minutes: u16,
}

impl TimeWindow {
    pub fn new(start_bin: u16, end_bin: u16, bin_width_minutes: u16) -> Result<Self, WindowError> {
        let bins = bins_per_day(bin_width_minutes)?;
        if start_bin > end_bin || end_bin > bins {
            return Err(WindowError::OutOfRange {
                start: start_bin,
                end: end_bin,
                bins,
            });
        }
        Ok(Self {
            start_bin,
            end_bin,
            bin_width_minutes,
        })
    }

    /// 60-minute bins, hours `[start, end)`.
    pub fn hours(start: u16, end: u16) -> Self {
        Self::new(start, end, DEFAULT_BIN_MINUTES).expect("valid hour window")
    }

    pub fn whole_day(bin_width_minutes: u16) -> Self {
        let bins = bins_per_day(bin_width_minutes).expect("valid bin width");
        Self {
            start_bin: 0,
            end_bin: bins,
            bin_width_minutes,
        }
    }

    pub fn bins_per_day(&self) -> u16 {
        1440 / self.bin_width_minutes
    }

    pub fn contains_bin(&self, bin: u16) -> bool {
        (self.start_bin..self.end_bin).contains(&bin)
    }

    pub fn contains(&self, t: &DateTime<FixedOffset>) -> bool {
        self.contains_bin(self.bin_of(t))
    }

    pub fn bin_of(&self, t: &DateTime<FixedOffset>) -> u16 {
        bin_of(t, self.bin_width_minutes)
    }

    pub fn is_whole_day(&self) -> bool {
        self.start_bin == 0 && self.end_bin == self.bins_per_day()
    }

    /// Parse `start-end` against a bin grid.
    pub fn parse(text: &str, bin_width_minutes: u16) -> Result<Self, WindowError> {
        let (a, b) = text
            .trim()
            .split_once('-')
            .ok_or_else(|| WindowError::Syntax(text.to_string()))?;
        let start = a
            .trim()
            .parse()
            .map_err(|_| WindowError::Syntax(text.to_string()))?;
        let end = b
            .trim()
            .parse()
            .map_err(|_| WindowError::Syntax(text.to_string()))?;
        Self::new(start, end, bin_width_minutes)
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start_bin, self.end_bin)
    }
}

impl FromStr for TimeWindow {
    type Err = WindowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, DEFAULT_BIN_MINUTES)
    }
}

pub fn bins_per_day(bin_width_minutes: u16) -> Result<u16, WindowError> {
    if bin_width_minutes == 0 || 1440 % bin_width_minutes != 0 {
        return Err(WindowError::BinWidth(bin_width_minutes));
    }
    Ok(1440 / bin_width_minutes)
}

pub fn bin_of(t: &DateTime<FixedOffset>, bin_width_minutes: u16) -> u16 {
    (seconds_of_day(t) / (bin_width_minutes as u32 * 60)) as u16
}
