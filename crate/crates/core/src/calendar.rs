//! Calendar months and the July-to-June fiscal year.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Month in which the fiscal year starts (July).
pub const FISCAL_START_MONTH: u32 = 7;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid year-month {0:?}, expected YYYY-MM")]
pub struct YearMonthParseError(pub String);

/// A calendar month, e.g. `2007-02`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Months since year 0, used for arithmetic.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    pub fn succ(self) -> Self {
        self.add_months(1)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }

    /// Fiscal year label: the calendar year containing the fiscal start.
    pub fn fiscal_year(self, start_month: u32) -> i32 {
        if self.month >= start_month {
            self.year
        } else {
            self.year - 1
        }
    }

    /// Position within the fiscal year, 1..=12 (July = 1 for the default anchor).
    pub fn fiscal_index(self, start_month: u32) -> usize {
        ((self.month as i64 - start_month as i64).rem_euclid(12) + 1) as usize
    }

    /// The month at fiscal position `index` (1..=12) of `fiscal_year`.
    pub fn from_fiscal(fiscal_year: i32, index: usize, start_month: u32) -> Self {
        debug_assert!((1..=12).contains(&index));
        Self {
            year: fiscal_year,
            month: start_month,
        }
        .add_months(index as i64 - 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = YearMonthParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || YearMonthParseError(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(err)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(err());
        }
        let year = y.parse().map_err(|_| err())?;
        let month = m.parse().map_err(|_| err())?;
        YearMonth::new(year, month).ok_or_else(err)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Short English month name for fiscal position `index` under the default anchor.
pub fn fiscal_month_name(index: usize) -> &'static str {
    const NAMES: [&str; 12] = [
        "Jul", "Aug", "Sep", "Oct", "Nov", "Dec", "Jan", "Feb", "Mar", "Apr", "May", "Jun",
    ];
    NAMES[(index - 1) % 12]
}
