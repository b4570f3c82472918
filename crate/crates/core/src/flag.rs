use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagMethod {
    BandAbove,
    BandBelow,
    BoxplotModerate,
    BoxplotSevere,
    Ablr,
}

impl FlagMethod {
    pub const ALL: [FlagMethod; 5] = [
        FlagMethod::BandAbove,
        FlagMethod::BandBelow,
        FlagMethod::BoxplotModerate,
        FlagMethod::BoxplotSevere,
        FlagMethod::Ablr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlagMethod::BandAbove => "band-above",
            FlagMethod::BandBelow => "band-below",
            FlagMethod::BoxplotModerate => "boxplot-moderate",
            FlagMethod::BoxplotSevere => "boxplot-severe",
            FlagMethod::Ablr => "ablr",
        }
    }
}

impl fmt::Display for FlagMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlagMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlagMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown flag method {s:?}"))
    }
}

/// One detected anomaly.
///
/// `statistic` is the flagged value for band flags (adjusted usage), the
/// month's logit proportion for boxplot flags, and the account's contrast
/// statistic for ABLR flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub account_id: String,
    pub group_id: String,
    pub fiscal_year: i32,
    /// Fiscal month 1..=12, or `None` for a year-level flag.
    pub month: Option<u8>,
    pub method: FlagMethod,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<DateTime<Utc>>,
}

impl Flag {
    /// Deterministic ordering used for every flag output.
    pub fn sort_key(&self) -> (&str, i32, &str, Option<u8>, FlagMethod) {
        (&self.group_id, self.fiscal_year, &self.account_id, self.month, self.method)
    }
}

pub fn sort_flags(flags: &mut [Flag]) {
    flags.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}
