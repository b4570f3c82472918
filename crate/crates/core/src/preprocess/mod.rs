//! From raw bills to 30-day-normalized, per-square-foot, degree-day-adjusted
//! monthly series, with interior gaps imputed.

pub mod structural;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::ingestion::{AccountMeta, UtilityBill};

/// Degree-day totals at or below this make a billing period unusable.
pub const DEGREE_DAY_FLOOR: f64 = 1.0;
/// Accounts with a larger share of missing months are dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.10;
/// Imputation refuses series with a larger share of gaps.
pub const MAX_IMPUTE_GAP_FRACTION: f64 = 0.20;
pub const MIN_OBSERVED_MONTHS: usize = 24;

pub const SERIES_HEADER: [&str; 5] = ["account_id", "month", "value", "provenance", "unit"];

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("billing period must be at least one day, found {0}")]
    InvalidDuration(i64),
    #[error("building area must be positive, found {0}")]
    InvalidArea(f64),
    #[error("degree-day total {0} is at or below the floor {DEGREE_DAY_FLOOR}")]
    DegenerateDegreeDays(f64),
    #[error("series has {observed} observed months, need {MIN_OBSERVED_MONTHS}")]
    TooShort { observed: usize },
    #[error("series begins or ends with a missing month")]
    LeadingOrTrailingGap,
    #[error("{missing} of {len} months missing exceeds the imputation limit")]
    TooManyGaps { missing: usize, len: usize },
    #[error("imputation model could not be fitted")]
    FitFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Observed,
    Imputed,
    ZeroClamped,
    /// Not yet imputed.
    Missing,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Imputed => "imputed",
            Provenance::ZeroClamped => "zero-clamped",
            Provenance::Missing => "missing",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "observed" => Provenance::Observed,
            "imputed" => Provenance::Imputed,
            "zero-clamped" => Provenance::ZeroClamped,
            "missing" => Provenance::Missing,
            _ => return Err(format!("unknown provenance {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    RawCcf,
    Normalized,
    DdAdjusted,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::RawCcf => "raw-ccf",
            Unit::Normalized => "normalized",
            Unit::DdAdjusted => "dd-adjusted",
        }
    }
}

impl FromStr for Unit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "raw-ccf" => Unit::RawCcf,
            "normalized" => Unit::Normalized,
            "dd-adjusted" => Unit::DdAdjusted,
            _ => return Err(format!("unknown unit {s:?}")),
        })
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPoint {
    pub month: YearMonth,
    /// `None` only while provenance is `Missing`.
    pub value: Option<f64>,
    pub provenance: Provenance,
}

/// A per-account calendar-month series with contiguous months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub account_id: String,
    pub unit: Unit,
    pub points: Vec<MonthlyPoint>,
}

impl MonthlySeries {
    /// Builds a contiguous series from sparse values; months between the
    /// first and last key that are absent become `Missing`.
    pub fn from_sparse(account_id: impl Into<String>, unit: Unit, values: &BTreeMap<YearMonth, f64>) -> Self {
        let mut points = Vec::new();
        if let (Some((&first, _)), Some((&last, _))) = (values.first_key_value(), values.last_key_value()) {
            let mut m = first;
            while m <= last {
                points.push(match values.get(&m) {
                    Some(&v) => MonthlyPoint { month: m, value: Some(v), provenance: Provenance::Observed },
                    None => MonthlyPoint { month: m, value: None, provenance: Provenance::Missing },
                });
                m = m.succ();
            }
        }
        Self {
            account_id: account_id.into(),
            unit,
            points,
        }
    }

    pub fn missing_count(&self) -> usize {
        self.points.iter().filter(|p| p.value.is_none()).count()
    }

    pub fn observed_count(&self) -> usize {
        self.points.len() - self.missing_count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    pub fn value_at(&self, month: YearMonth) -> Option<f64> {
        let first = self.points.first()?.month;
        let idx = first.months_until(month);
        if idx < 0 {
            return None;
        }
        self.points.get(idx as usize).and_then(|p| p.value)
    }
}

/// Usage per square foot for a 30-day month.
pub fn normalize_bill(bill: &UtilityBill, meta: &AccountMeta) -> Result<f64, PreprocessError> {
    let days = bill.duration_days();
    if days < 1 {
        return Err(PreprocessError::InvalidDuration(days));
    }
    let area = meta.sqft_per_account();
    if !(area > 0.0) {
        return Err(PreprocessError::InvalidArea(area));
    }
    Ok(30.0 * bill.ccf / (days as f64 * area))
}

/// Divides a normalized value by the period's total degree days.
pub fn adjust_weather(value: f64, hdd_sum: f64, cdd_sum: f64) -> Result<f64, PreprocessError> {
    let total = hdd_sum + cdd_sum;
    if !(total > DEGREE_DAY_FLOOR) {
        return Err(PreprocessError::DegenerateDegreeDays(total));
    }
    Ok(value / total)
}

/// Fills interior gaps with the smoothed state of a local-level +
/// seasonal-12 model. Negative imputations become 0 (`ZeroClamped`).
pub fn impute_series(s: &MonthlySeries) -> Result<MonthlySeries, PreprocessError> {
    let missing = s.missing_count();
    let observed = s.observed_count();
    if observed < MIN_OBSERVED_MONTHS {
        return Err(PreprocessError::TooShort { observed });
    }
    let first_missing = s.points.first().is_some_and(|p| p.value.is_none());
    let last_missing = s.points.last().is_some_and(|p| p.value.is_none());
    if first_missing || last_missing {
        return Err(PreprocessError::LeadingOrTrailingGap);
    }
    if missing == 0 {
        return Ok(s.clone());
    }
    if missing as f64 > MAX_IMPUTE_GAP_FRACTION * s.points.len() as f64 {
        return Err(PreprocessError::TooManyGaps { missing, len: s.points.len() });
    }
    let y: Vec<Option<f64>> = s.points.iter().map(|p| p.value).collect();
    let fit = structural::fit_and_smooth(&y).ok_or(PreprocessError::FitFailed)?;
    let points = s
        .points
        .iter()
        .zip(&fit.smoothed)
        .map(|(p, &smoothed)| match p.value {
            Some(_) => *p,
            None if smoothed < 0.0 || !smoothed.is_finite() => MonthlyPoint {
                month: p.month,
                value: Some(0.0),
                provenance: Provenance::ZeroClamped,
            },
            None => MonthlyPoint {
                month: p.month,
                value: Some(smoothed),
                provenance: Provenance::Imputed,
            },
        })
        .collect();
    Ok(MonthlySeries {
        account_id: s.account_id.clone(),
        unit: s.unit,
        points,
    })
}

pub fn write_series(sink: impl Write, series: &[MonthlySeries]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SERIES_HEADER)?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.account_id.clone(),
                p.month.to_string(),
                p.value.map(|v| v.to_string()).unwrap_or_default(),
                p.provenance.as_str().to_string(),
                s.unit.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum SeriesReadError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Reads the processed-series interchange CSV. Rows for one account must be
/// contiguous and in month order.
pub fn read_series(source: impl Read) -> Result<Vec<MonthlySeries>, SeriesReadError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != SERIES_HEADER {
        return Err(SeriesReadError::Malformed { line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut out: Vec<MonthlySeries> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| SeriesReadError::Malformed { line, message };
        let account_id = &record[0];
        let month: YearMonth = record[1].parse().map_err(|e: crate::calendar::YearMonthParseError| bad(e.to_string()))?;
        let value = match &record[2] {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|e| bad(format!("value: {e}")))?),
        };
        let provenance: Provenance = record[3].parse().map_err(bad)?;
        let unit: Unit = record[4].parse().map_err(bad)?;
        if value.is_none() != (provenance == Provenance::Missing) {
            return Err(bad("value must be empty exactly when provenance is missing".into()));
        }
        let point = MonthlyPoint { month, value, provenance };
        match out.last_mut() {
            Some(s) if s.account_id == account_id => {
                let prev = s.points.last().expect("non-empty").month;
                if prev.succ() != month || s.unit != unit {
                    return Err(bad(format!("non-contiguous month {month} for {account_id}")));
                }
                s.points.push(point);
            }
            _ => out.push(MonthlySeries { account_id: account_id.to_string(), unit, points: vec![point] }),
        }
    }
    Ok(out)
}
