//! Loading and validating bills, account metadata and daily weather, plus
//! degree-day arithmetic.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;

/// Degree-day balance point, degrees Fahrenheit.
pub const BALANCE_POINT_F: f64 = 65.0;

pub const BILL_HEADER: [&str; 6] = [
    "account_id",
    "building_id",
    "period_start",
    "period_end",
    "nominal_month",
    "ccf",
];
pub const ACCOUNT_HEADER: [&str; 5] = [
    "account_id",
    "building_id",
    "service_type",
    "building_sqft",
    "accounts_in_building",
];
pub const WEATHER_HEADER: [&str; 3] = ["date", "tmax", "tmin"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: duplicate billing period {nominal_month} for account {account_id}")]
    DuplicatePeriod {
        line: u64,
        account_id: String,
        nominal_month: YearMonth,
    },
    #[error("line {line}: negative usage {ccf} CCF")]
    NegativeUsage { line: u64, ccf: f64 },
    #[error("line {line}: duplicate account {account_id}")]
    DuplicateAccount { line: u64, account_id: String },
    #[error("line {line}: duplicate weather date {date}")]
    DuplicateDate { line: u64, date: NaiveDate },
    #[error("no weather for {date}")]
    MissingWeather { date: NaiveDate },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One billing period for one account, in raw CCF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityBill {
    pub account_id: String,
    pub building_id: String,
    pub period_start: NaiveDate,
    /// Exclusive end of the period.
    pub period_end: NaiveDate,
    pub nominal_month: YearMonth,
    pub ccf: f64,
}

impl UtilityBill {
    /// Billing-period length in days (`period_end` exclusive).
    pub fn duration_days(&self) -> i64 {
        (self.period_end - self.period_start).num_days()
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.period_start
            .iter_days()
            .take_while(move |d| *d < self.period_end)
    }
}

/// Utility service types as labelled by the gas utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceType {
    NonResidentialSmallGeneral,
    NonResidentialMediumGeneral,
    NonResidentialLargeGeneral,
    SeasonalCommercial,
    ResidentialHeating,
    ResidentialMultiDwellingLarge,
    ResidentialMultiDwellingSmall,
}

impl ServiceType {
    pub const ALL: [ServiceType; 7] = [
        ServiceType::NonResidentialSmallGeneral,
        ServiceType::NonResidentialMediumGeneral,
        ServiceType::NonResidentialLargeGeneral,
        ServiceType::SeasonalCommercial,
        ServiceType::ResidentialHeating,
        ServiceType::ResidentialMultiDwellingLarge,
        ServiceType::ResidentialMultiDwellingSmall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceType::NonResidentialSmallGeneral => "non_residential_small_general",
            ServiceType::NonResidentialMediumGeneral => "non_residential_medium_general",
            ServiceType::NonResidentialLargeGeneral => "non_residential_large_general",
            ServiceType::SeasonalCommercial => "seasonal_commercial",
            ServiceType::ResidentialHeating => "residential_heating",
            ServiceType::ResidentialMultiDwellingLarge => "residential_multi_dwelling_large",
            ServiceType::ResidentialMultiDwellingSmall => "residential_multi_dwelling_small",
        }
    }

    /// The utility's own label for the service type.
    pub fn display_name(self) -> &'static str {
        match self {
            ServiceType::NonResidentialSmallGeneral => "Non-Residential Small General Service",
            ServiceType::NonResidentialMediumGeneral => "Non-Residential Medium General Service",
            ServiceType::NonResidentialLargeGeneral => "Non-Residential Large General Service",
            ServiceType::SeasonalCommercial => "Seasonal - Commercial",
            ServiceType::ResidentialHeating => "Residential Heating",
            ServiceType::ResidentialMultiDwellingLarge => "Residential Multi-dwelling Large",
            ServiceType::ResidentialMultiDwellingSmall => "Residential Multi-dwelling Small",
        }
    }

    pub fn service_group(self) -> ServiceGroup {
        match self {
            ServiceType::NonResidentialSmallGeneral => ServiceGroup::SmallNonResidential,
            ServiceType::NonResidentialMediumGeneral
            | ServiceType::NonResidentialLargeGeneral
            | ServiceType::SeasonalCommercial => ServiceGroup::MediumLargeNonResidential,
            ServiceType::ResidentialHeating
            | ServiceType::ResidentialMultiDwellingLarge
            | ServiceType::ResidentialMultiDwellingSmall => ServiceGroup::Residential,
        }
    }
}

impl fmt::Display for ServiceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceType {
    type Err = String;

    /// Accepts the snake-case identifier or the utility's display name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ServiceType::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown service type {s:?}"))
    }
}

/// Coarse groups formed by merging service types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceGroup {
    Residential,
    SmallNonResidential,
    MediumLargeNonResidential,
}

impl ServiceGroup {
    pub const ALL: [ServiceGroup; 3] = [
        ServiceGroup::Residential,
        ServiceGroup::SmallNonResidential,
        ServiceGroup::MediumLargeNonResidential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceGroup::Residential => "residential",
            ServiceGroup::SmallNonResidential => "small_non_residential",
            ServiceGroup::MediumLargeNonResidential => "medium_large_non_residential",
        }
    }
}

impl fmt::Display for ServiceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountMeta {
    pub account_id: String,
    pub building_id: String,
    pub service_type: ServiceType,
    pub building_sqft: f64,
    pub accounts_in_building: u32,
}

impl AccountMeta {
    pub fn service_group(&self) -> ServiceGroup {
        self.service_type.service_group()
    }

    /// Floor area attributed to this account; the building is split evenly.
    pub fn sqft_per_account(&self) -> f64 {
        self.building_sqft / self.accounts_in_building as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyWeather {
    pub date: NaiveDate,
    pub tmax: f64,
    pub tmin: f64,
}

impl DailyWeather {
    pub fn mean_temperature(&self) -> f64 {
        (self.tmax + self.tmin) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeDayRecord {
    pub date: NaiveDate,
    pub hdd: f64,
    pub cdd: f64,
}

/// Heating and cooling degree days for one day against the 65°F balance point.
pub fn compute_degree_days(w: &DailyWeather) -> DegreeDayRecord {
    debug_assert!(w.tmax >= w.tmin);
    let u = w.mean_temperature();
    DegreeDayRecord {
        date: w.date,
        hdd: (BALANCE_POINT_F - u).max(0.0),
        cdd: (u - BALANCE_POINT_F).max(0.0),
    }
}

/// Daily degree days keyed by date.
#[derive(Debug, Clone, Default)]
pub struct DegreeDayTable {
    days: BTreeMap<NaiveDate, DegreeDayRecord>,
}

impl DegreeDayTable {
    pub fn from_weather(weather: &[DailyWeather]) -> Self {
        weather.iter().map(compute_degree_days).collect()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&DegreeDayRecord> {
        self.days.get(&date)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

impl FromIterator<DegreeDayRecord> for DegreeDayTable {
    fn from_iter<I: IntoIterator<Item = DegreeDayRecord>>(iter: I) -> Self {
        Self {
            days: iter.into_iter().map(|r| (r.date, r)).collect(),
        }
    }
}

/// Sum of daily HDD and CDD over the bill's actual day span.
pub fn aggregate_degree_days(
    bill: &UtilityBill,
    days: &DegreeDayTable,
) -> Result<(f64, f64), IngestError> {
    let mut hdd = 0.0;
    let mut cdd = 0.0;
    for date in bill.days() {
        let rec = days
            .get(date)
            .ok_or(IngestError::MissingWeather { date })?;
        hdd += rec.hdd;
        cdd += rec.cdd;
    }
    Ok((hdd, cdd))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), IngestError> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(IngestError::Malformed {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_reader(source: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str, IngestError> {
    record.get(idx).ok_or_else(|| IngestError::Malformed {
        line,
        message: format!("missing column {name}"),
    })
}

fn parse_field<T: FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    line: u64,
) -> Result<T, IngestError>
where
    T::Err: fmt::Display,
{
    let raw = field(record, idx, name, line)?;
    raw.parse().map_err(|e| IngestError::Malformed {
        line,
        message: format!("{name}: {e} ({raw:?})"),
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads the bill CSV. Output is sorted by `(account_id, period_start)`.
pub fn load_bills(source: impl Read) -> Result<Vec<UtilityBill>, IngestError> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &BILL_HEADER)?;
    let mut bills = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != BILL_HEADER.len() {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected {} fields, found {}", BILL_HEADER.len(), record.len()),
            });
        }
        let account_id = field(&record, 0, "account_id", line)?.to_string();
        let building_id = field(&record, 1, "building_id", line)?.to_string();
        if account_id.is_empty() {
            return Err(IngestError::Malformed {
                line,
                message: "empty account_id".into(),
            });
        }
        let period_start: NaiveDate = parse_field(&record, 2, "period_start", line)?;
        let period_end: NaiveDate = parse_field(&record, 3, "period_end", line)?;
        let nominal_month: YearMonth = parse_field(&record, 4, "nominal_month", line)?;
        let ccf: f64 = parse_field(&record, 5, "ccf", line)?;
        if !ccf.is_finite() {
            return Err(IngestError::Malformed {
                line,
                message: format!("ccf must be finite, found {ccf}"),
            });
        }
        if ccf < 0.0 {
            return Err(IngestError::NegativeUsage { line, ccf });
        }
        if period_end <= period_start {
            return Err(IngestError::Malformed {
                line,
                message: format!("period_end {period_end} is not after period_start {period_start}"),
            });
        }
        if !seen.insert((account_id.clone(), nominal_month)) {
            return Err(IngestError::DuplicatePeriod {
                line,
                account_id,
                nominal_month,
            });
        }
        bills.push(UtilityBill {
            account_id,
            building_id,
            period_start,
            period_end,
            nominal_month,
            ccf,
        });
    }
    bills.sort_by(|a, b| {
        (a.account_id.as_str(), a.period_start).cmp(&(b.account_id.as_str(), b.period_start))
    });
    Ok(bills)
}

pub fn write_bills(sink: impl Write, bills: &[UtilityBill]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(BILL_HEADER)?;
    for b in bills {
        w.write_record([
            b.account_id.clone(),
            b.building_id.clone(),
            b.period_start.to_string(),
            b.period_end.to_string(),
            b.nominal_month.to_string(),
            b.ccf.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_accounts(source: impl Read) -> Result<Vec<AccountMeta>, IngestError> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &ACCOUNT_HEADER)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let account_id = field(&record, 0, "account_id", line)?.to_string();
        let building_id = field(&record, 1, "building_id", line)?.to_string();
        let service_type: ServiceType = parse_field(&record, 2, "service_type", line)?;
        let building_sqft: f64 = parse_field(&record, 3, "building_sqft", line)?;
        let accounts_in_building: u32 = parse_field(&record, 4, "accounts_in_building", line)?;
        if !(building_sqft > 0.0 && building_sqft.is_finite()) {
            return Err(IngestError::Malformed {
                line,
                message: format!("building_sqft must be positive, found {building_sqft}"),
            });
        }
        if accounts_in_building == 0 {
            return Err(IngestError::Malformed {
                line,
                message: "accounts_in_building must be at least 1".into(),
            });
        }
        if !seen.insert(account_id.clone()) {
            return Err(IngestError::DuplicateAccount { line, account_id });
        }
        out.push(AccountMeta {
            account_id,
            building_id,
            service_type,
            building_sqft,
            accounts_in_building,
        });
    }
    out.sort_by(|a, b| a.account_id.cmp(&b.account_id));
    Ok(out)
}

pub fn write_accounts(sink: impl Write, accounts: &[AccountMeta]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ACCOUNT_HEADER)?;
    for a in accounts {
        w.write_record([
            a.account_id.clone(),
            a.building_id.clone(),
            a.service_type.to_string(),
            a.building_sqft.to_string(),
            a.accounts_in_building.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `date,tmax,tmin` rows. Output is sorted by date.
pub fn load_weather(source: impl Read) -> Result<Vec<DailyWeather>, IngestError> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &WEATHER_HEADER)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let date: NaiveDate = parse_field(&record, 0, "date", line)?;
        let tmax: f64 = parse_field(&record, 1, "tmax", line)?;
        let tmin: f64 = parse_field(&record, 2, "tmin", line)?;
        if !(tmax.is_finite() && tmin.is_finite()) || tmax < tmin {
            return Err(IngestError::Malformed {
                line,
                message: format!("need finite tmax >= tmin, found tmax={tmax} tmin={tmin}"),
            });
        }
        if !seen.insert(date) {
            return Err(IngestError::DuplicateDate { line, date });
        }
        out.push(DailyWeather { date, tmax, tmin });
    }
    out.sort_by_key(|w| w.date);
    Ok(out)
}

pub fn write_weather(sink: impl Write, weather: &[DailyWeather]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(WEATHER_HEADER)?;
    for d in weather {
        w.write_record([d.date.to_string(), d.tmax.to_string(), d.tmin.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
