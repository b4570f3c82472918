//! Synthetic fleets: bills, account metadata and weather with known
//! seasonal shapes, peer groups and injected anomalies.
//!
//! Each account has a mean logit vector over the fiscal year. A year's
//! weather-adjusted usage is drawn on the logit scale, mapped to proportions
//! and scaled; the raw CCF on each bill is then backed out through the
//! billing period's length, floor area and degree days, so the preprocessing
//! stage recovers the designed proportions up to rounding.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{YearMonth, FISCAL_START_MONTH};
use crate::ingestion::{
    write_accounts, write_bills, write_weather, AccountMeta, DailyWeather, DegreeDayTable, IngestError,
    ServiceType, UtilityBill,
};
use crate::proportions::{inverse_logit, logit};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Built-in seasonal shapes, by fiscal month (July first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    WinterPeak,
    SummerPeak,
    Shoulder,
    Flat,
}

impl Template {
    pub fn proportions(self) -> [f64; 12] {
        let phase = |m: usize, peak: f64, cycles: f64| (2.0 * std::f64::consts::PI * cycles * (m as f64 - peak) / 12.0).cos();
        let raw: [f64; 12] = std::array::from_fn(|i| {
            let m = i + 1;
            match self {
                Template::WinterPeak => 1.0 + 0.6 * phase(m, 7.0, 1.0),
                Template::SummerPeak => 1.0 + 0.6 * phase(m, 1.0, 1.0),
                Template::Shoulder => 1.0 + 0.5 * phase(m, 4.0, 2.0),
                Template::Flat => 1.0 + 0.1 * phase(m, 7.0, 1.0),
            }
        });
        let total: f64 = raw.iter().sum();
        raw.map(|v| v / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    /// Prefix of the generated account ids.
    pub name: String,
    pub service_type: ServiceType,
    pub accounts: usize,
    #[serde(default = "default_template")]
    pub template: Template,
    /// Explicit mean proportions by fiscal month; overrides `template`.
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
}

fn default_template() -> Template {
    Template::WinterPeak
}

/// Multiplies the account's mean logit by `shift` in the listed fiscal
/// months of one fiscal year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub account_id: String,
    pub fiscal_year: i32,
    pub months: Vec<u8>,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub first_fiscal_year: i32,
    pub years: usize,
    pub station: String,
    /// Standard deviation of the yearly logit noise.
    pub noise_sd: f64,
    /// Spread of account mean logits around the group profile.
    pub account_sd: f64,
    /// Probability that an interior bill is absent.
    pub missing_rate: f64,
    pub groups: Vec<GroupSpec>,
    pub injections: Vec<Injection>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            first_fiscal_year: 2013,
            years: 6,
            station: "USW00014740".into(),
            noise_sd: 0.1,
            account_sd: 0.05,
            missing_rate: 0.0,
            groups: vec![
                GroupSpec {
                    name: "res".into(),
                    service_type: ServiceType::ResidentialMultiDwellingLarge,
                    accounts: 24,
                    template: Template::WinterPeak,
                    profile: None,
                },
                GroupSpec {
                    name: "sml".into(),
                    service_type: ServiceType::NonResidentialSmallGeneral,
                    accounts: 22,
                    template: Template::Shoulder,
                    profile: None,
                },
                GroupSpec {
                    name: "med".into(),
                    service_type: ServiceType::NonResidentialMediumGeneral,
                    accounts: 24,
                    template: Template::SummerPeak,
                    profile: None,
                },
            ],
            injections: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAnomaly {
    pub account_id: String,
    pub fiscal_year: i32,
    pub month: u8,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Account id to generating group name.
    pub groups: BTreeMap<String, String>,
    pub anomalies: Vec<TruthAnomaly>,
    /// Bills withheld from the output, as `(account_id, nominal month)`.
    pub missing: Vec<(String, YearMonth)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub bills: Vec<UtilityBill>,
    pub accounts: Vec<AccountMeta>,
    pub weather: Vec<DailyWeather>,
    pub truth: GroundTruth,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidSpec(m));
        if self.years == 0 {
            return bad("years must be at least 1".into());
        }
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        if !(self.noise_sd >= 0.0 && self.account_sd >= 0.0) {
            return bad("noise_sd and account_sd must be non-negative".into());
        }
        if !(0.0..0.1).contains(&self.missing_rate) {
            return bad(format!("missing_rate must be in [0, 0.1), found {}", self.missing_rate));
        }
        let mut names = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.accounts == 0 {
                return bad(format!("group {} has no accounts", g.name));
            }
            if g.name.is_empty() || g.name.contains(',') || !names.insert(&g.name) {
                return bad(format!("group name {:?} is empty, duplicated or contains a comma", g.name));
            }
            if let Some(p) = &g.profile {
                if p.len() != 12 || p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return bad(format!("group {} profile needs 12 positive entries", g.name));
                }
            }
        }
        let ids = self.account_ids();
        let last = self.first_fiscal_year + self.years as i32 - 1;
        for inj in &self.injections {
            if !ids.iter().any(|(id, _)| *id == inj.account_id) {
                return bad(format!("injection names unknown account {}", inj.account_id));
            }
            if !(self.first_fiscal_year..=last).contains(&inj.fiscal_year) {
                return bad(format!("injection fiscal year {} outside the simulated years", inj.fiscal_year));
            }
            if inj.months.is_empty() || inj.months.iter().any(|m| !(1..=12).contains(m)) {
                return bad("injection months must be a non-empty subset of 1..=12".into());
            }
            if !(inj.shift.is_finite() && inj.shift > 0.0) {
                return bad(format!("injection shift must be positive, found {}", inj.shift));
            }
        }
        Ok(())
    }

    /// `(account_id, group index)` in generation order.
    pub fn account_ids(&self) -> Vec<(String, usize)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, spec)| (1..=spec.accounts).map(move |i| (format!("{}-{i:03}", spec.name), g)))
            .collect()
    }
}

fn mean_proportions(g: &GroupSpec) -> [f64; 12] {
    match &g.profile {
        Some(p) => {
            let total: f64 = p.iter().sum();
            std::array::from_fn(|m| p[m] / total)
        }
        None => g.template.proportions(),
    }
}

fn date(year: i32, month: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, month, day).expect("valid date")
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn simulate_weather(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate) -> Vec<DailyWeather> {
    let noise = Normal::new(0.0, 6.0).expect("valid sd");
    start
        .iter_days()
        .take_while(|d| *d < end)
        .map(|d| {
            let doy = d.ordinal() as f64;
            let mean = 52.0 - 22.0 * (2.0 * std::f64::consts::PI * (doy - 20.0) / 365.25).cos() + noise.sample(rng);
            let spread = 12.0 + 8.0 * rng.random::<f64>();
            DailyWeather {
                date: d,
                tmax: round_to(mean + spread / 2.0, 1),
                tmin: round_to(mean - spread / 2.0, 1),
            }
        })
        .collect()
}

/// Generates a dataset; the same `(spec, seed)` always gives the same data.
pub fn simulate(spec: &SimulationSpec, seed: u64) -> Result<SimulatedData, SimulationError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fy0 = spec.first_fiscal_year;
    let first_month = YearMonth::new(fy0, FISCAL_START_MONTH).expect("valid month");
    let n_months = 12 * spec.years;
    let weather = simulate_weather(&mut rng, date(fy0, 5, 1), date(fy0 + spec.years as i32, 8, 1));
    let dd = DegreeDayTable::from_weather(&weather);
    let account_noise = Normal::new(0.0, spec.account_sd).expect("valid sd");
    let year_noise = Normal::new(0.0, spec.noise_sd).expect("valid sd");

    let mut injections: BTreeMap<(&str, i32, u8), f64> = BTreeMap::new();
    let mut truth = GroundTruth::default();
    for inj in &spec.injections {
        for &m in &inj.months {
            *injections.entry((inj.account_id.as_str(), inj.fiscal_year, m)).or_insert(1.0) *= inj.shift;
        }
    }
    for ((account_id, fiscal_year, month), shift) in &injections {
        truth.anomalies.push(TruthAnomaly {
            account_id: account_id.to_string(),
            fiscal_year: *fiscal_year,
            month: *month,
            shift: *shift,
        });
    }

    let mut accounts = Vec::new();
    let mut bills = Vec::new();
    let mut shared: Option<(String, usize, f64)> = None;
    for (account_id, g) in spec.account_ids() {
        let group = &spec.groups[g];
        truth.groups.insert(account_id.clone(), group.name.clone());
        let multi = matches!(
            group.service_type,
            ServiceType::ResidentialMultiDwellingLarge | ServiceType::ResidentialMultiDwellingSmall
        );
        let (building_id, per_building, building_sqft) = match &shared {
            Some((b, used, sqft)) if multi && *used < 3 => (b.clone(), *used + 1, *sqft),
            _ => {
                let sqft = if multi {
                    3.0 * rng.random_range(900.0..2500.0f64).round()
                } else {
                    rng.random_range(4_000.0..60_000.0f64).round()
                };
                (format!("B-{account_id}"), 1, sqft)
            }
        };
        shared = multi.then(|| (building_id.clone(), per_building, building_sqft));
        let meta = AccountMeta {
            account_id: account_id.clone(),
            building_id,
            service_type: group.service_type,
            building_sqft,
            accounts_in_building: if multi { 3 } else { 1 },
        };

        let p0 = mean_proportions(group);
        let beta: [f64; 12] = std::array::from_fn(|m| logit(p0[m]) + account_noise.sample(&mut rng));
        let level = rng.random_range(40.0..400.0f64);
        let read_day = rng.random_range(8..=22u32);

        let mut periods = Vec::with_capacity(n_months);
        let mut start = {
            let prev = first_month.add_months(-1);
            date(prev.year(), prev.month(), read_day)
        };
        for i in 0..n_months {
            let ym = first_month.add_months(i as i64);
            let jitter = rng.random_range(-2..=2i32);
            let end = date(ym.year(), ym.month(), (read_day as i32 + jitter) as u32);
            periods.push((ym, start, end));
            start = end;
        }
        let factors: Vec<f64> = periods
            .iter()
            .map(|(ym, s, e)| {
                let probe = UtilityBill {
                    account_id: account_id.clone(),
                    building_id: meta.building_id.clone(),
                    period_start: *s,
                    period_end: *e,
                    nominal_month: *ym,
                    ccf: 0.0,
                };
                let (h, c) = crate::ingestion::aggregate_degree_days(&probe, &dd).expect("weather covers bills");
                (h + c) * probe.duration_days() as f64 * meta.sqft_per_account() / 30.0
            })
            .collect();
        let scale = level * 12.0 / (factors.iter().sum::<f64>() / factors.len() as f64);

        for y in 0..spec.years {
            let fy = fy0 + y as i32;
            let logits: [f64; 12] = std::array::from_fn(|m| {
                let shift = injections.get(&(account_id.as_str(), fy, m as u8 + 1)).copied().unwrap_or(1.0);
                shift * beta[m] + year_noise.sample(&mut rng)
            });
            let raw = logits.map(inverse_logit);
            let total: f64 = raw.iter().sum();
            for m in 0..12 {
                let i = 12 * y + m;
                let (ym, s, e) = periods[i];
                let drop = rng.random::<f64>() < spec.missing_rate && i > 0 && i + 1 < n_months;
                if drop {
                    truth.missing.push((account_id.clone(), ym));
                    continue;
                }
                let adjusted = scale * raw[m] / total;
                bills.push(UtilityBill {
                    account_id: account_id.clone(),
                    building_id: meta.building_id.clone(),
                    period_start: s,
                    period_end: e,
                    nominal_month: ym,
                    ccf: round_to(adjusted * factors[i], 2),
                });
            }
        }
        accounts.push(meta);
    }
    bills.sort_by(|a, b| (&a.account_id, a.period_start).cmp(&(&b.account_id, b.period_start)));
    truth.missing.sort();
    Ok(SimulatedData {
        bills,
        accounts,
        weather,
        truth,
    })
}

pub const BILLS_FILE: &str = "bills.csv";
pub const ACCOUNTS_FILE: &str = "accounts.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes `bills.csv`, `accounts.csv`, `weather.csv` and `truth.json`.
pub fn write_dataset(dir: &Path, data: &SimulatedData) -> Result<(), SimulationError> {
    fs::create_dir_all(dir)?;
    write_bills(fs::File::create(dir.join(BILLS_FILE))?, &data.bills)?;
    write_accounts(fs::File::create(dir.join(ACCOUNTS_FILE))?, &data.accounts)?;
    write_weather(fs::File::create(dir.join(WEATHER_FILE))?, &data.weather)?;
    let truth = serde_json::to_string_pretty(&data.truth).map_err(io::Error::other)?;
    fs::write(dir.join(TRUTH_FILE), truth + "\n")?;
    Ok(())
}
