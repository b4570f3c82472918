//! Pipeline stages. Each stage reads the previous stage's files from the
//! output directory and writes its own; all outputs are deterministic given
//! the inputs, the configuration and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablr::{
    calibrate_gamma, empirical_c_ratio, fit, monitor_year, AblrError, AblrModel, AccountHistory, CRatio,
    Calibration, Checkpoint, MonitorResult, Vec12, CHECKPOINT_VERSION,
};
use crate::calendar::YearMonth;
use crate::clustering::{group_pipeline, read_cluster_groups, write_clusters, write_diagnostics, ClusterError, GroupResult};
use crate::config::{Config, Grouping};
use crate::flag::{sort_flags, Flag};
use crate::ingestion::{
    aggregate_degree_days, load_accounts, load_bills, write_accounts, AccountMeta, DegreeDayTable, IngestError,
};
use crate::modelfree::{flag_band_exceedances, flag_boxplot_outliers, BoxplotResult, ReferenceBand};
use crate::preprocess::{
    adjust_weather, impute_series, normalize_bill, read_series, write_series, MonthlyPoint, MonthlySeries,
    PreprocessError, Provenance, SeriesReadError, Unit, MAX_MISSING_FRACTION,
};
use crate::proportions::{fiscal_year_slices, write_proportions, FiscalYearVector};
use crate::weather::{fetch_weather, load_weather_file, DateRange, HttpWeatherSource, WeatherCache, WeatherError};

pub const BILLING_PERIODS_FILE: &str = "billing_periods.csv";
pub const ACCOUNTS_FILE: &str = "accounts.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const PROPORTIONS_FILE: &str = "proportions.csv";
pub const EXCLUDED_FILE: &str = "excluded.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CLUSTER_DIAGNOSTICS_FILE: &str = "cluster_diagnostics.csv";
pub const FLAGS_FILE: &str = "flags.json";
pub const BANDS_FILE: &str = "bands.csv";
pub const BOXPLOT_FILE: &str = "boxplot.csv";
pub const C_RATIOS_FILE: &str = "c_ratios.csv";
pub const ABLR_FILE: &str = "ablr.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {}: run the {stage} stage first or fix the path", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Ingest { path: PathBuf, source: IngestError },
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error("{}: {source}", path.display())]
    Series { path: PathBuf, source: SeriesReadError },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("clustering: {0}")]
    Cluster(#[from] ClusterError),
    #[error("no usable data: {0}")]
    NoData(String),
}

fn require(path: &Path, stage: &'static str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_accounts(path: &Path, stage: &'static str) -> Result<Vec<AccountMeta>, PipelineError> {
    require(path, stage)?;
    load_accounts(File::open(path)?).map_err(|source| PipelineError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

/// A bill with its length and degree-day totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillingPeriod {
    pub account_id: String,
    pub building_id: String,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub nominal_month: YearMonth,
    pub days: i64,
    pub ccf: f64,
    pub hdd: f64,
    pub cdd: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub bills: usize,
    pub accounts: usize,
    pub weather_days: usize,
}

/// Loads raw bills, account metadata and weather; writes
/// `billing_periods.csv` and a validated `accounts.csv`.
pub fn ingest(cfg: &Config, out: &Path) -> Result<IngestSummary, PipelineError> {
    let bills_path = &cfg.inputs.bills;
    require(bills_path, "data export")?;
    let bills = load_bills(File::open(bills_path)?).map_err(|source| PipelineError::Ingest {
        path: bills_path.clone(),
        source,
    })?;
    let accounts = read_accounts(&cfg.inputs.accounts, "data export")?;
    let weather = match &cfg.weather.endpoint {
        Some(endpoint) => {
            let start = bills.iter().map(|b| b.period_start).min();
            let end = bills.iter().map(|b| b.period_end).max();
            match (start, end) {
                (Some(start), Some(end)) => fetch_weather(
                    &HttpWeatherSource::new(endpoint.clone()),
                    &WeatherCache::new(&cfg.weather.cache_dir),
                    &cfg.weather.station,
                    DateRange::new(start, end),
                )?,
                _ => Vec::new(),
            }
        }
        None => {
            require(&cfg.inputs.weather, "weather download")?;
            load_weather_file(&cfg.inputs.weather)?
        }
    };
    let table = DegreeDayTable::from_weather(&weather);
    fs::create_dir_all(out)?;
    let path = out.join(BILLING_PERIODS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    for b in &bills {
        let (hdd, cdd) = aggregate_degree_days(b, &table).map_err(|source| PipelineError::Ingest {
            path: bills_path.clone(),
            source,
        })?;
        w.serialize(BillingPeriod {
            account_id: b.account_id.clone(),
            building_id: b.building_id.clone(),
            period_start: b.period_start,
            period_end: b.period_end,
            nominal_month: b.nominal_month,
            days: b.duration_days(),
            ccf: b.ccf,
            hdd,
            cdd,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush()?;
    write_accounts(create(&out.join(ACCOUNTS_FILE))?, &accounts).map_err(|source| PipelineError::Ingest {
        path: out.join(ACCOUNTS_FILE),
        source,
    })?;
    info!("ingested {} bills for {} accounts", bills.len(), accounts.len());
    Ok(IngestSummary {
        bills: bills.len(),
        accounts: accounts.len(),
        weather_days: weather.len(),
    })
}

pub fn read_billing_periods(path: &Path) -> Result<Vec<BillingPeriod>, PipelineError> {
    require(path, "ingest")?;
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// An account, or one month of an account, left out of the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub account_id: String,
    pub month: Option<YearMonth>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub series: Vec<MonthlySeries>,
    pub vectors: Vec<FiscalYearVector>,
    pub excluded: Vec<Exclusion>,
}

/// Normalizes and weather-adjusts every bill, lays the values on the study's
/// month grid, drops sparse accounts and imputes interior gaps. Writes
/// `series.csv`, `proportions.csv` and `excluded.csv`.
pub fn preprocess(cfg: &Config, out: &Path) -> Result<PreprocessSummary, PipelineError> {
    let periods = read_billing_periods(&out.join(BILLING_PERIODS_FILE))?;
    let accounts = read_accounts(&out.join(ACCOUNTS_FILE), "ingest")?;
    let meta: BTreeMap<&str, &AccountMeta> = accounts.iter().map(|a| (a.account_id.as_str(), a)).collect();
    let (Some(first), Some(last)) = (
        periods.iter().map(|p| p.nominal_month).min(),
        periods.iter().map(|p| p.nominal_month).max(),
    ) else {
        return Err(PipelineError::NoData("no billing periods".into()));
    };
    let mut by_account: BTreeMap<&str, Vec<&BillingPeriod>> = BTreeMap::new();
    for p in &periods {
        by_account.entry(p.account_id.as_str()).or_default().push(p);
    }

    let mut excluded = Vec::new();
    let mut exclude = |account_id: &str, month: Option<YearMonth>, reason: String| {
        excluded.push(Exclusion {
            account_id: account_id.to_string(),
            month,
            reason,
        })
    };
    let mut series = Vec::new();
    'accounts: for (account_id, bills) in by_account {
        let Some(m) = meta.get(account_id) else {
            exclude(account_id, None, "no-metadata".into());
            continue;
        };
        let mut values = BTreeMap::new();
        for b in bills {
            let bill = crate::ingestion::UtilityBill {
                account_id: b.account_id.clone(),
                building_id: b.building_id.clone(),
                period_start: b.period_start,
                period_end: b.period_end,
                nominal_month: b.nominal_month,
                ccf: b.ccf,
            };
            let normalized = match normalize_bill(&bill, m) {
                Ok(v) => v,
                Err(e) => {
                    exclude(account_id, None, e.to_string());
                    continue 'accounts;
                }
            };
            match adjust_weather(normalized, b.hdd, b.cdd) {
                Ok(v) => {
                    values.insert(b.nominal_month, v);
                }
                Err(PreprocessError::DegenerateDegreeDays(_)) => {
                    exclude(account_id, Some(b.nominal_month), "degenerate-degree-days".into())
                }
                Err(e) => {
                    exclude(account_id, None, e.to_string());
                    continue 'accounts;
                }
            }
        }
        let mut points = Vec::new();
        let mut month = first;
        while month <= last {
            points.push(match values.get(&month) {
                Some(&v) => MonthlyPoint {
                    month,
                    value: Some(v),
                    provenance: Provenance::Observed,
                },
                None => MonthlyPoint {
                    month,
                    value: None,
                    provenance: Provenance::Missing,
                },
            });
            month = month.succ();
        }
        let raw = MonthlySeries {
            account_id: account_id.to_string(),
            unit: Unit::DdAdjusted,
            points,
        };
        let missing = raw.missing_count();
        if missing as f64 > MAX_MISSING_FRACTION * raw.points.len() as f64 {
            exclude(account_id, None, format!("too-many-missing ({missing} of {})", raw.points.len()));
            continue;
        }
        match impute_series(&raw) {
            Ok(s) => series.push(s),
            Err(PreprocessError::LeadingOrTrailingGap) => exclude(account_id, None, "leading-or-trailing-gap".into()),
            Err(e) => exclude(account_id, None, e.to_string()),
        }
    }
    let eps = cfg.proportions.epsilon;
    let start = cfg.calendar.fiscal_start_month;
    let vectors: Vec<FiscalYearVector> = series.iter().flat_map(|s| fiscal_year_slices(s, start, eps)).collect();

    fs::create_dir_all(out)?;
    let path = out.join(SERIES_FILE);
    write_series(create(&path)?, &series).map_err(csv_err(&path))?;
    let path = out.join(PROPORTIONS_FILE);
    write_proportions(create(&path)?, &vectors).map_err(csv_err(&path))?;
    let path = out.join(EXCLUDED_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["account_id", "month", "reason"]).map_err(csv_err(&path))?;
    for e in &excluded {
        let month = e.month.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([e.account_id.as_str(), month.as_str(), e.reason.as_str()])
            .map_err(csv_err(&path))?;
    }
    w.flush()?;
    info!("preprocessed {} series, {} exclusions", series.len(), excluded.len());
    Ok(PreprocessSummary {
        series,
        vectors,
        excluded,
    })
}

/// Processed series and their fiscal-year vectors, read back from `series.csv`.
pub fn load_processed(cfg: &Config, out: &Path) -> Result<(Vec<MonthlySeries>, Vec<FiscalYearVector>), PipelineError> {
    let path = out.join(SERIES_FILE);
    require(&path, "preprocess")?;
    let series = read_series(File::open(&path)?).map_err(|source| PipelineError::Series { path, source })?;
    let vectors = series
        .iter()
        .flat_map(|s| fiscal_year_slices(s, cfg.calendar.fiscal_start_month, cfg.proportions.epsilon))
        .collect();
    Ok((series, vectors))
}

/// The `n` most recent fiscal years in which at least one account is complete.
fn recent_complete_years(vectors: &[FiscalYearVector], n: usize) -> Vec<i32> {
    let years: BTreeSet<i32> = vectors.iter().filter(|v| v.shape.is_some()).map(|v| v.fiscal_year).collect();
    let mut recent: Vec<i32> = years.into_iter().rev().take(n).collect();
    recent.reverse();
    recent
}

/// Clusters accounts within each service group on their proportion
/// profiles. Writes `clusters.csv` and `cluster_diagnostics.csv`.
pub fn cluster(cfg: &Config, out: &Path) -> Result<GroupResult, PipelineError> {
    let (_, vectors) = load_processed(cfg, out)?;
    let accounts = read_accounts(&out.join(ACCOUNTS_FILE), "ingest")?;
    let years = match &cfg.clustering.years {
        Some(y) => y.clone(),
        None => recent_complete_years(&vectors, 2),
    };
    if years.is_empty() {
        return Err(PipelineError::NoData("no complete fiscal year to cluster on".into()));
    }
    let processed: BTreeSet<&str> = vectors.iter().map(|v| v.account_id.as_str()).collect();
    let accounts: Vec<AccountMeta> = accounts
        .into_iter()
        .filter(|a| processed.contains(a.account_id.as_str()))
        .collect();
    let result = group_pipeline(&accounts, &vectors, &years, cfg.clustering.k_max)?;
    let path = out.join(CLUSTERS_FILE);
    write_clusters(create(&path)?, &result.assignments).map_err(csv_err(&path))?;
    let path = out.join(CLUSTER_DIAGNOSTICS_FILE);
    write_diagnostics(create(&path)?, &result.diagnostics).map_err(csv_err(&path))?;
    for (id, reason) in &result.excluded {
        warn!("account {id} not clustered: {}", reason.as_str());
    }
    info!("clustered {} accounts into {} groups on fiscal years {years:?}", result.assignments.len(), result.group_ids().len());
    Ok(result)
}

/// Outcome of the likelihood-ratio test for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAblr {
    pub group_id: String,
    pub fiscal_year: i32,
    pub history_years: Vec<i32>,
    /// `None` when the group could not be tested.
    pub result: Option<MonitorResult>,
    pub skipped: Option<String>,
    pub c_ratios: BTreeMap<String, CRatio>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub fiscal_year: i32,
    /// `account_id -> group_id` for every analysed account.
    pub groups: BTreeMap<String, String>,
    pub flags: Vec<Flag>,
    pub bands: Vec<ReferenceBand>,
    pub boxplots: Vec<BoxplotResult>,
    pub ablr: Vec<GroupAblr>,
    pub notes: Vec<String>,
}

/// 64-bit FNV-1a, used to give every group its own seed.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(seed: u64, purpose: &str, group_id: &str) -> u64 {
    let mut z = seed ^ fnv1a(format!("{purpose}:{group_id}").as_bytes());
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn file_stem(group_id: &str) -> String {
    group_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Chooses the contiguous run of history years ending just before `fy`
/// that maximizes `N * K`, counting only accounts with a complete,
/// unclamped year in each of them. Ties go to the longer history.
fn select_history(
    members: &[&str],
    shapes: &BTreeMap<(&str, i32), &FiscalYearVector>,
    fy: i32,
) -> Option<(Vec<i32>, Vec<AccountHistory>)> {
    let usable = |id: &str, year: i32| {
        shapes
            .get(&(id, year))
            .and_then(|v| v.shape.as_ref())
            .is_some_and(|s| !s.clamped.iter().any(|c| *c))
    };
    let mut best: Option<(usize, usize, i32)> = None;
    let mut start = fy - 1;
    while members.iter().any(|id| usable(id, start)) {
        let k = (fy - start) as usize;
        let n = members.iter().filter(|id| (start..fy).all(|y| usable(id, y))).count();
        if k >= 2 && n >= 2 && n * k >= 24 && best.is_none_or(|(bn, bk, _)| n * k >= bn * bk) {
            best = Some((n, k, start));
        }
        start -= 1;
    }
    let (_, _, start) = best?;
    let years: Vec<i32> = (start..fy).collect();
    let history = members
        .iter()
        .filter(|id| years.iter().all(|y| usable(id, *y)))
        .map(|id| AccountHistory {
            account_id: id.to_string(),
            years: years.iter().map(|y| shapes[&(*id, *y)].shape.as_ref().expect("usable").y).collect(),
        })
        .collect();
    Some((years, history))
}

fn run_ablr(
    cfg: &Config,
    out: &Path,
    seed: u64,
    group_id: &str,
    members: &[&str],
    shapes: &BTreeMap<(&str, i32), &FiscalYearVector>,
    fy: i32,
) -> Result<GroupAblr, PipelineError> {
    let mut report = GroupAblr {
        group_id: group_id.to_string(),
        fiscal_year: fy,
        history_years: Vec::new(),
        result: None,
        skipped: None,
        c_ratios: BTreeMap::new(),
    };
    let Some((years, history)) = select_history(members, shapes, fy) else {
        report.skipped = Some("not enough complete history (need K >= 2 and N*K >= 24)".into());
        return Ok(report);
    };
    report.history_years = years;
    let skip = |mut report: GroupAblr, e: AblrError| {
        report.skipped = Some(e.to_string());
        Ok(report)
    };
    let model: AblrModel = match fit(group_id, &history) {
        Ok(m) => m,
        Err(e) => return skip(report, e),
    };
    let spec = cfg.ablr.change_spec().map_err(|e| PipelineError::Config(format!("ablr: {e}")))?;
    let mc = cfg.ablr.monte_carlo();
    let alpha = cfg.ablr.alpha;
    let calibration_seed = derive_seed(seed, "calibrate", group_id);
    let dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&dir)?;
    let checkpoint_path = dir.join(format!("{}.json", file_stem(group_id)));
    let mut checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model,
        spec,
        monte_carlo: mc,
        alpha,
        seed: calibration_seed,
        gamma_alpha: None,
    };
    let reusable = Checkpoint::load(&checkpoint_path)
        .ok()
        .filter(|old| Checkpoint { gamma_alpha: None, ..old.clone() } == checkpoint)
        .and_then(|old| old.gamma_alpha);
    let calibration = match reusable {
        Some(gamma_alpha) => {
            info!("{group_id}: reusing calibrated gamma {gamma_alpha} from checkpoint");
            Calibration {
                gamma_alpha,
                alpha,
                q_hats: Vec::new(),
                seed: calibration_seed,
            }
        }
        None => {
            info!("{group_id}: calibrating with M={} B1={} (N={}, K={})", mc.m, mc.b1, checkpoint.model.n, checkpoint.model.k);
            match calibrate_gamma(&checkpoint.model, &checkpoint.spec, alpha, &mc, calibration_seed, None) {
                Ok(c) => c,
                Err(e) => return skip(report, e),
            }
        }
    };
    if calibration.gamma_alpha <= 0.0 {
        warn!("{group_id}: calibrated level is 0, so the test cannot reject with this history");
    }
    checkpoint.gamma_alpha = Some(calibration.gamma_alpha);
    checkpoint.save(&checkpoint_path)?;

    let model = &checkpoint.model;
    let y_new: Vec<Option<Vec12>> = model
        .account_ids
        .iter()
        .map(|id| {
            shapes
                .get(&(id.as_str(), fy))
                .and_then(|v| v.shape.as_ref())
                .map(|s| Vec12::from(s.y))
        })
        .collect();
    for (i, id) in model.account_ids.iter().enumerate() {
        if let Some(y) = &y_new[i] {
            let beta: [f64; 12] = model.beta_hat[i].into();
            let y: [f64; 12] = (*y).into();
            report.c_ratios.insert(id.clone(), empirical_c_ratio(&y, &beta, &checkpoint.spec.months_of_interest));
        }
    }
    if y_new.iter().all(Option::is_none) {
        report.skipped = Some(format!("no account has a complete fiscal year {fy}"));
        return Ok(report);
    }
    let monitor_seed = derive_seed(seed, "monitor", group_id);
    match monitor_year(model, &checkpoint.spec, &y_new, &calibration, &mc, monitor_seed) {
        Ok(r) => report.result = Some(r),
        Err(e) => return skip(report, e),
    }
    Ok(report)
}

/// Resolves the analysis group of every processed account.
pub fn analysis_groups(cfg: &Config, out: &Path, accounts: &[AccountMeta]) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut groups: BTreeMap<String, String> = match cfg.analysis.grouping {
        Grouping::ServiceGroup => accounts
            .iter()
            .map(|a| (a.account_id.clone(), a.service_group().as_str().to_string()))
            .collect(),
        Grouping::Cluster => {
            let path = out.join(CLUSTERS_FILE);
            require(&path, "cluster")?;
            read_cluster_groups(File::open(&path)?).map_err(csv_err(&path))?
        }
    };
    for (account, group) in &cfg.analysis.group_overrides {
        groups.insert(account.clone(), group.clone());
    }
    Ok(groups)
}

/// Runs the reference bands, the boxplot fences and the likelihood-ratio
/// test for every group on one fiscal year. Writes `flags.json`,
/// `bands.csv`, `boxplot.csv`, `c_ratios.csv`, `ablr.json` and one
/// checkpoint per tested group.
pub fn analyze(cfg: &Config, out: &Path, seed: u64) -> Result<AnalysisOutput, PipelineError> {
    let (_, vectors) = load_processed(cfg, out)?;
    let accounts = read_accounts(&out.join(ACCOUNTS_FILE), "ingest")?;
    let processed: BTreeSet<&str> = vectors.iter().map(|v| v.account_id.as_str()).collect();
    let groups: BTreeMap<String, String> = analysis_groups(cfg, out, &accounts)?
        .into_iter()
        .filter(|(a, _)| processed.contains(a.as_str()))
        .collect();
    let fiscal_year = match cfg.analysis.fiscal_year {
        Some(fy) => fy,
        None => *recent_complete_years(&vectors, 1)
            .first()
            .ok_or_else(|| PipelineError::NoData("no complete fiscal year".into()))?,
    };
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (account, group) in &groups {
        members.entry(group.as_str()).or_default().push(account.as_str());
    }
    let shapes: BTreeMap<(&str, i32), &FiscalYearVector> =
        vectors.iter().map(|v| ((v.account_id.as_str(), v.fiscal_year), v)).collect();

    let mut output = AnalysisOutput {
        fiscal_year,
        groups: groups.clone(),
        flags: Vec::new(),
        bands: Vec::new(),
        boxplots: Vec::new(),
        ablr: Vec::new(),
        notes: Vec::new(),
    };
    for (group_id, ids) in &members {
        let group_vectors: Vec<FiscalYearVector> = vectors
            .iter()
            .filter(|v| groups.get(&v.account_id).is_some_and(|g| g == group_id))
            .cloned()
            .collect();
        match crate::modelfree::reference_band(
            group_id,
            fiscal_year,
            &group_vectors,
            cfg.bands.quantiles(),
            cfg.bands.min_observations,
        ) {
            Ok(band) => {
                output.flags.extend(flag_band_exceedances(&group_vectors, &band).flags);
                output.bands.push(band);
            }
            Err(e) => output.notes.push(format!("{group_id}: band skipped: {e}")),
        }
        match flag_boxplot_outliers(group_id, fiscal_year, &group_vectors, cfg.boxplot.multipliers()) {
            Ok(b) => {
                output.flags.extend(b.flags.iter().cloned());
                output.boxplots.push(b);
            }
            Err(e) => output.notes.push(format!("{group_id}: boxplot skipped: {e}")),
        }
        let report = run_ablr(cfg, out, seed, group_id, ids, &shapes, fiscal_year)?;
        if let Some(reason) = &report.skipped {
            output.notes.push(format!("{group_id}: likelihood-ratio test skipped: {reason}"));
        }
        if let Some(flag) = report.result.as_ref().and_then(|r| r.to_flag(fiscal_year)) {
            output.flags.push(flag);
        }
        output.ablr.push(report);
    }
    sort_flags(&mut output.flags);
    for note in &output.notes {
        warn!("{note}");
    }
    write_analysis(out, &output)?;
    info!("fiscal year {fiscal_year}: {} flags across {} groups", output.flags.len(), members.len());
    Ok(output)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_analysis(out: &Path, output: &AnalysisOutput) -> Result<(), PipelineError> {
    write_json(&out.join(FLAGS_FILE), &output.flags)?;
    write_json(&out.join(ABLR_FILE), &output.ablr)?;

    let path = out.join(BANDS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["group_id", "fiscal_year", "m", "lo", "hi"]).map_err(csv_err(&path))?;
    for b in &output.bands {
        for m in 0..12 {
            w.write_record([
                b.group_id.clone(),
                b.fiscal_year.to_string(),
                (m + 1).to_string(),
                b.lo[m].to_string(),
                b.hi[m].to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush()?;

    let path = out.join(BOXPLOT_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "group_id",
        "fiscal_year",
        "m",
        "severity",
        "q1",
        "q3",
        "iqr",
        "lower_fence",
        "upper_fence",
        "lower_bound",
        "upper_bound",
    ])
    .map_err(csv_err(&path))?;
    for b in &output.boxplots {
        for mf in &b.months {
            for (name, f) in [("moderate", &mf.moderate), ("severe", &mf.severe)] {
                w.write_record([
                    b.group_id.clone(),
                    b.fiscal_year.to_string(),
                    mf.m.to_string(),
                    name.to_string(),
                    f.q1.to_string(),
                    f.q3.to_string(),
                    f.iqr.to_string(),
                    f.lower_fence.to_string(),
                    f.upper_fence.to_string(),
                    f.lower_bound.to_string(),
                    f.upper_bound.to_string(),
                ])
                .map_err(csv_err(&path))?;
            }
        }
    }
    w.flush()?;

    let path = out.join(C_RATIOS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["group_id", "account_id", "fiscal_year", "m", "ratio"]).map_err(csv_err(&path))?;
    for g in &output.ablr {
        for (account, c) in &g.c_ratios {
            for (m, r) in c.ratios.iter().enumerate() {
                w.write_record([
                    g.group_id.clone(),
                    account.clone(),
                    g.fiscal_year.to_string(),
                    (m + 1).to_string(),
                    r.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err(&path))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flags(path: &Path) -> Result<Vec<Flag>, PipelineError> {
    require(path, "analyze")?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn read_ablr(path: &Path) -> Result<Vec<GroupAblr>, PipelineError> {
    require(path, "analyze")?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
