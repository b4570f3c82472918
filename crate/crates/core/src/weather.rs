//! Daily weather retrieval with a local, append-only per-station cache.
//!
//! The cache lives at `<dir>/<station>.csv` using the same `date,tmax,tmin`
//! schema as the weather input file. Writers take an exclusive advisory lock
//! on the file; readers take a shared one.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::ingestion::{load_weather, DailyWeather, IngestError, WEATHER_HEADER};

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("weather request failed: {0}")]
    Network(String),
    #[error("weather response is missing {} day(s): {gaps:?}", gaps.len())]
    IncompleteWeather { gaps: Vec<NaiveDate> },
    #[error("invalid weather response: {0}")]
    InvalidResponse(String),
    #[error("invalid station id {0:?}")]
    InvalidStation(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("weather cache io: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-open date interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d < self.end)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Something that can produce daily weather for a station over a date range.
pub trait WeatherSource {
    fn fetch(&self, station: &str, range: DateRange) -> Result<Vec<DailyWeather>, WeatherError>;
}

/// HTTP client: `GET {endpoint}?station=..&start=..&end=..` returning a JSON
/// array of `{date, tmax, tmin}`. `end` is exclusive.
#[derive(Debug, Clone)]
pub struct HttpWeatherSource {
    endpoint: String,
}

#[derive(Deserialize)]
struct WireDay {
    date: NaiveDate,
    tmax: f64,
    tmin: f64,
}

impl HttpWeatherSource {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
        }
    }
}

impl WeatherSource for HttpWeatherSource {
    fn fetch(&self, station: &str, range: DateRange) -> Result<Vec<DailyWeather>, WeatherError> {
        let start = range.start.to_string();
        let end = range.end.to_string();
        let days: Vec<WireDay> = ureq::get(&self.endpoint)
            .query("station", station)
            .query("start", &start)
            .query("end", &end)
            .call()
            .map_err(|e| WeatherError::Network(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| WeatherError::InvalidResponse(e.to_string()))?;
        days.into_iter()
            .map(|d| {
                if d.tmax < d.tmin || !d.tmax.is_finite() || !d.tmin.is_finite() {
                    Err(WeatherError::InvalidResponse(format!(
                        "{}: tmax {} < tmin {}",
                        d.date, d.tmax, d.tmin
                    )))
                } else {
                    Ok(DailyWeather {
                        date: d.date,
                        tmax: d.tmax,
                        tmin: d.tmin,
                    })
                }
            })
            .collect()
    }
}

/// Per-station append-only weather cache.
#[derive(Debug, Clone)]
pub struct WeatherCache {
    dir: PathBuf,
}

impl WeatherCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, station: &str) -> Result<PathBuf, WeatherError> {
        let ok = !station.is_empty()
            && station
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(WeatherError::InvalidStation(station.to_string()));
        }
        Ok(self.dir.join(format!("{station}.csv")))
    }

    /// Every cached day for `station`, keyed by date.
    pub fn read(&self, station: &str) -> Result<BTreeMap<NaiveDate, DailyWeather>, WeatherError> {
        let path = self.path_for(station)?;
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let file = File::open(&path)?;
        file.lock_shared()?;
        let rows = load_weather(&file)?;
        file.unlock()?;
        Ok(rows.into_iter().map(|w| (w.date, w)).collect())
    }

    /// Appends days not already cached. Returns how many rows were written.
    pub fn append(&self, station: &str, days: &[DailyWeather]) -> Result<usize, WeatherError> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(station)?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        file.lock()?;
        let result = (|| {
            let len = file.seek(SeekFrom::End(0))?;
            let existing: BTreeMap<NaiveDate, DailyWeather> = if len == 0 {
                writeln!(file, "{}", WEATHER_HEADER.join(","))?;
                BTreeMap::new()
            } else {
                let reader = File::open(&path)?;
                load_weather(reader)?.into_iter().map(|w| (w.date, w)).collect()
            };
            let mut written = 0;
            for d in days {
                if !existing.contains_key(&d.date) {
                    writeln!(file, "{},{},{}", d.date, d.tmax, d.tmin)?;
                    written += 1;
                }
            }
            file.flush()?;
            Ok::<_, WeatherError>(written)
        })();
        file.unlock()?;
        result
    }
}

/// Returns one record per day of `range`, consulting the cache first and the
/// source only for uncached days. Fetched days are persisted to the cache.
pub fn fetch_weather(
    source: &dyn WeatherSource,
    cache: &WeatherCache,
    station: &str,
    range: DateRange,
) -> Result<Vec<DailyWeather>, WeatherError> {
    if range.is_empty() {
        return Ok(Vec::new());
    }
    let mut cached = cache.read(station)?;
    let missing: Vec<NaiveDate> = range.days().filter(|d| !cached.contains_key(d)).collect();
    if let (Some(first), Some(last)) = (missing.first(), missing.last()) {
        let request = DateRange::new(*first, last.succ_opt().expect("date overflow"));
        let fetched = source.fetch(station, request)?;
        let fetched: BTreeMap<NaiveDate, DailyWeather> = fetched
            .into_iter()
            .filter(|w| w.date >= request.start && w.date < request.end)
            .map(|w| (w.date, w))
            .collect();
        let gaps: Vec<NaiveDate> = missing
            .iter()
            .copied()
            .filter(|d| !fetched.contains_key(d))
            .collect();
        if !gaps.is_empty() {
            return Err(WeatherError::IncompleteWeather { gaps });
        }
        let fresh: Vec<DailyWeather> = fetched.values().copied().collect();
        cache.append(station, &fresh)?;
        cached.extend(fetched);
    }
    Ok(range.days().map(|d| cached[&d]).collect())
}

/// Loads a weather file from disk; the reference, offline input path.
pub fn load_weather_file(path: &Path) -> Result<Vec<DailyWeather>, WeatherError> {
    Ok(load_weather(File::open(path)?)?)
}
