//! Declarative run configuration (TOML).
//!
//! Every key has a default; an empty file is a valid configuration. Relative
//! paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablr::{ChangeSpec, MonteCarloConfig, ReplicateSource, C_RATIO_ALERT, DEFAULT_GIBBS_SWEEPS};
use crate::calendar::FISCAL_START_MONTH;
use crate::modelfree::{BandQuantiles, FenceMultipliers, MIN_BAND_OBSERVATIONS};
use crate::proportions::PROPORTION_EPSILON;

pub const DEFAULT_SEED: u64 = 20_191_001;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub inputs: Inputs,
    pub weather: WeatherConfig,
    pub calendar: CalendarConfig,
    pub proportions: ProportionsConfig,
    pub bands: BandsConfig,
    pub boxplot: BoxplotConfig,
    pub ablr: AblrConfig,
    pub analysis: AnalysisConfig,
    pub clustering: ClusteringConfig,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            inputs: Inputs::default(),
            weather: WeatherConfig::default(),
            calendar: CalendarConfig::default(),
            proportions: ProportionsConfig::default(),
            bands: BandsConfig::default(),
            boxplot: BoxplotConfig::default(),
            ablr: AblrConfig::default(),
            analysis: AnalysisConfig::default(),
            clustering: ClusteringConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub bills: PathBuf,
    pub accounts: PathBuf,
    /// Daily weather file; unused when `weather.endpoint` is set.
    pub weather: PathBuf,
    /// Flag store; defaults to `gaswatch.db` inside the output directory.
    pub store: Option<PathBuf>,
}

impl Default for Inputs {
    fn default() -> Self {
        Self {
            bills: PathBuf::from("bills.csv"),
            accounts: PathBuf::from("accounts.csv"),
            weather: PathBuf::from("weather.csv"),
            store: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherConfig {
    pub station: String,
    /// HTTP weather source; fetched days are kept in `cache_dir`.
    pub endpoint: Option<String>,
    pub cache_dir: PathBuf,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            station: "USW00014740".into(),
            endpoint: None,
            cache_dir: PathBuf::from("weather-cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    pub fiscal_start_month: u32,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        Self {
            fiscal_start_month: FISCAL_START_MONTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProportionsConfig {
    pub epsilon: f64,
}

impl Default for ProportionsConfig {
    fn default() -> Self {
        Self {
            epsilon: PROPORTION_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub min_observations: usize,
}

impl Default for BandsConfig {
    fn default() -> Self {
        let q = BandQuantiles::default();
        Self {
            lower_quantile: q.lo,
            upper_quantile: q.hi,
            min_observations: MIN_BAND_OBSERVATIONS,
        }
    }
}

impl BandsConfig {
    pub fn quantiles(&self) -> BandQuantiles {
        BandQuantiles {
            lo: self.lower_quantile,
            hi: self.upper_quantile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxplotConfig {
    pub moderate: f64,
    pub severe: f64,
}

impl Default for BoxplotConfig {
    fn default() -> Self {
        let f = FenceMultipliers::default();
        Self {
            moderate: f.moderate,
            severe: f.severe,
        }
    }
}

impl BoxplotConfig {
    pub fn multipliers(&self) -> FenceMultipliers {
        FenceMultipliers {
            moderate: self.moderate,
            severe: self.severe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblrConfig {
    pub alpha: f64,
    /// Full diagonal of C by fiscal month; overrides `change_months`.
    pub c: Option<Vec<f64>>,
    /// Fiscal months scaled by `change_magnitude` when `c` is unset.
    pub change_months: Vec<u8>,
    pub change_magnitude: f64,
    pub months_of_interest: Vec<u8>,
    pub m: usize,
    pub b1: usize,
    pub b2: usize,
    pub gibbs_sweeps: usize,
    pub replicate_source: ReplicateSource,
}

impl Default for AblrConfig {
    fn default() -> Self {
        let mc = MonteCarloConfig::default();
        let spec = ChangeSpec::default();
        Self {
            alpha: 0.05,
            c: None,
            change_months: (1..=12u8).filter(|m| spec.c[*m as usize - 1] != 1.0).collect(),
            change_magnitude: C_RATIO_ALERT,
            months_of_interest: spec.months_of_interest,
            m: mc.m,
            b1: mc.b1,
            b2: mc.b2,
            gibbs_sweeps: DEFAULT_GIBBS_SWEEPS,
            replicate_source: mc.replicate_source,
        }
    }
}

impl AblrConfig {
    pub fn change_spec(&self) -> Result<ChangeSpec, crate::ablr::AblrError> {
        match &self.c {
            Some(c) => {
                let arr: [f64; 12] = c.as_slice().try_into().map_err(|_| {
                    crate::ablr::AblrError::InvalidChange(format!("need 12 entries, found {}", c.len()))
                })?;
                ChangeSpec::new(arr, self.months_of_interest.clone())
            }
            None => ChangeSpec::seasonal(&self.change_months, self.change_magnitude, self.months_of_interest.clone()),
        }
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            m: self.m,
            b1: self.b1,
            b2: self.b2,
            gibbs_sweeps: self.gibbs_sweeps,
            replicate_source: self.replicate_source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// The three utility service groups.
    #[default]
    ServiceGroup,
    /// Groups read from the cluster stage output.
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fiscal year to monitor; the latest year with complete data by default.
    pub fiscal_year: Option<i32>,
    pub grouping: Grouping,
    /// Manual `account_id -> group_id` assignments applied after grouping.
    pub group_overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k_max: Option<usize>,
    /// Fiscal years concatenated into each profile; the last two complete
    /// years by default.
    pub years: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.inputs.bills);
        join(&mut self.inputs.accounts);
        join(&mut self.inputs.weather);
        if let Some(p) = self.inputs.store.as_mut() {
            join(p);
        }
        join(&mut self.weather.cache_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, path: &str, message: String| {
            if !ok {
                errors.push(FieldError {
                    path: path.into(),
                    message,
                });
            }
        };
        let months_ok = |ms: &[u8]| ms.iter().all(|m| (1..=12).contains(m));

        check(
            (1..=12).contains(&self.calendar.fiscal_start_month),
            "calendar.fiscal_start_month",
            format!("must be 1..=12, found {}", self.calendar.fiscal_start_month),
        );
        check(
            self.weather.station.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
                && !self.weather.station.is_empty(),
            "weather.station",
            format!("must be a non-empty alphanumeric id, found {:?}", self.weather.station),
        );
        let eps = self.proportions.epsilon;
        check(eps > 0.0 && eps < 0.5, "proportions.epsilon", format!("must be in (0, 0.5), found {eps}"));
        let (lo, hi) = (self.bands.lower_quantile, self.bands.upper_quantile);
        check((0.0..1.0).contains(&lo), "bands.lower_quantile", format!("must be in [0, 1), found {lo}"));
        check(hi > lo && hi <= 1.0, "bands.upper_quantile", format!("must be in (lower_quantile, 1], found {hi}"));
        check(self.bands.min_observations >= 1, "bands.min_observations", "must be at least 1".into());
        let (moderate, severe) = (self.boxplot.moderate, self.boxplot.severe);
        check(moderate > 0.0 && moderate.is_finite(), "boxplot.moderate", format!("must be positive, found {moderate}"));
        check(severe >= moderate && severe.is_finite(), "boxplot.severe", format!("must be at least boxplot.moderate, found {severe}"));

        let a = &self.ablr;
        check(a.alpha > 0.0 && a.alpha < 1.0, "ablr.alpha", format!("must be in (0, 1), found {}", a.alpha));
        check(a.m >= 1, "ablr.m", "must be at least 1".into());
        check(a.b1 >= 1, "ablr.b1", "must be at least 1".into());
        check(a.b2 >= 1, "ablr.b2", "must be at least 1".into());
        check(months_ok(&a.change_months), "ablr.change_months", "months must be 1..=12".into());
        check(months_ok(&a.months_of_interest), "ablr.months_of_interest", "months must be 1..=12".into());
        match &a.c {
            Some(c) => {
                check(c.len() == 12, "ablr.c", format!("needs 12 entries, found {}", c.len()));
                check(c.iter().all(|v| v.is_finite() && *v > 0.0), "ablr.c", "entries must be positive".into());
                check(c.iter().any(|v| *v != 1.0), "ablr.c", "must differ from the identity".into());
            }
            None => check(
                a.change_magnitude.is_finite() && a.change_magnitude > 0.0 && a.change_magnitude != 1.0,
                "ablr.change_magnitude",
                format!("must be positive and not 1, found {}", a.change_magnitude),
            ),
        }
        if let Some(k) = self.clustering.k_max {
            check(k >= 2, "clustering.k_max", format!("must be at least 2, found {k}"));
        }
        if let Some(years) = &self.clustering.years {
            check(!years.is_empty(), "clustering.years", "must not be empty".into());
        }
        for (account, group) in &self.analysis.group_overrides {
            check(
                !group.trim().is_empty(),
                &format!("analysis.group_overrides.{account}"),
                "group id must not be empty".into(),
            );
        }
        check(
            self.service.bind.parse::<std::net::SocketAddr>().is_ok(),
            "service.bind",
            format!("must be host:port, found {:?}", self.service.bind),
        );
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.ablr.change_spec().unwrap(), ChangeSpec::default());
        assert_eq!(cfg.ablr.monte_carlo(), MonteCarloConfig::default());
        assert_eq!(cfg.bands.quantiles(), BandQuantiles::default());
        assert_eq!(cfg.calendar.fiscal_start_month, 7);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = Config::default();
        cfg.seed = 7;
        cfg.ablr.c = Some(vec![1.0, 1.0, 1.0, 1.0, 1.5, 1.5, 1.5, 1.5, 1.5, 1.0, 1.0, 1.0]);
        cfg.ablr.replicate_source = ReplicateSource::PlugIn;
        cfg.analysis.grouping = Grouping::Cluster;
        cfg.analysis.fiscal_year = Some(2019);
        cfg.analysis.group_overrides.insert("A7".into(), "residential-2".into());
        cfg.clustering.years = Some(vec![2017, 2018]);
        cfg.inputs.store = Some("runs.db".into());
        cfg.proportions.epsilon = 1e-7;
        let text = cfg.to_toml();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn errors_name_field_paths() {
        let text = "[ablr]\nalpha = 1.5\nm = 0\n[bands]\nlower_quantile = 0.9\nupper_quantile = 0.1\n";
        let Err(ConfigError::Invalid(errs)) = Config::from_toml(text) else {
            panic!("expected validation failure");
        };
        let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["bands.upper_quantile", "ablr.alpha", "ablr.m"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_toml("[ablr]\nalpah = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn explicit_c_must_have_twelve_entries() {
        let Err(ConfigError::Invalid(errs)) = Config::from_toml("[ablr]\nc = [1.5, 1.0]\n") else {
            panic!("expected validation failure");
        };
        assert_eq!(errs[0].path, "ablr.c");
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaswatch.toml");
        std::fs::write(&path, "[inputs]\nbills = \"data/bills.csv\"\naccounts = \"/abs/accounts.csv\"\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.inputs.bills, dir.path().join("data/bills.csv"));
        assert_eq!(cfg.inputs.accounts, PathBuf::from("/abs/accounts.csv"));
    }
}
