//! Group-relative detectors that need no model: two-year moving quantile
//! bands on adjusted usage, and Tukey fences on per-month logit proportions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flag::{sort_flags, Flag, FlagMethod};
use crate::proportions::FiscalYearVector;
use crate::quantile::{quantile_sorted, sorted_copy};

/// Pooled observations required per month for a reference band.
pub const MIN_BAND_OBSERVATIONS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelFreeError {
    #[error("fiscal month {month} has {count} observations in the window, need {needed}")]
    InsufficientHistory { month: usize, count: usize, needed: usize },
    #[error("need at least 4 values for fences, found {0}")]
    TooFewValues(usize),
    #[error("need at least 4 complete accounts, found {0}")]
    TooFewAccounts(usize),
}

/// Lower and upper reference curves for one group and fiscal year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBand {
    pub group_id: String,
    pub fiscal_year: i32,
    pub lo: [f64; 12],
    pub hi: [f64; 12],
    /// The two fiscal years pooled to build the band.
    pub window: (i32, i32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandQuantiles {
    pub lo: f64,
    pub hi: f64,
}

impl Default for BandQuantiles {
    fn default() -> Self {
        Self { lo: 0.025, hi: 0.975 }
    }
}

/// Pools the group's usage from the two fiscal years before `fiscal_year`
/// and takes per-month quantiles.
pub fn reference_band(
    group_id: &str,
    fiscal_year: i32,
    history: &[FiscalYearVector],
    quantiles: BandQuantiles,
    min_observations: usize,
) -> Result<ReferenceBand, ModelFreeError> {
    let window = (fiscal_year - 2, fiscal_year - 1);
    let mut lo = [0.0; 12];
    let mut hi = [0.0; 12];
    for m in 0..12 {
        let pooled: Vec<f64> = history
            .iter()
            .filter(|v| v.fiscal_year == window.0 || v.fiscal_year == window.1)
            .filter_map(|v| v.x[m])
            .collect();
        if pooled.len() < min_observations.max(1) {
            return Err(ModelFreeError::InsufficientHistory {
                month: m + 1,
                count: pooled.len(),
                needed: min_observations.max(1),
            });
        }
        let sorted = sorted_copy(&pooled);
        lo[m] = quantile_sorted(&sorted, quantiles.lo);
        hi[m] = quantile_sorted(&sorted, quantiles.hi);
    }
    Ok(ReferenceBand {
        group_id: group_id.to_string(),
        fiscal_year,
        lo,
        hi,
        window,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandExceedances {
    pub flags: Vec<Flag>,
    pub counts_above: [u32; 12],
    pub counts_below: [u32; 12],
}

/// Flags every (account, month) of the band's fiscal year outside `[lo, hi]`.
pub fn flag_band_exceedances(year: &[FiscalYearVector], band: &ReferenceBand) -> BandExceedances {
    let mut flags = Vec::new();
    let mut counts_above = [0u32; 12];
    let mut counts_below = [0u32; 12];
    for v in year.iter().filter(|v| v.fiscal_year == band.fiscal_year) {
        for m in 0..12 {
            let Some(x) = v.x[m] else { continue };
            let method = if x > band.hi[m] {
                counts_above[m] += 1;
                FlagMethod::BandAbove
            } else if x < band.lo[m] {
                counts_below[m] += 1;
                FlagMethod::BandBelow
            } else {
                continue;
            };
            flags.push(Flag {
                account_id: v.account_id.clone(),
                group_id: band.group_id.clone(),
                fiscal_year: band.fiscal_year,
                month: Some(m as u8 + 1),
                method,
                statistic: x,
                created: None,
            });
        }
    }
    sort_flags(&mut flags);
    BandExceedances {
        flags,
        counts_above,
        counts_below,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Moderate,
    Severe,
}

/// IQR multipliers for the two fence levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FenceMultipliers {
    pub moderate: f64,
    pub severe: f64,
}

impl Default for FenceMultipliers {
    fn default() -> Self {
        Self {
            moderate: 1.5,
            severe: 3.0,
        }
    }
}

impl FenceMultipliers {
    pub fn for_severity(&self, severity: Severity) -> f64 {
        match severity {
            Severity::Moderate => self.moderate,
            Severity::Severe => self.severe,
        }
    }
}

/// Boxplot fences and the observed values they snap to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TukeyFences {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Smallest observed value at or above the lower fence.
    pub lower_bound: f64,
    /// Largest observed value at or below the upper fence.
    pub upper_bound: f64,
    pub severity: Severity,
}

impl TukeyFences {
    pub fn is_outlier(&self, value: f64) -> bool {
        value < self.lower_bound || value > self.upper_bound
    }
}

pub fn tukey_fences(values: &[f64], severity: Severity) -> Result<TukeyFences, ModelFreeError> {
    tukey_fences_with(values, severity, FenceMultipliers::default().for_severity(severity))
}

pub fn tukey_fences_with(values: &[f64], severity: Severity, multiplier: f64) -> Result<TukeyFences, ModelFreeError> {
    if values.len() < 4 {
        return Err(ModelFreeError::TooFewValues(values.len()));
    }
    let sorted = sorted_copy(values);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - multiplier * iqr;
    let upper_fence = q3 + multiplier * iqr;
    // Q1 and Q3 lie inside the sample range, so both searches succeed.
    let lower_bound = *sorted.iter().find(|&&v| v >= lower_fence).expect("q1 >= min");
    let upper_bound = *sorted.iter().rev().find(|&&v| v <= upper_fence).expect("q3 <= max");
    Ok(TukeyFences {
        q1,
        q3,
        iqr,
        lower_fence,
        upper_fence,
        lower_bound,
        upper_bound,
        severity,
    })
}

/// Both fence levels for one fiscal month of a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthFences {
    pub m: u8,
    pub moderate: TukeyFences,
    pub severe: TukeyFences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotResult {
    pub group_id: String,
    pub fiscal_year: i32,
    pub months: Vec<MonthFences>,
    pub flags: Vec<Flag>,
}

/// Per-month boxplot outliers on the logit proportions of one fiscal year.
///
/// Clamped logits are left out of the fence computation (as long as four
/// unclamped values remain) but can still be flagged.
pub fn flag_boxplot_outliers(
    group_id: &str,
    fiscal_year: i32,
    group: &[FiscalYearVector],
    multipliers: FenceMultipliers,
) -> Result<BoxplotResult, ModelFreeError> {
    let members: Vec<(&str, &crate::proportions::YearShape)> = group
        .iter()
        .filter(|v| v.fiscal_year == fiscal_year)
        .filter_map(|v| v.shape.as_ref().map(|s| (v.account_id.as_str(), s)))
        .collect();
    if members.len() < 4 {
        return Err(ModelFreeError::TooFewAccounts(members.len()));
    }
    let mut months = Vec::with_capacity(12);
    let mut flags = Vec::new();
    for m in 0..12 {
        let unclamped: Vec<f64> = members.iter().filter(|(_, s)| !s.clamped[m]).map(|(_, s)| s.y[m]).collect();
        let basis: Vec<f64> = if unclamped.len() >= 4 {
            unclamped
        } else {
            members.iter().map(|(_, s)| s.y[m]).collect()
        };
        let moderate = tukey_fences_with(&basis, Severity::Moderate, multipliers.moderate)?;
        let severe = tukey_fences_with(&basis, Severity::Severe, multipliers.severe)?;
        for (account_id, s) in &members {
            let y = s.y[m];
            let method = if severe.is_outlier(y) {
                FlagMethod::BoxplotSevere
            } else if moderate.is_outlier(y) {
                FlagMethod::BoxplotModerate
            } else {
                continue;
            };
            flags.push(Flag {
                account_id: account_id.to_string(),
                group_id: group_id.to_string(),
                fiscal_year,
                month: Some(m as u8 + 1),
                method,
                statistic: y,
                created: None,
            });
        }
        months.push(MonthFences {
            m: m as u8 + 1,
            moderate,
            severe,
        });
    }
    sort_flags(&mut flags);
    Ok(BoxplotResult {
        group_id: group_id.to_string(),
        fiscal_year,
        months,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proportions::PROPORTION_EPSILON;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn vector(id: &str, fy: i32, x: [f64; 12]) -> FiscalYearVector {
        FiscalYearVector::new(id, fy, x.map(Some), PROPORTION_EPSILON)
    }

    /// Brute force: sort, interpolate by hand, scan for bounds.
    fn oracle(values: &[f64], k: f64) -> (f64, f64, f64, f64) {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let h = (s.len() - 1) as f64 * p;
            let i = h as usize;
            if i + 1 < s.len() { s[i] * (1.0 - (h - i as f64)) + s[i + 1] * (h - i as f64) } else { s[i] }
        };
        let (q1, q3) = (q(0.25), q(0.75));
        let (lf, uf) = (q1 - k * (q3 - q1), q3 + k * (q3 - q1));
        let mut lb = f64::INFINITY;
        let mut ub = f64::NEG_INFINITY;
        for &v in values {
            if v >= lf && v < lb {
                lb = v;
            }
            if v <= uf && v > ub {
                ub = v;
            }
        }
        (lf, uf, lb, ub)
    }

    #[test]
    fn fences_of_one_to_five() {
        let f = tukey_fences(&[1.0, 2.0, 3.0, 4.0, 5.0], Severity::Moderate).unwrap();
        assert_eq!((f.q1, f.q3, f.iqr), (2.0, 4.0, 2.0));
        assert_eq!((f.lower_fence, f.upper_fence), (-1.0, 7.0));
        assert_eq!((f.lower_bound, f.upper_bound), (1.0, 5.0));
        let s = tukey_fences(&[1.0, 2.0, 3.0, 4.0, 5.0], Severity::Severe).unwrap();
        assert_eq!((s.lower_fence, s.upper_fence), (-4.0, 10.0));
    }

    #[test]
    fn constant_values_have_no_outliers() {
        let f = tukey_fences(&[2.5; 9], Severity::Moderate).unwrap();
        assert_eq!(f.iqr, 0.0);
        assert_eq!((f.lower_fence, f.upper_fence, f.lower_bound, f.upper_bound), (2.5, 2.5, 2.5, 2.5));
        assert!(!f.is_outlier(2.5));
    }

    #[test]
    fn hundred_is_flagged() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let f = tukey_fences(&v, Severity::Moderate).unwrap();
        let (lf, uf, lb, ub) = oracle(&v, 1.5);
        assert_eq!((f.lower_fence, f.upper_fence, f.lower_bound, f.upper_bound), (lf, uf, lb, ub));
        assert!(f.is_outlier(100.0));
        assert!(!f.is_outlier(9.0));
        assert_eq!(tukey_fences(&[1.0, 2.0, 3.0], Severity::Moderate), Err(ModelFreeError::TooFewValues(3)));
    }

    #[test]
    fn band_of_identical_values_collapses() {
        let hist: Vec<_> = (0..10).map(|i| vector(&format!("A{i}"), 2015 + (i % 2), [4.0; 12])).collect();
        let band = reference_band("g", 2017, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS).unwrap();
        assert_eq!(band.lo, [4.0; 12]);
        assert_eq!(band.hi, [4.0; 12]);
        assert_eq!(band.window, (2015, 2016));
    }

    #[test]
    fn band_of_one_to_hundred() {
        let hist: Vec<_> = (1..=100)
            .map(|i| vector(&format!("A{i}"), if i <= 50 { 2015 } else { 2016 }, [i as f64; 12]))
            .collect();
        let band = reference_band("g", 2017, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS).unwrap();
        for m in 0..12 {
            assert!((band.lo[m] - 3.475).abs() < 1e-12);
            assert!((band.hi[m] - 97.525).abs() < 1e-12);
        }
        // years outside the window are ignored
        let later = reference_band("g", 2018, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS).unwrap();
        assert_eq!(later.lo[0], 51.0 + 49.0 * 0.025);
        assert!(reference_band("g", 2019, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS).is_err());
    }

    #[test]
    fn band_with_missing_month_is_insufficient() {
        let hist: Vec<_> = (0..10)
            .map(|i| {
                let mut x = [Some(1.0); 12];
                x[3] = None;
                FiscalYearVector::new(format!("A{i}"), 2015, x, PROPORTION_EPSILON)
            })
            .collect();
        assert_eq!(
            reference_band("g", 2017, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS),
            Err(ModelFreeError::InsufficientHistory { month: 4, count: 0, needed: 8 })
        );
    }

    #[test]
    fn band_exceedance_counts() {
        let band = ReferenceBand { group_id: "g".into(), fiscal_year: 2017, lo: [1.0; 12], hi: [2.0; 12], window: (2015, 2016) };
        let inside: Vec<_> = (0..5).map(|i| vector(&format!("A{i}"), 2017, [1.5; 12])).collect();
        let r = flag_band_exceedances(&inside, &band);
        assert!(r.flags.is_empty());
        assert_eq!(r.counts_above, [0; 12]);
        let mut x = [1.5; 12];
        x[2] = 2.0 + 1e-9;
        let mut year = inside.clone();
        year.push(vector("Z", 2017, x));
        let r = flag_band_exceedances(&year, &band);
        assert_eq!(r.flags.len(), 1);
        assert_eq!(r.flags[0].method, FlagMethod::BandAbove);
        assert_eq!(r.flags[0].month, Some(3));
        assert_eq!(r.counts_above[2], 1);
        assert_eq!(r.counts_below, [0; 12]);
    }

    fn winter_shape(m: usize) -> f64 {
        // peaks in January (fiscal month 7)
        1.0 + 0.8 * (2.0 * std::f64::consts::PI * (m as f64 - 6.0) / 12.0).cos()
    }

    #[test]
    fn elevated_account_flagged_every_winter_month() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut make = |id: String, fy: i32, level: f64| {
            let x: [f64; 12] = std::array::from_fn(|m| level * winter_shape(m) * rng.random_range(0.9..1.1));
            vector(&id, fy, x)
        };
        let mut hist = Vec::new();
        for fy in [2015, 2016] {
            for i in 0..40 {
                hist.push(make(format!("A{i:02}"), fy, 1.0));
            }
        }
        let band = reference_band("g", 2017, &hist, BandQuantiles::default(), MIN_BAND_OBSERVATIONS).unwrap();
        let mut year: Vec<_> = (0..40).map(|i| make(format!("A{i:02}"), 2017, 1.0)).collect();
        year.push(make("HOT".into(), 2017, 2.0));
        let r = flag_band_exceedances(&year, &band);
        let hot: Vec<u8> = r.flags.iter().filter(|f| f.account_id == "HOT").filter_map(|f| f.month).collect();
        // Nov..Mar
        for m in 5..=9 {
            assert!(hot.contains(&m), "month {m} not flagged: {hot:?}");
        }
    }

    #[test]
    fn normal_logits_match_boxplot_rate() {
        // Normal theory: P(outside Q1-1.5IQR, Q3+1.5IQR) = 2 * Phi(-2.698) = 0.00698
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let f = tukey_fences(&values, Severity::Moderate).unwrap();
        let above = values.iter().filter(|&&v| v > f.upper_bound).count() as f64 / n as f64;
        let below = values.iter().filter(|&&v| v < f.lower_bound).count() as f64 / n as f64;
        let se = (0.0035f64 * 0.9965 / n as f64).sqrt();
        assert!((above - 0.00349).abs() < 4.0 * se, "above {above}");
        assert!((below - 0.00349).abs() < 4.0 * se, "below {below}");
        assert!((above + below - 0.00698).abs() < 0.003);
    }

    /// Residential-like group with uniform noise (no fence outliers) plus
    /// two planted accounts: high October / low winter, and low November.
    fn planted_group(rng: &mut ChaCha8Rng, scale: f64) -> Vec<FiscalYearVector> {
        let mut out = Vec::new();
        for i in 0..68 {
            let x: [f64; 12] = std::array::from_fn(|m| scale * winter_shape(m) * rng.random_range(0.93..1.07));
            out.push(vector(&format!("R{i:02}"), 2017, x));
        }
        let mut a: [f64; 12] = std::array::from_fn(|m| scale * winter_shape(m));
        a[3] *= 4.0;
        for m in 5..10 {
            a[m] *= 0.8;
        }
        out.push(vector("ACCT1", 2017, a));
        let mut b: [f64; 12] = std::array::from_fn(|m| scale * winter_shape(m));
        b[4] *= 0.25;
        out.push(vector("ACCT2", 2017, b));
        out
    }

    #[test]
    fn planted_outliers_are_exactly_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2017);
        let group = planted_group(&mut rng, 1.0);
        let r = flag_boxplot_outliers("res", 2017, &group, FenceMultipliers::default()).unwrap();
        let mut accounts: Vec<&str> = r.flags.iter().map(|f| f.account_id.as_str()).collect();
        accounts.dedup();
        assert_eq!(accounts, ["ACCT1", "ACCT2"]);
        assert!(r.flags.iter().any(|f| f.account_id == "ACCT1" && f.month == Some(4)));
        assert!(r.flags.iter().any(|f| f.account_id == "ACCT2" && f.month == Some(5)));
        assert_eq!(r.months.len(), 12);
    }

    #[test]
    fn shifted_october_is_severe() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut group: Vec<_> = (0..30)
            .map(|i| {
                let x: [f64; 12] = std::array::from_fn(|m| winter_shape(m) * rng.random_range(0.9..1.1));
                vector(&format!("A{i:02}"), 2017, x)
            })
            .collect();
        let base = flag_boxplot_outliers("g", 2017, &group, FenceMultipliers::default()).unwrap();
        let oct = base.months[3].moderate;
        // copy A00 and push its October logit up by 6 IQR
        let src = group[0].values().unwrap();
        let target_y = group[0].shape.unwrap().y[3] + 6.0 * oct.iqr;
        let mut x = src;
        let others: f64 = src.iter().sum::<f64>() - src[3];
        let p = crate::proportions::inverse_logit(target_y);
        x[3] = p * others / (1.0 - p);
        group.push(vector("COPY", 2017, x));
        let r = flag_boxplot_outliers("g", 2017, &group, FenceMultipliers::default()).unwrap();
        assert!(r.flags.iter().any(|f| f.account_id == "COPY" && f.month == Some(4) && f.method == FlagMethod::BoxplotSevere));
    }

    #[test]
    fn boxplot_needs_four_accounts() {
        let group: Vec<_> = (0..3).map(|i| vector(&format!("A{i}"), 2017, [1.0; 12])).collect();
        assert_eq!(
            flag_boxplot_outliers("g", 2017, &group, FenceMultipliers::default()).unwrap_err(),
            ModelFreeError::TooFewAccounts(3)
        );
    }

    #[test]
    fn boxplot_flags_invariant_under_rescaling_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let group = planted_group(&mut rng, 1.0);
        let base = flag_boxplot_outliers("g", 2017, &group, FenceMultipliers::default()).unwrap();
        let scaled: Vec<_> = group.iter().map(|v| vector(&v.account_id, 2017, v.values().unwrap().map(|x| 3.0 * x))).collect();
        let r = flag_boxplot_outliers("g", 2017, &scaled, FenceMultipliers::default()).unwrap();
        let key = |fl: &[Flag]| fl.iter().map(|f| (f.account_id.clone(), f.month, f.method)).collect::<Vec<_>>();
        assert_eq!(key(&base.flags), key(&r.flags));
        let mut rev = group.clone();
        rev.reverse();
        let r = flag_boxplot_outliers("g", 2017, &rev, FenceMultipliers::default()).unwrap();
        assert_eq!(key(&base.flags), key(&r.flags));
        assert_eq!(base.months, r.months);
    }

    #[test]
    fn enlarging_a_month_moves_severity_directionally() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let group: Vec<_> = (0..30)
            .map(|i| {
                let x: [f64; 12] = std::array::from_fn(|m| winter_shape(m) * rng.random_range(0.9..1.1));
                vector(&format!("A{i:02}"), 2017, x)
            })
            .collect();
        let level = |flags: &[Flag], acct: &str, m: u8, upper: bool, ys: &FiscalYearVector, med: f64| {
            let f = flags.iter().find(|f| f.account_id == acct && f.month == Some(m));
            let side = ys.shape.unwrap().y[m as usize - 1] > med;
            match f {
                Some(f) if side == upper => if f.method == FlagMethod::BoxplotSevere { 2 } else { 1 },
                _ => 0,
            }
        };
        let mut prev_up = 0;
        let mut prev_other = [i32::MAX; 12];
        for factor in [1.0, 1.5, 2.5, 4.0, 8.0, 16.0] {
            let mut g = group.clone();
            let mut x = g[0].values().unwrap();
            x[3] *= factor;
            g[0] = vector("A00", 2017, x);
            let r = flag_boxplot_outliers("g", 2017, &g, FenceMultipliers::default()).unwrap();
            let med: Vec<f64> = (0..12).map(|m| crate::quantile::quantile(&g.iter().map(|v| v.shape.unwrap().y[m]).collect::<Vec<_>>(), 0.5)).collect();
            let up = level(&r.flags, "A00", 4, true, &g[0], med[3]);
            assert!(up >= prev_up);
            prev_up = up;
            for m in (1..=12u8).filter(|&m| m != 4) {
                let l = level(&r.flags, "A00", m, true, &g[0], med[m as usize - 1]);
                assert!(l <= prev_other[m as usize - 1]);
                prev_other[m as usize - 1] = l;
            }
        }
        assert_eq!(prev_up, 2);
    }

    proptest! {
        #[test]
        fn fences_match_oracle(values in prop::collection::vec(-50.0f64..50.0, 4..200)) {
            for (sev, k) in [(Severity::Moderate, 1.5), (Severity::Severe, 3.0)] {
                let f = tukey_fences(&values, sev).unwrap();
                let (lf, uf, lb, ub) = oracle(&values, k);
                prop_assert!((f.lower_fence - lf).abs() <= 1e-9 && (f.upper_fence - uf).abs() <= 1e-9);
                prop_assert_eq!((f.lower_bound, f.upper_bound), (lb, ub));
                prop_assert!(f.lower_bound >= f.lower_fence && f.upper_bound <= f.upper_fence);
            }
        }

        #[test]
        fn band_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hist: Vec<_> = (0..20).map(|i| {
                let x: [f64; 12] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
                vector(&format!("A{i}"), 2015 + (i % 2) as i32, x)
            }).collect();
            let mut shuffled = hist.clone();
            shuffled.reverse();
            shuffled.swap(0, 7);
            let a = reference_band("g", 2017, &hist, BandQuantiles::default(), 8).unwrap();
            let b = reference_band("g", 2017, &shuffled, BandQuantiles::default(), 8).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
