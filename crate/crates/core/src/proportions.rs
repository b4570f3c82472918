//! Fiscal-year vectors, within-year usage proportions and the per-month
//! logit transform.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::preprocess::MonthlySeries;

/// Default proportion clamp.
pub const PROPORTION_EPSILON: f64 = 1e-6;

pub const PROPORTIONS_HEADER: [&str; 7] = ["account_id", "fiscal_year", "m", "x", "p", "y", "clamped"];

#[derive(Debug, Error, PartialEq)]
pub enum ProportionError {
    #[error("fiscal year has zero total usage")]
    AllZeroYear,
    #[error("usage must be finite and non-negative, found {0}")]
    InvalidUsage(f64),
}

/// Proportions of a 12-month vector plus the bookkeeping needed to invert them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub p: [f64; 12],
    /// Months whose proportion was moved into `[eps, 1 - eps]`.
    pub clamped: [bool; 12],
    /// Yearly total of the raw vector.
    pub total: f64,
}

/// `p_m = x_m / sum(x)`, then clamped to `[eps, 1 - eps]`.
pub fn to_proportions_with(x: &[f64; 12], eps: f64) -> Result<Proportions, ProportionError> {
    if let Some(&bad) = x.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ProportionError::InvalidUsage(bad));
    }
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return Err(ProportionError::AllZeroYear);
    }
    let mut p = [0.0; 12];
    let mut clamped = [false; 12];
    for m in 0..12 {
        let raw = x[m] / total;
        let c = raw.clamp(eps, 1.0 - eps);
        clamped[m] = c != raw;
        p[m] = c;
    }
    Ok(Proportions { p, clamped, total })
}

pub fn to_proportions(x: &[f64; 12]) -> Result<Proportions, ProportionError> {
    to_proportions_with(x, PROPORTION_EPSILON)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inverse_logit(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// Element-wise `log(p / (1 - p))`; inputs must lie in (0, 1).
pub fn logit_transform(p: &[f64; 12]) -> [f64; 12] {
    p.map(logit)
}

/// Shape of a complete, non-zero fiscal year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearShape {
    pub p: [f64; 12],
    pub y: [f64; 12],
    pub clamped: [bool; 12],
    pub total: f64,
}

/// One account's fiscal year: usage by fiscal month (July = index 0 under
/// the default anchor) and, when complete, its proportion/logit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiscalYearVector {
    pub account_id: String,
    pub fiscal_year: i32,
    pub x: [Option<f64>; 12],
    pub complete: bool,
    /// `None` when incomplete or when the year's total is zero.
    pub shape: Option<YearShape>,
}

impl FiscalYearVector {
    pub fn new(account_id: impl Into<String>, fiscal_year: i32, x: [Option<f64>; 12], eps: f64) -> Self {
        let complete = x.iter().all(Option::is_some);
        let shape = if complete {
            let raw = x.map(|v| v.expect("complete"));
            to_proportions_with(&raw, eps).ok().map(|pr| YearShape {
                p: pr.p,
                y: logit_transform(&pr.p),
                clamped: pr.clamped,
                total: pr.total,
            })
        } else {
            None
        };
        Self {
            account_id: account_id.into(),
            fiscal_year,
            x,
            complete,
            shape,
        }
    }

    /// Raw usage as a full array; only for complete vectors.
    pub fn values(&self) -> Option<[f64; 12]> {
        self.complete.then(|| self.x.map(|v| v.expect("complete")))
    }

    pub fn is_all_zero(&self) -> bool {
        self.complete && self.x.iter().all(|v| *v == Some(0.0))
    }
}

/// Splits a series into fiscal-year vectors (one per fiscal year touched).
pub fn fiscal_year_slices(s: &MonthlySeries, start_month: u32, eps: f64) -> Vec<FiscalYearVector> {
    let mut years: BTreeMap<i32, [Option<f64>; 12]> = BTreeMap::new();
    for point in &s.points {
        let fy = point.month.fiscal_year(start_month);
        let idx = point.month.fiscal_index(start_month) - 1;
        years.entry(fy).or_insert([None; 12])[idx] = point.value;
    }
    years
        .into_iter()
        .map(|(fy, x)| FiscalYearVector::new(s.account_id.clone(), fy, x, eps))
        .collect()
}

/// Month of fiscal position `m` (1-based) for display.
pub fn fiscal_month(fiscal_year: i32, m: usize, start_month: u32) -> YearMonth {
    YearMonth::from_fiscal(fiscal_year, m, start_month)
}

/// Writes `account_id,fiscal_year,m,x,p,y,clamped`; p/y are empty for
/// incomplete or all-zero years, x is empty for missing months.
pub fn write_proportions(sink: impl Write, vectors: &[FiscalYearVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PROPORTIONS_HEADER)?;
    for v in vectors {
        for m in 0..12 {
            let (p, y, c) = match &v.shape {
                Some(s) => (s.p[m].to_string(), s.y[m].to_string(), s.clamped[m].to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                v.account_id.clone(),
                v.fiscal_year.to_string(),
                (m + 1).to_string(),
                v.x[m].map(|x| x.to_string()).unwrap_or_default(),
                p,
                y,
                c,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::FISCAL_START_MONTH;
    use crate::preprocess::{MonthlyPoint, Provenance, Unit};
    use proptest::prelude::*;

    #[test]
    fn constant_vector_is_uniform() {
        let pr = to_proportions(&[3.0; 12]).unwrap();
        for p in pr.p {
            assert!((p - 1.0 / 12.0).abs() < 1e-15);
        }
        assert!(pr.clamped.iter().all(|c| !c));
    }

    #[test]
    fn single_month_is_clamped() {
        let mut x = [0.0; 12];
        x[0] = 12.0;
        let pr = to_proportions(&x).unwrap();
        assert_eq!(pr.p[0], 1.0 - PROPORTION_EPSILON);
        assert!(pr.p[1..].iter().all(|&p| p == PROPORTION_EPSILON));
        assert!(pr.clamped.iter().all(|&c| c));
    }

    #[test]
    fn ramp_vector() {
        let x: [f64; 12] = std::array::from_fn(|i| (i + 1) as f64);
        let pr = to_proportions(&x).unwrap();
        for (i, p) in pr.p.iter().enumerate() {
            assert!((p - (i + 1) as f64 / 78.0).abs() < 1e-15);
        }
        assert_eq!(pr.total, 78.0);
    }

    #[test]
    fn all_zero_year_is_an_error() {
        assert_eq!(to_proportions(&[0.0; 12]), Err(ProportionError::AllZeroYear));
        let mut x = [1.0; 12];
        x[4] = -1.0;
        assert_eq!(to_proportions(&x), Err(ProportionError::InvalidUsage(-1.0)));
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5), 0.0);
        assert!((logit(1.0 / 12.0) - (1.0f64 / 11.0).ln()).abs() < 1e-15);
        assert!((logit(1.0 / 12.0) + 2.3979).abs() < 1e-4);
    }

    fn series_from(start: YearMonth, n: usize) -> MonthlySeries {
        MonthlySeries {
            account_id: "A".into(),
            unit: Unit::DdAdjusted,
            points: (0..n)
                .map(|i| MonthlyPoint {
                    month: start.add_months(i as i64),
                    value: Some(1.0 + i as f64),
                    provenance: Provenance::Observed,
                })
                .collect(),
        }
    }

    #[test]
    fn exact_tiling_gives_two_complete_years() {
        let s = series_from(YearMonth::new(2016, 7).unwrap(), 24);
        let v = fiscal_year_slices(&s, FISCAL_START_MONTH, PROPORTION_EPSILON);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|y| y.complete && y.shape.is_some()));
        assert_eq!((v[0].fiscal_year, v[1].fiscal_year), (2016, 2017));
        assert_eq!(v[1].x[0], Some(13.0));
    }

    #[test]
    fn mid_year_start_is_incomplete() {
        let s = series_from(YearMonth::new(2007, 2).unwrap(), 17);
        let v = fiscal_year_slices(&s, FISCAL_START_MONTH, PROPORTION_EPSILON);
        assert_eq!(v[0].fiscal_year, 2006);
        assert!(!v[0].complete);
        assert!(v[0].shape.is_none());
        assert!(v[1].complete);
        let eleven = series_from(YearMonth::new(2007, 7).unwrap(), 11);
        assert!(!fiscal_year_slices(&eleven, FISCAL_START_MONTH, PROPORTION_EPSILON)[0].complete);
    }

    fn arb_year() -> impl Strategy<Value = [f64; 12]> {
        prop::array::uniform12(0.0f64..100.0).prop_filter("non-zero", |x| x.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn proportions_are_scale_invariant(x in arb_year(), c in 1e-3f64..1e3) {
            let a = to_proportions(&x).unwrap();
            let b = to_proportions(&x.map(|v| v * c)).unwrap();
            for m in 0..12 {
                prop_assert!((a.p[m] - b.p[m]).abs() <= 1e-12);
            }
        }

        #[test]
        fn unclamped_proportions_sum_to_one(x in prop::array::uniform12(0.1f64..100.0)) {
            let pr = to_proportions(&x).unwrap();
            prop_assert!((pr.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn reconstruction_from_total(x in prop::array::uniform12(0.1f64..100.0)) {
            let pr = to_proportions(&x).unwrap();
            for m in 0..12 {
                let back = pr.p[m] * pr.total;
                prop_assert!((back - x[m]).abs() <= 1e-9 * x[m]);
            }
        }

        #[test]
        fn logit_round_trip_and_monotone(p in 1e-6f64..(1.0 - 1e-6), q in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!((inverse_logit(logit(p)) - p).abs() <= 1e-12);
            if p < q {
                prop_assert!(logit(p) < logit(q));
            }
            // odd around one half
            prop_assert!((logit(p) + logit(1.0 - p)).abs() <= 1e-9 * logit(p).abs().max(1.0));
        }
    }
}
