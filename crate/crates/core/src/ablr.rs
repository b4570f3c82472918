//! Model-based monitoring of yearly logit-proportion vectors.
//!
//! Each account's logit vector is modelled as `y_ik = beta_i + e_ik` with
//! `e_ik ~ N(0, Sigma)` shared across the group. A new year is tested for
//! a mean shift `beta_i -> C beta_i` through the maximum over accounts of a
//! standardized linear contrast, with the decision threshold calibrated by
//! Monte Carlo over posterior draws of `(beta, Sigma)`.

use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, SMatrix, SVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::flag::{Flag, FlagMethod};
use crate::quantile::quantile;

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

/// Ratios with a historical mean logit closer to zero than this are undefined.
pub const C_RATIO_TOLERANCE: f64 = 1e-8;
/// Practical alert level for the empirical change ratio.
pub const C_RATIO_ALERT: f64 = 1.5;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sweeps after the initial composition draw. The scatter update mixes at
/// rate about 1/K per sweep, so three sweeps are close to stationary.
pub const DEFAULT_GIBBS_SWEEPS: usize = 3;

const JITTER_SCALE: f64 = 1e-8;
const CONDITION_FLOOR: f64 = 1e-10;
const JITTER_ESCALATIONS: usize = 3;
/// rng stream used by monitoring; calibration replicates use streams 0..M.
const MONITOR_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum AblrError {
    #[error("need K >= 2 years and N*K >= 24 account-years, found N={n}, K={k}")]
    InsufficientHistory { n: usize, k: usize },
    #[error("account {0} has a different number of history years")]
    RaggedHistory(String),
    #[error("covariance is singular even after jitter")]
    SingularCovariance,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("contrast for account index {0} is zero")]
    ZeroContrast(usize),
    #[error("Wishart degrees of freedom {0} too small")]
    DegreesOfFreedom(usize),
    #[error("invalid change specification: {0}")]
    InvalidChange(String),
    #[error("alpha must lie in (0, 1), found {0}")]
    InvalidAlpha(f64),
    #[error("{0} must be positive")]
    ZeroReplicates(&'static str),
    #[error("expected {expected} accounts, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no account has data for the new year")]
    NoAccounts,
}

/// Diagonal of the alternative's scaling matrix and the months used to rank
/// accounts by empirical change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub c: [f64; 12],
    /// Fiscal months (1..=12).
    pub months_of_interest: Vec<u8>,
}

impl ChangeSpec {
    pub fn new(c: [f64; 12], months_of_interest: Vec<u8>) -> Result<Self, AblrError> {
        if let Some(bad) = c.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(AblrError::InvalidChange(format!("entries must be positive, found {bad}")));
        }
        if c.iter().all(|&v| v == 1.0) {
            return Err(AblrError::InvalidChange("C equals the identity".into()));
        }
        if let Some(m) = months_of_interest.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(AblrError::InvalidChange(format!("month {m} outside 1..=12")));
        }
        Ok(Self { c, months_of_interest })
    }

    /// `magnitude` on the given fiscal months, 1 elsewhere. An empty month
    /// set falls back to January so the alternative stays distinct.
    pub fn seasonal(months: &[u8], magnitude: f64, months_of_interest: Vec<u8>) -> Result<Self, AblrError> {
        let mut c = [1.0; 12];
        let active: &[u8] = if months.is_empty() { &[7] } else { months };
        for &m in active {
            if !(1..=12).contains(&m) {
                return Err(AblrError::InvalidChange(format!("month {m} outside 1..=12")));
            }
            c[m as usize - 1] = magnitude;
        }
        Self::new(c, months_of_interest)
    }

    fn contrast(&self, beta0: &Vec12) -> Vec12 {
        Vec12::from_fn(|m, _| (self.c[m] - 1.0) * beta0[m])
    }
}

impl Default for ChangeSpec {
    /// 1.5 on November through March; ranking over October through April.
    fn default() -> Self {
        Self::seasonal(&[5, 6, 7, 8, 9], C_RATIO_ALERT, (4..=10).collect()).expect("valid default")
    }
}

/// One account's K historical logit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountHistory {
    pub account_id: String,
    pub years: Vec<[f64; 12]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblrModel {
    pub group_id: String,
    pub n: usize,
    pub k: usize,
    pub account_ids: Vec<String>,
    pub beta_hat: Vec<Vec12>,
    pub sigma_hat: Mat12,
    /// Scatter matrix at `beta_hat`; equals `N K sigma_hat`.
    pub psi: Mat12,
    /// Ridge added to the MLE covariance (0 when none was needed).
    pub jitter: f64,
}

/// Closed-form maximum likelihood estimates without the size checks of
/// [`fit`].
pub fn mle(history: &[AccountHistory]) -> Result<(Vec<Vec12>, Mat12), AblrError> {
    let k = history.first().map_or(0, |h| h.years.len());
    if history.is_empty() || k == 0 {
        return Err(AblrError::InsufficientHistory { n: history.len(), k });
    }
    if let Some(h) = history.iter().find(|h| h.years.len() != k) {
        return Err(AblrError::RaggedHistory(h.account_id.clone()));
    }
    let mut beta = Vec::with_capacity(history.len());
    let mut scatter = Mat12::zeros();
    for h in history {
        let mean = h.years.iter().map(|y| Vec12::from(*y)).sum::<Vec12>() / k as f64;
        for y in &h.years {
            let r = Vec12::from(*y) - mean;
            scatter += r * r.transpose();
        }
        beta.push(mean);
    }
    let sigma = scatter / (history.len() * k) as f64;
    Ok((beta, sigma))
}

fn well_conditioned(s: &Mat12) -> bool {
    let eig = SymmetricEigen::new(*s).eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() >= CONDITION_FLOOR * max && Cholesky::new(*s).is_some()
}

pub fn fit(group_id: &str, history: &[AccountHistory]) -> Result<AblrModel, AblrError> {
    let n = history.len();
    let k = history.first().map_or(0, |h| h.years.len());
    if k < 2 || n * k < 24 {
        return Err(AblrError::InsufficientHistory { n, k });
    }
    let (beta_hat, mut sigma) = mle(history)?;
    sigma = (sigma + sigma.transpose()) * 0.5;
    let mut jitter = 0.0;
    if !well_conditioned(&sigma) {
        let base = JITTER_SCALE * sigma.trace() / 12.0;
        let mut lambda = base;
        let mut ok = false;
        for _ in 0..=JITTER_ESCALATIONS {
            let candidate = sigma + Mat12::identity() * lambda;
            if lambda > 0.0 && well_conditioned(&candidate) {
                sigma = candidate;
                jitter = lambda;
                ok = true;
                break;
            }
            lambda *= 10.0;
        }
        if !ok {
            return Err(AblrError::SingularCovariance);
        }
    }
    Ok(AblrModel {
        group_id: group_id.to_string(),
        n,
        k,
        account_ids: history.iter().map(|h| h.account_id.clone()).collect(),
        beta_hat,
        sigma_hat: sigma,
        psi: sigma * (n * k) as f64,
        jitter,
    })
}

impl AblrModel {
    pub fn degrees_of_freedom(&self) -> usize {
        (self.n * self.k).saturating_sub(12)
    }

    pub fn account_index(&self, account_id: &str) -> Option<usize> {
        self.account_ids.iter().position(|a| a == account_id)
    }
}

fn precision_of(sigma: &Mat12) -> Result<Mat12, AblrError> {
    Cholesky::new(*sigma).map(|c| c.inverse()).ok_or(AblrError::NotPositiveDefinite)
}

/// Signed standardized contrast given the precision matrix.
pub fn z_signed_with_precision(
    y: &Vec12,
    beta0: &Vec12,
    precision: &Mat12,
    spec: &ChangeSpec,
) -> Result<f64, AblrError> {
    let d = spec.contrast(beta0);
    let w = precision * d;
    let q = d.dot(&w);
    let scale = d.norm_squared() * precision.trace() / 12.0;
    if !(q > 1e-14 * scale) || scale == 0.0 {
        return Err(AblrError::ZeroContrast(0));
    }
    Ok(w.dot(&(y - beta0)) / q.sqrt())
}

pub fn z_statistic(y: &Vec12, beta0: &Vec12, sigma: &Mat12, spec: &ChangeSpec) -> Result<f64, AblrError> {
    let p = precision_of(sigma)?;
    Ok(z_signed_with_precision(y, beta0, &p, spec)?.abs())
}

/// Largest `Z_i` over accounts with its index; ties go to the lowest index.
pub fn z_max_with_precision(
    y: &[Vec12],
    beta0: &[Vec12],
    precision: &Mat12,
    spec: &ChangeSpec,
) -> Result<(f64, usize), AblrError> {
    if y.len() != beta0.len() {
        return Err(AblrError::DimensionMismatch { expected: beta0.len(), found: y.len() });
    }
    if y.is_empty() {
        return Err(AblrError::NoAccounts);
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (yi, bi)) in y.iter().zip(beta0).enumerate() {
        let z = z_signed_with_precision(yi, bi, precision, spec)
            .map_err(|e| match e {
                AblrError::ZeroContrast(_) => AblrError::ZeroContrast(i),
                e => e,
            })?
            .abs();
        if z > best.0 {
            best = (z, i);
        }
    }
    Ok(best)
}

pub fn z_max(y: &[Vec12], beta0: &[Vec12], sigma: &Mat12, spec: &ChangeSpec) -> Result<(f64, usize), AblrError> {
    z_max_with_precision(y, beta0, &precision_of(sigma)?, spec)
}

/// `z` with `[2 Phi(z) - 1]^N = 1 - alpha`.
pub fn rejection_threshold(alpha: f64, n: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0 && n > 0);
    // 1 - (1 - alpha)^(1/N), computed without cancellation
    let tail = -((-alpha).ln_1p() / n as f64).exp_m1();
    -Normal::standard().inverse_cdf(tail / 2.0)
}

/// One posterior draw: account means and the precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub beta: Vec<Vec12>,
    pub precision: Mat12,
}

impl PosteriorDraw {
    pub fn sigma(&self) -> Mat12 {
        precision_of(&self.precision).expect("Wishart draws are positive definite")
    }
}

/// Lower-triangular `F` with `F F'` distributed Wishart(`L L'`, `df`).
fn bartlett_factor<R: Rng + ?Sized>(scale_chol: &Mat12, df: usize, rng: &mut R) -> Mat12 {
    let mut a = Mat12::zeros();
    for i in 0..12 {
        let chi = ChiSquared::new((df - i) as f64).expect("df > 11");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    scale_chol * a
}

/// Draws `(beta, Sigma)` from the posterior: `Sigma^-1 ~ W(Psi^-1, NK-12)`
/// then `beta_i | Sigma ~ N(beta_hat_i, Sigma / K)`, optionally followed
/// by Gibbs sweeps that re-evaluate `Psi` at the current `beta`.
#[derive(Debug, Clone)]
pub struct PosteriorSampler<'a> {
    model: &'a AblrModel,
    df: usize,
    psi_inv_chol: Mat12,
    gibbs_sweeps: usize,
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(model: &'a AblrModel, gibbs_sweeps: usize) -> Result<Self, AblrError> {
        let df = model.degrees_of_freedom();
        if df < 12 {
            return Err(AblrError::DegreesOfFreedom(df));
        }
        Ok(Self {
            model,
            df,
            psi_inv_chol: inverse_chol(&model.psi)?,
            gibbs_sweeps,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorDraw {
        let mut d = self.composition(&self.psi_inv_chol, rng);
        for _ in 0..self.gibbs_sweeps {
            let mut psi = self.model.psi;
            for (b, bh) in d.beta.iter().zip(&self.model.beta_hat) {
                let r = b - bh;
                psi += r * r.transpose() * self.model.k as f64;
            }
            let chol = inverse_chol(&psi).expect("scatter stays positive definite");
            d = self.composition(&chol, rng);
        }
        d
    }

    fn composition<R: Rng + ?Sized>(&self, scale_chol: &Mat12, rng: &mut R) -> PosteriorDraw {
        let f = bartlett_factor(scale_chol, self.df, rng);
        let precision = f * f.transpose();
        let s = 1.0 / (self.model.k as f64).sqrt();
        let beta = self
            .model
            .beta_hat
            .iter()
            .map(|bh| {
                let z = Vec12::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                // Sigma = F^-T F^-1, so F^-T z has covariance Sigma.
                let x = f.tr_solve_lower_triangular(&z).expect("nonzero diagonal");
                bh + x * s
            })
            .collect();
        PosteriorDraw { beta, precision }
    }
}

fn inverse_chol(m: &Mat12) -> Result<Mat12, AblrError> {
    let inv = Cholesky::new(*m).ok_or(AblrError::NotPositiveDefinite)?.inverse();
    let inv = (inv + inv.transpose()) * 0.5;
    Ok(Cholesky::new(inv).ok_or(AblrError::NotPositiveDefinite)?.l())
}

pub fn posterior_sample<R: Rng + ?Sized>(model: &AblrModel, rng: &mut R) -> Result<PosteriorDraw, AblrError> {
    Ok(PosteriorSampler::new(model, 0)?.draw(rng))
}

/// How the simulated in-control years of the calibration step are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicateSource {
    /// `y* ~ N(beta_hat, Sigma_hat)`. Ignores estimation error, so fresh
    /// in-control years look more extreme than the replicates.
    PlugIn,
    /// `y* ~ N(beta, Sigma)` with `(beta, Sigma)` a fresh posterior draw.
    #[default]
    PosteriorPredictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub m: usize,
    pub b1: usize,
    pub b2: usize,
    pub gibbs_sweeps: usize,
    pub replicate_source: ReplicateSource,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            b1: 500,
            b2: 1000,
            gibbs_sweeps: DEFAULT_GIBBS_SWEEPS,
            replicate_source: ReplicateSource::default(),
        }
    }
}

/// Fraction of posterior draws under which `Z_max(y)` stays below `threshold`.
///
/// `subset` restricts the maximum to the listed account indices.
fn non_exceedance<R: Rng + ?Sized>(
    sampler: &PosteriorSampler<'_>,
    spec: &ChangeSpec,
    y: &[(usize, Vec12)],
    threshold: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64, AblrError> {
    let mut below = 0usize;
    for _ in 0..draws {
        let d = sampler.draw(rng);
        let mut exceeded = false;
        for (i, yi) in y {
            let z = z_signed_with_precision(yi, &d.beta[*i], &d.precision, spec)
                .map_err(|_| AblrError::ZeroContrast(*i))?;
            if z.abs() >= threshold {
                exceeded = true;
                break;
            }
        }
        if !exceeded {
            below += 1;
        }
    }
    Ok(below as f64 / draws as f64)
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_alpha(alpha: f64) -> Result<(), AblrError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(AblrError::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma_alpha: f64,
    pub alpha: f64,
    /// Posterior non-exceedance fraction of each simulated in-control year.
    pub q_hats: Vec<f64>,
    pub seed: u64,
}

/// Simulates M in-control years and takes the `alpha` quantile of their
/// posterior non-exceedance fractions. Replicate `m` uses rng stream `m`
/// of `seed`, so the result does not depend on scheduling.
pub fn calibrate_gamma(
    model: &AblrModel,
    spec: &ChangeSpec,
    alpha: f64,
    mc: &MonteCarloConfig,
    seed: u64,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<Calibration, AblrError> {
    check_alpha(alpha)?;
    if mc.m == 0 {
        return Err(AblrError::ZeroReplicates("M"));
    }
    if mc.b1 == 0 {
        return Err(AblrError::ZeroReplicates("B1"));
    }
    let sampler = PosteriorSampler::new(model, mc.gibbs_sweeps)?;
    let threshold = rejection_threshold(alpha, model.n);
    let sigma_chol = Cholesky::new(model.sigma_hat).ok_or(AblrError::NotPositiveDefinite)?.l();
    let done = AtomicUsize::new(0);
    let q_hats = (0..mc.m)
        .into_par_iter()
        .map(|m| {
            let mut rng = replicate_rng(seed, m as u64);
            let y: Vec<(usize, Vec12)> = match mc.replicate_source {
                ReplicateSource::PlugIn => model
                    .beta_hat
                    .iter()
                    .enumerate()
                    .map(|(i, b)| (i, b + sigma_chol * standard_normal(&mut rng)))
                    .collect(),
                ReplicateSource::PosteriorPredictive => {
                    let d = sampler.draw(&mut rng);
                    let f = Cholesky::new(d.sigma()).expect("positive definite").l();
                    d.beta.iter().enumerate().map(|(i, b)| (i, b + f * standard_normal(&mut rng))).collect()
                }
            };
            let q = non_exceedance(&sampler, spec, &y, threshold, mc.b1, &mut rng);
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(report) = progress {
                report(finished, mc.m);
            }
            q
        })
        .collect::<Result<Vec<f64>, AblrError>>()?;
    Ok(Calibration {
        gamma_alpha: quantile(&q_hats, alpha),
        alpha,
        q_hats,
        seed,
    })
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Vec12 {
    Vec12::from_fn(|_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    InControl,
    OutOfControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub group_id: String,
    pub decision: Decision,
    pub q_hat: f64,
    pub gamma_alpha: f64,
    pub threshold: f64,
    /// `Z_i` at the point estimates, `None` for accounts without the new year.
    pub z_values: Vec<Option<f64>>,
    pub account_ids: Vec<String>,
    pub flagged_account: Option<String>,
    pub alpha: f64,
    pub m: usize,
    pub b1: usize,
    pub b2: usize,
    pub seed: u64,
}

impl MonitorResult {
    pub fn to_flag(&self, fiscal_year: i32) -> Option<Flag> {
        let account = self.flagged_account.as_ref()?;
        let i = self.account_ids.iter().position(|a| a == account)?;
        Some(Flag {
            account_id: account.clone(),
            group_id: self.group_id.clone(),
            fiscal_year,
            month: None,
            method: FlagMethod::Ablr,
            statistic: self.z_values[i].unwrap_or(f64::NAN),
            created: None,
        })
    }
}

/// Tests the new year against the calibrated level. Accounts whose new
/// year is `None` are left out and the threshold uses the remaining count.
pub fn monitor_year(
    model: &AblrModel,
    spec: &ChangeSpec,
    y_new: &[Option<Vec12>],
    calibration: &Calibration,
    mc: &MonteCarloConfig,
    seed: u64,
) -> Result<MonitorResult, AblrError> {
    check_alpha(calibration.alpha)?;
    if mc.b2 == 0 {
        return Err(AblrError::ZeroReplicates("B2"));
    }
    if y_new.len() != model.n {
        return Err(AblrError::DimensionMismatch { expected: model.n, found: y_new.len() });
    }
    let present: Vec<(usize, Vec12)> = y_new.iter().enumerate().filter_map(|(i, y)| y.map(|y| (i, y))).collect();
    if present.is_empty() {
        return Err(AblrError::NoAccounts);
    }
    let threshold = rejection_threshold(calibration.alpha, present.len());
    let sampler = PosteriorSampler::new(model, mc.gibbs_sweeps)?;
    let mut rng = replicate_rng(seed, MONITOR_STREAM);
    let q_hat = non_exceedance(&sampler, spec, &present, threshold, mc.b2, &mut rng)?;

    let precision = precision_of(&model.sigma_hat)?;
    let mut z_values = vec![None; model.n];
    let mut best: Option<(f64, usize)> = None;
    for (i, y) in &present {
        let z = z_signed_with_precision(y, &model.beta_hat[*i], &precision, spec)
            .map_err(|_| AblrError::ZeroContrast(*i))?
            .abs();
        z_values[*i] = Some(z);
        if best.is_none_or(|(b, _)| z > b) {
            best = Some((z, *i));
        }
    }
    let decision = if q_hat < calibration.gamma_alpha {
        Decision::OutOfControl
    } else {
        Decision::InControl
    };
    let flagged_account = match decision {
        Decision::OutOfControl => best.map(|(_, i)| model.account_ids[i].clone()),
        Decision::InControl => None,
    };
    Ok(MonitorResult {
        group_id: model.group_id.clone(),
        decision,
        q_hat,
        gamma_alpha: calibration.gamma_alpha,
        threshold,
        z_values,
        account_ids: model.account_ids.clone(),
        flagged_account,
        alpha: calibration.alpha,
        m: mc.m,
        b1: mc.b1,
        b2: mc.b2,
        seed,
    })
}

/// Per-month `y_new / beta_hat` with sums of squares for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CRatio {
    /// `None` where the historical mean logit is too close to zero.
    pub ratios: [Option<f64>; 12],
    pub sum_sq: f64,
    pub sum_sq_of_interest: f64,
}

pub fn empirical_c_ratio(y_new: &[f64; 12], beta_hat: &[f64; 12], months_of_interest: &[u8]) -> CRatio {
    let ratios: [Option<f64>; 12] =
        std::array::from_fn(|m| (beta_hat[m].abs() >= C_RATIO_TOLERANCE).then(|| y_new[m] / beta_hat[m]));
    let sum_sq = ratios.iter().flatten().map(|c| c * c).sum();
    let sum_sq_of_interest = months_of_interest
        .iter()
        .filter_map(|&m| ratios.get(m as usize - 1).copied().flatten())
        .map(|c| c * c)
        .sum();
    CRatio {
        ratios,
        sum_sq,
        sum_sq_of_interest,
    }
}

/// Everything needed to resume monitoring for a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: AblrModel,
    pub spec: ChangeSpec,
    pub monte_carlo: MonteCarloConfig,
    pub alpha: f64,
    pub seed: u64,
    pub gamma_alpha: Option<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let cp: Checkpoint = serde_json::from_slice(&std::fs::read(path)?).map_err(io::Error::other)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(io::Error::other(format!("unsupported checkpoint version {}", cp.version)));
        }
        Ok(cp)
    }
}
