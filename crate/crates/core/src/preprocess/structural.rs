//! Local-level plus monthly-seasonal Gaussian state-space model: Kalman
//! filter, fixed-interval smoother and maximum-likelihood variance fit.
//!
//! State: `[level, s_t, s_{t-1}, .., s_{t-10}]` with the dummy seasonal
//! constraint `s_{t+1} = -(s_t + .. + s_{t-10}) + w`. Observation:
//! `y_t = level_t + s_t + e_t`. Variances are estimated relative to the
//! observation variance, which is concentrated out of the likelihood.

use nalgebra::{SMatrix, SVector};

const STATE: usize = 12;
type Mat = SMatrix<f64, STATE, STATE>;
type Vec12 = SVector<f64, STATE>;

/// Initial state variance in standardized units; large enough to act as a
/// diffuse prior.
const DIFFUSE_VARIANCE: f64 = 1e6;
const LOG_Q_BOUNDS: (f64, f64) = (-16.0, 8.0);

/// Variance ratios (relative to the observation noise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralParams {
    pub level_ratio: f64,
    pub seasonal_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct StructuralFit {
    pub params: StructuralParams,
    pub log_likelihood: f64,
    /// Smoothed signal `level + seasonal` for every time point, in the
    /// original units.
    pub smoothed: Vec<f64>,
}

fn transition() -> Mat {
    let mut t = Mat::zeros();
    t[(0, 0)] = 1.0;
    for j in 1..STATE {
        t[(1, j)] = -1.0;
    }
    for i in 2..STATE {
        t[(i, i - 1)] = 1.0;
    }
    t
}

struct FilterOutput {
    /// Predicted states and covariances before seeing `y_t`.
    a: Vec<Vec12>,
    p: Vec<Mat>,
    v: Vec<f64>,
    f: Vec<f64>,
    /// Concentrated log-likelihood.
    loglik: f64,
}

fn filter(y: &[Option<f64>], params: StructuralParams) -> FilterOutput {
    let t_mat = transition();
    let mut q = Mat::zeros();
    q[(0, 0)] = params.level_ratio;
    q[(1, 1)] = params.seasonal_ratio;

    let n = y.len();
    let mut a = Vec12::zeros();
    let mut p = Mat::identity() * DIFFUSE_VARIANCE;
    let mut out = FilterOutput {
        a: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        v: vec![0.0; n],
        f: vec![0.0; n],
        loglik: 0.0,
    };
    let mut seen = 0usize;
    let mut sum_sq = 0.0;
    let mut sum_log_f = 0.0;
    let mut n_eff = 0usize;

    for (t, obs) in y.iter().enumerate() {
        out.a.push(a);
        out.p.push(p);
        let (a_upd, p_upd) = match obs {
            Some(yt) => {
                let m: Vec12 = p.column(0) + p.column(1);
                let f = m[0] + m[1] + 1.0;
                let v = yt - (a[0] + a[1]);
                out.v[t] = v;
                out.f[t] = f;
                seen += 1;
                if seen > STATE {
                    sum_sq += v * v / f;
                    sum_log_f += f.ln();
                    n_eff += 1;
                }
                (a + m * (v / f), p - m * m.transpose() / f)
            }
            None => (a, p),
        };
        a = t_mat * a_upd;
        p = t_mat * p_upd * t_mat.transpose() + q;
        // keep symmetric against rounding drift
        p = (p + p.transpose()) * 0.5;
    }

    out.loglik = if n_eff == 0 {
        f64::NEG_INFINITY
    } else {
        let sigma2 = (sum_sq / n_eff as f64).max(f64::MIN_POSITIVE);
        -0.5 * (n_eff as f64 * (sigma2.ln() + 1.0) + sum_log_f)
    };
    out
}

/// Smoothed `level + seasonal` via the backward state-smoothing recursion.
fn smooth(y: &[Option<f64>], fo: &FilterOutput) -> Vec<f64> {
    let n = y.len();
    let mut r = Vec12::zeros();
    let mut signal = vec![0.0; n];
    for t in (0..n).rev() {
        // r currently holds r_t; compute T' r_t
        let mut tr = Vec12::zeros();
        tr[0] = r[0];
        for j in 1..STATE - 1 {
            tr[j] = r[j + 1] - r[1];
        }
        tr[STATE - 1] = -r[1];
        let r_prev = if y[t].is_some() {
            let p = &fo.p[t];
            let m: Vec12 = p.column(0) + p.column(1);
            let f = fo.f[t];
            let coef = fo.v[t] / f - m.dot(&tr) / f;
            let mut rp = tr;
            rp[0] += coef;
            rp[1] += coef;
            rp
        } else {
            tr
        };
        let alpha = fo.a[t] + fo.p[t] * r_prev;
        signal[t] = alpha[0] + alpha[1];
        r = r_prev;
    }
    signal
}

/// Minimizes `f` with the Nelder–Mead simplex method.
fn nelder_mead<const D: usize>(
    f: impl Fn(&[f64; D]) -> f64,
    start: [f64; D],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> ([f64; D], f64) {
    let mut simplex: Vec<([f64; D], f64)> = (0..=D)
        .map(|i| {
            let mut x = start;
            if i > 0 {
                x[i - 1] += step;
            }
            (x, f(&x))
        })
        .collect();
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[D].1);
        if (worst - best).abs() <= tol * (best.abs() + tol) {
            break;
        }
        let mut centroid = [0.0; D];
        for (x, _) in &simplex[..D] {
            for k in 0..D {
                centroid[k] += x[k] / D as f64;
            }
        }
        let along = |coef: f64| {
            let mut x = [0.0; D];
            for k in 0..D {
                x[k] = centroid[k] + coef * (simplex[D].0[k] - centroid[k]);
            }
            x
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[D] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[D - 1].1 {
            simplex[D] = (xr, fr);
        } else {
            let xc = if fr < simplex[D].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < simplex[D].1.min(fr) {
                simplex[D] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for k in 0..D {
                        x[k] = x0[k] + 0.5 * (x[k] - x0[k]);
                    }
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Fits the model by maximum likelihood and returns the smoothed signal.
///
/// `y` holds `None` for missing months. Needs at least 13 observed values.
pub fn fit_and_smooth(y: &[Option<f64>]) -> Option<StructuralFit> {
    let observed: Vec<f64> = y.iter().flatten().copied().collect();
    if observed.len() <= STATE {
        return None;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / observed.len() as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z: Vec<Option<f64>> = y.iter().map(|v| v.map(|v| (v - mean) / scale)).collect();

    let to_params = |x: &[f64; 2]| StructuralParams {
        level_ratio: x[0].clamp(LOG_Q_BOUNDS.0, LOG_Q_BOUNDS.1).exp(),
        seasonal_ratio: x[1].clamp(LOG_Q_BOUNDS.0, LOG_Q_BOUNDS.1).exp(),
    };
    let objective = |x: &[f64; 2]| {
        let ll = filter(&z, to_params(x)).loglik;
        if ll.is_finite() {
            -ll
        } else {
            f64::MAX
        }
    };
    // two starts guard against the flat ridge at very small ratios
    let (x1, f1) = nelder_mead(objective, [-2.0, -4.0], 1.5, 400, 1e-10);
    let (x2, f2) = nelder_mead(objective, [-8.0, -10.0], 1.5, 400, 1e-10);
    let (x, _) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let params = to_params(&x);

    let fo = filter(&z, params);
    let smoothed = smooth(&z, &fo)
        .into_iter()
        .map(|s| s * scale + mean)
        .collect();
    Some(StructuralFit {
        params,
        log_likelihood: fo.loglik,
        smoothed,
    })
}
