//! Non-asymptotic deviation bounds and sample-size planning for bounded
//! outputs.
//!
//! When the output satisfies ||Y|| < rho almost surely, the index estimator
//! concentrates exponentially. With v_l = Sigma_{ll} / rho^2 and
//! sv = sum_l v_l, the one-sided bounds at a known index value S are
//!
//! ```text
//! P(S_N - S >= t)  <= exp(-(N/32) ([t - (S+t-1)(S+1)/(2N)] / [1+S+t+|S+t-1|] sv)^2)
//! P(S_N - S <= -t) <= exp(-(N/32) ([t + (S-t-1)(S+1)/(2N)] / [1+S-t+|S-t-1|] sv)^2)
//! ```
//!
//! the lower bound holding for t >= (1-S)(1+S)/(2N-(1+S)). Taking the worst
//! case over S in [0,1] and writing V = sv^2 gives the S-free pair
//!
//! ```text
//! P(S_N - S >= t)  <= exp(-(NV/128) (1-1/N)^2 (t/(1+t))^2)         t >= 0,
//! P(S_N - S <= -t) <= exp(-(NV/128) (t - 9/(8N))^2)        9/(8N) < t < 1,
//! ```
//!
//! whose exponents both increase in N, so the minimal sample size meeting a
//! total risk target is found by bisection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::PickFreezeSample;
use crate::numeric::pairwise_sum_by;

/// Per-component normalized variances v_l = Sigma_{ll} / rho^2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    v: Vec<f64>,
}

impl BoundInputs {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Domain("bound inputs need at least one component".into()));
        }
        for (l, &x) in v.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Domain(format!(
                    "normalized variance v[{}] = {x} must be finite and nonnegative",
                    l + 1
                )));
            }
        }
        if !(v.iter().sum::<f64>() > 0.0) {
            return Err(Error::Domain("normalized variances sum to zero".into()));
        }
        Ok(BoundInputs { v })
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// sv = sum_l v_l.
    pub fn sum(&self) -> f64 {
        pairwise_sum_by(self.v.len(), |l| self.v[l])
    }

    /// V = sv^2, the constant entering the worst-case bounds.
    pub fn worst_case_v(&self) -> f64 {
        let s = self.sum();
        s * s
    }
}

/// One evaluation of a deviation-bound pair at (t, N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationBounds {
    /// Bound on P(S_N - S >= t); defined for all t >= 0.
    pub upper: f64,
    /// Bound on P(S_N - S <= -t); None when t is below the validity
    /// threshold (or, for the worst-case pair, at or above 1).
    pub lower: Option<f64>,
    /// Smallest t for which the lower bound holds.
    pub lower_threshold: f64,
}

/// Threshold (1-S)(1+S)/(2N-(1+S)) below which the known-S lower bound does
/// not apply; infinite when the denominator is not positive.
pub fn lower_threshold(s_true: f64, n: u64) -> f64 {
    let d = 2.0 * n as f64 - (1.0 + s_true);
    if d <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 - s_true) * (1.0 + s_true) / d
    }
}

fn validate_common(t: f64, n: u64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("deviation t must be finite and nonnegative, got {t}")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    Ok(())
}

/// Deviation bounds at a known index value S.
pub fn deviation_bounds_oracle(
    s_true: f64,
    t: f64,
    n: u64,
    inputs: &BoundInputs,
) -> Result<DeviationBounds> {
    validate_common(t, n)?;
    if !(0.0..=1.0).contains(&s_true) {
        return Err(Error::Domain(format!("index value must lie in [0, 1], got {s_true}")));
    }
    let sv = inputs.sum();
    let nf = n as f64;
    let upper = {
        let num = t - (s_true + t - 1.0) * (s_true + 1.0) / (2.0 * nf);
        let den = 1.0 + s_true + t + (s_true + t - 1.0).abs();
        let g = num / den * sv;
        (-(nf / 32.0) * g * g).exp()
    };
    let threshold = lower_threshold(s_true, n);
    let lower = (t >= threshold).then(|| {
        let num = t + (s_true - t - 1.0) * (s_true + 1.0) / (2.0 * nf);
        let den = 1.0 + s_true - t + (s_true - t - 1.0).abs();
        let g = num / den * sv;
        (-(nf / 32.0) * g * g).exp()
    });
    Ok(DeviationBounds { upper, lower, lower_threshold: threshold })
}

/// S-free deviation bounds depending only on V = (sum_l v_l)^2.
pub fn worst_case_bounds(t: f64, n: u64, big_v: f64) -> Result<DeviationBounds> {
    validate_common(t, n)?;
    if !(big_v > 0.0) || !big_v.is_finite() {
        return Err(Error::Domain(format!("V must be finite and positive, got {big_v}")));
    }
    let nf = n as f64;
    let scale = nf * big_v / 128.0;
    let upper = (-scale * (1.0 - 1.0 / nf).powi(2) * (t / (1.0 + t)).powi(2)).exp();
    let threshold = 9.0 / (8.0 * nf);
    let lower =
        (t > threshold && t < 1.0).then(|| (-scale * (t - threshold).powi(2)).exp());
    Ok(DeviationBounds { upper, lower, lower_threshold: threshold })
}

/// Total worst-case risk upper + lower at (t, N); None while the lower side
/// is not yet valid.
fn total_risk(t: f64, n: u64, big_v: f64) -> Option<f64> {
    let b = worst_case_bounds(t, n, big_v).expect("arguments validated by caller");
    b.lower.map(|lo| b.upper + lo)
}

/// Upper bound on the sample sizes [`min_sample_size`] will search.
pub const MIN_N_SEARCH_CAP: u64 = 1_000_000_000_000_000;

/// Smallest N whose worst-case two-sided risk at deviation t is at most
/// alpha. Both exponents grow monotonically in N, which justifies the
/// bisection; if even [`MIN_N_SEARCH_CAP`] cannot certify the target the
/// request is reported as unattainable.
pub fn min_sample_size(t: f64, alpha: f64, big_v: f64) -> Result<u64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("deviation t must lie in (0, 1), got {t}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("risk alpha must lie in (0, 1), got {alpha}")));
    }
    if !(big_v > 0.0) || !big_v.is_finite() {
        return Err(Error::Domain(format!("V must be finite and positive, got {big_v}")));
    }
    let ok = |n: u64| total_risk(t, n, big_v).is_some_and(|r| r <= alpha);
    // n = 1 never qualifies: the lower bound needs t > 9/8.
    let mut hi = 2u64;
    while !ok(hi) {
        if hi >= MIN_N_SEARCH_CAP {
            return Err(Error::Unattainable { cap: MIN_N_SEARCH_CAP });
        }
        hi = (hi.saturating_mul(2)).min(MIN_N_SEARCH_CAP);
    }
    let mut lo = 1u64;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Normalized variance diagonal of a paired sample: v_l = Sigma_{ll}/rho^2.
/// Every output row of both replicas must satisfy ||row|| < rho strictly;
/// the first violation is reported with its 1-based row index.
pub fn estimate_v(s: &PickFreezeSample, rho: f64) -> Result<BoundInputs> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be finite and positive, got {rho}")));
    }
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    let mut norm2_y = vec![0.0; n];
    let mut norm2_yu = vec![0.0; n];
    for l in 0..k {
        for i in 0..n {
            let a = s.y()[(i, l)];
            let b = s.yu()[(i, l)];
            norm2_y[i] += a * a;
            norm2_yu[i] += b * b;
        }
    }
    for i in 0..n {
        for norm2 in [norm2_y[i], norm2_yu[i]] {
            let norm = norm2.sqrt();
            if !(norm < rho) {
                return Err(Error::InvalidRho { row: i + 1, norm, rho });
            }
        }
    }
    let v = (0..k)
        .map(|l| {
            let m = s.pooled_mean(l);
            let second = pairwise_sum_by(n, |i| {
                0.5 * (s.y()[(i, l)] * s.y()[(i, l)] + s.yu()[(i, l)] * s.yu()[(i, l)])
            }) / nf;
            (second - m * m) / (rho * rho)
        })
        .collect();
    BoundInputs::new(v)
}
