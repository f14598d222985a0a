//! Plug-in asymptotic variance, confidence intervals and coverage
//! experiments for the trace index.
//!
//! With m_l the pooled mean of component l, define per row
//!
//! ```text
//! U_{i,l} = (Y_{i,l} - m_l)(Y^u_{i,l} - m_l),
//! V_{i,l} = (Y_{i,l} - m_l)^2 + (Y^u_{i,l} - m_l)^2,
//! ```
//!
//! and the scalars a = 1/Tr(Sigma_N), b = -(a/2) S_N. The normalized
//! estimator sqrt(N) (S_N - S^u) is asymptotically Gaussian with variance
//!
//! ```text
//! sigma^2 = a^2 sum Cov(U_l, U_l') + b^2 sum Cov(V_l, V_l')
//!         + 2ab sum Cov(U_l, V_l'),
//! ```
//!
//! all sums running over pairs of components. Summing U and V over l per
//! row first gives the same value in O(Nk) time; the full moment matrices
//! are kept available for diagnostics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{DesignConfig, SubsetU};
use crate::error::{Error, Result};
use crate::estimators::{estimate_closure, estimate_index, PickFreezeSample};
use crate::models::{InputCase, ModelSpec};
use crate::numeric::{normal_quantile, pairwise_sum, pairwise_sum_by};
use crate::rng::{derive_key, stream_rng};

/// Moment matrices and scalars behind one plug-in variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CltDiagnostics {
    pub n: usize,
    pub k: usize,
    /// Index estimate S_N the scalars were computed at.
    pub index: f64,
    /// a = 1/Tr(Sigma_N); always positive on non-degenerate samples.
    pub a_hat: f64,
    /// b = -(a/2) S_N.
    pub b_hat: f64,
    /// cov_uu[(l, l')] = Cov_N(U_l, U_l').
    pub cov_uu: DMatrix<f64>,
    /// cov_vv[(l, l')] = Cov_N(V_l, V_l').
    pub cov_vv: DMatrix<f64>,
    /// cov_uv[(l, l')] = Cov_N(U_l, V_l').
    pub cov_uv: DMatrix<f64>,
    /// Assembled variance, clamped at zero.
    pub sigma2_hat: f64,
}

fn column(m: &DMatrix<f64>, l: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[l * n..(l + 1) * n]
}

/// Per-row sums SU_i, SV_i with the delta-method scalars a, b.
struct RowSums {
    su: Vec<f64>,
    sv: Vec<f64>,
    a: f64,
    b: f64,
}

fn row_sums(s: &PickFreezeSample) -> Result<RowSums> {
    let est = estimate_index(s)?;
    let (n, k) = (s.n(), s.k());
    let mut su = vec![0.0; n];
    let mut sv = vec![0.0; n];
    for l in 0..k {
        let y = column(s.y(), l);
        let yu = column(s.yu(), l);
        let m = s.pooled_mean(l);
        for i in 0..n {
            let dy = y[i] - m;
            let dyu = yu[i] - m;
            su[i] += dy * dyu;
            sv[i] += dy * dy + dyu * dyu;
        }
    }
    let a = 1.0 / est.trace_sigma;
    let b = -0.5 * a * est.value;
    Ok(RowSums { su, sv, a, b })
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

fn cov(xs: &[f64], ys: &[f64], mx: f64, my: f64) -> f64 {
    pairwise_sum_by(xs.len(), |i| (xs[i] - mx) * (ys[i] - my)) / xs.len() as f64
}

/// Plug-in variance of sqrt(N)(S_N - S^u) in O(Nk) time.
pub fn sigma2_hat(s: &PickFreezeSample) -> Result<f64> {
    let RowSums { su, sv, a, b } = row_sums(s)?;
    let (msu, msv) = (mean(&su), mean(&sv));
    let var_su = cov(&su, &su, msu, msu);
    let var_sv = cov(&sv, &sv, msv, msv);
    let cov_uv = cov(&su, &sv, msu, msv);
    Ok((a * a * var_su + b * b * var_sv + 2.0 * a * b * cov_uv).max(0.0))
}

/// Full moment-matrix assembly of the same variance, O(Nk^2); exposes the
/// component-pair covariances for inspection.
pub fn plug_in_sigma2(s: &PickFreezeSample) -> Result<CltDiagnostics> {
    let est = estimate_index(s)?;
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    let means: Vec<f64> = (0..k).map(|l| s.pooled_mean(l)).collect();
    // U and V tables, column-major like the sample.
    let mut ut = DMatrix::zeros(n, k);
    let mut vt = DMatrix::zeros(n, k);
    for l in 0..k {
        let y = column(s.y(), l);
        let yu = column(s.yu(), l);
        let m = means[l];
        for i in 0..n {
            let dy = y[i] - m;
            let dyu = yu[i] - m;
            ut[(i, l)] = dy * dyu;
            vt[(i, l)] = dy * dy + dyu * dyu;
        }
    }
    let col_means = |t: &DMatrix<f64>| -> Vec<f64> {
        (0..k).map(|l| pairwise_sum(column(t, l)) / nf).collect()
    };
    let mu = col_means(&ut);
    let mv = col_means(&vt);
    let cov_table = |x: &DMatrix<f64>, mx: &[f64], y: &DMatrix<f64>, my: &[f64]| {
        DMatrix::from_fn(k, k, |l1, l2| {
            let a = column(x, l1);
            let b = column(y, l2);
            pairwise_sum_by(n, |i| (a[i] - mx[l1]) * (b[i] - my[l2])) / nf
        })
    };
    let cov_uu = cov_table(&ut, &mu, &ut, &mu);
    let cov_vv = cov_table(&vt, &mv, &vt, &mv);
    let cov_uv = cov_table(&ut, &mu, &vt, &mv);
    let a = 1.0 / est.trace_sigma;
    let b = -0.5 * a * est.value;
    let total = |m: &DMatrix<f64>| pairwise_sum_by(k * k, |idx| m[(idx % k, idx / k)]);
    let sigma2 =
        (a * a * total(&cov_uu) + b * b * total(&cov_vv) + 2.0 * a * b * total(&cov_uv)).max(0.0);
    Ok(CltDiagnostics {
        n,
        k,
        index: est.value,
        a_hat: a,
        b_hat: b,
        cov_uu,
        cov_vv,
        cov_uv,
        sigma2_hat: sigma2,
    })
}

/// A two-sided interval for the index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub sigma2_hat: f64,
    pub n: usize,
}

fn validate_level(level: f64) -> Result<()> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("confidence level must lie in [0, 1), got {level}")));
    }
    Ok(())
}

/// Normal interval S_N +/- z_{(1+level)/2} sqrt(sigma2_hat / N).
/// Level 0 gives the degenerate zero-width interval.
pub fn confidence_interval(s: &PickFreezeSample, level: f64) -> Result<ConfidenceInterval> {
    validate_level(level)?;
    let est = estimate_index(s)?;
    let sigma2 = sigma2_hat(s)?;
    let z = normal_quantile(0.5 * (1.0 + level));
    let half = z * (sigma2 / s.n() as f64).sqrt();
    Ok(ConfidenceInterval {
        estimate: est.value,
        lo: est.value - half,
        hi: est.value + half,
        level,
        sigma2_hat: sigma2,
        n: s.n(),
    })
}

/// Outcome of a repeated-interval experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageOutcome {
    pub coverage: f64,
    pub mean_width: f64,
    pub reps: usize,
    pub hits: usize,
    pub truth: f64,
}

/// Draws `reps` independent designs (rep r uses the stream derived from
/// (seed, "rep", r)), builds one interval per design, and counts how often
/// the exact index lands inside. Only models with a closed-form index
/// qualify.
pub fn coverage_experiment(
    model: &ModelSpec,
    case: InputCase,
    u: &SubsetU,
    n: usize,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<CoverageOutcome> {
    if reps == 0 {
        return Err(Error::Config("coverage experiment needs at least one repetition".into()));
    }
    validate_level(level)?;
    let truth = model.true_index(case, u)?;
    let inputs = model.canonical_inputs(case)?;
    let outcomes: Vec<Result<(bool, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let cfg = DesignConfig::new(n, derive_key(seed, "rep", r as u64))?;
            let s = PickFreezeSample::generate(model, &inputs, u, &cfg)?;
            let ci = confidence_interval(&s, level)?;
            Ok((ci.lo <= truth && truth <= ci.hi, ci.hi - ci.lo))
        })
        .collect();
    let mut hits = 0usize;
    let mut widths = Vec::with_capacity(reps);
    for o in outcomes {
        let (hit, width) = o?;
        hits += usize::from(hit);
        widths.push(width);
    }
    Ok(CoverageOutcome {
        coverage: hits as f64 / reps as f64,
        mean_width: pairwise_sum(&widths) / reps as f64,
        reps,
        hits,
        truth,
    })
}

/// Percentile bootstrap interval for the closure interaction
/// S_{uv} - S_u - S_v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub reps: usize,
}

/// Resamples rows jointly across the three samples (they share the base
/// design, so row i is coupled between them) and takes percentile bounds of
/// the resampled closure values.
pub fn bootstrap_interaction_ci(
    su: &PickFreezeSample,
    sv: &PickFreezeSample,
    suv: &PickFreezeSample,
    level: f64,
    reps: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    validate_level(level)?;
    if reps < 2 {
        return Err(Error::Config("bootstrap needs at least two repetitions".into()));
    }
    let point = estimate_closure(su, sv, suv)?;
    let n = su.n();
    let values: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, "boot", rep as u64);
            let idx: Vec<usize> =
                (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            let take = |s: &PickFreezeSample| {
                PickFreezeSample::new(
                    s.y().select_rows(idx.iter()),
                    s.yu().select_rows(idx.iter()),
                    s.u().clone(),
                    s.model_id().to_string(),
                )
            };
            estimate_closure(&take(su)?, &take(sv)?, &take(suv)?)
        })
        .collect();
    let mut sorted = Vec::with_capacity(reps);
    for v in values {
        sorted.push(v?);
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let percentile = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    Ok(BootstrapCi {
        point,
        lo: percentile(0.5 * (1.0 - level)),
        hi: percentile(0.5 * (1.0 + level)),
        level,
        reps,
    })
}

/// Interval for one output component; NaN end to end when that component's
/// variance is below its scale floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentCi {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Scalar-output intervals for every component of a vector sample.
pub fn componentwise_cis(s: &PickFreezeSample, level: f64) -> Result<Vec<ComponentCi>> {
    validate_level(level)?;
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    let z = normal_quantile(0.5 * (1.0 + level));
    Ok((0..k)
        .map(|l| {
            let y = column(s.y(), l);
            let yu = column(s.yu(), l);
            let m = pairwise_sum_by(n, |i| 0.5 * (y[i] + yu[i])) / nf;
            let num = pairwise_sum_by(n, |i| y[i] * yu[i]) / nf - m * m;
            let den = pairwise_sum_by(n, |i| 0.5 * (y[i] * y[i] + yu[i] * yu[i])) / nf - m * m;
            let scale = y.iter().chain(yu.iter()).fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if !(den > crate::estimators::DEGENERACY_REL_TOL * scale * scale) {
                return ComponentCi { estimate: f64::NAN, lo: f64::NAN, hi: f64::NAN };
            }
            let est = num / den;
            let a = 1.0 / den;
            let b = -0.5 * a * est;
            let (mut uf, mut vf) = (vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let dy = y[i] - m;
                let dyu = yu[i] - m;
                uf[i] = dy * dyu;
                vf[i] = dy * dy + dyu * dyu;
            }
            let (mu, mv) = (mean(&uf), mean(&vf));
            let s2 = (a * a * cov(&uf, &uf, mu, mu)
                + b * b * cov(&vf, &vf, mv, mv)
                + 2.0 * a * b * cov(&uf, &vf, mu, mv))
            .max(0.0);
            let half = z * (s2 / nf).sqrt();
            ComponentCi { estimate: est, lo: est - half, hi: est + half }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{pick_freeze_design, InputSpec};
    use approx::assert_relative_eq;

    fn bilinear_sample(n: usize, seed: u64, u: &[usize]) -> PickFreezeSample {
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let inputs = model.canonical_inputs(InputCase::Gaussian).unwrap();
        PickFreezeSample::generate(
            &model,
            &inputs,
            &SubsetU::new(u.iter().copied()),
            &DesignConfig::new(n, seed).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn fast_and_matrix_paths_agree() {
        let s = bilinear_sample(2000, 3, &[1]);
        let fast = sigma2_hat(&s).unwrap();
        let full = plug_in_sigma2(&s).unwrap();
        assert_relative_eq!(fast, full.sigma2_hat, max_relative = 1e-10);
        assert!(full.a_hat > 0.0);
        assert_relative_eq!(full.b_hat, -0.5 * full.a_hat * full.index, epsilon = 1e-15);
        assert_eq!(full.cov_uu, full.cov_uu.transpose());
        assert_eq!(full.cov_vv, full.cov_vv.transpose());
    }

    #[test]
    fn variance_is_scale_invariant() {
        let s = bilinear_sample(1500, 7, &[2]);
        let scaled = PickFreezeSample::new(
            s.y() * 3.0,
            s.yu() * 3.0,
            s.u().clone(),
            s.model_id().to_string(),
        )
        .unwrap();
        let v1 = sigma2_hat(&s).unwrap();
        let v2 = sigma2_hat(&scaled).unwrap();
        assert_relative_eq!(v1, v2, max_relative = 1e-12);
    }

    #[test]
    fn identical_replicas_have_zero_variance() {
        // U_l = V_l / 2 pointwise when Y^u = Y, and the assembled quadratic
        // form collapses; the jackknife agrees since S is constant.
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let inputs = model.canonical_inputs(InputCase::Gaussian).unwrap();
        let s = PickFreezeSample::generate(
            &model,
            &inputs,
            &SubsetU::full(2),
            &DesignConfig::new(500, 5).unwrap(),
        )
        .unwrap();
        let d = plug_in_sigma2(&s).unwrap();
        for l in 0..s.k() {
            let y = column(s.y(), l);
            let yu = column(s.yu(), l);
            let m = s.pooled_mean(l);
            for i in 0..s.n() {
                let u = (y[i] - m) * (yu[i] - m);
                let v = (y[i] - m).powi(2) + (yu[i] - m).powi(2);
                assert_relative_eq!(u, 0.5 * v, epsilon = 1e-12);
            }
        }
        assert!(d.sigma2_hat < 1e-10, "sigma2 {}", d.sigma2_hat);
        assert!(jackknife_sigma2(&s) < 1e-10);
    }

    /// Leave-one-out variance of the index, rescaled by N: an oracle for
    /// the plug-in formula built only from running totals.
    fn jackknife_sigma2(s: &PickFreezeSample) -> f64 {
        let (n, k) = (s.n(), s.k());
        let nf = n as f64;
        let mut sy = vec![0.0; k];
        let mut syu = vec![0.0; k];
        let mut syy = vec![0.0; k];
        let mut syyu = vec![0.0; k];
        let mut syu2 = vec![0.0; k];
        for l in 0..k {
            let y = column(s.y(), l);
            let yu = column(s.yu(), l);
            for i in 0..n {
                sy[l] += y[i];
                syu[l] += yu[i];
                syy[l] += y[i] * y[i];
                syyu[l] += y[i] * yu[i];
                syu2[l] += yu[i] * yu[i];
            }
        }
        let mut vals = Vec::with_capacity(n);
        for i in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for l in 0..k {
                let y = column(s.y(), l)[i];
                let yu = column(s.yu(), l)[i];
                let m = (sy[l] + syu[l] - y - yu) / (2.0 * (nf - 1.0));
                num += (syyu[l] - y * yu) / (nf - 1.0) - m * m;
                den += ((syy[l] - y * y) + (syu2[l] - yu * yu)) / (2.0 * (nf - 1.0)) - m * m;
            }
            vals.push(num / den);
        }
        let mean_v = pairwise_sum(&vals) / nf;
        (nf - 1.0) * pairwise_sum_by(n, |i| (vals[i] - mean_v).powi(2))
    }

    #[test]
    fn plug_in_matches_jackknife() {
        let s = bilinear_sample(10_000, 11, &[1]);
        let plug = sigma2_hat(&s).unwrap();
        let jack = jackknife_sigma2(&s);
        assert!(
            (plug - jack).abs() < 0.15 * jack,
            "plug-in {plug} vs jackknife {jack}"
        );
    }

    #[test]
    fn independent_scalar_replicas_have_unit_variance() {
        // f(x) = x, u empty: S = 0 and the limit variance is exactly 1.
        let inputs = InputSpec::gaussian(1).unwrap();
        let cfg = DesignConfig::new(100_000, 21).unwrap();
        let (x, xp) = pick_freeze_design(&inputs, &SubsetU::empty(), &cfg).unwrap();
        let s = PickFreezeSample::new(x, xp, SubsetU::empty(), "identity".into()).unwrap();
        let v = sigma2_hat(&s).unwrap();
        assert!((v - 1.0).abs() < 0.1, "sigma2 {v}");
        let est = estimate_index(&s).unwrap().value;
        assert!(est.abs() < 0.05, "index {est}");
    }

    #[test]
    fn interval_shape_and_width_scaling() {
        let s1 = bilinear_sample(2000, 13, &[1]);
        let ci1 = confidence_interval(&s1, 0.95).unwrap();
        assert!(ci1.lo <= ci1.estimate && ci1.estimate <= ci1.hi);
        let s2 = bilinear_sample(8000, 13, &[1]);
        let ci2 = confidence_interval(&s2, 0.95).unwrap();
        let ratio = (ci2.hi - ci2.lo) / (ci1.hi - ci1.lo);
        assert!((0.4..=0.6).contains(&ratio), "width ratio {ratio}");
    }

    #[test]
    fn zero_level_gives_zero_width() {
        let s = bilinear_sample(500, 2, &[1]);
        let ci = confidence_interval(&s, 0.0).unwrap();
        assert_eq!(ci.lo, ci.estimate);
        assert_eq!(ci.hi, ci.estimate);
    }

    #[test]
    fn levels_outside_the_range_are_rejected() {
        let s = bilinear_sample(100, 2, &[1]);
        assert!(confidence_interval(&s, 1.0).is_err());
        assert!(confidence_interval(&s, -0.01).is_err());
        assert!(confidence_interval(&s, 1.5).is_err());
    }

    #[test]
    fn zero_level_coverage_is_zero() {
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let out = coverage_experiment(
            &model,
            InputCase::Gaussian,
            &SubsetU::new([1]),
            200,
            20,
            0.0,
            99,
        )
        .unwrap();
        assert_eq!(out.coverage, 0.0);
        assert_eq!(out.mean_width, 0.0);
    }

    #[test]
    fn coverage_is_reproducible_and_near_nominal() {
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let run = || {
            coverage_experiment(&model, InputCase::Gaussian, &SubsetU::new([1]), 2000, 60, 0.95, 7)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.coverage >= 0.85, "coverage {}", a.coverage);
        assert_eq!(a.truth, 5.0 / 17.0);
    }

    #[test]
    fn small_designs_keep_near_nominal_coverage() {
        // N=100 is well short of asymptopia, yet the plug-in interval
        // already covers at roughly the nominal rate on uniform inputs.
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let out =
            coverage_experiment(&model, InputCase::Uniform, &SubsetU::new([2]), 100, 100, 0.95, 3)
                .unwrap();
        assert!((0.88..=1.0).contains(&out.coverage), "coverage {}", out.coverage);
    }

    #[test]
    fn coverage_requires_reps_and_truth() {
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        assert!(coverage_experiment(
            &model,
            InputCase::Gaussian,
            &SubsetU::new([1]),
            100,
            0,
            0.95,
            1
        )
        .is_err());
        let ms = ModelSpec::mass_spring_default();
        assert!(coverage_experiment(&ms, InputCase::Uniform, &SubsetU::new([1]), 100, 2, 0.95, 1)
            .is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_the_point() {
        let model = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let inputs = model.canonical_inputs(InputCase::Gaussian).unwrap();
        let cfg = DesignConfig::new(800, 17).unwrap();
        let su = PickFreezeSample::generate(&model, &inputs, &SubsetU::new([1]), &cfg).unwrap();
        let sv = PickFreezeSample::generate(&model, &inputs, &SubsetU::new([2]), &cfg).unwrap();
        let suv = PickFreezeSample::generate(&model, &inputs, &SubsetU::new([1, 2]), &cfg).unwrap();
        let ci = bootstrap_interaction_ci(&su, &sv, &suv, 0.9, 200, 4).unwrap();
        assert!(ci.lo <= ci.point && ci.point <= ci.hi, "{ci:?}");
        let again = bootstrap_interaction_ci(&su, &sv, &suv, 0.9, 200, 4).unwrap();
        assert_eq!(ci, again);
        // The closure interaction of this model is positive territory:
        // S_uv = 1 while S_u + S_v = 7/17.
        assert!(ci.point > 0.3);
    }

    #[test]
    fn componentwise_intervals_contain_their_estimates() {
        let s = bilinear_sample(3000, 23, &[1]);
        let cis = componentwise_cis(&s, 0.95).unwrap();
        assert_eq!(cis.len(), 2);
        for ci in &cis {
            assert!(ci.lo <= ci.estimate && ci.estimate <= ci.hi);
        }
        // A constant component is flagged, not silently zeroed.
        let mut y = s.y().clone();
        let mut yu = s.yu().clone();
        for i in 0..y.nrows() {
            y[(i, 1)] = 2.5;
            yu[(i, 1)] = 2.5;
        }
        let flat =
            PickFreezeSample::new(y, yu, s.u().clone(), s.model_id().to_string()).unwrap();
        let cis = componentwise_cis(&flat, 0.95).unwrap();
        assert!(cis[0].estimate.is_finite());
        assert!(cis[1].estimate.is_nan() && cis[1].lo.is_nan() && cis[1].hi.is_nan());
    }
}
