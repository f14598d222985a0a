//! Deterministic numeric helpers: tree-structured summation and the
//! standard normal quantile.

/// Pairwise (tree) sum of a slice. The result depends only on the slice
/// contents and order, never on threading, and keeps rounding error at
/// O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `f(0) + f(1) + ... + f(n-1)` without materializing the
/// terms. Same tree shape as [`pairwise_sum`] on the equivalent slice.
pub fn pairwise_sum_by<F: Fn(usize) -> f64 + Copy>(n: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64 + Copy>(lo: usize, hi: usize, f: F) -> f64 {
        const LEAF: usize = 64;
        if hi - lo <= LEAF {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, f)
}

/// Standard normal quantile (inverse CDF). A rational approximation covers
/// the central range and the tail down to exp(-25) ~ 1.4e-11; beyond that
/// an asymptotic start is polished by Newton steps against a
/// continued-fraction tail CDF. Absolute error below 1e-9 on (0, 1);
/// saturates to +/- infinity at the endpoints.
pub fn normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile argument must be in [0, 1]");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational(r, &CENTRAL_NUM, &CENTRAL_DEN);
    }
    let tail_p = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail_p.ln()).sqrt();
    let z = if r <= 5.0 {
        rational(r - 1.6, &TAIL_NUM, &TAIL_DEN)
    } else {
        extreme_tail_quantile(tail_p)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 4 via the
/// Laplace continued fraction, evaluated bottom-up.
fn erfcx_tail(x: f64) -> f64 {
    let mut t = 0.0;
    for n in (1..=48).rev() {
        t = (0.5 * n as f64) / (x + t);
    }
    0.5 * std::f64::consts::FRAC_2_SQRT_PI / (x + t)
}

/// Magnitude of the lower-tail quantile for p < exp(-25). Solves
/// ln Phi(-m) = ln p by Newton iteration; all quantities stay on the log
/// scale, so nothing underflows even at the smallest subnormal p.
fn extreme_tail_quantile(p: f64) -> f64 {
    let lp = p.ln();
    let u = -2.0 * lp;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    // Fixed point of w = u - ln(2 pi) - ln w, the asymptotic inverse.
    let mut w = u - ln_2pi - (u - ln_2pi).ln();
    for _ in 0..3 {
        w = u - ln_2pi - w.ln();
    }
    let mut m = w.sqrt();
    for _ in 0..4 {
        let s = m * std::f64::consts::FRAC_1_SQRT_2;
        let ex = erfcx_tail(s);
        // ln Phi(-m) = -m^2/2 + ln(erfcx(s)/2); Phi(-m)/phi(m) = sqrt(pi/2) erfcx(s)
        let ln_phi = -0.5 * m * m + (0.5 * ex).ln();
        let ratio = (std::f64::consts::PI / 2.0).sqrt() * ex;
        m += (ln_phi - lp) * ratio;
    }
    m
}

fn rational(x: f64, num: &[f64; 8], den: &[f64; 8]) -> f64 {
    let mut n = 0.0;
    let mut d = 0.0;
    for i in (0..8).rev() {
        n = n * x + num[i];
        d = d * x + den[i];
    }
    n / d
}

// The tables keep their full published digits; the compiler rounds them to
// the nearest f64.
#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
