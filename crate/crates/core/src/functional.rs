//! Truncated index estimation for function-valued outputs.
//!
//! Outputs living in a separable Hilbert space are handled through their
//! coefficients against an orthonormal family (phi_l): the trace index of
//! the first m coefficients converges to the infinite-dimensional index
//! when m = m(N) grows strictly between N^(1/(2 delta)) and sqrt(N), with
//! delta the coefficient-variance decay exponent. Everything here works on
//! coefficient matrices; [`project_grid`] produces them from trajectories
//! sampled on a quadrature grid.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::design::SubsetU;
use crate::error::{Error, Result};
use crate::estimators::{PickFreezeSample, DEGENERACY_REL_TOL};
use crate::numeric::pairwise_sum_by;

/// An orthonormal family tabulated on a quadrature grid: column l holds
/// phi_l at the grid points, and the weights make
/// sum_g w[g] phi_a(t_g) phi_b(t_g) = delta_ab within [`GRAM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    grid: Vec<f64>,
    weights: Vec<f64>,
    /// G x m_max matrix of basis values.
    columns: DMatrix<f64>,
    id: String,
}

/// Largest allowed deviation of the weighted Gram matrix from the identity.
pub const GRAM_TOL: f64 = 1e-8;

impl BasisSpec {
    pub fn new(
        grid: Vec<f64>,
        weights: Vec<f64>,
        columns: DMatrix<f64>,
        id: impl Into<String>,
    ) -> Result<Self> {
        let g = grid.len();
        if g == 0 || weights.len() != g || columns.nrows() != g || columns.ncols() == 0 {
            return Err(Error::Config(format!(
                "basis shapes disagree: {} grid points, {} weights, {}x{} values",
                g,
                weights.len(),
                columns.nrows(),
                columns.ncols()
            )));
        }
        if grid.iter().any(|t| !t.is_finite()) || columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("basis entries must be finite".into()));
        }
        for &w in &weights {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("quadrature weights must be positive, got {w}")));
            }
        }
        let spec = BasisSpec { grid, weights, columns, id: id.into() };
        spec.check_gram()?;
        Ok(spec)
    }

    /// Unit weights and unit-vector columns: coefficients are the raw grid
    /// values. Exactly orthonormal, so no Gram check is run.
    pub fn canonical(g: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::Config("grid must be nonempty".into()));
        }
        Ok(BasisSpec {
            grid: (0..g).map(|i| i as f64).collect(),
            weights: vec![1.0; g],
            columns: DMatrix::identity(g, g),
            id: "canonical".into(),
        })
    }

    fn check_gram(&self) -> Result<()> {
        let (g, m) = (self.columns.nrows(), self.columns.ncols());
        let mut worst = (0usize, 0usize, 0.0f64);
        for a in 0..m {
            for b in a..m {
                let dot = pairwise_sum_by(g, |r| {
                    self.weights[r] * self.columns[(r, a)] * self.columns[(r, b)]
                });
                let target = if a == b { 1.0 } else { 0.0 };
                let dev = (dot - target).abs();
                if dev > worst.2 {
                    worst = (a, b, dev);
                }
            }
        }
        if worst.2 > GRAM_TOL {
            return Err(Error::Domain(format!(
                "basis is not orthonormal under the weights: Gram({},{}) off by {:.3e}",
                worst.0 + 1,
                worst.1 + 1,
                worst.2
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn m_max(&self) -> usize {
        self.columns.ncols()
    }

    /// Writes the triplet as CSV with header t,w,phi1..phiM.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let (g, m) = (self.grid.len(), self.m_max());
        let mut line = String::from("t,w");
        for l in 1..=m {
            write!(line, ",phi{l}").expect("write to string");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for r in 0..g {
            line.clear();
            write!(line, "{},{}", self.grid[r], self.weights[r]).expect("write to string");
            for l in 0..m {
                write!(line, ",{}", self.columns[(r, l)]).expect("write to string");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Reads back [`write_csv`] output (header required).
    pub fn read_csv<R: std::io::BufRead>(r: R, id: impl Into<String>) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("basis CSV is empty".into()))??;
        let cols = header.trim().split(',').count();
        if cols < 3 || !header.starts_with("t,w,") {
            return Err(Error::Config("basis CSV must start with header t,w,phi1,...".into()));
        }
        let m = cols - 2;
        let mut grid = Vec::new();
        let mut weights = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let vals: Vec<f64> = t
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("row {}: cannot parse {s:?}", i + 2)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != m + 2 {
                return Err(Error::Config(format!(
                    "row {}: expected {} value(s), got {}",
                    i + 2,
                    m + 2,
                    vals.len()
                )));
            }
            grid.push(vals[0]);
            weights.push(vals[1]);
            values.extend_from_slice(&vals[2..]);
        }
        let g = grid.len();
        let columns = DMatrix::from_fn(g, m, |r, l| values[r * m + l]);
        BasisSpec::new(grid, weights, columns, id)
    }
}

/// Paired coefficient matrices of Y and Y^u against one orthonormal family.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    coeff_y: DMatrix<f64>,
    coeff_yu: DMatrix<f64>,
    basis_id: String,
    u: SubsetU,
}

impl FunctionalSample {
    pub fn new(
        coeff_y: DMatrix<f64>,
        coeff_yu: DMatrix<f64>,
        basis_id: impl Into<String>,
        u: SubsetU,
    ) -> Result<Self> {
        if coeff_y.nrows() != coeff_yu.nrows() || coeff_y.ncols() != coeff_yu.ncols() {
            return Err(Error::Config(format!(
                "coefficient matrices disagree: {}x{} vs {}x{}",
                coeff_y.nrows(),
                coeff_y.ncols(),
                coeff_yu.nrows(),
                coeff_yu.ncols()
            )));
        }
        if coeff_y.nrows() < 2 || coeff_y.ncols() == 0 {
            return Err(Error::Config(
                "need at least 2 rows and 1 coefficient column".into(),
            ));
        }
        if coeff_y.iter().chain(coeff_yu.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(FunctionalSample { coeff_y, coeff_yu, basis_id: basis_id.into(), u })
    }

    /// Views a finite-dimensional sample as coefficients on the canonical
    /// basis; with m = k the truncated estimator then reproduces the vector
    /// one.
    pub fn from_vector_sample(s: &PickFreezeSample) -> Self {
        FunctionalSample {
            coeff_y: s.y().clone(),
            coeff_yu: s.yu().clone(),
            basis_id: "canonical".into(),
            u: s.u().clone(),
        }
    }

    pub fn coeff_y(&self) -> &DMatrix<f64> {
        &self.coeff_y
    }

    pub fn coeff_yu(&self) -> &DMatrix<f64> {
        &self.coeff_yu
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn u(&self) -> &SubsetU {
        &self.u
    }

    pub fn n(&self) -> usize {
        self.coeff_y.nrows()
    }

    pub fn m_max(&self) -> usize {
        self.coeff_y.ncols()
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.m_max() {
            return Err(Error::Config(format!(
                "truncation level must lie in 1..={}, got {m}",
                self.m_max()
            )));
        }
        Ok(())
    }

    /// Writes c_1..c_m, cu_1..cu_m per row, same layout as the paired
    /// output CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let (n, m) = (self.n(), self.m_max());
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for l in 0..m {
                if l > 0 {
                    line.push(',');
                }
                write!(line, "{}", self.coeff_y[(i, l)]).expect("write to string");
            }
            for l in 0..m {
                write!(line, ",{}", self.coeff_yu[(i, l)]).expect("write to string");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(
        r: R,
        m_max: usize,
        basis_id: impl Into<String>,
        u: SubsetU,
    ) -> Result<Self> {
        let s = PickFreezeSample::read_csv(r, m_max, u, String::new())?;
        FunctionalSample::new(s.y().clone(), s.yu().clone(), basis_id, s.u().clone())
    }
}

/// Coefficients of grid trajectories: coeff[i, l] = sum_g w[g] traj[i, g]
/// phi_l(t_g), the quadrature form of the inner products. Both trajectory
/// matrices must be N x G with G matching the basis grid.
pub fn project_grid(
    traj_y: &DMatrix<f64>,
    traj_yu: &DMatrix<f64>,
    basis: &BasisSpec,
    u: SubsetU,
) -> Result<FunctionalSample> {
    let g = basis.grid().len();
    if traj_y.ncols() != g || traj_yu.ncols() != g {
        return Err(Error::Config(format!(
            "trajectories have {} and {} grid columns, basis has {g}",
            traj_y.ncols(),
            traj_yu.ncols()
        )));
    }
    let m = basis.m_max();
    let mut weighted = DMatrix::zeros(g, m);
    for r in 0..g {
        for l in 0..m {
            weighted[(r, l)] = basis.weights()[r] * basis.columns()[(r, l)];
        }
    }
    FunctionalSample::new(traj_y * &weighted, traj_yu * &weighted, basis.id(), u)
}

/// Truncation growth rule m(N) = max(1, floor(N^theta)). The exponent must
/// sit strictly inside (1/(2 delta), 1/2): the left edge makes the
/// truncation bias vanish when the coefficient variances decay like
/// l^-(delta+1), the right edge keeps the estimation error of the retained
/// block negligible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSchedule {
    theta: f64,
    delta: f64,
}

impl TruncationSchedule {
    pub fn new(theta: f64, delta: f64) -> Result<Self> {
        if !(delta > 1.0) || !delta.is_finite() {
            return Err(Error::Schedule { theta, delta });
        }
        if !(theta > 1.0 / (2.0 * delta)) || !(theta < 0.5) {
            return Err(Error::Schedule { theta, delta });
        }
        Ok(TruncationSchedule { theta, delta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for TruncationSchedule {
    /// theta = 0.4 under an assumed decay delta = 1.5, leaving headroom on
    /// both sides of (1/3, 1/2).
    fn default() -> Self {
        TruncationSchedule { theta: 0.4, delta: 1.5 }
    }
}

pub fn m_schedule(n: usize, sched: TruncationSchedule) -> Result<usize> {
    if n < 2 {
        return Err(Error::Config(format!("sample size must be at least 2, got {n}")));
    }
    Ok(((n as f64).powf(sched.theta).floor() as usize).max(1))
}

fn truncated_norm_sq(row: nalgebra::DMatrixView<f64>, i: usize, m: usize) -> f64 {
    // Running sum keeps the norm exactly nondecreasing in m.
    let mut s = 0.0;
    for l in 0..m {
        s += row[(i, l)] * row[(i, l)];
    }
    s
}

/// Monte Carlo plug-ins of the polar trace displays, truncated at m:
///
/// ```text
/// Tr(Gamma)   = E ||Y||^2 - ||E Y||^2
/// Tr(Gamma_u) = 1/4 [ E ||Y+Y^u||^2 - E ||Y-Y^u||^2 - 4 ||E Y||^2 ]
/// ```
///
/// with the pooled mean of both replicas standing in for E Y and the
/// second moments pooled likewise. Returns (trace_gamma, trace_gamma_u).
pub fn trace_polar(fs: &FunctionalSample, m: usize) -> Result<(f64, f64)> {
    fs.check_m(m)?;
    let n = fs.n();
    let nf = n as f64;
    let y = fs.coeff_y.as_view();
    let yu = fs.coeff_yu.as_view();
    let mean_norm_sq = {
        let mut s = 0.0;
        for l in 0..m {
            let ml = pairwise_sum_by(n, |i| 0.5 * (y[(i, l)] + yu[(i, l)])) / nf;
            s += ml * ml;
        }
        s
    };
    let second = pairwise_sum_by(n, |i| {
        0.5 * (truncated_norm_sq(y, i, m) + truncated_norm_sq(yu, i, m))
    }) / nf;
    let trace_gamma = second - mean_norm_sq;
    let plus = pairwise_sum_by(n, |i| {
        let mut s = 0.0;
        for l in 0..m {
            let v = y[(i, l)] + yu[(i, l)];
            s += v * v;
        }
        s
    }) / nf;
    let minus = pairwise_sum_by(n, |i| {
        let mut s = 0.0;
        for l in 0..m {
            let v = y[(i, l)] - yu[(i, l)];
            s += v * v;
        }
        s
    }) / nf;
    let trace_gamma_u = 0.25 * (plus - minus) - mean_norm_sq;
    Ok((trace_gamma, trace_gamma_u))
}

/// The truncated index: the ratio of the two polar plug-ins, i.e. the trace
/// index of the first m coefficients.
pub fn estimate_functional_index(fs: &FunctionalSample, m: usize) -> Result<f64> {
    let (trace_gamma, trace_gamma_u) = trace_polar(fs, m)?;
    let scale = fs
        .coeff_y
        .columns(0, m)
        .iter()
        .chain(fs.coeff_yu.columns(0, m).iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let tol = DEGENERACY_REL_TOL * scale * scale;
    if !(trace_gamma > tol) {
        return Err(Error::Degenerate { trace: trace_gamma, tol });
    }
    Ok(trace_gamma_u / trace_gamma)
}

/// True per-coefficient moments e_l = E<T, phi_l> and v_l = E<T, phi_l>^2,
/// with an optional analytic remainder sum_{l > m_max} (v_l - e_l^2) for
/// models whose coefficient law is known in closed form. Without it the
/// variance tail beyond the tabulated range is silently dropped, biasing
/// [`d_decomposition`]'s B term low.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    e: Vec<f64>,
    v: Vec<f64>,
    tail: Option<f64>,
}

impl MomentTable {
    pub fn new(e: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if e.is_empty() || e.len() != v.len() {
            return Err(Error::Config(format!(
                "moment vectors disagree: {} first moments, {} second moments",
                e.len(),
                v.len()
            )));
        }
        for (l, (&el, &vl)) in e.iter().zip(&v).enumerate() {
            if !el.is_finite() || !vl.is_finite() {
                return Err(Error::Config(format!("moment {} is not finite", l + 1)));
            }
            if vl < el * el {
                return Err(Error::Domain(format!(
                    "second moment v_{} = {vl} below e_{}^2 = {}",
                    l + 1,
                    l + 1,
                    el * el
                )));
            }
        }
        Ok(MomentTable { e, v, tail: None })
    }

    /// Registers the analytic variance tail beyond the tabulated range.
    pub fn with_tail(mut self, tail: f64) -> Result<Self> {
        if !(tail >= 0.0) || !tail.is_finite() {
            return Err(Error::Domain(format!("variance tail must be finite and >= 0, got {tail}")));
        }
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn tail(&self) -> Option<f64> {
        self.tail
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Total variance over the tabulated range plus any registered tail.
    pub fn total_variance(&self) -> f64 {
        let range = pairwise_sum_by(self.len(), |l| self.v[l] - self.e[l] * self.e[l]);
        range + self.tail.unwrap_or(0.0)
    }
}

/// The three pieces of the truncated-variance error split, satisfying
/// d - total_variance = -uk + pl - b exactly (up to rounding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DDecomposition {
    /// Truncated empirical variance (divisor N).
    pub d: f64,
    /// Degenerate second-order U-statistic part, mean zero.
    pub uk: f64,
    /// Centered linear part, mean zero.
    pub pl: f64,
    /// Deterministic bias: variance tail beyond m plus the 1/N
    /// degrees-of-freedom correction on the retained block.
    pub b: f64,
}

impl DDecomposition {
    /// |d - total_variance - (-uk + pl - b)|; pure rounding when the
    /// moments are the true ones.
    pub fn identity_residual(&self, moments: &MomentTable) -> f64 {
        (self.d - moments.total_variance() - (-self.uk + self.pl - self.b)).abs()
    }
}

/// Splits the truncated empirical variance of iid coefficient rows around
/// the population value. With centered coefficients Z~_il = Z_il - e_l and
/// W_il = Z_il^2 - v_l:
///
/// ```text
/// D  = sum_{l<=m} [ (1/N) sum_i Z_il^2 - ((1/N) sum_i Z_il)^2 ]
/// UK = sum_{l<=m} (1/N^2) [ (sum_i Z~_il)^2 - sum_i Z~_il^2 ]
/// PL = (1/N)(1 - 1/N) sum_{l<=m} sum_i (W_il - 2 e_l Z~_il)
/// B  = sum_{l>m} (v_l - e_l^2) + (1/N) sum_{l<=m} (v_l - e_l^2)
/// ```
///
/// The moment table must cover every supplied coefficient column; its tail
/// (if registered) joins B's leading sum.
pub fn d_decomposition(
    coeff_t: &DMatrix<f64>,
    moments: &MomentTable,
    m: usize,
) -> Result<DDecomposition> {
    let (n, m_max) = (coeff_t.nrows(), coeff_t.ncols());
    if n < 2 || m_max == 0 {
        return Err(Error::Config("need at least 2 rows and 1 coefficient column".into()));
    }
    if moments.len() != m_max {
        return Err(Error::Domain(format!(
            "moment table covers {} coefficient(s), sample has {m_max}",
            moments.len()
        )));
    }
    if m == 0 || m > m_max {
        return Err(Error::Config(format!(
            "truncation level must lie in 1..={m_max}, got {m}"
        )));
    }
    let nf = n as f64;
    let col =
        |l: usize| -> nalgebra::DVectorView<f64> { coeff_t.column(l) };
    let d = pairwise_sum_by(m, |l| {
        let c = col(l);
        let q = pairwise_sum_by(n, |i| c[i] * c[i]);
        let s = pairwise_sum_by(n, |i| c[i]);
        q / nf - (s / nf) * (s / nf)
    });
    let uk = pairwise_sum_by(m, |l| {
        let c = col(l);
        let e = moments.e()[l];
        let s = pairwise_sum_by(n, |i| c[i] - e);
        let q = pairwise_sum_by(n, |i| (c[i] - e) * (c[i] - e));
        (s * s - q) / (nf * nf)
    });
    let pl = (1.0 / nf) * (1.0 - 1.0 / nf)
        * pairwise_sum_by(m, |l| {
            let c = col(l);
            let e = moments.e()[l];
            let v = moments.v()[l];
            pairwise_sum_by(n, |i| c[i] * c[i] - v - 2.0 * e * (c[i] - e))
        });
    let retained = pairwise_sum_by(m, |l| moments.v()[l] - moments.e()[l] * moments.e()[l]);
    let beyond =
        pairwise_sum_by(m_max - m, |j| {
            let l = m + j;
            moments.v()[l] - moments.e()[l] * moments.e()[l]
        }) + moments.tail().unwrap_or(0.0);
    let b = beyond + retained / nf;
    Ok(DDecomposition { d, uk, pl, b })
}
