//! Empirical covariance traces and the pick-and-freeze index.
//!
//! For a paired sample (Y_i, Y_i^u), i = 1..N, with pooled mean
//! m = (Ybar + Ybar^u)/2, the estimator is the trace ratio
//!
//! ```text
//! S_N = Tr(C_N) / Tr(Sigma_N),
//! C_N     = (1/N) sum_i Y_i^u Y_i'            - m m',
//! Sigma_N = (1/N) sum_i (Y_i Y_i' + Y_i^u Y_i^u')/2 - m m'.
//! ```
//!
//! Both normalizations divide by N; pooling the two replicas into the mean
//! is what makes the ratio exactly invariant under isometries and shifts of
//! the output. All row accumulations use a fixed-shape summation tree, so a
//! sample produces the same floating-point result on every run.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{pick_freeze_design, DesignConfig, InputSpec, SubsetU};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::numeric::pairwise_sum_by;

/// Relative floor under which the pooled variance trace counts as zero.
pub const DEGENERACY_REL_TOL: f64 = 1e-12;

/// A paired evaluation (Y, Y^u) of one model on a pick-and-freeze design.
#[derive(Debug, Clone, PartialEq)]
pub struct PickFreezeSample {
    y: DMatrix<f64>,
    yu: DMatrix<f64>,
    u: SubsetU,
    model_id: String,
}

impl PickFreezeSample {
    pub fn new(y: DMatrix<f64>, yu: DMatrix<f64>, u: SubsetU, model_id: String) -> Result<Self> {
        if y.nrows() != yu.nrows() || y.ncols() != yu.ncols() {
            return Err(Error::Domain(format!(
                "paired outputs must share a shape, got {}x{} vs {}x{}",
                y.nrows(),
                y.ncols(),
                yu.nrows(),
                yu.ncols()
            )));
        }
        if y.nrows() < 2 {
            return Err(Error::Domain("a paired sample needs at least two rows".into()));
        }
        if y.ncols() == 0 {
            return Err(Error::Domain("outputs must have at least one component".into()));
        }
        Ok(PickFreezeSample { y, yu, u, model_id })
    }

    /// Samples the design and evaluates the model on both replicas.
    pub fn generate(
        model: &ModelSpec,
        inputs: &InputSpec,
        u: &SubsetU,
        cfg: &DesignConfig,
    ) -> Result<Self> {
        if let Some(p) = model.input_dim() {
            if inputs.p() != p {
                return Err(Error::Config(format!(
                    "{} expects {p} input(s), specification has {}",
                    model.id_string(),
                    inputs.p()
                )));
            }
        }
        let (x, xu) = pick_freeze_design(inputs, u, cfg)?;
        let y = model.evaluate(&x)?;
        let yu = model.evaluate(&xu)?;
        PickFreezeSample::new(y, yu, u.clone(), model.id_string())
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn yu(&self) -> &DMatrix<f64> {
        &self.yu
    }

    pub fn u(&self) -> &SubsetU {
        &self.u
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    /// Pooled mean of component l over both replicas.
    pub fn pooled_mean(&self, l: usize) -> f64 {
        let n = self.n();
        let (y, yu) = (column(&self.y, l), column(&self.yu, l));
        pairwise_sum_by(n, |i| 0.5 * (y[i] + yu[i])) / n as f64
    }

    /// Largest absolute output entry over both replicas; sets the scale for
    /// degeneracy tolerances.
    pub fn max_abs_entry(&self) -> f64 {
        let a = self.y.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        self.yu.iter().fold(a, |m, &v| m.max(v.abs()))
    }

    /// Relative degeneracy floor for variance traces of this sample.
    pub fn degeneracy_tol(&self) -> f64 {
        let s = self.max_abs_entry();
        DEGENERACY_REL_TOL * s * s
    }

    /// Writes the paired outputs as CSV: y_1..y_k, yu_1..yu_k per row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let (n, k) = (self.n(), self.k());
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for l in 0..k {
                if l > 0 {
                    line.push(',');
                }
                write!(line, "{}", self.y[(i, l)]).expect("write to string");
            }
            for l in 0..k {
                line.push(',');
                write!(line, "{}", self.yu[(i, l)]).expect("write to string");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Reads a paired sample back from [`write_csv`] output.
    pub fn read_csv<R: std::io::BufRead>(r: R, k: usize, u: SubsetU, model_id: String) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("component count must be at least 1".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in r.lines().enumerate() {
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
                        .map_err(|_| Error::Config(format!("row {}: cannot parse {s:?}", i + 1)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 2 * k {
                return Err(Error::Config(format!(
                    "row {}: expected {} value(s), got {}",
                    i + 1,
                    2 * k,
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        let n = rows.len();
        let mut y = DMatrix::zeros(n, k);
        let mut yu = DMatrix::zeros(n, k);
        for (i, row) in rows.iter().enumerate() {
            for l in 0..k {
                y[(i, l)] = row[l];
                yu[(i, l)] = row[k + l];
            }
        }
        PickFreezeSample::new(y, yu, u, model_id)
    }
}

fn column(m: &DMatrix<f64>, l: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[l * n..(l + 1) * n]
}

/// One estimated index with the traces behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexEstimate {
    pub value: f64,
    pub trace_cu: f64,
    pub trace_sigma: f64,
    pub n: usize,
    pub u: SubsetU,
}

/// Full empirical covariance matrices of a paired sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCov {
    /// Cross-covariance (1/N) sum Y^u Y' - m m'; not symmetric in general.
    pub cu: DMatrix<f64>,
    /// Pooled output covariance; symmetric by construction.
    pub sigma: DMatrix<f64>,
}

/// Per-column trace contributions: (Tr C_N, Tr Sigma_N) accumulated without
/// forming the k x k matrices, O(Nk) time and O(k) extra space.
fn trace_pair(s: &PickFreezeSample) -> (f64, f64) {
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    let tr = |which: usize| {
        pairwise_sum_by(k, |l| {
            let y = column(&s.y, l);
            let yu = column(&s.yu, l);
            let m = pairwise_sum_by(n, |i| 0.5 * (y[i] + yu[i])) / nf;
            match which {
                0 => pairwise_sum_by(n, |i| y[i] * yu[i]) / nf - m * m,
                _ => pairwise_sum_by(n, |i| 0.5 * (y[i] * y[i] + yu[i] * yu[i])) / nf - m * m,
            }
        })
    };
    (tr(0), tr(1))
}

/// The index estimate Tr(C_N)/Tr(Sigma_N).
pub fn estimate_index(s: &PickFreezeSample) -> Result<IndexEstimate> {
    let (trace_cu, trace_sigma) = trace_pair(s);
    let tol = s.degeneracy_tol();
    if !(trace_sigma > tol) {
        return Err(Error::Degenerate { trace: trace_sigma, tol });
    }
    Ok(IndexEstimate {
        value: trace_cu / trace_sigma,
        trace_cu,
        trace_sigma,
        n: s.n(),
        u: s.u().clone(),
    })
}

/// Full k x k empirical covariance matrices.
pub fn empirical_covariances(s: &PickFreezeSample) -> EmpiricalCov {
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    let means: Vec<f64> = (0..k).map(|l| s.pooled_mean(l)).collect();
    let mut cu = DMatrix::zeros(k, k);
    let mut sigma = DMatrix::zeros(k, k);
    for l2 in 0..k {
        let y2 = column(&s.y, l2);
        let yu2 = column(&s.yu, l2);
        for l1 in 0..k {
            let y1 = column(&s.y, l1);
            let yu1 = column(&s.yu, l1);
            cu[(l1, l2)] = pairwise_sum_by(n, |i| yu1[i] * y2[i]) / nf - means[l1] * means[l2];
            let v = pairwise_sum_by(n, |i| 0.5 * (y1[i] * y2[i] + yu1[i] * yu2[i])) / nf
                - means[l1] * means[l2];
            sigma[(l1, l2)] = v;
        }
    }
    EmpiricalCov { cu, sigma }
}

/// Componentwise indices: entry l is the scalar index of output component l,
/// or NaN when that component's pooled variance is below its own scale floor.
pub fn estimate_componentwise(s: &PickFreezeSample) -> Vec<f64> {
    let (n, k) = (s.n(), s.k());
    let nf = n as f64;
    (0..k)
        .map(|l| {
            let y = column(&s.y, l);
            let yu = column(&s.yu, l);
            let m = pairwise_sum_by(n, |i| 0.5 * (y[i] + yu[i])) / nf;
            let num = pairwise_sum_by(n, |i| y[i] * yu[i]) / nf - m * m;
            let den = pairwise_sum_by(n, |i| 0.5 * (y[i] * y[i] + yu[i] * yu[i])) / nf - m * m;
            let scale = y
                .iter()
                .chain(yu.iter())
                .fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if den > DEGENERACY_REL_TOL * scale * scale {
                num / den
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Index weighted by a fixed matrix M: Tr(M C_N) / Tr(M Sigma_N).
/// M = I recovers [`estimate_index`] exactly.
pub fn estimate_m_index(s: &PickFreezeSample, m: &DMatrix<f64>) -> Result<f64> {
    let k = s.k();
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::Domain(format!(
            "weight matrix must be {k}x{k}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let cov = empirical_covariances(s);
    let tr = |a: &DMatrix<f64>| {
        pairwise_sum_by(k, |l1| pairwise_sum_by(k, |l2| m[(l1, l2)] * a[(l2, l1)]))
    };
    let num = tr(&cov.cu);
    let den = tr(&cov.sigma);
    let tol = s.degeneracy_tol() * m.amax().max(1.0) * k as f64;
    if !(den.abs() > tol) {
        return Err(Error::Degenerate { trace: den, tol });
    }
    Ok(num / den)
}

/// Closure-based interaction: S_uv - S_u - S_v from three paired samples of
/// equal length on the same model.
pub fn estimate_closure(
    su: &PickFreezeSample,
    sv: &PickFreezeSample,
    suv: &PickFreezeSample,
) -> Result<f64> {
    for s in [sv, suv] {
        if s.n() != su.n() || s.k() != su.k() {
            return Err(Error::Domain(
                "closure estimation needs three samples of identical shape".into(),
            ));
        }
    }
    let a = estimate_index(su)?.value;
    let b = estimate_index(sv)?.value;
    let ab = estimate_index(suv)?.value;
    Ok(ab - a - b)
}
