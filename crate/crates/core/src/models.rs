//! Benchmark models with vector outputs, plus an adapter for external
//! simulators driven over stdin/stdout.
//!
//! Each analytic model documents its canonical input design and, where the
//! moments are tractable, the exact value of the trace index so estimators
//! can be tested against ground truth.

use std::fmt::Write as _;
use std::io::Write as _;
use std::process::{Command, Stdio};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{InputSpec, SubsetU};
use crate::error::{Error, Result};

/// Canonical input law for a benchmark model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCase {
    /// Independent standard Gaussians.
    Gaussian,
    /// The model's native uniform design: U(0,1) per input for the algebraic
    /// toys, the physical parameter ranges for the polar and mass-spring
    /// models.
    Uniform,
}

impl std::fmt::Display for InputCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputCase::Gaussian => write!(f, "gaussian"),
            InputCase::Uniform => write!(f, "uniform"),
        }
    }
}

/// Physical parameters of the damped oscillator. Only the underdamped
/// regime is admitted, since the closed-form displacement below assumes a
/// positive damped frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSpringParams {
    pub mass: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub start: f64,
}

impl MassSpringParams {
    pub fn new(mass: f64, damping: f64, stiffness: f64, start: f64) -> Result<Self> {
        if !(mass > 0.0 && stiffness > 0.0 && damping >= 0.0) {
            return Err(Error::Domain(format!(
                "oscillator needs mass > 0, stiffness > 0, damping >= 0, got m={mass}, c={damping}, k={stiffness}"
            )));
        }
        if damping * damping >= 4.0 * stiffness * mass {
            return Err(Error::Domain(format!(
                "oscillator must be underdamped: c^2 = {} >= 4km = {}",
                damping * damping,
                4.0 * stiffness * mass
            )));
        }
        Ok(MassSpringParams { mass, damping, stiffness, start })
    }
}

/// Displacement at time t of a free underdamped oscillator released from
/// rest at `start`: m x'' + c x' + k x = 0, x(0) = start, x'(0) = 0.
pub fn mass_spring_displacement(p: &MassSpringParams, t: f64) -> f64 {
    let omega = (p.stiffness / p.mass).sqrt();
    let zeta = p.damping / (2.0 * (p.stiffness * p.mass).sqrt());
    let omega_d = omega * (1.0 - zeta * zeta).sqrt();
    let phase = omega_d * t;
    p.start * (-zeta * omega * t).exp() * (phase.cos() + (zeta * omega / omega_d) * phase.sin())
}

/// The observation grid t_i = 0.05 i, i = 1..=800.
pub fn default_t_grid() -> Vec<f64> {
    (1..=800).map(|i| 0.05 * i as f64).collect()
}

/// A model f: R^p -> R^k evaluated row by row on a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// f(x) = (a x1, x2). One anisotropy knob; the index of {1} moves with a.
    AnisoLinear { a: f64 },
    /// f(x) = (x1 + x2 + x1 x2, a x1 + x2 + b x1 x2).
    BilinearAB { a: f64, b: f64 },
    /// f(x) = (x1 cos x2, x1 sin x2) on U(0,10) x U(0, pi/2).
    Polar,
    /// Oscillator displacement sampled on a time grid; inputs are
    /// (mass, damping, stiffness, start).
    MassSpring { t_grid: Vec<f64> },
    /// External command reading comma-separated input rows on stdin and
    /// writing one comma-separated k-vector per row on stdout.
    External { command: String, k: usize },
}

impl ModelSpec {
    pub fn mass_spring_default() -> Self {
        ModelSpec::MassSpring { t_grid: default_t_grid() }
    }

    /// Output dimension k.
    pub fn output_dim(&self) -> usize {
        match self {
            ModelSpec::AnisoLinear { .. } | ModelSpec::BilinearAB { .. } | ModelSpec::Polar => 2,
            ModelSpec::MassSpring { t_grid } => t_grid.len(),
            ModelSpec::External { k, .. } => *k,
        }
    }

    /// Input dimension p, when the model fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModelSpec::AnisoLinear { .. } | ModelSpec::BilinearAB { .. } | ModelSpec::Polar => {
                Some(2)
            }
            ModelSpec::MassSpring { .. } => Some(4),
            ModelSpec::External { .. } => None,
        }
    }

    /// Short identifier used in reports and sample metadata.
    pub fn id_string(&self) -> String {
        match self {
            ModelSpec::AnisoLinear { a } => format!("aniso(a={a})"),
            ModelSpec::BilinearAB { a, b } => format!("bilinear(a={a},b={b})"),
            ModelSpec::Polar => "polar".to_string(),
            ModelSpec::MassSpring { t_grid } => format!("mass-spring(k={})", t_grid.len()),
            ModelSpec::External { command, k } => format!("external({command},k={k})"),
        }
    }

    /// The input design each case denotes for this model. The uniform case
    /// means U(0,1) per input for the algebraic toys and the physical ranges
    /// for the polar and mass-spring models; combinations without a natural
    /// meaning are rejected.
    pub fn canonical_inputs(&self, case: InputCase) -> Result<InputSpec> {
        match (self, case) {
            (ModelSpec::AnisoLinear { .. } | ModelSpec::BilinearAB { .. }, InputCase::Gaussian) => {
                InputSpec::gaussian(2)
            }
            (ModelSpec::AnisoLinear { .. } | ModelSpec::BilinearAB { .. }, InputCase::Uniform) => {
                InputSpec::uniform(2, 0.0, 1.0)
            }
            (ModelSpec::Polar, InputCase::Uniform) => InputSpec::new(vec![
                crate::design::Dist::Uniform { lo: 0.0, hi: 10.0 },
                crate::design::Dist::Uniform { lo: 0.0, hi: std::f64::consts::FRAC_PI_2 },
            ]),
            (ModelSpec::MassSpring { .. }, InputCase::Uniform) => InputSpec::new(vec![
                crate::design::Dist::Uniform { lo: 10.0, hi: 12.0 },
                crate::design::Dist::Uniform { lo: 0.4, hi: 0.8 },
                crate::design::Dist::Uniform { lo: 70.0, hi: 90.0 },
                crate::design::Dist::Uniform { lo: -1.0, hi: -0.25 },
            ]),
            (ModelSpec::Polar | ModelSpec::MassSpring { .. }, InputCase::Gaussian) => {
                Err(Error::Unsupported(format!(
                    "{} is defined on bounded physical ranges; the gaussian case has no meaning",
                    self.id_string()
                )))
            }
            (ModelSpec::External { .. }, _) => Err(Error::Unsupported(
                "external models need an explicit input specification".into(),
            )),
        }
    }

    /// Inputs to sample when driving this model: native models carry their
    /// own ranges (`p`, if given, must agree), external commands have none,
    /// so the standard law of the chosen case is used in the supplied
    /// dimension.
    pub fn sampling_inputs(&self, case: InputCase, p: Option<usize>) -> Result<InputSpec> {
        if let ModelSpec::External { .. } = self {
            let p = p.ok_or_else(|| {
                Error::Config("external models need an input dimension (flag --p)".into())
            })?;
            return match case {
                InputCase::Gaussian => InputSpec::gaussian(p),
                InputCase::Uniform => InputSpec::uniform(p, 0.0, 1.0),
            };
        }
        let inputs = self.canonical_inputs(case)?;
        if let Some(p) = p {
            if p != inputs.p() {
                return Err(Error::Config(format!(
                    "{} has {} input(s), not {p}",
                    self.id_string(),
                    inputs.p()
                )));
            }
        }
        Ok(inputs)
    }

    /// Evaluates the model on every row of x, returning an N x k matrix.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(p) = self.input_dim() {
            if x.ncols() != p {
                return Err(Error::Domain(format!(
                    "{} expects {p} input column(s), got {}",
                    self.id_string(),
                    x.ncols()
                )));
            }
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Domain("empty design matrix".into()));
        }
        match self {
            ModelSpec::AnisoLinear { a } => {
                let a = *a;
                Ok(eval_rows(x, 2, move |r, out| {
                    out[0] = a * r[0];
                    out[1] = r[1];
                    Ok(())
                })?)
            }
            ModelSpec::BilinearAB { a, b } => {
                let (a, b) = (*a, *b);
                Ok(eval_rows(x, 2, move |r, out| {
                    out[0] = r[0] + r[1] + r[0] * r[1];
                    out[1] = a * r[0] + r[1] + b * r[0] * r[1];
                    Ok(())
                })?)
            }
            ModelSpec::Polar => Ok(eval_rows(x, 2, |r, out| {
                out[0] = r[0] * r[1].cos();
                out[1] = r[0] * r[1].sin();
                Ok(())
            })?),
            ModelSpec::MassSpring { t_grid } => {
                let grid = t_grid.as_slice();
                Ok(eval_rows(x, grid.len(), move |r, out| {
                    let p = MassSpringParams::new(r[0], r[1], r[2], r[3])?;
                    for (slot, &t) in out.iter_mut().zip(grid) {
                        *slot = mass_spring_displacement(&p, t);
                    }
                    Ok(())
                })?)
            }
            ModelSpec::External { command, k } => run_external(command, *k, x),
        }
    }

    /// Exact index Tr(C_u)/Tr(Sigma) where the moments are tractable.
    pub fn true_index(&self, case: InputCase, u: &SubsetU) -> Result<f64> {
        if let Some(p) = self.input_dim() {
            u.validate_for(p)?;
            if u.len() == p {
                // All inputs frozen reproduces Y exactly.
                return Ok(1.0);
            }
        }
        match (self, case) {
            (ModelSpec::AnisoLinear { a }, _) => {
                // Both canonical cases have independent coordinates, so the
                // shares are a^2 Var(X1) and Var(X2) with equal input
                // variances.
                let a2 = a * a;
                if *u == SubsetU::new([1]) {
                    Ok(a2 / (a2 + 1.0))
                } else if *u == SubsetU::new([2]) {
                    Ok(1.0 / (a2 + 1.0))
                } else {
                    Err(Error::Unsupported(format!(
                        "no closed form for u = {u} on {}",
                        self.id_string()
                    )))
                }
            }
            (ModelSpec::BilinearAB { a, b }, InputCase::Gaussian) => {
                bilinear_gaussian_index(*a, *b, u)
            }
            (ModelSpec::BilinearAB { a, b }, InputCase::Uniform) => {
                bilinear_uniform_index(*a, *b, u)
            }
            (ModelSpec::Polar, InputCase::Uniform) => polar_index(u),
            _ => Err(Error::Unsupported(format!(
                "no closed-form index for {} under the {case} case",
                self.id_string()
            ))),
        }
    }
}

/// Population covariances of the bilinear pair under independent standard
/// Gaussians, as (Sigma, [C_1, C_2]). The monomials x1, x2, x1*x2 are
/// uncorrelated with unit variance, so every entry is a dot product of the
/// coefficient rows (1, 1, 1) and (a, 1, b); conditioning on one input
/// keeps only that input's linear coefficient.
pub fn bilinear_gaussian_population(a: f64, b: f64) -> (DMatrix<f64>, [DMatrix<f64>; 2]) {
    let rows = [[1.0, 1.0, 1.0], [a, 1.0, b]];
    let gram = |c: usize| DMatrix::from_fn(2, 2, |i, j| rows[i][c] * rows[j][c]);
    let sigma = DMatrix::from_fn(2, 2, |i, j| {
        rows[i].iter().zip(rows[j]).map(|(u, v)| u * v).sum()
    });
    (sigma, [gram(0), gram(1)])
}

/// Evaluates a per-row closure in parallel, preserving row order.
fn eval_rows<F>(x: &DMatrix<f64>, k: usize, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    let n = x.nrows();
    let p = x.ncols();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..p).map(|j| x[(i, j)]).collect();
            let mut out = vec![0.0; k];
            f(&row, &mut out).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("row {}: {msg}", i + 1)),
                other => other,
            })?;
            Ok(out)
        })
        .collect();
    let mut y = DMatrix::zeros(n, k);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (l, v) in row.into_iter().enumerate() {
            y[(i, l)] = v;
        }
    }
    Ok(y)
}

/// One subprocess call evaluates the whole design: input rows are written as
/// comma-separated reals, one per line, and the command must answer with
/// exactly one k-vector per input row, in order.
fn run_external(command: &str, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::Config("external model must declare k >= 1".into()));
    }
    let mut parts = command.split_whitespace();
    let prog = parts
        .next()
        .ok_or_else(|| Error::Config("external command is empty".into()))?;
    let mut child = Command::new(prog)
        .args(parts)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External { row: 0, msg: format!("cannot spawn {prog:?}: {e}") })?;

    let n = x.nrows();
    let mut payload = String::new();
    for i in 0..n {
        for j in 0..x.ncols() {
            if j > 0 {
                payload.push(',');
            }
            write!(payload, "{}", x[(i, j)]).expect("write to string");
        }
        payload.push('\n');
    }
    let mut stdin = child.stdin.take().expect("piped stdin");
    // Feed from a separate thread so a simulator that answers as it reads
    // cannot deadlock on full pipes.
    let feeder = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let output = child
        .wait_with_output()
        .map_err(|e| Error::External { row: 0, msg: format!("wait on {prog:?}: {e}") })?;
    let fed = feeder.join().expect("feeder thread");
    if let Err(e) = fed {
        // A consumer that exits early breaks the pipe; surface the exit
        // status below if it failed, otherwise report the write error.
        if output.status.success() {
            return Err(Error::External { row: 0, msg: format!("writing inputs: {e}") });
        }
    }
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(Error::External {
            row: 0,
            msg: format!("{prog:?} exited with {}: {}", output.status, stderr.trim()),
        });
    }
    let text = String::from_utf8_lossy(&output.stdout);
    let mut y = DMatrix::zeros(n, k);
    let mut rows_seen = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if rows_seen >= n {
            return Err(Error::External {
                row: i + 1,
                msg: format!("expected {n} output row(s), got more"),
            });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k {
            return Err(Error::External {
                row: rows_seen + 1,
                msg: format!("expected {k} value(s) per row, got {}", fields.len()),
            });
        }
        for (l, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::External {
                row: rows_seen + 1,
                msg: format!("cannot parse value {field:?}"),
            })?;
            y[(rows_seen, l)] = v;
        }
        rows_seen += 1;
    }
    if rows_seen != n {
        return Err(Error::External {
            row: rows_seen + 1,
            msg: format!("expected {n} output row(s), got {rows_seen}"),
        });
    }
    Ok(y)
}

/// Shares of a bilinear component alpha x1 + beta x2 + gamma x1 x2 under
/// independent standard Gaussians: Var = alpha^2 + beta^2 + gamma^2, the
/// conditional means being alpha x1 and beta x2.
fn bilinear_gaussian_index(a: f64, b: f64, u: &SubsetU) -> Result<f64> {
    let comps = [(1.0, 1.0, 1.0), (a, 1.0, b)];
    let den: f64 = comps.iter().map(|&(al, be, ga)| al * al + be * be + ga * ga).sum();
    bilinear_ratio(u, den, |&(al, _, _)| al * al, |&(_, be, _)| be * be, &comps)
}

/// Same shares under U(0,1)^2: E[f|X1] = (alpha + gamma/2) X1 + const, so
/// the conditional variance is (alpha + gamma/2)^2 / 12, and
/// Var = (alpha^2 + beta^2)/3 + gamma^2/9 + alpha beta/2 + (alpha + beta) gamma/3
///     - (alpha/2 + beta/2 + gamma/4)^2.
fn bilinear_uniform_index(a: f64, b: f64, u: &SubsetU) -> Result<f64> {
    let comps = [(1.0, 1.0, 1.0), (a, 1.0, b)];
    let var = |&(al, be, ga): &(f64, f64, f64)| {
        (al * al + be * be) / 3.0 + ga * ga / 9.0
            + al * be / 2.0
            + (al + be) * ga / 3.0
            - (al / 2.0 + be / 2.0 + ga / 4.0).powi(2)
    };
    let den: f64 = comps.iter().map(var).sum();
    bilinear_ratio(
        u,
        den,
        |&(al, _, ga)| (al + ga / 2.0).powi(2) / 12.0,
        |&(_, be, ga)| (be + ga / 2.0).powi(2) / 12.0,
        &comps,
    )
}

fn bilinear_ratio(
    u: &SubsetU,
    den: f64,
    num1: impl Fn(&(f64, f64, f64)) -> f64,
    num2: impl Fn(&(f64, f64, f64)) -> f64,
    comps: &[(f64, f64, f64); 2],
) -> Result<f64> {
    if *u == SubsetU::new([1]) {
        Ok(comps.iter().map(num1).sum::<f64>() / den)
    } else if *u == SubsetU::new([2]) {
        Ok(comps.iter().map(num2).sum::<f64>() / den)
    } else {
        Err(Error::Unsupported(format!("no closed form for u = {u} on the bilinear model")))
    }
}

/// Exact shares for (R cos Theta, R sin Theta), R ~ U(0,10),
/// Theta ~ U(0, pi/2). Radial and angular moments separate, giving
/// S^1 = 2/(pi^2 - 6) and S^2 = 3(pi^2 - 8) / (4 (pi^2 - 6)).
fn polar_index(u: &SubsetU) -> Result<f64> {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    if *u == SubsetU::new([1]) {
        Ok(2.0 / (pi2 - 6.0))
    } else if *u == SubsetU::new([2]) {
        Ok(3.0 * (pi2 - 8.0) / (4.0 * (pi2 - 6.0)))
    } else {
        Err(Error::Unsupported(format!("no closed form for u = {u} on the polar model")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{sample_inputs, DesignConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn bilinear_point_value() {
        let m = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = m.evaluate(&x).unwrap();
        assert_eq!(y[(0, 0)], 3.0);
        assert_eq!(y[(0, 1)], 6.0);
    }

    #[test]
    fn population_matrices_agree_with_the_closed_form_index() {
        for (a, b) in [(2.0, 3.0), (1.0, 5.0), (0.3, -1.7), (-2.0, 0.0)] {
            let (sigma, cs) = bilinear_gaussian_population(a, b);
            let model = ModelSpec::BilinearAB { a, b };
            for (i, c) in cs.iter().enumerate() {
                let want = model.true_index(InputCase::Gaussian, &SubsetU::new([i + 1])).unwrap();
                assert_relative_eq!(c.trace() / sigma.trace(), want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn polar_point_values() {
        let m = ModelSpec::Polar;
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, std::f64::consts::FRAC_PI_2]);
        let y = m.evaluate(&x).unwrap();
        assert_relative_eq!(y[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(y[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(y[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(y[(1, 1)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let m = ModelSpec::AnisoLinear { a: 1.0 };
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(m.evaluate(&x).is_err());
    }

    #[test]
    fn oscillator_starts_at_rest() {
        let p = MassSpringParams::new(11.0, 0.6, 80.0, -0.5).unwrap();
        assert_eq!(mass_spring_displacement(&p, 0.0), -0.5);
        // Central difference of x at 0 vanishes (released from rest).
        let h = 1e-6;
        let d = (mass_spring_displacement(&p, h) - mass_spring_displacement(&p, -h)) / (2.0 * h);
        assert!(d.abs() < 1e-6, "initial velocity {d}");
    }

    #[test]
    #[allow(clippy::excessive_precision)] // frozen digits as computed
    fn oscillator_closed_form_matches_reference_point() {
        // 50-digit evaluation of the closed form at t = 1.
        let p = MassSpringParams::new(11.0, 0.6, 80.0, -0.5).unwrap();
        let x = mass_spring_displacement(&p, 1.0);
        assert_relative_eq!(x, 0.437_059_905_323_080_47, epsilon = 1e-13);
    }

    #[test]
    fn oscillator_matches_runge_kutta() {
        // Fourth-order integration of m x'' + c x' + k x = 0 as an
        // independent oracle for the closed form.
        let p = MassSpringParams::new(11.0, 0.6, 80.0, -0.5).unwrap();
        let (m, c, k) = (p.mass, p.damping, p.stiffness);
        let f = |x: f64, v: f64| (v, -(c * v + k * x) / m);
        let (mut x, mut v) = (p.start, 0.0);
        let dt = 1e-4;
        let steps = 40_000;
        for _ in 0..steps {
            let (k1x, k1v) = f(x, v);
            let (k2x, k2v) = f(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v);
            let (k3x, k3v) = f(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v);
            let (k4x, k4v) = f(x + dt * k3x, v + dt * k3v);
            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        let t_end = dt * steps as f64;
        assert_relative_eq!(x, mass_spring_displacement(&p, t_end), epsilon = 1e-9);
    }

    #[test]
    fn oscillator_satisfies_the_ode() {
        // Analytic first and second derivatives of the closed form, checked
        // against the equation of motion at scattered times and parameters.
        let mut rng = crate::rng::stream_rng(77, "test", 0);
        for _ in 0..100 {
            let m = 10.0 + 2.0 * rng.random::<f64>();
            let c = 0.4 + 0.4 * rng.random::<f64>();
            let k = 70.0 + 20.0 * rng.random::<f64>();
            let l = -1.0 + 0.75 * rng.random::<f64>();
            let t = 40.0 * rng.random::<f64>();
            let p = MassSpringParams::new(m, c, k, l).unwrap();
            let omega = (k / m).sqrt();
            let zeta = c / (2.0 * (k * m).sqrt());
            let od = omega * (1.0 - zeta * zeta).sqrt();
            let decay = (-zeta * omega * t).exp();
            let x = mass_spring_displacement(&p, t);
            let xp = -l * (omega * omega / od) * decay * (od * t).sin();
            let xpp = -l * (omega * omega / od) * decay * (-zeta * omega * (od * t).sin() + od * (od * t).cos());
            let residual = m * xpp + c * xp + k * x;
            assert!(residual.abs() < 1e-8 * k * l.abs().max(1.0), "residual {residual}");
        }
    }

    #[test]
    fn oscillator_rejects_bad_parameters() {
        assert!(MassSpringParams::new(-1.0, 0.5, 80.0, -0.5).is_err());
        assert!(MassSpringParams::new(11.0, -0.1, 80.0, -0.5).is_err());
        assert!(MassSpringParams::new(11.0, 0.5, 0.0, -0.5).is_err());
        // Critically damped boundary is excluded.
        assert!(MassSpringParams::new(1.0, 2.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn undamped_oscillator_reduces_to_cosine() {
        let p = MassSpringParams::new(2.0, 0.0, 8.0, -0.7).unwrap();
        let omega = 2.0;
        for i in 0..50 {
            let t = 0.17 * i as f64;
            assert_relative_eq!(
                mass_spring_displacement(&p, t),
                -0.7 * (omega * t).cos(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mass_spring_grid_evaluation_shape() {
        let m = ModelSpec::mass_spring_default();
        assert_eq!(m.output_dim(), 800);
        let spec = m.canonical_inputs(InputCase::Uniform).unwrap();
        let x = sample_inputs(&spec, 16, 1).unwrap();
        let y = m.evaluate(&x).unwrap();
        assert_eq!((y.nrows(), y.ncols()), (16, 800));
        for v in y.iter() {
            assert!(v.is_finite() && v.abs() <= 1.0);
        }
    }

    #[test]
    fn external_echo_reproduces_identity() {
        let m = ModelSpec::External { command: "cat".into(), k: 2 };
        let spec = InputSpec::gaussian(2).unwrap();
        let x = sample_inputs(&spec, 64, 17).unwrap();
        let y = m.evaluate(&x).unwrap();
        // Shortest round-trip formatting makes the echo bit-exact.
        assert_eq!(x, y);
    }

    #[test]
    fn external_failure_modes() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let fail = ModelSpec::External { command: "false".into(), k: 1 };
        assert!(matches!(fail.evaluate(&x), Err(Error::External { .. })));
        let missing = ModelSpec::External { command: "no-such-binary-xyz".into(), k: 1 };
        assert!(matches!(missing.evaluate(&x), Err(Error::External { .. })));
        // Wrong arity in the reply.
        let short = ModelSpec::External { command: "cat".into(), k: 2 };
        assert!(matches!(short.evaluate(&x), Err(Error::External { row: 1, .. })));
        // Wrong row count in the reply.
        let echo_once = ModelSpec::External { command: "echo 1".into(), k: 1 };
        assert!(matches!(echo_once.evaluate(&x), Err(Error::External { .. })));
    }

    #[test]
    fn closed_form_indices_known_points() {
        let bil = ModelSpec::BilinearAB { a: 2.0, b: 3.0 };
        let s1 = bil.true_index(InputCase::Gaussian, &SubsetU::new([1])).unwrap();
        let s2 = bil.true_index(InputCase::Gaussian, &SubsetU::new([2])).unwrap();
        assert_relative_eq!(s1, 5.0 / 17.0, epsilon = 1e-15);
        assert_relative_eq!(s2, 2.0 / 17.0, epsilon = 1e-15);
        let s1u = bil.true_index(InputCase::Uniform, &SubsetU::new([1])).unwrap();
        let s2u = bil.true_index(InputCase::Uniform, &SubsetU::new([2])).unwrap();
        assert_relative_eq!(s1u, 87.0 / 143.0, epsilon = 1e-13);
        assert_relative_eq!(s2u, 51.0 / 143.0, epsilon = 1e-13);
        assert_relative_eq!(s1u, 0.6084, epsilon = 5e-5);
        assert_relative_eq!(s2u, 0.3566, epsilon = 5e-5);
        let full = bil.true_index(InputCase::Gaussian, &SubsetU::new([1, 2])).unwrap();
        assert_eq!(full, 1.0);
    }

    #[test]
    fn aniso_index_tracks_anisotropy() {
        for &a in &[0.5, 1.0, 3.0] {
            let m = ModelSpec::AnisoLinear { a };
            let s1 = m.true_index(InputCase::Gaussian, &SubsetU::new([1])).unwrap();
            let s2 = m.true_index(InputCase::Gaussian, &SubsetU::new([2])).unwrap();
            assert_relative_eq!(s1, a * a / (a * a + 1.0), epsilon = 1e-15);
            assert_relative_eq!(s1 + s2, 1.0, epsilon = 1e-15);
        }
        let iso = ModelSpec::AnisoLinear { a: 1.0 };
        assert_relative_eq!(
            iso.true_index(InputCase::Gaussian, &SubsetU::new([1])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn polar_closed_form_reference_values() {
        // 50-digit evaluations of 2/(pi^2-6) and 3(pi^2-8)/(4(pi^2-6)).
        let m = ModelSpec::Polar;
        let s1 = m.true_index(InputCase::Uniform, &SubsetU::new([1])).unwrap();
        let s2 = m.true_index(InputCase::Uniform, &SubsetU::new([2])).unwrap();
        assert_relative_eq!(s1, 0.516_848_698_910_143_5, epsilon = 1e-15);
        assert_relative_eq!(s2, 0.362_363_475_817_392_4, epsilon = 1e-15);
    }

    /// Direct Monte Carlo of the covariance traces, independent of the
    /// estimator module: freeze X_u, redraw the rest, accumulate
    /// sum_l Cov(Y_l, Y^u_l) and sum_l Var(Y_l) from raw loops.
    fn mc_index(model: &ModelSpec, case: InputCase, u: &SubsetU, n: usize, seed: u64) -> f64 {
        let spec = model.canonical_inputs(case).unwrap();
        let x = sample_inputs(&spec, n, seed).unwrap();
        let (xb, xu) = crate::design::pick_freeze_design(&spec, u, &DesignConfig::new(n, seed).unwrap()).unwrap();
        assert_eq!(x, xb);
        let y = model.evaluate(&xb).unwrap();
        let yu = model.evaluate(&xu).unwrap();
        let k = y.ncols();
        let (mut num, mut den) = (0.0, 0.0);
        for l in 0..k {
            let (mut sy, mut syu, mut syy, mut syyu, mut syu2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let (a, b) = (y[(i, l)], yu[(i, l)]);
                sy += a;
                syu += b;
                syy += a * a;
                syyu += a * b;
                syu2 += b * b;
            }
            let nf = n as f64;
            let m = (sy + syu) / (2.0 * nf);
            num += syyu / nf - m * m;
            den += (syy + syu2) / (2.0 * nf) - m * m;
        }
        num / den
    }

    #[test]
    fn closed_forms_agree_with_direct_monte_carlo() {
        let n = 400_000;
        let cases: [(ModelSpec, InputCase); 3] = [
            (ModelSpec::BilinearAB { a: 2.0, b: 3.0 }, InputCase::Uniform),
            (ModelSpec::BilinearAB { a: 2.0, b: 3.0 }, InputCase::Gaussian),
            (ModelSpec::Polar, InputCase::Uniform),
        ];
        for (model, case) in cases {
            for idx in [1usize, 2] {
                let u = SubsetU::new([idx]);
                let mc = mc_index(&model, case, &u, n, 2024 + idx as u64);
                let exact = model.true_index(case, &u).unwrap();
                assert!(
                    (mc - exact).abs() < 0.01,
                    "{} {case} u={u}: mc {mc} vs exact {exact}",
                    model.id_string()
                );
            }
        }
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        assert!(ModelSpec::Polar.canonical_inputs(InputCase::Gaussian).is_err());
        assert!(ModelSpec::mass_spring_default().canonical_inputs(InputCase::Gaussian).is_err());
        assert!(ModelSpec::mass_spring_default()
            .true_index(InputCase::Uniform, &SubsetU::new([1]))
            .is_err());
        assert!(ModelSpec::Polar.true_index(InputCase::Uniform, &SubsetU::new([3])).is_err());
    }
}
