//! Independent input designs and the paired pick-and-freeze layout.
//!
//! A design is an N x p matrix of independent draws, one column per input.
//! The paired design keeps the columns in a subset u frozen and redraws the
//! rest from fresh streams, which is exactly what the covariance-ratio
//! estimators downstream consume.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Univariate input distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    StandardGaussian,
    Uniform { lo: f64, hi: f64 },
}

impl Dist {
    fn validate(&self) -> Result<()> {
        match *self {
            Dist::StandardGaussian => Ok(()),
            Dist::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "uniform bounds must satisfy lo < hi, got [{lo}, {hi}]"
                    )))
                }
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::StandardGaussian => rng.sample(StandardNormal),
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Product of independent univariate distributions, one per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    dists: Vec<Dist>,
}

impl InputSpec {
    pub fn new(dists: Vec<Dist>) -> Result<Self> {
        if dists.is_empty() {
            return Err(Error::Config("input specification needs at least one input".into()));
        }
        for d in &dists {
            d.validate()?;
        }
        Ok(InputSpec { dists })
    }

    /// All inputs standard Gaussian.
    pub fn gaussian(p: usize) -> Result<Self> {
        Self::new(vec![Dist::StandardGaussian; p])
    }

    /// All inputs uniform on the same interval.
    pub fn uniform(p: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![Dist::Uniform { lo, hi }; p])
    }

    /// Number of inputs.
    pub fn p(&self) -> usize {
        self.dists.len()
    }

    pub fn dists(&self) -> &[Dist] {
        &self.dists
    }
}

/// A subset of input coordinates, held as 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetU(BTreeSet<usize>);

impl SubsetU {
    /// Builds a subset from 1-based indices; duplicates collapse.
    pub fn new<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        SubsetU(indices.into_iter().collect())
    }

    pub fn empty() -> Self {
        SubsetU(BTreeSet::new())
    }

    /// The full subset {1, ..., p}.
    pub fn full(p: usize) -> Self {
        SubsetU((1..=p).collect())
    }

    /// All indices must lie in {1, ..., p}.
    pub fn validate_for(&self, p: usize) -> Result<()> {
        for &j in &self.0 {
            if j == 0 || j > p {
                return Err(Error::Config(format!(
                    "subset index {j} out of range for {p} input(s)"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, index_1based: usize) -> bool {
        self.0.contains(&index_1based)
    }

    pub fn complement(&self, p: usize) -> SubsetU {
        SubsetU((1..=p).filter(|j| !self.0.contains(j)).collect())
    }

    pub fn union(&self, other: &SubsetU) -> SubsetU {
        SubsetU(self.0.union(&other.0).copied().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Sorted 1-based indices.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Parses "1,3" or "{1,3}" into a subset; "" and "{}" mean the empty set.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim().trim_start_matches('{').trim_end_matches('}').trim();
        if trimmed.is_empty() {
            return Ok(SubsetU::empty());
        }
        let mut set = BTreeSet::new();
        for part in trimmed.split(',') {
            let j: usize = part
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse subset element {part:?}")))?;
            set.insert(j);
        }
        Ok(SubsetU(set))
    }
}

impl fmt::Display for SubsetU {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

/// Sample size and seed for one design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub n: usize,
    pub seed: u64,
}

impl DesignConfig {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("sample size must be at least 2, got {n}")));
        }
        Ok(DesignConfig { n, seed })
    }
}

/// Draws an N x p matrix of independent inputs. Column j is filled from its
/// own stream, so adding inputs or changing N never reshuffles other columns'
/// generators.
pub fn sample_inputs(spec: &InputSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Domain("cannot sample an empty design".into()));
    }
    let p = spec.p();
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        let mut rng = stream_rng(seed, "base", j as u64);
        let dist = spec.dists[j];
        for i in 0..n {
            x[(i, j)] = dist.sample(&mut rng);
        }
    }
    Ok(x)
}

/// Draws the paired design (X, X^u): X as in [`sample_inputs`], and X^u equal
/// to X on the columns in u with all other columns redrawn from dedicated
/// "prime" streams. The same (seed, n) always produces the same X regardless
/// of u, which keeps estimates for different subsets comparable.
pub fn pick_freeze_design(
    spec: &InputSpec,
    u: &SubsetU,
    cfg: &DesignConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = spec.p();
    u.validate_for(p)?;
    let x = sample_inputs(spec, cfg.n, cfg.seed)?;
    let mut xp = x.clone();
    for j in 0..p {
        if !u.contains(j + 1) {
            let mut rng = stream_rng(cfg.seed, "prime", j as u64);
            let dist = spec.dists[j];
            for i in 0..cfg.n {
                xp[(i, j)] = dist.sample(&mut rng);
            }
        }
    }
    Ok((x, xp))
}
