//! Matrix-valued indices built from measures on signed permutations.
//!
//! Fix a spectral frame Sigma = O diag(lambda) O' with simple spectrum and
//! sign-normalized eigenvectors. For a probability measure mu on the group
//! H_k of signed permutation matrices, the index of a covariance pair
//! (C_u, Sigma) is
//!
//! ```text
//! T{u,mu} = 1/2 integral (OP)' (Sigma^-1 C_u + C_u Sigma^-1) (OP) mu(dP).
//! ```
//!
//! Conjugation averaging over the whole group projects any matrix onto
//! scalar multiples of the identity, which collapses the uniform-measure
//! index to the closed form Tr(Sigma^-1 C_u)/k I_k. The group has
//! 2^k k! elements, so exact enumeration is capped at k <= 8.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{empirical_covariances, PickFreezeSample};

/// Largest output dimension for which H_k is enumerated exactly.
pub const MAX_EXACT_K: usize = 8;

/// Default relative eigenvalue-gap tolerance for simple-spectrum checks.
pub const DEFAULT_SIMPLICITY_TOL: f64 = 1e-8;

/// Eigendecomposition with ascending eigenvalues and a deterministic sign
/// convention: each eigenvector's first coordinate of magnitude above 1e-12
/// is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub eigenvalues: Vec<f64>,
    /// Columns are the normalized eigenvectors, in eigenvalue order.
    pub basis: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Domain(format!(
            "{what} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Domain(format!(
                    "{what} must be symmetric; entries ({i},{j}) and ({j},{i}) differ by {}",
                    (m[(i, j)] - m[(j, i)]).abs()
                )));
            }
        }
    }
    Ok(())
}

/// Canonical eigenbasis of a symmetric positive-definite matrix. Fails when
/// the matrix is not symmetric, not positive definite, or when an adjacent
/// eigenvalue gap falls below `tol` times the spectral radius (no canonical
/// frame exists then).
pub fn spectral_frame(sigma: &DMatrix<f64>, tol: f64) -> Result<SpectralFrame> {
    let k = check_square(sigma, "covariance")?;
    check_symmetric(sigma, "covariance")?;
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(Error::Config(format!("gap tolerance must be finite and >= 0, got {tol}")));
    }
    let eig = sigma.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if !(eigenvalues[0] > 0.0) {
        return Err(Error::Domain(format!(
            "covariance must be positive definite; smallest eigenvalue {}",
            eigenvalues[0]
        )));
    }
    let radius = eigenvalues[k - 1].abs();
    let gap_tol = tol * radius;
    for w in eigenvalues.windows(2) {
        let gap = w[1] - w[0];
        if gap <= gap_tol {
            return Err(Error::NonSimpleSpectrum { gap, tol: gap_tol });
        }
    }
    let mut basis = DMatrix::zeros(k, k);
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let lead = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
        let flip = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..k {
            basis[(r, col)] = flip * v[r];
        }
    }
    Ok(SpectralFrame { eigenvalues, basis })
}

impl SpectralFrame {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Sigma^-1 reassembled from the frame, O diag(1/lambda) O'.
    pub fn inverse(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut d = DMatrix::zeros(k, k);
        for i in 0..k {
            d[(i, i)] = 1.0 / self.eigenvalues[i];
        }
        &self.basis * d * self.basis.transpose()
    }
}

/// An element D P of H_k: P the permutation matrix with P[i, perm[i]] = 1
/// and D the diagonal of `signs` (each +1 or -1), so the matrix has
/// signs[i] at (i, perm[i]).
#[derive(Debug, Clone, PartialEq)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<f64>,
}

impl SignedPermutation {
    pub fn new(perm: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        let k = perm.len();
        if k == 0 || signs.len() != k {
            return Err(Error::Domain("permutation and signs must share a positive length".into()));
        }
        let mut seen = vec![false; k];
        for &p in &perm {
            if p >= k || seen[p] {
                return Err(Error::Domain(format!("not a permutation of 0..{k}")));
            }
            seen[p] = true;
        }
        for &s in &signs {
            if s != 1.0 && s != -1.0 {
                return Err(Error::Domain(format!("signs must be +1 or -1, got {s}")));
            }
        }
        Ok(SignedPermutation { perm, signs })
    }

    pub fn identity(k: usize) -> Self {
        SignedPermutation { perm: (0..k).collect(), signs: vec![1.0; k] }
    }

    pub fn k(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            m[(i, self.perm[i])] = self.signs[i];
        }
        m
    }

    /// Matrix product self * other.
    pub fn compose(&self, other: &SignedPermutation) -> Result<SignedPermutation> {
        let k = self.k();
        if other.k() != k {
            return Err(Error::Domain("cannot compose signed permutations of different sizes".into()));
        }
        let perm = (0..k).map(|i| other.perm[self.perm[i]]).collect();
        let signs = (0..k).map(|i| self.signs[i] * other.signs[self.perm[i]]).collect();
        Ok(SignedPermutation { perm, signs })
    }

    /// Group inverse, equal to the transpose since the matrix is orthogonal.
    pub fn inverse(&self) -> SignedPermutation {
        let k = self.k();
        let mut perm = vec![0usize; k];
        let mut signs = vec![1.0; k];
        for i in 0..k {
            perm[self.perm[i]] = i;
        }
        for (i, sign) in signs.iter_mut().enumerate() {
            *sign = self.signs[perm[i]];
        }
        SignedPermutation { perm, signs }
    }

    /// P' A P without forming the dense product: entry (i, j) picks up
    /// A[inv(i), inv(j)] with the two signs.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.k();
        if a.nrows() != k || a.ncols() != k {
            return Err(Error::Domain(format!(
                "conjugation needs a {k}x{k} matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let inv = self.inverse();
        Ok(DMatrix::from_fn(k, k, |i, j| {
            inv.signs[i] * inv.signs[j] * a[(inv.perm[i], inv.perm[j])]
        }))
    }
}

/// |H_k| = 2^k k!.
pub fn hk_order(k: usize) -> Result<u64> {
    if k == 0 || k > MAX_EXACT_K {
        return Err(Error::Capacity { k, cap: MAX_EXACT_K });
    }
    let fact: u64 = (1..=k as u64).product();
    Ok((1u64 << k) * fact)
}

/// Calls f once per group element, with reusable buffers.
fn for_each_hk(k: usize, mut f: impl FnMut(&[usize], &[f64])) -> Result<()> {
    hk_order(k)?;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut signs = vec![1.0; k];
    // Heap's algorithm, iterative, visiting every permutation once.
    let mut counters = vec![0usize; k];
    let visit = |perm: &[usize], signs: &mut [f64], f: &mut dyn FnMut(&[usize], &[f64])| {
        for mask in 0u32..(1 << k) {
            for (i, s) in signs.iter_mut().enumerate() {
                *s = if mask & (1 << i) != 0 { -1.0 } else { 1.0 };
            }
            f(perm, signs);
        }
    };
    visit(&perm, &mut signs, &mut f);
    let mut i = 0;
    while i < k {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            visit(&perm, &mut signs, &mut f);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(())
}

/// Materializes all of H_k; exact but exponential, hence the k <= 8 cap.
pub fn enumerate_hk(k: usize) -> Result<Vec<SignedPermutation>> {
    let mut out = Vec::with_capacity(hk_order(k)? as usize);
    for_each_hk(k, |perm, signs| {
        out.push(SignedPermutation { perm: perm.to_vec(), signs: signs.to_vec() });
    })?;
    Ok(out)
}

/// Mean of P' A P over the whole group; equals (Tr A / k) I_k analytically.
pub fn average_conjugation(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = check_square(a, "conjugation argument")?;
    let order = hk_order(k)? as f64;
    let mut acc = DMatrix::zeros(k, k);
    let mut inv = vec![0usize; k];
    for_each_hk(k, |perm, signs| {
        for i in 0..k {
            inv[perm[i]] = i;
        }
        for i in 0..k {
            for j in 0..k {
                acc[(i, j)] += signs[inv[i]] * signs[inv[j]] * a[(inv[i], inv[j])];
            }
        }
    })?;
    Ok(acc / order)
}

/// A finitely supported probability measure on H_k.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(SignedPermutation, f64)>,
}

impl DiscreteMeasure {
    /// Atoms with nonnegative weights summing to 1 (within 1e-12), all on
    /// the same H_k.
    pub fn new(atoms: Vec<(SignedPermutation, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("a measure needs at least one atom".into()));
        }
        let k = atoms[0].0.k();
        let mut total = 0.0;
        for (p, w) in &atoms {
            if p.k() != k {
                return Err(Error::Domain("all atoms must act on the same dimension".into()));
            }
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(Error::Domain(format!("atom weight {w} must be finite and >= 0")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("atom weights must sum to 1, got {total}")));
        }
        Ok(DiscreteMeasure { atoms })
    }

    /// Point mass at the identity.
    pub fn dirac_identity(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        Ok(DiscreteMeasure { atoms: vec![(SignedPermutation::identity(k), 1.0)] })
    }

    /// The uniform (Haar) measure on H_k, fully materialized.
    pub fn uniform(k: usize) -> Result<Self> {
        let order = hk_order(k)? as f64;
        let atoms = enumerate_hk(k)?
            .into_iter()
            .map(|p| (p, 1.0 / order))
            .collect();
        Ok(DiscreteMeasure { atoms })
    }

    pub fn k(&self) -> usize {
        self.atoms[0].0.k()
    }

    pub fn atoms(&self) -> &[(SignedPermutation, f64)] {
        &self.atoms
    }
}

/// The measure-indexed matrix index
/// 1/2 integral (OP)'(Sigma^-1 C_u + C_u Sigma^-1)(OP) dmu. `cu` must be
/// symmetric (population cross-covariances are; symmetrize empirical ones),
/// which makes the output symmetric atom by atom.
pub fn t_mu(
    cu: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    mu: &DiscreteMeasure,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let k = check_square(cu, "cross-covariance")?;
    if sigma.nrows() != k || sigma.ncols() != k {
        return Err(Error::Domain("covariance matrices must share a size".into()));
    }
    if mu.k() != k {
        return Err(Error::Domain(format!(
            "measure acts on dimension {}, matrices have dimension {k}",
            mu.k()
        )));
    }
    check_symmetric(cu, "cross-covariance")?;
    let frame = spectral_frame(sigma, tol)?;
    let sigma_inv = frame.inverse();
    let b = 0.5 * (&sigma_inv * cu + cu * &sigma_inv);
    let a = frame.basis.transpose() * b * &frame.basis;
    let mut t = DMatrix::zeros(k, k);
    for (p, w) in mu.atoms() {
        t += p.conjugate(&a)? * *w;
    }
    Ok(t)
}

/// The identity coefficient of the uniform-measure index:
/// Tr(Sigma^-1 C_u)/k. Needs only positive definiteness, not a simple
/// spectrum.
pub fn t_star_scalar(cu: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let k = check_square(cu, "cross-covariance")?;
    if sigma.nrows() != k || sigma.ncols() != k {
        return Err(Error::Domain("covariance matrices must share a size".into()));
    }
    check_symmetric(sigma, "covariance")?;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("covariance must be positive definite".into()))?;
    Ok(chol.solve(cu).trace() / k as f64)
}

/// Closed form of the uniform-measure index: [`t_star_scalar`] times I_k.
pub fn t_star(cu: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = cu.nrows();
    Ok(DMatrix::identity(k, k) * t_star_scalar(cu, sigma)?)
}

/// Plug-in of [`t_star`] on the empirical covariances of one sample, with
/// the cross-covariance symmetrized. Inverting Sigma_N is delicate when k
/// approaches N; intended for small output dimensions.
pub fn t_star_empirical(s: &PickFreezeSample) -> Result<DMatrix<f64>> {
    let cov = empirical_covariances(s);
    let sym = 0.5 * (&cov.cu + cov.cu.transpose());
    t_star(&sym, &cov.sigma)
}
