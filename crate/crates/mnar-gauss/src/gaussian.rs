//! Dense Gaussian primitives: parameters, factorization, conditioning,
//! sampling and statistical-distance metrics used by every estimator.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative eigenvalue floor used when none is configured: the Cholesky
/// pivot threshold becomes `1e-9 * trace / d`.
pub const DEFAULT_REL_FLOOR: f64 = 1e-9;

/// Relative symmetry tolerance enforced at construction.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Mean vector and strictly positive definite covariance, with a lazily
/// computed, cached lower Cholesky factor.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    rel_floor: f64,
    chol: OnceLock<Result<DMatrix<f64>>>,
}

impl Clone for GaussianParams {
    fn clone(&self) -> Self {
        GaussianParams {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
            rel_floor: self.rel_floor,
            chol: OnceLock::new(),
        }
    }
}

impl GaussianParams {
    /// Validates dimensions and symmetry (relative tolerance 1e-12), then
    /// stores the exactly symmetrized matrix. Factorization is deferred to
    /// first use.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::with_rel_floor(mean, cov, DEFAULT_REL_FLOOR)
    }

    pub fn with_rel_floor(mean: DVector<f64>, cov: DMatrix<f64>, rel_floor: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if rel_floor <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "rel_floor".into(),
                reason: "must be positive".into(),
            });
        }
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidParameter {
                        name: "cov".into(),
                        reason: format!(
                            "not symmetric at ({i},{j}): {} vs {}",
                            cov[(i, j)],
                            cov[(j, i)]
                        ),
                    });
                }
            }
        }
        let mut sym = cov.clone();
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        Ok(GaussianParams { mean, cov: sym, rel_floor, chol: OnceLock::new() })
    }

    pub fn standard(d: usize) -> Self {
        GaussianParams::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor, computed on first use and cached.
    pub fn chol(&self) -> Result<&DMatrix<f64>> {
        let stored = self
            .chol
            .get_or_init(|| cholesky_lower(&self.cov, self.rel_floor));
        match stored {
            Ok(l) => Ok(l),
            Err(e) => Err(clone_factor_error(e)),
        }
    }

    /// `sqrt(v' Σ^{-1} v)` via a triangular solve against the Cholesky factor.
    pub fn mahalanobis_norm(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} vs dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let l = self.chol()?;
        let y = l
            .solve_lower_triangular(v)
            .ok_or_else(|| Error::SingularBlock { context: "cholesky factor".into() })?;
        Ok(y.norm())
    }

    /// Log density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let l = self.chol()?;
        let diff = x - &self.mean;
        let y = l
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::SingularBlock { context: "cholesky factor".into() })?;
        let log_det = 2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let d = self.dim() as f64;
        Ok(-0.5 * (y.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// `n` i.i.d. draws as rows; deterministic given the generator state.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let l = self.chol()?;
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for r in 0..n {
            for i in 0..d {
                z[i] = rng.sample(StandardNormal);
            }
            let row = &self.mean + l * &z;
            out.row_mut(r).copy_from(&row.transpose());
        }
        Ok(out)
    }

    /// One draw.
    pub fn sample_one(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let d = self.dim();
        let l = self.chol()?;
        let mut z = DVector::zeros(d);
        for i in 0..d {
            z[i] = rng.sample(StandardNormal);
        }
        Ok(&self.mean + l * z)
    }

    /// Gaussian conditional distribution of the hidden coordinates given
    /// `y_A = x` for the (sorted) seen set `A`.
    ///
    /// `seen` may be empty (returns the unconditional distribution) or the
    /// full coordinate set (returns a zero-dimensional conditional).
    pub fn condition(&self, seen: &[usize], values: &[f64]) -> Result<ConditionalGaussian> {
        let d = self.dim();
        if values.len() != seen.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} seen coordinates but {} values",
                seen.len(),
                values.len()
            )));
        }
        if seen.windows(2).any(|w| w[0] >= w[1]) || seen.iter().any(|&i| i >= d) {
            return Err(Error::InvalidParameter {
                name: "seen".into(),
                reason: "must be strictly increasing and within dimension".into(),
            });
        }
        let hidden: Vec<usize> = (0..d).filter(|i| !seen.contains(i)).collect();
        let h = hidden.len();
        if seen.is_empty() {
            let w = cholesky_lower(&self.cov, self.rel_floor)?;
            return Ok(ConditionalGaussian {
                hidden,
                mu_cond: self.mean.clone(),
                sigma_cond: self.cov.clone(),
                whitener: w,
            });
        }
        if h == 0 {
            return Ok(ConditionalGaussian {
                hidden,
                mu_cond: DVector::zeros(0),
                sigma_cond: DMatrix::zeros(0, 0),
                whitener: DMatrix::zeros(0, 0),
            });
        }

        let a = seen.len();
        let mut sigma_aa = DMatrix::zeros(a, a);
        for (r, &i) in seen.iter().enumerate() {
            for (c, &j) in seen.iter().enumerate() {
                sigma_aa[(r, c)] = self.cov[(i, j)];
            }
        }
        let mut sigma_ha = DMatrix::zeros(h, a);
        for (r, &i) in hidden.iter().enumerate() {
            for (c, &j) in seen.iter().enumerate() {
                sigma_ha[(r, c)] = self.cov[(i, j)];
            }
        }
        let mut sigma_hh = DMatrix::zeros(h, h);
        for (r, &i) in hidden.iter().enumerate() {
            for (c, &j) in hidden.iter().enumerate() {
                sigma_hh[(r, c)] = self.cov[(i, j)];
            }
        }

        let l_aa = cholesky_lower(&sigma_aa, self.rel_floor).map_err(|_| Error::SingularBlock {
            context: format!("{seen:?}"),
        })?;
        // B = Σ_AA^{-1} Σ_AH via two triangular solves
        let rhs = sigma_ha.transpose();
        let y = l_aa
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::SingularBlock { context: format!("{seen:?}") })?;
        let b = l_aa
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::SingularBlock { context: format!("{seen:?}") })?;

        let mut delta = DVector::zeros(a);
        for (c, &j) in seen.iter().enumerate() {
            delta[c] = values[c] - self.mean[j];
        }
        let mut mu_h = DVector::zeros(h);
        for (r, &i) in hidden.iter().enumerate() {
            mu_h[r] = self.mean[i];
        }
        let mu_cond = mu_h + b.transpose() * &delta;
        let mut sigma_cond = sigma_hh - sigma_ha * &b;
        // exact symmetrization; the Schur complement is symmetric up to rounding
        for i in 0..h {
            for j in 0..i {
                let v = 0.5 * (sigma_cond[(i, j)] + sigma_cond[(j, i)]);
                sigma_cond[(i, j)] = v;
                sigma_cond[(j, i)] = v;
            }
        }
        let whitener = cholesky_lower(&sigma_cond, self.rel_floor).map_err(|_| Error::SingularBlock {
            context: format!("conditional on {seen:?}"),
        })?;
        Ok(ConditionalGaussian { hidden, mu_cond, sigma_cond, whitener })
    }
}

fn clone_factor_error(e: &Error) -> Error {
    match e {
        Error::NotPositiveDefinite { row, pivot, floor } => {
            Error::NotPositiveDefinite { row: *row, pivot: *pivot, floor: *floor }
        }
        other => Error::SingularBlock { context: format!("{other}") },
    }
}

/// Conditional distribution of hidden coordinates given observed values,
/// with the whitening factor `W` such that `W W' = Σ_cond`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    /// Hidden coordinate indices, increasing.
    pub hidden: Vec<usize>,
    pub mu_cond: DVector<f64>,
    pub sigma_cond: DMatrix<f64>,
    pub whitener: DMatrix<f64>,
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// Fails with `NotPositiveDefinite` if any pivot drops to or below
/// `rel_floor * trace / d`, signaling a degenerate covariance.
pub fn cholesky_lower(m: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let floor = rel_floor * m.trace() / d as f64;
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { row: j, pivot, floor });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Monte Carlo total-variation estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct TvEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// One-sided Monte Carlo TV estimator: draws `y_i ~ p` and averages
/// `max(0, 1 - q(y_i)/p(y_i))`. Unbiased for TV up to the clipping at 0,
/// cheap, and comes with a standard-error report.
pub fn tv_distance_mc(
    p: &GaussianParams,
    q: &GaussianParams,
    n: usize,
    rng: &mut impl Rng,
) -> Result<TvEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", p.dim(), q.dim())));
    }
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n".into(), reason: "must be positive".into() });
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let y = p.sample_one(rng)?;
        let w = (1.0 - (q.log_pdf(&y)? - p.log_pdf(&y)?).exp()).max(0.0);
        sum += w;
        sum_sq += w * w;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Ok(TvEstimate { value: mean, std_error: (var / nf).sqrt(), n })
}
