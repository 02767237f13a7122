//! Truncated-Gaussian maximum likelihood in one and two dimensions via
//! projected SGD on the negative log-likelihood in natural parameters
//! `(nu, T) = (Σ^{-1} μ, Σ^{-1})`, where the likelihood is convex.
//!
//! The per-step stochastic gradient is the difference between the sufficient
//! statistics of one observed sample and one sample drawn from the current
//! estimated truncated Gaussian; iterates are projected to an eigenvalue box
//! around the empirical initializer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::missingness::IntervalUnion;

/// Rejection-sampling attempt cap; exhausting it signals a truncation set
/// with nearly no mass under the current parameters.
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

/// Product-structured truncation set in one or two dimensions.
#[derive(Debug, Clone)]
pub struct TruncationSet {
    per_dim: Vec<IntervalUnion>,
}

impl TruncationSet {
    pub fn dim1(set: IntervalUnion) -> Self {
        TruncationSet { per_dim: vec![set] }
    }

    /// `S_i × S_j` for the pairwise subproblem.
    pub fn product(si: IntervalUnion, sj: IntervalUnion) -> Self {
        TruncationSet { per_dim: vec![si, sj] }
    }

    pub fn dim(&self) -> usize {
        self.per_dim.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.per_dim.iter().zip(z).all(|(u, &v)| u.contains(v))
    }

    /// Set shifted by `c` (each interval translated), for equivariance checks.
    pub fn shifted(&self, c: &[f64]) -> Self {
        let per_dim = self
            .per_dim
            .iter()
            .zip(c)
            .map(|(u, &ci)| {
                IntervalUnion::new(
                    u.intervals()
                        .iter()
                        .map(|iv| crate::missingness::Interval { lo: iv.lo + ci, hi: iv.hi + ci })
                        .collect(),
                )
            })
            .collect();
        TruncationSet { per_dim }
    }

    pub fn sets(&self) -> &[IntervalUnion] {
        &self.per_dim
    }
}

/// A draw from `N(mu, cov)` conditioned on the set, by rejection with an
/// attempt cap.
pub fn sample_truncated(
    params: &GaussianParams,
    set: &TruncationSet,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    sample_truncated_capped(params, set, DEFAULT_ATTEMPT_CAP, rng)
}

pub fn sample_truncated_capped(
    params: &GaussianParams,
    set: &TruncationSet,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    if params.dim() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "params dim {} vs set dim {}",
            params.dim(),
            set.dim()
        )));
    }
    for attempt in 0..cap {
        let y = params.sample_one(rng)?;
        if set.contains(y.as_slice()) {
            return Ok(y);
        }
        let _ = attempt;
    }
    Err(Error::MassTooLow { attempts: cap })
}

/// Tuning knobs for [`truncated_fit`].
#[derive(Debug, Clone)]
pub struct TruncatedFitConfig {
    /// Minimum observed-sample count accepted by the fit.
    pub min_samples: usize,
    /// SGD step budget; defaults to the sample count.
    pub steps: Option<usize>,
    /// Step-size scale in `eta_t = 1 / (lambda_sc * t)`; when unset it is
    /// derived from the estimated set mass and the empirical spectrum.
    pub lambda_sc: Option<f64>,
    /// Eigenvalue box factor for the precision iterate.
    pub c_dom: f64,
    /// Radius multiplier for the natural-mean ball around the initializer.
    pub r_dom_mult: f64,
    /// Relative movement over the final 10% of iterations above which the
    /// fit is reported as non-convergent.
    pub settle_tol: f64,
    /// Rejection-sampling attempt cap per gradient draw.
    pub attempt_cap: u64,
    /// Draws used to estimate the set mass at initialization.
    pub mass_probe: usize,
}

impl Default for TruncatedFitConfig {
    fn default() -> Self {
        TruncatedFitConfig {
            min_samples: 2000,
            steps: None,
            lambda_sc: None,
            c_dom: 16.0,
            r_dom_mult: 8.0,
            settle_tol: 0.25,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
            mass_probe: 4000,
        }
    }
}

/// Result of a univariate or bivariate truncated fit.
#[derive(Debug, Clone)]
pub struct TruncatedEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    pub final_step: f64,
    /// Set mass under the initializer estimated by the mass probe.
    pub mass_estimate: f64,
}

// Packed small-dimension state: nu = (n0, n1), sym T = (t00, t01, t11).
// Dimension 1 uses only n0 / t00.
#[derive(Debug, Clone, Copy)]
struct NatState {
    nu: [f64; 2],
    t: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct MomentState {
    mean: [f64; 2],
    cov: [f64; 3],
}

fn invert_packed(t: &[f64; 3], dim: usize) -> [f64; 3] {
    if dim == 1 {
        [1.0 / t[0], 0.0, 0.0]
    } else {
        let det = t[0] * t[2] - t[1] * t[1];
        [t[2] / det, -t[1] / det, t[0] / det]
    }
}

fn nat_to_moments(s: &NatState, dim: usize) -> MomentState {
    let cov = invert_packed(&s.t, dim);
    let mean = if dim == 1 {
        [cov[0] * s.nu[0], 0.0]
    } else {
        [cov[0] * s.nu[0] + cov[1] * s.nu[1], cov[1] * s.nu[0] + cov[2] * s.nu[1]]
    };
    MomentState { mean, cov }
}

fn chol_packed(cov: &[f64; 3], dim: usize) -> [f64; 3] {
    if dim == 1 {
        [cov[0].sqrt(), 0.0, 0.0]
    } else {
        let l00 = cov[0].sqrt();
        let l10 = cov[1] / l00;
        let l11 = (cov[2] - l10 * l10).max(1e-300).sqrt();
        [l00, l10, l11]
    }
}

/// Eigenvalues of the packed symmetric 2x2 (or 1x1) matrix.
fn eig_packed(t: &[f64; 3], dim: usize) -> (f64, f64) {
    if dim == 1 {
        (t[0], t[0])
    } else {
        let half_tr = 0.5 * (t[0] + t[2]);
        let disc = (0.5 * (t[0] - t[2])).hypot(t[1]);
        (half_tr - disc, half_tr + disc)
    }
}

/// Clips the eigenvalues of packed symmetric `t` into `[lo, hi]`.
fn clip_eigs_packed(t: &[f64; 3], lo: f64, hi: f64, dim: usize) -> [f64; 3] {
    if dim == 1 {
        return [t[0].clamp(lo, hi), 0.0, 0.0];
    }
    let (l1, l2) = eig_packed(t, 2);
    if l1 >= lo && l2 <= hi {
        return *t;
    }
    // eigenvector for l2: rotate by angle theta of the symmetric matrix
    let (c, s) = if t[1].abs() < 1e-300 && t[0] >= t[2] {
        (1.0, 0.0)
    } else if t[1].abs() < 1e-300 {
        (0.0, 1.0)
    } else {
        let v0 = l2 - t[2];
        let v1 = t[1];
        let n = v0.hypot(v1);
        (v0 / n, v1 / n)
    };
    let e1 = l1.clamp(lo, hi);
    let e2 = l2.clamp(lo, hi);
    // reconstruct: e2 * vv' + e1 * uu' with u orthogonal to v
    [
        e2 * c * c + e1 * s * s,
        e2 * c * s - e1 * s * c,
        e2 * s * s + e1 * c * c,
    ]
}

fn draw_truncated_packed(
    m: &MomentState,
    set: &TruncationSet,
    dim: usize,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<[f64; 2]> {
    let l = chol_packed(&m.cov, dim);
    let mut buf = [0.0f64; 2];
    for _ in 0..cap {
        let z0: f64 = rng.sample(StandardNormal);
        buf[0] = m.mean[0] + l[0] * z0;
        if dim == 2 {
            let z1: f64 = rng.sample(StandardNormal);
            buf[1] = m.mean[1] + l[1] * z0 + l[2] * z1;
        }
        if set.contains(&buf[..dim]) {
            return Ok(buf);
        }
    }
    Err(Error::MassTooLow { attempts: cap })
}

fn frob_packed(s: &NatState, dim: usize) -> f64 {
    if dim == 1 {
        (s.nu[0] * s.nu[0] + s.t[0] * s.t[0]).sqrt()
    } else {
        (s.nu[0] * s.nu[0]
            + s.nu[1] * s.nu[1]
            + s.t[0] * s.t[0]
            + 2.0 * s.t[1] * s.t[1]
            + s.t[2] * s.t[2])
            .sqrt()
    }
}

fn diff_packed(a: &NatState, b: &NatState) -> NatState {
    NatState {
        nu: [a.nu[0] - b.nu[0], a.nu[1] - b.nu[1]],
        t: [a.t[0] - b.t[0], a.t[1] - b.t[1], a.t[2] - b.t[2]],
    }
}

/// Projected SGD fit of a truncated Gaussian from samples known to lie in
/// `set`. Returns the tail-averaged iterate in standard parameterization.
pub fn truncated_fit(
    samples: &[DVector<f64>],
    set: &TruncationSet,
    cfg: &TruncatedFitConfig,
    rng: &mut impl Rng,
) -> Result<TruncatedEstimate> {
    let dim = set.dim();
    if dim == 0 || dim > 2 {
        return Err(Error::InvalidParameter {
            name: "set".into(),
            reason: format!("supported dimensions are 1 and 2, got {dim}"),
        });
    }
    if samples.len() < cfg.min_samples {
        return Err(Error::InvalidParameter {
            name: "samples".into(),
            reason: format!("need at least {} samples, got {}", cfg.min_samples, samples.len()),
        });
    }
    for (k, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::DimensionMismatch(format!("sample {k} has length {}", s.len())));
        }
        if !set.contains(s.as_slice()) {
            return Err(Error::InvalidParameter {
                name: "samples".into(),
                reason: format!("sample {k} lies outside the truncation set"),
            });
        }
    }
    let n = samples.len();

    // center the data at the empirical mean: the natural parameterization is
    // poorly conditioned when the mean is far from the origin, and centering
    // makes the fit shift-equivariant by construction
    let mut center = [0.0f64; 2];
    for s in samples {
        for k in 0..dim {
            center[k] += s[k];
        }
    }
    for v in &mut center {
        *v /= n as f64;
    }
    let centered: Vec<[f64; 2]> = samples
        .iter()
        .map(|s| {
            let mut row = [0.0f64; 2];
            for k in 0..dim {
                row[k] = s[k] - center[k];
            }
            row
        })
        .collect();
    let neg_center: Vec<f64> = center[..dim].iter().map(|v| -v).collect();
    let set = set.shifted(&neg_center);

    // empirical initializer on the centered truncated samples (zero mean)
    let mut cov = [0.0f64; 3];
    for s in &centered {
        cov[0] += s[0] * s[0];
        if dim == 2 {
            cov[1] += s[0] * s[1];
            cov[2] += s[1] * s[1];
        }
    }
    for v in &mut cov {
        *v /= n as f64;
    }
    // keep the initializer comfortably positive definite
    let trace = if dim == 1 { cov[0] } else { cov[0] + cov[2] };
    let floor = (1e-6 * trace / dim as f64).max(f64::MIN_POSITIVE);
    let cov0 = clip_eigs_packed(&cov, floor, f64::INFINITY, dim);

    let (lam_min_hat, lam_max_hat) = eig_packed(&cov0, dim);
    let t0 = invert_packed(&cov0, dim);
    let init = NatState { nu: [0.0; 2], t: t0 };

    // domain: eigenvalue box for T, ball for nu around the initializer
    let t_lo = 1.0 / (cfg.c_dom * lam_max_hat);
    let t_hi = cfg.c_dom / lam_min_hat;
    let r_dom = cfg.r_dom_mult * lam_max_hat.sqrt();

    // probe the set mass under the initializer (drives the default step scale)
    let m_init = nat_to_moments(&init, dim);
    let l_init = chol_packed(&m_init.cov, dim);
    let mut hits = 0usize;
    let mut buf = [0.0f64; 2];
    for _ in 0..cfg.mass_probe {
        let z0: f64 = rng.sample(StandardNormal);
        buf[0] = m_init.mean[0] + l_init[0] * z0;
        if dim == 2 {
            let z1: f64 = rng.sample(StandardNormal);
            buf[1] = m_init.mean[1] + l_init[1] * z0 + l_init[2] * z1;
        }
        if set.contains(&buf[..dim]) {
            hits += 1;
        }
    }
    let mass_estimate = (hits as f64 / cfg.mass_probe as f64).max(1.0 / cfg.mass_probe as f64);

    // The modulus of convexity of the truncated NLL in natural parameters
    // scales with the data scale and degrades with truncation severity; the
    // mass^4 factor keeps the 1/(λt) schedule below it (overestimating the
    // modulus stalls the schedule, underestimating only costs a constant).
    let lambda_sc = cfg
        .lambda_sc
        .unwrap_or(0.025 * mass_estimate.powi(4) * lam_max_hat);
    // cap on early steps: a raw 1/(λ·1) first step would throw the iterate to
    // the domain boundary where the set can lose all its mass
    let eta_cap = 0.5 / lam_max_hat;
    let steps = cfg.steps.unwrap_or(n).max(1);

    let mut state = init;
    let mut moments = nat_to_moments(&state, dim);
    let half = steps / 2;
    let mut tail_sum = NatState { nu: [0.0; 2], t: [0.0; 3] };
    let mut tail_count = 0usize;
    let mut settle_snapshot = state;
    let settle_mark = steps - steps / 10;
    let mut final_step = 0.0;

    // cycle through the observed samples in a shuffled order
    let mut order: Vec<u32> = (0..n as u32).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);

    let mut recoveries = 0usize;
    for t in 1..=steps {
        let x = &centered[order[(t - 1) % n] as usize];
        let y = match draw_truncated_packed(&moments, &set, dim, cfg.attempt_cap, rng) {
            Ok(y) => y,
            // a transient excursion can park the iterate where the set has no
            // mass; restart from the (always feasible) empirical initializer
            // and only propagate if it keeps happening
            Err(e @ Error::MassTooLow { .. }) => {
                recoveries += 1;
                if recoveries > 50 {
                    return Err(e);
                }
                state = init;
                moments = nat_to_moments(&state, dim);
                continue;
            }
            Err(e) => return Err(e),
        };
        let eta = (1.0 / (lambda_sc * t as f64)).min(eta_cap);
        final_step = eta;

        // gradient: sufficient statistics of the model draw minus the sample
        state.nu[0] -= eta * (y[0] - x[0]);
        state.t[0] -= eta * 0.5 * (x[0] * x[0] - y[0] * y[0]);
        if dim == 2 {
            state.nu[1] -= eta * (y[1] - x[1]);
            state.t[1] -= eta * 0.5 * (x[0] * x[1] - y[0] * y[1]);
            state.t[2] -= eta * 0.5 * (x[1] * x[1] - y[1] * y[1]);
        }

        // project T to the eigenvalue box and nu to the ball around nu0
        state.t = clip_eigs_packed(&state.t, t_lo, t_hi, dim);
        let dn = [state.nu[0] - init.nu[0], state.nu[1] - init.nu[1]];
        let dist = (dn[0] * dn[0] + dn[1] * dn[1]).sqrt();
        if dist > r_dom {
            let scale = r_dom / dist;
            state.nu[0] = init.nu[0] + dn[0] * scale;
            state.nu[1] = init.nu[1] + dn[1] * scale;
        }

        moments = nat_to_moments(&state, dim);
        if t > half {
            tail_sum.nu[0] += state.nu[0];
            tail_sum.nu[1] += state.nu[1];
            tail_sum.t[0] += state.t[0];
            tail_sum.t[1] += state.t[1];
            tail_sum.t[2] += state.t[2];
            tail_count += 1;
        }
        if t == settle_mark {
            settle_snapshot = state;
        }
    }

    let movement = frob_packed(&diff_packed(&state, &settle_snapshot), dim)
        / (1.0 + frob_packed(&state, dim));
    if movement > cfg.settle_tol {
        return Err(Error::NonConvergent { movement, tol: cfg.settle_tol });
    }

    let avg = NatState {
        nu: [tail_sum.nu[0] / tail_count as f64, tail_sum.nu[1] / tail_count as f64],
        t: [
            tail_sum.t[0] / tail_count as f64,
            tail_sum.t[1] / tail_count as f64,
            tail_sum.t[2] / tail_count as f64,
        ],
    };
    let out = nat_to_moments(&avg, dim);
    let mut mean = DVector::from_column_slice(&out.mean[..dim]);
    for k in 0..dim {
        mean[k] += center[k];
    }
    let cov = if dim == 1 {
        DMatrix::from_row_slice(1, 1, &[out.cov[0]])
    } else {
        DMatrix::from_row_slice(2, 2, &[out.cov[0], out.cov[1], out.cov[1], out.cov[2]])
    };
    Ok(TruncatedEstimate { mean, cov, iterations: steps, final_step, mass_estimate })
}
