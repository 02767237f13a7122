//! Monte Carlo auditors for the model assumptions: pairwise observation
//! mass, subset observation mass, and anchored-pattern probabilities.
//!
//! The auditors quantify over the *true* sampling distribution, so they take
//! the ground-truth parameters; they are simulation-side diagnostics.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::missingness::{MissingnessModel, SelfCensoringModel};

/// Binomial standard error of a proportion estimate.
fn se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Estimated pairwise observation mass `min_{i<j} Pr[y_i in S_i and y_j in S_j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairAudit {
    pub alpha_min: f64,
    pub argmin: (usize, usize),
    pub std_error: f64,
    pub mc_samples: usize,
}

pub fn audit_alpha_pair(
    params: &GaussianParams,
    model: &SelfCensoringModel,
    mc: usize,
    rng: &mut impl Rng,
) -> Result<PairAudit> {
    let d = model.dim();
    if d < 2 {
        return Err(Error::InvalidParameter {
            name: "model".into(),
            reason: "pair audit needs dimension >= 2".into(),
        });
    }
    let mut joint = vec![vec![0usize; d]; d];
    for _ in 0..mc {
        let y = params.sample_one(rng)?;
        let mem: Vec<bool> = (0..d).map(|i| model.sets[i].contains(y[i])).collect();
        for i in 0..d {
            for j in (i + 1)..d {
                if mem[i] && mem[j] {
                    joint[i][j] += 1;
                }
            }
        }
    }
    let mut best = (f64::INFINITY, (0, 1));
    for i in 0..d {
        for j in (i + 1)..d {
            let p = joint[i][j] as f64 / mc as f64;
            if p < best.0 {
                best = (p, (i, j));
            }
        }
    }
    Ok(PairAudit { alpha_min: best.0, argmin: best.1, std_error: se(best.0, mc), mc_samples: mc })
}

/// Estimated subset observation mass `min_{|A| = beta d} Pr[A ⊆ S(y)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetAudit {
    pub alpha_min: f64,
    pub argmin: Vec<usize>,
    pub std_error: f64,
    pub mc_samples: usize,
    pub subsets_checked: usize,
    /// Whether every subset of size `beta d` was enumerated; when false,
    /// the reported minimum is over a random sample of subsets.
    pub exhaustive: bool,
    pub beta: f64,
}

/// Cap on exhaustive subset enumeration; above it, subsets are sampled.
const EXHAUSTIVE_CAP: u128 = 10_000;
const SAMPLED_SUBSETS: usize = 1_000;

fn binom(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut num: u128 = 1;
    for i in 0..k {
        num = num.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    num
}

pub fn audit_alpha_subset(
    params: &GaussianParams,
    model: &MissingnessModel,
    beta: f64,
    mc: usize,
    rng: &mut impl Rng,
) -> Result<SubsetAudit> {
    let d = model.dim();
    let beta_d = beta * d as f64;
    let k = beta_d.round() as usize;
    if k == 0 || (beta_d - k as f64).abs() > 1e-9 {
        return Err(Error::InvalidBeta { beta, beta_d });
    }

    let subsets: Vec<Vec<usize>> = if binom(d, k) <= EXHAUSTIVE_CAP {
        enumerate_subsets(d, k)
    } else {
        let mut set = Vec::with_capacity(SAMPLED_SUBSETS);
        let mut idx: Vec<usize> = (0..d).collect();
        for _ in 0..SAMPLED_SUBSETS {
            idx.shuffle(rng);
            let mut s: Vec<usize> = idx[..k].to_vec();
            s.sort_unstable();
            set.push(s);
        }
        set
    };
    let exhaustive = binom(d, k) <= EXHAUSTIVE_CAP;

    let mut counts = vec![0usize; subsets.len()];
    for _ in 0..mc {
        let y = params.sample_one(rng)?;
        let seen = model.seen_set(&y);
        for (s, subset) in subsets.iter().enumerate() {
            if subset.iter().all(|i| seen.binary_search(i).is_ok()) {
                counts[s] += 1;
            }
        }
    }
    let (s_min, &c_min) = counts
        .iter()
        .enumerate()
        .min_by_key(|(_, &c)| c)
        .expect("at least one subset");
    let p = c_min as f64 / mc as f64;
    Ok(SubsetAudit {
        alpha_min: p,
        argmin: subsets[s_min].clone(),
        std_error: se(p, mc),
        mc_samples: mc,
        subsets_checked: subsets.len(),
        exhaustive,
        beta,
    })
}

fn enumerate_subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, k, cur, out);
            cur.pop();
        }
    }
    rec(0, d, k, &mut cur, &mut out);
    out
}

/// Binned estimate of the anchoring parameter: the smallest nonzero
/// conditional pattern probability across observed `(y_C-bin, pattern)` cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorAudit {
    pub gamma_min: f64,
    pub bin_width: f64,
    pub cells: usize,
    pub mc_samples: usize,
    /// Bins with fewer samples than this are skipped when minimizing.
    pub min_bin_count: usize,
}

/// Verifies `C ⊆ S(y)` on every draw and estimates gamma by binning `y_C`
/// into hypercubes of width `0.25 * sqrt(lambda_max)`. The binning is an
/// approximation to the exact conditioning in the anchoring definition.
pub fn audit_anchoring(
    params: &GaussianParams,
    model: &MissingnessModel,
    anchor: &[usize],
    mc: usize,
    rng: &mut impl Rng,
) -> Result<AnchorAudit> {
    let d = model.dim();
    if anchor.is_empty() || anchor.iter().any(|&c| c >= d) {
        return Err(Error::InvalidParameter {
            name: "anchor".into(),
            reason: "anchor set must be nonempty and within dimension".into(),
        });
    }
    let lambda_max = nalgebra::SymmetricEigen::new(params.cov().clone())
        .eigenvalues
        .iter()
        .fold(f64::MIN, |m, &v| m.max(v));
    let bin_width = 0.25 * lambda_max.sqrt();
    let min_bin_count = 50;

    // (bin key) -> (pattern -> count, total)
    let mut bins: HashMap<Vec<i64>, (HashMap<Vec<usize>, usize>, usize)> = HashMap::new();
    for draw in 0..mc {
        let y = params.sample_one(rng)?;
        let seen = model.seen_set(&y);
        for &c in anchor {
            if seen.binary_search(&c).is_err() {
                return Err(Error::AnchorViolated { coord: c, draw });
            }
        }
        let key: Vec<i64> = anchor.iter().map(|&c| (y[c] / bin_width).floor() as i64).collect();
        let cell = bins.entry(key).or_default();
        *cell.0.entry(seen).or_default() += 1;
        cell.1 += 1;
    }

    let mut gamma_min = 1.0f64;
    let mut cells = 0usize;
    for (pattern_counts, total) in bins.values() {
        if *total < min_bin_count {
            continue;
        }
        for &count in pattern_counts.values() {
            cells += 1;
            gamma_min = gamma_min.min(count as f64 / *total as f64);
        }
    }
    Ok(AnchorAudit { gamma_min, bin_width, cells, mc_samples: mc, min_bin_count })
}

/// Aggregated assumption estimates for a scenario, as reported by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_pair_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_subset_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_bin_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_sampling_exhaustive: Option<bool>,
    pub mc_samples: usize,
    pub std_errors: HashMap<String, f64>,
}
