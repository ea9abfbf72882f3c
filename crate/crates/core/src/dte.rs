//! Distributional treatment effects.
//!
//! The counterfactual outcome distribution of the treated unit is sampled by a
//! two-step bootstrap over the untreated units' post-period outcomes, and two
//! samples can be compared with a kernel MMD permutation test.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelData;
use crate::rng::rng_from_seed;
use crate::solver::WeightVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DteError {
    #[error("panel has no post-treatment periods")]
    EmptyPost,
    #[error("probability {0} is outside (0, 1)")]
    BadProb(f64),
    #[error("bootstrap size must exceed 1, got {0}")]
    BadSize(usize),
    #[error("weights do not match the panel: {0}")]
    BadWeights(String),
    #[error("sample needs at least {need} values, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub draws: Vec<f64>,
    pub l: usize,
    pub seed: u64,
    pub weights_used: WeightVector,
}

impl BootstrapSample {
    /// One-column CSV with header `draw`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DteError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| DteError::Io(e.to_string());
        wtr.write_record(["draw"]).map_err(io)?;
        for d in &self.draws {
            wtr.write_record([d.to_string()]).map_err(io)?;
        }
        wtr.flush().map_err(|e| DteError::Io(e.to_string()))
    }
}

/// Draws `l` counterfactual outcomes. Each draw (i) resamples one post-period
/// outcome from every untreated unit, then (ii) picks unit `j` with
/// probability `ŵ_j` and emits its resampled value, plus the intercept when
/// the weights carry one.
pub fn bootstrap_counterfactual(
    panel: &PanelData,
    weights: &WeightVector,
    l: usize,
    seed: u64,
) -> Result<BootstrapSample, DteError> {
    if l < 2 {
        return Err(DteError::BadSize(l));
    }
    let t1 = panel.t1();
    if t1 == 0 {
        return Err(DteError::EmptyPost);
    }
    let j = panel.n_controls();
    if weights.len() != j {
        return Err(DteError::BadWeights(format!("{} weights for {j} untreated units", weights.len())));
    }
    let clipped: Vec<f64> = weights.weights.iter().map(|w| w.max(0.0)).collect();
    let chooser = WeightedIndex::new(&clipped).map_err(|e| DteError::BadWeights(e.to_string()))?;
    let t0 = panel.t0();
    let shift = weights.intercept.unwrap_or(0.0);
    let mut rng = rng_from_seed(seed);
    let mut resampled = vec![0.0; j];
    let draws = (0..l)
        .map(|_| {
            for (u, slot) in resampled.iter_mut().enumerate() {
                *slot = panel.y(u + 1, t0 + rng.random_range(0..t1));
            }
            resampled[chooser.sample(&mut rng)] + shift
        })
        .collect();
    Ok(BootstrapSample { draws, l, seed, weights_used: weights.clone() })
}

/// Empirical quantiles with linear interpolation between order statistics
/// (`h = (n - 1)·p`).
pub fn quantiles(draws: &[f64], probs: &[f64]) -> Result<Vec<f64>, DteError> {
    if draws.is_empty() {
        return Err(DteError::SampleTooSmall { need: 1, got: 0 });
    }
    if let Some(&p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(DteError::BadProb(p));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(probs
        .iter()
        .map(|&p| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    pub mmd2: f64,
    pub p_value: f64,
    pub bandwidth: f64,
    pub permutations: usize,
}

impl MmdReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "mmd2": self.mmd2,
            "p_value": self.p_value,
            "bandwidth": self.bandwidth,
            "permutations": self.permutations,
        })
    }
}

/// Median pairwise distance of the pooled sample (1 if all values coincide).
pub fn median_heuristic(pooled: &[f64]) -> f64 {
    let n = pooled.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            d.push((pooled[i] - pooled[k]).abs());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

struct Gram {
    k: Vec<f64>,
    n: usize,
}

impl Gram {
    fn new(pooled: &[f64], bandwidth: f64) -> Self {
        let n = pooled.len();
        let denom = 2.0 * bandwidth * bandwidth;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = (-(pooled[i] - pooled[j]).powi(2) / denom).exp();
            }
        }
        Self { k, n }
    }

    fn block_sum(&self, rows: &[usize], cols: &[usize]) -> f64 {
        rows.iter().map(|&i| cols.iter().map(|&j| self.k[i * self.n + j]).sum::<f64>()).sum()
    }

    fn diag_sum(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.k[i * self.n + i]).sum()
    }

    /// Unbiased MMD² between the index sets `x` and `y`.
    fn mmd2(&self, x: &[usize], y: &[usize]) -> f64 {
        let m = x.len() as f64;
        let n = y.len() as f64;
        let kxx = self.block_sum(x, x) - self.diag_sum(x);
        let kyy = self.block_sum(y, y) - self.diag_sum(y);
        let kxy = self.block_sum(x, y);
        kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
    }
}

/// Unbiased squared MMD with a Gaussian kernel of the given bandwidth.
pub fn mmd2_unbiased(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let gram = Gram::new(&pooled, bandwidth);
    let x: Vec<usize> = (0..a.len()).collect();
    let y: Vec<usize> = (a.len()..pooled.len()).collect();
    gram.mmd2(&x, &y)
}

/// Two-sample permutation test of `H₀: a and b share a distribution`.
///
/// Gaussian kernel with median-heuristic bandwidth; the p-value is
/// `(1 + #{permuted ≥ observed}) / (permutations + 1)`.
pub fn mmd_test(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<MmdReport, DteError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(DteError::SampleTooSmall { need: 2, got: s.len() });
        }
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let bandwidth = median_heuristic(&pooled);
    let gram = Gram::new(&pooled, bandwidth);
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let observed = gram.mmd2(&idx[..a.len()], &idx[a.len()..]);
    let mut rng = rng_from_seed(seed);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        idx.shuffle(&mut rng);
        if gram.mmd2(&idx[..a.len()], &idx[a.len()..]) >= observed {
            exceed += 1;
        }
    }
    Ok(MmdReport {
        mmd2: observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        bandwidth,
        permutations,
    })
}
