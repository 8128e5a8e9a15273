//! Sampling-importance-resampling: proposal draws are weighted by the ratio
//! of the phylo-HMM likelihood of the observed alignment to the proposal
//! likelihood of the augmented alignment, then resampled without replacement.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mcmc::{write_trace_with_weights, PhyloSample};
use crate::phylo_hmm::phylo_hmm_log_likelihood;
use crate::phylogeny::Msa;
use crate::prior::NaivePrior;
use crate::substitution::discrete_gamma_rates;

/// Default ratio of pool size to retained draws.
pub const POOL_RATIO: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SirConfig {
    pub n_pool: usize,
    pub n_final: usize,
    pub seed: u64,
}

impl SirConfig {
    pub fn new(n_pool: usize, n_final: usize, seed: u64) -> Result<Self> {
        if n_final == 0 || n_final > n_pool {
            return Err(Error::param(format!(
                "need 1 <= n_final ({n_final}) <= n_pool ({n_pool})"
            )));
        }
        Ok(Self { n_pool, n_final, seed })
    }

    pub fn with_ratio(n_final: usize, seed: u64) -> Result<Self> {
        Self::new(n_final * POOL_RATIO, n_final, seed)
    }
}

/// log w for one proposal draw. Any row of `msa` named after the naive leaf
/// is dropped first, so the numerator only sees observed sequences.
pub fn compute_log_weight(sample: &PhyloSample, msa: &Msa, prior: &NaivePrior, k: usize) -> Result<f64> {
    let observed = msa.without(sample.tree.naive_label());
    let rm = discrete_gamma_rates(sample.alpha, k)?;
    let ll = phylo_hmm_log_likelihood(&sample.tree, &sample.params, &rm, &observed, prior)?;
    Ok(ll - sample.proposal_loglik)
}

#[derive(Debug, Clone)]
pub struct WeightedPool {
    pub samples: Vec<PhyloSample>,
    pub log_weights: Vec<f64>,
}

impl WeightedPool {
    /// Weights every sample in parallel.
    pub fn compute(samples: Vec<PhyloSample>, msa: &Msa, prior: &NaivePrior, k: usize) -> Result<Self> {
        let log_weights = samples
            .par_iter()
            .map(|s| compute_log_weight(s, msa, prior, k))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { samples, log_weights })
    }

    pub fn finite_count(&self) -> usize {
        self.log_weights.iter().filter(|w| w.is_finite()).count()
    }

    /// Effective sample size, 1 / Σ w̃², of the normalized weights.
    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.log_weights)
    }
}

pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    1.0 / w.iter().map(|x| (x / s) * (x / s)).sum::<f64>()
}

/// Indices of `n` items drawn without replacement with probability
/// proportional to `exp(log_weights)`: each finite item is keyed by its log
/// weight plus Gumbel noise and the `n` largest keys are kept, in descending key order.
pub fn resample_indices<R: Rng + ?Sized>(log_weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(log_weights.len());
    for (i, &lw) in log_weights.iter().enumerate() {
        // Noise is drawn for every item so that the stream does not depend on which weights are finite.
        let u: f64 = rng.random();
        if lw.is_finite() {
            keys.push((lw - (-(u.max(f64::MIN_POSITIVE)).ln()).ln(), i));
        }
    }
    if keys.len() < n {
        return Err(Error::InsufficientPool {
            finite: keys.len(),
            requested: n,
        });
    }
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(n).map(|(_, i)| i).collect())
}

pub fn resample_without_replacement<R: Rng + ?Sized>(
    pool: &WeightedPool,
    config: &SirConfig,
    rng: &mut R,
) -> Result<Vec<PhyloSample>> {
    let idx = resample_indices(&pool.log_weights, config.n_final, rng)?;
    Ok(idx.into_iter().map(|i| pool.samples[i].clone()).collect())
}

/// Evenly spaced subset of `n` draws, used to thin a trace down to the pool size.
pub fn evenly_spaced<T: Clone>(items: &[T], n: usize) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::InsufficientPool {
            finite: items.len(),
            requested: n,
        });
    }
    Ok((0..n).map(|i| items[i * items.len() / n].clone()).collect())
}

/// Writes the retained draws as Newick lines plus a parameter table with a `log_weight` column.
pub fn write_posterior_pool(
    samples: &[PhyloSample],
    log_weights: &[f64],
    newick_path: &Path,
    params_path: &Path,
) -> Result<()> {
    write_trace_with_weights(samples, Some(log_weights), newick_path, params_path)
}
