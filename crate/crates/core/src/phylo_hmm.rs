//! The phylo-HMM: naive-conditional phylogenetic emissions marginalized over
//! rate classes, the forward algorithm, backward sampling of the naive
//! sequence, and Viterbi decoding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::phylogeny::{
    branch_transitions, log_mean_exp, prune_into, CladeTree, Msa, PartialLikelihoods, SitePatterns, TipMap, NAIVE,
};
use crate::prior::NaivePrior;
use crate::substitution::{build_rate_matrix, GtrParams, Matrix4, RateMatrix, RateModel};
use crate::util::{log_sum_exp, sample_log_index};

/// Log emission values; `log_em[j][i]` is the log of the rate-averaged
/// likelihood of column `j` given naive base `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    pub log_em: Vec<[f64; 4]>,
}

impl EmissionTable {
    pub fn len(&self) -> usize {
        self.log_em.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_em.is_empty()
    }
}

/// Per-pattern, per-rate partial likelihoods for one tree sample, kept so
/// that rate and ancestral-state sampling reuse the emission computation.
pub struct ConditionalLikelihoods {
    pub patterns: SitePatterns,
    /// `partials[pattern][rate]`.
    pub partials: Vec<Vec<PartialLikelihoods>>,
    /// `transitions[rate][node]`.
    pub transitions: Vec<Vec<Matrix4>>,
    pub q: RateMatrix,
}

impl ConditionalLikelihoods {
    pub fn compute(tree: &CladeTree, params: &GtrParams, rm: &RateModel, msa: &Msa) -> Result<Self> {
        let q = build_rate_matrix(params)?;
        let map = TipMap::bind(tree, msa)?;
        let patterns = SitePatterns::compress(msa);
        let transitions: Vec<Vec<Matrix4>> = rm.rates.iter().map(|&r| branch_transitions(tree, &q, r)).collect();
        let partials = patterns
            .patterns
            .iter()
            .map(|pattern| {
                let states = map.states(|r| pattern[r]);
                transitions
                    .iter()
                    .map(|trans| {
                        let mut out = PartialLikelihoods::new(tree.len());
                        prune_into(tree, trans, &states, &mut out);
                        out
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            patterns,
            partials,
            transitions,
            q,
        })
    }

    /// Partials for alignment column `column` under rate class `rate`.
    pub fn column(&self, column: usize, rate: usize) -> &PartialLikelihoods {
        &self.partials[self.patterns.column_pattern[column]][rate]
    }

    /// log p(column | naive state, rate class) for every class.
    pub fn per_rate_log_likelihoods(&self, column: usize, naive_state: usize) -> Vec<f64> {
        self.partials[self.patterns.column_pattern[column]]
            .iter()
            .map(|p| p.log_value(NAIVE, naive_state))
            .collect()
    }

    pub fn emissions(&self) -> EmissionTable {
        let per_pattern: Vec<[f64; 4]> = self
            .partials
            .iter()
            .map(|by_rate| {
                std::array::from_fn(|s| {
                    let v: Vec<f64> = by_rate.iter().map(|p| p.log_value(NAIVE, s)).collect();
                    log_mean_exp(&v)
                })
            })
            .collect();
        EmissionTable {
            log_em: self.patterns.column_pattern.iter().map(|&p| per_pattern[p]).collect(),
        }
    }
}

/// Emission table for one tree sample. Alignment rows must match the tree's
/// tips; a row for the naive leaf, if present, is ignored.
pub fn compute_emissions(tree: &CladeTree, params: &GtrParams, rm: &RateModel, msa: &Msa) -> Result<EmissionTable> {
    let q = build_rate_matrix(params)?;
    let map = TipMap::bind(tree, msa)?;
    let patterns = SitePatterns::compress(msa);
    let transitions: Vec<Vec<Matrix4>> = rm.rates.iter().map(|&r| branch_transitions(tree, &q, r)).collect();
    let mut work = PartialLikelihoods::new(tree.len());
    let mut per_rate = vec![[0.0; 4]; rm.k()];
    let per_pattern: Vec<[f64; 4]> = patterns
        .patterns
        .iter()
        .map(|pattern| {
            let mut states = map.states(|r| pattern[r]);
            states[NAIVE] = crate::dna::MISSING;
            for (k, trans) in transitions.iter().enumerate() {
                prune_into(tree, trans, &states, &mut work);
                per_rate[k] = std::array::from_fn(|s| work.log_value(NAIVE, s));
            }
            std::array::from_fn(|s| {
                let v: Vec<f64> = per_rate.iter().map(|r| r[s]).collect();
                log_mean_exp(&v)
            })
        })
        .collect();
    Ok(EmissionTable {
        log_em: patterns.column_pattern.iter().map(|&p| per_pattern[p]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMessages {
    /// `log_alpha[j][i]` = log p(columns 1..=j, naive base i at j).
    pub log_alpha: Vec<[f64; 4]>,
    pub log_likelihood: f64,
}

fn check_lengths(prior: &NaivePrior, em: &EmissionTable) -> Result<()> {
    if prior.len() != em.len() {
        return Err(Error::DataMismatch(format!(
            "prior length {} does not match alignment width {}",
            prior.len(),
            em.len()
        )));
    }
    Ok(())
}

pub fn forward(prior: &NaivePrior, em: &EmissionTable) -> Result<ForwardMessages> {
    check_lengths(prior, em)?;
    let mut log_alpha = Vec::with_capacity(em.len());
    let first: [f64; 4] = std::array::from_fn(|i| prior.log_initial()[i] + em.log_em[0][i]);
    log_alpha.push(first);
    for j in 1..em.len() {
        let prev = log_alpha[j - 1];
        let trans = prior.log_transition(j - 1);
        let next: [f64; 4] = std::array::from_fn(|b| {
            let terms: [f64; 4] = std::array::from_fn(|a| prev[a] + trans[a][b]);
            log_sum_exp(&terms) + em.log_em[j][b]
        });
        log_alpha.push(next);
    }
    let log_likelihood = log_sum_exp(log_alpha.last().expect("non-empty"));
    Ok(ForwardMessages {
        log_alpha,
        log_likelihood,
    })
}

/// Exact draw of the naive sequence from its posterior given the tree sample,
/// sampling position n first and moving leftwards.
pub fn backward_sample_naive<R: Rng + ?Sized>(
    prior: &NaivePrior,
    em: &EmissionTable,
    fwd: &ForwardMessages,
    rng: &mut R,
) -> Result<Vec<u8>> {
    check_lengths(prior, em)?;
    if fwd.log_alpha.len() != em.len() {
        return Err(Error::DataMismatch("forward messages do not match emissions".into()));
    }
    let n = em.len();
    let mut out = vec![0u8; n];
    let impossible = || Error::ImpossibleData("every naive sequence has zero posterior probability".into());
    let mut next = sample_log_index(&fwd.log_alpha[n - 1], rng).ok_or_else(impossible)?;
    out[n - 1] = next as u8;
    for j in (0..n - 1).rev() {
        let trans = prior.log_transition(j);
        let w: [f64; 4] = std::array::from_fn(|a| fwd.log_alpha[j][a] + trans[a][next]);
        next = sample_log_index(&w, rng).ok_or_else(impossible)?;
        out[j] = next as u8;
    }
    Ok(out)
}

/// MAP naive sequence and its joint log probability (prior times emissions).
/// Among equally probable sequences the lexicographically smallest (A < C < G < T) is returned.
pub fn viterbi_naive(prior: &NaivePrior, em: &EmissionTable) -> Result<(Vec<u8>, f64)> {
    check_lengths(prior, em)?;
    let n = em.len();
    // best[j][a]: best log score of positions j+1.. given base a at j.
    let mut best = vec![[0.0f64; 4]; n];
    for j in (0..n - 1).rev() {
        let trans = prior.log_transition(j);
        for a in 0..4 {
            best[j][a] = (0..4)
                .map(|b| trans[a][b] + em.log_em[j + 1][b] + best[j + 1][b])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let argmax_first = |scores: [f64; 4]| {
        let mut arg = 0;
        for b in 1..4 {
            if scores[b] > scores[arg] {
                arg = b;
            }
        }
        arg
    };
    let start: [f64; 4] = std::array::from_fn(|a| prior.log_initial()[a] + em.log_em[0][a] + best[0][a]);
    let mut state = argmax_first(start);
    let total = start[state];
    if total == f64::NEG_INFINITY {
        return Err(Error::ImpossibleData("every naive sequence has zero probability".into()));
    }
    let mut path = vec![state as u8];
    for j in 1..n {
        let trans = prior.log_transition(j - 1);
        let scores: [f64; 4] = std::array::from_fn(|b| trans[state][b] + em.log_em[j][b] + best[j][b]);
        state = argmax_first(scores);
        path.push(state as u8);
    }
    Ok((path, total))
}

/// Forward log-likelihood of the alignment under one tree sample.
pub fn phylo_hmm_log_likelihood(
    tree: &CladeTree,
    params: &GtrParams,
    rm: &RateModel,
    msa: &Msa,
    prior: &NaivePrior,
) -> Result<f64> {
    let em = compute_emissions(tree, params, rm, msa)?;
    Ok(forward(prior, &em)?.log_likelihood)
}
