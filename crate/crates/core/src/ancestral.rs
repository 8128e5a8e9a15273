//! Per-site rate classes and intermediate ancestral sequences drawn
//! conditional on a posterior tree sample and its sampled naive sequence,
//! plus the end-to-end posterior sampler and the draw archive.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dna;
use crate::error::{Error, Result};
use crate::mcmc::PhyloSample;
use crate::phylo_hmm::{backward_sample_naive, forward, ConditionalLikelihoods, EmissionTable, ForwardMessages};
use crate::phylogeny::{parse_newick, prune_partials, CladeTree, Msa, NodeId, PartialLikelihoods, NAIVE};
use crate::prior::NaivePrior;
use crate::sir::{evenly_spaced, resample_indices, SirConfig, WeightedPool};
use crate::substitution::{build_rate_matrix, discrete_gamma_rates, GtrParams, Matrix4, RateModel};
use crate::util::{sample_index, sample_log_index, stream_rng};

/// One joint posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub sample: PhyloSample,
    pub log_weight: f64,
    pub naive: Vec<u8>,
    /// Rate-class index of every column.
    pub site_rates: Vec<usize>,
    /// `internal_states[i]` is the sequence at `sample.tree.internal_nodes()[i]`.
    pub internal_states: Vec<Vec<u8>>,
}

impl PosteriorDraw {
    /// Sequence at the naive leaf or an internal node.
    pub fn node_sequence(&self, v: NodeId) -> Option<&[u8]> {
        if v == NAIVE {
            return Some(&self.naive);
        }
        let i = self.sample.tree.internal_nodes().binary_search(&v).ok()?;
        Some(&self.internal_states[i])
    }
}

fn impossible(what: &str) -> Error {
    Error::ImpossibleData(format!("every {what} has zero probability"))
}

fn draw_states<R: Rng + ?Sized>(
    tree: &CladeTree,
    trans: &[Matrix4],
    partials: &PartialLikelihoods,
    naive_state: u8,
    order: &[NodeId],
    states: &mut [u8],
    rng: &mut R,
) -> Result<()> {
    states[NAIVE] = naive_state;
    for &v in order {
        let a = states[tree.node(v).parent.expect("non-root")] as usize;
        let f = &partials.vectors[v];
        let w: [f64; 4] = std::array::from_fn(|i| trans[v][a][i] * f[i]);
        if !(w.iter().sum::<f64>() > 0.0) {
            return Err(impossible("ancestral state"));
        }
        states[v] = sample_index(&w, rng) as u8;
    }
    Ok(())
}

fn internal_preorder(tree: &CladeTree) -> Vec<NodeId> {
    tree.preorder().filter(|&v| v != NAIVE && !tree.is_tip(v)).collect()
}

/// Rate class for column `column`, drawn proportionally to the
/// naive-conditional likelihood under each class.
pub fn sample_site_rate<R: Rng + ?Sized>(
    tree: &CladeTree,
    msa: &Msa,
    column: usize,
    naive_state: usize,
    params: &GtrParams,
    rm: &RateModel,
    rng: &mut R,
) -> Result<usize> {
    let q = build_rate_matrix(params)?;
    let logs = rm
        .rates
        .iter()
        .map(|&r| Ok(prune_partials(tree, msa, column, &q, r)?.log_value(NAIVE, naive_state)))
        .collect::<Result<Vec<f64>>>()?;
    sample_log_index(&logs, rng).ok_or_else(|| impossible("rate class"))
}

/// Internal-node states for one column, drawn in pre-order from the naive
/// leaf. Returned in `tree.internal_nodes()` order.
pub fn sample_ancestral_states<R: Rng + ?Sized>(
    tree: &CladeTree,
    msa: &Msa,
    column: usize,
    naive_state: usize,
    rate: f64,
    params: &GtrParams,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if naive_state >= 4 {
        return Err(Error::arg(format!("naive state {naive_state} out of range")));
    }
    let q = build_rate_matrix(params)?;
    let partials = prune_partials(tree, msa, column, &q, rate)?;
    let trans = crate::phylogeny::branch_transitions(tree, &q, rate);
    let mut states = vec![0u8; tree.len()];
    draw_states(tree, &trans, &partials, naive_state as u8, &internal_preorder(tree), &mut states, rng)?;
    Ok(tree.internal_nodes().into_iter().map(|v| states[v]).collect())
}

/// Exact sampler of (naive, rate classes, internal states) for one tree sample.
pub struct PosteriorSampler {
    sample: PhyloSample,
    log_weight: f64,
    prior: NaivePrior,
    cond: ConditionalLikelihoods,
    em: EmissionTable,
    fwd: ForwardMessages,
    order: Vec<NodeId>,
    internal: Vec<NodeId>,
}

impl PosteriorSampler {
    /// `msa` holds the observed sequences; a naive row, if present, is ignored.
    pub fn new(sample: &PhyloSample, msa: &Msa, prior: &NaivePrior, k: usize) -> Result<Self> {
        let observed = msa.without(sample.tree.naive_label());
        let rm = discrete_gamma_rates(sample.alpha, k)?;
        let cond = ConditionalLikelihoods::compute(&sample.tree, &sample.params, &rm, &observed)?;
        let em = cond.emissions();
        let fwd = forward(prior, &em)?;
        Ok(Self {
            order: internal_preorder(&sample.tree),
            internal: sample.tree.internal_nodes(),
            sample: sample.clone(),
            log_weight: fwd.log_likelihood - sample.proposal_loglik,
            prior: prior.clone(),
            cond,
            em,
            fwd,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.fwd.log_likelihood
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PosteriorDraw> {
        let naive = backward_sample_naive(&self.prior, &self.em, &self.fwd, rng)?;
        let tree = &self.sample.tree;
        let n = naive.len();
        let mut site_rates = Vec::with_capacity(n);
        let mut internal_states = vec![vec![0u8; n]; self.internal.len()];
        let mut states = vec![0u8; tree.len()];
        for (j, &s) in naive.iter().enumerate() {
            let logs = self.cond.per_rate_log_likelihoods(j, s as usize);
            let k = sample_log_index(&logs, rng).ok_or_else(|| impossible("rate class"))?;
            site_rates.push(k);
            let partials = self.cond.column(j, k);
            draw_states(tree, &self.cond.transitions[k], partials, s, &self.order, &mut states, rng)?;
            for (row, &v) in internal_states.iter_mut().zip(&self.internal) {
                row[j] = states[v];
            }
        }
        Ok(PosteriorDraw {
            sample: self.sample.clone(),
            log_weight: self.log_weight,
            naive,
            site_rates,
            internal_states,
        })
    }
}

/// Result of the full posterior sampler.
#[derive(Debug, Clone)]
pub struct PosteriorRun {
    pub draws: Vec<PosteriorDraw>,
    /// Log weights of the pool actually used.
    pub pool_log_weights: Vec<f64>,
    /// Pool indices of the retained samples, in draw order.
    pub selected: Vec<usize>,
    pub ess: f64,
}

/// Weights and resamples the proposal draws, then draws a naive sequence,
/// rate classes and ancestral states for every retained sample.
/// When more than `n_pool` proposals are supplied an evenly spaced subset is used.
pub fn sample_posterior(
    msa: &Msa,
    prior: &NaivePrior,
    proposals: &[PhyloSample],
    config: &SirConfig,
    k: usize,
) -> Result<PosteriorRun> {
    let pool_samples = evenly_spaced(proposals, config.n_pool)?;
    let pool = WeightedPool::compute(pool_samples, msa, prior, k)?;
    let mut rng = stream_rng(config.seed, 0);
    let selected = resample_indices(&pool.log_weights, config.n_final, &mut rng)?;
    let draws = selected
        .par_iter()
        .enumerate()
        .map(|(rank, &i)| {
            let sampler = PosteriorSampler::new(&pool.samples[i], msa, prior, k)?;
            sampler.draw(&mut stream_rng(config.seed, 1 + rank as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorRun {
        ess: pool.ess(),
        pool_log_weights: pool.log_weights,
        selected,
        draws,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRecord {
    draw: usize,
    tree: String,
    alpha: f64,
    base_freqs: [f64; 4],
    exchangeabilities: [f64; 6],
    proposal_loglik: f64,
    log_weight: f64,
    naive: String,
    site_rates: Vec<usize>,
    /// Clade signature to sequence.
    internal: BTreeMap<String, String>,
}

/// Writes one JSON record per draw.
pub fn write_archive(draws: &[PosteriorDraw], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (i, d) in draws.iter().enumerate() {
        let tree = &d.sample.tree;
        let internal = tree
            .internal_nodes()
            .into_iter()
            .zip(&d.internal_states)
            .map(|(v, s)| (tree.clade_signature(v), dna::decode_all(s)))
            .collect();
        let rec = DrawRecord {
            draw: i + 1,
            tree: tree.to_newick(),
            alpha: d.sample.alpha,
            base_freqs: d.sample.params.base_freqs,
            exchangeabilities: d.sample.params.exchangeabilities,
            proposal_loglik: d.sample.proposal_loglik,
            log_weight: d.log_weight,
            naive: dna::decode_all(&d.naive),
            site_rates: d.site_rates.clone(),
            internal,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path, naive_label: &str) -> Result<Vec<PosteriorDraw>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut draws = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |message: String| Error::Format {
            what: "draw archive",
            message: format!("line {}: {message}", lineno + 1),
        };
        let rec: DrawRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let tree = parse_newick(&rec.tree, naive_label)?;
        let params = GtrParams::new(rec.exchangeabilities, rec.base_freqs).map_err(|e| bad(e.to_string()))?;
        let naive = dna::encode_strict(&rec.naive)?;
        let internal_states = tree
            .internal_nodes()
            .into_iter()
            .map(|v| {
                let sig = tree.clade_signature(v);
                let s = rec
                    .internal
                    .get(&sig)
                    .ok_or_else(|| bad(format!("no sequence for clade {sig:?}")))?;
                dna::encode_strict(s)
            })
            .collect::<Result<Vec<_>>>()?;
        if rec.site_rates.len() != naive.len() || internal_states.iter().any(|s| s.len() != naive.len()) {
            return Err(bad("sequence lengths disagree".into()));
        }
        draws.push(PosteriorDraw {
            sample: PhyloSample {
                tree,
                params,
                alpha: rec.alpha,
                proposal_loglik: rec.proposal_loglik,
            },
            log_weight: rec.log_weight,
            naive,
            site_rates: rec.site_rates,
            internal_states,
        });
    }
    Ok(draws)
}
