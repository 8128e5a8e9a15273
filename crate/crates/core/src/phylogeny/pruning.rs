//! Felsenstein pruning with per-node log-space scaling.

use std::collections::HashMap;

use crate::dna::MISSING;
use crate::error::{Error, Result};
use crate::substitution::{build_rate_matrix, GtrParams, Matrix4, RateMatrix, RateModel, IDENTITY};

use super::msa::Msa;
use super::tree::{CladeTree, NodeId, NAIVE};

/// Maps tree leaves (including the naive leaf, when the alignment has a row
/// for it) to alignment rows.
#[derive(Debug, Clone)]
pub struct TipMap {
    rows: Vec<Option<usize>>,
}

impl TipMap {
    /// Every observed tip must match a row, and every row must match a leaf.
    pub fn bind(tree: &CladeTree, msa: &Msa) -> Result<Self> {
        let mut rows = vec![None; tree.len()];
        let by_label = tree.label_index();
        for (r, id) in msa.ids().iter().enumerate() {
            if id == tree.naive_label() {
                rows[NAIVE] = Some(r);
            } else {
                let v = by_label.get(id.as_str()).ok_or_else(|| {
                    Error::DataMismatch(format!("alignment row {id:?} has no leaf in the tree"))
                })?;
                rows[*v] = Some(r);
            }
        }
        if let Some(v) = tree.tips().into_iter().find(|&v| rows[v].is_none()) {
            return Err(Error::DataMismatch(format!(
                "tip {:?} has no alignment row",
                tree.tip_label(v)
            )));
        }
        Ok(Self { rows })
    }

    pub fn row(&self, node: NodeId) -> Option<usize> {
        self.rows[node]
    }

    /// Per-node observed states for one alignment column (`MISSING` where unobserved).
    pub fn states(&self, column: impl Fn(usize) -> u8) -> Vec<u8> {
        self.rows
            .iter()
            .map(|r| r.map_or(MISSING, &column))
            .collect()
    }
}

/// Unique alignment columns with multiplicities.
#[derive(Debug, Clone)]
pub struct SitePatterns {
    /// Each pattern holds one state per alignment row.
    pub patterns: Vec<Vec<u8>>,
    pub counts: Vec<f64>,
    /// Pattern index of every column.
    pub column_pattern: Vec<usize>,
}

impl SitePatterns {
    pub fn compress(msa: &Msa) -> Self {
        let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        let mut column_pattern = Vec::with_capacity(msa.n_columns());
        for j in 0..msa.n_columns() {
            let col: Vec<u8> = msa.rows().iter().map(|r| r[j]).collect();
            let p = *index.entry(col.clone()).or_insert_with(|| {
                patterns.push(col);
                counts.push(0.0);
                patterns.len() - 1
            });
            counts[p] += 1.0;
            column_pattern.push(p);
        }
        Self {
            patterns,
            counts,
            column_pattern,
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Transition matrix on each node's parent branch, with lengths scaled by `rate`.
pub fn branch_transitions(tree: &CladeTree, q: &RateMatrix, rate: f64) -> Vec<Matrix4> {
    tree.nodes()
        .iter()
        .enumerate()
        .map(|(v, node)| {
            if v == NAIVE {
                IDENTITY
            } else {
                q.transition_unchecked(node.branch_length * rate)
            }
        })
        .collect()
}

/// Conditional likelihood vectors for one column. The true value of
/// `F_u[i]` is `vectors[u][i] * exp(log_scale[u])`.
///
/// The naive leaf's entry is the likelihood of all observed tips given the
/// naive state, i.e. the naive leaf is treated as the evaluation root.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihoods {
    pub vectors: Vec<[f64; 4]>,
    pub log_scale: Vec<f64>,
}

impl PartialLikelihoods {
    pub fn new(nodes: usize) -> Self {
        Self {
            vectors: vec![[0.0; 4]; nodes],
            log_scale: vec![0.0; nodes],
        }
    }

    pub fn log_value(&self, node: NodeId, state: usize) -> f64 {
        self.vectors[node][state].ln() + self.log_scale[node]
    }

    pub fn value(&self, node: NodeId, state: usize) -> f64 {
        self.log_value(node, state).exp()
    }
}

#[inline]
fn leaf_vector(state: u8) -> [f64; 4] {
    if state < MISSING {
        let mut v = [0.0; 4];
        v[state as usize] = 1.0;
        v
    } else {
        [1.0; 4]
    }
}

#[inline]
fn propagate(p: &Matrix4, f: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = p[i][0] * f[0] + p[i][1] * f[1] + p[i][2] * f[2] + p[i][3] * f[3];
    }
    out
}

/// Post-order pass over the whole tree. `states` holds one entry per node;
/// only leaf entries are read. Returns the number of nodes visited.
pub(crate) fn prune_into(
    tree: &CladeTree,
    transitions: &[Matrix4],
    states: &[u8],
    out: &mut PartialLikelihoods,
) -> usize {
    let mut visited = 0;
    for &v in tree.postorder() {
        visited += 1;
        let node = tree.node(v);
        if node.children.is_empty() {
            out.vectors[v] = leaf_vector(states[v]);
            out.log_scale[v] = 0.0;
            continue;
        }
        let mut acc = [1.0; 4];
        let mut log_scale = 0.0;
        for &c in &node.children {
            let msg = propagate(&transitions[c], &out.vectors[c]);
            for i in 0..4 {
                acc[i] *= msg[i];
            }
            log_scale += out.log_scale[c];
        }
        let max = acc.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for a in &mut acc {
                *a /= max;
            }
            log_scale += max.ln();
        } else {
            log_scale = f64::NEG_INFINITY;
        }
        out.vectors[v] = acc;
        out.log_scale[v] = log_scale;
    }
    visited
}

/// Partial likelihoods for column `column` of `msa` with branch lengths scaled by `rate`.
pub fn prune_partials(
    tree: &CladeTree,
    msa: &Msa,
    column: usize,
    q: &RateMatrix,
    rate: f64,
) -> Result<PartialLikelihoods> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::arg(format!("rate {rate} must be positive")));
    }
    if column >= msa.n_columns() {
        return Err(Error::arg(format!("column {column} out of range")));
    }
    let map = TipMap::bind(tree, msa)?;
    let states = map.states(|r| msa.rows()[r][column]);
    let transitions = branch_transitions(tree, q, rate);
    let mut out = PartialLikelihoods::new(tree.len());
    prune_into(tree, &transitions, &states, &mut out);
    Ok(out)
}

/// p(column | tree, naive state, rate): the naive leaf's own conditional likelihood.
///
/// Any alignment row for the naive leaf is ignored.
pub fn naive_conditional_site_likelihood(
    tree: &CladeTree,
    msa: &Msa,
    column: usize,
    naive_state: usize,
    q: &RateMatrix,
    rate: f64,
) -> Result<f64> {
    if naive_state >= 4 {
        return Err(Error::arg(format!("naive state {naive_state} out of range")));
    }
    if !(q.freqs()[naive_state] > 0.0) {
        return Err(Error::param("stationary frequency of the naive state is zero"));
    }
    let partials = prune_partials(tree, msa, column, q, rate)?;
    Ok(partials.value(NAIVE, naive_state))
}

/// Standard log-likelihood of one column rooted at the attachment node, with
/// stationary frequencies at the root and the naive leaf treated as an
/// ordinary (possibly missing) leaf.
fn column_log_likelihood(
    tree: &CladeTree,
    transitions: &[Matrix4],
    freqs: &[f64; 4],
    states: &[u8],
    work: &mut PartialLikelihoods,
) -> f64 {
    prune_into(tree, transitions, states, work);
    let a = tree.attachment();
    let naive_leaf = leaf_vector(states[NAIVE]);
    let toward_naive = propagate(&transitions[a], &naive_leaf);
    let fa = &work.vectors[a];
    let s: f64 = (0..4).map(|i| freqs[i] * fa[i] * toward_naive[i]).sum();
    s.ln() + work.log_scale[a]
}

/// Precomputed per-rate transition matrices for one (tree, parameters, rates) triple.
pub struct LikelihoodModel {
    pub q: RateMatrix,
    pub rates: Vec<f64>,
    pub transitions: Vec<Vec<Matrix4>>,
}

impl LikelihoodModel {
    pub fn new(tree: &CladeTree, params: &GtrParams, rates: &RateModel) -> Result<Self> {
        let q = build_rate_matrix(params)?;
        let transitions = rates
            .rates
            .iter()
            .map(|&r| branch_transitions(tree, &q, r))
            .collect();
        Ok(Self {
            q,
            rates: rates.rates.clone(),
            transitions,
        })
    }
}

pub(crate) fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

/// GTR+Gamma log-likelihood of a compressed alignment; the naive leaf is
/// observed when the alignment has a row for it and marginalized otherwise.
pub fn patterns_log_likelihood(
    tree: &CladeTree,
    map: &TipMap,
    patterns: &SitePatterns,
    model: &LikelihoodModel,
) -> f64 {
    let mut work = PartialLikelihoods::new(tree.len());
    let mut per_rate = vec![0.0; model.rates.len()];
    let mut total = 0.0;
    for (pattern, &count) in patterns.patterns.iter().zip(&patterns.counts) {
        let states = map.states(|r| pattern[r]);
        for (k, trans) in model.transitions.iter().enumerate() {
            per_rate[k] = column_log_likelihood(tree, trans, model.q.freqs(), &states, &mut work);
        }
        total += count * log_mean_exp(&per_rate);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    total
}

/// Standard augmented-alignment log-likelihood under GTR+Gamma.
pub fn log_likelihood(tree: &CladeTree, msa: &Msa, params: &GtrParams, rates: &RateModel) -> Result<f64> {
    let map = TipMap::bind(tree, msa)?;
    let patterns = SitePatterns::compress(msa);
    let model = LikelihoodModel::new(tree, params, rates)?;
    Ok(patterns_log_likelihood(tree, &map, &patterns, &model))
}
