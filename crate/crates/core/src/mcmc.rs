//! Metropolis–Hastings sampler over trees and GTR+Gamma parameters for the
//! augmented alignment (observed sequences plus a point-estimate naive row),
//! and ingestion of externally produced traces.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::dna::MISSING;
use crate::error::{Error, Result};
use crate::phylogeny::{
    log_likelihood, parse_newick_lines, random_topology, CladeTree, Msa, NodeId, SitePatterns, TipMap, NAIVE,
};
use crate::substitution::{build_rate_matrix, discrete_gamma_rates, GtrParams, Matrix4, RateMatrix};

/// One proposal draw of tree, substitution parameters and rate shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloSample {
    pub tree: CladeTree,
    pub params: GtrParams,
    pub alpha: f64,
    /// Log-likelihood of the augmented alignment under this draw.
    pub proposal_loglik: f64,
}

/// Relative proposal frequencies of the move types.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveWeights {
    pub nni: f64,
    pub branch_length: f64,
    pub base_freqs: f64,
    pub exchangeabilities: f64,
    pub alpha: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        Self {
            nni: 2.0,
            branch_length: 5.0,
            base_freqs: 0.5,
            exchangeabilities: 0.5,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialTree {
    NeighborJoining,
    /// Uniform random topology with every branch at the prior mean.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub thin: usize,
    /// Number of thinned samples discarded from the start.
    pub burn_in: usize,
    /// Rate of the exponential prior on branch lengths and alpha.
    pub lambda: f64,
    pub dirichlet_pi: [f64; 4],
    pub dirichlet_e: [f64; 6],
    pub weights: MoveWeights,
    pub initial_tree: InitialTree,
    /// Starting parameters; empirical base frequencies and equal
    /// exchangeabilities when absent.
    pub initial_params: Option<GtrParams>,
    pub initial_alpha: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            thin: 10,
            burn_in: 500,
            lambda: 10.0,
            dirichlet_pi: [1.0; 4],
            dirichlet_e: [1.0; 6],
            weights: MoveWeights::default(),
            initial_tree: InitialTree::NeighborJoining,
            initial_params: None,
            initial_alpha: 1.0,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.iterations < self.thin {
            return Err(Error::param("need iterations >= thin >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda must be positive"));
        }
        if self.dirichlet_pi.iter().chain(&self.dirichlet_e).any(|&a| !(a > 0.0)) {
            return Err(Error::param("Dirichlet hyperparameters must be positive"));
        }
        let w = &self.weights;
        let all = [w.nni, w.branch_length, w.base_freqs, w.exchangeabilities, w.alpha];
        if all.iter().any(|&x| !(x >= 0.0)) || all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::param("move weights must be non-negative with a positive sum"));
        }
        if !(self.initial_alpha > 0.0) {
            return Err(Error::param("initial alpha must be positive"));
        }
        Ok(())
    }

    /// Number of samples `run_mcmc` returns.
    pub fn retained(&self) -> usize {
        (self.iterations / self.thin).saturating_sub(self.burn_in)
    }
}

/// Metropolis–Hastings log acceptance ratio.
pub fn log_acceptance_ratio(current_log_post: f64, proposed_log_post: f64, log_hastings: f64) -> f64 {
    if proposed_log_post == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    proposed_log_post - current_log_post + log_hastings
}

pub fn log_dirichlet(x: &[f64], a: &[f64]) -> f64 {
    let norm = ln_gamma(a.iter().sum()) - a.iter().map(|&v| ln_gamma(v)).sum::<f64>();
    norm + x.iter().zip(a).map(|(&xi, &ai)| (ai - 1.0) * xi.ln()).sum::<f64>()
}

fn sample_dirichlet<R: Rng + ?Sized>(a: &[f64], rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = a
        .iter()
        .map(|&ai| Gamma::new(ai, 1.0).expect("positive shape").sample(rng))
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn log_exponential(x: f64, lambda: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        lambda.ln() - lambda * x
    }
}

/// Conditional-likelihood cache for one tree over all site patterns and
/// rate classes, evaluated with the naive leaf as root. Supports partial
/// recomputation along changed paths with rollback.
#[derive(Clone)]
pub(crate) struct TreeLikelihood {
    n_nodes: usize,
    n_pat: usize,
    k: usize,
    leaf: Vec<u8>,
    counts: Vec<f64>,
    freqs: [f64; 4],
    trans: Vec<Matrix4>,
    vecs: Vec<[f64; 4]>,
    scale: Vec<f64>,
    undo_vecs: Vec<(usize, [f64; 4], f64)>,
    undo_trans: Vec<(usize, Matrix4)>,
    dirty: Vec<bool>,
}

impl TreeLikelihood {
    pub(crate) fn new(tree: &CladeTree, map: &TipMap, patterns: &SitePatterns, q: &RateMatrix, rates: &[f64]) -> Self {
        let n_nodes = tree.len();
        let n_pat = patterns.len();
        let mut leaf = Vec::with_capacity(n_pat * n_nodes);
        for p in &patterns.patterns {
            leaf.extend(map.states(|r| p[r]));
        }
        let k = rates.len();
        let mut out = Self {
            n_nodes,
            n_pat,
            k,
            leaf,
            counts: patterns.counts.clone(),
            freqs: *q.freqs(),
            trans: vec![[[0.0; 4]; 4]; k * n_nodes],
            vecs: vec![[0.0; 4]; k * n_pat * n_nodes],
            scale: vec![0.0; k * n_pat * n_nodes],
            undo_vecs: Vec::new(),
            undo_trans: Vec::new(),
            dirty: vec![false; n_nodes],
        };
        out.recompute_all(tree, q, rates);
        out
    }

    pub(crate) fn recompute_all(&mut self, tree: &CladeTree, q: &RateMatrix, rates: &[f64]) {
        self.freqs = *q.freqs();
        for (r, &rate) in rates.iter().enumerate() {
            for v in 1..self.n_nodes {
                self.trans[r * self.n_nodes + v] = q.transition_unchecked(tree.branch_length(v) * rate);
            }
        }
        for &v in tree.postorder() {
            self.compute_node(tree, v, false);
        }
        self.undo_vecs.clear();
        self.undo_trans.clear();
    }

    fn compute_node(&mut self, tree: &CladeTree, v: NodeId, record: bool) {
        let children = &tree.node(v).children;
        for r in 0..self.k {
            for p in 0..self.n_pat {
                let base = (r * self.n_pat + p) * self.n_nodes;
                let idx = base + v;
                if record {
                    self.undo_vecs.push((idx, self.vecs[idx], self.scale[idx]));
                }
                if children.is_empty() {
                    let s = self.leaf[p * self.n_nodes + v];
                    self.vecs[idx] = if s < MISSING {
                        let mut e = [0.0; 4];
                        e[s as usize] = 1.0;
                        e
                    } else {
                        [1.0; 4]
                    };
                    self.scale[idx] = 0.0;
                    continue;
                }
                let mut acc = [1.0; 4];
                let mut log_scale = 0.0;
                for &c in children {
                    let t = &self.trans[r * self.n_nodes + c];
                    let f = &self.vecs[base + c];
                    for i in 0..4 {
                        acc[i] *= t[i][0] * f[0] + t[i][1] * f[1] + t[i][2] * f[2] + t[i][3] * f[3];
                    }
                    log_scale += self.scale[base + c];
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
                self.vecs[idx] = acc;
                self.scale[idx] = log_scale;
            }
        }
    }

    /// Recomputes after branch-length changes on `branches` and/or child-set
    /// changes at `nodes`. Call `commit` or `rollback` afterwards.
    pub(crate) fn update(&mut self, tree: &CladeTree, q: &RateMatrix, rates: &[f64], branches: &[NodeId], nodes: &[NodeId]) {
        self.dirty.iter_mut().for_each(|d| *d = false);
        for &v in branches {
            for (r, &rate) in rates.iter().enumerate() {
                let i = r * self.n_nodes + v;
                self.undo_trans.push((i, self.trans[i]));
                self.trans[i] = q.transition_unchecked(tree.branch_length(v) * rate);
            }
        }
        let starts = branches.iter().filter_map(|&v| tree.node(v).parent).chain(nodes.iter().copied());
        for s in starts.collect::<Vec<_>>() {
            let mut v = Some(s);
            while let Some(u) = v {
                if self.dirty[u] {
                    break;
                }
                self.dirty[u] = true;
                v = tree.node(u).parent;
            }
        }
        for &v in tree.postorder() {
            if self.dirty[v] {
                self.compute_node(tree, v, true);
            }
        }
    }

    pub(crate) fn commit(&mut self) {
        self.undo_vecs.clear();
        self.undo_trans.clear();
    }

    pub(crate) fn rollback(&mut self) {
        for (i, v, s) in self.undo_vecs.drain(..).rev() {
            self.vecs[i] = v;
            self.scale[i] = s;
        }
        for (i, t) in self.undo_trans.drain(..).rev() {
            self.trans[i] = t;
        }
    }

    pub(crate) fn log_likelihood(&self) -> f64 {
        let mut total = 0.0;
        let mut per_rate = vec![0.0; self.k];
        for p in 0..self.n_pat {
            let s = self.leaf[p * self.n_nodes + NAIVE];
            for (r, slot) in per_rate.iter_mut().enumerate() {
                let idx = (r * self.n_pat + p) * self.n_nodes + NAIVE;
                let f = &self.vecs[idx];
                let l: f64 = if s < MISSING {
                    self.freqs[s as usize] * f[s as usize]
                } else {
                    (0..4).map(|i| self.freqs[i] * f[i]).sum()
                };
                *slot = l.ln() + self.scale[idx];
            }
            total += self.counts[p] * crate::phylogeny::log_mean_exp(&per_rate);
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

fn jc_distance(a: &[u8], b: &[u8]) -> f64 {
    let (mut diff, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        if x < MISSING && y < MISSING {
            total += 1;
            diff += usize::from(x != y);
        }
    }
    if total == 0 {
        return 1.0;
    }
    let p = (diff as f64 / total as f64).min(0.74);
    -0.75 * (1.0 - 4.0 * p / 3.0).ln()
}

/// Neighbor-joining tree on Jukes–Cantor distances; negative or tiny branch
/// lengths are raised to `min_branch`.
pub fn neighbor_joining(msa: &Msa, naive_label: &str, min_branch: f64) -> Result<CladeTree> {
    let n = msa.n_seqs();
    if n < 2 {
        return Err(Error::arg("neighbor joining needs at least two sequences"));
    }
    let mut labels: Vec<Option<String>> = msa.ids().iter().map(|s| Some(s.clone())).collect();
    let mut edges = Vec::new();
    if n == 2 {
        edges.push((0, 1, jc_distance(&msa.rows()[0], &msa.rows()[1]).max(min_branch)));
        return CladeTree::from_edges(labels, &edges, naive_label);
    }
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| jc_distance(&msa.rows()[i], &msa.rows()[j])).collect())
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > 3 {
        let r = active.len() as f64;
        let sums: Vec<f64> = active.iter().map(|&i| active.iter().map(|&j| d[i][j]).sum()).collect();
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let qv = (r - 2.0) * d[active[a]][active[b]] - sums[a] - sums[b];
                if qv < best.0 {
                    best = (qv, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let (i, j) = (active[a], active[b]);
        let li = 0.5 * d[i][j] + (sums[a] - sums[b]) / (2.0 * (r - 2.0));
        let lj = d[i][j] - li;
        let u = labels.len();
        labels.push(None);
        for row in &mut d {
            row.push(0.0);
        }
        d.push(vec![0.0; u + 1]);
        for &k in &active {
            if k != i && k != j {
                let v = 0.5 * (d[i][k] + d[j][k] - d[i][j]);
                d[u][k] = v;
                d[k][u] = v;
            }
        }
        edges.push((i, u, li.max(min_branch)));
        edges.push((j, u, lj.max(min_branch)));
        active.retain(|&x| x != i && x != j);
        active.push(u);
    }
    let (a, b, c) = (active[0], active[1], active[2]);
    let center = labels.len();
    labels.push(None);
    let la = 0.5 * (d[a][b] + d[a][c] - d[b][c]);
    let lb = d[a][b] - la;
    let lc = d[a][c] - la;
    edges.push((a, center, la.max(min_branch)));
    edges.push((b, center, lb.max(min_branch)));
    edges.push((c, center, lc.max(min_branch)));
    CladeTree::from_edges(labels, &edges, naive_label)
}

#[derive(Clone, Copy)]
enum Move {
    Nni,
    Branch,
    BaseFreqs,
    Exchange,
    Alpha,
}

struct ChainState {
    tree: CladeTree,
    params: GtrParams,
    alpha: f64,
    q: RateMatrix,
    rates: Vec<f64>,
    cache: TreeLikelihood,
    loglik: f64,
    log_prior: f64,
}

fn log_prior(tree: &CladeTree, params: &GtrParams, alpha: f64, cfg: &McmcConfig) -> f64 {
    let branches: f64 = tree.branch_lengths().map(|t| log_exponential(t, cfg.lambda)).sum();
    let e_sum: f64 = params.exchangeabilities.iter().sum();
    let e_norm: Vec<f64> = params.exchangeabilities.iter().map(|v| v / e_sum).collect();
    branches
        + log_exponential(alpha, cfg.lambda)
        + log_dirichlet(&params.base_freqs, &cfg.dirichlet_pi)
        + log_dirichlet(&e_norm, &cfg.dirichlet_e)
}

const DIRICHLET_CONCENTRATION: f64 = 200.0;
const BRANCH_TUNING: f64 = 1.0;
const ALPHA_SD: f64 = 0.4;

/// Runs the sampler on an augmented alignment whose rows include the naive
/// point estimate labelled `naive_label`. Returns thinned post-burn-in draws.
pub fn run_mcmc(augmented: &Msa, naive_label: &str, config: &McmcConfig, k: usize) -> Result<Vec<PhyloSample>> {
    config.validate()?;
    if augmented.n_seqs() < 3 {
        return Err(Error::arg("the augmented alignment needs at least three sequences"));
    }
    if augmented.row_index(naive_label).is_none() {
        return Err(Error::MissingNaive(naive_label.to_string()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let tree = match config.initial_tree {
        InitialTree::NeighborJoining => neighbor_joining(augmented, naive_label, 1e-3)?,
        InitialTree::Random => {
            let tips: Vec<String> = augmented.ids().iter().filter(|s| *s != naive_label).cloned().collect();
            let mean = 1.0 / config.lambda;
            random_topology(&tips, naive_label, &mut rng, |_| mean)?
        }
    };
    let params = match &config.initial_params {
        Some(p) => *p,
        None => GtrParams::new([1.0 / 6.0; 6], augmented.base_frequencies())?,
    };
    let alpha = config.initial_alpha;
    let q = build_rate_matrix(&params)?;
    let rates = discrete_gamma_rates(alpha, k)?.rates;
    let map = TipMap::bind(&tree, augmented)?;
    let patterns = SitePatterns::compress(augmented);
    let cache = TreeLikelihood::new(&tree, &map, &patterns, &q, &rates);
    let loglik = cache.log_likelihood();
    if !loglik.is_finite() {
        return Err(Error::Initialization(format!("initial log-likelihood is {loglik}")));
    }
    let log_prior = log_prior(&tree, &params, alpha, config);
    let mut st = ChainState {
        tree,
        params,
        alpha,
        q,
        rates,
        cache,
        loglik,
        log_prior,
    };

    let w = &config.weights;
    let table = [
        (Move::Nni, w.nni),
        (Move::Branch, w.branch_length),
        (Move::BaseFreqs, w.base_freqs),
        (Move::Exchange, w.exchangeabilities),
        (Move::Alpha, w.alpha),
    ];
    let total_weight: f64 = table.iter().map(|x| x.1).sum();
    let mut out = Vec::with_capacity(config.retained());
    for it in 1..=config.iterations {
        let mut u = rng.random::<f64>() * total_weight;
        let mut mv = table[0].0;
        for &(m, wt) in &table {
            if wt > 0.0 {
                mv = m;
                if u < wt {
                    break;
                }
            }
            u -= wt;
        }
        match mv {
            Move::Nni => nni_move(&mut st, config, &mut rng),
            Move::Branch => branch_move(&mut st, config, &mut rng),
            Move::BaseFreqs => parameter_move(&mut st, config, &mut rng, Move::BaseFreqs),
            Move::Exchange => parameter_move(&mut st, config, &mut rng, Move::Exchange),
            Move::Alpha => parameter_move(&mut st, config, &mut rng, Move::Alpha),
        }
        if it % config.thin == 0 && it / config.thin > config.burn_in {
            out.push(PhyloSample {
                tree: st.tree.clone(),
                params: st.params,
                alpha: st.alpha,
                proposal_loglik: st.loglik,
            });
        }
    }
    Ok(out)
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn nni_move<R: Rng + ?Sized>(st: &mut ChainState, _cfg: &McmcConfig, rng: &mut R) {
    let candidates: Vec<NodeId> = st
        .tree
        .internal_nodes()
        .into_iter()
        .filter(|&v| st.tree.node(v).parent != Some(NAIVE))
        .collect();
    if candidates.is_empty() {
        return;
    }
    let u = candidates[rng.random_range(0..candidates.len())];
    let p = st.tree.node(u).parent.expect("internal edge");
    let kids = &st.tree.node(u).children;
    let c = kids[rng.random_range(0..kids.len())];
    let sibs: Vec<NodeId> = st.tree.node(p).children.iter().copied().filter(|&s| s != u).collect();
    let s = sibs[rng.random_range(0..sibs.len())];
    st.tree.swap_subtrees(c, s);
    st.cache.update(&st.tree, &st.q, &st.rates, &[], &[u]);
    let proposed = st.cache.log_likelihood();
    if accept(log_acceptance_ratio(st.loglik, proposed, 0.0), rng) {
        st.cache.commit();
        st.loglik = proposed;
    } else {
        st.tree.swap_subtrees(s, c);
        st.cache.rollback();
    }
}

fn branch_move<R: Rng + ?Sized>(st: &mut ChainState, cfg: &McmcConfig, rng: &mut R) {
    let v = rng.random_range(1..st.tree.len());
    let old = st.tree.branch_length(v);
    let m = (BRANCH_TUNING * (rng.random::<f64>() - 0.5)).exp();
    let new = old * m;
    st.tree.set_branch_length(v, new);
    st.cache.update(&st.tree, &st.q, &st.rates, &[v], &[]);
    let proposed = st.cache.log_likelihood();
    let d_prior = log_exponential(new, cfg.lambda) - log_exponential(old, cfg.lambda);
    let ratio = log_acceptance_ratio(st.loglik + st.log_prior, proposed + st.log_prior + d_prior, m.ln());
    if accept(ratio, rng) {
        st.cache.commit();
        st.loglik = proposed;
        st.log_prior += d_prior;
    } else {
        st.tree.set_branch_length(v, old);
        st.cache.rollback();
    }
}

fn parameter_move<R: Rng + ?Sized>(st: &mut ChainState, cfg: &McmcConfig, rng: &mut R, which: Move) {
    let mut params = st.params;
    let mut alpha = st.alpha;
    let hastings = match which {
        Move::BaseFreqs => {
            let cur = params.base_freqs;
            let a: Vec<f64> = cur.iter().map(|x| x * DIRICHLET_CONCENTRATION).collect();
            let prop = sample_dirichlet(&a, rng);
            if prop.iter().any(|&x| !(x > 1e-10)) {
                return;
            }
            let back: Vec<f64> = prop.iter().map(|x| x * DIRICHLET_CONCENTRATION).collect();
            params.base_freqs = [prop[0], prop[1], prop[2], prop[3]];
            let s: f64 = params.base_freqs.iter().sum();
            params.base_freqs.iter_mut().for_each(|x| *x /= s);
            log_dirichlet(&cur, &back) - log_dirichlet(&prop, &a)
        }
        Move::Exchange => {
            let sum: f64 = params.exchangeabilities.iter().sum();
            let cur: Vec<f64> = params.exchangeabilities.iter().map(|x| x / sum).collect();
            let a: Vec<f64> = cur.iter().map(|x| x * DIRICHLET_CONCENTRATION).collect();
            let prop = sample_dirichlet(&a, rng);
            if prop.iter().any(|&x| !(x > 1e-10)) {
                return;
            }
            let back: Vec<f64> = prop.iter().map(|x| x * DIRICHLET_CONCENTRATION).collect();
            params.exchangeabilities.copy_from_slice(&prop);
            log_dirichlet(&cur, &back) - log_dirichlet(&prop, &a)
        }
        _ => {
            let z: f64 = StandardNormal.sample(rng);
            alpha = st.alpha * (ALPHA_SD * z).exp();
            (alpha / st.alpha).ln()
        }
    };
    let rates = match discrete_gamma_rates(alpha, st.rates.len()) {
        Ok(rm) => rm.rates,
        Err(_) => return,
    };
    let q = match build_rate_matrix(&params) {
        Ok(q) => q,
        Err(_) => return,
    };
    let prior = log_prior(&st.tree, &params, alpha, cfg);
    let likelihood_changes = !(matches!(which, Move::Alpha) && rates.len() == 1);
    let mut backup = None;
    let proposed = if likelihood_changes {
        backup = Some(st.cache.clone());
        st.cache.recompute_all(&st.tree, &q, &rates);
        st.cache.log_likelihood()
    } else {
        st.loglik
    };
    let ratio = log_acceptance_ratio(st.loglik + st.log_prior, proposed + prior, hastings);
    if accept(ratio, rng) {
        st.params = params;
        st.alpha = alpha;
        st.q = q;
        st.rates = rates;
        st.loglik = proposed;
        st.log_prior = prior;
    } else if let Some(b) = backup {
        st.cache = b;
    }
}

const TRACE_COLUMNS: [&str; 11] = [
    "alpha", "pi_A", "pi_C", "pi_G", "pi_T", "e_AC", "e_AG", "e_AT", "e_CG", "e_CT", "e_GT",
];

/// Writes a trace as one Newick tree per line plus a tab-separated parameter table.
pub fn write_trace(samples: &[PhyloSample], newick_path: &Path, params_path: &Path) -> Result<()> {
    write_trace_with_weights(samples, None, newick_path, params_path)
}

/// As `write_trace`, with an optional trailing `log_weight` column.
pub fn write_trace_with_weights(
    samples: &[PhyloSample],
    log_weights: Option<&[f64]>,
    newick_path: &Path,
    params_path: &Path,
) -> Result<()> {
    let mut trees = String::new();
    let mut table = TRACE_COLUMNS.join("\t");
    table.push_str("\tloglik");
    if log_weights.is_some() {
        table.push_str("\tlog_weight");
    }
    table.push('\n');
    for (i, s) in samples.iter().enumerate() {
        trees.push_str(&s.tree.to_newick());
        trees.push('\n');
        let _ = write!(table, "{}", s.alpha);
        for v in s.params.base_freqs.iter().chain(&s.params.exchangeabilities) {
            let _ = write!(table, "\t{v}");
        }
        let _ = write!(table, "\t{}", s.proposal_loglik);
        if let Some(w) = log_weights {
            let _ = write!(table, "\t{}", w[i]);
        }
        table.push('\n');
    }
    std::fs::write(newick_path, trees).map_err(|e| Error::io(newick_path, e))?;
    std::fs::write(params_path, table).map_err(|e| Error::io(params_path, e))?;
    Ok(())
}

/// Reads a row-aligned trace. When the table has no `loglik` column the
/// likelihood is recomputed on `augmented` with `k` rate classes.
pub fn load_trace(
    newick_path: &Path,
    params_path: &Path,
    naive_label: &str,
    augmented: &Msa,
    k: usize,
) -> Result<Vec<PhyloSample>> {
    let tree_text = std::fs::read_to_string(newick_path).map_err(|e| Error::io(newick_path, e))?;
    let table = std::fs::read_to_string(params_path).map_err(|e| Error::io(params_path, e))?;
    let trees = parse_newick_lines(&tree_text, naive_label)?;
    let mut lines = table.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format {
            what: "trace",
            message: "empty parameter table".into(),
        })?
        .split('\t')
        .map(str::trim)
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let idx: Vec<usize> = TRACE_COLUMNS
        .iter()
        .map(|c| {
            col(c).ok_or_else(|| Error::Format {
                what: "trace",
                message: format!("missing column {c:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let loglik_col = col("loglik");
    let rows: Vec<&str> = lines.collect();
    if rows.len() != trees.len() {
        return Err(Error::DataMismatch(format!(
            "{} trees but {} parameter rows",
            trees.len(),
            rows.len()
        )));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, (line, tree)) in rows.iter().zip(trees).enumerate() {
        let row = i + 1;
        let bad = |message: String| Error::TraceRow { row, message };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let num = |c: usize| -> Result<f64> {
            let f = fields.get(c).ok_or_else(|| bad(format!("missing field {}", header[c])))?;
            f.parse::<f64>()
                .map_err(|_| bad(format!("{}: cannot parse {f:?}", header[c])))
        };
        let vals: Vec<f64> = idx.iter().map(|&c| num(c)).collect::<Result<_>>()?;
        let alpha = vals[0];
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(bad(format!("alpha {alpha} must be positive")));
        }
        let pi = [vals[1], vals[2], vals[3], vals[4]];
        let pi_sum: f64 = pi.iter().sum();
        if pi.iter().any(|&x| !(x > 0.0)) || (pi_sum - 1.0).abs() > 1e-6 {
            return Err(bad(format!("base frequencies sum to {pi_sum}, not 1")));
        }
        let e = [vals[5], vals[6], vals[7], vals[8], vals[9], vals[10]];
        let params = GtrParams::new(e, pi.map(|x| x / pi_sum)).map_err(|err| bad(err.to_string()))?;
        TipMap::bind(&tree, augmented)?;
        let proposal_loglik = match loglik_col {
            Some(c) => num(c)?,
            None => log_likelihood(&tree, augmented, &params, &discrete_gamma_rates(alpha, k)?)?,
        };
        if !proposal_loglik.is_finite() {
            return Err(bad(format!("log-likelihood {proposal_loglik} is not finite")));
        }
        out.push(PhyloSample {
            tree,
            params,
            alpha,
            proposal_loglik,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylogeny::parse_newick;
    use rand_chacha::ChaCha8Rng;

    fn gtr() -> GtrParams {
        GtrParams::new([1.0, 2.5, 0.8, 1.0, 2.5, 1.0], [0.3, 0.2, 0.22, 0.28]).unwrap()
    }

    fn random_msa(ids: &[&str], n: usize, rng: &mut ChaCha8Rng) -> Msa {
        let seqs: Vec<String> = ids
            .iter()
            .map(|_| (0..n).map(|_| b"ACGTN"[rng.random_range(0..5)] as char).collect())
            .collect();
        Msa::new(ids.iter().map(|s| s.to_string()).collect(), &seqs).unwrap()
    }

    #[test]
    fn cache_matches_direct_likelihood_through_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tips: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let mut tree = random_topology(&tips, "naive", &mut rng, |r| r.random_range(0.01..0.3)).unwrap();
        let mut ids: Vec<&str> = tips.iter().map(String::as_str).collect();
        ids.push("naive");
        let msa = random_msa(&ids, 40, &mut rng);
        let params = gtr();
        let rm = discrete_gamma_rates(0.6, 3).unwrap();
        let q = build_rate_matrix(&params).unwrap();
        let map = TipMap::bind(&tree, &msa).unwrap();
        let pats = SitePatterns::compress(&msa);
        let mut cache = TreeLikelihood::new(&tree, &map, &pats, &q, &rm.rates);
        let direct = log_likelihood(&tree, &msa, &params, &rm).unwrap();
        assert!((cache.log_likelihood() - direct).abs() < 1e-9);
        for step in 0..40 {
            let before = cache.log_likelihood();
            let saved = tree.clone();
            if step % 2 == 0 {
                let v = rng.random_range(1..tree.len());
                tree.set_branch_length(v, rng.random_range(0.0..0.5));
                cache.update(&tree, &q, &rm.rates, &[v], &[]);
            } else {
                let cands: Vec<_> = tree
                    .internal_nodes()
                    .into_iter()
                    .filter(|&v| tree.node(v).parent != Some(NAIVE))
                    .collect();
                let u = cands[rng.random_range(0..cands.len())];
                let p = tree.node(u).parent.unwrap();
                let c = tree.node(u).children[0];
                let s = *tree.node(p).children.iter().find(|&&x| x != u).unwrap();
                tree.swap_subtrees(c, s);
                cache.update(&tree, &q, &rm.rates, &[], &[u]);
            }
            let direct = log_likelihood(&tree, &msa, &params, &rm).unwrap();
            assert!((cache.log_likelihood() - direct).abs() < 1e-9 * direct.abs());
            if step % 3 == 0 {
                tree = saved;
                cache.rollback();
                assert_eq!(cache.log_likelihood(), before);
            } else {
                cache.commit();
            }
        }
    }

    #[test]
    fn neighbor_joining_recovers_additive_tree() {
        let truth = parse_newick("((A:0.05,B:0.1):0.08,(C:0.04,D:0.12):0.06,naive:0.03);", "naive").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seqs = Vec::new();
        let ids = ["A", "B", "C", "D", "naive"];
        // Long sequences evolved on the tree give near-additive distances.
        let q = build_rate_matrix(&GtrParams::jukes_cantor()).unwrap();
        let n = 20_000;
        let mut states = vec![vec![0u8; n]; truth.len()];
        for j in 0..n {
            states[NAIVE][j] = rng.random_range(0..4);
            for v in truth.preorder().skip(1) {
                let p = truth.node(v).parent.unwrap();
                let row = q.transition(truth.branch_length(v)).unwrap()[states[p][j] as usize];
                states[v][j] = crate::util::sample_index(&row, &mut rng) as u8;
            }
        }
        for id in ids {
            let v = if id == "naive" { NAIVE } else { truth.find_tip(id).unwrap() };
            seqs.push(crate::dna::decode_all(&states[v]));
        }
        let msa = Msa::new(ids.iter().map(|s| s.to_string()).collect(), &seqs).unwrap();
        let nj = neighbor_joining(&msa, "naive", 1e-4).unwrap();
        assert_eq!(nj.topology_key(), truth.topology_key());
        assert!((nj.total_length() - truth.total_length()).abs() < 0.03);
    }

    #[test]
    fn acceptance_ratio_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = rng.random_range(-100.0..0.0);
            let b = rng.random_range(-100.0..0.0);
            let h = rng.random_range(-2.0..2.0);
            assert_eq!(log_acceptance_ratio(a, b, h), -log_acceptance_ratio(b, a, -h));
            assert_eq!(log_acceptance_ratio(a, b, 0.0), -log_acceptance_ratio(b, a, 0.0));
        }
    }

    #[test]
    fn exchangeability_scale_does_not_change_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let msa = random_msa(&["a", "b", "c", "naive"], 30, &mut rng);
        let tree = parse_newick("((a:0.1,b:0.2):0.05,c:0.3,naive:0.1);", "naive").unwrap();
        let rm = discrete_gamma_rates(0.5, 4).unwrap();
        let p = gtr();
        let mut scaled = p;
        scaled.exchangeabilities.iter_mut().for_each(|x| *x *= 7.3);
        let a = log_likelihood(&tree, &msa, &p, &rm).unwrap();
        let b = log_likelihood(&tree, &msa, &scaled, &rm).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn samples_carry_exact_likelihoods_and_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let msa = random_msa(&["a", "b", "c", "d", "e", "naive"], 25, &mut rng);
        let cfg = McmcConfig {
            iterations: 3000,
            thin: 10,
            burn_in: 50,
            seed: 77,
            ..Default::default()
        };
        let run = run_mcmc(&msa, "naive", &cfg, 3).unwrap();
        assert_eq!(run.len(), cfg.retained());
        for s in run.iter().step_by(25) {
            let rm = discrete_gamma_rates(s.alpha, 3).unwrap();
            let direct = log_likelihood(&s.tree, &msa, &s.params, &rm).unwrap();
            assert!((s.proposal_loglik - direct).abs() < 1e-8 * direct.abs().max(1.0));
        }
        let again = run_mcmc(&msa, "naive", &cfg, 3).unwrap();
        assert_eq!(run, again);
        let random_start = McmcConfig {
            initial_tree: InitialTree::Random,
            ..cfg.clone()
        };
        assert!(run_mcmc(&msa, "naive", &random_start, 3).is_ok());
    }

    #[test]
    fn prior_only_chain_recovers_prior_moments() {
        let msa = Msa::new(
            vec!["a".into(), "b".into(), "c".into(), "naive".into()],
            &["NNNN", "NNNN", "NNNN", "NNNN"],
        )
        .unwrap();
        let cfg = McmcConfig {
            iterations: 1_000_000,
            thin: 250,
            burn_in: 100,
            initial_tree: InitialTree::Random,
            seed: 5,
            ..Default::default()
        };
        let run = run_mcmc(&msa, "naive", &cfg, 2).unwrap();
        let n = run.len() as f64;
        let mean = |f: &dyn Fn(&PhyloSample) -> f64| run.iter().map(f).sum::<f64>() / n;
        // Thinned draws are close to independent; 3 standard errors of the prior.
        let pi_mean = mean(&|s| s.params.base_freqs[0]);
        let pi_sd = (0.25f64 * 0.75 / 5.0).sqrt();
        assert!((pi_mean - 0.25).abs() < 3.0 * pi_sd / n.sqrt() * 2.0, "{pi_mean}");
        let t_mean = mean(&|s| s.tree.branch_length(1));
        assert!((t_mean - 0.1).abs() < 3.0 * 0.1 / n.sqrt() * 2.0, "{t_mean}");
        let a_mean = mean(&|s| s.alpha);
        assert!((a_mean - 0.1).abs() < 3.0 * 0.1 / n.sqrt() * 2.0, "{a_mean}");
    }

    #[test]
    fn star_posterior_mean_matches_grid_integration() {
        // naive, A and B around one internal node, 1000 JC columns at 0.1 per branch.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = build_rate_matrix(&GtrParams::jukes_cantor()).unwrap();
        let p = q.transition(0.1).unwrap();
        let n = 1000;
        let mut rows = vec![Vec::new(); 3];
        for _ in 0..n {
            let c = rng.random_range(0..4usize);
            for row in rows.iter_mut() {
                row.push(crate::util::sample_index(&p[c], &mut rng) as u8);
            }
        }
        let ids: Vec<String> = ["A", "B", "naive"].iter().map(|s| s.to_string()).collect();
        let msa = Msa::from_encoded(ids, rows).unwrap();
        let weights = MoveWeights {
            nni: 0.0,
            branch_length: 1.0,
            base_freqs: 0.0,
            exchangeabilities: 0.0,
            alpha: 0.0,
        };
        let cfg = McmcConfig {
            iterations: 150_000,
            thin: 10,
            burn_in: 500,
            weights,
            initial_params: Some(GtrParams::jukes_cantor()),
            seed: 11,
            ..Default::default()
        };
        let run = run_mcmc(&msa, "naive", &cfg, 1).unwrap();
        let mcmc_mean = run.iter().map(|s| s.tree.total_length()).sum::<f64>() / run.len() as f64 / 3.0;

        // Grid oracle over the three branch lengths.
        let pats = SitePatterns::compress(&msa);
        let grid: Vec<f64> = (0..60).map(|i| 0.04 + i as f64 * 0.003).collect();
        let mut lt: Vec<[[f64; 4]; 4]> = grid.iter().map(|&t| q.transition(t).unwrap()).collect();
        for m in lt.iter_mut() {
            for r in m.iter_mut() {
                for x in r.iter_mut() {
                    *x = x.ln();
                }
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        let mut logs = Vec::new();
        for a in 0..grid.len() {
            for b in 0..grid.len() {
                for c in 0..grid.len() {
                    let mut l = -10.0 * (grid[a] + grid[b] + grid[c]);
                    for (pat, &cnt) in pats.patterns.iter().zip(&pats.counts) {
                        let (x, y, z) = (pat[0] as usize, pat[1] as usize, pat[2] as usize);
                        let s: f64 = (0..4)
                            .map(|h| (lt[a][h][x] + lt[b][h][y] + lt[c][h][z]).exp())
                            .sum::<f64>()
                            * 0.25;
                        l += cnt * s.ln();
                    }
                    logs.push((l, grid[a] + grid[b] + grid[c]));
                }
            }
        }
        let max = logs.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        for (l, t) in logs {
            let w = (l - max).exp();
            num += w * t / 3.0;
            den += w;
        }
        let grid_mean = num / den;
        assert!((mcmc_mean - 0.1).abs() < 0.02, "{mcmc_mean}");
        assert!((mcmc_mean - grid_mean).abs() < 0.05 * grid_mean, "{mcmc_mean} vs {grid_mean}");
    }

    #[test]
    fn trace_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let msa = random_msa(&["a", "b", "c", "naive"], 20, &mut rng);
        let cfg = McmcConfig {
            iterations: 300,
            thin: 100,
            burn_in: 0,
            ..Default::default()
        };
        let run = run_mcmc(&msa, "naive", &cfg, 2).unwrap();
        assert_eq!(run.len(), 3);
        let (nwk, tsv) = (dir.path().join("t.nwk"), dir.path().join("p.tsv"));
        write_trace(&run, &nwk, &tsv).unwrap();
        let back = load_trace(&nwk, &tsv, "naive", &msa, 2).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in run.iter().zip(&back) {
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.proposal_loglik, b.proposal_loglik);
        }

        // Without a likelihood column the value is recomputed.
        let text = std::fs::read_to_string(&tsv).unwrap();
        let stripped: String = text
            .lines()
            .map(|l| l.rsplit_once('\t').unwrap().0.to_string() + "\n")
            .collect();
        std::fs::write(&tsv, &stripped).unwrap();
        let re = load_trace(&nwk, &tsv, "naive", &msa, 2).unwrap();
        for (a, b) in run.iter().zip(&re) {
            let rm = discrete_gamma_rates(b.alpha, 2).unwrap();
            assert_eq!(b.proposal_loglik, log_likelihood(&b.tree, &msa, &b.params, &rm).unwrap());
            assert!((a.proposal_loglik - b.proposal_loglik).abs() < 1e-8);
        }

        // A base-frequency row summing to 0.8 is rejected with its row number.
        let mut lines: Vec<String> = stripped.lines().map(String::from).collect();
        let mut f: Vec<String> = lines[2].split('\t').map(String::from).collect();
        f[1] = format!("{}", f[1].parse::<f64>().unwrap() - 0.2);
        lines[2] = f.join("\t");
        std::fs::write(&tsv, lines.join("\n")).unwrap();
        match load_trace(&nwk, &tsv, "naive", &msa, 2) {
            Err(Error::TraceRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }

        // Row-count mismatch.
        std::fs::write(&tsv, stripped.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(matches!(load_trace(&nwk, &tsv, "naive", &msa, 2), Err(Error::DataMismatch(_))));
    }
}
