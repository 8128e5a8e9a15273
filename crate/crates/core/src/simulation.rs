//! Synthetic clonal families: beta-splitting topologies, uniform branch
//! lengths, prior-drawn naive sequences and GTR+Gamma evolution, plus the
//! experiment grid writer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

use crate::dna;
use crate::error::{Error, Result};
use crate::phylogeny::{parse_newick, tree_imbalance, CladeTree, Msa, Node, NodeId, NAIVE};
use crate::prior::NaivePrior;
use crate::substitution::{build_rate_matrix, discrete_gamma_rates, GtrParams, Matrix4};
use crate::util::{sample_index, sample_log_index, stream_rng};

/// Mean simulated branch length.
pub const DEFAULT_BRANCH_SCALE: f64 = 0.0179;
/// Default naive-to-attachment branch length.
pub const DEFAULT_ROOT_BRANCH: f64 = 0.01759;
/// Probability that a templated position of the demo prior keeps its germline base.
pub const GERMLINE_WEIGHT: f64 = 0.97;
pub const GRID_BETAS: [f64; 3] = [-1.5, -1.25, -1.0];
pub const GRID_SIZES: [usize; 2] = [40, 80];
pub const GRID_ROOT_BRANCHES: [f64; 2] = [DEFAULT_ROOT_BRANCH, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub beta: f64,
    pub n_cf: usize,
    pub t0: f64,
    pub branch_scale: f64,
    pub k: usize,
    pub alpha: f64,
    pub params: GtrParams,
    pub replicates: usize,
    pub seed: u64,
    pub naive_label: String,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            beta: -1.0,
            n_cf: 40,
            t0: DEFAULT_ROOT_BRANCH,
            branch_scale: DEFAULT_BRANCH_SCALE,
            k: 4,
            alpha: 1.0,
            params: GtrParams::new([1.0, 2.5, 0.8, 1.0, 2.5, 1.0], [0.3, 0.2, 0.22, 0.28]).expect("valid defaults"),
            replicates: 15,
            seed: 1,
            naive_label: "naive".into(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > -2.0) {
            return Err(Error::param(format!("beta {} must exceed -2", self.beta)));
        }
        if self.n_cf < 2 {
            return Err(Error::param("at least two sequences per family"));
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return Err(Error::param("t0 must be non-negative"));
        }
        if !(self.branch_scale >= 0.0 && self.branch_scale.is_finite()) {
            return Err(Error::param("branch scale must be non-negative"));
        }
        if self.k == 0 {
            return Err(Error::param("at least one rate class"));
        }
        self.params.validate()
    }
}

/// Log-probabilities of sending `i` of `n` leaves to the left, `i = 1..n-1`,
/// under beta-splitting with uniform leaf positions and both sides non-empty.
fn split_log_weights(n: usize, beta: f64) -> Vec<f64> {
    (1..n)
        .map(|i| ln_binomial(n as u64, i as u64) + ln_beta(beta + i as f64 + 1.0, beta + (n - i) as f64 + 1.0))
        .collect()
}

/// Random binary topology on `n_cf` tips labelled `seq1..`, with the naive
/// leaf attached to the root split. All branch lengths are 1.
pub fn beta_splitting_topology<R: Rng + ?Sized>(n_cf: usize, beta: f64, naive_label: &str, rng: &mut R) -> Result<CladeTree> {
    if n_cf < 2 {
        return Err(Error::param("at least two tips"));
    }
    if !(beta > -2.0) {
        return Err(Error::param(format!("beta {beta} must exceed -2")));
    }
    let mut nodes = vec![Node {
        label: Some(naive_label.to_string()),
        parent: None,
        children: Vec::new(),
        branch_length: 0.0,
    }];
    let mut next_tip = 0;
    let mut weights_cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    // Stack of (parent, tip count) still to be expanded.
    let mut stack = vec![(NAIVE, n_cf)];
    while let Some((parent, n)) = stack.pop() {
        let id = nodes.len();
        nodes[parent].children.push(id);
        if n == 1 {
            next_tip += 1;
            nodes.push(Node {
                label: Some(format!("seq{next_tip}")),
                parent: Some(parent),
                children: Vec::new(),
                branch_length: 1.0,
            });
            continue;
        }
        nodes.push(Node {
            label: None,
            parent: Some(parent),
            children: Vec::new(),
            branch_length: 1.0,
        });
        let w = weights_cache.entry(n).or_insert_with(|| split_log_weights(n, beta));
        let left = 1 + sample_log_index(w, rng).expect("finite split weights");
        // Right side pushed first so the left side is expanded first.
        stack.push((id, n - left));
        stack.push((id, left));
    }
    CladeTree::from_nodes(nodes)
}

/// Sum over internal nodes of the absolute difference in tip counts between
/// the two child subtrees (max minus min for a multifurcation).
pub fn colless_index(tree: &CladeTree) -> f64 {
    let mut tips = vec![0usize; tree.len()];
    let mut total = 0usize;
    for &v in tree.postorder() {
        if v == NAIVE {
            continue;
        }
        let node = tree.node(v);
        if node.children.is_empty() {
            tips[v] = 1;
            continue;
        }
        let counts: Vec<usize> = node.children.iter().map(|&c| tips[c]).collect();
        tips[v] = counts.iter().sum();
        total += counts.iter().max().unwrap() - counts.iter().min().unwrap();
    }
    total as f64
}

/// Every branch except the naive one gets an independent Uniform(0, 2M)
/// length; the naive branch gets `t0`.
pub fn assign_branch_lengths<R: Rng + ?Sized>(topology: &CladeTree, m: f64, t0: f64, rng: &mut R) -> CladeTree {
    let mut tree = topology.clone();
    let attachment = tree.attachment();
    for v in 1..tree.len() {
        let len = if v == attachment {
            t0
        } else if m > 0.0 {
            rng.random_range(0.0..2.0 * m)
        } else {
            0.0
        };
        tree.set_branch_length(v, len);
    }
    tree
}

/// Evolves `naive` down the tree. Each column draws a rate class uniformly.
/// Returns the tip alignment (tips in node order) and the state sequence of every node.
pub fn evolve_sequences<R: Rng + ?Sized>(
    tree: &CladeTree,
    naive: &[u8],
    params: &GtrParams,
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<(Msa, Vec<Vec<u8>>)> {
    if naive.iter().any(|&s| s > 3) {
        return Err(Error::arg("naive sequence must be unambiguous"));
    }
    let q = build_rate_matrix(params)?;
    let rm = discrete_gamma_rates(alpha, k)?;
    let trans: Vec<Vec<Matrix4>> = rm
        .rates
        .iter()
        .map(|&r| crate::phylogeny::branch_transitions(tree, &q, r))
        .collect();
    let n = naive.len();
    let mut states = vec![vec![0u8; n]; tree.len()];
    states[NAIVE] = naive.to_vec();
    let order: Vec<NodeId> = tree.preorder().skip(1).collect();
    for j in 0..n {
        let r = rng.random_range(0..k);
        for &v in &order {
            let p = states[tree.node(v).parent.expect("non-root")][j] as usize;
            states[v][j] = sample_index(&trans[r][v][p], rng) as u8;
        }
    }
    let tips = tree.tips();
    let ids = tips.iter().map(|&v| tree.tip_label(v).to_string()).collect();
    let rows = tips.iter().map(|&v| states[v].clone()).collect();
    Ok((Msa::from_encoded(ids, rows)?, states))
}

/// One simulated family with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedFamily {
    pub tree: CladeTree,
    pub naive: Vec<u8>,
    /// State sequence of every node, indexed by node id.
    pub node_states: Vec<Vec<u8>>,
    pub msa: Msa,
}

impl SimulatedFamily {
    pub fn imbalance(&self) -> f64 {
        tree_imbalance(&self.tree)
    }
}

pub fn simulate_family<R: Rng + ?Sized>(config: &SimulationConfig, prior: &NaivePrior, rng: &mut R) -> Result<SimulatedFamily> {
    config.validate()?;
    let topology = beta_splitting_topology(config.n_cf, config.beta, &config.naive_label, rng)?;
    let tree = assign_branch_lengths(&topology, config.branch_scale, config.t0, rng);
    let naive = prior.sample_states(rng);
    let (msa, node_states) = evolve_sequences(&tree, &naive, &config.params, config.k, config.alpha, rng)?;
    Ok(SimulatedFamily {
        tree,
        naive,
        node_states,
        msa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMeta {
    pub beta: f64,
    pub n_cf: usize,
    pub t0: f64,
    pub branch_scale: f64,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub stream: u64,
    pub imbalance: f64,
    pub colless: f64,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `tree.nwk`, `naive.fasta`, `internal_truth.tsv`, `msa.fasta` and `meta.json`.
pub fn write_family(dir: &Path, family: &SimulatedFamily, meta: &ReplicateMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tree = &family.tree;
    write_file(&dir.join("tree.nwk"), &format!("{}\n", tree.to_newick()))?;
    write_file(
        &dir.join("naive.fasta"),
        &format!(">{}\n{}\n", tree.naive_label(), dna::decode_all(&family.naive)),
    )?;
    let mut truth = String::from("clade\tsequence\n");
    for v in tree.internal_nodes() {
        let _ = writeln!(truth, "{}\t{}", tree.clade_signature(v), dna::decode_all(&family.node_states[v]));
    }
    write_file(&dir.join("internal_truth.tsv"), &truth)?;
    write_file(&dir.join("msa.fasta"), &family.msa.to_fasta())?;
    write_file(&dir.join("meta.json"), &(serde_json::to_string_pretty(meta)? + "\n"))
}

/// Ground truth read back from a replicate directory.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub tree: CladeTree,
    pub naive: Vec<u8>,
    /// Internal-node sequences keyed by clade signature.
    pub internal: BTreeMap<String, Vec<u8>>,
    pub msa: Msa,
}

impl TruthRecord {
    pub fn from_family(family: &SimulatedFamily) -> Self {
        let tree = &family.tree;
        Self {
            internal: tree
                .internal_nodes()
                .into_iter()
                .map(|v| (tree.clade_signature(v), family.node_states[v].clone()))
                .collect(),
            tree: family.tree.clone(),
            naive: family.naive.clone(),
            msa: family.msa.clone(),
        }
    }

    /// Sequence at the naive leaf, an internal node or an observed tip.
    pub fn node_sequence(&self, v: NodeId) -> Option<Vec<u8>> {
        if v == NAIVE {
            return Some(self.naive.clone());
        }
        if self.tree.is_tip(v) {
            let row = self.msa.row_index(self.tree.tip_label(v))?;
            return Some(self.msa.rows()[row].clone());
        }
        self.internal.get(&self.tree.clade_signature(v)).cloned()
    }
}

pub fn read_truth(dir: &Path, naive_label: &str) -> Result<TruthRecord> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let tree = parse_newick(read("tree.nwk")?.trim(), naive_label)?;
    let naive_msa = Msa::parse_fasta(&read("naive.fasta")?)?;
    if naive_msa.n_seqs() != 1 {
        return Err(Error::Format {
            what: "naive FASTA",
            message: "expected exactly one sequence".into(),
        });
    }
    let mut internal = BTreeMap::new();
    for line in read("internal_truth.tsv")?.lines().skip(1).filter(|l| !l.is_empty()) {
        let (sig, seq) = line.split_once('\t').ok_or_else(|| Error::Format {
            what: "internal truth",
            message: format!("malformed line {line:?}"),
        })?;
        internal.insert(sig.to_string(), dna::encode_strict(seq)?);
    }
    Ok(TruthRecord {
        tree,
        naive: naive_msa.rows()[0].clone(),
        internal,
        msa: Msa::read_fasta(&dir.join("msa.fasta"))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub dir: PathBuf,
    pub meta: ReplicateMeta,
    pub replicate: usize,
}

/// The full grid of (beta, N_CF, t0) cells.
pub fn paper_grid() -> Vec<(f64, usize, f64)> {
    let mut cells = Vec::new();
    for &b in &GRID_BETAS {
        for &n in &GRID_SIZES {
            for &t in &GRID_ROOT_BRANCHES {
                cells.push((b, n, t));
            }
        }
    }
    cells
}

pub fn replicate_dir_name(beta: f64, n_cf: usize, t0: f64, replicate: usize) -> String {
    format!("beta{beta}_n{n_cf}_t0{t0}/rep{:03}", replicate + 1)
}

/// Simulates `base.replicates` families for every cell, writing one
/// directory per replicate and `manifest.tsv` under `out_dir`.
pub fn run_grid(
    base: &SimulationConfig,
    cells: &[(f64, usize, f64)],
    prior: &NaivePrior,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..base.replicates).map(move |r| (c, r)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (beta, n_cf, t0) = cells[c];
            let config = SimulationConfig {
                beta,
                n_cf,
                t0,
                ..base.clone()
            };
            let stream = ((c as u64) << 32) | r as u64;
            let mut rng: ChaCha20Rng = stream_rng(base.seed, stream);
            let family = simulate_family(&config, prior, &mut rng)?;
            let meta = ReplicateMeta {
                beta,
                n_cf,
                t0,
                branch_scale: config.branch_scale,
                k: config.k,
                alpha: config.alpha,
                seed: base.seed,
                stream,
                imbalance: family.imbalance(),
                colless: colless_index(&family.tree),
            };
            let dir = out_dir.join(replicate_dir_name(beta, n_cf, t0, r));
            write_family(&dir, &family, &meta)?;
            Ok(ManifestRow { dir, meta, replicate: r + 1 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = String::from("dir\tbeta\tn_cf\tt0\treplicate\tseed\tstream\timbalance\tcolless\n");
    for row in &rows {
        let rel = row.dir.strip_prefix(out_dir).unwrap_or(&row.dir);
        let m = &row.meta;
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rel.display(),
            m.beta,
            m.n_cf,
            m.t0,
            row.replicate,
            m.seed,
            m.stream,
            m.imbalance,
            m.colless
        );
    }
    write_file(&out_dir.join("manifest.tsv"), &manifest)?;
    Ok(rows)
}

pub fn run_experiment_grid(base: &SimulationConfig, prior: &NaivePrior, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    run_grid(base, &paper_grid(), prior, out_dir)
}

/// Synthetic naive-sequence prior of length `length` with germline-anchored
/// stretches and a variable junction. It only exercises the machinery.
pub fn demo_prior(length: usize) -> Result<NaivePrior> {
    if length < 2 {
        return Err(Error::arg("demo prior needs length >= 2"));
    }
    let mut rng = stream_rng(20_240_601, 0);
    let germline: Vec<usize> = (0..length).map(|_| rng.random_range(0..4)).collect();
    let (junction_start, junction_end) = (length * 3 / 4, length * 7 / 8);
    let anchored = |j: usize| -> [f64; 4] {
        let mut row = [(1.0 - GERMLINE_WEIGHT) / 3.0; 4];
        row[germline[j]] = GERMLINE_WEIGHT;
        row
    };
    let initial = anchored(0);
    let transitions = (1..length)
        .map(|j| {
            if (junction_start..junction_end).contains(&j) {
                std::array::from_fn(|a| {
                    let mut row: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.2..1.0));
                    row[a] += 0.5;
                    let s: f64 = row.iter().sum();
                    row.map(|x| x / s)
                })
            } else {
                [anchored(j); 4]
            }
        })
        .collect();
    NaivePrior::new(initial, transitions)
}
