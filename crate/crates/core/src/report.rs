//! Posterior summaries and validation metrics: translated naive FASTA,
//! DNA to amino-acid maps, per-site amino-acid matrices, lineage graphs and
//! ancestral-lineage classification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::ancestral::PosteriorDraw;
use crate::dna;
use crate::error::{Error, Result};
use crate::phylogeny::{CladeTree, Msa, NodeId};
use crate::util::fmt_g6;

/// Column order of the per-site amino-acid matrix.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY*X";
pub const DEFAULT_LINEAGE_CUTOFF: f64 = 0.04;

const CODON_TABLE: &[u8; 64] = b"KNKNTTTTRSRSIIMIQHQHPPPPRRRRLLLLEDEDAAAAGGGGVVVV*Y*YSSSS*CWCLFLF";

fn codon_index(c: u8) -> Option<usize> {
    match c.to_ascii_uppercase() {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' | b'U' => Some(3),
        _ => None,
    }
}

/// Standard genetic code, reading frame starting at the first base.
/// Stops become `*`, codons with an ambiguous base become `X`.
pub fn translate_dna(seq: &str) -> Result<String> {
    let bytes = seq.as_bytes();
    if !bytes.len().is_multiple_of(3) {
        return Err(Error::Frame(bytes.len()));
    }
    Ok(bytes
        .chunks(3)
        .map(|c| match (codon_index(c[0]), codon_index(c[1]), codon_index(c[2])) {
            (Some(a), Some(b), Some(d)) => CODON_TABLE[16 * a + 4 * b + d] as char,
            _ => 'X',
        })
        .collect())
}

pub fn hamming(a: &str, b: &str) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("hamming on lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.bytes().zip(b.bytes()).filter(|(x, y)| x != y).count())
}

/// Level at which lineage sequences are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alphabet {
    #[default]
    AminoAcid,
    Dna,
}

impl Alphabet {
    pub fn render(self, states: &[u8]) -> Result<String> {
        let text = dna::decode_all(states);
        match self {
            Alphabet::Dna => Ok(text),
            Alphabet::AminoAcid => translate_dna(&text),
        }
    }
}

/// Most frequent value; ties go to the lexicographically smallest.
pub fn mode<T: Ord + Clone>(items: &[T]) -> Option<T> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for x in items {
        *counts.entry(x).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(x, _)| x.clone())
}

/// Most frequently sampled naive sequence.
pub fn modal_naive(draws: &[PosteriorDraw]) -> Option<Vec<u8>> {
    mode(&draws.iter().map(|d| d.naive.clone()).collect::<Vec<_>>())
}

/// Empirical frequencies, sorted by descending probability then by key.
fn frequencies(keys: impl IntoIterator<Item = String>) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for k in keys {
        *counts.entry(k).or_default() += 1;
        total += 1;
    }
    let mut out: Vec<(String, f64)> = counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveReport {
    /// Unique amino-acid naive sequences with posterior probability.
    pub amino_acid: Vec<(String, f64)>,
    /// Unique nucleotide naive sequences with their translation and probability.
    pub dna: Vec<(String, String, f64)>,
    /// Per-position probabilities over [`AMINO_ACIDS`].
    pub matrix: Vec<[f64; 22]>,
}

pub fn naive_posterior_report(naives: &[Vec<u8>]) -> Result<NaiveReport> {
    if naives.is_empty() {
        return Err(Error::arg("no draws to summarize"));
    }
    let dna_seqs: Vec<String> = naives.iter().map(|s| dna::decode_all(s)).collect();
    let mut translations: HashMap<String, String> = HashMap::new();
    for s in &dna_seqs {
        if !translations.contains_key(s) {
            translations.insert(s.clone(), translate_dna(s)?);
        }
    }
    let aa_seqs: Vec<&String> = dna_seqs.iter().map(|s| &translations[s]).collect();
    let width = aa_seqs[0].len();
    let mut matrix = vec![[0.0; 22]; width];
    for s in &aa_seqs {
        for (row, c) in matrix.iter_mut().zip(s.chars()) {
            row[AMINO_ACIDS.find(c).expect("translation alphabet")] += 1.0;
        }
    }
    let n = aa_seqs.len() as f64;
    for row in &mut matrix {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    let dna = frequencies(dna_seqs.iter().cloned())
        .into_iter()
        .map(|(s, p)| {
            let aa = translations[&s].clone();
            (s, aa, p)
        })
        .collect();
    Ok(NaiveReport {
        amino_acid: frequencies(aa_seqs.into_iter().cloned()),
        dna,
        matrix,
    })
}

impl NaiveReport {
    pub fn fasta(&self) -> String {
        let mut out = String::new();
        for (i, (s, p)) in self.amino_acid.iter().enumerate() {
            let _ = writeln!(out, ">naive_{} posterior={}\n{s}", i + 1, fmt_g6(*p));
        }
        out
    }

    pub fn dna_map_tsv(&self) -> String {
        let mut out = String::from("dna\tamino_acid\tposterior\n");
        for (d, a, p) in &self.dna {
            let _ = writeln!(out, "{d}\t{a}\t{}", fmt_g6(*p));
        }
        out
    }

    pub fn matrix_tsv(&self) -> String {
        let mut out = String::from("position");
        for c in AMINO_ACIDS.chars() {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (i, row) in self.matrix.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for x in row {
                let _ = write!(out, "\t{}", fmt_g6(*x));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub rho: f64,
    /// 1-based inclusive column interval.
    pub region: Option<(usize, usize)>,
    pub lineage_tip: String,
    pub lineage_cutoff: f64,
    pub alphabet: Alphabet,
}

impl ValidationConfig {
    pub fn new(lineage_tip: impl Into<String>) -> Self {
        Self {
            rho: 0.5,
            region: None,
            lineage_tip: lineage_tip.into(),
            lineage_cutoff: DEFAULT_LINEAGE_CUTOFF,
            alphabet: Alphabet::AminoAcid,
        }
    }

    pub fn validate(&self, n_columns: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::arg(format!("rho {} must lie in (0, 1)", self.rho)));
        }
        if let Some((a, b)) = self.region {
            if a < 1 || a > b || b > n_columns {
                return Err(Error::arg(format!("region {a}-{b} outside 1-{n_columns}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lineage_cutoff) {
            return Err(Error::arg("lineage cutoff must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Restricts to the region and renders in the configured alphabet.
    pub fn render(&self, states: &[u8]) -> Result<String> {
        let states = match self.region {
            Some((a, b)) => &states[a - 1..b],
            None => states,
        };
        self.alphabet.render(states)
    }
}

/// Sequences from the naive leaf to `tip`, consecutive duplicates collapsed.
/// The tip itself is the last entry only when `include_tip` is set.
fn lineage_path(
    tree: &CladeTree,
    tip: NodeId,
    include_tip: bool,
    sequence: impl Fn(NodeId) -> Result<String>,
) -> Result<Vec<String>> {
    let mut path: Vec<String> = Vec::new();
    for v in tree.path_from_naive(tip) {
        if v == tip && !include_tip {
            break;
        }
        let s = sequence(v)?;
        if path.last() != Some(&s) {
            path.push(s);
        }
    }
    Ok(path)
}

fn draw_lineage(draw: &PosteriorDraw, msa: &Msa, config: &ValidationConfig, include_tip: bool) -> Result<Vec<String>> {
    let tree = &draw.sample.tree;
    let tip = tree
        .find_tip(&config.lineage_tip)
        .ok_or_else(|| Error::UnknownIdentifier(config.lineage_tip.clone()))?;
    lineage_path(tree, tip, include_tip, |v| {
        if v == tip {
            let row = msa
                .row_index(&config.lineage_tip)
                .ok_or_else(|| Error::UnknownIdentifier(config.lineage_tip.clone()))?;
            config.render(&msa.rows()[row])
        } else {
            config.render(draw.node_sequence(v).expect("naive or internal node"))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineageSummary {
    /// One path per draw, naive first and the observed tip last.
    pub paths: Vec<Vec<String>>,
    /// Fraction of draws whose path visits each sequence, descending.
    pub nodes: Vec<(String, f64)>,
    /// Fraction of draws whose path contains each transition, descending.
    pub edges: Vec<((String, String), f64)>,
}

fn visit_frequencies<K: Ord + Clone>(sets: impl Iterator<Item = BTreeSet<K>>, n: usize) -> Vec<(K, f64)> {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for set in sets {
        for k in set {
            *counts.entry(k).or_default() += 1;
        }
    }
    let mut out: Vec<(K, f64)> = counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn summarize_paths(paths: Vec<Vec<String>>) -> LineageSummary {
    let n = paths.len().max(1);
    let nodes = visit_frequencies(paths.iter().map(|p| p.iter().cloned().collect()), n);
    let edges = visit_frequencies(
        paths
            .iter()
            .map(|p| p.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()),
        n,
    );
    LineageSummary { paths, nodes, edges }
}

pub fn lineage_summary(draws: &[PosteriorDraw], msa: &Msa, config: &ValidationConfig) -> Result<LineageSummary> {
    config.validate(msa.n_columns())?;
    let paths = draws
        .iter()
        .map(|d| draw_lineage(d, msa, config, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_paths(paths))
}

/// Differing positions as `<from><position><to>`, 1-based.
pub fn mutation_label(from: &str, to: &str) -> String {
    from.chars()
        .zip(to.chars())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (a, b))| format!("{a}{}{b}", i + 1))
        .collect::<Vec<_>>()
        .join(",")
}

impl LineageSummary {
    /// Graphviz description. Nodes and edges below `cutoff` are left out;
    /// fill and edge opacity follow the posterior probability.
    pub fn to_dot(&self, cutoff: f64) -> String {
        let mut out = String::from("digraph lineage {\n  rankdir=TB;\n  node [shape=box, style=filled, fontname=\"monospace\"];\n");
        let mut ids: HashMap<&str, usize> = HashMap::new();
        for (rank, (seq, p)) in self.nodes.iter().enumerate() {
            if *p < cutoff {
                continue;
            }
            ids.insert(seq, rank + 1);
            let _ = writeln!(
                out,
                "  n{r} [label=\"#{r} {p}\", fillcolor=\"#4169e1{a:02x}\", tooltip=\"{seq}\"];",
                r = rank + 1,
                p = fmt_g6(*p),
                a = (p * 255.0).round() as u8,
            );
        }
        for ((from, to), p) in &self.edges {
            if *p < cutoff {
                continue;
            }
            let (Some(a), Some(b)) = (ids.get(from.as_str()), ids.get(to.as_str())) else {
                continue;
            };
            let _ = writeln!(
                out,
                "  n{a} -> n{b} [label=\"{m}\", xlabel=\"{p}\", color=\"#000000{o:02x}\"];",
                m = mutation_label(from, to),
                p = fmt_g6(*p),
                o = (p * 255.0).round() as u8,
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn nodes_tsv(&self) -> String {
        let mut out = String::from("rank\tposterior\tsequence\n");
        for (i, (s, p)) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{s}", i + 1, fmt_g6(*p));
        }
        out
    }
}

/// Tip farthest from the naive leaf by branch length; ties go to the earlier tip.
pub fn farthest_tip(tree: &CladeTree) -> NodeId {
    let depth = tree.depths();
    let tips = tree.tips();
    let mut best = tips[0];
    for &v in &tips[1..] {
        if depth[v] > depth[best] {
            best = v;
        }
    }
    best
}

/// Distinct ancestral sequences (naive plus intermediates) on the true path
/// to the lineage tip.
pub fn true_lineage(
    tree: &CladeTree,
    node_sequence: impl Fn(NodeId) -> Option<Vec<u8>>,
    config: &ValidationConfig,
) -> Result<BTreeSet<String>> {
    let tip = tree
        .find_tip(&config.lineage_tip)
        .ok_or_else(|| Error::UnknownIdentifier(config.lineage_tip.clone()))?;
    let path = lineage_path(tree, tip, false, |v| {
        let s = node_sequence(v).ok_or_else(|| Error::DataMismatch(format!("no true sequence for node {v}")))?;
        config.render(&s)
    })?;
    Ok(path.into_iter().collect())
}

/// Aggregated posterior of each ancestral lineage sequence, tip excluded.
pub fn ancestral_lineage_posteriors(
    draws: &[PosteriorDraw],
    msa: &Msa,
    config: &ValidationConfig,
) -> Result<Vec<(String, f64)>> {
    let paths = draws
        .iter()
        .map(|d| draw_lineage(d, msa, config, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(visit_frequencies(paths.into_iter().map(|p| p.into_iter().collect()), draws.len().max(1)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsrScore {
    /// NaN when the prediction set is empty.
    pub ppv: f64,
    pub ppv_defined: bool,
    pub tpr: f64,
    pub predicted: usize,
    pub truth: usize,
    pub hits: usize,
}

/// Scores the sequences whose posterior reaches `rho` against the true lineage.
pub fn classify(posteriors: &[(String, f64)], truth: &BTreeSet<String>, rho: f64) -> AsrScore {
    let predicted: Vec<&String> = posteriors.iter().filter(|(_, p)| *p >= rho).map(|(s, _)| s).collect();
    let hits = predicted.iter().filter(|s| truth.contains(s.as_str())).count();
    let ppv_defined = !predicted.is_empty();
    AsrScore {
        ppv: if ppv_defined {
            hits as f64 / predicted.len() as f64
        } else {
            f64::NAN
        },
        ppv_defined,
        tpr: if truth.is_empty() {
            f64::NAN
        } else {
            hits as f64 / truth.len() as f64
        },
        predicted: predicted.len(),
        truth: truth.len(),
        hits,
    }
}

pub fn asr_classification(
    draws: &[PosteriorDraw],
    msa: &Msa,
    truth: &BTreeSet<String>,
    config: &ValidationConfig,
) -> Result<AsrScore> {
    config.validate(msa.n_columns())?;
    Ok(classify(&ancestral_lineage_posteriors(draws, msa, config)?, truth, config.rho))
}
