//! Clonal trees, alignments, Newick I/O and Felsenstein pruning.

mod msa;
mod newick;
mod pruning;
mod tree;

pub use msa::Msa;
pub use newick::{parse_newick, parse_newick_lines};
pub use pruning::{
    branch_transitions, log_likelihood, naive_conditional_site_likelihood, patterns_log_likelihood,
    prune_partials, LikelihoodModel, PartialLikelihoods, SitePatterns, TipMap,
};
pub use tree::{tree_imbalance, CladeTree, Node, NodeId, NAIVE};

pub(crate) use pruning::{log_mean_exp, prune_into};

use rand::Rng;

use crate::error::Result;

/// Draws a topology uniformly from unrooted binary trees on `tips` plus the
/// naive leaf, by stepwise addition onto uniformly chosen edges.
/// `branch_length` supplies every branch length.
pub fn random_topology<R: Rng + ?Sized>(
    tips: &[String],
    naive_label: &str,
    rng: &mut R,
    mut branch_length: impl FnMut(&mut R) -> f64,
) -> Result<CladeTree> {
    let mut labels: Vec<Option<String>> = vec![Some(naive_label.to_string())];
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    match tips.len() {
        0 => return Err(crate::error::Error::arg("at least one tip is required")),
        1 => {
            labels.push(Some(tips[0].clone()));
            edges.push((0, 1, branch_length(rng)));
        }
        _ => {
            // Star on naive + first two tips.
            labels.push(None);
            labels.push(Some(tips[0].clone()));
            labels.push(Some(tips[1].clone()));
            edges.push((1, 0, branch_length(rng)));
            edges.push((1, 2, branch_length(rng)));
            edges.push((1, 3, branch_length(rng)));
            for tip in &tips[2..] {
                let e = rng.random_range(0..edges.len());
                let (a, b, _) = edges[e];
                let mid = labels.len();
                labels.push(None);
                let leaf = labels.len();
                labels.push(Some(tip.clone()));
                edges[e] = (a, mid, branch_length(rng));
                edges.push((mid, b, branch_length(rng)));
                edges.push((mid, leaf, branch_length(rng)));
            }
        }
    }
    CladeTree::from_edges(labels, &edges, naive_label)
}
