//! Bayesian phylo-HMM inference for clonal B cell receptor families.
//!
//! Proposal draws of the tree and substitution parameters are reweighted by
//! the phylo-HMM likelihood (a position-dependent Markov chain prior on the
//! naive sequence combined with naive-conditional Felsenstein emissions),
//! resampled without replacement, and extended with sampled naive sequences,
//! per-site rate categories and intermediate ancestral sequences.

pub mod ancestral;
pub mod dna;
pub mod error;
pub mod mcmc;
pub mod oracle;
pub mod phylogeny;
pub mod phylo_hmm;
pub mod pipeline;
pub mod prior;
pub mod report;
pub mod simulation;
pub mod sir;
pub mod star;
pub mod substitution;
pub mod util;

pub use error::{Error, Result};
