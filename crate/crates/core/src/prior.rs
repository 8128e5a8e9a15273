//! Position-dependent Markov chain prior on the naive sequence.
//!
//! The file format is JSON:
//!
//! ```json
//! {
//!   "length": 4,
//!   "initial": [0.25, 0.25, 0.25, 0.25],
//!   "transitions": [
//!     [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1], [0.1, 0.1, 0.1, 0.7]],
//!     {"matrix": [[0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25]], "repeat": 2}
//!   ]
//! }
//! ```
//!
//! `transitions[j][a][b]` is the probability of base `b` at position `j + 2`
//! given base `a` at position `j + 1`. `transitions` may also be a single
//! `{matrix, repeat}` object for a homogeneous chain.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dna::{self, NUCLEOTIDES};
use crate::error::{Error, Result};
use crate::substitution::Matrix4;
use crate::util::sample_index;

const LOAD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NaivePrior {
    initial: [f64; 4],
    transitions: Vec<Matrix4>,
    log_initial: [f64; 4],
    log_transitions: Vec<Matrix4>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TransitionEntry {
    Matrix(Matrix4),
    Repeated { matrix: Matrix4, repeat: usize },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Transitions {
    List(Vec<TransitionEntry>),
    Homogeneous { matrix: Matrix4, repeat: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    length: usize,
    initial: [f64; 4],
    transitions: Transitions,
}

#[derive(Serialize)]
struct PriorFileOut<'a> {
    length: usize,
    initial: &'a [f64; 4],
    transitions: &'a [Matrix4],
}

fn check_row(row: &[f64; 4], position: usize, state: char) -> Result<[f64; 4]> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Format {
            what: "prior",
            message: format!("position {position}: negative or non-finite probability in row {state}"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > LOAD_TOLERANCE {
        return Err(Error::PriorNormalization {
            position,
            state,
            sum,
        });
    }
    Ok(row.map(|p| p / sum))
}

fn log4(row: &[f64; 4]) -> [f64; 4] {
    row.map(f64::ln)
}

impl NaivePrior {
    /// Validates rows (each within 1e-6 of summing to one) and renormalizes them exactly.
    pub fn new(initial: [f64; 4], transitions: Vec<Matrix4>) -> Result<Self> {
        let initial = check_row(&initial, 1, '-')?;
        let transitions = transitions
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let mut out = [[0.0; 4]; 4];
                for a in 0..4 {
                    out[a] = check_row(&m[a], j + 2, NUCLEOTIDES[a] as char)?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            log_initial: log4(&initial),
            log_transitions: transitions.iter().map(|m| m.map(|r| log4(&r))).collect(),
            initial,
            transitions,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self::iid([0.25; 4], n)
    }

    /// Independent positions, each distributed as `freqs`.
    pub fn iid(freqs: [f64; 4], n: usize) -> Self {
        assert!(n >= 1);
        Self::new(freqs, vec![[freqs; 4]; n - 1]).expect("frequencies must form a distribution")
    }

    pub fn len(&self) -> usize {
        self.transitions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn initial(&self) -> &[f64; 4] {
        &self.initial
    }

    /// Transition matrix from position `j` to `j + 1` (0-based).
    pub fn transition(&self, j: usize) -> &Matrix4 {
        &self.transitions[j]
    }

    pub fn log_initial(&self) -> &[f64; 4] {
        &self.log_initial
    }

    pub fn log_transition(&self, j: usize) -> &Matrix4 {
        &self.log_transitions[j]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PriorFile = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "prior",
            message: e.to_string(),
        })?;
        let transitions: Vec<Matrix4> = match file.transitions {
            Transitions::Homogeneous { matrix, repeat } => vec![matrix; repeat],
            Transitions::List(entries) => entries
                .into_iter()
                .flat_map(|e| match e {
                    TransitionEntry::Matrix(m) => vec![m],
                    TransitionEntry::Repeated { matrix, repeat } => vec![matrix; repeat],
                })
                .collect(),
        };
        if file.length == 0 {
            return Err(Error::Format {
                what: "prior",
                message: "length must be at least 1".into(),
            });
        }
        if transitions.len() + 1 != file.length {
            return Err(Error::Format {
                what: "prior",
                message: format!(
                    "length {} requires {} transition matrices, found {}",
                    file.length,
                    file.length - 1,
                    transitions.len()
                ),
            });
        }
        Self::new(file.initial, transitions)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PriorFileOut {
            length: self.len(),
            initial: &self.initial,
            transitions: &self.transitions,
        })
        .expect("prior serializes")
    }

    /// Reads a prior file; `expected_len` (usually the alignment width) must match when given.
    pub fn load(path: &Path, expected_len: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let prior = Self::from_json(&text)?;
        if let Some(n) = expected_len {
            if n != prior.len() {
                return Err(Error::DataMismatch(format!(
                    "prior length {} does not match alignment width {n}",
                    prior.len()
                )));
            }
        }
        Ok(prior)
    }

    /// Log probability of an encoded sequence; `-inf` when any factor is zero.
    pub fn log_prob_states(&self, states: &[u8]) -> Result<f64> {
        if states.len() != self.len() {
            return Err(Error::arg(format!(
                "sequence length {} does not match prior length {}",
                states.len(),
                self.len()
            )));
        }
        if states.iter().any(|&s| s > 3) {
            return Err(Error::arg("sequence contains an ambiguous base"));
        }
        let mut lp = self.log_initial[states[0] as usize];
        for (j, w) in states.windows(2).enumerate() {
            lp += self.log_transitions[j][w[0] as usize][w[1] as usize];
        }
        Ok(lp)
    }

    pub fn sample_states<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        let mut s = sample_index(&self.initial, rng);
        out.push(s as u8);
        for m in &self.transitions {
            s = sample_index(&m[s], rng);
            out.push(s as u8);
        }
        out
    }
}

pub fn load_prior(path: &Path, expected_len: Option<usize>) -> Result<NaivePrior> {
    NaivePrior::load(path, expected_len)
}

/// log p(Y_1) + sum_j log p(Y_j | Y_{j-1}).
pub fn prior_logprob(prior: &NaivePrior, sequence: &str) -> Result<f64> {
    let states = dna::encode_strict(sequence)?;
    prior.log_prob_states(&states)
}

pub fn sample_naive_prior<R: Rng + ?Sized>(prior: &NaivePrior, rng: &mut R) -> String {
    dna::decode_all(&prior.sample_states(rng))
}
