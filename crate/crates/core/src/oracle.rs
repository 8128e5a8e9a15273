//! Brute-force reference computations for tiny instances: explicit
//! enumeration over internal-node states, rate classes and naive sequences,
//! with no dynamic programming.

use std::collections::HashMap;

use crate::dna::MISSING;
use crate::error::{Error, Result};
use crate::phylogeny::{CladeTree, Msa, TipMap, NAIVE};
use crate::prior::NaivePrior;
use crate::substitution::{build_rate_matrix, GtrParams, Matrix4, RateModel};
use crate::util::log_sum_exp;

/// Largest alignment width accepted for naive-sequence enumeration.
pub const MAX_COLUMNS: usize = 8;
/// Largest number of internal nodes accepted for state enumeration.
pub const MAX_INTERNAL: usize = 6;

struct Enumerator<'a> {
    tree: &'a CladeTree,
    internal: Vec<usize>,
    trans: Vec<Vec<Matrix4>>,
}

impl<'a> Enumerator<'a> {
    fn new(tree: &'a CladeTree, params: &GtrParams, rm: &RateModel) -> Result<Self> {
        let internal = tree.internal_nodes();
        if internal.len() > MAX_INTERNAL {
            return Err(Error::arg(format!(
                "brute force supports at most {MAX_INTERNAL} internal nodes, got {}",
                internal.len()
            )));
        }
        let q = build_rate_matrix(params)?;
        let trans = rm
            .rates
            .iter()
            .map(|&r| {
                tree.nodes()
                    .iter()
                    .map(|n| q.transition(n.branch_length * r))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tree, internal, trans })
    }

    /// p(column, internal assignment | naive state, rate class) for every
    /// assignment of internal states, in base-4 order over `internal`.
    fn column_terms(&self, states: &[u8], naive: usize, rate: usize) -> Vec<f64> {
        let trans = &self.trans[rate];
        let n_int = self.internal.len();
        let mut node_state = vec![0usize; self.tree.len()];
        node_state[NAIVE] = naive;
        (0..4usize.pow(n_int as u32))
            .map(|code| {
                for (i, &v) in self.internal.iter().enumerate() {
                    node_state[v] = (code >> (2 * (n_int - 1 - i))) & 3;
                }
                let mut p = 1.0;
                for v in 1..self.tree.len() {
                    let parent = node_state[self.tree.node(v).parent.expect("non-root")];
                    if self.tree.is_tip(v) {
                        let s = states[v];
                        if s < MISSING {
                            p *= trans[v][parent][s as usize];
                        }
                    } else {
                        p *= trans[v][parent][node_state[v]];
                    }
                }
                p
            })
            .collect()
    }
}

fn column_states(tree: &CladeTree, msa: &Msa) -> Result<Vec<Vec<u8>>> {
    let map = TipMap::bind(tree, msa)?;
    Ok((0..msa.n_columns())
        .map(|j| {
            let mut s = map.states(|r| msa.rows()[r][j]);
            s[NAIVE] = MISSING;
            s
        })
        .collect())
}

fn check_width(n: usize) -> Result<()> {
    if n == 0 || n > MAX_COLUMNS {
        return Err(Error::arg(format!("brute force supports 1..={MAX_COLUMNS} columns, got {n}")));
    }
    Ok(())
}

fn all_sequences(n: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..4usize.pow(n as u32)).map(move |code| (0..n).map(|i| ((code >> (2 * (n - 1 - i))) & 3) as u8).collect())
}

/// Rate-averaged naive-conditional column likelihoods by enumeration of internal states.
pub fn brute_force_emissions(tree: &CladeTree, params: &GtrParams, rm: &RateModel, msa: &Msa) -> Result<Vec<[f64; 4]>> {
    let e = Enumerator::new(tree, params, rm)?;
    let k = rm.k() as f64;
    Ok(column_states(tree, msa)?
        .iter()
        .map(|states| {
            std::array::from_fn(|s| {
                (0..rm.k())
                    .map(|r| e.column_terms(states, s, r).iter().sum::<f64>())
                    .sum::<f64>()
                    / k
            })
        })
        .collect())
}

/// log Σ over every naive sequence of prior(Y) · Π_j emission_j(Y_j).
pub fn brute_force_log_likelihood(
    tree: &CladeTree,
    params: &GtrParams,
    rm: &RateModel,
    msa: &Msa,
    prior: &NaivePrior,
) -> Result<f64> {
    check_width(msa.n_columns())?;
    let em = brute_force_emissions(tree, params, rm, msa)?;
    let terms: Vec<f64> = all_sequences(msa.n_columns())
        .map(|y| {
            prior.log_prob_states(&y).unwrap_or(f64::NEG_INFINITY)
                + y.iter().enumerate().map(|(j, &s)| em[j][s as usize].ln()).sum::<f64>()
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// One joint latent configuration: naive sequence, per-column rate class and
/// internal states (`internal[i][j]` for `tree.internal_nodes()[i]`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState {
    pub naive: Vec<u8>,
    pub rates: Vec<usize>,
    pub internal: Vec<Vec<u8>>,
}

/// Exact posterior over every (naive, rates, internal states) configuration
/// at fixed tree and parameters. Configurations with zero probability are omitted.
pub fn brute_force_joint_posterior(
    tree: &CladeTree,
    params: &GtrParams,
    rm: &RateModel,
    msa: &Msa,
    prior: &NaivePrior,
) -> Result<HashMap<JointState, f64>> {
    let n = msa.n_columns();
    check_width(n)?;
    let e = Enumerator::new(tree, params, rm)?;
    let n_int = e.internal.len();
    let states = column_states(tree, msa)?;
    let k = rm.k();
    // terms[j][s]: flattened (rate, assignment) -> joint column probability / K.
    let terms: Vec<[Vec<f64>; 4]> = states
        .iter()
        .map(|st| {
            std::array::from_fn(|s| {
                (0..k)
                    .flat_map(|r| e.column_terms(st, s, r))
                    .map(|p| p / k as f64)
                    .collect()
            })
        })
        .collect();
    let width = 4usize.pow(n_int as u32);
    let mut out = HashMap::new();
    let mut total = 0.0;
    for y in all_sequences(n) {
        let py = prior.log_prob_states(&y).unwrap_or(f64::NEG_INFINITY).exp();
        if py == 0.0 {
            continue;
        }
        // Odometer over per-column (rate, assignment) choices.
        let choices: Vec<&Vec<f64>> = (0..n).map(|j| &terms[j][y[j] as usize]).collect();
        let mut idx = vec![0usize; n];
        loop {
            let p: f64 = py * (0..n).map(|j| choices[j][idx[j]]).product::<f64>();
            if p > 0.0 {
                let rates = idx.iter().map(|&c| c / width).collect();
                let internal = (0..n_int)
                    .map(|i| idx.iter().map(|&c| (((c % width) >> (2 * (n_int - 1 - i))) & 3) as u8).collect())
                    .collect();
                out.insert(
                    JointState {
                        naive: y.clone(),
                        rates,
                        internal,
                    },
                    p,
                );
                total += p;
            }
            let mut j = 0;
            while j < n {
                idx[j] += 1;
                if idx[j] < choices[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::ImpossibleData("every configuration has zero probability".into()));
    }
    for p in out.values_mut() {
        *p /= total;
    }
    Ok(out)
}

/// Exact posterior over naive sequences, marginalizing everything else,
/// most probable first.
pub fn brute_force_naive_posterior(
    tree: &CladeTree,
    params: &GtrParams,
    rm: &RateModel,
    msa: &Msa,
    prior: &NaivePrior,
) -> Result<Vec<(Vec<u8>, f64)>> {
    check_width(msa.n_columns())?;
    let em = brute_force_emissions(tree, params, rm, msa)?;
    let logs: Vec<(Vec<u8>, f64)> = all_sequences(msa.n_columns())
        .map(|y| {
            let l = prior.log_prob_states(&y).unwrap_or(f64::NEG_INFINITY)
                + y.iter().enumerate().map(|(j, &s)| em[j][s as usize].ln()).sum::<f64>();
            (y, l)
        })
        .collect();
    let norm = log_sum_exp(&logs.iter().map(|x| x.1).collect::<Vec<_>>());
    let mut out: Vec<(Vec<u8>, f64)> = logs.into_iter().map(|(y, l)| (y, (l - norm).exp())).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylogeny::parse_newick;
    use crate::substitution::discrete_gamma_rates;

    #[test]
    fn joint_posterior_is_normalized_and_marginalizes() {
        let tree = parse_newick("((A:0.1,B:0.2):0.05,C:0.3,naive:0.1);", "naive").unwrap();
        let msa = Msa::new(vec!["A".into(), "B".into(), "C".into()], &["AC", "AT", "GC"]).unwrap();
        let params = GtrParams::new([1.0, 2.0, 1.0, 1.0, 2.0, 1.0], [0.3, 0.2, 0.2, 0.3]).unwrap();
        let rm = discrete_gamma_rates(0.8, 2).unwrap();
        let prior = NaivePrior::uniform(2);
        let joint = brute_force_joint_posterior(&tree, &params, &rm, &msa, &prior).unwrap();
        let total: f64 = joint.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let naive = brute_force_naive_posterior(&tree, &params, &rm, &msa, &prior).unwrap();
        for (y, p) in naive {
            let m: f64 = joint.iter().filter(|(k, _)| k.naive == y).map(|(_, v)| v).sum();
            assert!((m - p).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_large_instances() {
        let tree = parse_newick("(A:0.1,naive:0.1);", "naive").unwrap();
        let msa = Msa::new(vec!["A".into()], &["ACGTACGTA"]).unwrap();
        let r = brute_force_log_likelihood(&tree, &GtrParams::jukes_cantor(), &RateModel::uniform(), &msa, &NaivePrior::uniform(9));
        assert!(r.is_err());
    }
}
