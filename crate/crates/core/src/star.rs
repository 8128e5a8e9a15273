//! Star-topology baseline: every observed sequence hangs directly off the
//! naive sequence on a branch of common length. Used as the comparison
//! method and as the naive point estimate that augments the proposal alignment.

use crate::dna::MISSING;
use crate::error::{Error, Result};
use crate::phylo_hmm::{viterbi_naive, EmissionTable};
use crate::phylogeny::Msa;
use crate::prior::NaivePrior;
use crate::substitution::{build_rate_matrix, GtrParams};

const MIN_BRANCH: f64 = 1e-4;

/// Column-wise majority base; ties go to the earlier base, all-missing columns give `MISSING`.
pub fn column_consensus(msa: &Msa) -> Vec<u8> {
    (0..msa.n_columns())
        .map(|j| {
            let mut counts = [0usize; 4];
            for row in msa.rows() {
                if row[j] < MISSING {
                    counts[row[j] as usize] += 1;
                }
            }
            let best = (0..4).rev().max_by_key(|&b| counts[b]).expect("four bases");
            if counts[best] == 0 {
                MISSING
            } else {
                best as u8
            }
        })
        .collect()
}

/// Jukes–Cantor distance of the mean mismatch between each row and the
/// column consensus, floored at 1e-4.
pub fn star_branch_length(msa: &Msa) -> f64 {
    let consensus = column_consensus(msa);
    let (mut diff, mut total) = (0usize, 0usize);
    for row in msa.rows() {
        for (&x, &c) in row.iter().zip(&consensus) {
            if x < MISSING && c < MISSING {
                total += 1;
                diff += usize::from(x != c);
            }
        }
    }
    if total == 0 {
        return MIN_BRANCH;
    }
    let p = (diff as f64 / total as f64).min(0.74);
    (-0.75 * (1.0 - 4.0 * p / 3.0).ln()).max(MIN_BRANCH)
}

/// Naive-conditional emissions when every row descends independently from
/// the naive sequence along a branch of length `branch_length`.
pub fn star_emissions(msa: &Msa, params: &GtrParams, branch_length: f64) -> Result<EmissionTable> {
    let q = build_rate_matrix(params)?;
    let p = q.transition(branch_length)?;
    let log_p = p.map(|row| row.map(f64::ln));
    Ok(EmissionTable {
        log_em: (0..msa.n_columns())
            .map(|j| {
                std::array::from_fn(|s| {
                    msa.rows()
                        .iter()
                        .filter(|r| r[j] < MISSING)
                        .map(|r| log_p[s][r[j] as usize])
                        .sum()
                })
            })
            .collect(),
    })
}

/// Viterbi naive sequence under the star model with empirical base
/// frequencies, unit exchangeabilities and the consensus-derived branch length.
pub fn star_naive_estimate(msa: &Msa, prior: &NaivePrior) -> Result<Vec<u8>> {
    if msa.n_seqs() == 0 {
        return Err(Error::arg("alignment has no sequences"));
    }
    let params = GtrParams::new([1.0; 6], msa.base_frequencies())?;
    let em = star_emissions(msa, &params, star_branch_length(msa))?;
    Ok(viterbi_naive(prior, &em)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_and_distance() {
        let msa = Msa::new(vec!["a".into(), "b".into(), "c".into()], &["ACGN", "ACTN", "GCGN"]).unwrap();
        assert_eq!(column_consensus(&msa), vec![0, 1, 2, MISSING]);
        let p: f64 = 2.0 / 9.0;
        let want = -0.75 * (1.0 - 4.0 * p / 3.0).ln();
        assert!((star_branch_length(&msa) - want).abs() < 1e-12);
        let same = Msa::new(vec!["a".into(), "b".into()], &["AC", "AC"]).unwrap();
        assert_eq!(star_branch_length(&same), 1e-4);
    }

    #[test]
    fn estimate_follows_majority_under_flat_prior() {
        let msa = Msa::new(
            vec!["a".into(), "b".into(), "c".into()],
            &["ACGTTA", "ACGTTC", "TCGATA"],
        )
        .unwrap();
        let y = star_naive_estimate(&msa, &NaivePrior::uniform(6)).unwrap();
        assert_eq!(y, column_consensus(&msa));
    }

    #[test]
    fn star_emissions_sum_per_row() {
        let msa = Msa::new(vec!["a".into(), "b".into()], &["A", "N"]).unwrap();
        let params = GtrParams::jukes_cantor();
        let em = star_emissions(&msa, &params, 0.1).unwrap();
        let p = build_rate_matrix(&params).unwrap().transition(0.1).unwrap();
        assert!((em.log_em[0][0] - p[0][0].ln()).abs() < 1e-14);
        assert!((em.log_em[0][3] - p[3][0].ln()).abs() < 1e-14);
    }
}
