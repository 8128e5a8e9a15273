//! End-to-end inference: augment the alignment with a naive point estimate,
//! run the proposal sampler, then weight, resample and draw sequences.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::ancestral::{sample_posterior, PosteriorDraw, PosteriorRun};
use crate::error::{Error, Result};
use crate::mcmc::{run_mcmc, McmcConfig, PhyloSample};
use crate::phylo_hmm::{compute_emissions, forward, viterbi_naive, EmissionTable};
use crate::phylogeny::Msa;
use crate::prior::NaivePrior;
use crate::sir::SirConfig;
use crate::star::star_naive_estimate;
use crate::substitution::discrete_gamma_rates;
use crate::util::log_sum_exp;

/// Adds the naive point estimate as a row labelled `naive_label`. An explicit
/// estimate wins; otherwise the star-tree Viterbi sequence is used.
pub fn augment_with_naive(msa: &Msa, prior: &NaivePrior, naive_label: &str, estimate: Option<Vec<u8>>) -> Result<Msa> {
    if msa.row_index(naive_label).is_some() {
        return Err(Error::arg(format!("alignment already contains {naive_label:?}")));
    }
    let estimate = match estimate {
        Some(s) => s,
        None => star_naive_estimate(msa, prior)?,
    };
    msa.with_row(naive_label, estimate)
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub mcmc: McmcConfig,
    pub sir: SirConfig,
    pub k: usize,
    pub naive_label: String,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub augmented: Msa,
    pub proposals: Vec<PhyloSample>,
    pub run: PosteriorRun,
}

/// Full pipeline on an alignment of observed sequences only.
pub fn infer(msa: &Msa, prior: &NaivePrior, config: &InferenceConfig, estimate: Option<Vec<u8>>) -> Result<Inference> {
    if prior.len() != msa.n_columns() {
        return Err(Error::DataMismatch(format!(
            "prior length {} but alignment width {}",
            prior.len(),
            msa.n_columns()
        )));
    }
    let augmented = augment_with_naive(msa, prior, &config.naive_label, estimate)?;
    let proposals = run_mcmc(&augmented, &config.naive_label, &config.mcmc, config.k)?;
    let run = sample_posterior(msa, prior, &proposals, &config.sir, config.k)?;
    Ok(Inference {
        augmented,
        proposals,
        run,
    })
}

/// Highest-posterior naive sequence among the sampled naives and the Viterbi
/// sequence of every draw. Each candidate is scored by its posterior averaged
/// over the draws' trees and parameters. Returns the sequence and that probability.
pub fn posterior_map_naive(draws: &[PosteriorDraw], msa: &Msa, prior: &NaivePrior, k: usize) -> Result<(Vec<u8>, f64)> {
    if draws.is_empty() {
        return Err(Error::arg("no draws"));
    }
    let tables = draws
        .par_iter()
        .map(|d| {
            let s = &d.sample;
            let rm = discrete_gamma_rates(s.alpha, k)?;
            let em = compute_emissions(&s.tree, &s.params, &rm, msa)?;
            let z = forward(prior, &em)?.log_likelihood;
            let (best, _) = viterbi_naive(prior, &em)?;
            Ok((em, z, best))
        })
        .collect::<Result<Vec<(EmissionTable, f64, Vec<u8>)>>>()?;
    let candidates: BTreeSet<&Vec<u8>> = draws.iter().map(|d| &d.naive).chain(tables.iter().map(|t| &t.2)).collect();
    let n = draws.len() as f64;
    let mut best: Option<(f64, &Vec<u8>)> = None;
    for y in candidates {
        let lp = prior.log_prob_states(y)?;
        let terms: Vec<f64> = tables
            .iter()
            .map(|(em, z, _)| lp + y.iter().enumerate().map(|(j, &s)| em.log_em[j][s as usize]).sum::<f64>() - z)
            .collect();
        let score = log_sum_exp(&terms) - n.ln();
        // Candidates arrive in lexicographic order, so ties keep the smallest.
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, y));
        }
    }
    let (score, y) = best.expect("at least one candidate");
    Ok((y.clone(), score.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate_family, SimulationConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pipeline_runs_and_is_reproducible() {
        let prior = crate::simulation::demo_prior(30).unwrap();
        let sim = SimulationConfig {
            n_cf: 5,
            ..Default::default()
        };
        let fam = simulate_family(&sim, &prior, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let config = InferenceConfig {
            mcmc: McmcConfig {
                iterations: 2_000,
                thin: 10,
                burn_in: 20,
                ..Default::default()
            },
            sir: SirConfig::new(100, 5, 9).unwrap(),
            k: 2,
            naive_label: "naive".into(),
        };
        let a = infer(&fam.msa, &prior, &config, None).unwrap();
        let b = infer(&fam.msa, &prior, &config, None).unwrap();
        assert_eq!(a.run.draws, b.run.draws);
        assert_eq!(a.run.draws.len(), 5);
        assert_eq!(a.augmented.n_seqs(), 6);
        assert!(augment_with_naive(&a.augmented, &prior, "naive", None).is_err());
        assert!(infer(&fam.msa, &NaivePrior::uniform(29), &config, None).is_err());
        let (map, p) = posterior_map_naive(&a.run.draws, &fam.msa, &prior, 2).unwrap();
        assert_eq!(map.len(), 30);
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn posterior_map_matches_enumeration_for_one_tree() {
        use crate::ancestral::PosteriorSampler;
        use crate::oracle::brute_force_naive_posterior;
        use crate::phylogeny::parse_newick;
        use crate::substitution::GtrParams;
        let tree = parse_newick("((a:0.3,b:0.1):0.2,c:0.4,naive:0.1);", "naive").unwrap();
        let msa = Msa::new(vec!["a".into(), "b".into(), "c".into()], &["ACGT", "ACTT", "GCGA"]).unwrap();
        let params = GtrParams::new([1.0, 2.5, 0.8, 1.0, 2.5, 1.0], [0.3, 0.2, 0.22, 0.28]).unwrap();
        let prior = crate::simulation::demo_prior(4).unwrap();
        let sample = PhyloSample {
            tree: tree.clone(),
            params,
            alpha: 0.8,
            proposal_loglik: 0.0,
        };
        let sampler = PosteriorSampler::new(&sample, &msa, &prior, 2).unwrap();
        let mut rng = crate::util::stream_rng(5, 0);
        let draws: Vec<_> = (0..30).map(|_| sampler.draw(&mut rng).unwrap()).collect();
        let rm = discrete_gamma_rates(0.8, 2).unwrap();
        let exact = brute_force_naive_posterior(&tree, &params, &rm, &msa, &prior).unwrap();
        let (map, p) = posterior_map_naive(&draws, &msa, &prior, 2).unwrap();
        assert_eq!(map, exact[0].0);
        assert!((p - exact[0].1).abs() < 1e-10);
    }
}
