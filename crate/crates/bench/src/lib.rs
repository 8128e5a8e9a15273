//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phylohmm::phylogeny::Msa;
use phylohmm::prior::NaivePrior;
use phylohmm::simulation::{demo_prior, simulate_family, SimulatedFamily, SimulationConfig};
use phylohmm::substitution::{discrete_gamma_rates, GtrParams, RateModel};

pub struct Fixture {
    pub family: SimulatedFamily,
    pub prior: NaivePrior,
    pub params: GtrParams,
    pub rates: RateModel,
}

/// Simulated family with `n_cf` tips over the 120-column demo prior.
pub fn fixture(n_cf: usize, seed: u64) -> Fixture {
    let prior = demo_prior(120).expect("demo prior");
    let config = SimulationConfig {
        n_cf,
        ..Default::default()
    };
    let family = simulate_family(&config, &prior, &mut ChaCha8Rng::seed_from_u64(seed)).expect("simulation");
    Fixture {
        family,
        prior,
        params: config.params,
        rates: discrete_gamma_rates(config.alpha, config.k).expect("rates"),
    }
}

impl Fixture {
    /// Observed alignment plus the true naive sequence as a row.
    pub fn augmented(&self, naive_label: &str) -> Msa {
        self.family
            .msa
            .with_row(naive_label, self.family.naive.clone())
            .expect("augment")
    }
}
