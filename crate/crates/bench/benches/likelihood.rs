use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phylohmm::ancestral::PosteriorSampler;
use phylohmm::mcmc::{run_mcmc, McmcConfig, PhyloSample};
use phylohmm::phylo_hmm::{compute_emissions, forward, viterbi_naive};
use phylohmm::phylogeny::log_likelihood;
use phylohmm_bench::fixture;

fn pruning(c: &mut Criterion) {
    let mut group = c.benchmark_group("pruning");
    for n in [10, 40, 80] {
        let f = fixture(n, 1);
        let aug = f.augmented("naive");
        group.bench_with_input(BenchmarkId::new("augmented_loglik", n), &n, |b, _| {
            b.iter(|| log_likelihood(&f.family.tree, &aug, &f.params, &f.rates).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("emissions", n), &n, |b, _| {
            b.iter(|| compute_emissions(&f.family.tree, &f.params, &f.rates, &f.family.msa).unwrap())
        });
    }
    group.finish();
}

fn chain(c: &mut Criterion) {
    let f = fixture(40, 2);
    let em = compute_emissions(&f.family.tree, &f.params, &f.rates, &f.family.msa).unwrap();
    c.bench_function("forward_120", |b| b.iter(|| forward(&f.prior, &em).unwrap()));
    c.bench_function("viterbi_120", |b| b.iter(|| viterbi_naive(&f.prior, &em).unwrap()));
}

fn posterior_draw(c: &mut Criterion) {
    let f = fixture(40, 3);
    let sample = PhyloSample {
        tree: f.family.tree.clone(),
        params: f.params,
        alpha: 1.0,
        proposal_loglik: 0.0,
    };
    let sampler = PosteriorSampler::new(&sample, &f.family.msa, &f.prior, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    c.bench_function("joint_draw_40", |b| b.iter(|| sampler.draw(&mut rng).unwrap()));
}

fn mcmc(c: &mut Criterion) {
    let f = fixture(40, 5);
    let aug = f.augmented("naive");
    let config = McmcConfig {
        iterations: 1_000,
        thin: 10,
        burn_in: 0,
        ..Default::default()
    };
    let mut group = c.benchmark_group("mcmc");
    group.sample_size(10);
    group.bench_function("1000_iterations_40", |b| b.iter(|| run_mcmc(&aug, "naive", &config, 4).unwrap()));
    group.finish();
}

criterion_group!(benches, pruning, chain, posterior_draw, mcmc);
criterion_main!(benches);
