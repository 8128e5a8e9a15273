use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use phylohmm::ancestral::{read_archive, sample_posterior, write_archive};
use phylohmm::dna;
use phylohmm::mcmc::{load_trace, run_mcmc, write_trace, InitialTree, McmcConfig};
use phylohmm::oracle::{brute_force_log_likelihood, brute_force_naive_posterior};
use phylohmm::phylo_hmm::{compute_emissions, forward};
use phylohmm::phylogeny::{parse_newick, Msa};
use phylohmm::pipeline::{augment_with_naive, posterior_map_naive};
use phylohmm::prior::NaivePrior;
use phylohmm::report::{
    asr_classification, farthest_tip, hamming, lineage_summary, naive_posterior_report, true_lineage,
    Alphabet, ValidationConfig, DEFAULT_LINEAGE_CUTOFF,
};
use phylohmm::simulation::{self, SimulationConfig};
use phylohmm::sir::{write_posterior_pool, SirConfig, POOL_RATIO};
use phylohmm::star::star_naive_estimate;
use phylohmm::substitution::{discrete_gamma_rates, GtrParams};
use phylohmm::util::fmt_g6;

#[derive(Parser)]
#[command(name = "phylohmm", version, about = "Phylogenetic HMM posterior sampling for clonal families")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Naive-sequence prior (JSON).
    #[arg(long, global = true)]
    prior: Option<PathBuf>,
    #[arg(long, global = true, default_value = "naive")]
    naive_id: String,
    #[arg(long, global = true, default_value_t = 4)]
    k_rates: usize,
    /// Pool size before resampling (defaults to 20 x n-final).
    #[arg(long, global = true)]
    n_pool: Option<usize>,
    #[arg(long, global = true, default_value_t = 100)]
    n_final: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one family or the experiment grid.
    Simulate(SimulateArgs),
    /// Run the built-in proposal sampler.
    Propose(ProposeArgs),
    /// Validate an external trace and rewrite it with likelihoods.
    IngestTrace(IngestArgs),
    /// Weight, resample and draw naive and ancestral sequences.
    Sample(SampleArgs),
    /// Summaries of a finished posterior run.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Compare a posterior run against simulated truth.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Brute-force reference values for a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Simulate every cell of the experiment grid.
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 15)]
    replicates: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 40)]
    n_cf: usize,
    #[arg(long, default_value_t = simulation::DEFAULT_ROOT_BRANCH)]
    t0: f64,
    #[arg(long, default_value_t = simulation::DEFAULT_BRANCH_SCALE)]
    branch_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Length of the built-in demo prior when --prior is not given.
    #[arg(long, default_value_t = 120)]
    length: usize,
}

#[derive(Args, Clone)]
struct McmcArgs {
    #[arg(long, default_value_t = 50_000)]
    iterations: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Thinned samples dropped from the start.
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    /// Start from a random topology instead of neighbor joining.
    #[arg(long)]
    random_start: bool,
}

#[derive(Args)]
struct ProposeArgs {
    #[arg(long)]
    msa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// FASTA holding the naive point estimate.
    #[arg(long)]
    naive_fasta: Option<PathBuf>,
    #[command(flatten)]
    mcmc: McmcArgs,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    msa: PathBuf,
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    naive_fasta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    msa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory with trace.nwk, trace.tsv and augmented.fasta from `propose` or `ingest-trace`.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long)]
    naive_fasta: Option<PathBuf>,
    #[command(flatten)]
    mcmc: McmcArgs,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Translated naive FASTA with posteriors plus the DNA to amino-acid map.
    Naive {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-site amino-acid posterior matrix.
    Logo {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lineage graph from the naive sequence to one tip.
    Lineage {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        msa: PathBuf,
        #[arg(long)]
        tip: String,
        #[arg(long, default_value_t = DEFAULT_LINEAGE_CUTOFF)]
        cutoff: f64,
        #[arg(long)]
        dna: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ValidateCommand {
    /// Hamming distance of the MAP naive sequence (and the star baseline) to the truth.
    Naive {
        #[arg(long)]
        archive: PathBuf,
        /// Simulated replicate directory.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PPV and TPR of the ancestral-lineage predictions.
    Asr {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
        rho: Vec<f64>,
        /// Lineage tip; the tip farthest from the naive leaf by default.
        #[arg(long)]
        tip: Option<String>,
        /// 1-based inclusive column range, e.g. 301-336.
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        dna: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OracleArgs {
    /// Observed sequences (without the naive row).
    #[arg(long)]
    msa: PathBuf,
    /// Newick string or file containing the naive leaf.
    #[arg(long)]
    tree: String,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0; 6])]
    exchangeabilities: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25; 4])]
    freqs: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Number of naive sequences listed.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_prior(global: &Global, width: usize) -> Result<NaivePrior> {
    match &global.prior {
        Some(p) => Ok(NaivePrior::load(p, Some(width))?),
        None => {
            eprintln!("warning: no --prior given, using a uniform naive prior");
            Ok(NaivePrior::uniform(width))
        }
    }
}

fn read_single(path: &Path) -> Result<Vec<u8>> {
    let msa = Msa::read_fasta(path)?;
    if msa.n_seqs() != 1 {
        bail!("{} must hold exactly one sequence", path.display());
    }
    Ok(msa.rows()[0].clone())
}

/// Splits off a naive row if the alignment carries one.
fn observed_and_estimate(global: &Global, msa: Msa, naive_fasta: Option<&Path>) -> Result<(Msa, Option<Vec<u8>>)> {
    let explicit = naive_fasta.map(read_single).transpose()?;
    match msa.row_index(&global.naive_id) {
        Some(row) => {
            let from_msa = msa.rows()[row].clone();
            Ok((msa.without(&global.naive_id), Some(explicit.unwrap_or(from_msa))))
        }
        None => Ok((msa, explicit)),
    }
}

fn mcmc_config(global: &Global, args: &McmcArgs) -> McmcConfig {
    McmcConfig {
        iterations: args.iterations,
        thin: args.thin,
        burn_in: args.burn_in,
        initial_tree: if args.random_start {
            InitialTree::Random
        } else {
            InitialTree::NeighborJoining
        },
        seed: global.seed,
        ..Default::default()
    }
}

fn sir_config(global: &Global) -> Result<SirConfig> {
    let n_pool = global.n_pool.unwrap_or(POOL_RATIO * global.n_final);
    Ok(SirConfig::new(n_pool, global.n_final, global.seed)?)
}

fn simulate(global: &Global, args: &SimulateArgs) -> Result<()> {
    let prior = match &global.prior {
        Some(p) => NaivePrior::load(p, None)?,
        None => simulation::demo_prior(args.length)?,
    };
    let base = SimulationConfig {
        beta: args.beta,
        n_cf: args.n_cf,
        t0: args.t0,
        branch_scale: args.branch_scale,
        k: global.k_rates,
        alpha: args.alpha,
        replicates: args.replicates,
        seed: global.seed,
        naive_label: global.naive_id.clone(),
        ..Default::default()
    };
    base.validate()?;
    let rows = if args.grid {
        simulation::run_experiment_grid(&base, &prior, &args.out)?
    } else {
        simulation::run_grid(&base, &[(args.beta, args.n_cf, args.t0)], &prior, &args.out)?
    };
    eprintln!("wrote {} replicates under {}", rows.len(), args.out.display());
    Ok(())
}

fn propose(global: &Global, args: &ProposeArgs) -> Result<()> {
    let msa = Msa::read_fasta(&args.msa)?;
    let (observed, estimate) = observed_and_estimate(global, msa, args.naive_fasta.as_deref())?;
    let prior = load_prior(global, observed.n_columns())?;
    let augmented = augment_with_naive(&observed, &prior, &global.naive_id, estimate)?;
    let samples = run_mcmc(&augmented, &global.naive_id, &mcmc_config(global, &args.mcmc), global.k_rates)?;
    fs::create_dir_all(&args.out)?;
    write(&args.out.join("augmented.fasta"), &augmented.to_fasta())?;
    write_trace(&samples, &args.out.join("trace.nwk"), &args.out.join("trace.tsv"))?;
    eprintln!("wrote {} proposal draws to {}", samples.len(), args.out.display());
    Ok(())
}

fn ingest(global: &Global, args: &IngestArgs) -> Result<()> {
    let msa = Msa::read_fasta(&args.msa)?;
    let (observed, estimate) = observed_and_estimate(global, msa, args.naive_fasta.as_deref())?;
    let prior = load_prior(global, observed.n_columns())?;
    let augmented = augment_with_naive(&observed, &prior, &global.naive_id, estimate)?;
    let samples = load_trace(&args.trees, &args.params, &global.naive_id, &augmented, global.k_rates)?;
    fs::create_dir_all(&args.out)?;
    write(&args.out.join("augmented.fasta"), &augmented.to_fasta())?;
    write_trace(&samples, &args.out.join("trace.nwk"), &args.out.join("trace.tsv"))?;
    eprintln!("ingested {} draws", samples.len());
    Ok(())
}

fn sample(global: &Global, args: &SampleArgs) -> Result<()> {
    let msa = Msa::read_fasta(&args.msa)?;
    let (observed, estimate) = observed_and_estimate(global, msa, args.naive_fasta.as_deref())?;
    let prior = load_prior(global, observed.n_columns())?;
    let proposals = match &args.trace_dir {
        Some(dir) => {
            let augmented = Msa::read_fasta(&dir.join("augmented.fasta"))?;
            load_trace(
                &dir.join("trace.nwk"),
                &dir.join("trace.tsv"),
                &global.naive_id,
                &augmented,
                global.k_rates,
            )?
        }
        None => {
            let augmented = augment_with_naive(&observed, &prior, &global.naive_id, estimate)?;
            run_mcmc(&augmented, &global.naive_id, &mcmc_config(global, &args.mcmc), global.k_rates)?
        }
    };
    let sir = sir_config(global)?;
    let run = sample_posterior(&observed, &prior, &proposals, &sir, global.k_rates)?;
    if run.ess < sir.n_final as f64 {
        eprintln!(
            "warning: effective sample size {} is below n-final {}",
            fmt_g6(run.ess),
            sir.n_final
        );
    }
    let out = &args.out;
    fs::create_dir_all(out)?;
    write_archive(&run.draws, &out.join("posterior.jsonl"))?;
    let selected_weights: Vec<f64> = run.selected.iter().map(|&i| run.pool_log_weights[i]).collect();
    let retained: Vec<_> = run.draws.iter().map(|d| d.sample.clone()).collect();
    write_posterior_pool(&retained, &selected_weights, &out.join("posterior.nwk"), &out.join("posterior.tsv"))?;
    let mut weights = String::from("pool_index\tlog_weight\n");
    for (i, w) in run.pool_log_weights.iter().enumerate() {
        let _ = writeln!(weights, "{i}\t{w}");
    }
    write(&out.join("pool_weights.tsv"), &weights)?;
    write_naive_reports(&run.draws.iter().map(|d| d.naive.clone()).collect::<Vec<_>>(), out)?;
    write(
        &out.join("summary.tsv"),
        &format!(
            "n_pool\tn_final\tess\tfinite_weights\n{}\t{}\t{}\t{}\n",
            sir.n_pool,
            sir.n_final,
            fmt_g6(run.ess),
            run.pool_log_weights.iter().filter(|w| w.is_finite()).count()
        ),
    )?;
    eprintln!("wrote {} posterior draws to {}", run.draws.len(), out.display());
    Ok(())
}

fn write_naive_reports(naives: &[Vec<u8>], dir: &Path) -> Result<()> {
    let report = naive_posterior_report(naives)?;
    write(&dir.join("naive_posterior.fasta"), &report.fasta())?;
    write(&dir.join("naive_dna_to_aa.tsv"), &report.dna_map_tsv())?;
    write(&dir.join("naive_logo.tsv"), &report.matrix_tsv())
}

fn report(global: &Global, cmd: &ReportCommand) -> Result<()> {
    match cmd {
        ReportCommand::Naive { archive, out } => {
            let draws = read_archive(archive, &global.naive_id)?;
            let report = naive_posterior_report(&draws.iter().map(|d| d.naive.clone()).collect::<Vec<_>>())?;
            fs::create_dir_all(out)?;
            write(&out.join("naive_posterior.fasta"), &report.fasta())?;
            write(&out.join("naive_dna_to_aa.tsv"), &report.dna_map_tsv())
        }
        ReportCommand::Logo { archive, out } => {
            let draws = read_archive(archive, &global.naive_id)?;
            let report = naive_posterior_report(&draws.iter().map(|d| d.naive.clone()).collect::<Vec<_>>())?;
            write(out, &report.matrix_tsv())
        }
        ReportCommand::Lineage {
            archive,
            msa,
            tip,
            cutoff,
            dna,
            out,
        } => {
            let draws = read_archive(archive, &global.naive_id)?;
            let msa = Msa::read_fasta(msa)?;
            let config = ValidationConfig {
                lineage_cutoff: *cutoff,
                alphabet: if *dna { Alphabet::Dna } else { Alphabet::AminoAcid },
                ..ValidationConfig::new(tip.clone())
            };
            let summary = lineage_summary(&draws, &msa, &config)?;
            fs::create_dir_all(out)?;
            write(&out.join("lineage.dot"), &summary.to_dot(*cutoff))?;
            write(&out.join("lineage_nodes.tsv"), &summary.nodes_tsv())
        }
    }
}

fn parse_region(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text.split_once('-').context("region must look like START-END")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn validate(global: &Global, cmd: &ValidateCommand) -> Result<()> {
    match cmd {
        ValidateCommand::Naive { archive, truth, out } => {
            let draws = read_archive(archive, &global.naive_id)?;
            let truth = simulation::read_truth(truth, &global.naive_id)?;
            let prior = load_prior(global, truth.msa.n_columns())?;
            let (map, _) = posterior_map_naive(&draws, &truth.msa, &prior, global.k_rates)?;
            let star = star_naive_estimate(&truth.msa, &prior)?;
            let t = dna::decode_all(&truth.naive);
            let d_map = hamming(&dna::decode_all(&map), &t)?;
            let d_star = hamming(&dna::decode_all(&star), &t)?;
            emit(
                out.as_deref(),
                &format!("method\thamming\nphylo_hmm\t{d_map}\nstar\t{d_star}\n"),
            )
        }
        ValidateCommand::Asr {
            archive,
            truth,
            rho,
            tip,
            region,
            dna,
            out,
        } => {
            let draws = read_archive(archive, &global.naive_id)?;
            let truth = simulation::read_truth(truth, &global.naive_id)?;
            let tip = match tip {
                Some(t) => t.clone(),
                None => truth.tree.tip_label(farthest_tip(&truth.tree)).to_string(),
            };
            let mut config = ValidationConfig {
                region: region.as_deref().map(parse_region).transpose()?,
                alphabet: if *dna { Alphabet::Dna } else { Alphabet::AminoAcid },
                ..ValidationConfig::new(tip.clone())
            };
            let truth_set = true_lineage(&truth.tree, |v| truth.node_sequence(v), &config)?;
            let mut table = String::from("tip\trho\tppv\tppv_defined\ttpr\tpredicted\ttruth\thits\n");
            for &r in rho {
                config.rho = r;
                let s = asr_classification(&draws, &truth.msa, &truth_set, &config)?;
                let _ = writeln!(
                    table,
                    "{tip}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    fmt_g6(r),
                    fmt_g6(s.ppv),
                    s.ppv_defined,
                    fmt_g6(s.tpr),
                    s.predicted,
                    s.truth,
                    s.hits
                );
            }
            emit(out.as_deref(), &table)
        }
    }
}

fn oracle(global: &Global, args: &OracleArgs) -> Result<()> {
    let msa = Msa::read_fasta(&args.msa)?;
    let text = if Path::new(&args.tree).is_file() {
        fs::read_to_string(&args.tree)?
    } else {
        args.tree.clone()
    };
    let tree = parse_newick(text.trim(), &global.naive_id)?;
    let exch: [f64; 6] = args
        .exchangeabilities
        .clone()
        .try_into()
        .map_err(|_| anyhow::anyhow!("six exchangeabilities required"))?;
    let freqs: [f64; 4] = args
        .freqs
        .clone()
        .try_into()
        .map_err(|_| anyhow::anyhow!("four base frequencies required"))?;
    let params = GtrParams::new(exch, freqs)?;
    let rm = discrete_gamma_rates(args.alpha, global.k_rates)?;
    let prior = load_prior(global, msa.n_columns())?;
    let brute = brute_force_log_likelihood(&tree, &params, &rm, &msa, &prior)?;
    let fwd = forward(&prior, &compute_emissions(&tree, &params, &rm, &msa)?)?.log_likelihood;
    let mut table = format!(
        "quantity\tvalue\nbrute_force_loglik\t{}\nforward_loglik\t{}\n\nnaive\tposterior\n",
        fmt_g6(brute),
        fmt_g6(fwd)
    );
    for (seq, p) in brute_force_naive_posterior(&tree, &params, &rm, &msa, &prior)?
        .into_iter()
        .take(args.top)
    {
        let _ = writeln!(table, "{}\t{}", dna::decode_all(&seq), fmt_g6(p));
    }
    emit(args.out.as_deref(), &table)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let global = &cli.global;
    if let Some(n) = global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(global, a),
        Command::Propose(a) => propose(global, a),
        Command::IngestTrace(a) => ingest(global, a),
        Command::Sample(a) => sample(global, a),
        Command::Report(c) => report(global, c),
        Command::Validate(c) => validate(global, c),
        Command::Oracle(a) => oracle(global, a),
    }
}
