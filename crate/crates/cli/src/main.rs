//! `coalfarris` — simulate multispecies-coalescent sequence data, reduce it
//! to the molecular-clock case, and infer species-tree topologies.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coalfarris_core::harness::{self, report, ExperimentConfig};
use coalfarris_core::msc::pairwise_excess_density;
use coalfarris_core::reconstruct::{
    build_from_triplets, build_with_repair, infer_all_triplets, PipelineConfig,
};
use coalfarris_core::reduction::{run_reduction_with_retries, PartitionFractions, ReductionConfig};
use coalfarris_core::seqevo::SequenceDataset;
use coalfarris_core::trees::{
    parse_species_newick, species_from_json, SpeciesPhylogeny, TaxonId,
};
use coalfarris_core::triplet_test::quantile_triplet_test;
use coalfarris_core::StreamKey;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "coalfarris", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an MSC-JC sequence dataset from a species tree.
    Simulate(SimulateArgs),
    /// Run the ultrametric reduction on a three-taxon dataset.
    Reduce(ReduceArgs),
    /// Quantile triplet test on reduced data.
    InferTriplet(InferTripletArgs),
    /// Full inference: per-triple reduction + test, then assembly.
    Infer(InferArgs),
    /// Grid experiment with CSV/JSON reports.
    Experiment(ExperimentArgs),
    /// Monte-Carlo identifiability checks on a three-leaf tree.
    Identifiability(IdentifiabilityArgs),
    /// Analytic densities and quantiles of the pairwise coalescent excess.
    Msc(MscArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Species tree file (.nwk or .json).
    #[arg(long)]
    tree: PathBuf,
    /// Number of genes.
    #[arg(short, long)]
    m: usize,
    /// Sites per gene.
    #[arg(short, long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    /// Output dataset container.
    #[arg(long)]
    out: PathBuf,
    /// Optionally also emit one FASTA file per gene into this directory.
    #[arg(long)]
    fasta_dir: Option<PathBuf>,
    /// Optionally also emit the sampled gene trees as Newick files.
    #[arg(long)]
    gene_trees_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Partition fractions, e.g. r1=0.1,r2=0.2,q1=0.1,q2=0.6
    #[arg(long, default_value = "r1=0.1,r2=0.2,q1=0.1,q2=0.6")]
    partition: String,
    #[arg(long)]
    seed: u64,
    /// Transformed dataset (quantile genes only, Q1 first).
    #[arg(long)]
    out: PathBuf,
    /// JSON record of the difference estimates and counters.
    #[arg(long)]
    deltas: PathBuf,
    #[arg(long, default_value_t = 0.74)]
    clamp_max: f64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

#[derive(Args)]
struct InferTripletArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Q1 size: a gene count, or a fraction of the file's genes if < 1.
    #[arg(long)]
    q1: f64,
    /// Q2 size (count or fraction); defaults to the remaining genes.
    #[arg(long)]
    q2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c3: f64,
    /// Gene count of the original (pre-reduction) dataset for the quantile
    /// level; defaults to the genes present in the file.
    #[arg(long)]
    alpha_m: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output topology as Newick.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "strict")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    c3: f64,
    /// Partition fractions for the per-triple reductions.
    #[arg(long, default_value = "r1=0.1,r2=0.2,q1=0.1,q2=0.6")]
    partition: String,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the thread count (env COALFARRIS_THREADS is the fallback).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct IdentifiabilityArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MscArgs {
    #[command(subcommand)]
    what: MscCommand,
}

#[derive(Subcommand)]
enum MscCommand {
    /// Density and CDF of Z = (delta_ab - mu_ab)/2 at given points.
    Density {
        #[arg(long)]
        tree: PathBuf,
        /// Pair of taxon labels, e.g. 1,2
        #[arg(long)]
        pair: String,
        /// Comma-separated evaluation points.
        #[arg(long)]
        x: String,
    },
    /// Quantiles of Z at given levels.
    Quantile {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        pair: String,
        /// Comma-separated levels in [0, 1).
        #[arg(long)]
        alpha: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reduce(a) => reduce(a),
        Command::InferTriplet(a) => infer_triplet(a),
        Command::Infer(a) => infer(a),
        Command::Experiment(a) => experiment(a),
        Command::Identifiability(a) => identifiability(a),
        Command::Msc(a) => msc(a),
    }
}

fn load_tree(path: &Path) -> Result<SpeciesPhylogeny> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading species tree {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let parsed = serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON tree {}", path.display()))?;
        Ok(species_from_json(&parsed)?)
    } else {
        Ok(parse_species_newick(&text)?)
    }
}

fn load_dataset(path: &Path) -> Result<SequenceDataset> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening dataset {}", path.display()))?;
    Ok(SequenceDataset::read_binary(std::io::BufReader::new(file))?)
}

fn parse_fractions(text: &str) -> Result<PartitionFractions> {
    let mut f = PartitionFractions::default();
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("bad partition component `{part}`"))?;
        let value: f64 = value.parse().with_context(|| format!("fraction `{part}`"))?;
        match key.trim() {
            "r1" => f.r1 = value,
            "r2" => f.r2 = value,
            "q1" => f.q1 = value,
            "q2" => f.q2 = value,
            other => bail!("unknown partition key `{other}`"),
        }
    }
    f.validate()?;
    Ok(f)
}

fn parse_pair(data_labels: &[coalfarris_core::Taxon], text: &str) -> Result<(TaxonId, TaxonId)> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| anyhow!("pair must be two labels like 1,2"))?;
    let find = |label: &str| {
        data_labels
            .iter()
            .find(|t| t.label == label.trim())
            .map(|t| t.id)
            .ok_or_else(|| anyhow!("unknown taxon label `{label}`"))
    };
    Ok((find(a)?, find(b)?))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let tree = load_tree(&a.tree)?;
    let data = harness::run_msc_jc(&tree, a.m, a.k, a.seed);
    let file = fs::File::create(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;
    data.write_binary(std::io::BufWriter::new(file))?;
    if let Some(dir) = &a.fasta_dir {
        fs::create_dir_all(dir)?;
        let width = a.m.to_string().len();
        for gene in 0..a.m {
            let path = dir.join(format!("gene_{gene:0width$}.fasta"));
            let f = fs::File::create(&path)?;
            data.write_fasta(gene, std::io::BufWriter::new(f))?;
        }
    }
    if let Some(dir) = &a.gene_trees_dir {
        fs::create_dir_all(dir)?;
        let width = a.m.to_string().len();
        let trees = harness::sample_gene_trees(&tree, a.m, a.seed);
        for (gene, g) in trees.iter().enumerate() {
            let path = dir.join(format!("gene_{gene:0width$}.nwk"));
            fs::write(&path, format!("{}\n", coalfarris_core::trees::gene_to_newick(g)))?;
        }
    }
    eprintln!(
        "wrote {} genes x {} sites x {} taxa to {}",
        a.m,
        a.k,
        tree.num_taxa(),
        a.out.display()
    );
    Ok(())
}

fn reduce(a: ReduceArgs) -> Result<()> {
    let data = load_dataset(&a.input)?;
    let cfg = ReductionConfig {
        fractions: parse_fractions(&a.partition)?,
        clamp_max: a.clamp_max,
        retries: a.retries,
        use_upper_window: true,
    };
    let out = run_reduction_with_retries(&data, &cfg, StreamKey::from_seed(a.seed))?;
    let file = fs::File::create(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;
    out.noisy.write_binary(std::io::BufWriter::new(file))?;
    let taxa = data.taxa();
    let mut deltas = serde_json::Map::new();
    for x in 0..3usize {
        for y in 0..3usize {
            if x != y {
                deltas.insert(
                    format!("{}->{}", taxa[x].label, taxa[y].label),
                    json!(out.deltas.delta(x, y)),
                );
            }
        }
    }
    let record = json!({
        "deltas": deltas,
        "selected_sizes": out.deltas.selected.iter().map(|s| json!({
            "pair": [taxa[s.pair.0].label, taxa[s.pair.1].label],
            "apart": taxa[s.apart].label,
            "size": s.genes.len(),
            "thresholds": s.thresholds,
        })).collect::<Vec<_>>(),
        "clamp_events": out.clamp_events,
        "retries_used": out.retries_used,
        "reference_taxon": taxa[out.reference_taxon].label,
        "q1_len": out.q1_len,
        "genes_out": out.noisy.num_genes(),
    });
    fs::write(&a.deltas, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", a.deltas.display()))?;
    eprintln!(
        "reduced {} genes -> {} quantile genes ({} retries, {} clamps)",
        data.num_genes(),
        out.noisy.num_genes(),
        out.retries_used,
        out.clamp_events
    );
    Ok(())
}

fn resolve_size(value: f64, total: usize) -> usize {
    if value < 1.0 {
        ((value * total as f64) as usize).max(1)
    } else {
        value as usize
    }
}

fn infer_triplet(a: InferTripletArgs) -> Result<()> {
    let data = load_dataset(&a.input)?;
    let genes = data.num_genes();
    let n_q1 = resolve_size(a.q1, genes);
    let n_q2 = a.q2.map(|v| resolve_size(v, genes)).unwrap_or(genes.saturating_sub(n_q1));
    if n_q1 + n_q2 > genes {
        bail!("q1 + q2 exceeds the {genes} genes in the file");
    }
    let q1: Vec<usize> = (0..n_q1).collect();
    let q2: Vec<usize> = (n_q1..n_q1 + n_q2).collect();
    let m_total = a.alpha_m.unwrap_or(genes);
    let (topology, state) = quantile_triplet_test(&data, &q1, &q2, m_total, a.c3)?;
    let taxa = data.taxa();
    let out = json!({
        "topology": topology.format_with(taxa),
        "s_values": {
            format!("{},{}", taxa[0].label, taxa[1].label): state.similarities[0],
            format!("{},{}", taxa[0].label, taxa[2].label): state.similarities[1],
            format!("{},{}", taxa[1].label, taxa[2].label): state.similarities[2],
        },
        "q_star": state.q_star,
        "alpha": state.alpha,
        "c3": state.c3,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let data = load_dataset(&a.input)?;
    let cfg = PipelineConfig {
        reduction: ReductionConfig {
            fractions: parse_fractions(&a.partition)?,
            ..ReductionConfig::default()
        },
        c3: a.c3,
    };
    let calls = infer_all_triplets(&data, &cfg, StreamKey::from_seed(a.seed));
    let taxa = data.taxa().to_vec();
    let (topology, dropped) = match a.mode.as_str() {
        "strict" => (build_from_triplets(&calls, &taxa)?, vec![]),
        "repair" => {
            let (t, dropped) = build_with_repair(&calls, &taxa)?;
            (t, dropped)
        }
        other => bail!("unknown mode `{other}` (expected strict|repair)"),
    };
    fs::write(&a.out, format!("{}\n", topology.canonical_newick()))
        .with_context(|| format!("writing {}", a.out.display()))?;
    let summary = json!({
        "taxa": taxa.len(),
        "triples": calls.len(),
        "unresolved": calls.num_unresolved(),
        "dropped_by_repair": dropped.len(),
        "tree": topology.canonical_newick(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config)
        .with_context(|| format!("reading config {}", a.config.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    let points = harness::success_curve(&cfg)?;
    report::emit_report(&points, &cfg, &a.out)?;
    for p in &points {
        if p.skipped {
            eprintln!("f={} m={} k={}: skipped (budget)", p.f, p.m, p.k);
        } else {
            eprintln!(
                "f={} m={} k={} [{:?}]: success {}/{} ({:.3}, CI {:.3}-{:.3})",
                p.f,
                p.m,
                p.k,
                p.regime,
                p.successes,
                p.trials.len(),
                p.success_rate,
                p.ci_low,
                p.ci_high
            );
        }
    }
    eprintln!("reports written to {}", a.out.display());
    Ok(())
}

fn identifiability(a: IdentifiabilityArgs) -> Result<()> {
    let tree = load_tree(&a.tree)?;
    let rep = harness::identifiability_check(&tree, a.samples, a.seed)?;
    let text = serde_json::to_string_pretty(&rep)?;
    match &a.out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn msc(a: MscArgs) -> Result<()> {
    match a.what {
        MscCommand::Density { tree, pair, x } => {
            let s = load_tree(&tree)?;
            let (a_id, b_id) = parse_pair(s.taxa(), &pair)?;
            let mix = pairwise_excess_density(&s, a_id, b_id)?;
            let points: Vec<f64> = parse_float_list(&x)?;
            let values: Vec<_> = points
                .iter()
                .map(|&x| json!({"x": x, "density": mix.density(x), "cdf": mix.cdf(x)}))
                .collect();
            print_mixture(&s, (a_id, b_id), &mix, json!({ "values": values }))?;
        }
        MscCommand::Quantile { tree, pair, alpha } => {
            let s = load_tree(&tree)?;
            let (a_id, b_id) = parse_pair(s.taxa(), &pair)?;
            let mix = pairwise_excess_density(&s, a_id, b_id)?;
            let levels: Vec<f64> = parse_float_list(&alpha)?;
            let mut values = Vec::new();
            for &al in &levels {
                values.push(json!({"alpha": al, "quantile": mix.quantile(al)?}));
            }
            print_mixture(&s, (a_id, b_id), &mix, json!({ "values": values }))?;
        }
    }
    Ok(())
}

fn print_mixture(
    s: &SpeciesPhylogeny,
    pair: (TaxonId, TaxonId),
    mix: &coalfarris_core::msc::MixtureDensity,
    extra: serde_json::Value,
) -> Result<()> {
    let taxa = s.taxa();
    let mut out = json!({
        "pair": [taxa[pair.0].label, taxa[pair.1].label],
        "weights": mix.weights(),
        "segments": mix.segments().iter().map(|seg| json!({
            "lower": seg.lower,
            "upper": if seg.upper.is_finite() { json!(seg.upper) } else { json!("inf") },
            "rate": seg.rate,
        })).collect::<Vec<_>>(),
    });
    out.as_object_mut()
        .unwrap()
        .extend(extra.as_object().unwrap().clone());
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn parse_float_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad number `{v}`: {e}")))
        .collect()
}
