use std::path::PathBuf;
use std::process::ExitCode;

use calm::checkpoint::fingerprint_hex;
use calm::config::{RunConfig, REPORT_DIR_ENV};
use calm::core::data::SynthSpec;
use calm::dataset::load_dataset;
use calm::pipeline;
use calm::{reports, Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "calm", version, about = "Contrastive acoustic-linguistic style retrieval")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for encoding and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic clustered corpus (train.jsonl, test.jsonl, spec.json).
    GenData(GenDataArgs),
    /// Pretrain, sample batches and train both encoders.
    Train(TrainArgs),
    /// Encode a dataset into a retrieval index.
    Index(IndexArgs),
    /// Retrieve references for one query item and summarize their style.
    Retrieve(RetrieveArgs),
    /// Precision and style similarity, with the semantic control alongside.
    Eval(EvalArgs),
    /// Style similarity as a function of N.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic spec; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    items_per_cluster: Option<usize>,
    #[arg(long)]
    test_per_cluster: Option<usize>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    confound_ratio: Option<f64>,
    #[arg(long)]
    style_noise: Option<f64>,
    #[arg(long)]
    text_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = REPORT_DIR_ENV)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    freeze_style: bool,
    /// Compare analytic and finite-difference gradients before training.
    #[arg(long)]
    grad_check: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// JSONL file holding the query item.
    #[arg(long)]
    queries: PathBuf,
    /// Id of the query item in that file.
    #[arg(long)]
    id: String,
    #[arg(long)]
    n: Option<usize>,
    /// Never return the query's own entry.
    #[arg(long)]
    exclude_self: bool,
    /// Write the weights and final style embedding here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Training dataset, ranked by the semantic control.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    allow_self_match: bool,
    #[arg(long, env = REPORT_DIR_ENV)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    allow_self_match: bool,
    #[arg(long, env = REPORT_DIR_ENV)]
    report_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    set(&mut spec.n_clusters, args.clusters);
    set(&mut spec.items_per_cluster, args.items_per_cluster);
    set(&mut spec.test_per_cluster, args.test_per_cluster);
    set(&mut spec.n_topics, args.topics);
    set(&mut spec.confound_ratio, args.confound_ratio);
    set(&mut spec.style_noise, args.style_noise);
    set(&mut spec.text_noise, args.text_noise);
    set(&mut spec.seed, args.seed);
    let corpus = pipeline::gen_data(&spec, &args.out)?;
    println!("train {} items, test {} items, written to {}", corpus.train.len(), corpus.test.len(), args.out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<()> {
    set_path(&mut cfg.paths.dataset, args.dataset);
    set_path(&mut cfg.paths.checkpoint, args.checkpoint);
    set_path(&mut cfg.paths.report_dir, args.report_dir);
    set(&mut cfg.train.steps, args.steps);
    set(&mut cfg.train.pretrain_steps, args.pretrain_steps);
    set(&mut cfg.train.seed, args.seed);
    set(&mut cfg.train.k, args.k);
    set(&mut cfg.train.lambda, args.lambda);
    set(&mut cfg.train.lr, args.lr);
    set(&mut cfg.checkpoint_every, args.checkpoint_every);
    cfg.train.freeze_style |= args.freeze_style;
    cfg.grad_check |= args.grad_check;
    let steps = cfg.train.steps;
    let result = pipeline::train(&cfg, |r| {
        if (r.step + 1) % 100 == 0 || r.step + 1 == steps {
            eprintln!(
                "step {:>5}  l_calm {:.5}  l_tts_proxy {:.5}  l_total {:.5}",
                r.step + 1,
                r.l_calm,
                r.l_tts_proxy,
                r.l_total
            );
        }
    })?;
    if let Some(g) = &result.grad_check {
        println!(
            "gradient check passed: {} parameters, max relative error {:e} ({}[{}])",
            g.n_params, g.max_rel_error, g.worst_tensor, g.worst_index
        );
    }
    match result.stats.last() {
        Some(r) => println!(
            "final l_calm {} l_tts_proxy {} l_total {}",
            r.l_calm, r.l_tts_proxy, r.l_total
        ),
        None => println!("no training steps run; checkpoint holds the initial parameters"),
    }
    println!("checkpoint {}", fingerprint_hex(&result.checkpoint.fingerprint()));
    Ok(())
}

fn index(mut cfg: RunConfig, args: IndexArgs) -> Result<()> {
    set_path(&mut cfg.paths.checkpoint, args.checkpoint);
    set_path(&mut cfg.paths.dataset, args.dataset);
    set_path(&mut cfg.paths.index, args.out);
    let index = pipeline::index(&cfg)?;
    println!("indexed {} items", index.len());
    Ok(())
}

#[derive(Serialize)]
struct RetrieveOutput<'a> {
    query_id: &'a str,
    n: usize,
    ids: &'a [String],
    similarities: &'a [f64],
    weights: &'a [f64],
    final_style: &'a [f64],
}

fn retrieve(mut cfg: RunConfig, args: RetrieveArgs) -> Result<()> {
    set_path(&mut cfg.paths.checkpoint, args.checkpoint);
    set_path(&mut cfg.paths.index, args.index);
    set(&mut cfg.n, args.n);
    cfg.validate()?;
    let (ck, index) = pipeline::load_pair(&cfg)?;
    let queries = load_dataset(&args.queries)?;
    let query = queries
        .iter()
        .find(|q| q.id == args.id)
        .ok_or_else(|| Error::Config(format!("no item {:?} in {}", args.id, args.queries.display())))?;
    let r = pipeline::retrieve(&ck.params, &index, query, cfg.n, args.exclude_self)?;
    for (id, sim) in r.refs.ids.iter().zip(&r.refs.sims) {
        println!("{id}\t{sim}");
    }
    if let Some(out) = &args.out {
        reports::write_json(
            out,
            &RetrieveOutput {
                query_id: &query.id,
                n: cfg.n,
                ids: &r.refs.ids,
                similarities: &r.refs.sims,
                weights: r.summary.weights.as_slice(),
                final_style: r.summary.final_style.as_slice(),
            },
        )?;
    }
    Ok(())
}

fn eval(mut cfg: RunConfig, args: EvalArgs) -> Result<()> {
    set_path(&mut cfg.paths.checkpoint, args.checkpoint);
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.dataset, args.dataset);
    set_path(&mut cfg.paths.test_dataset, args.test);
    set_path(&mut cfg.paths.report_dir, args.report_dir);
    set(&mut cfg.n, args.n);
    cfg.allow_self_match |= args.allow_self_match;
    let r = pipeline::evaluate(&cfg)?;
    println!("{:<18}{:>12}{:>18}", "method", "precision", "style_similarity");
    for (name, m) in [("calm", r.calm_summary()), ("semantic_control", r.control_summary())] {
        println!("{name:<18}{:>12.4}{:>18.4}", m.mean_precision, m.mean_style_similarity);
    }
    Ok(())
}

fn sweep(mut cfg: RunConfig, args: SweepArgs) -> Result<()> {
    set_path(&mut cfg.paths.checkpoint, args.checkpoint);
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.test_dataset, args.test);
    set_path(&mut cfg.paths.report_dir, args.report_dir);
    set(&mut cfg.n_values, args.n_values);
    cfg.allow_self_match |= args.allow_self_match;
    let curve = pipeline::sweep(&cfg)?;
    println!("N,mean_similarity");
    for (n, s) in &curve.points {
        println!("{n},{s}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.threads, cli.threads);
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(cfg, a),
        Command::Index(a) => index(cfg, a),
        Command::Retrieve(a) => retrieve(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Sweep(a) => sweep(cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
