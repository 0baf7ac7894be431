//! `partialgeo`: pipeline steps over a shared run config.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use partialgeo_core::config::{artifacts, RunConfig};
use partialgeo_core::io;
use partialgeo_core::loss::AlphaConvention;
use partialgeo_core::pairing::{build_pairs, split_area, PairLabel, PairRecord, SplitResult, SplitSet};
use partialgeo_core::pipeline::{build_index, eval_queries, gallery_tiles};
use partialgeo_core::retrieval::evaluate;
use partialgeo_core::sampling::{PairGraph, SamplingMode};
use partialgeo_core::synthgen::generate_dataset;
use partialgeo_core::trainer::{schedule, select_pairs, train, DataMode};

#[derive(Parser)]
#[command(name = "partialgeo", version, about = "Partial-match cross-view geo-localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// Run config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also forbid cross edges between batch nodes.
    #[arg(long, global = true)]
    strict_sampling: bool,
    #[arg(long, global = true, value_enum)]
    alpha_convention: Option<Alpha>,
    /// Steepness of the IOU weight.
    #[arg(long, global = true)]
    k: Option<f64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Base learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alpha {
    AsPrinted,
    Increasing,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PositiveOnly,
    PositiveSemi,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic world: query records and query/tile features.
    SynthWorld,
    /// Label query/tile pairs by footprint IOU.
    BuildPairs,
    /// Split queries and pairs into train and test areas.
    Split,
    /// Write the exclusive batch schedule for every training epoch.
    SampleBatches {
        /// Pair manifest to sample from (default: the train split).
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Train the toy embedding model.
    TrainToy,
    /// Retrieve test queries against the test gallery and report metrics.
    Evaluate,
}

fn load_config(o: &Opts) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if o.strict_sampling {
        cfg.train.sampling = SamplingMode::Strict;
    }
    if let Some(a) = o.alpha_convention {
        cfg.train.loss.alpha_convention = match a {
            Alpha::AsPrinted => AlphaConvention::AsPrinted,
            Alpha::Increasing => AlphaConvention::Increasing,
        };
    }
    if let Some(k) = o.k {
        cfg.train.loss.k = k;
    }
    if let Some(m) = o.mode {
        cfg.train.data_mode = match m {
            Mode::PositiveOnly => DataMode::PositiveOnly,
            Mode::PositiveSemi => DataMode::PositiveSemi,
        };
    }
    if let Some(lr) = o.lr {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_manifest(path: &Path) -> Result<io::Manifest> {
    Ok(io::load(path, |r| io::read_manifest(r))?)
}

fn synth_world(cfg: &RunConfig) -> Result<()> {
    let world = cfg.world()?;
    let pyr = cfg.pyramid()?;
    let data = generate_dataset(&world, cfg.n_queries, &pyr, &cfg.pairing)?;
    io::save(&cfg.artifact(artifacts::QUERIES), |w| io::write_queries(w, &data.queries))?;
    io::save(&cfg.artifact(artifacts::QUERY_FEATURES), |w| io::write_query_table(w, &data.query_features))?;
    io::save(&cfg.artifact(artifacts::TILE_FEATURES), |w| io::write_embeddings(w, &data.tile_features))?;
    println!("queries {} tiles {} dim {}", data.queries.len(), data.tile_features.len(), data.tile_features.dim);
    Ok(())
}

fn build(cfg: &RunConfig) -> Result<()> {
    let queries = io::load(&cfg.queries_path(), |r| io::read_queries(r))?;
    let pyr = cfg.pyramid()?;
    let out = build_pairs(&queries, &pyr, &cfg.pairing)?;
    let header = io::ManifestHeader::new(&cfg.pairing);
    io::save(&cfg.artifact(artifacts::PAIRS), |w| io::write_manifest(w, &header, &out.pairs))?;
    for s in &out.skipped {
        eprintln!("skipped {}: {}", s.query_id, s.error);
    }
    let pos = out.pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
    println!("pairs {} positive {} semi-positive {} skipped {}", out.pairs.len(), pos, out.pairs.len() - pos, out.skipped.len());
    Ok(())
}

fn split(cfg: &RunConfig) -> Result<()> {
    let queries = io::load(&cfg.queries_path(), |r| io::read_queries(r))?;
    let manifest = read_manifest(&cfg.artifact(artifacts::PAIRS))?;
    let pyr = cfg.pyramid()?;
    let res = split_area(&queries, &manifest.pairs, &cfg.split_spec(&pyr)?)?;
    io::save(&cfg.artifact(artifacts::TRAIN_PAIRS), |w| io::write_manifest(w, &manifest.header, &res.train.pairs))?;
    io::save(&cfg.artifact(artifacts::TEST_PAIRS), |w| io::write_manifest(w, &manifest.header, &res.test.pairs))?;
    println!(
        "train queries {} pairs {} test queries {} pairs {}",
        res.train.queries.len(),
        res.train.pairs.len(),
        res.test.queries.len(),
        res.test.pairs.len()
    );
    Ok(())
}

fn sample_batches(cfg: &RunConfig, pairs: Option<&Path>) -> Result<()> {
    let path = pairs.map_or_else(|| cfg.artifact(artifacts::TRAIN_PAIRS), Path::to_path_buf);
    let manifest = read_manifest(&path)?;
    let tc = cfg.train_config();
    let graph = PairGraph::from_pairs(&select_pairs(&manifest.pairs, tc.data_mode))?;
    let epochs = schedule(&tc, &graph)?;
    let header = io::ScheduleHeader::new(tc.seed, tc.batch_size, tc.sampling, epochs.iter().map(Vec::len).collect());
    let batches: Vec<_> = epochs.iter().flatten().map(|b| b.pairs(&graph)).collect();
    io::save(&cfg.artifact(artifacts::BATCHES), |w| io::write_schedule(w, &header, &batches))?;
    println!("epochs {} batches {}", epochs.len(), batches.len());
    Ok(())
}

fn train_toy(cfg: &RunConfig) -> Result<()> {
    let manifest = read_manifest(&cfg.artifact(artifacts::TRAIN_PAIRS))?;
    let qf = io::load(&cfg.artifact(artifacts::QUERY_FEATURES), |r| io::read_query_table(r))?;
    let tf = io::load(&cfg.artifact(artifacts::TILE_FEATURES), |r| io::read_embeddings(r))?;
    let out = train(&cfg.train_config(), &manifest.pairs, &qf, &tf)?;
    io::save(&cfg.artifact(artifacts::CHECKPOINT), |w| io::write_checkpoint(w, &out.model))?;
    io::save(&cfg.artifact(artifacts::TRACE), |w| io::write_trace(w, &out.trace))?;
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!("epochs {} loss {:.6} -> {:.6} tau {:.6}", out.trace.len(), first.mean_loss, last.mean_loss, last.tau);
    }
    Ok(())
}

fn run_evaluate(cfg: &RunConfig) -> Result<()> {
    let model = io::load(&cfg.artifact(artifacts::CHECKPOINT), |r| io::read_checkpoint(r))?;
    let queries = io::load(&cfg.queries_path(), |r| io::read_queries(r))?;
    let test = read_manifest(&cfg.artifact(artifacts::TEST_PAIRS))?.pairs;
    let qf = io::load(&cfg.artifact(artifacts::QUERY_FEATURES), |r| io::read_query_table(r))?;
    let tf = io::load(&cfg.artifact(artifacts::TILE_FEATURES), |r| io::read_embeddings(r))?;
    let pyr = cfg.pyramid()?;
    let gallery = gallery_tiles(&pyr, &tf.ids, &cfg.split_spec(&pyr)?)?;
    let ids: BTreeSet<&str> = test.iter().map(|p: &PairRecord| p.query_id.as_str()).collect();
    let split = SplitResult {
        train: SplitSet::default(),
        test: SplitSet { queries: queries.into_iter().filter(|q| ids.contains(q.query_id.as_str())).collect(), pairs: test },
    };
    let index = build_index(&model, &pyr, &tf, &gallery)?;
    let eq = eval_queries(&model, &split, &qf, &gallery)?;
    let report = evaluate(&index, &eq, &cfg.eval)?;
    io::save(&cfg.artifact(artifacts::METRICS), |w| io::write_metrics(w, &report))?;
    io::write_metrics(&mut std::io::stdout().lock(), &report)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.opts)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| anyhow::anyhow!("io: {}: {e}", cfg.out.display()))?;
    match &cli.command {
        Command::SynthWorld => synth_world(&cfg),
        Command::BuildPairs => build(&cfg),
        Command::Split => split(&cfg),
        Command::SampleBatches { pairs } => sample_batches(&cfg, pairs.as_deref()),
        Command::TrainToy => train_toy(&cfg),
        Command::Evaluate => run_evaluate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
