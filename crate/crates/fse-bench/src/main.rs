use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;

use fse_bench::{make_batches, run_experiment, BatchSpec, ExperimentConfig, Source, SyntheticSpec};
use fse_client::keys;
use fse_core::crypto::MasterKey;
use fse_core::layout::IndexParams;

/// Replays a dated document stream as index updates and records the
/// per-update measurements.
#[derive(Parser)]
#[command(name = "fsebench", version)]
struct Args {
    /// Batch window in days (1 = daily, 7 = weekly, 30 = monthly).
    #[arg(long)]
    window: u32,

    /// Directory of date-stamped documents, one file per document.
    #[arg(long, conflicts_with = "synthetic")]
    source: Option<PathBuf>,

    /// Generate a synthetic stream instead. Optional comma-separated
    /// parameters: days=180,vocab=20000,zipf=1.1,wpd=50-500,dpd=20-80.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    synthetic: Option<String>,

    /// Seed for stream generation, sampling, and build randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV output path; per-word batch counts go to `<out>.words.csv`.
    #[arg(long)]
    out: PathBuf,

    /// Use an already-running server (its collection must start empty).
    #[arg(long, env = "FSE_SERVER")]
    server: Option<String>,

    /// Data directory for the embedded server; a fresh temporary directory
    /// by default.
    #[arg(long, conflicts_with = "server")]
    data: Option<PathBuf>,

    /// Master key file; an ephemeral key is generated when omitted.
    #[arg(long, env = "FSE_KEY")]
    key: Option<PathBuf>,

    /// Locality parameter for built indexes.
    #[arg(long, default_value_t = 1)]
    locality: u32,

    /// Stored-level parameter for built indexes.
    #[arg(long = "levels", default_value_t = 3)]
    levels: u32,

    /// Words sampled for the per-batch equivalence check.
    #[arg(long, default_value_t = 100)]
    sample: usize,
}

fn parse_synthetic(params: &str, seed: u64) -> anyhow::Result<SyntheticSpec> {
    let mut spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    for item in params.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = item
            .split_once('=')
            .with_context(|| format!("expected key=value in {item:?}"))?;
        let range = |v: &str| -> anyhow::Result<(u32, u32)> {
            let (lo, hi) = v
                .split_once('-')
                .with_context(|| format!("expected lo-hi in {v:?}"))?;
            Ok((lo.parse()?, hi.parse()?))
        };
        match key.trim() {
            "days" => spec.days = value.parse()?,
            "vocab" => spec.vocab = value.parse()?,
            "zipf" => spec.zipf_exponent = value.parse()?,
            "wpd" => spec.words_per_doc = range(value)?,
            "dpd" => spec.docs_per_day = range(value)?,
            "seed" => spec.seed = value.parse()?,
            other => bail!("unknown synthetic parameter {other:?}"),
        }
    }
    Ok(spec)
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    if args.window < 1 {
        bail!("--window must be at least 1 day");
    }
    if args.locality < 1 || args.levels < 1 {
        bail!("--locality and --levels must be at least 1");
    }

    let source = match (&args.source, &args.synthetic) {
        (Some(dir), None) => Source::Directory(dir.clone()),
        (None, Some(params)) => Source::Synthetic(parse_synthetic(params, args.seed)?),
        (None, None) => bail!("pass --source <dir> or --synthetic"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };

    let batches = make_batches(&BatchSpec {
        window_days: args.window,
        source,
    })?;
    for (path, reason) in &batches.rejected {
        eprintln!("fsebench: skipping {}: {reason}", path.display());
    }
    eprintln!(
        "fsebench: {} batches over a {}-day window",
        batches.batches.len(),
        args.window
    );

    let master = match &args.key {
        Some(path) => keys::read_key_file(path)?,
        None => MasterKey::generate(&mut rand::rng()),
    };

    let cfg = ExperimentConfig {
        params: IndexParams::new(args.locality, args.levels),
        sample_words: args.sample,
        seed: args.seed,
    };

    // embedded server unless one was pointed at; the handle keeps it alive
    let mut tempdir = None;
    let mut embedded = None;
    let addr = match &args.server {
        Some(addr) => addr.clone(),
        None => {
            let data = match &args.data {
                Some(dir) => dir.clone(),
                None => {
                    let dir = tempfile::tempdir().context("create temp data dir")?;
                    let path = dir.path().to_owned();
                    tempdir = Some(dir);
                    path
                }
            };
            let server = fse_server::Server::bind("127.0.0.1:0", &data)?;
            let addr = server.local_addr().to_string();
            embedded = Some(server.spawn());
            addr
        }
    };

    let outcome = run_experiment(&batches, &master, &addr, &cfg, Some(&args.out))?;
    let orders: Vec<String> = outcome.final_orders.iter().map(u32::to_string).collect();
    println!(
        "batches={} total_transactions={} total_bytes={} cumulative_tuples={} final_orders={}",
        outcome.rows.len(),
        outcome.total_transactions,
        outcome.total_bytes_exchanged,
        outcome.cumulative_tuples,
        orders.join(","),
    );

    if let Some(handle) = embedded {
        handle.shutdown();
    }
    drop(tempdir);
    Ok(())
}
