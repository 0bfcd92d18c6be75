use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use fse_client::{docs, keys, normalize_query, search_collection, update, Session};
use fse_core::crypto::MasterKey;
use fse_core::layout::IndexParams;
use fse_core::plain::PlainIndex;

/// Client for the encrypted keyword index.
#[derive(Parser)]
#[command(name = "fse", version)]
struct Cli {
    /// Server address.
    #[arg(
        long,
        global = true,
        env = "FSE_SERVER",
        default_value = "127.0.0.1:4160"
    )]
    server: String,

    /// Master key file.
    #[arg(long, global = true, env = "FSE_KEY")]
    key: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fresh master key file.
    Genkeys {
        /// Where to write the key; defaults to --key / FSE_KEY.
        out: Option<PathBuf>,
        /// Overwrite an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Index a directory of documents (one file each) and push the result
    /// to the server, merging stored indexes as needed.
    Update {
        docs_dir: PathBuf,
        /// Maximum chunks one word's postings may be split into.
        #[arg(long, default_value_t = 1)]
        locality: u32,
        /// Number of stored levels.
        #[arg(long = "levels", default_value_t = 3)]
        levels: u32,
        /// File of words to skip while indexing, one per line.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Explicit document ids: lines of `<hex id> TAB <relative path>`.
        #[arg(long = "id-map")]
        id_map: Option<PathBuf>,
    },
    /// Search one keyword; prints matching document ids, one per line.
    Search { word: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fse: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn key_path(cli_key: &Option<PathBuf>) -> anyhow::Result<&Path> {
    cli_key
        .as_deref()
        .context("no key file given; pass --key or set FSE_KEY")
}

fn load_stopwords(path: &Option<PathBuf>) -> anyhow::Result<BTreeSet<String>> {
    let Some(path) = path else {
        return Ok(BTreeSet::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading stopwords from {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_ascii_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Genkeys { out, force } => {
            let path = match &out {
                Some(path) => path.as_path(),
                None => key_path(&cli.key)?,
            };
            let master = MasterKey::generate(&mut rand::rng());
            keys::write_key_file(path, &master, force)?;
            eprintln!("fse: wrote key file {}", path.display());
            Ok(())
        }
        Command::Update {
            docs_dir,
            locality,
            levels,
            stopwords,
            id_map,
        } => {
            if locality < 1 || levels < 1 {
                bail!("--locality and --levels must be at least 1");
            }
            let master = keys::read_key_file(key_path(&cli.key)?)?;
            let stopwords = load_stopwords(&stopwords)?;
            let loaded = docs::load_docs(&docs_dir, id_map.as_deref())?;
            let docs_added = loaded.len() as u64;
            let mut working = PlainIndex::from_documents(
                loaded.iter().map(|d| (d.id, d.bytes.as_slice())),
                &stopwords,
            )?;
            let outcome = if working.is_empty() {
                update::UpdateOutcome {
                    docs_added,
                    ..update::UpdateOutcome::default()
                }
            } else {
                let mut session = Session::connect(&cli.server)?;
                update::index_gen(
                    &master,
                    &mut working,
                    docs_added,
                    IndexParams::new(locality, levels),
                    &mut session,
                    &mut rand::rng(),
                )?
            };
            println!("{}", outcome.summary_line());
            Ok(())
        }
        Command::Search { word } => {
            let master = keys::read_key_file(key_path(&cli.key)?)?;
            let word = normalize_query(&word)?;
            let mut session = Session::connect(&cli.server)?;
            for id in search_collection(&master, &mut session, &word)? {
                println!("{id:016x}");
            }
            Ok(())
        }
    }
}
