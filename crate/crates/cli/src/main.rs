use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use molfuse::config::Profile;
use molfuse::qm9::TargetId;

mod commands;
mod failure;
mod plots;
mod run_manifest;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "molfuse", version, about = "Geometry + text multimodal property prediction on QM9")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// PubChem response cache directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub cache_dir: Option<PathBuf>,
    /// Request ceiling per second for PubChem.
    #[arg(long, global = true, value_name = "N")]
    pub rate: Option<u32>,
    /// Training seed; for `ablate`, the first of the configured number of
    /// consecutive seeds.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    /// Embedding file; switches the run to file-backed text vectors.
    #[arg(long, global = true, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn parse_target(s: &str) -> Result<TargetId, String> {
    s.parse().map_err(|e: molfuse::qm9::TargetError| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolve every molecule in an XYZ directory against PubChem and warm the cache.
    Fetch {
        /// Directory of QM9 .xyz files (defaults to data.xyz_dir).
        xyz_dir: Option<PathBuf>,
    },
    /// Join geometries with cached descriptors into the multimodal dataset.
    BuildDataset {
        xyz_dir: Option<PathBuf>,
    },
    /// Cross-validated training of one target and modality.
    Train,
    /// Paired geometry-only / multimodal runs over targets and seeds.
    Ablate,
    /// Aggregate ablation CSVs into the comparison table and plots.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Per-molecule gate values written by `ablate`.
        #[arg(long)]
        gates: Option<PathBuf>,
    },
    /// Validate an embedding file against the dataset descriptions.
    EmbedCheck,
    /// Write a synthetic QM9-layout corpus and warm the cache with matching
    /// descriptor records, for offline runs.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Replace this target by an independent random value copied into XLogP.
        #[arg(long, value_parser = parse_target)]
        leak: Option<TargetId>,
        /// Largest heavy-atom count per molecule.
        #[arg(long, default_value_t = 7)]
        max_heavy: usize,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Fetch { xyz_dir } => commands::fetch(g, xyz_dir),
        Command::BuildDataset { xyz_dir } => commands::build_dataset(g, xyz_dir),
        Command::Train => commands::train(g),
        Command::Ablate => commands::ablate(g),
        Command::Report { csv, gates } => commands::report(g, &csv, gates.as_deref()),
        Command::EmbedCheck => commands::embed_check(g),
        Command::Synth { n, leak, max_heavy } => commands::synth(g, n, leak, max_heavy),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code())
        }
    }
}
