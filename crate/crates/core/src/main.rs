use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pplm::pipeline::{report, Pipeline, PipelineConfig, Stage};
use pplm::synth::{generate, SynthSpec};
use pplm::Error;

/// Identifier blacklisting, protected LM training and memorization audits.
#[derive(Parser)]
#[command(name = "pplm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Read the corpus, tag direct identifiers, split members, build the vocabulary.
    Ingest(ConfigArg),
    /// Build the identifier blacklist.
    Blacklist(ConfigArg),
    /// Per-patient identifier counts and degree distributions.
    Stats(ConfigArg),
    /// Write per-epoch target plans for every scheme.
    Plan(ConfigArg),
    /// Train one model per scheme, checkpointing at milestones.
    Train(ConfigArg),
    /// Leak and utility audits of every checkpoint.
    Audit(ConfigArg),
    /// Membership inference and extraction attacks.
    Attack(ConfigArg),
    /// Summary tables from finished audits.
    Report {
        #[arg(long, short, conflicts_with = "dir", required_unless_present = "dir")]
        config: Option<PathBuf>,
        /// Output directory of a previous run.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator spec (TOML); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several stages in order (all by default).
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
}

fn pipeline(config: &Path) -> pplm::Result<Pipeline> {
    Pipeline::new(PipelineConfig::load(config)?)
}

fn stage(config: &ConfigArg, stage: Stage) -> pplm::Result<()> {
    let p = pipeline(&config.config)?;
    if stage == Stage::Attack && p.config().attack.is_none() {
        return Err(Error::Config(vec![
            "the attack stage needs an [attack] section".into(),
        ]));
    }
    p.run_stage(stage)
}

fn synth(out: &Path, spec: Option<&Path>, patients: Option<usize>, seed: Option<u64>) -> pplm::Result<()> {
    let mut s = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidArgument(format!("{}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))?
        }
        None => SynthSpec::default(),
    };
    if let Some(n) = patients {
        s.patients = n;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate()?;
    let corpus = generate(&s)?;
    corpus.write(out)?;
    println!(
        "wrote {} documents for {} patients to {}",
        corpus.corpus.len(),
        corpus.corpus.patient_count(),
        out.display()
    );
    Ok(())
}

fn dispatch(cmd: Command) -> pplm::Result<()> {
    match cmd {
        Command::Ingest(c) => stage(&c, Stage::Ingest),
        Command::Blacklist(c) => stage(&c, Stage::Blacklist),
        Command::Stats(c) => stage(&c, Stage::Stats),
        Command::Plan(c) => stage(&c, Stage::Plan),
        Command::Train(c) => stage(&c, Stage::Train),
        Command::Audit(c) => stage(&c, Stage::Audit),
        Command::Attack(c) => stage(&c, Stage::Attack),
        Command::Report { config, dir } => match (config, dir) {
            (Some(c), _) => pipeline(&c)?.run_stage(Stage::Report),
            (None, Some(d)) => report(&d).map(|_| ()),
            (None, None) => unreachable!("clap requires one"),
        },
        Command::Synth {
            out,
            spec,
            patients,
            seed,
        } => synth(&out, spec.as_deref(), patients, seed),
        Command::Run { config, stages } => {
            let p = pipeline(&config)?;
            if stages.is_empty() {
                return p.run_all();
            }
            let stages: Vec<Stage> = stages
                .iter()
                .map(|s| s.parse())
                .collect::<pplm::Result<_>>()?;
            if stages.contains(&Stage::Attack) && p.config().attack.is_none() {
                return Err(Error::Config(vec![
                    "the attack stage needs an [attack] section".into(),
                ]));
            }
            p.run(&stages)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
