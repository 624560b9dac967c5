//! `ncderev`: batch driver for corpus generation, filter fitting, MLP
//! training, feature mixing and diagnostics.
//!
//! Settings resolve as command-line flags over the `--config` JSON file over
//! built-in defaults. Every run writes `runs/<command>.json` under the work
//! directory.

mod commands;
mod config;
mod error;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncderev::corpus::Split;
use ncderev::diagnostics::{AutocorrDomain, ExportFormat};
use ncderev::mixing::EnhancerRef;
use ncderev::mlp::LrSchedule;

use config::{ExperimentConfig, Mapper};
use error::{CliError, Result};
use workdir::{write_run_record, Workdir};

#[derive(Parser, Debug)]
#[command(name = "ncderev", version, about = "Non-causal FIR and MLP dereverberation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads; does not affect outputs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reverberate clean utterances and write the manifest.
    MakeCorpus(MakeCorpusArgs),
    /// Fit a per-bin filter for every utterance.
    FitFir(FitFirArgs),
    /// Mean in-sample error over a grid of (p, q).
    SweepContext(SweepArgs),
    /// Log-Mel features for the clean and reverberant streams.
    Featurize(FeaturizeArgs),
    /// Train the feature-mapping MLP on the train split.
    TrainMlp(TrainArgs),
    /// Map reverberant features through the trained MLP.
    Derev,
    /// Per-subset lambda sweep of the mixing configs.
    MixSweep(MixArgs),
    /// Autocorrelation curves and spectrogram exports.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    /// Generate this many synthetic utterances.
    #[arg(long, conflicts_with = "clean_dir")]
    synthetic: Option<usize>,
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    /// Number of RIRs to draw.
    #[arg(long)]
    rirs: Option<usize>,
    #[arg(long)]
    rt60_min: Option<f64>,
    #[arg(long)]
    rt60_max: Option<f64>,
    /// Let several utterances share an RIR.
    #[arg(long)]
    allow_rir_reuse: bool,
    /// Use unit impulses, making reverberant equal to clean.
    #[arg(long)]
    identity_rirs: bool,
}

#[derive(Args, Debug)]
struct FitFirArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated `p:q` pairs.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    /// Sweep only the first N utterances.
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    no_mvn: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Keep the learning rate fixed.
    #[arg(long)]
    constant_lr: bool,
}

#[derive(Args, Debug)]
struct MixArgs {
    #[arg(long, value_parser = parse_enhancer)]
    enhancer: Option<EnhancerRef>,
    /// `mlp` or `identity`.
    #[arg(long, value_parser = parse_mapper)]
    mapper: Option<Mapper>,
    /// `all`, `train`, `dev` or `test`.
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitChoice>,
    /// Comma-separated config ids.
    #[arg(long, value_delimiter = ',')]
    configs: Option<Vec<u8>>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// `complex` or `magnitude`.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<AutocorrDomain>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    tail_from: Option<usize>,
    /// `csv` or `pgm`.
    #[arg(long, value_parser = parse_format)]
    format: Option<ExportFormat>,
    /// Export spectrograms of the first N utterances.
    #[arg(long)]
    spectrograms: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice(Option<Split>);

#[derive(Debug, Clone)]
struct Grid(Vec<(usize, usize)>);

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    s.split(',')
        .map(|pair| {
            let (p, q) = pair.trim().split_once(':').ok_or_else(|| format!("expected p:q, got {pair:?}"))?;
            Ok((p.parse().map_err(|_| format!("bad p in {pair:?}"))?, q.parse().map_err(|_| format!("bad q in {pair:?}"))?))
        })
        .collect::<std::result::Result<_, String>>()
        .map(Grid)
}

fn parse_enhancer(s: &str) -> std::result::Result<EnhancerRef, String> {
    s.parse().map_err(|e: ncderev::Error| e.to_string())
}

fn parse_mapper(s: &str) -> std::result::Result<Mapper, String> {
    match s {
        "mlp" => Ok(Mapper::Mlp),
        "identity" => Ok(Mapper::Identity),
        other => Err(format!("unknown mapper {other:?}")),
    }
}

fn parse_split(s: &str) -> std::result::Result<SplitChoice, String> {
    if s == "all" {
        return Ok(SplitChoice(None));
    }
    s.parse().map(|v| SplitChoice(Some(v))).map_err(|e: ncderev::Error| e.to_string())
}

fn parse_domain(s: &str) -> std::result::Result<AutocorrDomain, String> {
    match s {
        "complex" => Ok(AutocorrDomain::Complex),
        "magnitude" => Ok(AutocorrDomain::Magnitude),
        other => Err(format!("unknown domain {other:?}")),
    }
}

fn parse_format(s: &str) -> std::result::Result<ExportFormat, String> {
    match s {
        "csv" => Ok(ExportFormat::Csv),
        "pgm" => Ok(ExportFormat::Pgm),
        other => Err(format!("unknown format {other:?}")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeCorpus(_) => "make-corpus",
            Command::FitFir(_) => "fit-fir",
            Command::SweepContext(_) => "sweep-context",
            Command::Featurize(_) => "featurize",
            Command::TrainMlp(_) => "train-mlp",
            Command::Derev => "derev",
            Command::MixSweep(_) => "mix-sweep",
            Command::Diagnose(_) => "diagnose",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        match self {
            Command::MakeCorpus(a) => {
                if let Some(n) = a.synthetic {
                    cfg.corpus.synthetic_utterances = n;
                    cfg.corpus.clean_dir = None;
                }
                if a.clean_dir.is_some() {
                    cfg.corpus.clean_dir = a.clean_dir.clone();
                }
                if a.rirs.is_some() {
                    cfg.rir.count = a.rirs;
                }
                set(&mut cfg.rir.rt60_min, &a.rt60_min);
                set(&mut cfg.rir.rt60_max, &a.rt60_max);
                if a.allow_rir_reuse {
                    cfg.corpus.unique_rirs = false;
                }
                if a.identity_rirs {
                    cfg.rir.identity = true;
                }
            }
            Command::FitFir(a) => {
                set(&mut cfg.fir.p, &a.p);
                set(&mut cfg.fir.q, &a.q);
                if a.ridge.is_some() {
                    cfg.fir.ridge = a.ridge;
                }
            }
            Command::SweepContext(a) => {
                if let Some(Grid(g)) = &a.grid {
                    cfg.fir.grid = g.clone();
                }
                if a.utterances.is_some() {
                    cfg.fir.sweep_utterances = a.utterances;
                }
                if a.ridge.is_some() {
                    cfg.fir.ridge = a.ridge;
                }
            }
            Command::Featurize(a) => {
                set(&mut cfg.features.n_mels, &a.n_mels);
                if a.no_mvn {
                    cfg.features.mvn = false;
                }
            }
            Command::TrainMlp(a) => {
                set(&mut cfg.mlp.epochs, &a.epochs);
                set(&mut cfg.mlp.learning_rate, &a.learning_rate);
                set(&mut cfg.mlp.batch_size, &a.batch_size);
                set(&mut cfg.mlp.hidden, &a.hidden);
                set(&mut cfg.mlp.layers, &a.layers);
                if a.constant_lr {
                    cfg.mlp.schedule = LrSchedule::Constant;
                }
            }
            Command::Derev => {}
            Command::MixSweep(a) => {
                set(&mut cfg.mixing.enhancer, &a.enhancer);
                set(&mut cfg.mixing.mapper, &a.mapper);
                if let Some(SplitChoice(s)) = a.split {
                    cfg.mixing.split = s;
                }
                set(&mut cfg.mixing.configs, &a.configs);
            }
            Command::Diagnose(a) => {
                set(&mut cfg.diagnose.domain, &a.domain);
                set(&mut cfg.diagnose.max_lag, &a.max_lag);
                set(&mut cfg.diagnose.tail_from, &a.tail_from);
                set(&mut cfg.diagnose.format, &a.format);
                set(&mut cfg.diagnose.spectrograms, &a.spectrograms);
            }
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.common.workdir {
        cfg.workdir = dir.clone();
    }
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let cfg = resolve(&cli)?;
    let wd = Workdir::new(cfg.workdir.clone());
    workdir::ensure_dir(&wd.root)?;
    match &cli.command {
        Command::MakeCorpus(_) => commands::corpus::make_corpus(&cfg, &wd)?,
        Command::FitFir(_) => commands::fir::fit_fir(&cfg, &wd)?,
        Command::SweepContext(_) => commands::fir::sweep_context(&cfg, &wd)?,
        Command::Featurize(_) => commands::mlp::featurize(&cfg, &wd)?,
        Command::TrainMlp(_) => commands::mlp::train_mlp(&cfg, &wd)?,
        Command::Derev => commands::mlp::derev(&cfg, &wd)?,
        Command::MixSweep(_) => commands::mix::mix_sweep(&cfg, &wd)?,
        Command::Diagnose(_) => commands::diagnose::diagnose(&cfg, &wd)?,
    }
    write_run_record(&wd, cli.command.name(), &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
