//! Command-line front end: corpus synthesis, feature extraction, training,
//! evaluation, and single-file transcription over one shared output layout.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use amt_core::config::PipelineConfig;
use amt_core::pipeline::{
    run_eval, run_extract, run_gen, run_train, run_transcribe, OutputLayout,
};

#[derive(Parser)]
#[command(
    name = "amt",
    version,
    about = "Polyphonic piano transcription pipeline on synthetic audio"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in config profile to start from (conflicts with --config).
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// Directory holding corpora and run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override both the corpus base seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Drop silent frames from training and testing data.
    #[arg(long, global = true)]
    v2: bool,

    /// Write piano-roll SVGs (per test song in eval, for the prediction in
    /// transcribe).
    #[arg(long, global = true)]
    svg: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small corpus sized for a workstation run.
    Desk,
    /// Full-size corpus (830 songs of 3 minutes); hours of compute.
    Full,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the training and test corpora.
    Gen,
    /// Compute spectral features, labels, and kept-frame files.
    Extract,
    /// Split songs, train the network, write checkpoint and history.
    Train,
    /// Score the checkpoint on the test corpus and write report.tsv.
    Eval,
    /// Transcribe one WAV file with a trained checkpoint.
    Transcribe {
        /// Input WAV (16-bit mono PCM).
        wav: PathBuf,
        /// Checkpoint to load; defaults to model.amtm under --out.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output label file; defaults to the WAV path with extension
        /// .lblf.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Print the effective config as TOML and exit.
    ConfigDump,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => PipelineConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))?,
        (None, Some(Preset::Full)) => PipelineConfig::paper_scale(),
        (None, Some(Preset::Desk)) | (None, None) => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.corpus.base_seed = seed;
        cfg.train.seed = seed;
    }
    if cli.v2 {
        cfg.run.v2 = true;
    }
    if cli.svg {
        cfg.run.svg = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = OutputLayout::new(&cli.out);

    match &cli.cmd {
        Cmd::Gen => {
            let summary = run_gen(&cfg, &out).context("corpus generation failed")?;
            println!(
                "generated {} train songs and {} test songs of {} s under {}",
                summary.train.len(),
                summary.test.len(),
                cfg.corpus.song_duration,
                out.root.display()
            );
        }
        Cmd::Extract => {
            let summary = run_extract(&cfg, &out).context("feature extraction failed")?;
            println!(
                "extracted train: {} frames ({} kept), test: {} frames ({} kept), mode {}",
                summary.train.total_frames(),
                summary.train.total_kept(),
                summary.test.total_frames(),
                summary.test.total_kept(),
                if cfg.run.v2 { "v2" } else { "v1" }
            );
            if summary.dropped_events > 0 {
                println!(
                    "warning: {} note events fell outside the pitch range",
                    summary.dropped_events
                );
            }
        }
        Cmd::Train => {
            let summary = run_train(&cfg, &out).context("training failed")?;
            println!(
                "trained {} epochs on {} frames ({} songs), validated on {} frames ({} songs)",
                summary.epochs,
                summary.train_frames,
                summary.train_songs,
                summary.val_frames,
                summary.val_songs
            );
            println!(
                "best validation accuracy {:.4} in {:.1} s; wrote {} and {}",
                summary.best_val_acc,
                summary.seconds,
                out.model_path().display(),
                out.history_path().display()
            );
        }
        Cmd::Eval => {
            let summary = run_eval(&cfg, &out).context("evaluation failed")?;
            println!(
                "test subset accuracy {:.4} over {} frames ({} songs); all-silent baseline {:.4}",
                summary.report.subset_accuracy,
                summary.report.n_samples,
                summary.per_song.len(),
                summary.baseline_accuracy
            );
            println!(
                "micro precision {:.4} recall {:.4} F1 {:.4}; 2-minute inference {:.3} s",
                summary.report.confusion.micro_precision(),
                summary.report.confusion.micro_recall(),
                summary.report.confusion.micro_f1(),
                summary.report.inference_seconds
            );
            println!("wrote {}", out.report_path().display());
            if summary.svg_count > 0 {
                println!(
                    "wrote {} piano rolls under {}",
                    summary.svg_count,
                    out.roll_dir().display()
                );
            }
        }
        Cmd::Transcribe { wav, model, labels } => {
            let model = model.clone().unwrap_or_else(|| out.model_path());
            let labels = labels.clone().unwrap_or_else(|| wav.with_extension("lblf"));
            let svg = cfg.run.svg.then(|| labels.with_extension("svg"));
            let summary = run_transcribe(&cfg, &model, wav, &labels, svg.as_deref())
                .context("transcription failed")?;
            println!(
                "transcribed {} frames, {} active cells, to {}",
                summary.frames,
                summary.active_cells,
                summary.labels_path.display()
            );
            if let Some(svg) = summary.svg_path {
                println!("wrote {}", svg.display());
            }
        }
        Cmd::ConfigDump => {
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}
