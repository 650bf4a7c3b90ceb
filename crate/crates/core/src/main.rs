use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use das::cli::{self, TrainArgs};
use das::data::{CorpusFormat, DomainTag};
use das::error::{DasError, Result};
use das::synth::SynthRecipe;

#[derive(Parser)]
#[command(name = "das", version, about = "Domain adaptive semi-supervised sentiment classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a labeled source corpus and an unlabeled target corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_unlabeled: Option<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        target_test: Option<PathBuf>,
        /// Text embeddings, one `token v1 … vd` line per word.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// jsonl_rating or jsonl_label; guessed from the first line if omitted.
        #[arg(long)]
        format: Option<String>,
        /// Number of seeds to run, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Score a trained checkpoint on a labeled corpus.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to vocab.txt next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
    /// List the n-grams that most activate each class's strongest filters.
    AnalyzeFilters {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Corpora to scan; repeat for several files.
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 10)]
        k_filters: usize,
        #[arg(long, default_value_t = 5)]
        k_trigrams: usize,
    },
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Generate synthetic source and target corpora.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shift: Option<f64>,
    },
}

fn format_arg(f: &Option<String>) -> Result<Option<CorpusFormat>> {
    f.as_deref().map(str::parse).transpose()
}

fn config_of(common: &Common) -> Result<das::trainer::TrainConfig> {
    let mut config = cli::load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| DasError::Config("--out is required for this command".into()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| DasError::io(path, e))?;
    std::fs::write(path, contents).map_err(|e| DasError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, source, source_unlabeled, target, target_test, embeddings, format, runs } => {
            let args = TrainArgs {
                config: config_of(&common)?,
                out: out_dir(&common)?.to_path_buf(),
                source,
                source_unlabeled,
                target,
                target_test,
                embeddings,
                format: format_arg(&format)?,
                runs,
            };
            for record in cli::cmd_train(&args)? {
                for e in &record.history.epochs {
                    let note = if e.bootstrap_skipped { " (bootstrap skipped)" } else { "" };
                    eprintln!(
                        "seed {} epoch {}: L={:.4} J={:.4} Gamma={:.4} Omega={:.4} w={:.4} dev_error={:.4}{note}",
                        record.seed, e.epoch, e.l, e.j, e.gamma, e.omega, e.w_t, e.dev_error
                    );
                }
                let test = record
                    .test
                    .as_ref()
                    .map(|t| format!(" test_accuracy={} test_macro_f1={}", t.accuracy, t.macro_f1))
                    .unwrap_or_default();
                println!("seed {} best_epoch={} dev_error={}{test}", record.seed, record.best_epoch, record.best_dev_error);
            }
        }
        Command::Evaluate { common, checkpoint, vocab, test, format } => {
            let config = config_of(&common)?;
            let report = cli::cmd_evaluate(&checkpoint, vocab.as_deref(), &test, &config, format_arg(&format)?)?;
            print!("{}", cli::render_eval(&report));
            if let Some(out) = &common.out {
                write(&out.join("eval.json"), cli::eval_json(&report))?;
                write(&out.join("eval.txt"), cli::render_eval(&report))?;
            }
        }
        Command::AnalyzeFilters { common, checkpoint, vocab, corpora, format, k_filters, k_trigrams } => {
            let config = config_of(&common)?;
            let tagged: Vec<(PathBuf, DomainTag)> = corpora.into_iter().map(|p| (p, DomainTag::Target)).collect();
            let report = cli::cmd_analyze_filters(
                &checkpoint,
                vocab.as_deref(),
                &tagged,
                &config,
                format_arg(&format)?,
                k_filters,
                k_trigrams,
            )?;
            let text = report.to_text();
            print!("{text}");
            if let Some(out) = &common.out {
                write(&out.join("filters.txt"), text)?;
                write(&out.join("filters.json"), serde_json::to_string_pretty(&report).expect("serialisable"))?;
            }
        }
        Command::Gradcheck { common, inject_fault } => {
            let seed = common.seed.unwrap_or(config_of(&common)?.seed);
            let lines = cli::gradcheck_report(seed, inject_fault)?;
            let mut text = String::new();
            for l in &lines {
                text.push_str(&format!(
                    "{:<6} max_rel_error={:.3e} {}\n",
                    l.name,
                    l.max_rel_error,
                    if l.passed { "PASS" } else { "FAIL" }
                ));
            }
            print!("{text}");
            if let Some(out) = &common.out {
                write(&out.join("gradcheck.txt"), &text)?;
            }
            if let Some(bad) = lines.iter().find(|l| !l.passed) {
                return Err(DasError::Numerical(format!(
                    "gradient check failed for {} (max relative error {:e})",
                    bad.name, bad.max_rel_error
                )));
            }
        }
        Command::Synth { common, shift } => {
            let mut recipe = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| DasError::Config(format!("cannot read {}: {e}", p.display())))?;
                    cli::parse_synth_recipe(&text)?
                }
                None => SynthRecipe::default(),
            };
            if let Some(seed) = common.seed {
                recipe.seed = seed;
            }
            if let Some(shift) = shift {
                recipe.shift = shift;
            }
            recipe.validate()?;
            for p in cli::cmd_synth(&recipe, out_dir(&common)?)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
