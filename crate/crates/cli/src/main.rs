use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codemix::heads::HeadKind;
use codemix::pipeline::{self, Overrides, PipelineConfig, PipelineError, EXIT_USAGE};

/// Offensive-comment detection for code-mixed Tanglish/Manglish.
#[derive(Parser)]
#[command(name = "codemix", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML pipeline config (dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the train/test splits into cleaned TSV files.
    Prep {
        /// Lemma lexicon (inflected TAB lemma).
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Embed the cleaned splits into embedding caches.
    Embed,
    /// Train a classifier head.
    Train {
        #[arg(long)]
        head: Option<HeadKind>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Score predictions against gold labels and write report JSON.
    Evaluate {
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write id TAB label TAB score rows for the test split or a raw file.
    Predict {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print report files as a markdown table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Print the resolved config and its digest.
    Config,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.global.config {
        Some(path) => PipelineConfig::from_path(path)?,
        None => PipelineConfig::default(),
    };
    let mut overrides = Overrides { seed: cli.global.seed, out_dir: cli.global.out_dir, ..Default::default() };
    match &cli.command {
        Command::Prep { lexicon } => overrides.lexicon = lexicon.clone(),
        Command::Train { head, c, epochs, lr, folds } => {
            overrides = Overrides { head: *head, c: *c, epochs: *epochs, learning_rate: *lr, folds: *folds, ..overrides };
        }
        _ => {}
    }
    config.apply(&overrides);

    match cli.command {
        Command::Prep { .. } => {
            for (path, summary) in pipeline::cmd_prep(&config)? {
                println!("{}\t{}", path.display(), summary.to_json_line());
            }
        }
        Command::Embed => {
            for path in pipeline::cmd_embed(&config)? {
                println!("{}", path.display());
            }
        }
        Command::Train { .. } => {
            let head = pipeline::cmd_train(&config)?;
            if let Some(f1) = head.train_report.mean_fold_f1() {
                println!("mean fold weighted F1: {f1:.4}");
            }
            if let Some(f1) = head.train_report.validation_weighted_f1 {
                println!("validation weighted F1: {f1:.4}");
            }
            println!("{}", config.out_path(pipeline::MODEL_FILE).display());
        }
        Command::Evaluate { gold, pred, out } => {
            let report = pipeline::cmd_evaluate(&config, gold.as_deref(), pred.as_deref(), out.as_deref())?;
            println!("{}", eval_table(&report));
        }
        Command::Predict { input, out } => {
            println!("{}", pipeline::cmd_predict(&config, input.as_deref(), out.as_deref())?.display());
        }
        Command::Report { reports } => print!("{}", pipeline::cmd_report(&reports)?),
        Command::Config => {
            print!("{}", config.to_toml());
            println!("# digest {}", config.digest());
        }
    }
    Ok(())
}

fn eval_table(report: &codemix::ReportDocument) -> String {
    format!("{}\n{}", codemix::eval::TABLE_HEADER, report.table_row())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE as u8) } else { ExitCode::SUCCESS };
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
