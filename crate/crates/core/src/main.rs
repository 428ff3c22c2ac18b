use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use milcheck::harness::{self, RunOptions, SuiteSource};
use milcheck::io::WriteOptions;
use milcheck::metrics::{VerdictStatus, DEFAULT_MARGIN};
use milcheck::milgen::{
    GeneratorConfig, TestId, DESK_TEST_BAGS, DESK_TRAIN_BAGS, LARGE_TEST_BAGS, LARGE_TRAIN_BAGS,
};
use milcheck::{Error, ModelSpec, TrainConfig};

/// Exit status when every verdict is Pass or Degenerate.
const EXIT_OK: u8 = 0;
/// Exit status when at least one verdict is Fail.
const EXIT_FAIL: u8 = 1;
/// Exit status for usage, input and I/O errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "milcheck",
    version,
    about = "Algorithmic unit tests for multiple-instance learning models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.jsonl, test.jsonl and manifest.json for one test.
    Generate {
        #[arg(long)]
        test: String,
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        out: PathBuf,
        /// Strip labels from both splits.
        #[arg(long)]
        blind: bool,
        /// Include ground-truth instance roles (debugging only).
        #[arg(long)]
        emit_roles: bool,
    },
    /// Generate, train or apply a model, score and judge.
    Run {
        #[arg(long)]
        test: String,
        #[arg(long)]
        model: String,
        #[command(flatten)]
        scale: Scale,
        #[command(flatten)]
        judge: Judge,
    },
    /// Judge external score files against a generated dataset.
    Verdict {
        dataset: PathBuf,
        train_scores: PathBuf,
        test_scores: PathBuf,
        /// Override the test id recorded in the dataset manifest.
        #[arg(long)]
        test: Option<String>,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all three tests for a model or a directory of score bundles.
    Suite {
        #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
        model: Option<String>,
        /// Directory with standard/, threshold-poison/ and false-frequency/
        /// sub-directories, each holding a dataset and score CSVs.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        scale: Scale,
        #[command(flatten)]
        judge: Judge,
    },
}

#[derive(Args)]
struct Scale {
    #[arg(long, conflicts_with = "paper_scale")]
    train_bags: Option<usize>,
    #[arg(long, conflicts_with = "paper_scale")]
    test_bags: Option<usize>,
    /// 100,000 training and 10,000 test bags.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl Scale {
    fn bags(&self) -> (usize, usize) {
        if self.paper_scale {
            (LARGE_TRAIN_BAGS, LARGE_TEST_BAGS)
        } else {
            (
                self.train_bags.unwrap_or(DESK_TRAIN_BAGS),
                self.test_bags.unwrap_or(DESK_TEST_BAGS),
            )
        }
    }
}

#[derive(Args)]
struct Judge {
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Judge {
    fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::with_seed(seed);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

fn exit_for(statuses: impl IntoIterator<Item = VerdictStatus>) -> u8 {
    if statuses.into_iter().any(|s| s == VerdictStatus::Fail) {
        EXIT_FAIL
    } else {
        EXIT_OK
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Generate {
            test,
            scale,
            out,
            blind,
            emit_roles,
        } => {
            let (n_train, n_test) = scale.bags();
            let cfg = GeneratorConfig::new(test.parse()?, n_train, n_test, scale.seed);
            let manifest = harness::cmd_generate(&cfg, &out, WriteOptions { blind, emit_roles })?;
            println!(
                "wrote {} ({} + {} bags, digest {})",
                out.display(),
                n_train,
                n_test,
                manifest.digest
            );
            Ok(EXIT_OK)
        }
        Command::Run {
            test,
            model,
            scale,
            judge,
        } => {
            let (n_train, n_test) = scale.bags();
            let opts = RunOptions {
                margin: judge.margin,
                train: judge.train_config(scale.seed),
                ..RunOptions::new(test.parse()?, model.parse()?, n_train, n_test, scale.seed)
            };
            let outcome = harness::cmd_run(&opts, judge.out.as_deref())?;
            print!(
                "{}",
                harness::render_table(std::slice::from_ref(&outcome.record))
            );
            Ok(exit_for([outcome.verdict.status]))
        }
        Command::Verdict {
            dataset,
            train_scores,
            test_scores,
            test,
            margin,
            out,
        } => {
            let test_id = test.map(|t| t.parse::<TestId>()).transpose()?;
            let (_, v, record) = harness::cmd_verdict(
                &dataset,
                &train_scores,
                &test_scores,
                test_id,
                margin,
                "external",
            )?;
            if let Some(out) = out {
                harness::write_reports(&out, std::slice::from_ref(&record))?;
            }
            print!("{}", harness::render_table(std::slice::from_ref(&record)));
            Ok(exit_for([v.status]))
        }
        Command::Suite {
            model,
            scores,
            scale,
            judge,
        } => {
            let source = match (model, scores) {
                (_, Some(dir)) => SuiteSource::Bundle(dir),
                (Some(m), None) => {
                    let (n_train, n_test) = scale.bags();
                    SuiteSource::Model {
                        spec: m.parse::<ModelSpec>()?,
                        n_train,
                        n_test,
                        seed: scale.seed,
                        train: judge.train_config(scale.seed),
                    }
                }
                (None, None) => return Err(Error::Usage("suite needs --model or --scores".into())),
            };
            let summary = harness::cmd_suite(&source, judge.margin)?;
            if let Some(out) = &judge.out {
                harness::write_reports(out, &summary.rows)?;
            }
            print!("{}", summary.render());
            Ok(exit_for(summary.rows.iter().map(|r| r.verdict)))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
