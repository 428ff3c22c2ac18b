//! End-to-end commands: generate, run, verdict and suite.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Split};
use crate::concept::ConceptRule;
use crate::error::{Error, Result};
use crate::io::{self, DatasetDir, RunManifest, WriteOptions};
use crate::metrics::{
    labels_of, verdict, EvalReport, LabelMap, ScoreTable, Verdict, VerdictStatus,
};
use crate::milgen::{generate_dataset, Dataset, GeneratorConfig, TestId};
use crate::nn::{score_bags, train, ModelKind, TrainConfig};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const SCORES_TRAIN: &str = "scores_train.csv";
pub const SCORES_TEST: &str = "scores_test.csv";

/// A trainable reference network or one of the analytic oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Reference(ModelKind),
    /// Graded score of the true concept rule.
    OracleMil,
    /// Scores bags by the absence of poison instances.
    OraclePoisonCheat,
    /// Scores bags by their total concept count.
    OracleFrequencyCheat,
}

impl ModelSpec {
    pub const ORACLES: [ModelSpec; 3] = [
        ModelSpec::OracleMil,
        ModelSpec::OraclePoisonCheat,
        ModelSpec::OracleFrequencyCheat,
    ];

    pub fn is_oracle(self) -> bool {
        !matches!(self, ModelSpec::Reference(_))
    }

    fn names() -> String {
        ModelKind::ALL
            .iter()
            .map(|k| k.as_str().to_string())
            .chain(Self::ORACLES.iter().map(|o| o.to_string()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Reference(k) => f.write_str(k.as_str()),
            ModelSpec::OracleMil => f.write_str("oracle-mil"),
            ModelSpec::OraclePoisonCheat => f.write_str("oracle-poison-cheat"),
            ModelSpec::OracleFrequencyCheat => f.write_str("oracle-frequency-cheat"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(o) = Self::ORACLES.into_iter().find(|o| o.to_string() == s) {
            return Ok(o);
        }
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .map(ModelSpec::Reference)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown model `{s}`; valid models: {}",
                    Self::names()
                ))
            })
    }
}

/// Train and test scores for one dataset.
#[derive(Debug, Clone)]
pub struct Scored {
    pub train: ScoreTable,
    pub test: ScoreTable,
    /// Per-epoch training loss of reference models.
    pub epoch_losses: Vec<f64>,
}

fn oracle_table(rule: &ConceptRule, bags: &[Bag], spec: ModelSpec) -> Result<ScoreTable> {
    let scores = bags
        .par_iter()
        .map(|b| {
            let s = match spec {
                ModelSpec::OracleMil => rule.oracle_mil_soft_score(b)?,
                ModelSpec::OraclePoisonCheat => rule.oracle_poison_cheat_score(b)?,
                ModelSpec::OracleFrequencyCheat => rule.oracle_frequency_cheat_score(b)?,
                ModelSpec::Reference(_) => unreachable!("reference models are trained"),
            };
            Ok((b.bag_id(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::from_pairs(scores)
}

/// Fits (for reference models) and scores both splits.
pub fn score_dataset(
    dataset: &Dataset,
    spec: ModelSpec,
    train_cfg: &TrainConfig,
) -> Result<Scored> {
    match spec {
        ModelSpec::Reference(kind) => {
            let model = train(kind, train_cfg, &dataset.train)?;
            Ok(Scored {
                train: score_bags(&model.params, &dataset.train)?,
                test: score_bags(&model.params, &dataset.test)?,
                epoch_losses: model.epoch_losses,
            })
        }
        oracle => {
            let rule = ConceptRule::for_config(&dataset.config);
            Ok(Scored {
                train: oracle_table(&rule, &dataset.train, oracle)?,
                test: oracle_table(&rule, &dataset.test, oracle)?,
                epoch_losses: Vec::new(),
            })
        }
    }
}

/// Fails on the first id scored but not labelled; ids labelled but not
/// scored are caught when metrics join the two.
fn check_no_extra_scores(scores: &ScoreTable, labels: &LabelMap) -> Result<()> {
    match scores.iter().find(|(id, _)| !labels.contains_key(id)) {
        Some((bag_id, _)) => Err(Error::Integrity {
            bag_id,
            reason: "score for a bag not in the dataset".into(),
        }),
        None => Ok(()),
    }
}

pub fn evaluate(
    test_id: TestId,
    scores: &Scored,
    train_labels: &LabelMap,
    test_labels: &LabelMap,
    margin: f64,
) -> Result<(EvalReport, Verdict)> {
    if !(0.0..=0.5).contains(&margin) {
        return Err(Error::validation(
            "margin",
            format!("must lie in [0, 0.5], got {margin}"),
        ));
    }
    check_no_extra_scores(&scores.train, train_labels)?;
    check_no_extra_scores(&scores.test, test_labels)?;
    let report = EvalReport::evaluate(
        test_id,
        &scores.train,
        train_labels,
        &scores.test,
        test_labels,
    )?;
    let v = verdict(&report, margin);
    Ok((report, v))
}

/// The `report.json` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub test_id: TestId,
    pub model: String,
    pub train_acc: f64,
    pub train_auc: f64,
    pub test_acc: f64,
    pub test_auc: f64,
    pub verdict: VerdictStatus,
    pub margin: f64,
}

impl ReportRecord {
    pub fn new(model: &str, report: &EvalReport, v: &Verdict) -> Self {
        Self {
            test_id: report.test_id,
            model: model.to_string(),
            train_acc: report.train_accuracy,
            train_auc: report.train_auc,
            test_acc: report.test_accuracy,
            test_auc: report.test_auc,
            verdict: v.status,
            margin: v.margin,
        }
    }
}

/// Fixed-width table with one row per record.
pub fn render_table(rows: &[ReportRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<17} {:<24} {:>10} {:>10} {:>10} {:>10}  verdict",
        "test", "model", "train acc", "train auc", "test acc", "test auc"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<17} {:<24} {:>10.3} {:>10.3} {:>10.3} {:>10.3}  {}",
            r.test_id.as_str(),
            r.model,
            r.train_acc,
            r.train_auc,
            r.test_acc,
            r.test_auc,
            r.verdict
        );
    }
    out
}

/// Writes `report.json` and `report.txt` into `out`.
pub fn write_reports(out: &Path, records: &[ReportRecord]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let json = if let [single] = records {
        serde_json::to_string_pretty(single)?
    } else {
        serde_json::to_string_pretty(records)?
    };
    let path = out.join(REPORT_JSON);
    fs::write(&path, json + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let path = out.join(REPORT_TEXT);
    fs::write(&path, render_table(records))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn cmd_generate(cfg: &GeneratorConfig, out: &Path, opts: WriteOptions) -> Result<RunManifest> {
    let dataset = generate_dataset(cfg)?;
    io::write_dataset(&dataset, out, opts)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub test_id: TestId,
    pub model: ModelSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub margin: f64,
    pub train: TrainConfig,
}

impl RunOptions {
    /// Desk-scale defaults: the training seed follows the data seed.
    pub fn new(
        test_id: TestId,
        model: ModelSpec,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Self {
        Self {
            test_id,
            model,
            n_train,
            n_test,
            seed,
            margin: crate::metrics::DEFAULT_MARGIN,
            train: TrainConfig::with_seed(seed),
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig::new(self.test_id, self.n_train, self.n_test, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub verdict: Verdict,
    pub record: ReportRecord,
    pub scores: Scored,
}

/// Generate, fit, score and judge in one process. With `out`, also writes the
/// dataset, scores, manifest and reports there.
pub fn cmd_run(opts: &RunOptions, out: Option<&Path>) -> Result<RunOutcome> {
    let dataset = generate_dataset(&opts.generator())?;
    let scores = score_dataset(&dataset, opts.model, &opts.train)?;
    let (report, v) = evaluate(
        opts.test_id,
        &scores,
        &labels_of(&dataset.train),
        &labels_of(&dataset.test),
        opts.margin,
    )?;
    let record = ReportRecord::new(&opts.model.to_string(), &report, &v);
    if let Some(out) = out {
        let mut manifest = io::write_dataset(&dataset, out, WriteOptions::default())?;
        manifest.model = Some(opts.model.to_string());
        manifest.train = (!opts.model.is_oracle()).then(|| opts.train.clone());
        manifest.save(&DatasetDir::new(out).manifest())?;
        io::write_scores(&out.join(SCORES_TRAIN), &scores.train)?;
        io::write_scores(&out.join(SCORES_TEST), &scores.test)?;
        write_reports(out, std::slice::from_ref(&record))?;
    }
    Ok(RunOutcome {
        report,
        verdict: v,
        record,
        scores,
    })
}

/// Judges externally produced scores against a generated dataset. The test
/// id comes from the dataset's manifest unless `test_id` overrides it.
pub fn cmd_verdict(
    dataset_dir: &Path,
    train_scores: &Path,
    test_scores: &Path,
    test_id: Option<TestId>,
    margin: f64,
    tag: &str,
) -> Result<(EvalReport, Verdict, ReportRecord)> {
    let layout = DatasetDir::new(dataset_dir);
    let test_id = match test_id {
        Some(t) => t,
        None => RunManifest::load(&layout.manifest())?.generator.test_id,
    };
    let train_labels = labels_of(&io::read_bags(&layout.train(), Split::Train)?);
    let test_labels = labels_of(&io::read_bags(&layout.test(), Split::Test)?);
    let scores = Scored {
        train: io::read_scores(train_scores)?,
        test: io::read_scores(test_scores)?,
        epoch_losses: Vec::new(),
    };
    let (report, v) = evaluate(test_id, &scores, &train_labels, &test_labels, margin)?;
    let record = ReportRecord::new(tag, &report, &v);
    Ok((report, v, record))
}

/// What a suite evaluates.
#[derive(Debug, Clone)]
pub enum SuiteSource {
    /// Train or apply an in-process model on freshly generated data.
    Model {
        spec: ModelSpec,
        n_train: usize,
        n_test: usize,
        seed: u64,
        train: TrainConfig,
    },
    /// A directory with one sub-directory per test id, each holding a
    /// dataset and `scores_train.csv` / `scores_test.csv`.
    Bundle(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SuiteSummary {
    pub rows: Vec<ReportRecord>,
}

impl SuiteSummary {
    pub fn any_fail(&self) -> bool {
        self.rows.iter().any(|r| r.verdict == VerdictStatus::Fail)
    }

    pub fn status(&self, test_id: TestId) -> Option<VerdictStatus> {
        self.rows
            .iter()
            .find(|r| r.test_id == test_id)
            .map(|r| r.verdict)
    }

    /// One row per test: a check mark for Pass, a cross for Fail and a
    /// question mark for Degenerate.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<17} {:<24} {:>10} {:>10}  result",
            "test", "model", "train auc", "test auc"
        );
        for r in &self.rows {
            let mark = match r.verdict {
                VerdictStatus::Pass => "✓",
                VerdictStatus::Fail => "✗",
                VerdictStatus::Degenerate => "?",
            };
            let _ = writeln!(
                out,
                "{:<17} {:<24} {:>10.3} {:>10.3}  {mark} {}",
                r.test_id.as_str(),
                r.model,
                r.train_auc,
                r.test_auc,
                r.verdict
            );
        }
        out
    }
}

pub fn cmd_suite(source: &SuiteSource, margin: f64) -> Result<SuiteSummary> {
    let mut rows = Vec::with_capacity(TestId::ALL.len());
    for test_id in TestId::ALL {
        let record = match source {
            SuiteSource::Model {
                spec,
                n_train,
                n_test,
                seed,
                train,
            } => {
                let opts = RunOptions {
                    margin,
                    train: train.clone(),
                    ..RunOptions::new(test_id, *spec, *n_train, *n_test, *seed)
                };
                cmd_run(&opts, None)?.record
            }
            SuiteSource::Bundle(root) => {
                let dir = root.join(test_id.as_str());
                let tag = root.file_name().map_or_else(
                    || "external".to_string(),
                    |n| n.to_string_lossy().into_owned(),
                );
                cmd_verdict(
                    &dir,
                    &dir.join(SCORES_TRAIN),
                    &dir.join(SCORES_TEST),
                    Some(test_id),
                    margin,
                    &tag,
                )?
                .2
            }
        };
        rows.push(record);
    }
    Ok(SuiteSummary { rows })
}
