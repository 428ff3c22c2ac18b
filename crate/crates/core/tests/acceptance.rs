//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use milcheck::bag::{InstanceRole, InstanceVector, Label};
use milcheck::harness::{cmd_generate, cmd_run, ModelSpec, RunOptions};
use milcheck::io::WriteOptions;
use milcheck::metrics::{auc, verdict, EvalReport, LabelCounts, LabelMap, ScoreTable};
use milcheck::nn::{check_gradients, Architecture, ModelKind, ModelParams};
use milcheck::{
    derive_stream, generate_dataset, ConceptRule, GeneratorConfig, TestId, VerdictStatus,
};

mod common;

use common::{brute_force_auc, structure_violation};

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, fails: &mut Vec<String>, what: String) {
    if !cond {
        fails.push(what);
    }
}

fn outcome(fails: Vec<String>, summary: String) -> Outcome {
    Outcome {
        pass: fails.is_empty(),
        detail: if fails.is_empty() {
            summary
        } else {
            format!("{summary}; violated: {}", fails.join("; "))
        },
    }
}

fn run(
    test: TestId,
    model: ModelSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> (f64, f64, VerdictStatus, Duration) {
    let start = Instant::now();
    let out =
        cmd_run(&RunOptions::new(test, model, n_train, n_test, seed), None).expect("run completes");
    (
        out.report.train_auc,
        out.report.test_auc,
        out.verdict.status,
        start.elapsed(),
    )
}

/// Oracle certificates on 2,000 + 2,000 bags, seed 42.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut parts = Vec::new();
    for test in TestId::ALL {
        let (tr, te, _, _) = run(test, ModelSpec::OracleMil, 2_000, 2_000, 42);
        parts.push(format!("mil/{test} {tr:.4}/{te:.4}"));
        check(
            tr >= 0.99 && te >= 0.99,
            &mut fails,
            format!("oracle-mil on {test}: train {tr:.4}, test {te:.4} (need >= 0.99)"),
        );
    }
    for test in [TestId::Standard, TestId::ThresholdPoison] {
        let (tr, te, _, _) = run(test, ModelSpec::OraclePoisonCheat, 2_000, 2_000, 42);
        parts.push(format!("poison/{test} {tr:.4}/{te:.4}"));
        check(
            tr >= 0.99 && te <= 0.01,
            &mut fails,
            format!("oracle-poison-cheat on {test}: train {tr:.4}, test {te:.4}"),
        );
    }
    let (tr, te, _, _) = run(
        TestId::FalseFrequency,
        ModelSpec::OracleFrequencyCheat,
        2_000,
        2_000,
        42,
    );
    parts.push(format!("frequency/false-frequency {tr:.4}/{te:.4}"));
    check(
        tr >= 0.7 && te <= 0.01,
        &mut fails,
        format!("oracle-frequency-cheat: train {tr:.4}, test {te:.4}"),
    );
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(60),
        &mut fails,
        format!("runtime {elapsed:?} (need < 1 min)"),
    );
    outcome(
        fails,
        format!("{} in {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

/// Witness on Standard at desk scale.
fn criterion_2() -> Outcome {
    let (tr, te, status, elapsed) = run(
        TestId::Standard,
        ModelSpec::Reference(ModelKind::Witness),
        20_000,
        4_000,
        7,
    );
    let mut fails = Vec::new();
    check(
        status == VerdictStatus::Pass,
        &mut fails,
        format!("verdict {status}"),
    );
    check(
        tr >= 0.95 && te >= 0.95,
        &mut fails,
        format!("train {tr:.4}, test {te:.4} (need >= 0.95)"),
    );
    check(
        elapsed <= Duration::from_secs(15 * 60),
        &mut fails,
        format!("runtime {elapsed:?}"),
    );
    outcome(
        fails,
        format!(
            "witness {tr:.4}/{te:.4} {status} in {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Pooling networks on Standard at desk scale.
fn criterion_3() -> Outcome {
    let mut fails = Vec::new();
    let mut parts = Vec::new();
    for kind in [ModelKind::EmbedPool, ModelKind::AttentionPool] {
        let (tr, te, status, _) = run(
            TestId::Standard,
            ModelSpec::Reference(kind),
            20_000,
            4_000,
            7,
        );
        parts.push(format!("{kind} {tr:.4}/{te:.4} {status}"));
        check(
            status == VerdictStatus::Fail,
            &mut fails,
            format!("{kind} verdict {status}"),
        );
        check(
            tr >= 0.95 && te <= 0.10,
            &mut fails,
            format!("{kind} train {tr:.4}, test {te:.4}"),
        );
    }
    outcome(fails, parts.join(", "))
}

/// ThresholdPoison: attention passes, witness does not.
fn criterion_4() -> Outcome {
    let mut fails = Vec::new();
    let (tr, te, status, _) = run(
        TestId::ThresholdPoison,
        ModelSpec::Reference(ModelKind::AttentionPool),
        20_000,
        4_000,
        7,
    );
    check(
        status == VerdictStatus::Pass,
        &mut fails,
        format!("attention-pool verdict {status}"),
    );
    check(
        te >= 0.90,
        &mut fails,
        format!("attention-pool test AUC {te:.4} (need >= 0.90)"),
    );
    let att = format!("attention-pool {tr:.4}/{te:.4} {status}");
    let (wtr, wte, wstatus, _) = run(
        TestId::ThresholdPoison,
        ModelSpec::Reference(ModelKind::Witness),
        20_000,
        4_000,
        7,
    );
    check(
        wstatus != VerdictStatus::Pass,
        &mut fails,
        format!("witness verdict {wstatus} (need not pass)"),
    );
    outcome(fails, format!("{att}, witness {wtr:.4}/{wte:.4} {wstatus}"))
}

fn auc_brute_force_agreement(fails: &mut Vec<String>) -> usize {
    let mut stream = derive_stream(2718, 0);
    let trials = 1_000;
    for trial in 0..trials {
        let n = 2 + stream.next_uniform_int(0, 198).unwrap() as usize;
        let levels = 1 + stream.next_uniform_int(0, 30).unwrap();
        let mut scores: Vec<f64> = (0..n)
            .map(|_| stream.next_uniform_int(0, levels).unwrap() as f64 * 0.1)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| stream.next_bool()).collect();
        labels[0] = true;
        labels[1] = false;
        if trial % 2 == 1 {
            scores.iter_mut().for_each(|s| *s = (*s * 7.3).sin());
        }
        let table =
            ScoreTable::from_pairs(scores.iter().enumerate().map(|(i, &s)| (i as u64, s))).unwrap();
        let lmap: LabelMap = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (i as u64, Label::from(y)))
            .collect();
        let (num, den) = brute_force_auc(&scores, &labels);
        let got = auc(&table, &lmap).unwrap();
        if got != num as f64 / den as f64 {
            fails.push(format!("AUC trial {trial}: {got} vs {num}/{den}"));
            break;
        }
    }
    trials
}

fn pooling_checks(fails: &mut Vec<String>) -> usize {
    let mut bags = Vec::new();
    for test in TestId::ALL {
        let ds = generate_dataset(&GeneratorConfig::new(test, 40, 20, 99)).unwrap();
        bags.extend(ds.train.into_iter().chain(ds.test));
    }
    let mut stream = derive_stream(1234, 0);
    for kind in ModelKind::ALL {
        let params = ModelParams::init(Architecture::new(kind), 5, 0);
        for bag in &bags {
            let mut order: Vec<usize> = (0..bag.len()).collect();
            stream.shuffle(&mut order);
            let a = params.forward_bag(bag).unwrap();
            let b = params.forward_bag(&bag.permuted(&order)).unwrap();
            if a.to_bits() != b.to_bits() {
                fails.push(format!(
                    "{kind} not permutation invariant on bag {}",
                    bag.bag_id()
                ));
                break;
            }
        }
    }
    let witness = ModelParams::init(Architecture::new(ModelKind::Witness), 6, 0);
    for bag in &bags {
        let x = InstanceVector::new(stream.next_gaussian_vector(0.0, 4.0, 16).unwrap()).unwrap();
        let bigger = bag.with_instance(x, InstanceRole::Background).unwrap();
        if witness.forward_bag(&bigger).unwrap() < witness.forward_bag(bag).unwrap() {
            fails.push(format!("witness decreased on bag {}", bag.bag_id()));
            break;
        }
    }
    bags.len()
}

fn gradient_checks(fails: &mut Vec<String>) -> String {
    let mut bags = Vec::new();
    for test in TestId::ALL {
        let ds = generate_dataset(&GeneratorConfig::new(test, 6, 4, 17)).unwrap();
        bags.extend(ds.train);
    }
    let mut worst_all = Vec::new();
    for kind in ModelKind::ALL {
        let params = ModelParams::init(Architecture::new(kind), 23, 0);
        let mut worst: f64 = 0.0;
        for (i, bag) in bags.iter().enumerate() {
            worst = worst.max(check_gradients(&params, bag, bag.label(), 48, i as u64).unwrap());
        }
        check(
            worst <= 1e-4,
            fails,
            format!("{kind} gradient relative error {worst:e}"),
        );
        worst_all.push(format!("{kind} {worst:.1e}"));
    }
    worst_all.join(" ")
}

fn determinism_checks(fails: &mut Vec<String>) {
    for test in TestId::ALL {
        for seed in [42, 7] {
            let cfg = GeneratorConfig::new(test, 200, 100, seed);
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            cmd_generate(&cfg, a.path(), WriteOptions::default()).unwrap();
            cmd_generate(&cfg, b.path(), WriteOptions::default()).unwrap();
            for f in ["train.jsonl", "test.jsonl"] {
                if fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap() {
                    fails.push(format!("{test} seed {seed} {f} not byte-identical"));
                }
            }
        }
    }
}

fn role_structure_checks(fails: &mut Vec<String>) {
    for test in TestId::ALL {
        let ds = generate_dataset(&GeneratorConfig::new(test, 5_000, 5_000, 4242)).unwrap();
        let rule = ConceptRule::for_test(test);
        for bag in ds.train.iter().chain(&ds.test) {
            let bad = structure_violation(test, bag).or_else(|| {
                (rule.decide_from_roles(bag.roles().unwrap()).unwrap() != bag.label())
                    .then(|| "label".into())
            });
            if let Some(v) = bad {
                fails.push(format!("{test}: {v}"));
                break;
            }
        }
    }
}

fn criterion_5() -> Outcome {
    let mut fails = Vec::new();
    let trials = auc_brute_force_agreement(&mut fails);
    let bags = pooling_checks(&mut fails);
    let grads = gradient_checks(&mut fails);
    determinism_checks(&mut fails);
    role_structure_checks(&mut fails);
    outcome(
        fails,
        format!("{trials} AUC trials, {bags} bags pooled, gradients [{grads}], 6 regenerations, 3x10^4 bags checked"),
    )
}

fn criterion_6() -> Outcome {
    let counts = LabelCounts {
        positive: 1,
        negative: 1,
    };
    let report = |train_auc, test_auc| EvalReport {
        test_id: TestId::Standard,
        train_accuracy: 0.5,
        train_auc,
        test_accuracy: 0.5,
        test_auc,
        train_counts: counts,
        test_counts: counts,
    };
    let mut fails = Vec::new();
    for (tr, te, want) in [
        (1.000, 0.000, VerdictStatus::Fail),
        (0.998, 1.000, VerdictStatus::Pass),
        (0.495, 0.488, VerdictStatus::Degenerate),
    ] {
        let got = verdict(&report(tr, te), 0.1).status;
        check(
            got == want,
            &mut fails,
            format!("({tr}, {te}) gave {got}, want {want}"),
        );
    }
    outcome(fails, "three fixtures".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        (1, "oracle certificates", criterion_1),
        (2, "witness passes standard", criterion_2),
        (3, "pooling networks fail standard", criterion_3),
        (
            4,
            "threshold-poison: attention passes, witness does not",
            criterion_4,
        ),
        (5, "property suites", criterion_5),
        (6, "verdict fixtures", criterion_6),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|x| name.contains(x.as_str()) || x == &id.to_string())
        {
            continue;
        }
        let o = f();
        println!(
            "criterion {id} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failing");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
