//! Independent reference checks shared by the integration tests.

#![allow(dead_code)]

use milcheck::bag::{InstanceRole, Split};
use milcheck::{Bag, TestId};

use InstanceRole::{Background, Concept, Poison};

const C1: InstanceRole = Concept(1);
const C2: InstanceRole = Concept(2);

fn count(bag: &Bag, role: InstanceRole) -> usize {
    bag.role_count(role).expect("generated bags carry roles")
}

fn in_range(v: usize, lo: usize, hi: usize) -> bool {
    (lo..=hi).contains(&v)
}

/// Checks one bag against the branch structure of its generator and returns
/// a description of the first violation.
pub fn structure_violation(test: TestId, bag: &Bag) -> Option<String> {
    let train = bag.split() == Split::Train;
    let pos = bag.label().is_positive();
    let (bg, poison, c1, c2) = (
        count(bag, Background),
        count(bag, Poison),
        count(bag, C1),
        count(bag, C2),
    );
    if bag
        .roles()
        .unwrap()
        .iter()
        .any(|r| matches!(r, Concept(k) if *k > 2))
    {
        return Some("concept id above 2".into());
    }
    let bg_ok = in_range(bg, 1, 10);
    let ok = match (test, train, pos) {
        (TestId::Standard, true, false) => {
            poison == 1 && c1 + c2 == 0 && in_range(bag.len(), 2, 11)
        }
        (TestId::Standard, false, false) => poison == 0 && c1 + c2 == 0,
        (TestId::Standard, _, true) => {
            poison == usize::from(!train) && c2 == 0 && in_range(c1, 1, 4)
        }
        (TestId::ThresholdPoison, _, false) => poison == usize::from(train) && c1 + c2 == 1,
        (TestId::ThresholdPoison, _, true) => {
            poison == usize::from(!train)
                && c1 == c2
                && in_range(c1, 1, 4)
                && (!train || in_range(bag.len(), 3, 18))
        }
        (TestId::FalseFrequency, _, false) => {
            let (lo, hi) = if train { (1, 2) } else { (35, 40) };
            poison == 0
                && c1.min(c2) == 0
                && in_range(c1.max(c2), lo, hi)
                && (train || in_range(bag.len(), 36, 50))
        }
        (TestId::FalseFrequency, _, true) => {
            poison == 0 && in_range(c1, 1, 2) && in_range(c2, 1, 2)
        }
    };
    (!(ok && bg_ok)).then(|| {
        format!(
            "bag {}: train={train} pos={pos} bg={bg} poison={poison} c1={c1} c2={c2}",
            bag.bag_id()
        )
    })
}

/// O(n^2) pair count as a rational `wins + ties / 2` over `pos * neg`.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> (u64, u64) {
    let mut doubled = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                doubled += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    (doubled, 2 * pairs)
}
