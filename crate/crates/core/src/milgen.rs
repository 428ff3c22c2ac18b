//! Synthetic generators for the three MIL unit tests.
//!
//! * `Standard`: presence MIL with one concept. A poison instance sits in
//!   negative training bags and moves to positive test bags.
//! * `ThresholdPoison`: two concepts that must co-occur, with the same poison
//!   swap between splits.
//! * `FalseFrequency`: two concepts that must co-occur; negative test bags
//!   repeat a single concept 35-40 times to punish frequency counting.
//!
//! Bag `i` of the training split is drawn from `derive_stream(root_seed, i)`
//! and test bag `j` from `derive_stream(root_seed, n_train + j)`. The first
//! draw of each stream is the label, the rest follow the branch structure of
//! the generating procedure in order.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, InstanceRole, InstanceVector, Label, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, SeedStream};

pub const DEFAULT_DIM: usize = 16;
pub const DESK_TRAIN_BAGS: usize = 20_000;
pub const DESK_TEST_BAGS: usize = 4_000;
pub const LARGE_TRAIN_BAGS: usize = 100_000;
pub const LARGE_TEST_BAGS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestId {
    Standard,
    ThresholdPoison,
    FalseFrequency,
}

impl TestId {
    pub const ALL: [TestId; 3] = [
        TestId::Standard,
        TestId::ThresholdPoison,
        TestId::FalseFrequency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestId::Standard => "standard",
            TestId::ThresholdPoison => "threshold-poison",
            TestId::FalseFrequency => "false-frequency",
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown test `{s}`; valid tests: standard, threshold-poison, false-frequency"
                ))
            })
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.lo as usize..=self.hi as usize).contains(&v)
    }

    fn sample(&self, stream: &mut SeedStream) -> Result<usize> {
        Ok(stream.next_uniform_int(self.lo.into(), self.hi.into())? as usize)
    }
}

/// Isotropic Gaussian `N(mean * 1, variance * I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }
}

/// A concept-bearing distribution and the concept it is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptSource {
    pub concept_id: u32,
    pub dist: Gaussian,
}

/// Per-role instance distributions.
///
/// `concepts` always has two entries. Every coin flip in the generators picks
/// entry 0 on heads and entry 1 on tails. In `Standard` both entries belong to
/// concept 1; in the threshold tests they are concepts 1 and 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub background: Gaussian,
    pub poison: Gaussian,
    pub concepts: [ConceptSource; 2],
}

const BACKGROUND: Gaussian = Gaussian::new(0.0, 1.0);
const POISON: Gaussian = Gaussian::new(-10.0, 0.1);

impl DistributionTable {
    pub fn default_for(test_id: TestId) -> Self {
        let concepts = match test_id {
            TestId::Standard => [
                ConceptSource {
                    concept_id: 1,
                    dist: Gaussian::new(0.0, 3.0),
                },
                ConceptSource {
                    concept_id: 1,
                    dist: Gaussian::new(1.0, 1.0),
                },
            ],
            TestId::ThresholdPoison => [
                ConceptSource {
                    concept_id: 1,
                    dist: Gaussian::new(2.0, 0.1),
                },
                ConceptSource {
                    concept_id: 2,
                    dist: Gaussian::new(3.0, 0.1),
                },
            ],
            TestId::FalseFrequency => [
                ConceptSource {
                    concept_id: 1,
                    dist: Gaussian::new(-2.0, 0.1),
                },
                ConceptSource {
                    concept_id: 2,
                    dist: Gaussian::new(2.0, 0.1),
                },
            ],
        };
        Self {
            background: BACKGROUND,
            poison: POISON,
            concepts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub test_id: TestId,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub positive_fraction: f64,
    pub root_seed: u64,
    /// Concept repetitions in positive bags of the poison tests.
    pub k_range: IntRange,
    /// Background instances per bag.
    pub b_range: IntRange,
    /// Single-concept repetitions in negative test bags of `FalseFrequency`.
    pub neg_test_t_range: IntRange,
    /// Per-concept repetitions elsewhere in `FalseFrequency`.
    pub t_range: IntRange,
    pub distributions: DistributionTable,
}

impl GeneratorConfig {
    pub fn new(test_id: TestId, n_train: usize, n_test: usize, root_seed: u64) -> Self {
        Self {
            test_id,
            dim: DEFAULT_DIM,
            n_train,
            n_test,
            positive_fraction: 0.5,
            root_seed,
            k_range: IntRange::new(1, 4),
            b_range: IntRange::new(1, 10),
            neg_test_t_range: IntRange::new(35, 40),
            t_range: IntRange::new(1, 2),
            distributions: DistributionTable::default_for(test_id),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        if self.n_train < 2 {
            return Err(Error::validation("n_train", "must be at least 2"));
        }
        if self.n_test < 2 {
            return Err(Error::validation("n_test", "must be at least 2"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::validation(
                "positive_fraction",
                format!("must lie in (0, 1), got {}", self.positive_fraction),
            ));
        }
        for (name, r) in [
            ("k_range", self.k_range),
            ("b_range", self.b_range),
            ("neg_test_t_range", self.neg_test_t_range),
            ("t_range", self.t_range),
        ] {
            if r.lo > r.hi {
                return Err(Error::validation(
                    name,
                    format!("[{}, {}] is empty", r.lo, r.hi),
                ));
            }
            if r.lo == 0 {
                return Err(Error::validation(name, "lower bound must be at least 1"));
            }
        }
        let d = &self.distributions;
        let mut gaussians = vec![("distributions.background", d.background)];
        gaussians.push(("distributions.poison", d.poison));
        gaussians.extend(
            d.concepts
                .iter()
                .map(|c| ("distributions.concepts", c.dist)),
        );
        for (name, g) in gaussians {
            if !(g.variance > 0.0 && g.variance.is_finite()) || !g.mean.is_finite() {
                return Err(Error::validation(
                    name,
                    "mean must be finite and variance positive",
                ));
            }
        }
        if d.concepts.iter().any(|c| c.concept_id == 0) {
            return Err(Error::validation(
                "distributions.concepts",
                "concept ids start at 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Bag] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

struct BagBuilder<'a> {
    cfg: &'a GeneratorConfig,
    instances: Vec<InstanceVector>,
    roles: Vec<InstanceRole>,
}

impl<'a> BagBuilder<'a> {
    fn new(cfg: &'a GeneratorConfig) -> Self {
        Self {
            cfg,
            instances: Vec::new(),
            roles: Vec::new(),
        }
    }

    fn add(&mut self, stream: &mut SeedStream, dist: Gaussian, role: InstanceRole) -> Result<()> {
        let values = stream.next_gaussian_vector(dist.mean, dist.variance, self.cfg.dim)?;
        self.instances.push(InstanceVector::new(values)?);
        self.roles.push(role);
        Ok(())
    }

    fn add_poison(&mut self, stream: &mut SeedStream) -> Result<()> {
        self.add(stream, self.cfg.distributions.poison, InstanceRole::Poison)
    }

    fn add_concept(&mut self, stream: &mut SeedStream, source: ConceptSource) -> Result<()> {
        self.add(
            stream,
            source.dist,
            InstanceRole::Concept(source.concept_id),
        )
    }

    fn add_background(&mut self, stream: &mut SeedStream) -> Result<()> {
        let b = self.cfg.b_range.sample(stream)?;
        for _ in 0..b {
            self.add(
                stream,
                self.cfg.distributions.background,
                InstanceRole::Background,
            )?;
        }
        Ok(())
    }

    fn finish(self, stream: &SeedStream, training: bool, positive: bool) -> Result<Bag> {
        let split = if training { Split::Train } else { Split::Test };
        Bag::new(
            stream.stream_id(),
            Label::from(positive),
            split,
            self.instances,
            Some(self.roles),
        )
    }
}

fn check_test(cfg: &GeneratorConfig, expected: TestId) -> Result<()> {
    if cfg.test_id != expected {
        return Err(Error::Usage(format!(
            "{expected} generator called with a {} configuration",
            cfg.test_id
        )));
    }
    Ok(())
}

fn coin_pick(stream: &mut SeedStream, sources: &[ConceptSource; 2]) -> ConceptSource {
    if stream.next_bool() {
        sources[0]
    } else {
        sources[1]
    }
}

/// Single-concept presence test. The bag id is the stream id.
pub fn generate_standard_bag(
    cfg: &GeneratorConfig,
    training: bool,
    positive: bool,
    stream: &mut SeedStream,
) -> Result<Bag> {
    check_test(cfg, TestId::Standard)?;
    let mut bag = BagBuilder::new(cfg);
    if positive {
        if !training {
            bag.add_poison(stream)?;
        }
        let k = cfg.k_range.sample(stream)?;
        for _ in 0..k {
            let source = coin_pick(stream, &cfg.distributions.concepts);
            bag.add_concept(stream, source)?;
        }
    } else if training {
        bag.add_poison(stream)?;
    }
    bag.add_background(stream)?;
    bag.finish(stream, training, positive)
}

/// Two-concept threshold test with a poison instance.
pub fn generate_threshold_poison_bag(
    cfg: &GeneratorConfig,
    training: bool,
    positive: bool,
    stream: &mut SeedStream,
) -> Result<Bag> {
    check_test(cfg, TestId::ThresholdPoison)?;
    let [first, second] = cfg.distributions.concepts;
    let mut bag = BagBuilder::new(cfg);
    if positive {
        if !training {
            bag.add_poison(stream)?;
        }
        let k = cfg.k_range.sample(stream)?;
        for _ in 0..k {
            bag.add_concept(stream, first)?;
            bag.add_concept(stream, second)?;
        }
    } else {
        if training {
            bag.add_poison(stream)?;
        }
        let source = coin_pick(stream, &cfg.distributions.concepts);
        bag.add_concept(stream, source)?;
    }
    bag.add_background(stream)?;
    bag.finish(stream, training, positive)
}

/// Two-concept threshold test where negative test bags flood one concept.
pub fn generate_false_frequency_bag(
    cfg: &GeneratorConfig,
    training: bool,
    positive: bool,
    stream: &mut SeedStream,
) -> Result<Bag> {
    check_test(cfg, TestId::FalseFrequency)?;
    let [first, second] = cfg.distributions.concepts;
    let mut bag = BagBuilder::new(cfg);
    if positive {
        for source in [first, second] {
            let t = cfg.t_range.sample(stream)?;
            for _ in 0..t {
                bag.add_concept(stream, source)?;
            }
        }
    } else {
        let range = if training {
            cfg.t_range
        } else {
            cfg.neg_test_t_range
        };
        let t = range.sample(stream)?;
        let source = coin_pick(stream, &cfg.distributions.concepts);
        for _ in 0..t {
            bag.add_concept(stream, source)?;
        }
    }
    bag.add_background(stream)?;
    bag.finish(stream, training, positive)
}

pub fn generate_bag(
    cfg: &GeneratorConfig,
    training: bool,
    positive: bool,
    stream: &mut SeedStream,
) -> Result<Bag> {
    match cfg.test_id {
        TestId::Standard => generate_standard_bag(cfg, training, positive, stream),
        TestId::ThresholdPoison => generate_threshold_poison_bag(cfg, training, positive, stream),
        TestId::FalseFrequency => generate_false_frequency_bag(cfg, training, positive, stream),
    }
}

/// Draws the label and contents of bag `bag_id` from its own stream.
pub fn generate_bag_by_id(cfg: &GeneratorConfig, bag_id: u64) -> Result<Bag> {
    let training = (bag_id as usize) < cfg.n_train;
    let mut stream = derive_stream(cfg.root_seed, bag_id);
    let positive = stream.next_bernoulli(cfg.positive_fraction);
    generate_bag(cfg, training, positive, &mut stream)
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n_train = cfg.n_train as u64;
    let total = n_train + cfg.n_test as u64;
    let train = (0..n_train)
        .into_par_iter()
        .map(|id| generate_bag_by_id(cfg, id))
        .collect::<Result<Vec<_>>>()?;
    let test = (n_train..total)
        .into_par_iter()
        .map(|id| generate_bag_by_id(cfg, id))
        .collect::<Result<Vec<_>>>()?;
    for (field, bags) in [("n_train", &train), ("n_test", &test)] {
        let positives = bags.iter().filter(|b| b.label().is_positive()).count();
        if positives == 0 || positives == bags.len() {
            return Err(Error::validation(
                field,
                "split drew only one label; use more bags or another seed",
            ));
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        train,
        test,
    })
}
