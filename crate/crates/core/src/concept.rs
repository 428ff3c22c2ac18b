//! Concept assignment, threshold decisions and the analytic oracle scorers.
//!
//! A [`ConceptRule`] bundles the concept map `h`, which assigns each instance
//! to a concept or to the null class, with the conjunctive threshold decision
//! `g`: a bag is positive iff every concept `k` occurs at least `t_k` times.
//! Presence MIL is the special case `t_1 = 1`.
//!
//! `h` is the arg-max of isotropic Gaussian log-densities over the declared
//! regions. Exact ties go to the null class, then to the lowest concept id.

use serde::{Deserialize, Serialize};

use crate::bag::{Bag, InstanceRole, Label};
use crate::error::{Error, Result};
use crate::milgen::{Gaussian, GeneratorConfig, TestId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptRegion {
    pub mean: f64,
    pub variance: f64,
    pub concept_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRule {
    dim: usize,
    regions: Vec<ConceptRegion>,
    background: Vec<Gaussian>,
    poison: Option<Gaussian>,
    thresholds: Vec<u32>,
}

fn log_density(x: &[f64], mean: f64, variance: f64) -> f64 {
    let sq: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let d = x.len() as f64;
    -0.5 * d * (std::f64::consts::TAU * variance).ln() - sq / (2.0 * variance)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ConceptRule {
    /// `thresholds[k - 1]` is the threshold for concept `k`. Every region's
    /// concept id must lie in `1..=thresholds.len()`. The poison region, when
    /// present, belongs to the null class.
    pub fn new(
        dim: usize,
        regions: Vec<ConceptRegion>,
        background: Vec<Gaussian>,
        poison: Option<Gaussian>,
        thresholds: Vec<u32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        let k = thresholds.len() as u32;
        for r in &regions {
            if r.concept_id == 0 || r.concept_id > k {
                return Err(Error::validation(
                    "regions",
                    format!("concept id {} outside 1..={k}", r.concept_id),
                ));
            }
        }
        let variances = regions
            .iter()
            .map(|r| r.variance)
            .chain(background.iter().map(|g| g.variance))
            .chain(poison.iter().map(|g| g.variance));
        for v in variances {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    "variance",
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let mut regions = regions;
        regions.sort_by_key(|r| r.concept_id);
        Ok(Self {
            dim,
            regions,
            background,
            poison,
            thresholds,
        })
    }

    /// The rule the generator for `cfg` was built to satisfy.
    pub fn for_config(cfg: &GeneratorConfig) -> Self {
        let dists = &cfg.distributions;
        let regions = dists
            .concepts
            .iter()
            .map(|c| ConceptRegion {
                mean: c.dist.mean,
                variance: c.dist.variance,
                concept_id: c.concept_id,
            })
            .collect();
        let (poison, thresholds) = match cfg.test_id {
            TestId::Standard => (Some(dists.poison), vec![1]),
            TestId::ThresholdPoison => (Some(dists.poison), vec![1, 1]),
            TestId::FalseFrequency => (None, vec![1, 1]),
        };
        Self::new(cfg.dim, regions, vec![dists.background], poison, thresholds)
            .expect("generator configuration yields a valid rule")
    }

    pub fn for_test(test_id: TestId) -> Self {
        Self::for_config(&GeneratorConfig::new(test_id, 2, 2, 0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of concepts `K`.
    pub fn concept_count(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self) -> &[u32] {
        &self.thresholds
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "instance has {} coordinates, rule expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn null_log_density(&self, x: &[f64]) -> (f64, bool) {
        let mut best = f64::NEG_INFINITY;
        for g in &self.background {
            best = best.max(log_density(x, g.mean, g.variance));
        }
        let mut poison_wins = false;
        if let Some(p) = self.poison {
            let lp = log_density(x, p.mean, p.variance);
            if lp > best {
                best = lp;
                poison_wins = true;
            }
        }
        (best, poison_wins)
    }

    /// Concept of `x`, or `None` for the null class.
    pub fn assign_concept(&self, x: &[f64]) -> Result<Option<u32>> {
        self.check_dim(x)?;
        let (mut best, _) = self.null_log_density(x);
        let mut assigned = None;
        for r in &self.regions {
            let ld = log_density(x, r.mean, r.variance);
            if ld > best {
                best = ld;
                assigned = Some(r.concept_id);
            }
        }
        Ok(assigned)
    }

    /// True when the poison region is the arg-max for `x`.
    pub fn in_poison_region(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        let (null_best, poison_wins) = self.null_log_density(x);
        if !poison_wins {
            return Ok(false);
        }
        Ok(self
            .regions
            .iter()
            .all(|r| log_density(x, r.mean, r.variance) <= null_best))
    }

    /// Log-density margin of concept `k` over every competing region.
    /// Positive exactly when `x` is assigned to `k`, up to ties.
    fn concept_margin(&self, x: &[f64], k: u32) -> f64 {
        let (mut other, _) = self.null_log_density(x);
        let mut own = f64::NEG_INFINITY;
        for r in &self.regions {
            let ld = log_density(x, r.mean, r.variance);
            if r.concept_id == k {
                own = own.max(ld);
            } else {
                other = other.max(ld);
            }
        }
        own - other
    }

    pub fn count_concepts(&self, bag: &Bag) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.concept_count()];
        for x in bag.instances() {
            if let Some(k) = self.assign_concept(x.as_slice())? {
                counts[k as usize - 1] += 1;
            }
        }
        Ok(counts)
    }

    /// Positive iff `counts[k] >= t_k` for every concept.
    pub fn decide(&self, counts: &[usize]) -> Result<Label> {
        if counts.len() != self.concept_count() {
            return Err(Error::Argument(format!(
                "{} counts for {} concepts",
                counts.len(),
                self.concept_count()
            )));
        }
        let positive = counts
            .iter()
            .zip(&self.thresholds)
            .all(|(&c, &t)| c >= t as usize);
        Ok(Label::from(positive))
    }

    /// Decision from generation-side roles instead of instance values.
    pub fn decide_from_roles(&self, roles: &[InstanceRole]) -> Result<Label> {
        let mut counts = vec![0; self.concept_count()];
        for role in roles {
            if let InstanceRole::Concept(k) = *role {
                if let Some(c) = counts.get_mut(k as usize - 1) {
                    *c += 1;
                }
            }
        }
        self.decide(&counts)
    }

    /// Hard MIL-respecting score: 1.0 iff the rule decides positive.
    pub fn oracle_mil_score(&self, bag: &Bag) -> Result<f64> {
        let counts = self.count_concepts(bag)?;
        Ok(if self.decide(&counts)?.is_positive() {
            1.0
        } else {
            0.0
        })
    }

    /// Graded version of [`oracle_mil_score`](Self::oracle_mil_score).
    ///
    /// For each concept with `t_k > 0`, take the `t_k`-th largest concept
    /// margin in the bag; the score is the logistic of the smallest of these.
    /// It exceeds 0.5 exactly when the hard score is 1 (up to exact ties), and
    /// adding an instance never lowers it.
    pub fn oracle_mil_soft_score(&self, bag: &Bag) -> Result<f64> {
        for x in bag.instances() {
            self.check_dim(x.as_slice())?;
        }
        let mut weakest = f64::INFINITY;
        for (idx, &t) in self.thresholds.iter().enumerate() {
            if t == 0 {
                continue;
            }
            let k = idx as u32 + 1;
            let mut margins: Vec<f64> = bag
                .instances()
                .iter()
                .map(|x| self.concept_margin(x.as_slice(), k))
                .collect();
            margins.sort_by(|a, b| b.total_cmp(a));
            let m = margins
                .get(t as usize - 1)
                .copied()
                .unwrap_or(f64::NEG_INFINITY);
            weakest = weakest.min(m);
        }
        Ok(sigmoid(weakest))
    }

    /// Absence detector: 1.0 iff no instance lands in the poison region.
    /// This is the shortcut a MIL-violating model learns from poisoned data.
    pub fn oracle_poison_cheat_score(&self, bag: &Bag) -> Result<f64> {
        for x in bag.instances() {
            if self.in_poison_region(x.as_slice())? {
                return Ok(0.0);
            }
        }
        Ok(1.0)
    }

    /// Total number of concept instances, ignoring which concept they are.
    pub fn oracle_frequency_cheat_score(&self, bag: &Bag) -> Result<f64> {
        Ok(self.count_concepts(bag)?.iter().sum::<usize>() as f64)
    }
}
