//! Bags, instances and the generation-side ground truth attached to them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One instance: a fixed-length real feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceVector(Vec<f64>);

impl InstanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("instance", "instance vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "instance",
                format!("coordinate {i} is not finite"),
            ));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for InstanceVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Which generator branch produced an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstanceRole {
    Background,
    Poison,
    Concept(u32),
}

impl fmt::Display for InstanceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceRole::Background => f.write_str("background"),
            InstanceRole::Poison => f.write_str("poison"),
            InstanceRole::Concept(k) => write!(f, "c{k}"),
        }
    }
}

impl FromStr for InstanceRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(InstanceRole::Background),
            "poison" => Ok(InstanceRole::Poison),
            _ => s
                .strip_prefix('c')
                .and_then(|k| k.parse::<u32>().ok())
                .filter(|&k| k >= 1)
                .map(InstanceRole::Concept)
                .ok_or_else(|| Error::validation("roles", format!("unknown role `{s}`"))),
        }
    }
}

impl Serialize for InstanceRole {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstanceRole {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(sign: i64) -> Result<Self> {
        match sign {
            -1 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::validation(
                "label",
                format!("expected -1 or 1, got {other}"),
            )),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// Target for binary cross-entropy: 0 or 1.
    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn is_training(self) -> bool {
        self == Split::Train
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// A labelled, unordered collection of instances.
///
/// Instances are stored in generation order, but nothing downstream may rely
/// on that order. `roles` is hidden ground truth and never reaches a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    bag_id: u64,
    label: Label,
    split: Split,
    instances: Vec<InstanceVector>,
    roles: Option<Vec<InstanceRole>>,
}

impl Bag {
    pub fn new(
        bag_id: u64,
        label: Label,
        split: Split,
        instances: Vec<InstanceVector>,
        roles: Option<Vec<InstanceRole>>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Integrity {
                bag_id,
                reason: "bag has no instances".into(),
            });
        }
        let dim = instances[0].dim();
        if instances.iter().any(|x| x.dim() != dim) {
            return Err(Error::Integrity {
                bag_id,
                reason: "instances have differing dimensionality".into(),
            });
        }
        if let Some(roles) = &roles {
            if roles.len() != instances.len() {
                return Err(Error::Integrity {
                    bag_id,
                    reason: format!("{} roles for {} instances", roles.len(), instances.len()),
                });
            }
        }
        Ok(Self {
            bag_id,
            label,
            split,
            instances,
            roles,
        })
    }

    pub fn bag_id(&self) -> u64 {
        self.bag_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn instances(&self) -> &[InstanceVector] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances[0].dim()
    }

    pub fn roles(&self) -> Option<&[InstanceRole]> {
        self.roles.as_deref()
    }

    /// Number of instances carrying `role`; `None` when roles were stripped.
    pub fn role_count(&self, role: InstanceRole) -> Option<usize> {
        self.roles
            .as_ref()
            .map(|r| r.iter().filter(|&&x| x == role).count())
    }

    /// Copy of this bag without ground-truth roles.
    pub fn without_roles(&self) -> Bag {
        Bag {
            roles: None,
            ..self.clone()
        }
    }

    /// Copy of this bag with instances reordered by `order` (a permutation of
    /// `0..len`). Roles follow their instances.
    pub fn permuted(&self, order: &[usize]) -> Bag {
        assert_eq!(order.len(), self.len(), "permutation length");
        Bag {
            instances: order.iter().map(|&i| self.instances[i].clone()).collect(),
            roles: self
                .roles
                .as_ref()
                .map(|r| order.iter().map(|&i| r[i]).collect()),
            ..self.clone()
        }
    }

    /// Copy of this bag with one extra instance appended.
    pub fn with_instance(&self, x: InstanceVector, role: InstanceRole) -> Result<Bag> {
        let mut instances = self.instances.clone();
        instances.push(x);
        let roles = self.roles.clone().map(|mut r| {
            r.push(role);
            r
        });
        Bag::new(self.bag_id, self.label, self.split, instances, roles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(v: &[f64]) -> InstanceVector {
        InstanceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_and_ragged_bags() {
        assert!(Bag::new(0, Label::Positive, Split::Train, vec![], None).is_err());
        let ragged = vec![iv(&[1.0, 2.0]), iv(&[1.0])];
        assert!(Bag::new(0, Label::Positive, Split::Train, ragged, None).is_err());
    }

    #[test]
    fn rejects_role_length_mismatch() {
        let r = Bag::new(
            3,
            Label::Negative,
            Split::Test,
            vec![iv(&[0.0])],
            Some(vec![InstanceRole::Background, InstanceRole::Poison]),
        );
        assert!(matches!(r, Err(Error::Integrity { bag_id: 3, .. })));
    }

    #[test]
    fn rejects_non_finite_instances() {
        assert!(InstanceVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(InstanceVector::new(vec![]).is_err());
    }

    #[test]
    fn role_strings_round_trip() {
        for role in [
            InstanceRole::Background,
            InstanceRole::Poison,
            InstanceRole::Concept(1),
            InstanceRole::Concept(12),
        ] {
            assert_eq!(role.to_string().parse::<InstanceRole>().unwrap(), role);
        }
        assert!("c0".parse::<InstanceRole>().is_err());
        assert!("concept".parse::<InstanceRole>().is_err());
    }

    #[test]
    fn label_signs() {
        assert_eq!(Label::from_sign(-1).unwrap(), Label::Negative);
        assert_eq!(Label::from_sign(1).unwrap().sign(), 1);
        assert!(Label::from_sign(0).is_err());
    }
}
