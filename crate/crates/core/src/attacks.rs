//! Untargeted poisoning attacks: label flipping on the training split and
//! "salt" noise written directly into the shared model.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learning::DataShard;
use crate::model::LayeredParams;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    LabelFlip,
    ModelPoison,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::ModelPoison => "model_poison",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Percentage of poisoned nodes.
    pub pnr_percent: u32,
    /// Probability that any single parameter is salted.
    pub salt_fraction: f64,
    /// Attack randomness; derived from the master seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Node that is never chosen as an attacker.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protected_node: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            pnr_percent: 0,
            salt_fraction: 0.8,
            seed: None,
            protected_node: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pnr_percent > 100 {
            return Err(format!(
                "attack.pnr_percent must be <= 100, got {}",
                self.pnr_percent
            ));
        }
        if !(self.salt_fraction > 0.0 && self.salt_fraction <= 1.0) {
            return Err(format!(
                "attack.salt_fraction must be in (0, 1], got {}",
                self.salt_fraction
            ));
        }
        Ok(())
    }

    /// Attacker share actually in effect.
    pub fn effective_alpha(&self) -> f64 {
        if self.kind == AttackKind::None {
            0.0
        } else {
            self.pnr_percent as f64 / 100.0
        }
    }
}

/// Number of attackers for `n` nodes at `pnr_percent`.
pub fn attacker_count(n: usize, pnr_percent: u32) -> usize {
    ((n as f64 * pnr_percent as f64 / 100.0).round() as usize).min(n)
}

/// Uniformly random attacker set of size `round(n * pnr / 100)`, never
/// containing `protected`.
pub fn select_malicious(
    n: usize,
    pnr_percent: u32,
    seed: u64,
    protected: Option<usize>,
) -> BTreeSet<usize> {
    let pool: Vec<usize> = (0..n).filter(|&i| Some(i) != protected).collect();
    let count = attacker_count(n, pnr_percent).min(pool.len());
    let mut rng = seed::rng(seed);
    sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Replaces every training label with a uniformly drawn different label.
/// The validation split is left alone.
pub fn flip_labels(shard: &DataShard, seed: u64) -> DataShard {
    let classes = shard.num_classes;
    let mut out = shard.clone();
    if classes < 2 {
        log::warn!(
            "node {}: cannot flip labels with {classes} class(es)",
            shard.owner
        );
        return out;
    }
    let mut rng = seed::rng(seed);
    for e in &mut out.train {
        let offset = 1 + rng.random_range(0..classes - 1);
        e.label = (e.label + offset) % classes;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaltedModel {
    pub model: LayeredParams,
    pub replaced: usize,
    /// The value written into every selected parameter.
    pub salt_value: f64,
}

/// Salt noise: each parameter is independently selected with probability
/// `salt_fraction` and overwritten with the model's largest absolute value.
pub fn salt_poison(model: &LayeredParams, salt_fraction: f64, seed: u64) -> SaltedModel {
    let mut salt_value = model.max_abs();
    if salt_value == 0.0 {
        log::warn!("salting an all-zero model; using 1.0");
        salt_value = 1.0;
    }
    let p = salt_fraction.clamp(0.0, 1.0);
    let mut rng = seed::rng(seed);
    let mut out = model.clone();
    let mut replaced = 0;
    for v in out.iter_params_mut() {
        if rng.random_bool(p) {
            *v = salt_value;
            replaced += 1;
        }
    }
    SaltedModel {
        model: out,
        replaced,
        salt_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{generate_task, partition_iid, SyntheticTask, TaskSpec};
    use crate::model::{layerwise_cosine, Layer};

    fn shard(classes: usize) -> DataShard {
        let spec = TaskSpec {
            num_classes: classes,
            samples_per_class: 40,
            ..TaskSpec::default()
        };
        partition_iid(&generate_task(&SyntheticTask::new(spec, 2).unwrap()), 2, 3)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn selection_sizes() {
        assert!(select_malicious(10, 0, 1, None).is_empty());
        assert_eq!(select_malicious(10, 30, 1, None).len(), 3);
        assert_eq!(select_malicious(10, 60, 1, None).len(), 6);
        assert_eq!(select_malicious(10, 10, 1, None).len(), 1);
        assert_eq!(
            select_malicious(10, 30, 9, None),
            select_malicious(10, 30, 9, None)
        );
        assert!(select_malicious(10, 30, 9, None).iter().all(|&i| i < 10));
    }

    #[test]
    fn protected_node_is_never_selected() {
        for seed in 0..50 {
            assert!(!select_malicious(10, 60, seed, Some(4)).contains(&4));
        }
        assert_eq!(select_malicious(3, 100, 0, Some(1)), BTreeSet::from([0, 2]));
    }

    #[test]
    fn binary_flip_inverts() {
        let s = shard(2);
        let f = flip_labels(&s, 4);
        assert_eq!(f.train.len(), s.train.len());
        for (a, b) in s.train.iter().zip(&f.train) {
            assert_eq!(b.label, 1 - a.label);
        }
        assert_eq!(f.val, s.val);
    }

    #[test]
    fn multiclass_flip_never_keeps_label() {
        let s = shard(5);
        let f = flip_labels(&s, 4);
        assert!(s
            .train
            .iter()
            .zip(&f.train)
            .all(|(a, b)| a.label != b.label && b.label < 5));
        assert_eq!(f, flip_labels(&s, 4));
        let used: BTreeSet<usize> = f.train.iter().map(|e| e.label).collect();
        assert_eq!(used.len(), 5);
    }

    #[test]
    fn single_class_flip_is_noop() {
        let mut s = shard(2);
        s.num_classes = 1;
        assert_eq!(flip_labels(&s, 0), s);
    }

    fn model(n: usize) -> LayeredParams {
        let vals: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5)
            .collect();
        LayeredParams::new(vec![Layer::vector(vals).unwrap()]).unwrap()
    }

    #[test]
    fn full_salt_sets_every_parameter() {
        let m = model(100);
        let s = salt_poison(&m, 1.0, 3);
        assert_eq!(s.replaced, 100);
        assert!(s.model.iter_params().all(|&v| v == m.max_abs()));
    }

    #[test]
    fn salt_fraction_concentrates() {
        let m = model(10_000);
        for seed in [1, 2, 3, 42] {
            let s = salt_poison(&m, 0.8, seed);
            assert!(
                (7_800..=8_200).contains(&s.replaced),
                "seed {seed}: {}",
                s.replaced
            );
        }
        assert_eq!(salt_poison(&m, 0.8, 5), salt_poison(&m, 0.8, 5));
    }

    #[test]
    fn zero_model_salts_with_one() {
        let z = model(10).filled(0.0);
        let s = salt_poison(&z, 1.0, 0);
        assert_eq!(s.salt_value, 1.0);
        assert!(s.model.iter_params().all(|&v| v == 1.0));
    }

    #[test]
    fn salted_model_is_dissimilar() {
        let m = model(500);
        let s = salt_poison(&m, 0.8, 7);
        assert!(layerwise_cosine(&m, &s.model).unwrap().score.value() < 0.5);
    }
}
