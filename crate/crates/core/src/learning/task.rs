use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LearningError;
use crate::seed;

/// Generation parameters of the synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Per-coordinate standard deviation of the Gaussian noise. Zero puts
    /// every example exactly on its class center.
    pub noise_std: f64,
    /// Class centers are drawn uniformly from `[-center_spread, center_spread]^D`.
    pub center_spread: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            feature_dim: 10,
            num_classes: 4,
            samples_per_class: 500,
            noise_std: 1.0,
            center_spread: 2.0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), LearningError> {
        if self.num_classes < 2 {
            return Err(LearningError::InvalidTask(
                "num_classes must be >= 2".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(LearningError::InvalidTask(
                "feature_dim must be >= 2".into(),
            ));
        }
        if self.samples_per_class == 0 {
            return Err(LearningError::InvalidTask(
                "samples_per_class must be >= 1".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(LearningError::InvalidTask("noise_std must be >= 0".into()));
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return Err(LearningError::InvalidTask(
                "center_spread must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A task instance: the spec plus the class centers drawn from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub seed: u64,
    pub class_centers: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: TaskSpec, seed: u64) -> Result<Self, LearningError> {
        spec.validate()?;
        let mut rng = seed::derived_rng(seed, &[0]);
        let class_centers: Vec<Vec<f64>> = (0..spec.num_classes)
            .map(|_| {
                (0..spec.feature_dim)
                    .map(|_| rng.random_range(-spec.center_spread..=spec.center_spread))
                    .collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for (i, a) in class_centers.iter().enumerate() {
            for b in &class_centers[i + 1..] {
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        if min_dist == 0.0 {
            return Err(LearningError::InvalidTask("class centers coincide".into()));
        }
        if min_dist < 2.0 * spec.noise_std {
            log::warn!(
                "class centers {min_dist:.3} apart, less than 2*noise_std={:.3}",
                2.0 * spec.noise_std
            );
        }
        Ok(Self {
            spec,
            seed,
            class_centers,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Index in the generated dataset; stable across partitioning.
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub examples: Vec<Example>,
}

/// One node's local data, already split 80/20 into train and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub owner: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl DataShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `samples_per_class` points per class around each center and
/// shuffles them.
pub fn generate_task(task: &SyntheticTask) -> Dataset {
    let spec = &task.spec;
    let mut rng = seed::derived_rng(task.seed, &[1]);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let mut examples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, center) in task.class_centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let features = center
                .iter()
                .map(|c| {
                    if spec.noise_std == 0.0 {
                        *c
                    } else {
                        c + noise.sample(&mut rng)
                    }
                })
                .collect();
            examples.push(Example {
                id: 0,
                features,
                label,
            });
        }
    }
    examples.shuffle(&mut rng);
    for (i, e) in examples.iter_mut().enumerate() {
        e.id = i;
    }
    Dataset {
        feature_dim: spec.feature_dim,
        num_classes: spec.num_classes,
        examples,
    }
}

const TRAIN_FRACTION: f64 = 0.8;

/// Stratified IID split into `n_nodes` shards of equal size (±1), each
/// split 80/20 into train and validation per class.
pub fn partition_iid(
    dataset: &Dataset,
    n_nodes: usize,
    seed: u64,
) -> Result<Vec<DataShard>, LearningError> {
    if n_nodes == 0 || dataset.examples.len() < n_nodes {
        return Err(LearningError::InsufficientData {
            examples: dataset.examples.len(),
            nodes: n_nodes,
        });
    }
    let mut rng = seed::rng(seed);
    let mut by_class: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for e in &dataset.examples {
        by_class.entry(e.label).or_default().push(e);
    }
    let mut dealt: Vec<Vec<&Example>> = vec![Vec::new(); n_nodes];
    let mut slot = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for e in members.iter() {
            dealt[slot % n_nodes].push(e);
            slot += 1;
        }
    }
    Ok(dealt
        .into_iter()
        .enumerate()
        .map(|(owner, members)| {
            let mut per_class: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
            for e in members {
                per_class.entry(e.label).or_default().push(e);
            }
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for members in per_class.values() {
                let cut = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
                train.extend(members[..cut].iter().map(|e| (*e).clone()));
                val.extend(members[cut..].iter().map(|e| (*e).clone()));
            }
            train.shuffle(&mut rng);
            val.shuffle(&mut rng);
            DataShard {
                owner,
                feature_dim: dataset.feature_dim,
                num_classes: dataset.num_classes,
                train,
                val,
            }
        })
        .collect())
}

/// Dataset dump: `feature_0..feature_{D-1},label,node_id,split`.
pub fn write_dataset_csv<W: Write>(shards: &[DataShard], mut w: W) -> std::io::Result<()> {
    let dim = shards.first().map_or(0, |s| s.feature_dim);
    let header: Vec<String> = (0..dim)
        .map(|i| format!("feature_{i}"))
        .chain(["label", "node_id", "split"].map(String::from))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for shard in shards {
        for (split, examples) in [("train", &shard.train), ("val", &shard.val)] {
            for e in examples {
                let feats: Vec<String> = e.features.iter().map(|f| format!("{f:.6}")).collect();
                writeln!(
                    w,
                    "{},{},{},{}",
                    feats.join(","),
                    e.label,
                    shard.owner,
                    split
                )?;
            }
        }
    }
    Ok(())
}
