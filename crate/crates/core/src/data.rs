//! Datasets and their division across users.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::nn::{Batch, Matrix};
use crate::rng::{stream, Purpose, NO_USER};

/// Labelled samples, one row of `dim` features per sample, features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("sample dimension must be at least 1"));
        }
        if images.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * dim, actual: images.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(alloc::format!("label {bad} outside 0..{num_classes}")));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("features must lie in [0, 1]"));
        }
        Ok(Dataset { images, dim, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, index: usize) -> &[f64] {
        &self.images[index * self.dim..(index + 1) * self.dim]
    }

    /// Copies the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(alloc::format!("sample index {i} out of range")));
            }
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Batch::new(Matrix::from_vec(indices.len(), self.dim, inputs)?, labels)
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlobSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Standard deviation of every coordinate around its class center.
    pub spread: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub const DEFAULT_SPREAD: f64 = 0.1;
}

fn blob_samples(centers: &[f64], spec: &BlobSpec, per_class: usize, part: u64) -> Dataset {
    let mut rng = stream(spec.seed, NO_USER, part, Purpose::Dataset);
    let mut images = Vec::with_capacity(spec.classes * per_class * spec.dim);
    let mut labels = Vec::with_capacity(spec.classes * per_class);
    for class in 0..spec.classes {
        let center = &centers[class * spec.dim..(class + 1) * spec.dim];
        for _ in 0..per_class {
            images.extend(center.iter().map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (c + spec.spread * z).clamp(0.0, 1.0)
            }));
            labels.push(class);
        }
    }
    Dataset { images, dim: spec.dim, labels, num_classes: spec.classes }
}

/// Train and test sets drawn around the same seeded class centers.
///
/// Centers are uniform in `[0.15, 0.85]^dim`; samples are clamped to `[0, 1]`.
/// The train set does not depend on `test_per_class`.
pub fn synth_blobs_split(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes == 0 || spec.dim == 0 || spec.train_per_class == 0 {
        return Err(invalid("blob classes, dim and train_per_class must be at least 1"));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(invalid("blob spread must be finite and non-negative"));
    }
    let mut rng = stream(spec.seed, NO_USER, 0, Purpose::Dataset);
    let coord = Uniform::new_inclusive(0.15, 0.85).expect("static range");
    let centers: Vec<f64> = (0..spec.classes * spec.dim).map(|_| coord.sample(&mut rng)).collect();
    Ok((blob_samples(&centers, spec, spec.train_per_class, 1), blob_samples(&centers, spec, spec.test_per_class, 2)))
}

/// `num_classes * samples_per_class` samples of dimension `d_input`.
pub fn synth_blobs(num_classes: usize, samples_per_class: usize, d_input: usize, seed: u64) -> Result<Dataset> {
    let spec = BlobSpec {
        classes: num_classes,
        train_per_class: samples_per_class,
        test_per_class: 0,
        dim: d_input,
        spread: BlobSpec::DEFAULT_SPREAD,
        seed,
    };
    synth_blobs_split(&spec).map(|(train, _)| train)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "scheme", rename_all = "snake_case"))]
pub enum PartitionScheme {
    Iid,
    Shards { shard_size: usize, shards_per_user: usize },
}

/// Per-user sample indices into a training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl PartitionPlan {
    pub fn users(&self) -> usize {
        self.assignments.len()
    }
}

/// Seeded permutation cut into `users` parts whose sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, users: usize, seed: u64) -> Result<PartitionPlan> {
    let n = dataset.len();
    if users == 0 || users > n {
        return Err(invalid(alloc::format!("cannot split {n} samples across {users} users")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, NO_USER, 0, Purpose::Partition));
    let (base, extra) = (n / users, n % users);
    let mut assignments = Vec::with_capacity(users);
    let mut start = 0;
    for u in 0..users {
        let len = base + usize::from(u < extra);
        assignments.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(PartitionPlan { assignments, scheme: PartitionScheme::Iid })
}

/// Label-sorted shards dealt to users.
///
/// Indices are stably sorted by label and cut into consecutive shards of
/// `shard_size`; each user then receives `shards_per_user` distinct shards
/// drawn uniformly without replacement. Samples past the last full shard and
/// undealt shards stay unused.
pub fn partition_shards(
    dataset: &Dataset,
    users: usize,
    shard_size: usize,
    shards_per_user: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let scheme = PartitionScheme::Shards { shard_size, shards_per_user };
    if users == 0 || shard_size == 0 {
        return Err(invalid("users and shard_size must be at least 1"));
    }
    let needed = users * shards_per_user * shard_size;
    if needed > dataset.len() {
        return Err(invalid(alloc::format!(
            "{users} users x {shards_per_user} shards x {shard_size} samples needs {needed}, dataset has {}",
            dataset.len()
        )));
    }
    if shards_per_user == 0 {
        return Ok(PartitionPlan { assignments: vec![Vec::new(); users], scheme });
    }
    let mut sorted: Vec<usize> = (0..dataset.len()).collect();
    sorted.sort_by_key(|&i| dataset.labels[i]);
    let mut shard_ids: Vec<usize> = (0..dataset.len() / shard_size).collect();
    shard_ids.shuffle(&mut stream(seed, NO_USER, 1, Purpose::Partition));
    let assignments = shard_ids
        .chunks_exact(shards_per_user)
        .take(users)
        .map(|shards| {
            shards.iter().flat_map(|&s| sorted[s * shard_size..(s + 1) * shard_size].iter().copied()).collect()
        })
        .collect();
    Ok(PartitionPlan { assignments, scheme })
}

pub fn partition(dataset: &Dataset, users: usize, scheme: PartitionScheme, seed: u64) -> Result<PartitionPlan> {
    match scheme {
        PartitionScheme::Iid => partition_iid(dataset, users, seed),
        PartitionScheme::Shards { shard_size, shards_per_user } => {
            partition_shards(dataset, users, shard_size, shards_per_user, seed)
        }
    }
}
