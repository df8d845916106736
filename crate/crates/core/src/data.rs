//! Synthetic classification datasets, core/edge partitioning, and per-batch
//! label corruption for the noisy-edge experiments.
//!
//! All operations are pure functions of their inputs and seeds.

use crate::error::{Error, Result};
use crate::seed::{derive, Stream};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// A set of labeled samples with stable ids.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub ids: Vec<u64>,
    /// One row per sample.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of samples per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Subset by positional row indices, preserving order.
    pub fn select(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn id_set(&self) -> BTreeSet<u64> {
        self.ids.iter().copied().collect()
    }
}

/// A Gaussian-mixture generator: each class is a union of one or more
/// spherical sub-clusters. The same mixture can be sampled repeatedly
/// (train set, test set) with different draw seeds.
#[derive(Debug, Clone)]
pub struct Mixture {
    /// Row `c * clusters_per_class + j` is cluster `j` of class `c`.
    means: Array2<f64>,
    noise_std: f64,
    class_count: usize,
    clusters_per_class: usize,
    input_dim: usize,
}

impl Mixture {
    /// Unimodal classes. `difficulty` in [0, 1] scales the cluster spread:
    /// 0 gives widely separated blobs, 1 heavily overlapping ones.
    pub fn new(class_count: usize, input_dim: usize, difficulty: f64, seed: u64) -> Result<Self> {
        Mixture::with_clusters(class_count, 1, input_dim, difficulty, seed)
    }

    /// Multi-modal classes: `clusters_per_class` sub-clusters each. More
    /// clusters make the task hungrier for data, since a small sample may
    /// miss entire modes of a class.
    pub fn with_clusters(
        class_count: usize,
        clusters_per_class: usize,
        input_dim: usize,
        difficulty: f64,
        seed: u64,
    ) -> Result<Self> {
        if class_count == 0 || input_dim == 0 || clusters_per_class == 0 {
            return Err(Error::argument(
                "class_count, clusters_per_class and input_dim must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(Error::argument(format!(
                "difficulty must be in [0, 1], got {difficulty}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Stream::DatasetMeans, 0, 0));
        let means = Array2::from_shape_fn(
            (class_count * clusters_per_class, input_dim),
            |_| standard_normal(&mut rng),
        );
        Ok(Mixture {
            means,
            noise_std: 0.5 + 2.5 * difficulty,
            class_count,
            clusters_per_class,
            input_dim,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Draw `samples_per_class` samples per class, assigning each to a
    /// uniformly drawn sub-cluster. Ids are `id_base..`, assigned after a
    /// global seeded shuffle of the rows.
    pub fn sample(&self, samples_per_class: usize, draw_seed: u64, id_base: u64) -> LabeledSet {
        let n = self.class_count * samples_per_class;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(draw_seed, Stream::DatasetDraw, 0, 0));
        let mut features = Array2::zeros((n, self.input_dim));
        let mut labels = Vec::with_capacity(n);
        for c in 0..self.class_count {
            for s in 0..samples_per_class {
                let row = c * samples_per_class + s;
                let cluster = if self.clusters_per_class == 1 {
                    0
                } else {
                    rng.gen_range(0..self.clusters_per_class)
                };
                let mean_row = c * self.clusters_per_class + cluster;
                for d in 0..self.input_dim {
                    features[[row, d]] =
                        self.means[[mean_row, d]] + self.noise_std * standard_normal(&mut rng);
                }
                labels.push(c);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let features = features.select(Axis(0), &order);
        let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        LabeledSet {
            ids: (0..n as u64).map(|i| id_base + i).collect(),
            features,
            labels,
            class_count: self.class_count,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniform draws
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One-shot convenience: build a mixture from `seed` and draw one set.
pub fn make_synthetic(
    class_count: usize,
    samples_per_class: usize,
    input_dim: usize,
    difficulty: f64,
    seed: u64,
) -> Result<LabeledSet> {
    if samples_per_class == 0 {
        return Err(Error::argument("samples_per_class must be positive"));
    }
    let mixture = Mixture::new(class_count, input_dim, difficulty, seed)?;
    Ok(mixture.sample(samples_per_class, seed, 0))
}

/// An edge's data: the training split and a holdout carved off at partition
/// time that is never trained on (used for edge-transfer scoring).
#[derive(Debug, Clone)]
pub struct EdgePartition {
    pub train: LabeledSet,
    pub holdout: LabeledSet,
}

/// The core set plus `K` disjoint edge sets.
#[derive(Debug, Clone)]
pub struct DatasetPartition {
    pub core: LabeledSet,
    pub edges: Vec<EdgePartition>,
    pub class_count: usize,
}

impl DatasetPartition {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Per-partition per-class sample counts (core first, then edges,
    /// with each edge's train and holdout merged).
    pub fn per_class_stats(&self) -> Vec<Vec<usize>> {
        let mut stats = vec![self.core.class_counts()];
        for e in &self.edges {
            let mut counts = e.train.class_counts();
            for (c, h) in counts.iter_mut().zip(e.holdout.class_counts()) {
                *c += h;
            }
            stats.push(counts);
        }
        stats
    }

    pub fn manifest(&self) -> PartitionManifest {
        PartitionManifest {
            core_ids: self.core.ids.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeManifest {
                    train_ids: e.train.ids.clone(),
                    holdout_ids: e.holdout.ids.clone(),
                })
                .collect(),
        }
    }
}

/// How to split a dataset into one core set and `edge_count` edge sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub edge_count: usize,
    /// Core share of each class; `None` means the even share `1/(K+1)`.
    pub core_fraction: Option<f64>,
    /// Relative standard deviation of the per-partition per-class counts.
    pub jitter: f64,
    /// Fraction of each edge partition carved off as its holdout.
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Minimum samples of every class in every partition.
    pub min_per_class: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            edge_count: 9,
            core_fraction: None,
            // matches a ±14% relative spread of per-class counts
            jitter: 0.138,
            holdout_fraction: 0.1,
            seed: 4242,
            min_per_class: 1,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.core_fraction {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::argument(format!(
                    "core_fraction must be in (0, 1], got {f}"
                )));
            }
        }
        if self.jitter < 0.0 || !self.jitter.is_finite() {
            return Err(Error::argument("jitter must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::argument(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Split `data` into `1 + edge_count` disjoint, exhaustive partitions with
/// near-even per-class counts (multiplicative jitter around the even share).
pub fn partition(data: &LabeledSet, spec: &PartitionSpec) -> Result<DatasetPartition> {
    spec.validate()?;
    let k = spec.edge_count;
    let parts = k + 1;
    let class_count = data.class_count;

    if k == 0 {
        return Ok(DatasetPartition {
            core: data.clone(),
            edges: Vec::new(),
            class_count,
        });
    }

    let core_share = spec.core_fraction.unwrap_or(1.0 / parts as f64);
    let edge_share = (1.0 - core_share) / k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, Stream::PartitionShuffle, 0, 0));
    let mut jitter_rng =
        ChaCha8Rng::seed_from_u64(derive(spec.seed, Stream::PartitionJitter, 0, 0));

    // rows going to each partition (0 = core, 1..=k = edges)
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); parts];

    for class in 0..class_count {
        let mut rows: Vec<usize> = (0..data.len())
            .filter(|&r| data.labels[r] == class)
            .collect();
        let n = rows.len();
        if n < parts * spec.min_per_class {
            return Err(Error::argument(format!(
                "class {class} has {n} samples, needs at least {} for {parts} partitions",
                parts * spec.min_per_class
            )));
        }
        rows.shuffle(&mut rng);

        // jittered weights with the requested relative std, then a
        // largest-remainder rounding so the counts sum to n exactly
        let half_width = spec.jitter * 3f64.sqrt();
        let mut weights: Vec<f64> = (0..parts)
            .map(|p| {
                let share = if p == 0 { core_share } else { edge_share };
                let u: f64 = jitter_rng.gen_range(-1.0..=1.0);
                share * (1.0 + half_width * u).max(0.05)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut counts = largest_remainder(&weights, n);

        // enforce the per-partition floor by stealing from the largest
        for p in 0..parts {
            while counts[p] < spec.min_per_class {
                let donor = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &c)| c)
                    .map(|(i, _)| i)
                    .unwrap();
                counts[donor] -= 1;
                counts[p] += 1;
            }
        }

        let mut offset = 0;
        for (p, &c) in counts.iter().enumerate() {
            assigned[p].extend_from_slice(&rows[offset..offset + c]);
            offset += c;
        }
    }

    for part in &mut assigned {
        part.sort_unstable();
    }

    let core = data.select(&assigned[0]);
    let mut edges = Vec::with_capacity(k);
    for rows in assigned.iter().skip(1) {
        let edge_set = data.select(rows);
        edges.push(carve_holdout(&edge_set, spec.holdout_fraction));
    }

    Ok(DatasetPartition {
        core,
        edges,
        class_count,
    })
}

/// Round fractional allocations to integers summing to `n`.
fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &p in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[p] += 1;
        leftover -= 1;
    }
    counts
}

/// Stratified holdout: per class, the last `round(fraction * count)` rows,
/// always leaving at least one training sample of each class.
fn carve_holdout(edge: &LabeledSet, fraction: f64) -> EdgePartition {
    let mut train_rows = Vec::new();
    let mut holdout_rows = Vec::new();
    for class in 0..edge.class_count {
        let rows: Vec<usize> = (0..edge.len())
            .filter(|&r| edge.labels[r] == class)
            .collect();
        let take =
            ((rows.len() as f64 * fraction).round() as usize).min(rows.len().saturating_sub(1));
        let split = rows.len() - take;
        train_rows.extend_from_slice(&rows[..split]);
        holdout_rows.extend_from_slice(&rows[split..]);
    }
    train_rows.sort_unstable();
    holdout_rows.sort_unstable();
    EdgePartition {
        train: edge.select(&train_rows),
        holdout: edge.select(&holdout_rows),
    }
}

/// Label corruption for a noisy edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Per-batch probability that the batch's labels are shuffled.
    pub p: f64,
    /// 1-based ids of the edges whose data is corrupted.
    pub noisy_edge_ids: BTreeSet<usize>,
    pub rng_seed: u64,
    /// During training, redraw the batch corruption every this many epochs;
    /// 0 keeps one fixed corruption for the whole run.
    pub reshuffle_period_epochs: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            p: 0.0,
            noisy_edge_ids: BTreeSet::new(),
            rng_seed: 0,
            reshuffle_period_epochs: 10,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::argument(format!(
                "noise probability p must be in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.p > 0.0 && !self.noisy_edge_ids.is_empty()
    }
}

/// With probability `p` per consecutive batch of `batch_size` rows, permute
/// the labels within that batch. Inputs are untouched; the label multiset of
/// each shuffled batch is preserved.
pub fn corrupt_labels(
    data: &LabeledSet,
    spec: &NoiseSpec,
    batch_size: usize,
) -> Result<LabeledSet> {
    spec.validate()?;
    if batch_size == 0 {
        return Err(Error::argument("batch_size must be positive"));
    }
    let mut out = data.clone();
    corrupt_label_slice(&mut out.labels, spec.p, batch_size, spec.rng_seed);
    Ok(out)
}

fn corrupt_label_slice(labels: &mut [usize], p: f64, batch_size: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let roll: f64 = rng.gen_range(0.0..1.0);
        if roll < p {
            labels[start..end].shuffle(&mut rng);
        }
        start = end;
    }
}

/// Hard-label loss for a noisy edge: the label corruption is re-drawn at
/// the start of every epoch (seed derived from the spec's seed and the
/// epoch), so the corrupted batches are inconsistent across epochs and the
/// model cannot settle on any one garbage labeling.
#[derive(Debug, Clone)]
pub struct NoisyBatchLoss {
    clean_labels: Vec<usize>,
    current: Vec<usize>,
    spec: NoiseSpec,
    batch_size: usize,
}

impl NoisyBatchLoss {
    pub fn new(data: &LabeledSet, spec: NoiseSpec, batch_size: usize) -> Result<Self> {
        spec.validate()?;
        if batch_size == 0 {
            return Err(Error::argument("batch_size must be positive"));
        }
        if let Some(&bad) = data.labels.iter().find(|&&y| y >= data.class_count) {
            return Err(Error::argument(format!("label {bad} out of range")));
        }
        Ok(NoisyBatchLoss {
            clean_labels: data.labels.clone(),
            current: data.labels.clone(),
            spec,
            batch_size,
        })
    }
}

impl crate::nn::BatchLoss for NoisyBatchLoss {
    fn labels(&self) -> &[usize] {
        &self.current
    }

    fn loss_and_grad(
        &self,
        logits: &crate::nn::LogitBatch,
        rows: &[usize],
    ) -> (f64, ndarray::Array2<f64>) {
        let n = rows.len() as f64;
        let probs = crate::nn::softmax_with_temperature(logits, 1.0).unwrap();
        let mut grad = probs.clone();
        let mut value = 0.0;
        for (i, &row) in rows.iter().enumerate() {
            let y = self.current[row];
            value -= probs[[i, y]].max(f64::MIN_POSITIVE).ln();
            grad[[i, y]] -= 1.0;
        }
        grad.mapv_inplace(|v| v / n);
        (value / n, grad)
    }

    fn on_epoch_start(&mut self, epoch: usize) {
        let period = self.spec.reshuffle_period_epochs;
        if period == 0 && epoch > 0 {
            return; // fixed corruption drawn at epoch 0
        }
        let draw = if period == 0 { 0 } else { (epoch / period) as u64 };
        self.current.copy_from_slice(&self.clean_labels);
        let seed = derive(self.spec.rng_seed, Stream::Noise, draw, 0);
        corrupt_label_slice(&mut self.current, self.spec.p, self.batch_size, seed);
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    class_count: usize,
    input_dim: usize,
    sample_count: usize,
    /// Rows of (id, label, features).
    samples: Vec<(u64, usize, Vec<f64>)>,
}

pub fn save_labeled_set(data: &LabeledSet, path: &Path) -> Result<()> {
    let samples = (0..data.len())
        .map(|r| (data.ids[r], data.labels[r], data.features.row(r).to_vec()))
        .collect();
    let file = DatasetFile {
        version: DATASET_VERSION,
        class_count: data.class_count,
        input_dim: data.input_dim(),
        sample_count: data.len(),
        samples,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_labeled_set(path: &Path) -> Result<LabeledSet> {
    let file: DatasetFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.version != DATASET_VERSION {
        return Err(Error::argument(format!(
            "unsupported dataset version {}",
            file.version
        )));
    }
    if file.samples.len() != file.sample_count {
        return Err(Error::argument("sample_count does not match rows"));
    }
    let mut features = Array2::zeros((file.sample_count, file.input_dim));
    let mut ids = Vec::with_capacity(file.sample_count);
    let mut labels = Vec::with_capacity(file.sample_count);
    for (r, (id, label, feats)) in file.samples.into_iter().enumerate() {
        if feats.len() != file.input_dim {
            return Err(Error::argument(format!("row {r} has wrong feature count")));
        }
        if label >= file.class_count {
            return Err(Error::argument(format!("row {r} label out of range")));
        }
        for (d, v) in feats.into_iter().enumerate() {
            features[[r, d]] = v;
        }
        ids.push(id);
        labels.push(label);
    }
    Ok(LabeledSet {
        ids,
        features,
        labels,
        class_count: file.class_count,
    })
}

/// Sample-id listing of a partition, for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub core_ids: Vec<u64>,
    pub edges: Vec<EdgeManifest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeManifest {
    pub train_ids: Vec<u64>,
    pub holdout_ids: Vec<u64>,
}

pub fn save_partition_manifest(m: &PartitionManifest, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

pub fn load_partition_manifest(path: &Path) -> Result<PartitionManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
