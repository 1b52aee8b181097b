//! Data ingestion (IDX image files, synthetic Gaussian blobs) and explicit
//! non-IID partitioning across devices.

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{self, SeedSpace};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub device_id: usize,
    pub samples: Vec<Sample>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_batch(&self, dim: usize) -> Batch {
        let mut features = Vec::with_capacity(self.samples.len() * dim);
        let mut labels = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            features.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        Batch::new(features, dim, labels)
    }

    pub fn label_histogram(&self, num_labels: usize) -> Vec<usize> {
        let mut h = vec![0usize; num_labels];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }
}

/// Per-device, per-label sample counts plus a shuffle seed. The plan is the
/// single source of truth for how non-IID the split is.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub num_devices: usize,
    /// `per_label_counts[d][l]` = samples of label `l` handed to device `d`.
    pub per_label_counts: Vec<Vec<usize>>,
    pub shuffle_seed: u64,
}

impl PartitionPlan {
    pub fn iid(
        num_devices: usize,
        num_labels: usize,
        per_device_per_label: usize,
        seed: u64,
    ) -> Self {
        Self {
            num_devices,
            per_label_counts: vec![vec![per_device_per_label; num_labels]; num_devices],
            shuffle_seed: seed,
        }
    }

    /// One scarce "target" label per device, every other label abundant.
    pub fn target_split(
        targets: &[usize],
        num_labels: usize,
        target_count: usize,
        non_target_count: usize,
        seed: u64,
    ) -> Self {
        let counts = targets
            .iter()
            .map(|&t| {
                (0..num_labels)
                    .map(|l| {
                        if l == t {
                            target_count
                        } else {
                            non_target_count
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            num_devices: targets.len(),
            per_label_counts: counts,
            shuffle_seed: seed,
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_string(),
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let img_bytes = std::fs::read(images_path)?;
    let img_name = images_path.display().to_string();
    let magic = read_be_u32(&img_bytes, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: img_name,
            expected: IDX_IMAGES_MAGIC,
            actual: magic,
        });
    }
    let n = read_be_u32(&img_bytes, 4, &img_name)? as usize;
    let rows = read_be_u32(&img_bytes, 8, &img_name)? as usize;
    let cols = read_be_u32(&img_bytes, 12, &img_name)? as usize;
    let pixel_count = n * rows * cols;
    if img_bytes.len() < 16 + pixel_count {
        return Err(Error::Truncated {
            path: img_name,
            needed: 16 + pixel_count,
            available: img_bytes.len(),
        });
    }

    let lbl_bytes = std::fs::read(labels_path)?;
    let lbl_name = labels_path.display().to_string();
    let magic = read_be_u32(&lbl_bytes, 0, &lbl_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: lbl_name,
            expected: IDX_LABELS_MAGIC,
            actual: magic,
        });
    }
    let n_labels = read_be_u32(&lbl_bytes, 4, &lbl_name)? as usize;
    if n_labels != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    if lbl_bytes.len() < 8 + n {
        return Err(Error::Truncated {
            path: lbl_name,
            needed: 8 + n,
            available: lbl_bytes.len(),
        });
    }

    let dim = rows * cols;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let raw = &img_bytes[16 + i * dim..16 + (i + 1) * dim];
        samples.push(Sample {
            features: raw.iter().map(|b| *b as f64 / 255.0).collect(),
            label: lbl_bytes[8 + i] as usize,
        });
    }
    Ok(samples)
}

/// Write samples back to an IDX pair. Features must be loader-style values
/// in [0,1]; they are re-encoded as round(v*255).
pub fn write_idx(
    samples: &[Sample],
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let n = samples.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for s in samples {
        if s.features.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "idx write",
                expected: rows * cols,
                actual: s.features.len(),
            });
        }
        for v in &s.features {
            img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        lbl.push(s.label as u8);
    }
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lbl)?;
    Ok(())
}

/// Center of blob label `l` in `dim` dimensions. Centers are distinct with
/// pairwise distance >= 4.
pub fn blob_center(label: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    c[label % dim] = 4.0 * (label + 1) as f64;
    c
}

/// Deterministic synthetic corpus: label `l` drawn from an isotropic
/// Gaussian at `blob_center(l)` with std `spread`.
pub fn gen_blobs(
    num_labels: usize,
    input_dim: usize,
    n_per_label: usize,
    spread: f64,
    seed: u64,
) -> Vec<Sample> {
    let mut stream = SeedSpace::new(seed).stream("blobs", &[]);
    let mut samples = Vec::with_capacity(num_labels * n_per_label);
    for label in 0..num_labels {
        let center = blob_center(label, input_dim);
        for _ in 0..n_per_label {
            let features = center
                .iter()
                .map(|c| c + spread * rng::standard_normal(&mut stream))
                .collect();
            samples.push(Sample { features, label });
        }
    }
    samples
}

/// Split samples across devices exactly per the plan, sampling label pools
/// without replacement. Every sample lands on at most one device.
pub fn partition(samples: &[Sample], plan: &PartitionPlan) -> Result<Vec<LocalDataset>> {
    let num_labels = plan
        .per_label_counts
        .iter()
        .map(|row| row.len())
        .max()
        .unwrap_or(0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, s) in samples.iter().enumerate() {
        if s.label < num_labels {
            pools[s.label].push(i);
        }
    }
    let mut deficient = Vec::new();
    for label in 0..num_labels {
        let requested: usize = plan.per_label_counts.iter().map(|row| row[label]).sum();
        if requested > pools[label].len() {
            deficient.push((label, requested, pools[label].len()));
        }
    }
    if !deficient.is_empty() {
        return Err(Error::InfeasiblePartition { deficient });
    }

    let space = SeedSpace::new(plan.shuffle_seed);
    for (label, pool) in pools.iter_mut().enumerate() {
        let mut stream = space.stream("partition", &[label as u64]);
        rng::shuffle(&mut stream, pool);
    }

    let mut cursors = vec![0usize; num_labels];
    let mut devices = Vec::with_capacity(plan.num_devices);
    for d in 0..plan.num_devices {
        let mut local = Vec::new();
        for (label, &count) in plan.per_label_counts[d].iter().enumerate() {
            for _ in 0..count {
                let idx = pools[label][cursors[label]];
                cursors[label] += 1;
                local.push(samples[idx].clone());
            }
        }
        devices.push(LocalDataset {
            device_id: d,
            samples: local,
        });
    }
    Ok(devices)
}

/// Optional helper: deterministic train/validation split of one device's
/// data (default use is 80/20).
pub fn split_train_val(
    dataset: &LocalDataset,
    train_fraction: f64,
    stream: &mut ChaCha8Rng,
) -> (LocalDataset, LocalDataset) {
    let n = dataset.samples.len();
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let order = rng::sample_without_replacement(stream, n, n);
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n - n_train);
    for (i, &idx) in order.iter().enumerate() {
        if i < n_train {
            train.push(dataset.samples[idx].clone());
        } else {
            val.push(dataset.samples[idx].clone());
        }
    }
    (
        LocalDataset {
            device_id: dataset.device_id,
            samples: train,
        },
        LocalDataset {
            device_id: dataset.device_id,
            samples: val,
        },
    )
}
