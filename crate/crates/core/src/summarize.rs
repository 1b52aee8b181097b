//! Data summarization primitives: per-label statistics, PCA by deflated
//! power iteration, lightweight importance-sampled coresets, and the
//! random-masking sample compression with CSR encoding used when seed
//! samples are relayed.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::rng::{self, SeedSpace};
use rand_chacha::ChaCha8Rng;

/// CSR wire costs: 4 bytes per value, 2 per column index, 4 per row_ptr
/// entry. Dense encodings elsewhere use `wire_bytes` per element.
pub const CSR_VALUE_BYTES: u64 = 4;
pub const CSR_COL_BYTES: u64 = 2;
pub const CSR_ROWPTR_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance, elementwise.
    pub variance: Vec<f64>,
    pub sum: Vec<f64>,
    /// Per-coordinate median; the lower of the two middles for even counts.
    pub median: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary {
    pub dim: usize,
    /// Indexed by label; `None` when the label has no samples.
    pub per_label: Vec<Option<LabelStats>>,
}

impl StatSummary {
    pub fn total_count(&self) -> usize {
        self.per_label.iter().flatten().map(|s| s.count).sum()
    }
}

/// Exact per-label statistics over the dataset.
pub fn stat_summary(samples: &[Sample], num_labels: usize) -> Result<StatSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = samples[0].features.len();
    let mut buckets: Vec<Vec<&Sample>> = vec![Vec::new(); num_labels];
    for s in samples {
        if s.label >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                num_labels,
            });
        }
        buckets[s.label].push(s);
    }
    let per_label = buckets
        .iter()
        .map(|bucket| {
            if bucket.is_empty() {
                return None;
            }
            let count = bucket.len();
            let mut sum = vec![0.0; dim];
            for s in bucket {
                for (acc, v) in sum.iter_mut().zip(&s.features) {
                    *acc += *v;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
            let mut variance = vec![0.0; dim];
            for s in bucket {
                for ((acc, v), m) in variance.iter_mut().zip(&s.features).zip(&mean) {
                    let d = v - m;
                    *acc += d * d;
                }
            }
            for v in variance.iter_mut() {
                *v /= count as f64;
            }
            let mut median = vec![0.0; dim];
            let mut column = vec![0.0; count];
            for (j, m) in median.iter_mut().enumerate() {
                for (i, s) in bucket.iter().enumerate() {
                    column[i] = s.features[j];
                }
                column.sort_by(|a, b| a.partial_cmp(b).unwrap());
                *m = column[(count - 1) / 2];
            }
            Some(LabelStats {
                count,
                mean,
                variance,
                sum,
                median,
            })
        })
        .collect();
    Ok(StatSummary { dim, per_label })
}

#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// k orthonormal components, each of length d.
    pub components: Vec<Vec<f64>>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let proj = linalg::dot(v, b);
        linalg::axpy(v, -proj, b);
    }
}

/// Top-k eigenpairs of the (1/n)-normalized sample covariance, by power
/// iteration with deflation.
pub fn pca_fit(samples: &[Sample], k: usize) -> Result<PcaBasis> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = samples.len();
    let d = samples[0].features.len();
    if k == 0 || k > d || k > n.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "k={k} infeasible for n={n}, d={d} (need 1 <= k <= min(n-1, d))"
        )));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += *v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = DenseMatrix::zeros(d, d);
    for s in samples {
        let centered: Vec<f64> = s.features.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..d {
            for b in 0..d {
                cov.data[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    for v in cov.data.iter_mut() {
        *v /= n as f64;
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let space = SeedSpace::new(0x9ca_ba515);
    for comp in 0..k {
        let mut stream = space.stream("pca-start", &[comp as u64]);
        let mut v: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut stream)).collect();
        orthogonalize(&mut v, &components);
        let nv = linalg::norm2(&v);
        let mut rank_exhausted = nv < 1e-12;
        if !rank_exhausted {
            v.iter_mut().for_each(|x| *x /= nv);
            for _ in 0..POWER_MAX_ITER {
                let mut w = cov.matvec(&v);
                orthogonalize(&mut w, &components);
                let nw = linalg::norm2(&w);
                if nw < 1e-300 {
                    rank_exhausted = true;
                    break;
                }
                w.iter_mut().for_each(|x| *x /= nw);
                let delta: f64 = w
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                v = w;
                if delta < POWER_TOL {
                    break;
                }
            }
        }
        if rank_exhausted {
            // data rank is below k: complete with any unit vector orthogonal
            // to the basis so far, paired with eigenvalue 0
            v = complete_basis_vector(d, &components);
            eigenvalues.push(0.0);
            components.push(v);
            continue;
        }
        let lambda = linalg::dot(&v, &cov.matvec(&v)).max(0.0);
        eigenvalues.push(lambda);
        components.push(v);
    }
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

fn complete_basis_vector(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        let n = linalg::norm2(&e);
        if n > 1e-8 {
            e.iter_mut().for_each(|x| *x /= n);
            return e;
        }
    }
    unreachable!("fewer than d basis vectors must leave a free direction");
}

/// Mean-centered projection of one feature vector onto the basis.
pub fn pca_project(basis: &PcaBasis, features: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = features
        .iter()
        .zip(&basis.mean)
        .map(|(v, m)| v - m)
        .collect();
    basis
        .components
        .iter()
        .map(|c| linalg::dot(c, &centered))
        .collect()
}

/// Map a k-dimensional projection back to feature space.
pub fn pca_reconstruct(basis: &PcaBasis, projected: &[f64]) -> Vec<f64> {
    let mut out = basis.mean.clone();
    for (coef, comp) in projected.iter().zip(&basis.components) {
        linalg::axpy(&mut out, *coef, comp);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Coreset {
    pub samples: Vec<Sample>,
    pub weights: Vec<f64>,
}

/// Lightweight coreset: importance sampling with
/// `q(x) = 1/(2n) + dist²(x, μ) / (2 Σ dist²)` and Horvitz-Thompson
/// weights `1/(m·q)`.
pub fn coreset_lightweight(samples: &[Sample], m: usize, seed: u64) -> Result<Coreset> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "coreset size m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    let d = samples[0].features.len();
    let mut mu = vec![0.0; d];
    for s in samples {
        for (acc, v) in mu.iter_mut().zip(&s.features) {
            *acc += *v;
        }
    }
    for v in mu.iter_mut() {
        *v /= n as f64;
    }
    let dist2: Vec<f64> = samples
        .iter()
        .map(|s| {
            s.features
                .iter()
                .zip(&mu)
                .map(|(v, m)| (v - m) * (v - m))
                .sum()
        })
        .collect();
    let total: f64 = dist2.iter().sum();
    let q: Vec<f64> = if total < 1e-300 {
        vec![1.0 / n as f64; n]
    } else {
        dist2
            .iter()
            .map(|d2| 0.5 / n as f64 + 0.5 * d2 / total)
            .collect()
    };
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for p in &q {
        acc += p;
        cumulative.push(acc);
    }
    let norm = acc; // guards tiny float drift away from 1.0
    let mut stream = SeedSpace::new(seed).stream("coreset", &[]);
    let mut picked = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        let u = rng::uniform_f64(&mut stream) * norm;
        let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(n - 1),
            Err(i) => i.min(n - 1),
        };
        picked.push(samples[idx].clone());
        weights.push(1.0 / (m as f64 * q[idx]));
    }
    Ok(Coreset {
        samples: picked,
        weights,
    })
}

/// CSR-encoded single sample with explicit (rows, cols) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrSample {
    pub values: Vec<f64>,
    pub col_idx: Vec<u16>,
    pub row_ptr: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub label: usize,
}

impl CsrSample {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Wire cost under the documented CSR byte model.
    pub fn payload_bytes(&self) -> u64 {
        self.values.len() as u64 * CSR_VALUE_BYTES
            + self.col_idx.len() as u64 * CSR_COL_BYTES
            + self.row_ptr.len() as u64 * CSR_ROWPTR_BYTES
    }

    /// Expand back to a dense sample (the masked original, exactly).
    pub fn decode(&self) -> Sample {
        let mut features = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let start = self.row_ptr[r] as usize;
            let end = self.row_ptr[r + 1] as usize;
            for i in start..end {
                features[r * self.cols + self.col_idx[i] as usize] = self.values[i];
            }
        }
        Sample {
            features,
            label: self.label,
        }
    }
}

fn csr_encode(features: &[f64], rows: usize, cols: usize, label: usize) -> CsrSample {
    let mut values = Vec::new();
    let mut col_idx = Vec::new();
    let mut row_ptr = Vec::with_capacity(rows + 1);
    row_ptr.push(0u32);
    for r in 0..rows {
        for c in 0..cols {
            let v = features[r * cols + c];
            if v != 0.0 {
                values.push(v);
                col_idx.push(c as u16);
            }
        }
        row_ptr.push(values.len() as u32);
    }
    CsrSample {
        values,
        col_idx,
        row_ptr,
        rows,
        cols,
        label,
    }
}

/// Zero `floor(c·d)` uniformly chosen coordinates of the sample and encode
/// the result as CSR. Decoding reproduces the masked sample exactly.
pub fn compress_sample(
    sample: &Sample,
    rows: usize,
    cols: usize,
    drop_fraction: f64,
    stream: &mut ChaCha8Rng,
) -> Result<CsrSample> {
    let d = rows * cols;
    if sample.features.len() != d {
        return Err(Error::DimMismatch {
            context: "compress sample",
            expected: d,
            actual: sample.features.len(),
        });
    }
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop fraction {drop_fraction} must be in [0, 1)"
        )));
    }
    let drop = (drop_fraction * d as f64).floor() as usize;
    let mut masked = sample.features.clone();
    for idx in rng::sample_without_replacement(stream, d, drop) {
        masked[idx] = 0.0;
    }
    Ok(csr_encode(&masked, rows, cols, sample.label))
}

/// Mean pairwise Euclidean distance between decoded samples; proxy metric
/// for how dissimilar a compressed batch has become.
pub fn mean_pairwise_distance(samples: &[Sample]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = samples[i]
                .features
                .iter()
                .zip(&samples[j].features)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d2.sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}
