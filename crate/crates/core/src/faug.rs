//! Multi-hop federated data augmentation: devices relay dummy-padded label
//! indicator vectors (SDI) and compressed seed samples along device chains
//! toward the server, which fits a per-label statistical generator that
//! devices download to synthesize their scarce labels before running FL.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fedavg::{run_fedavg, FedAvgParams};
use crate::metrics::MetricsRow;
use crate::netsim::{Direction, Message, NodeId};
use crate::rng::{self, SeedSpace};
use crate::runner::RunContext;
use crate::summarize::{
    compress_sample, pca_fit, pca_project, pca_reconstruct, CsrSample, PcaBasis,
};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdiKind {
    Private,
    Public,
    Aggregated,
}

/// Binary label-indicator vector. Bit `l` marks label `l` as lacking.
#[derive(Debug, Clone, PartialEq)]
pub struct SdiVector {
    pub bits: Vec<bool>,
    pub kind: SdiKind,
}

impl SdiVector {
    pub fn private(bits: Vec<bool>) -> Self {
        Self {
            bits,
            kind: SdiKind::Private,
        }
    }

    pub fn empty(len: usize, kind: SdiKind) -> Self {
        Self {
            bits: vec![false; len],
            kind,
        }
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn or(&self, other: &SdiVector, kind: SdiKind) -> SdiVector {
        SdiVector {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
            kind,
        }
    }

    pub fn is_subset_of(&self, other: &SdiVector) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Build a device's public SDI from its private SDI and the SDI inherited
/// from the previous hop. When the private indicators are already covered,
/// the inherited vector passes through unchanged and privacy costs nothing;
/// otherwise `d_min` dummy indicators are drawn from the labels absent in
/// (inherited OR private). Returns the public SDI, the newly indicated
/// labels, and a flag for when fewer than `d_min` dummies were available.
pub fn make_public_sdi(
    private: &SdiVector,
    inherited: &SdiVector,
    d_min: usize,
    stream: &mut ChaCha8Rng,
) -> (SdiVector, Vec<usize>, bool) {
    assert_eq!(private.bits.len(), inherited.bits.len());
    let mut public = inherited.or(private, SdiKind::Public);
    let mut truncated = false;
    if !private.is_subset_of(inherited) {
        let available: Vec<usize> = (0..public.bits.len())
            .filter(|&l| !public.bits[l])
            .collect();
        let take = d_min.min(available.len());
        truncated = take < d_min;
        for idx in rng::sample_without_replacement(stream, available.len(), take) {
            public.bits[available[idx]] = true;
        }
    }
    let new_indicators = (0..public.bits.len())
        .filter(|&l| public.bits[l] && !inherited.bits[l])
        .collect();
    (public, new_indicators, truncated)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedPolicy {
    /// Real seed samples uploaded per newly indicated private label.
    pub seeds_per_label: usize,
    /// Coordinate drop fraction applied before CSR encoding.
    pub compression: f64,
}

impl Default for SeedPolicy {
    fn default() -> Self {
        Self {
            seeds_per_label: 4,
            compression: 0.5,
        }
    }
}

/// What one chain delivered to the server.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub aggregated: SdiVector,
    pub seeds: Vec<CsrSample>,
    /// (device id, privacy) in chain order.
    pub privacy: Vec<(usize, f64)>,
    pub dummy_count: u64,
    pub dummy_seed_bytes: u64,
}

/// Relay one chain: each device ORs its additions into the cumulative
/// public SDI and forwards compressed seeds only for its newly indicated
/// labels. Dummy indicators carry noise seeds of the same encoded size.
#[allow(clippy::too_many_arguments)]
pub fn relay_hop(
    ctx: &mut RunContext,
    chain: &[usize],
    privates: &[SdiVector],
    policy: &SeedPolicy,
    d_min: usize,
    sample_shape: (usize, usize),
    num_labels: usize,
    seeds: &SeedSpace,
) -> Result<ChainOutcome> {
    let (rows, cols) = sample_shape;
    let dim = rows * cols;
    let mut inherited = SdiVector::empty(num_labels, SdiKind::Public);
    let mut collected = Vec::new();
    let mut privacy = Vec::new();
    let mut dummy_count = 0u64;
    let mut dummy_seed_bytes = 0u64;

    for (pos, &dev) in chain.iter().enumerate() {
        let private = &privates[dev];
        let mut stream = seeds.stream("sdi-dummies", &[dev as u64]);
        let (public, new_indicators, _truncated) =
            make_public_sdi(private, &inherited, d_min, &mut stream);

        let mut hop_seeds: Vec<CsrSample> = Vec::new();
        let mut hop_dummy_bytes = 0u64;
        for &label in &new_indicators {
            let is_private_label = private.bits[label];
            if is_private_label {
                let have: Vec<&Sample> = ctx.devices[dev]
                    .samples
                    .iter()
                    .filter(|s| s.label == label)
                    .collect();
                let mut mask_stream = seeds.stream("seed-mask", &[dev as u64, label as u64]);
                for sample in have.iter().take(policy.seeds_per_label) {
                    hop_seeds.push(compress_sample(
                        sample,
                        rows,
                        cols,
                        policy.compression,
                        &mut mask_stream,
                    )?);
                }
            } else {
                dummy_count += 1;
                let mut noise_stream = seeds.stream("dummy-seed", &[dev as u64, label as u64]);
                for _ in 0..policy.seeds_per_label {
                    let features: Vec<f64> = (0..dim)
                        .map(|_| rng::uniform_f64(&mut noise_stream))
                        .collect();
                    let dummy = Sample { features, label };
                    let csr =
                        compress_sample(&dummy, rows, cols, policy.compression, &mut noise_stream)?;
                    hop_dummy_bytes += csr.payload_bytes();
                    hop_seeds.push(csr);
                }
            }
        }
        dummy_seed_bytes += hop_dummy_bytes;

        let transmitted_ones = public.ones();
        let device_privacy = if transmitted_ones == 0 {
            1.0
        } else {
            1.0 - private.ones() as f64 / transmitted_ones as f64
        };
        privacy.push((dev, device_privacy));

        let dst = if pos + 1 < chain.len() {
            NodeId::Device(chain[pos + 1])
        } else {
            NodeId::Server
        };
        ctx.ledger.charge(
            &ctx.link,
            &ctx.wire,
            &Message::Sdi { labels: num_labels },
            Direction::Uplink,
            NodeId::Device(dev),
            dst,
        );
        if !hop_seeds.is_empty() {
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::for_csr_batch(&hop_seeds),
                Direction::Uplink,
                NodeId::Device(dev),
                dst,
            );
        }
        collected.extend(hop_seeds);
        inherited = public;
    }
    inherited.kind = SdiKind::Aggregated;
    Ok(ChainOutcome {
        aggregated: inherited,
        seeds: collected,
        privacy,
        dummy_count,
        dummy_seed_bytes,
    })
}

/// Per-label Gaussian in a shared PCA space; the pluggable stand-in for a
/// learned conditional generator.
#[derive(Debug, Clone)]
pub struct AugmenterModel {
    pub basis: PcaBasis,
    pub labels: Vec<Option<LabelGaussian>>,
}

#[derive(Debug, Clone)]
pub struct LabelGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl AugmenterModel {
    pub fn is_fitted(&self, label: usize) -> bool {
        self.labels.get(label).map(|l| l.is_some()).unwrap_or(false)
    }

    /// Real values needed to ship the model: the PCA basis plus each fitted
    /// label's mean, variance and count.
    pub fn float_count(&self) -> usize {
        let k = self.basis.k();
        let d = self.basis.dim();
        let fitted = self.labels.iter().flatten().count();
        k * d + d + k + fitted * (2 * k + 1)
    }
}

/// Shared PCA over the pooled seeds, then a diagonal Gaussian per label
/// with at least two seeds.
pub fn fit_augmenter(seeds: &[Sample], num_labels: usize, pca_k: usize) -> Result<AugmenterModel> {
    if seeds.len() < 2 {
        return Err(Error::NoFittableLabel);
    }
    let d = seeds[0].features.len();
    let k = pca_k.min(d).min(seeds.len() - 1).max(1);
    let basis = pca_fit(seeds, k)?;
    let mut labels: Vec<Option<LabelGaussian>> = vec![None; num_labels];
    for label in 0..num_labels {
        let projected: Vec<Vec<f64>> = seeds
            .iter()
            .filter(|s| s.label == label)
            .map(|s| pca_project(&basis, &s.features))
            .collect();
        if projected.len() < 2 {
            continue;
        }
        let count = projected.len();
        let mut mean = vec![0.0; k];
        for p in &projected {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / count as f64;
            }
        }
        let mut var = vec![0.0; k];
        for p in &projected {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m) / count as f64;
            }
        }
        labels[label] = Some(LabelGaussian { mean, var, count });
    }
    if labels.iter().all(|l| l.is_none()) {
        return Err(Error::NoFittableLabel);
    }
    Ok(AugmenterModel { basis, labels })
}

/// Draw `m` synthetic samples of `label` from its Gaussian in PCA space and
/// map them back through the basis.
pub fn synthesize(
    augmenter: &AugmenterModel,
    label: usize,
    m: usize,
    stream: &mut ChaCha8Rng,
    clamp01: bool,
) -> Result<Vec<Sample>> {
    let gaussian = augmenter
        .labels
        .get(label)
        .and_then(|g| g.as_ref())
        .ok_or(Error::UnfittedLabel(label))?;
    let k = augmenter.basis.k();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let z: Vec<f64> = (0..k)
            .map(|i| gaussian.mean[i] + gaussian.var[i].sqrt() * rng::standard_normal(stream))
            .collect();
        let mut features = pca_reconstruct(&augmenter.basis, &z);
        if clamp01 {
            for f in features.iter_mut() {
                *f = f.clamp(0.0, 1.0);
            }
        }
        out.push(Sample { features, label });
    }
    Ok(out)
}

/// Privacy outcome of one MultFAug run; exported as privacy.json.
#[derive(Debug, Clone, Serialize)]
pub struct PrivacyReport {
    /// 1 - ones(private)/ones(transmitted public), per device in id order.
    pub per_device: Vec<f64>,
    pub mean_privacy: f64,
    pub hop_count: usize,
    pub dummy_count: u64,
    pub dummy_seed_bytes: u64,
    pub total_uplink_bytes: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultfaugParams {
    /// Chain depth; 1 means every device reaches the server directly.
    pub hops: usize,
    /// Dummy indicators inserted when a device reveals new private labels.
    pub d_min: usize,
    pub seed_policy: SeedPolicy,
    /// A label with at most this many local samples counts as lacking.
    pub lack_threshold: usize,
    pub pca_k: usize,
    /// Clamp synthetic features to [0,1] (image-style data).
    pub clamp01: bool,
    /// Skip augmentation entirely (ablation arm).
    pub augment: bool,
    pub fl: FedAvgParams,
}

impl Default for MultfaugParams {
    fn default() -> Self {
        Self {
            hops: 1,
            d_min: 1,
            seed_policy: SeedPolicy::default(),
            lack_threshold: 4,
            pca_k: 8,
            clamp01: false,
            augment: true,
            fl: FedAvgParams::default(),
        }
    }
}

/// Labels each device lacks, from its own histogram.
fn private_sdis(ctx: &RunContext, num_labels: usize, lack_threshold: usize) -> Vec<SdiVector> {
    ctx.devices
        .iter()
        .map(|d| {
            let hist = d.label_histogram(num_labels);
            SdiVector::private(hist.iter().map(|c| *c <= lack_threshold).collect())
        })
        .collect()
}

/// Phase 1 relays SDI and compressed seeds along chains of depth `hops`
/// (ledger round 0); phase 2 fits and downlinks the augmenter; phase 3
/// augments each device's lacking labels to local parity and runs FL.
pub fn run_multfaug(
    ctx: &mut RunContext,
    params: &MultfaugParams,
) -> Result<(Vec<MetricsRow>, PrivacyReport)> {
    let n = ctx.devices.len();
    let num_labels = ctx.spec.num_labels;
    let dim = ctx.spec.input_dim;
    let privates = private_sdis(ctx, num_labels, params.lack_threshold);
    let chains = crate::netsim::Topology::MultihopStar {
        num_devices: n,
        depth: params.hops.max(1),
    }
    .chains();

    ctx.ledger.set_round(0);
    let seeds_space = ctx.seeds;
    let mut per_device = vec![0.0; n];
    let mut all_seeds = Vec::new();
    let mut aggregated = SdiVector::empty(num_labels, SdiKind::Aggregated);
    let mut dummy_count = 0;
    let mut dummy_seed_bytes = 0;
    for chain in &chains {
        let outcome = relay_hop(
            ctx,
            chain,
            &privates,
            &params.seed_policy,
            params.d_min,
            (1, dim),
            num_labels,
            &seeds_space,
        )?;
        for (dev, p) in &outcome.privacy {
            per_device[*dev] = *p;
        }
        aggregated = aggregated.or(&outcome.aggregated, SdiKind::Aggregated);
        all_seeds.extend(outcome.seeds);
        dummy_count += outcome.dummy_count;
        dummy_seed_bytes += outcome.dummy_seed_bytes;
    }
    let relay_uplink_bytes = ctx.ledger.uplink_bytes();

    if params.augment {
        let decoded: Vec<Sample> = all_seeds.iter().map(|c| c.decode()).collect();
        let augmenter = fit_augmenter(&decoded, num_labels, params.pca_k)?;
        let floats = augmenter.float_count();
        for d in 0..n {
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::AugmenterModel { floats },
                Direction::Downlink,
                NodeId::Server,
                NodeId::Device(d),
            );
        }
        for d in 0..n {
            let hist = ctx.devices[d].label_histogram(num_labels);
            let parity = hist.iter().copied().max().unwrap_or(0);
            for label in 0..num_labels {
                if !privates[d].bits[label] || !augmenter.is_fitted(label) {
                    continue;
                }
                let want = parity.saturating_sub(hist[label]);
                if want == 0 {
                    continue;
                }
                let mut stream = seeds_space.stream("augment", &[d as u64, label as u64]);
                let synthetic = synthesize(&augmenter, label, want, &mut stream, params.clamp01)?;
                ctx.devices[d].samples.extend(synthetic);
            }
            ctx.device_batches[d] = ctx.devices[d].to_batch(dim);
        }
    }

    let rows = run_fedavg(ctx, &params.fl)?;
    let mean_privacy = per_device.iter().sum::<f64>() / n as f64;
    let report = PrivacyReport {
        per_device,
        mean_privacy,
        hop_count: params.hops,
        dummy_count,
        dummy_seed_bytes,
        total_uplink_bytes: relay_uplink_bytes,
    };
    Ok((rows, report))
}
