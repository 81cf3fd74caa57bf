//! Synthetic identity-structured pose data, the dataset text format, and
//! same-identity pair sampling.
//!
//! A sample's features are `G([θ; n_k]) + noise`, where `θ` is the pose, `n_k`
//! is a per-identity nuisance vector shared by every sample of identity `k`,
//! and `G` is a fixed random two-layer map. The nuisance plays the role of
//! pose-irrelevant appearance: it is constant within an identity and varies
//! across identities.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::head::{PoseAngles, ANGLE_NAMES, NUM_ANGLES};
use crate::seed::{self, Rng};

pub const DATASET_MAGIC: &str = "# rankpose-dataset v1";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub input_dim: usize,
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub noise_std: f64,
    /// Seeds the feature map `G`.
    pub seed: u64,
    /// Seeds the per-identity nuisance vectors; derived from `seed` if unset.
    pub nuisance_seed: Option<u64>,
    /// Seeds poses and additive noise; derived from `seed` if unset.
    pub pose_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_identities: 50,
            samples_per_identity: 20,
            input_dim: 32,
            nuisance_dim: 8,
            nuisance_scale: 1.0,
            noise_std: 0.05,
            seed: 0,
            nuisance_seed: None,
            pose_seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_identities == 0 {
            return bad("num_identities must be >= 1");
        }
        if self.samples_per_identity < 2 {
            return bad("samples_per_identity must be >= 2 so every identity can form pairs");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.nuisance_dim == 0 {
            return bad("nuisance_dim must be >= 1");
        }
        if !(self.nuisance_scale >= 0.0 && self.nuisance_scale.is_finite()) {
            return bad("nuisance_scale must be finite and >= 0");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        Ok(())
    }

    fn nuisance_seed(&self) -> u64 {
        self.nuisance_seed
            .unwrap_or_else(|| seed::derive_seed(self.seed, "nuisance"))
    }

    fn pose_seed(&self) -> u64 {
        self.pose_seed
            .unwrap_or_else(|| seed::derive_seed(self.seed, "pose"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub identity: u64,
    pub features: Vec<f64>,
    pub pose: PoseAngles,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        for (k, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::dims(format!("sample {k} features"), dim, s.features.len()));
            }
            if !s.pose.in_euler_range() {
                return Err(Error::InvalidConfig(format!("sample {k} pose is outside the Euler range")));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.identity_groups().len()
    }

    /// Sample indices grouped by identity, in identity order.
    pub fn identity_groups(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (k, s) in self.samples.iter().enumerate() {
            groups.entry(s.identity).or_default().push(k);
        }
        groups
    }

    pub fn poses(&self) -> Vec<PoseAngles> {
        self.samples.iter().map(|s| s.pose).collect()
    }
}

/// Random two-layer map: `x = B · tanh(A z + a)`.
#[derive(Clone, Debug)]
struct FeatureMap {
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    a: Vec<f64>,
    a_bias: Vec<f64>,
    b: Vec<f64>,
}

impl FeatureMap {
    fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let hidden = (2 * out_dim).max(32);
        let sa = 1.0 / (in_dim as f64).sqrt();
        let sb = 1.0 / (hidden as f64).sqrt();
        let a = (0..in_dim * hidden).map(|_| sa * seed::standard_normal(rng)).collect();
        let a_bias = (0..hidden).map(|_| 0.1 * seed::standard_normal(rng)).collect();
        let b = (0..hidden * out_dim).map(|_| sb * seed::standard_normal(rng)).collect();
        Self {
            in_dim,
            hidden,
            out_dim,
            a,
            a_bias,
            b,
        }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.in_dim);
        let mut h = self.a_bias.clone();
        for (i, zi) in z.iter().enumerate() {
            for (k, hk) in h.iter_mut().enumerate() {
                *hk += self.a[i * self.hidden + k] * zi;
            }
        }
        let mut x = vec![0.0; self.out_dim];
        for (k, hk) in h.iter().enumerate() {
            let hk = hk.tanh();
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += self.b[k * self.out_dim + j] * hk;
            }
        }
        x
    }
}

/// Holds the seed-determined map and nuisance vectors behind a synthetic set.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    cfg: SyntheticConfig,
    map: FeatureMap,
    nuisance: Vec<Vec<f64>>,
}

impl SyntheticGenerator {
    pub fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut map_rng = seed::stream(cfg.seed, "feature-map");
        let map = FeatureMap::new(NUM_ANGLES + cfg.nuisance_dim, cfg.input_dim, &mut map_rng);
        let mut nrng = seed::rng_from(cfg.nuisance_seed());
        let nuisance = (0..cfg.num_identities)
            .map(|_| {
                (0..cfg.nuisance_dim)
                    .map(|_| cfg.nuisance_scale * seed::standard_normal(&mut nrng))
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            map,
            nuisance,
        })
    }

    pub fn nuisance(&self, identity: usize) -> &[f64] {
        &self.nuisance[identity]
    }

    /// Noise-free features `G([θ; n_identity])`.
    pub fn clean_features(&self, pose: PoseAngles, identity: usize) -> Vec<f64> {
        let mut z = pose.to_array().to_vec();
        z.extend_from_slice(&self.nuisance[identity]);
        self.map.apply(&z)
    }

    pub fn generate(&self) -> Dataset {
        let cfg = &self.cfg;
        let mut rng = seed::rng_from(cfg.pose_seed());
        let mut samples = Vec::with_capacity(cfg.num_identities * cfg.samples_per_identity);
        for k in 0..cfg.num_identities {
            for s in 0..cfg.samples_per_identity {
                let pose = PoseAngles::from_array(std::array::from_fn(|_| {
                    rng.gen_range(-FRAC_PI_2..=FRAC_PI_2)
                }));
                let mut features = self.clean_features(pose, k);
                for x in &mut features {
                    *x += cfg.noise_std * seed::standard_normal(&mut rng);
                }
                samples.push(Sample {
                    id: (k * cfg.samples_per_identity + s) as u64,
                    identity: k as u64,
                    features,
                    pose,
                });
            }
        }
        Dataset {
            dim: cfg.input_dim,
            samples,
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    Ok(SyntheticGenerator::new(cfg)?.generate())
}

/// A batch of same-identity index pairs into a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
        }
    }
}

/// Draws pairs by picking an eligible identity uniformly, then two distinct
/// samples of it uniformly.
#[derive(Clone, Debug)]
pub struct PairSampler {
    groups: Vec<Vec<usize>>,
}

impl PairSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let mut excluded = 0usize;
        let groups: Vec<Vec<usize>> = dataset
            .identity_groups()
            .into_values()
            .filter(|g| {
                let ok = g.len() >= 2;
                excluded += usize::from(!ok);
                ok
            })
            .collect();
        if groups.is_empty() {
            return Err(Error::NoEligibleIdentity);
        }
        if excluded > 0 {
            log::warn!("{excluded} identities have a single sample and are excluded from pairing");
        }
        Ok(Self { groups })
    }

    pub fn eligible_identities(&self) -> usize {
        self.groups.len()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> PairBatch {
        let pairs = (0..n)
            .map(|_| {
                let g = &self.groups[rng.gen_range(0..self.groups.len())];
                let i = rng.gen_range(0..g.len());
                let mut j = rng.gen_range(0..g.len() - 1);
                if j >= i {
                    j += 1;
                }
                (g[i], g[j])
            })
            .collect();
        PairBatch { pairs }
    }
}

pub fn sample_pairs(dataset: &Dataset, n: usize, rng: &mut Rng) -> Result<PairBatch> {
    Ok(PairSampler::new(dataset)?.sample(n, rng))
}

pub fn format_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    writeln!(out, "{DATASET_MAGIC} dim={}", dataset.dim).unwrap();
    for s in &dataset.samples {
        write!(out, "{},{},{},{},{}", s.id, s.identity, s.pose.yaw, s.pose.pitch, s.pose.roll).unwrap();
        for x in &s.features {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, format_dataset(dataset)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Parses the text format; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let malformed = |record: usize, message: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        record,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header line".into()))?;
    let dim: usize = header
        .strip_prefix(DATASET_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("dim="))
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| malformed(1, format!("expected header '{DATASET_MAGIC} dim=D', got '{header}'")))?;

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let record = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(malformed(record, format!("expected at least 5 fields, got {}", fields.len())));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| malformed(record, format!("bad id '{}'", fields[0])))?;
        let identity: u64 = fields[1]
            .parse()
            .map_err(|_| malformed(record, format!("bad identity '{}'", fields[1])))?;
        let mut nums = Vec::with_capacity(fields.len() - 2);
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| malformed(record, format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(malformed(record, format!("non-finite value '{f}'")));
            }
            nums.push(v);
        }
        for (d, &angle) in ANGLE_NAMES.iter().enumerate() {
            if nums[d].abs() > FRAC_PI_2 {
                return Err(Error::PoseOutOfRange {
                    path: path.to_path_buf(),
                    record,
                    angle,
                    value: nums[d],
                });
            }
        }
        let features = nums.split_off(NUM_ANGLES);
        if features.len() != dim {
            return Err(Error::dims(
                format!("{}: record {record} feature count", path.display()),
                dim,
                features.len(),
            ));
        }
        samples.push(Sample {
            id,
            identity,
            features,
            pose: PoseAngles::new(nums[0], nums[1], nums[2]),
        });
    }
    Ok(Dataset { dim, samples })
}
