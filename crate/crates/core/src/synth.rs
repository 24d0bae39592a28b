//! Planted Gaussian blobs per class, for checking the pipeline end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::feature_store::{ClassBounds, DatasetManifest, FeatureRecord, Split, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Blobs per class.
    pub clusters: usize,
    pub points_per_cluster: usize,
    pub dim: usize,
    /// RMS distance of a point from its blob centre; each coordinate gets
    /// noise with standard deviation `spread / sqrt(dim)`.
    pub spread: f64,
    /// Distance between every pair of blob centres within a class.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 5, clusters: 3, points_per_cluster: 30, dim: 64, spread: 1.0, separation: 8.0, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub manifest: DatasetManifest,
    /// Blob index within its class, per manifest record.
    pub planted: Vec<usize>,
}

impl SyntheticData {
    /// Planted labels of one class's members, in manifest order.
    pub fn class_planted(&self, class: usize) -> Vec<usize> {
        self.manifest.class_members(class).into_iter().map(|i| self.planted[i]).collect()
    }
}

/// Uniform draw from a class interval, redrawn on an excluded endpoint.
fn sample_ef(rng: &mut ChaCha8Rng, bounds: &ClassBounds, class: usize) -> f64 {
    let iv = bounds.interval(class).expect("class in range");
    loop {
        let ef = if iv.hi > iv.lo { rng.random_range(iv.lo..=iv.hi) } else { iv.lo };
        if iv.contains(ef) {
            return ef;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, bounds: &ClassBounds) -> Result<SyntheticData, StoreError> {
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(StoreError::Config(format!("separation must be positive, got {}", spec.separation)));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(StoreError::Config(format!("spread must be positive, got {}", spec.spread)));
    }
    if spec.classes != bounds.class_count() {
        return Err(StoreError::Config(format!(
            "{} classes requested but bounds define {}",
            spec.classes,
            bounds.class_count()
        )));
    }
    if spec.clusters == 0 || spec.points_per_cluster == 0 {
        return Err(StoreError::Config("clusters and points per cluster must be at least 1".into()));
    }
    if spec.clusters > spec.dim {
        return Err(StoreError::Config(format!("{} clusters need at least as many dimensions, got {}", spec.clusters, spec.dim)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.spread / (spec.dim as f64).sqrt();
    // centres on distinct axes at sep/sqrt(2): every pair is exactly `separation` apart
    let arm = spec.separation / std::f64::consts::SQRT_2;
    let mut records = Vec::new();
    let mut planted = Vec::new();
    for class in 0..spec.classes {
        let axes = rand::seq::index::sample(&mut rng, spec.dim, spec.clusters).into_vec();
        for (j, &axis) in axes.iter().enumerate() {
            for i in 0..spec.points_per_cluster {
                let feature: Vec<f32> = (0..spec.dim)
                    .map(|d| {
                        let centre = if d == axis { arm } else { 0.0 };
                        let z: f64 = rng.sample(StandardNormal);
                        (centre + noise * z) as f32
                    })
                    .collect();
                let ef = sample_ef(&mut rng, bounds, class);
                let id = format!("syn_c{class}_k{j}_{i:03}");
                records.push(FeatureRecord::new(id, ef, Split::Train, feature, bounds)?);
                planted.push(j);
            }
        }
    }
    let manifest = DatasetManifest::new(records, spec.dim, bounds.clone())?;
    Ok(SyntheticData { manifest, planted })
}
