//! Synthetic Gaussian-mixture data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Rank of each cluster's covariance. Points within a cluster vary along
    /// this many random directions, plus a small isotropic term. Defaults to
    /// `dim`, which gives full-rank clusters.
    pub latent_dim: usize,
}

impl SyntheticSpec {
    pub fn new(n: usize, dim: usize, clusters: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            dim,
            clusters: clusters.max(1),
            seed,
            latent_dim: dim,
        }
    }
}

/// Cluster centers and per-cluster projection matrices.
pub struct Mixture {
    dim: usize,
    latent: usize,
    centers: Vec<Vec<f32>>,
    bases: Vec<Vec<f32>>,
}

const CENTER_SCALE: f32 = 1.0;
const SPREAD: f32 = 0.35;
const NOISE: f32 = 0.02;

impl Mixture {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC1A5_7E25);
        let latent = spec.latent_dim.clamp(1, spec.dim);
        let centers = (0..spec.clusters)
            .map(|_| {
                (0..spec.dim)
                    .map(|_| rng.sample::<f32, _>(StandardNormal) * CENTER_SCALE)
                    .collect()
            })
            .collect();
        let scale = SPREAD / (latent as f32).sqrt();
        let bases = (0..spec.clusters)
            .map(|_| {
                (0..spec.dim * latent)
                    .map(|_| rng.sample::<f32, _>(StandardNormal) * scale)
                    .collect()
            })
            .collect();
        Mixture {
            dim: spec.dim,
            latent,
            centers,
            bases,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f32> {
        let c = rng.gen_range(0..self.centers.len());
        let z: Vec<f32> = (0..self.latent).map(|_| rng.sample(StandardNormal)).collect();
        let noise = Normal::new(0.0f32, NOISE).expect("valid normal");
        let basis = &self.bases[c];
        (0..self.dim)
            .map(|i| {
                let row = &basis[i * self.latent..(i + 1) * self.latent];
                let proj: f32 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                self.centers[c][i] + proj + noise.sample(rng)
            })
            .collect()
    }
}

/// `spec.n` points with ids `0..n`.
pub fn generate(spec: &SyntheticSpec) -> VectorSet {
    generate_with_offset(spec, spec.n, 0, spec.seed)
}

/// `count` points from the same mixture as `spec`, with ids starting at
/// `first_id`, drawn from the stream seeded by `stream_seed`.
pub fn generate_with_offset(spec: &SyntheticSpec, count: usize, first_id: u64, stream_seed: u64) -> VectorSet {
    let mixture = Mixture::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut set = VectorSet::new(spec.dim);
    for i in 0..count {
        set.push(first_id + i as u64, &mixture.sample(&mut rng))
            .expect("generated vectors have the mixture dimension");
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticSpec::new(50, 8, 3, 1);
        let a = generate(&spec);
        assert_eq!(a.len(), 50);
        assert_eq!(a.dim(), 8);
        assert_eq!(a, generate(&spec));
        assert_ne!(a, generate(&SyntheticSpec::new(50, 8, 3, 2)));
    }
}
