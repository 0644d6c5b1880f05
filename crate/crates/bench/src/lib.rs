//! Shared fixtures for the benchmarks.

use streamann::experiment::synthetic::{generate, generate_with_offset, SyntheticSpec};
use streamann::VectorSet;

/// Clustered points and queries drawn from the same mixture.
pub fn fixture(n: usize, dim: usize, queries: usize) -> (VectorSet, VectorSet) {
    let spec = SyntheticSpec::new(n, dim, 16, 7);
    (generate(&spec), generate_with_offset(&spec, queries, 0, 8))
}
