//! Euclidean distance. Hot paths work on squared distances; ordering is the
//! same and the square root is only taken when a distance is reported.

use crate::error::{Error, Result};

/// Squared Euclidean distance. Callers guarantee `a.len() == b.len()`.
#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            let d = ca[i] - cb[i];
            acc[i] += d * d;
        }
    }
    let mut sum = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(l2_squared(a, b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn identity_is_zero() {
        let x = [1.5f32, -2.0, 3.25];
        assert_eq!(l2_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn mismatched_dims() {
        assert!(matches!(
            l2_distance(&[0.0, 1.0], &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-100.0f32..100.0, dim)
    }

    proptest! {
        #[test]
        fn matches_double_precision(dim in 1usize..70, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let b: Vec<f32> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let got = l2_distance(&a, &b).unwrap() as f64;
            let want = reference(&a, &b);
            prop_assert!((got - want).abs() <= 1e-4 * want.max(1e-6));
        }

        #[test]
        fn symmetric_and_triangle((a, b, c) in (1usize..40).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d), vec_strategy(d)))) {
            let ab = l2_distance(&a, &b).unwrap();
            let ba = l2_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-4 * ab.max(1e-6));
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-4) + 1e-6);
        }
    }
}
