use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;

/// Glorot/Xavier uniform initialisation: `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn respects_limit_and_seed() {
        let a = glorot_uniform(10, 30, &mut ChaCha8Rng::seed_from_u64(3));
        let b = glorot_uniform(10, 30, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }
}
