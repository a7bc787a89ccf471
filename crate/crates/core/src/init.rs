use ndarray::Array2;
use rand::Rng;

/// `uniform(-s, s)` with `s = 1 / sqrt(fan_in)`.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-s..s))
}
