//! Deterministic inputs shared by the benchmarks.

use parkspot_core::dataset::Label;
use parkspot_core::rng::seeded;
use parkspot_core::{QuadPolygon, RgbImage};
use rand::Rng as _;

/// A smooth synthetic lot image, the size of a PKLot frame.
pub fn lot_image() -> RgbImage {
    RgbImage::from_fn(1280, 720, |x, y| {
        let (u, v) = (x as f32 / 1280.0, y as f32 / 720.0);
        [u, v, (u * 7.0 + v * 3.0).fract()]
    })
}

/// A skewed parking-spot quadrilateral roughly 60×90 pixels.
pub fn spot_quad() -> QuadPolygon {
    QuadPolygon::from_coords([(600.0, 300.0), (665.0, 310.0), (672.0, 402.0), (596.0, 395.0)])
        .expect("fixture quad is valid")
}

/// Uniform values in `[-0.5, 0.5)`.
pub fn random_values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..len).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// An RGB patch of `side`² pixels.
pub fn random_input(side: usize, seed: u64) -> Vec<f64> {
    random_values(side * side * 3, seed)
}

pub fn random_batch(n: usize, side: usize, seed: u64) -> Vec<(Vec<f64>, Label)> {
    (0..n)
        .map(|i| (random_input(side, seed + i as u64), Label::from(i % 2 == 0)))
        .collect()
}
