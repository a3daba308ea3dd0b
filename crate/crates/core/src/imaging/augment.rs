//! Training-time augmentation: flip, saturation, contrast, shift and zoom.

use rand::Rng as _;

use super::{sample_bilinear, ImagePatch, RgbImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Luma weights used as the grey point for saturation scaling.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentationConfig {
    pub flip_probability: f64,
    /// Saturation scale is drawn from `[1 - d, 1 + d]`.
    pub saturation_delta_max: f64,
    /// Contrast scale (around the patch mean) is drawn from `[1 - d, 1 + d]`.
    pub contrast_delta_max: f64,
    /// Per-axis shift is drawn from `±fraction * side` pixels.
    pub shift_fraction_max: f64,
    pub zoom_range: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_probability: 0.5,
            saturation_delta_max: 0.2,
            contrast_delta_max: 0.2,
            shift_fraction_max: 0.1,
            zoom_range: [0.9, 1.1],
        }
    }
}

impl AugmentationConfig {
    /// Configuration that leaves every patch untouched.
    pub fn identity() -> Self {
        AugmentationConfig {
            flip_probability: 0.0,
            saturation_delta_max: 0.0,
            contrast_delta_max: 0.0,
            shift_fraction_max: 0.0,
            zoom_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.flip_probability) {
            return Err(Error::Protocol("flip_probability must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("saturation_delta_max", self.saturation_delta_max),
            ("contrast_delta_max", self.contrast_delta_max),
            ("shift_fraction_max", self.shift_fraction_max),
        ] {
            if !unit(v) {
                return Err(Error::Protocol(format!("{name} must lie in [0, 1]")));
            }
        }
        let [lo, hi] = self.zoom_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::Protocol(
                "zoom_range must satisfy 0 < lo <= 1 <= hi".into(),
            ));
        }
        Ok(())
    }
}

/// Maps a unit draw onto `[1 - delta, 1 + delta]`.
fn scale(u: f64, delta: f64) -> f64 {
    1.0 + delta * (2.0 * u - 1.0)
}

fn remap(img: &RgbImage, source_of: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |i, j| {
        let (x, y) = source_of(f64::from(i), f64::from(j));
        sample_bilinear(img, x, y).map(|c| c as f32)
    })
}

fn flip_horizontal(data: &mut [f64], side: usize) {
    for row in data.chunks_exact_mut(side * 3) {
        for x in 0..side / 2 {
            for c in 0..3 {
                row.swap(x * 3 + c, (side - 1 - x) * 3 + c);
            }
        }
    }
}

fn adjust_saturation(data: &mut [f64], scale: f64) {
    for px in data.chunks_exact_mut(3) {
        let grey: f64 = px.iter().zip(LUMA).map(|(v, w)| v * w).sum();
        for v in px.iter_mut() {
            *v = (grey + scale * (*v - grey)).clamp(0.0, 1.0);
        }
    }
}

/// Scales every value's distance from the patch mean.
fn adjust_contrast(data: &mut [f64], scale: f64) {
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    for v in data.iter_mut() {
        *v = (mean + scale * (*v - mean)).clamp(0.0, 1.0);
    }
}

/// Applies, in order: horizontal flip, saturation scale, contrast scale
/// around the patch mean, translation (edge clamped) and centre zoom.
///
/// Six uniform draws are taken from `rng` on every call, whatever the
/// configuration, so the stream position does not depend on the settings.
pub fn augment(patch: &ImagePatch, cfg: &AugmentationConfig, rng: &mut Rng) -> ImagePatch {
    let draws: [f64; 6] = std::array::from_fn(|_| rng.random::<f64>());
    let side = patch.side() as usize;
    let mut data: Vec<f64> = patch.to_f64();

    if draws[0] < cfg.flip_probability {
        flip_horizontal(&mut data, side);
    }
    let saturation = scale(draws[1], cfg.saturation_delta_max);
    if saturation != 1.0 {
        adjust_saturation(&mut data, saturation);
    }
    let contrast = scale(draws[2], cfg.contrast_delta_max);
    if contrast != 1.0 {
        adjust_contrast(&mut data, contrast);
    }

    let mut img = RgbImage::from_fn(patch.side(), patch.side(), |x, y| {
        let i = (y as usize * side + x as usize) * 3;
        [data[i] as f32, data[i + 1] as f32, data[i + 2] as f32]
    });

    let max_shift = cfg.shift_fraction_max * side as f64;
    let (dx, dy) = (
        max_shift * (2.0 * draws[3] - 1.0),
        max_shift * (2.0 * draws[4] - 1.0),
    );
    if dx != 0.0 || dy != 0.0 {
        img = remap(&img, |x, y| (x - dx, y - dy));
    }

    let [lo, hi] = cfg.zoom_range;
    let zoom = lo + (hi - lo) * draws[5];
    if zoom != 1.0 {
        let c = (side as f64 - 1.0) / 2.0;
        img = remap(&img, |x, y| (c + (x - c) / zoom, c + (y - c) / zoom));
    }

    ImagePatch::from_image(img, patch.kind())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnnotationKind;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn patch_from(side: u32, f: impl Fn(u32, u32) -> [f32; 3]) -> ImagePatch {
        ImagePatch::from_image(RgbImage::from_fn(side, side, f), AnnotationKind::BBox)
    }

    fn textured(side: u32) -> ImagePatch {
        patch_from(side, |x, y| {
            let v = ((x * 31 + y * 17) % 97) as f32 / 96.0;
            [v, (x as f32 / side as f32), 1.0 - v]
        })
    }

    #[test]
    fn identity_config_is_identity() {
        let p = textured(16);
        let out = augment(&p, &AugmentationConfig::identity(), &mut seeded(3));
        assert_eq!(out, p);
    }

    #[test]
    fn double_flip_restores_patch() {
        let cfg = AugmentationConfig {
            flip_probability: 1.0,
            ..AugmentationConfig::identity()
        };
        let p = textured(15);
        let mut rng = seeded(0);
        let once = augment(&p, &cfg, &mut rng);
        assert_ne!(once, p);
        assert_eq!(once.as_image().pixel(0, 3), p.as_image().pixel(14, 3));
        assert_eq!(augment(&once, &cfg, &mut rng), p);
    }

    #[test]
    fn constant_patch_is_contrast_fixed_point() {
        let mut data = vec![0.5; 8 * 8 * 3];
        adjust_contrast(&mut data, 1.2);
        assert!(data.iter().all(|&v| v == 0.5));

        let p = patch_from(8, |_, _| [0.5, 0.5, 0.5]);
        let cfg = AugmentationConfig {
            contrast_delta_max: 0.2,
            ..AugmentationConfig::identity()
        };
        for seed in 0..8 {
            let out = augment(&p, &cfg, &mut seeded(seed));
            assert!(out.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn contrast_spreads_values_around_mean() {
        let mut data = vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.75];
        adjust_contrast(&mut data, 1.2);
        assert!((data[0] - 0.2).abs() < 1e-12 && (data[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn saturation_zero_gives_grey() {
        let mut px = vec![1.0, 0.0, 0.0];
        adjust_saturation(&mut px, 0.0);
        assert!(px.iter().all(|&v| (v - 0.299).abs() < 1e-12));
    }

    #[test]
    fn validate_rejects_bad_ranges() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            zoom_range: [1.1, 1.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_range(seed in any::<u64>(), chain in 1usize..4) {
            let mut rng = seeded(seed);
            let cfg = AugmentationConfig {
                saturation_delta_max: 0.9,
                contrast_delta_max: 0.9,
                shift_fraction_max: 0.3,
                zoom_range: [0.5, 2.0],
                ..Default::default()
            };
            let mut p = textured(12);
            for _ in 0..chain {
                p = augment(&p, &cfg, &mut rng);
                prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn seeded_augmentation_is_reproducible(seed in any::<u64>()) {
            let p = textured(10);
            let cfg = AugmentationConfig::default();
            let a = augment(&p, &cfg, &mut seeded(seed));
            let b = augment(&p, &cfg, &mut seeded(seed));
            prop_assert_eq!(a.data(), b.data());
        }
    }
}
