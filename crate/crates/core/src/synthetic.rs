//! Generated patch tasks for sanity-checking the training stack without a
//! real dataset.

use rand::Rng as _;

use crate::dataset::{Label, Sample};
use crate::geometry::AnnotationKind;
use crate::imaging::ImagePatch;
use crate::rng::seeded;

pub const BLOB_SIDE: u32 = 8;

/// `n` patches of uniform background noise in `[0, 0.6]`, alternating
/// empty/occupied; occupied ones carry a bright 8×8 blob (values in
/// `[0.85, 1]`) at a random position.
pub fn blob_task(n: usize, side: u32, seed: u64) -> Vec<Sample> {
    assert!(side >= BLOB_SIDE, "patch side {side} smaller than the blob");
    let mut rng = seeded(seed);
    let side_us = side as usize;
    (0..n)
        .map(|i| {
            let label = Label::from(i % 2 == 1);
            let mut data: Vec<f32> = (0..side_us * side_us * 3).map(|_| rng.random_range(0.0..0.6)).collect();
            if label == Label::Occupied {
                let x0 = rng.random_range(0..=side - BLOB_SIDE) as usize;
                let y0 = rng.random_range(0..=side - BLOB_SIDE) as usize;
                for y in y0..y0 + BLOB_SIDE as usize {
                    for x in x0..x0 + BLOB_SIDE as usize {
                        for c in 0..3 {
                            data[(y * side_us + x) * 3 + c] = rng.random_range(0.85..=1.0);
                        }
                    }
                }
            }
            Sample {
                patch: ImagePatch::new(side, AnnotationKind::Fixed, data).expect("sized from side"),
                label,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_counts;

    #[test]
    fn balanced_and_reproducible() {
        let a = blob_task(10, 32, 1);
        assert_eq!(class_counts(&a), [5, 5]);
        assert_eq!(a, blob_task(10, 32, 1));
        assert_ne!(a, blob_task(10, 32, 2));
    }

    #[test]
    fn blob_is_present_only_when_occupied() {
        for s in blob_task(20, 16, 3) {
            let bright = s.patch.data().iter().filter(|&&v| v >= 0.85).count();
            match s.label {
                Label::Occupied => assert!(bright >= 8 * 8 * 3),
                Label::Empty => assert_eq!(bright, 0),
            }
        }
    }
}
