//! The dated evaluation protocol: first half of the capture days for
//! training, undersampling of the majority class, then a stratified
//! validation carve-out.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use super::{DatasetSplit, Label, Labeled, LotImageRecord, Sample, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{
    polygon_to_bbox, polygon_to_fixed_square, AnnotationKind, SpotGeometry, DEFAULT_SQUARE_SIDE,
};
use crate::imaging::{ImagePatch, DEFAULT_INPUT_SIDE};
use crate::rng::{seeded, Rng};

/// Rewrites every polygon spot as `target`. Spots already of the target
/// kind pass through; other non-polygon sources are rejected.
pub fn convert_annotations(
    records: &[LotImageRecord],
    target: AnnotationKind,
    side: u32,
) -> Result<Vec<LotImageRecord>> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for spot in &mut r.spots {
                if spot.kind() == target {
                    continue;
                }
                let SpotGeometry::Polygon(poly) = &spot.geometry else {
                    return Err(Error::InvalidGeometry(format!(
                        "spot {}: cannot convert {} to {target}; conversion needs polygons",
                        spot.spot_id,
                        spot.kind()
                    )));
                };
                spot.geometry = match target {
                    AnnotationKind::Polygon => unreachable!("polygon spots already match"),
                    AnnotationKind::BBox => SpotGeometry::BBox(polygon_to_bbox(poly)),
                    AnnotationKind::Fixed => SpotGeometry::Fixed(polygon_to_fixed_square(poly, side)?),
                };
            }
            Ok(r)
        })
        .collect()
}

/// Sorts the distinct capture days and sends the first
/// `ceil(train_fraction * days)` of them to training, the rest to test.
/// Record order is preserved within each side.
pub fn split_by_days(
    records: &[LotImageRecord],
    train_fraction: f64,
) -> Result<(Vec<LotImageRecord>, Vec<LotImageRecord>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} outside (0, 1]"
        )));
    }
    let days: BTreeSet<NaiveDate> = records.iter().map(|r| r.capture_day).collect();
    if days.is_empty() {
        return Err(Error::EmptyDataset("no capture days".into()));
    }
    let n_train = ((train_fraction * days.len() as f64).ceil() as usize).min(days.len());
    let last_train_day = *days.iter().nth(n_train - 1).expect("n_train >= 1");
    Ok(records
        .iter()
        .cloned()
        .partition(|r| r.capture_day <= last_train_day))
}

/// `[empty, occupied]` counts.
pub fn class_counts<T: Labeled>(samples: &[T]) -> [usize; 2] {
    let mut counts = [0; 2];
    for s in samples {
        counts[s.label().index()] += 1;
    }
    counts
}

/// Randomly drops majority-class samples until both classes have the
/// minority count. Survivors keep their original relative order.
pub fn balance_undersample<T: Labeled>(samples: Vec<T>, rng: &mut Rng) -> Result<Vec<T>> {
    let counts = class_counts(&samples);
    if counts.contains(&0) {
        return Err(Error::Imbalance(format!(
            "cannot balance: {} empty / {} occupied",
            counts[0], counts[1]
        )));
    }
    if counts[0] == counts[1] {
        return Ok(samples);
    }
    let majority = if counts[0] > counts[1] { Label::Empty } else { Label::Occupied };
    let minority_count = counts[0].min(counts[1]);
    let mut keep = vec![false; counts[majority.index()]];
    for i in index::sample(rng, counts[majority.index()], minority_count) {
        keep[i] = true;
    }
    let mut nth_major = 0;
    Ok(samples
        .into_iter()
        .filter(|s| {
            if s.label() != majority {
                return true;
            }
            nth_major += 1;
            keep[nth_major - 1]
        })
        .collect())
}

/// Stratified hold-out: within each class the positions are shuffled and the
/// last `floor(fraction * n_class)` go to validation. Both outputs keep the
/// original sample order.
pub fn carve_validation<T: Labeled>(
    samples: Vec<T>,
    fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut in_validation = vec![false; samples.len()];
    for label in Label::ALL {
        let mut members: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label() == label)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "{} {label} samples; need at least 2 per class",
                members.len()
            )));
        }
        members.shuffle(rng);
        let n_val = (fraction * members.len() as f64).floor() as usize;
        for &i in &members[members.len() - n_val..] {
            in_validation[i] = true;
        }
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (s, v) in samples.into_iter().zip(in_validation) {
        if v {
            validation.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, validation))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProtocolConfig {
    pub annotation_kind: AnnotationKind,
    pub input_side: u32,
    pub square_side: u32,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            annotation_kind: AnnotationKind::Polygon,
            input_side: DEFAULT_INPUT_SIDE,
            square_side: DEFAULT_SQUARE_SIDE,
            train_fraction: 0.5,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

/// A sample plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub image: String,
    pub spot_id: String,
    pub day: NaiveDate,
    pub sample: Sample,
}

impl Labeled for PreparedSample {
    fn label(&self) -> Label {
        self.sample.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub train: Vec<PreparedSample>,
    pub validation: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub raw_counts: RawCounts,
}

/// Labeled-sample counts before balancing, the figures a protocol table
/// reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RawCounts {
    pub train: [usize; 2],
    pub test: [usize; 2],
}

impl PreparedScenario {
    pub fn to_split(&self) -> DatasetSplit {
        let samples = |v: &[PreparedSample]| v.iter().map(|p| p.sample.clone()).collect();
        DatasetSplit {
            train: samples(&self.train),
            validation: samples(&self.validation),
            test: samples(&self.test),
        }
    }
}

fn labeled_samples<F>(records: &[LotImageRecord], patches_for: &F) -> Result<Vec<PreparedSample>>
where
    F: Fn(&LotImageRecord) -> Result<Vec<ImagePatch>> + Sync,
{
    let per_record: Vec<Vec<PreparedSample>> = records
        .par_iter()
        .map(|r| {
            let patches = patches_for(r)?;
            if patches.len() != r.spots.len() {
                return Err(Error::Shape(format!(
                    "{}: {} patches for {} spots",
                    r.image_path.display(),
                    patches.len(),
                    r.spots.len()
                )));
            }
            Ok(r.spots
                .iter()
                .zip(patches)
                .filter_map(|(spot, patch)| {
                    Some(PreparedSample {
                        image: r.image_path.to_string_lossy().into_owned(),
                        spot_id: spot.spot_id.clone(),
                        day: r.capture_day,
                        sample: Sample {
                            patch,
                            label: spot.label()?,
                        },
                    })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

/// Runs the whole protocol over one scenario's records.
///
/// `patches_for` extracts one patch per spot of an (already converted)
/// record; it is called in parallel, and results are merged in record order
/// so the split does not depend on scheduling. Spots without an occupancy
/// label are excluded.
pub fn prepare_scenario<F>(
    scenario: Scenario,
    records: &[LotImageRecord],
    cfg: &ProtocolConfig,
    patches_for: F,
) -> Result<PreparedScenario>
where
    F: Fn(&LotImageRecord) -> Result<Vec<ImagePatch>> + Sync,
{
    let converted = convert_annotations(records, cfg.annotation_kind, cfg.square_side)?;
    let (train_records, test_records) = split_by_days(&converted, cfg.train_fraction)?;
    let train = labeled_samples(&train_records, &patches_for)?;
    let test = labeled_samples(&test_records, &patches_for)?;
    let raw_counts = RawCounts {
        train: class_counts(&train),
        test: class_counts(&test),
    };
    let mut rng = seeded(cfg.seed);
    let balanced = balance_undersample(train, &mut rng)?;
    let (train, validation) = carve_validation(balanced, cfg.validation_fraction, &mut rng)?;
    Ok(PreparedScenario {
        scenario,
        train,
        validation,
        test,
        raw_counts,
    })
}
