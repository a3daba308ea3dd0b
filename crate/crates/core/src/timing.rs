//! Per-kind demarcation time from annotation documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotationDocument;
use crate::geometry::AnnotationKind;

/// Published mean seconds per spot: fixed square, bounding box, polygon.
pub const REFERENCE_SECONDS: [(AnnotationKind, f64); 3] = [
    (AnnotationKind::Fixed, 0.9),
    (AnnotationKind::BBox, 2.7),
    (AnnotationKind::Polygon, 3.9),
];

pub fn reference_seconds(kind: AnnotationKind) -> f64 {
    REFERENCE_SECONDS.iter().find(|(k, _)| *k == kind).map(|(_, s)| *s).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindTiming {
    pub count: usize,
    pub total_ms: u64,
    pub mean_seconds: f64,
    pub reference_seconds: f64,
}

/// Only kinds with at least one timed spot appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub kinds: BTreeMap<AnnotationKind, KindTiming>,
}

impl TimingSummary {
    pub fn get(&self, kind: AnnotationKind) -> Option<&KindTiming> {
        self.kinds.get(&kind)
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Spots without `annotation_ms` are left out.
pub fn timing_summary<'a>(docs: impl IntoIterator<Item = &'a AnnotationDocument>) -> TimingSummary {
    let mut totals: BTreeMap<AnnotationKind, (usize, u64)> = BTreeMap::new();
    for doc in docs {
        for spot in &doc.spaces {
            if let Some(ms) = spot.annotation_ms {
                let t = totals.entry(spot.kind()).or_default();
                t.0 += 1;
                t.1 += ms;
            }
        }
    }
    TimingSummary {
        kinds: totals
            .into_iter()
            .map(|(kind, (count, total_ms))| {
                let timing = KindTiming {
                    count,
                    total_ms,
                    mean_seconds: total_ms as f64 / (1000.0 * count as f64),
                    reference_seconds: reference_seconds(kind),
                };
                (kind, timing)
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SpotAnnotation;
    use crate::geometry::{BoundingBox, FixedSquare, Point, SpotGeometry};
    use proptest::prelude::*;

    fn doc(kind: AnnotationKind, times: &[Option<u64>]) -> AnnotationDocument {
        let spaces = times
            .iter()
            .enumerate()
            .map(|(i, &ms)| {
                let geometry = match kind {
                    AnnotationKind::Fixed => SpotGeometry::Fixed(FixedSquare::new(Point::new(10.0, 10.0), 32).unwrap()),
                    _ => SpotGeometry::BBox(BoundingBox::new(Point::new(0.0, 0.0), Point::new(4.0, 4.0)).unwrap()),
                };
                SpotAnnotation { annotation_ms: ms, ..SpotAnnotation::new(i.to_string(), geometry) }
            })
            .collect();
        AnnotationDocument {
            image: "a.jpg".into(),
            kind,
            side: (kind == AnnotationKind::Fixed).then_some(32),
            spaces,
        }
    }

    #[test]
    fn reference_values() {
        assert_eq!(reference_seconds(AnnotationKind::Fixed), 0.9);
        assert_eq!(reference_seconds(AnnotationKind::BBox), 2.7);
        assert_eq!(reference_seconds(AnnotationKind::Polygon), 3.9);
    }

    #[test]
    fn one_spot() {
        let s = timing_summary(&[doc(AnnotationKind::BBox, &[Some(2000)])]);
        assert_eq!(s.get(AnnotationKind::BBox).unwrap().mean_seconds, 2.0);
    }

    #[test]
    fn kinds_aggregate_independently_and_untimed_spots_are_skipped() {
        let docs = [
            doc(AnnotationKind::BBox, &[Some(1000), None, Some(3000)]),
            doc(AnnotationKind::Fixed, &[Some(900)]),
            doc(AnnotationKind::BBox, &[Some(2000)]),
        ];
        let s = timing_summary(&docs);
        assert_eq!(s.kinds.len(), 2);
        let b = s.get(AnnotationKind::BBox).unwrap();
        assert_eq!((b.count, b.total_ms, b.mean_seconds), (3, 6000, 2.0));
        assert_eq!(s.get(AnnotationKind::Fixed).unwrap().mean_seconds, 0.9);
        assert!(timing_summary(&[doc(AnnotationKind::Fixed, &[None])]).is_empty());
    }

    #[test]
    fn json_shape() {
        let s = timing_summary(&[doc(AnnotationKind::Fixed, &[Some(1500)])]);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["kinds"]["fixed"]["mean_seconds"], 1.5);
        assert_eq!(v["kinds"]["fixed"]["reference_seconds"], 0.9);
    }

    proptest! {
        #[test]
        fn mean_matches_total(times in prop::collection::vec(1u64..100_000, 1..40)) {
            let opt: Vec<_> = times.iter().map(|&t| Some(t)).collect();
            let s = timing_summary(&[doc(AnnotationKind::BBox, &opt)]);
            let k = s.get(AnnotationKind::BBox).unwrap();
            prop_assert!((k.mean_seconds - k.total_ms as f64 / (1000.0 * k.count as f64)).abs() < 1e-9);
        }
    }
}
