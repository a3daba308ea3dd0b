//! Annotation documents exchanged with the annotation tool.
//!
//! ```json
//! {"image": "lot.jpg", "kind": "fixed", "side": 32,
//!  "spaces": [{"id": "1", "points": [[100, 80]], "occupied": true, "annotation_ms": 870}]}
//! ```
//!
//! Polygons carry 4 points, boxes 2 (min, max) and fixed squares 1 (the
//! centre) with the document-level `side`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::SpotAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{AnnotationKind, BoundingBox, FixedSquare, Point, QuadPolygon, SpotGeometry};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDocument {
    pub image: String,
    pub kind: AnnotationKind,
    /// Square side; present exactly for fixed-square documents.
    pub side: Option<u32>,
    pub spaces: Vec<SpotAnnotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    image: String,
    kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<u32>,
    spaces: Vec<RawSpace>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    id: String,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    occupied: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotation_ms: Option<u64>,
}

fn to_geometry(
    kind: AnnotationKind,
    side: Option<u32>,
    points: &[Vec<f64>],
    at: &str,
) -> Result<SpotGeometry> {
    let path = format!("{at}.points");
    if points.len() != kind.point_count() {
        return Err(Error::schema(
            path,
            format!("{kind} needs {} points, got {}", kind.point_count(), points.len()),
        ));
    }
    let mut pts = Vec::with_capacity(points.len());
    for (j, p) in points.iter().enumerate() {
        match p.as_slice() {
            [x, y] if x.is_finite() && y.is_finite() => pts.push(Point::new(*x, *y)),
            _ => {
                return Err(Error::schema(
                    format!("{path}[{j}]"),
                    "expected [x, y] with finite coordinates",
                ))
            }
        }
    }
    let invalid = |e: Error| Error::schema(path.clone(), e.to_string());
    Ok(match kind {
        AnnotationKind::Polygon => {
            SpotGeometry::Polygon(QuadPolygon::new([pts[0], pts[1], pts[2], pts[3]]).map_err(invalid)?)
        }
        AnnotationKind::BBox => SpotGeometry::BBox(BoundingBox::new(pts[0], pts[1]).map_err(invalid)?),
        AnnotationKind::Fixed => {
            let side = side.ok_or_else(|| Error::schema("side", "fixed documents require side"))?;
            SpotGeometry::Fixed(FixedSquare::new(pts[0], side).map_err(invalid)?)
        }
    })
}

fn validate(raw: RawDocument) -> Result<AnnotationDocument> {
    match (raw.kind, raw.side) {
        (AnnotationKind::Fixed, None) => {
            return Err(Error::schema("side", "fixed documents require side"))
        }
        (AnnotationKind::Fixed, Some(0)) => return Err(Error::schema("side", "side must be > 0")),
        (AnnotationKind::Polygon | AnnotationKind::BBox, Some(_)) => {
            return Err(Error::schema("side", "side only applies to fixed documents"))
        }
        _ => {}
    }
    let mut ids = HashSet::new();
    let mut spaces = Vec::with_capacity(raw.spaces.len());
    for (i, s) in raw.spaces.into_iter().enumerate() {
        let at = format!("spaces[{i}]");
        if s.id.is_empty() {
            return Err(Error::schema(format!("{at}.id"), "empty id"));
        }
        if !ids.insert(s.id.clone()) {
            return Err(Error::schema(format!("{at}.id"), format!("duplicate id {:?}", s.id)));
        }
        if s.annotation_ms == Some(0) {
            return Err(Error::schema(format!("{at}.annotation_ms"), "must be > 0"));
        }
        spaces.push(SpotAnnotation {
            geometry: to_geometry(raw.kind, raw.side, &s.points, &at)?,
            spot_id: s.id,
            occupied: s.occupied,
            annotation_ms: s.annotation_ms,
        });
    }
    Ok(AnnotationDocument {
        image: raw.image,
        kind: raw.kind,
        side: raw.side,
        spaces,
    })
}

pub fn read_annotation_json(bytes: &[u8]) -> Result<AnnotationDocument> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let raw: RawDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "$".to_owned() } else { path };
        Error::schema(path, e.into_inner().to_string())
    })?;
    validate(raw)
}

/// Serializes a document after checking it against the same rules the
/// reader enforces.
pub fn write_annotation_json(doc: &AnnotationDocument) -> Result<Vec<u8>> {
    let mut spaces = Vec::with_capacity(doc.spaces.len());
    for (i, s) in doc.spaces.iter().enumerate() {
        if s.kind() != doc.kind {
            return Err(Error::schema(
                format!("spaces[{i}].points"),
                format!("{} spot in a {} document", s.kind(), doc.kind),
            ));
        }
        if let SpotGeometry::Fixed(sq) = &s.geometry {
            if Some(sq.side()) != doc.side {
                return Err(Error::schema("side", "square side differs from document side"));
            }
        }
        spaces.push(RawSpace {
            id: s.spot_id.clone(),
            points: s.geometry.points().iter().map(|p| vec![p.x, p.y]).collect(),
            occupied: s.occupied,
            annotation_ms: s.annotation_ms,
        });
    }
    let raw = RawDocument {
        image: doc.image.clone(),
        kind: doc.kind,
        side: doc.side,
        spaces,
    };
    let bytes = serde_json::to_vec_pretty(&raw).map_err(|e| Error::Format(e.to_string()))?;
    // Round through the validator so invalid documents never get written.
    validate(serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema_path(r: Result<AnnotationDocument>) -> String {
        match r {
            Err(Error::Schema { path, .. }) => path,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn reads_each_kind() {
        let doc = read_annotation_json(
            br#"{"image":"a.jpg","kind":"polygon","spaces":[{"id":"1","points":[[0,0],[4,0],[4,4],[0,4]],"occupied":true,"annotation_ms":3900}]}"#,
        )
        .unwrap();
        assert_eq!(doc.spaces[0].annotation_ms, Some(3900));
        assert_eq!(doc.spaces[0].kind(), AnnotationKind::Polygon);

        let doc = read_annotation_json(
            br#"{"image":"a.jpg","kind":"bbox","spaces":[{"id":"1","points":[[10,10],[50,40]]}]}"#,
        )
        .unwrap();
        assert_eq!(doc.spaces[0].occupied, None);

        let doc = read_annotation_json(
            br#"{"image":"a.jpg","kind":"fixed","side":32,"spaces":[{"id":"1","points":[[100,80]]}]}"#,
        )
        .unwrap();
        let SpotGeometry::Fixed(sq) = doc.spaces[0].geometry else { panic!() };
        assert_eq!((sq.center(), sq.side()), (Point::new(100., 80.), 32));
    }

    #[test]
    fn five_point_polygon_names_points_path() {
        let r = read_annotation_json(
            br#"{"image":"a","kind":"polygon","spaces":[{"id":"1","points":[[0,0],[4,0],[4,4],[0,4],[1,1]]}]}"#,
        );
        assert_eq!(schema_path(r), "spaces[0].points");
    }

    #[test]
    fn fixed_without_side() {
        let r = read_annotation_json(br#"{"image":"a","kind":"fixed","spaces":[{"id":"1","points":[[1,1]]}]}"#);
        assert_eq!(schema_path(r), "side");
    }

    #[test]
    fn other_violations_carry_paths() {
        let r = read_annotation_json(br#"{"image":"a","kind":"bbox","spaces":[{"id":"1","points":[[5,5],[1,1]]}]}"#);
        assert_eq!(schema_path(r), "spaces[0].points");
        let r = read_annotation_json(br#"{"image":"a","kind":"bbox","spaces":[{"id":"1","points":[[1,1],[5]]}]}"#);
        assert_eq!(schema_path(r), "spaces[0].points[1]");
        let r = read_annotation_json(br#"{"image":"a","kind":"bbox","spaces":[{"id":"1","points":[[1,1],[5,5]],"occupied":"yes"}]}"#);
        assert_eq!(schema_path(r), "spaces[0].occupied");
        let r = read_annotation_json(br#"{"image":"a","kind":"circle","spaces":[]}"#);
        assert_eq!(schema_path(r), "kind");
        let r = read_annotation_json(br#"{"image":"a","kind":"bbox","spaces":[{"id":"1","points":[[1,1],[5,5]],"annotation_ms":0}]}"#);
        assert_eq!(schema_path(r), "spaces[0].annotation_ms");
        let r = read_annotation_json(br#"{"image":"a","kind":"bbox","spaces":[{"id":"1","points":[[1,1],[5,5]]},{"id":"1","points":[[1,1],[5,5]]}]}"#);
        assert_eq!(schema_path(r), "spaces[1].id");
    }

    #[test]
    fn writer_rejects_mixed_kinds() {
        let poly = QuadPolygon::from_coords([(0., 0.), (4., 0.), (4., 4.), (0., 4.)]).unwrap();
        let doc = AnnotationDocument {
            image: "a".into(),
            kind: AnnotationKind::BBox,
            side: None,
            spaces: vec![SpotAnnotation::new("1", SpotGeometry::Polygon(poly))],
        };
        assert!(write_annotation_json(&doc).is_err());
    }

    fn arb_doc() -> impl Strategy<Value = AnnotationDocument> {
        let space = (
            0.0..500.0f64,
            0.0..500.0f64,
            1.0..80.0f64,
            1.0..80.0f64,
            prop::option::of(any::<bool>()),
            prop::option::of(1u64..100_000),
        );
        (0usize..3, 1u32..64, prop::collection::vec(space, 0..6)).prop_map(|(k, side, spaces)| {
            let kind = AnnotationKind::ALL[k];
            let spaces = spaces
                .into_iter()
                .enumerate()
                .map(|(i, (x, y, w, h, occ, ms))| {
                    let geometry = match kind {
                        AnnotationKind::Polygon => SpotGeometry::Polygon(
                            QuadPolygon::from_coords([(x, y), (x + w, y + 0.5), (x + w, y + h), (x - 0.25, y + h)]).unwrap(),
                        ),
                        AnnotationKind::BBox => SpotGeometry::BBox(
                            BoundingBox::new(Point::new(x, y), Point::new(x + w, y + h)).unwrap(),
                        ),
                        AnnotationKind::Fixed => SpotGeometry::Fixed(FixedSquare::new(Point::new(x, y), side).unwrap()),
                    };
                    SpotAnnotation { spot_id: format!("s{i}"), geometry, occupied: occ, annotation_ms: ms }
                })
                .collect();
            AnnotationDocument {
                image: "lot.jpg".into(),
                kind,
                side: (kind == AnnotationKind::Fixed).then_some(side),
                spaces,
            }
        })
    }

    proptest! {
        #[test]
        fn write_read_identity(doc in arb_doc()) {
            let bytes = write_annotation_json(&doc).unwrap();
            prop_assert_eq!(read_annotation_json(&bytes).unwrap(), doc);
        }
    }
}
