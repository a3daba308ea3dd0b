//! Parking-spot demarcations and the projective rectification of
//! quadrilateral spots.
//!
//! Coordinates are continuous pixel-edge coordinates: pixel `(i, j)` covers
//! `[i, i + 1) x [j, j + 1)` and `y` grows downwards.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polygons with less enclosed area than this (px²) are degenerate. The same
/// bound applies to the triangle spanned by any three corners.
pub const MIN_AREA: f64 = 1e-6;

/// Homographies whose determinant falls below this magnitude are singular.
pub const MIN_DETERMINANT: f64 = 1e-12;

/// Default fixed-square side, in pixels.
pub const DEFAULT_SQUARE_SIDE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

/// Which of the three demarcation styles an annotation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Polygon,
    #[serde(rename = "bbox")]
    BBox,
    Fixed,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 3] = [
        AnnotationKind::Polygon,
        AnnotationKind::BBox,
        AnnotationKind::Fixed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotationKind::Polygon => "polygon",
            AnnotationKind::BBox => "bbox",
            AnnotationKind::Fixed => "fixed",
        }
    }

    /// Number of clicked points that define one spot of this kind.
    pub fn point_count(&self) -> usize {
        match self {
            AnnotationKind::Polygon => 4,
            AnnotationKind::BBox => 2,
            AnnotationKind::Fixed => 1,
        }
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "polygon" => Ok(AnnotationKind::Polygon),
            "bbox" => Ok(AnnotationKind::BBox),
            "fixed" => Ok(AnnotationKind::Fixed),
            other => Err(Error::InvalidGeometry(format!(
                "unknown annotation kind {other:?} (expected polygon, bbox or fixed)"
            ))),
        }
    }
}

/// Shoelace signed area. Positive for corners that run clockwise on screen.
fn signed_area(corners: &[Point; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs() / 2.0
}

/// A four-corner spot outline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPolygon {
    corners: [Point; 4],
}

impl QuadPolygon {
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        if let Some(p) = corners.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite corner ({}, {})",
                p.x, p.y
            )));
        }
        let area = signed_area(&corners).abs();
        if area < MIN_AREA {
            return Err(Error::InvalidGeometry(format!(
                "degenerate quadrilateral (area {area:e})"
            )));
        }
        for i in 0..4 {
            let t = triangle_area(corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
            if t < MIN_AREA {
                return Err(Error::InvalidGeometry(
                    "degenerate quadrilateral (three collinear corners)".into(),
                ));
            }
        }
        Ok(QuadPolygon { corners })
    }

    pub fn from_coords(coords: [(f64, f64); 4]) -> Result<Self> {
        QuadPolygon::new(coords.map(Point::from))
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }

    /// The same outline with clockwise (on screen) winding, starting at the
    /// top-left-most corner (smallest `x + y`, ties broken by `y` then `x`).
    pub fn canonical(&self) -> QuadPolygon {
        let mut c = self.corners;
        if signed_area(&c) < 0.0 {
            c.reverse();
        }
        let start = (0..4)
            .min_by(|&i, &j| {
                let key = |p: Point| (p.x + p.y, p.y, p.x);
                let (a, b) = (key(c[i]), key(c[j]));
                a.0.total_cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.total_cmp(&b.2))
            })
            .unwrap_or(0);
        c.rotate_left(start);
        QuadPolygon { corners: c }
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<QuadPolygon> {
        QuadPolygon::new(self.corners.map(f))
    }
}

/// Axis-aligned rectangle; `min` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    min: Point,
    max: Point,
}

impl BoundingBox {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidGeometry("non-finite bounding box".into()));
        }
        if !(min.x < max.x && min.y < max.y) {
            return Err(Error::InvalidGeometry(format!(
                "bounding box min ({}, {}) must be strictly below max ({}, {})",
                min.x, min.y, max.x, max.y
            )));
        }
        Ok(BoundingBox { min, max })
    }

    /// Box spanned by two opposite corners given in any order.
    pub fn from_corners(a: Point, b: Point) -> Result<Self> {
        BoundingBox::new(
            Point::new(a.x.min(b.x), a.y.min(b.y)),
            Point::new(a.x.max(b.x), a.y.max(b.y)),
        )
    }

    pub fn min(&self) -> Point {
        self.min
    }

    pub fn max(&self) -> Point {
        self.max
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.min.x + self.max.x) / 2.0,
            (self.min.y + self.max.y) / 2.0,
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// True when the two boxes overlap with positive area.
    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
    }
}

/// A square of a dataset-wide side length centred on one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedSquare {
    center: Point,
    side: u32,
}

impl FixedSquare {
    pub fn new(center: Point, side: u32) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidGeometry("fixed square side must be > 0".into()));
        }
        if !center.is_finite() {
            return Err(Error::InvalidGeometry("non-finite square center".into()));
        }
        Ok(FixedSquare { center, side })
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    /// Continuous extent `[c - side/2, c + side/2]` on both axes.
    pub fn extent(&self) -> BoundingBox {
        let h = f64::from(self.side) / 2.0;
        BoundingBox {
            min: Point::new(self.center.x - h, self.center.y - h),
            max: Point::new(self.center.x + h, self.center.y + h),
        }
    }

    /// Integer column/row of the square's top-left pixel.
    pub fn pixel_origin(&self) -> (i64, i64) {
        let h = f64::from(self.side) / 2.0;
        (
            (self.center.x - h).round() as i64,
            (self.center.y - h).round() as i64,
        )
    }
}

/// Geometry of one annotated spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpotGeometry {
    Polygon(QuadPolygon),
    BBox(BoundingBox),
    Fixed(FixedSquare),
}

impl SpotGeometry {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            SpotGeometry::Polygon(_) => AnnotationKind::Polygon,
            SpotGeometry::BBox(_) => AnnotationKind::BBox,
            SpotGeometry::Fixed(_) => AnnotationKind::Fixed,
        }
    }

    /// Axis-aligned region covered by the spot.
    pub fn bounds(&self) -> BoundingBox {
        match self {
            SpotGeometry::Polygon(p) => polygon_to_bbox(p),
            SpotGeometry::BBox(b) => *b,
            SpotGeometry::Fixed(f) => f.extent(),
        }
    }

    /// Points as they appear in annotation documents: 4 corners, the
    /// min/max pair, or the square centre.
    pub fn points(&self) -> Vec<Point> {
        match self {
            SpotGeometry::Polygon(p) => p.corners().to_vec(),
            SpotGeometry::BBox(b) => vec![b.min(), b.max()],
            SpotGeometry::Fixed(f) => vec![f.center()],
        }
    }
}

pub fn polygon_to_bbox(poly: &QuadPolygon) -> BoundingBox {
    let c = poly.corners();
    let (mut min, mut max) = (c[0], c[0]);
    for p in &c[1..] {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    // A valid quad always has positive extent on both axes.
    BoundingBox { min, max }
}

/// Arithmetic mean of the four corners.
pub fn polygon_centroid(poly: &QuadPolygon) -> Point {
    let c = poly.corners();
    Point::new(
        c.iter().map(|p| p.x).sum::<f64>() / 4.0,
        c.iter().map(|p| p.y).sum::<f64>() / 4.0,
    )
}

pub fn polygon_to_fixed_square(poly: &QuadPolygon, side: u32) -> Result<FixedSquare> {
    FixedSquare::new(polygon_centroid(poly), side)
}

/// Output size for rectifying `poly`: the rounded mean length of the top and
/// bottom edges by the rounded mean of the left and right edges (canonical
/// corner order), each at least 1.
pub fn rectified_dims(poly: &QuadPolygon) -> (u32, u32) {
    let c = poly.canonical();
    let c = c.corners();
    let width = (c[0].distance(&c[1]) + c[2].distance(&c[3])) / 2.0;
    let height = (c[1].distance(&c[2]) + c[3].distance(&c[0])) / 2.0;
    let px = |v: f64| (v.round() as u32).max(1);
    (px(width), px(height))
}

/// 3x3 projective transform normalized so that `h[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let scale = m[(2, 2)];
        if !scale.is_finite() || scale.abs() < MIN_DETERMINANT {
            return Err(Error::InvalidGeometry(
                "homography cannot be normalized (h22 ~ 0)".into(),
            ));
        }
        let m = m / scale;
        let det = m.determinant();
        if !det.is_finite() || det.abs() < MIN_DETERMINANT {
            return Err(Error::InvalidGeometry(format!(
                "singular homography (det {det:e})"
            )));
        }
        Ok(Homography { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x / v.z, v.y / v.z)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::InvalidGeometry("homography is not invertible".into()))?;
        Homography::from_matrix(inv)
    }
}

/// Similarity transform moving the points' centroid to the origin with mean
/// distance sqrt(2), and its inverse.
fn conditioning(points: &[Point; 4]) -> (Matrix3<f64>, Matrix3<f64>) {
    let cx = points.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean_dist = points
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / 4.0;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let t_inv = Matrix3::new(1.0 / s, 0.0, cx, 0.0, 1.0 / s, cy, 0.0, 0.0, 1.0);
    (t, t_inv)
}

/// Homography taking each corner of `src` onto the matching corner of
/// `dst`. Both quads are canonicalized first, so corners pair up by position
/// (top-left with top-left, and so on) regardless of input order.
pub fn solve_homography(src: &QuadPolygon, dst: &QuadPolygon) -> Result<Homography> {
    let src = *src.canonical().corners();
    let dst = *dst.canonical().corners();
    let (ts, _) = conditioning(&src);
    let (td, td_inv) = conditioning(&dst);
    let project = |t: &Matrix3<f64>, p: Point| {
        let v = t * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x, v.y)
    };

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let s = project(&ts, src[i]);
        let d = project(&td, dst[i]);
        let (r0, r1) = (2 * i, 2 * i + 1);
        a[(r0, 0)] = s.x;
        a[(r0, 1)] = s.y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -d.x * s.x;
        a[(r0, 7)] = -d.x * s.y;
        b[r0] = d.x;
        a[(r1, 3)] = s.x;
        a[(r1, 4)] = s.y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -d.y * s.x;
        a[(r1, 7)] = -d.y * s.y;
        b[r1] = d.y;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidGeometry("singular homography system".into()))?;
    let normalized = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    Homography::from_matrix(td_inv * normalized * ts)
}
