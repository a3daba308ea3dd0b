//! PKLot ground-truth XML.
//!
//! ```xml
//! <parking id="ufpr04">
//!   <space id="1" occupied="0">
//!     <rotatedRect>
//!       <center x="651" y="636" /> <size w="57" h="93" /> <angle d="-74" />
//!     </rotatedRect>
//!     <contour>
//!       <point x="604" y="622" /> ... four points ...
//!     </contour>
//!   </space>
//! </parking>
//! ```
//!
//! Element names are matched case-insensitively; the public distribution
//! mixes `point` and `Point`.

use roxmltree::{Document, Node};

use super::SpotAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{Point, QuadPolygon, SpotGeometry};

/// The `rotatedRect` block. Parsed for completeness; rectification works
/// from the contour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PklotSpace {
    pub annotation: SpotAnnotation,
    pub rotated_rect: Option<RotatedRect>,
}

fn named<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name().eq_ignore_ascii_case(name))
}

fn number(node: Node, attr: &str, space: &str) -> Result<f64> {
    let raw = node.attribute(attr).ok_or_else(|| {
        Error::parse(
            Some(space),
            format!("<{}> lacks attribute {attr}", node.tag_name().name()),
        )
    })?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(Some(space), format!("{attr}={raw:?} is not a number")))
}

fn parse_occupied(raw: Option<&str>, space: &str) -> Result<Option<bool>> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some("1") | Some("true") => Ok(Some(true)),
        Some("0") | Some("false") => Ok(Some(false)),
        Some(other) => Err(Error::parse(
            Some(space),
            format!("occupied={other:?} is not 0/1"),
        )),
    }
}

fn parse_rotated_rect(node: Node, space: &str) -> Result<Option<RotatedRect>> {
    let Some(rr) = named(node, "rotatedRect") else {
        return Ok(None);
    };
    let (Some(center), Some(size), Some(angle)) =
        (named(rr, "center"), named(rr, "size"), named(rr, "angle"))
    else {
        return Ok(None);
    };
    Ok(Some(RotatedRect {
        center: Point::new(number(center, "x", space)?, number(center, "y", space)?),
        width: number(size, "w", space)?,
        height: number(size, "h", space)?,
        angle_deg: number(angle, "d", space)?,
    }))
}

fn parse_space(node: Node, index: usize) -> Result<PklotSpace> {
    let id = node
        .attribute("id")
        .map(str::to_owned)
        .unwrap_or_else(|| format!("#{index}"));
    let occupied = parse_occupied(node.attribute("occupied"), &id)?;
    let contour = named(node, "contour")
        .ok_or_else(|| Error::parse(Some(&id), "missing <contour>"))?;
    let points = contour
        .children()
        .filter(|c| c.is_element() && c.tag_name().name().eq_ignore_ascii_case("point"))
        .map(|p| Ok(Point::new(number(p, "x", &id)?, number(p, "y", &id)?)))
        .collect::<Result<Vec<_>>>()?;
    let corners: [Point; 4] = points.as_slice().try_into().map_err(|_| {
        Error::parse(
            Some(&id),
            format!("contour has {} points, expected 4", points.len()),
        )
    })?;
    let poly = QuadPolygon::new(corners).map_err(|e| Error::parse(Some(&id), e.to_string()))?;
    Ok(PklotSpace {
        annotation: SpotAnnotation {
            spot_id: id.clone(),
            geometry: SpotGeometry::Polygon(poly),
            occupied,
            annotation_ms: None,
        },
        rotated_rect: parse_rotated_rect(node, &id)?,
    })
}

/// Every `<space>` with its rotated rectangle.
pub fn parse_pklot_spaces(bytes: &[u8]) -> Result<Vec<PklotSpace>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(None, format!("not UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| Error::parse(None, e.to_string()))?;
    doc.descendants()
        .filter(|n| n.is_element() && n.tag_name().name().eq_ignore_ascii_case("space"))
        .enumerate()
        .map(|(i, n)| parse_space(n, i))
        .collect()
}

/// One polygon annotation per space. A missing `occupied` attribute leaves
/// the occupancy unset.
pub fn parse_pklot_xml(bytes: &[u8]) -> Result<Vec<SpotAnnotation>> {
    Ok(parse_pklot_spaces(bytes)?
        .into_iter()
        .map(|s| s.annotation)
        .collect())
}
