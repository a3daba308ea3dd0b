//! Pixel containers, fixture I/O, bilinear resampling and patch extraction.

mod augment;
mod ppm;

use std::path::Path;

pub use augment::{augment, AugmentationConfig};
pub use ppm::{read_ppm, write_ppm};

use crate::error::{Error, Result};
use crate::geometry::{
    rectified_dims, solve_homography, AnnotationKind, BoundingBox, FixedSquare, Point,
    QuadPolygon, SpotGeometry,
};

/// Network input side used throughout, in pixels.
pub const DEFAULT_INPUT_SIDE: u32 = 32;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("channel value outside [0, 1]".into()));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel at signed coordinates, clamped to the nearest edge pixel.
    pub fn pixel_clamped(&self, x: i64, y: i64) -> [f32; 3] {
        let x = x.clamp(0, i64::from(self.width) - 1) as u32;
        let y = y.clamp(0, i64::from(self.height) - 1) as u32;
        self.pixel(x, y)
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox::new(
            Point::new(0.0, 0.0),
            Point::new(f64::from(self.width), f64::from(self.height)),
        )
        .expect("images have positive size")
    }
}

/// Loads a lot image: PPM is decoded in-crate, anything else goes through
/// the `image` crate.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let res = if is_ppm {
        std::fs::read(path)
            .map_err(Error::from)
            .and_then(|bytes| read_ppm(&bytes))
    } else {
        image::open(path)
            .map_err(|e| Error::Format(e.to_string()))
            .map(|img| {
                let rgb = img.to_rgb8();
                RgbImage {
                    width: rgb.width(),
                    height: rgb.height(),
                    data: rgb.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect(),
                }
            })
    };
    res.map_err(|e| e.in_file(path))
}

/// Bilinear interpolation between the four pixels surrounding `(x, y)`,
/// where integer coordinates address pixel centres. Coordinates outside the
/// image clamp to the nearest edge pixel.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let max_x = f64::from(img.width - 1);
    let max_y = f64::from(img.height - 1);
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let (p00, p10) = (img.pixel(x0, y0), img.pixel(x1, y0));
    let (p01, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
    std::array::from_fn(|c| {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Resamples the continuous region `region` into `out_w x out_h` pixels by
/// sampling each output pixel centre.
fn resample_region(img: &RgbImage, region: &BoundingBox, out_w: u32, out_h: u32) -> RgbImage {
    let sx = region.width() / f64::from(out_w);
    let sy = region.height() / f64::from(out_h);
    let (x0, y0) = (region.min().x, region.min().y);
    RgbImage::from_fn(out_w, out_h, |i, j| {
        let u = x0 + (f64::from(i) + 0.5) * sx;
        let v = y0 + (f64::from(j) + 0.5) * sy;
        sample_bilinear(img, u - 0.5, v - 0.5).map(|c| c as f32)
    })
}

fn resize(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.width == w && img.height == h {
        return img.clone();
    }
    resample_region(img, &img.bounds(), w, h)
}

/// Projectively rectifies `poly` onto an axis-aligned image of its
/// rectified dimensions.
pub fn warp_polygon(img: &RgbImage, poly: &QuadPolygon) -> Result<RgbImage> {
    let (w, h) = rectified_dims(poly);
    let (wf, hf) = (f64::from(w), f64::from(h));
    let rect = QuadPolygon::from_coords([(0.0, 0.0), (wf, 0.0), (wf, hf), (0.0, hf)])?;
    let to_source = solve_homography(&rect, poly)?;
    Ok(RgbImage::from_fn(w, h, |i, j| {
        let p = to_source.apply(Point::new(f64::from(i) + 0.5, f64::from(j) + 0.5));
        sample_bilinear(img, p.x - 0.5, p.y - 0.5).map(|c| c as f32)
    }))
}

fn crop_square(img: &RgbImage, square: &FixedSquare) -> RgbImage {
    let (ox, oy) = square.pixel_origin();
    let side = square.side();
    RgbImage::from_fn(side, side, |i, j| {
        img.pixel_clamped(ox + i64::from(i), oy + i64::from(j))
    })
}

/// A network-ready RGB block, channel-last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    side: u32,
    kind: AnnotationKind,
    data: Vec<f32>,
}

impl ImagePatch {
    pub fn new(side: u32, kind: AnnotationKind, data: Vec<f32>) -> Result<Self> {
        let expected = side as usize * side as usize * 3;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{side}x{side} patch needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("patch value outside [0, 1]".into()));
        }
        Ok(ImagePatch { side, kind, data })
    }

    fn from_image(img: RgbImage, kind: AnnotationKind) -> Self {
        debug_assert_eq!(img.width, img.height);
        ImagePatch {
            side: img.width,
            kind,
            data: img.data,
        }
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn kind(&self) -> AnnotationKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    #[cfg(test)]
    pub(crate) fn as_image(&self) -> RgbImage {
        RgbImage {
            width: self.side,
            height: self.side,
            data: self.data.clone(),
        }
    }
}

/// Cuts the spot out of a lot image and brings it to `input_side`²:
///
/// * polygon: homography warp to [`rectified_dims`], then bilinear resize;
/// * bounding box: bilinear resample of the box region;
/// * fixed square: direct pixel crop (edge-clamped), resized only when the
///   square side differs from `input_side`.
pub fn extract_patch(img: &RgbImage, geometry: &SpotGeometry, input_side: u32) -> Result<ImagePatch> {
    if input_side == 0 {
        return Err(Error::Shape("input side must be > 0".into()));
    }
    let bounds = geometry.bounds();
    if !bounds.overlaps(&img.bounds()) {
        return Err(Error::OutOfBounds(format!(
            "spot region ({:.1}, {:.1})-({:.1}, {:.1}) lies outside the {}x{} image",
            bounds.min().x,
            bounds.min().y,
            bounds.max().x,
            bounds.max().y,
            img.width,
            img.height
        )));
    }
    let out = match geometry {
        SpotGeometry::Polygon(poly) => resize(&warp_polygon(img, poly)?, input_side, input_side),
        SpotGeometry::BBox(b) => resample_region(img, b, input_side, input_side),
        SpotGeometry::Fixed(sq) => resize(&crop_square(img, sq), input_side, input_side),
    };
    Ok(ImagePatch::from_image(out, geometry.kind()))
}
