//! Parking-space occupancy classification.
//!
//! Spots are demarcated as 4-corner polygons, bounding boxes or fixed-size
//! squares ([`geometry`]); each is cut out of a lot image as a square patch
//! ([`imaging`]) and classified empty or occupied by a small convolutional
//! network ([`nn`]). [`dataset`] reads PKLot-style ground truth and applies
//! the dated train/test protocol; [`experiments`] runs the cross-domain and
//! fine-tuning grids.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod imaging;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod timing;

pub use dataset::{
    AnnotationDocument, DatasetSplit, Label, LotImageRecord, Sample, Scenario, SpotAnnotation,
};
pub use error::{Error, Result};
pub use experiments::{
    ExperimentReport, FineTuneConfig, ReportRow, SampleCount, ScenarioModel,
};
pub use geometry::{AnnotationKind, BoundingBox, FixedSquare, Point, QuadPolygon, SpotGeometry};
pub use imaging::{AugmentationConfig, ImagePatch, RgbImage};
pub use nn::{Model, ModelArchitecture, TrainConfig};
pub use timing::{timing_summary, TimingSummary};
