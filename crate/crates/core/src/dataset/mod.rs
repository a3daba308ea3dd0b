//! Ground-truth ingestion and the dated train/test protocol.

mod cache;
mod json;
mod layout;
mod manifest;
mod pklot;
mod protocol;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

pub use cache::PatchCache;
pub use json::{read_annotation_json, write_annotation_json, AnnotationDocument};
pub use layout::{annotation_file_for, load_record, capture_day_from_path, capture_time_from_path, discover, Discovery, SkippedImage};
pub use manifest::{Manifest, ManifestEntry, Partition};
pub use pklot::{parse_pklot_spaces, parse_pklot_xml, PklotSpace, RotatedRect};
pub use protocol::{
    balance_undersample, carve_validation, class_counts, convert_annotations, prepare_scenario,
    split_by_days, PreparedSample, PreparedScenario, ProtocolConfig, RawCounts,
};

use crate::error::{Error, Result};
use crate::geometry::{AnnotationKind, SpotGeometry};
use crate::imaging::ImagePatch;

/// Occupancy class. The discriminant is the network output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Empty = 0,
    Occupied = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Empty, Label::Occupied];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Empty),
            1 => Some(Label::Occupied),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Empty => "empty",
            Label::Occupied => "occupied",
        }
    }
}

impl From<bool> for Label {
    fn from(occupied: bool) -> Self {
        if occupied {
            Label::Occupied
        } else {
            Label::Empty
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" | "0" => Ok(Label::Empty),
            "occupied" | "1" => Ok(Label::Occupied),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

/// Anything carrying an occupancy label, so the protocol steps can run over
/// bare labels, patches or manifest entries alike.
pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for Label {
    fn label(&self) -> Label {
        *self
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: ImagePatch,
    pub label: Label,
}

impl Labeled for Sample {
    fn label(&self) -> Label {
        self.label
    }
}

/// The three PKLot camera views, or anything else.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Ufpr04,
    Ufpr05,
    Pucpr,
    Custom(String),
}

impl Scenario {
    pub fn as_str(&self) -> &str {
        match self {
            Scenario::Ufpr04 => "UFPR04",
            Scenario::Ufpr05 => "UFPR05",
            Scenario::Pucpr => "PUCPR",
            Scenario::Custom(s) => s,
        }
    }

    /// Recognizes the PKLot names case-insensitively.
    pub fn known(s: &str) -> Option<Scenario> {
        match s.to_ascii_uppercase().as_str() {
            "UFPR04" => Some(Scenario::Ufpr04),
            "UFPR05" => Some(Scenario::Ufpr05),
            "PUCPR" => Some(Scenario::Pucpr),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Format("empty scenario name".into()));
        }
        Ok(Scenario::known(s).unwrap_or_else(|| Scenario::Custom(s.to_owned())))
    }
}

/// One parking spot's demarcation plus optional label and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotAnnotation {
    pub spot_id: String,
    pub geometry: SpotGeometry,
    pub occupied: Option<bool>,
    pub annotation_ms: Option<u64>,
}

impl SpotAnnotation {
    pub fn new(spot_id: impl Into<String>, geometry: SpotGeometry) -> Self {
        SpotAnnotation {
            spot_id: spot_id.into(),
            geometry,
            occupied: None,
            annotation_ms: None,
        }
    }

    pub fn with_occupied(mut self, occupied: bool) -> Self {
        self.occupied = Some(occupied);
        self
    }

    pub fn kind(&self) -> AnnotationKind {
        self.geometry.kind()
    }

    pub fn label(&self) -> Option<Label> {
        self.occupied.map(Label::from)
    }
}

/// One lot image with its capture date and spots.
#[derive(Debug, Clone, PartialEq)]
pub struct LotImageRecord {
    pub image_path: PathBuf,
    pub capture_day: NaiveDate,
    pub capture_time: Option<NaiveTime>,
    pub scenario: Scenario,
    pub spots: Vec<SpotAnnotation>,
}

impl LotImageRecord {
    pub fn new(
        image_path: impl Into<PathBuf>,
        capture_day: NaiveDate,
        capture_time: Option<NaiveTime>,
        scenario: Scenario,
        spots: Vec<SpotAnnotation>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &spots {
            if !seen.insert(s.spot_id.as_str()) {
                return Err(Error::parse(Some(&s.spot_id), "duplicate spot id in one image"));
            }
        }
        Ok(LotImageRecord {
            image_path: image_path.into(),
            capture_day,
            capture_time,
            scenario,
            spots,
        })
    }
}

/// Train/validation/test partitions of labeled patches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetSplit {
    /// Training plus validation samples: the pool fine-tuning draws from.
    pub fn train_pool(&self) -> Vec<Sample> {
        self.train.iter().chain(&self.validation).cloned().collect()
    }
}
