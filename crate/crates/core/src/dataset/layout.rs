//! Finding lot images and their ground truth on disk.
//!
//! The public PKLot tree looks like
//! `UFPR04/Sunny/2012-12-07/2012-12-07_16_42_25.jpg` with a sibling `.xml`.
//! Images annotated with the annotation tool carry a sibling `.json`
//! instead (preferred when both exist).

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use walkdir::WalkDir;

use super::{parse_pklot_xml, read_annotation_json, LotImageRecord, Scenario};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "ppm"];

/// An image left out of discovery, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    pub records: Vec<LotImageRecord>,
    pub skipped: Vec<SkippedImage>,
}

impl Discovery {
    /// Records grouped per scenario, scenarios in sorted order.
    pub fn by_scenario(&self) -> Vec<(Scenario, Vec<LotImageRecord>)> {
        let mut groups: std::collections::BTreeMap<Scenario, Vec<LotImageRecord>> = Default::default();
        for r in &self.records {
            groups.entry(r.scenario.clone()).or_default().push(r.clone());
        }
        groups.into_iter().collect()
    }
}

fn parse_day(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok()
}

/// The nearest `YYYY-MM-DD` folder above the image, else a date prefix on
/// the file name.
pub fn capture_day_from_path(path: &Path) -> Option<NaiveDate> {
    path.parent()
        .into_iter()
        .flat_map(Path::ancestors)
        .filter_map(|a| a.file_name()?.to_str())
        .find_map(|name| (name.len() == 10).then(|| parse_day(name)).flatten())
        .or_else(|| parse_day(path.file_stem()?.to_str()?))
}

/// `HH_MM_SS` after the date prefix in `2012-12-07_16_42_25.jpg`.
pub fn capture_time_from_path(path: &Path) -> Option<NaiveTime> {
    let stem = path.file_stem()?.to_str()?;
    parse_day(stem)?;
    let rest = stem.get(11..19)?;
    NaiveTime::parse_from_str(rest, "%H_%M_%S").ok()
}

fn scenario_from_path(root: &Path, path: &Path) -> Scenario {
    let relative = path.strip_prefix(root).unwrap_or(path);
    let known = root
        .components()
        .chain(relative.components())
        .filter_map(|c| c.as_os_str().to_str())
        .find_map(Scenario::known);
    known.unwrap_or_else(|| {
        let mut dirs = relative.components();
        dirs.next_back();
        let first = dirs.next().and_then(|c| c.as_os_str().to_str());
        Scenario::Custom(first.unwrap_or("custom").to_owned())
    })
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// The annotation file that goes with an image: a sibling `.json`, else a
/// sibling `.xml`.
pub fn annotation_file_for(image: &Path) -> Option<PathBuf> {
    let json = image.with_extension("json");
    if json.is_file() {
        return Some(json);
    }
    let xml = image.with_extension("xml");
    xml.is_file().then_some(xml)
}

/// Reads one image's ground truth. `root` is used only to infer the
/// scenario.
pub fn load_record(root: &Path, image: &Path, annotations: &Path) -> Result<LotImageRecord> {
    let bytes = std::fs::read(annotations)?;
    let spots = if annotations.extension().is_some_and(|e| e == "json") {
        read_annotation_json(&bytes)?.spaces
    } else {
        parse_pklot_xml(&bytes)?
    };
    let day = capture_day_from_path(image).ok_or_else(|| {
        Error::Format("no capture day: expected a YYYY-MM-DD folder or file-name prefix".into())
    })?;
    LotImageRecord::new(
        image,
        day,
        capture_time_from_path(image),
        scenario_from_path(root, image),
        spots,
    )
}

/// Walks `root` in sorted order. Images without an annotation file are
/// skipped and reported; unreadable annotation files are errors naming the
/// file.
pub fn discover(root: &Path) -> Result<Discovery> {
    if !root.is_dir() {
        return Err(Error::Format("dataset root is not a directory".into()).in_file(root));
    }
    let mut out = Discovery::default();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_image(path) {
            continue;
        }
        let Some(annotations) = annotation_file_for(path) else {
            log::warn!("{}: no ground-truth file, skipping", path.display());
            out.skipped.push(SkippedImage {
                path: path.to_owned(),
                reason: "missing annotation file".into(),
            });
            continue;
        };
        let record = load_record(root, path, &annotations).map_err(|e| e.in_file(&annotations))?;
        out.records.push(record);
    }
    if out.records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no annotated images under {}",
            root.display()
        )));
    }
    Ok(out)
}
