//! Patch extraction through the on-disk cache, and turning a split manifest
//! back into samples.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use parkspot_core::dataset::{
    annotation_file_for, convert_annotations, load_record, Manifest, Partition, PatchCache,
};
use parkspot_core::imaging::{extract_patch, load_image};
use parkspot_core::{
    AnnotationKind, DatasetSplit, Error, ImagePatch, LotImageRecord, Result, Sample, Scenario,
};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CACHE_DIR: &str = "cache";

/// Extracts spot patches for one dataset root, annotation kind and input
/// side. Entries are keyed by the image path relative to the root and by a
/// digest of its annotation file, so edited ground truth is never served
/// stale.
#[derive(Debug, Clone)]
pub struct PatchSource {
    pub root: PathBuf,
    pub kind: AnnotationKind,
    pub input_side: u32,
    pub square_side: u32,
    cache: PatchCache,
}

impl PatchSource {
    pub fn new(root: &Path, cfg: &RunConfig, cache_dir: &Path) -> Result<Self> {
        Ok(PatchSource {
            root: root.to_owned(),
            kind: cfg.annotation_kind,
            input_side: cfg.input_side,
            square_side: cfg.square_side,
            cache: PatchCache::new(cache_dir)?,
        })
    }

    fn annotations(&self, image: &Path) -> Result<(PathBuf, Vec<u8>)> {
        let path = annotation_file_for(image)
            .ok_or_else(|| Error::Format("no annotation file next to image".into()).in_file(image))?;
        let bytes = std::fs::read(&path).map_err(|e| Error::from(e).in_file(&path))?;
        Ok((path, bytes))
    }

    fn key(&self, image: &Path, annotation_bytes: &[u8]) -> String {
        let rel = image.strip_prefix(&self.root).unwrap_or(image);
        let extra = format!("square={};gt={}", self.square_side, hex::encode(Sha256::digest(annotation_bytes)));
        PatchCache::key(rel, self.kind, self.input_side, &extra)
    }

    fn extract(&self, record: &LotImageRecord) -> Result<Vec<(String, ImagePatch)>> {
        let img = load_image(&record.image_path)?;
        record
            .spots
            .iter()
            .map(|s| {
                let patch = extract_patch(&img, &s.geometry, self.input_side)
                    .map_err(|e| e.in_file(&record.image_path))?;
                Ok((s.spot_id.clone(), patch))
            })
            .collect()
    }

    /// Patches for a record already converted to this source's kind, in
    /// spot order.
    pub fn for_record(&self, record: &LotImageRecord) -> Result<Vec<ImagePatch>> {
        let (_, bytes) = self.annotations(&record.image_path)?;
        let key = self.key(&record.image_path, &bytes);
        let entries = self.cache.get_or_insert_with(&key, || self.extract(record))?;
        Ok(entries.into_iter().map(|(_, p)| p).collect())
    }

    /// Patches of one image by spot id, reading its ground truth as needed.
    pub fn for_image(&self, image: &Path) -> Result<HashMap<String, ImagePatch>> {
        let (annotation_path, bytes) = self.annotations(image)?;
        let key = self.key(image, &bytes);
        let entries = self.cache.get_or_insert_with(&key, || {
            let record = load_record(&self.root, image, &annotation_path).map_err(|e| e.in_file(&annotation_path))?;
            let converted = convert_annotations(&[record], self.kind, self.square_side)?;
            self.extract(&converted[0])
        })?;
        Ok(entries.into_iter().collect())
    }
}

/// A prepared output directory: its manifest plus the run configuration it
/// was written with.
pub struct Prepared {
    pub manifest: Manifest,
    pub config: RunConfig,
    pub source: PatchSource,
}

impl Prepared {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
        let config = RunConfig::parse(&manifest.config)
            .map_err(|e| CliError::Core(Error::Format(format!("manifest config: {e}")).in_file(dir.join(MANIFEST_FILE))))?;
        let root = config
            .data
            .clone()
            .ok_or_else(|| CliError::Core(Error::Format("manifest does not record a dataset root".into())))?;
        let source = PatchSource::new(&root, &config, &dir.join(CACHE_DIR))?;
        Ok(Prepared {
            manifest,
            config,
            source,
        })
    }

    /// Scenarios in the manifest, restricted to `filter` unless it is empty.
    pub fn scenarios(&self, filter: &[Scenario]) -> CliResult<Vec<Scenario>> {
        let all = self.manifest.scenarios();
        if let Some(missing) = filter.iter().find(|s| !all.contains(s)) {
            return Err(CliError::usage(format!(
                "scenario {missing} is not in the manifest (has: {})",
                all.iter().map(Scenario::as_str).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(if filter.is_empty() { all } else { filter.to_vec() })
    }

    /// Rebuilds the split of one scenario in manifest order.
    pub fn split(&self, scenario: &Scenario) -> Result<DatasetSplit> {
        let entries: Vec<_> = self.manifest.entries.iter().filter(|e| &e.scenario == scenario).collect();
        let mut by_image: BTreeMap<&str, HashMap<String, ImagePatch>> = BTreeMap::new();
        for e in &entries {
            if !by_image.contains_key(e.image.as_str()) {
                let patches = self.source.for_image(&self.source.root.join(&e.image))?;
                by_image.insert(&e.image, patches);
            }
        }
        let mut split = DatasetSplit::default();
        for e in entries {
            let patch = by_image[e.image.as_str()].get(&e.spot_id).cloned().ok_or_else(|| {
                Error::Format(format!("spot {} no longer in its annotation file", e.spot_id)).in_file(&e.image)
            })?;
            let sample = Sample { patch, label: e.label };
            match e.partition {
                Partition::Train => split.train.push(sample),
                Partition::Validation => split.validation.push(sample),
                Partition::Test => split.test.push(sample),
            }
        }
        Ok(split)
    }
}
