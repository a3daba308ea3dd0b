//! The split manifest: one tab-separated line per sample, with the run
//! settings as leading `#` comments and skipped images as trailing ones.
//! Writing the same split twice yields identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use super::{Label, Labeled, PreparedSample, PreparedScenario, Scenario, SkippedImage};
use crate::error::{Error, Result};
use crate::geometry::AnnotationKind;

const TITLE: &str = "# parkspot split manifest";
const HEADER: &str = "scenario\timage\tspot_id\tday\tpartition\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::Format(format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scenario: Scenario,
    /// Image path relative to the dataset root.
    pub image: String,
    pub spot_id: String,
    pub day: NaiveDate,
    pub partition: Partition,
    pub label: Label,
}

impl Labeled for ManifestEntry {
    fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub annotation_kind: AnnotationKind,
    pub input_side: u32,
    /// Run configuration, recorded verbatim.
    pub config: String,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedImage>,
}

fn relative(root: &Path, image: &str) -> String {
    let p = Path::new(image);
    p.strip_prefix(root)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

fn check_field(field: &str, what: &str) -> Result<()> {
    if field.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("{what} {field:?} contains a tab or newline")));
    }
    Ok(())
}

impl Manifest {
    pub fn new(seed: u64, annotation_kind: AnnotationKind, input_side: u32, config: impl Into<String>) -> Self {
        Manifest {
            seed,
            annotation_kind,
            input_side,
            config: config.into(),
            entries: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Appends every sample of a prepared scenario, paths made relative to
    /// `root`.
    pub fn push_scenario(&mut self, root: &Path, prepared: &PreparedScenario) {
        let parts: [(&[PreparedSample], Partition); 3] = [
            (&prepared.train, Partition::Train),
            (&prepared.validation, Partition::Validation),
            (&prepared.test, Partition::Test),
        ];
        for (samples, partition) in parts {
            self.entries.extend(samples.iter().map(|s| ManifestEntry {
                scenario: prepared.scenario.clone(),
                image: relative(root, &s.image),
                spot_id: s.spot_id.clone(),
                day: s.day,
                partition,
                label: s.sample.label,
            }));
        }
    }

    pub fn entries_in(&self, partition: Partition) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.partition == partition)
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut s: Vec<_> = self.entries.iter().map(|e| e.scenario.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "{TITLE}").unwrap();
        writeln!(out, "# seed: {}", self.seed).unwrap();
        writeln!(out, "# annotation_kind: {}", self.annotation_kind).unwrap();
        writeln!(out, "# input_side: {}", self.input_side).unwrap();
        for line in self.config.lines() {
            writeln!(out, "# config: {line}").unwrap();
        }
        writeln!(out, "{HEADER}").unwrap();
        for e in &self.entries {
            check_field(e.scenario.as_str(), "scenario")?;
            check_field(&e.image, "image")?;
            check_field(&e.spot_id, "spot id")?;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.scenario,
                e.image,
                e.spot_id,
                e.day,
                e.partition.as_str(),
                e.label
            )
            .unwrap();
        }
        for s in &self.skipped {
            let path = s.path.to_string_lossy();
            check_field(&path, "skipped path")?;
            writeln!(out, "# skipped\t{path}\t{}", s.reason.replace(['\t', '\n'], " ")).unwrap();
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut lines = text.lines().enumerate().peekable();
        let bad = |n: usize, msg: &str| Error::Format(format!("manifest line {}: {msg}", n + 1));
        match lines.next() {
            Some((_, TITLE)) => {}
            _ => return Err(bad(0, "missing manifest title")),
        }
        let mut field = |name: &str| -> Result<String> {
            let (n, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            line.strip_prefix(&format!("# {name}: "))
                .map(str::to_owned)
                .ok_or_else(|| bad(n, &format!("expected {name}")))
        };
        let seed = field("seed")?.parse().map_err(|_| bad(1, "bad seed"))?;
        let annotation_kind = field("annotation_kind")?.parse()?;
        let input_side = field("input_side")?.parse().map_err(|_| bad(3, "bad input side"))?;
        let mut manifest = Manifest::new(seed, annotation_kind, input_side, "");
        let mut config = Vec::new();
        while let Some((_, line)) = lines.next_if(|(_, l)| l.starts_with("# config: ")) {
            config.push(&line["# config: ".len()..]);
        }
        manifest.config = config.iter().map(|l| format!("{l}\n")).collect();
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, _)) => return Err(bad(n, "expected column header")),
            None => return Err(bad(0, "missing column header")),
        }
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix("# skipped\t") {
                let (path, reason) = rest.split_once('\t').ok_or_else(|| bad(n, "bad skipped line"))?;
                manifest.skipped.push(SkippedImage {
                    path: PathBuf::from(path),
                    reason: reason.to_owned(),
                });
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [scenario, image, spot_id, day, partition, label] = cols[..] else {
                return Err(bad(n, &format!("expected 6 columns, got {}", cols.len())));
            };
            manifest.entries.push(ManifestEntry {
                scenario: scenario.parse()?,
                image: image.to_owned(),
                spot_id: spot_id.to_owned(),
                day: day.parse().map_err(|_| bad(n, "bad day"))?,
                partition: partition.parse()?,
                label: label.parse()?,
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Manifest::parse(&text).map_err(|e| e.in_file(path))
    }
}
