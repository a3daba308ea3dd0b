//! Experiment grids: the cross-domain accuracy matrix per annotation kind
//! and augmentation setting, and fine-tuning curves with forgetting
//! measured on the source scenario.
//!
//! Both grids are generic over [`Classifier`] so the bookkeeping can be
//! exercised with cheap stand-ins. Cells run in parallel, each with its own
//! model copy and generator, and are collected in grid order, so reports do
//! not depend on the thread count.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;

use crate::dataset::{DatasetSplit, Label, Sample, Scenario};
use crate::error::{Error, Result};
use crate::geometry::AnnotationKind;
use crate::imaging::ImagePatch;
use crate::nn::{run_epoch, Model};
use crate::rng::{seeded, Rng};

pub const DEFAULT_SAMPLE_COUNTS: [usize; 10] = [50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000];

/// What the experiment grids need from a model.
pub trait Classifier: Clone + Send + Sync {
    fn predict(&self, patch: &ImagePatch) -> Result<Label>;

    /// Updates the classifier in place on `samples` for `cfg.epochs` epochs.
    fn fine_tune(&mut self, samples: &[Sample], cfg: &FineTuneConfig, rng: &mut Rng) -> Result<()>;
}

impl Classifier for Model {
    fn predict(&self, patch: &ImagePatch) -> Result<Label> {
        Model::predict(self, patch)
    }

    /// Constant learning rate, all layers, no early stopping. The optimizer
    /// velocity from pre-training is discarded first.
    fn fine_tune(&mut self, samples: &[Sample], cfg: &FineTuneConfig, rng: &mut Rng) -> Result<()> {
        self.reset_velocity();
        for _ in 0..cfg.epochs {
            run_epoch(self, samples, cfg.batch_size, cfg.lr, cfg.momentum, cfg.weight_decay, None, rng)?;
        }
        Ok(())
    }
}

/// Parallel accuracy for any classifier.
pub fn accuracy<C: Classifier>(model: &C, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Protocol("cannot evaluate on an empty set".into()));
    }
    let correct = samples
        .par_iter()
        .map(|s| Ok::<_, Error>(usize::from(model.predict(&s.patch)? == s.label)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel<C = Model> {
    pub scenario: Scenario,
    pub annotation_kind: AnnotationKind,
    pub augmented: bool,
    pub model: C,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub sample_counts: Vec<usize>,
    pub epochs: usize,
    pub runs: usize,
    pub lr: f64,
    pub seed_base: u64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            sample_counts: DEFAULT_SAMPLE_COUNTS.to_vec(),
            epochs: 5,
            runs: 10,
            lr: 5e-4,
            seed_base: 0,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Protocol("runs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Protocol("batch_size must be >= 1".into()));
        }
        if self.sample_counts.windows(2).any(|w| w[0] >= w[1]) || self.sample_counts.first() == Some(&0) {
            return Err(Error::Protocol(format!(
                "sample counts must be positive and strictly increasing: {:?}",
                self.sample_counts
            )));
        }
        Ok(())
    }
}

/// Fine-tunes a copy of `model` on `n` samples drawn uniformly without
/// replacement from `pool`, ignoring class balance.
pub fn fine_tune<C: Classifier>(
    model: &C,
    pool: &[Sample],
    n: usize,
    cfg: &FineTuneConfig,
    rng: &mut Rng,
) -> Result<C> {
    if n > pool.len() {
        return Err(Error::Sampling(format!("{n} samples requested from a pool of {}", pool.len())));
    }
    let subset: Vec<Sample> = index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let mut tuned = model.clone();
    if n > 0 {
        tuned.fine_tune(&subset, cfg, rng)?;
    }
    Ok(tuned)
}

/// Training-set size of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SampleCount {
    /// The whole source training split.
    Full,
    Count(usize),
}

impl std::fmt::Display for SampleCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleCount::Full => f.write_str("full"),
            SampleCount::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SampleCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(SampleCount::Full);
        }
        s.parse()
            .map(SampleCount::Count)
            .map_err(|_| Error::Format(format!("sample count {s:?}")))
    }
}

/// One cell group: a (source, target, kind, augmentation, N) setting with
/// its per-run accuracies. `forgetting_runs` holds the same runs evaluated
/// on the source test set, when measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub source: String,
    pub target: String,
    pub annotation_kind: AnnotationKind,
    pub augmented: bool,
    pub n: SampleCount,
    pub mean_accuracy: f64,
    pub run_accuracies: Vec<f64>,
    pub forgetting_mean_accuracy: Option<f64>,
    pub forgetting_run_accuracies: Vec<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl ReportRow {
    fn new(
        source: &Scenario,
        target: &Scenario,
        annotation_kind: AnnotationKind,
        augmented: bool,
        n: SampleCount,
        runs: Vec<f64>,
        forgetting: Vec<f64>,
    ) -> Self {
        ReportRow {
            source: source.to_string(),
            target: target.to_string(),
            annotation_kind,
            augmented,
            n,
            mean_accuracy: mean(&runs),
            run_accuracies: runs,
            forgetting_mean_accuracy: (!forgetting.is_empty()).then(|| mean(&forgetting)),
            forgetting_run_accuracies: forgetting,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 9] = [
    "source",
    "target",
    "annotation_kind",
    "augmented",
    "n",
    "mean_accuracy",
    "run_accuracies",
    "forgetting_mean_accuracy",
    "forgetting_run_accuracies",
];

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn join4(values: &[f64]) -> String {
    values.iter().map(|&v| fmt4(v)).collect::<Vec<_>>().join(";")
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|v| v.parse().map_err(|_| Error::Format(format!("accuracy {v:?}"))))
        .collect()
}

impl ExperimentReport {
    /// Individual accuracies across all rows (one per trained or
    /// fine-tuned model evaluated on its target).
    pub fn cell_count(&self) -> usize {
        self.rows.iter().map(|r| r.run_accuracies.len()).sum()
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    pub fn find(&self, source: &str, target: &str, kind: AnnotationKind, augmented: bool, n: SampleCount) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.source == source && r.target == target && r.annotation_kind == kind && r.augmented == augmented && r.n == n
        })
    }

    /// CSV with a header row, one row per [`ReportRow`], accuracies rounded
    /// to 4 decimals and per-run lists joined with `;`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.source.clone(),
                r.target.clone(),
                r.annotation_kind.to_string(),
                r.augmented.to_string(),
                r.n.to_string(),
                fmt4(r.mean_accuracy),
                join4(&r.run_accuracies),
                r.forgetting_mean_accuracy.map(fmt4).unwrap_or_default(),
                join4(&r.forgetting_run_accuracies),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<ExperimentReport> {
        let mut r = csv::Reader::from_reader(bytes);
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        let header = r.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Format(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| Error::Format(format!("bad {what} in CSV line {:?}", rec.position().map(|p| p.line())));
            rows.push(ReportRow {
                source: rec[0].to_owned(),
                target: rec[1].to_owned(),
                annotation_kind: rec[2].parse()?,
                augmented: rec[3].parse().map_err(|_| bad("augmented"))?,
                n: rec[4].parse()?,
                mean_accuracy: rec[5].parse().map_err(|_| bad("mean_accuracy"))?,
                run_accuracies: parse_list(&rec[6])?,
                forgetting_mean_accuracy: match &rec[7] {
                    "" => None,
                    v => Some(v.parse().map_err(|_| bad("forgetting_mean_accuracy"))?),
                },
                forgetting_run_accuracies: parse_list(&rec[8])?,
            });
        }
        Ok(ExperimentReport { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let wrap = |e: std::io::Error| Error::from(e).in_file(path);
        let mut f = std::fs::File::create(path).map_err(wrap)?;
        f.write_all(&self.to_csv()?).map_err(wrap)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ExperimentReport> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_csv(&bytes).map_err(|e| e.in_file(path))
    }
}

/// Free-function form of [`ExperimentReport::write_csv`].
pub fn emit_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    report.write_csv(path)
}

/// Trains one model per (source, augmentation) for a single annotation kind
/// and evaluates it on every scenario's test split. The diagonal is the
/// no-change result; every cell of a row shares the same trained model.
///
/// `splits` pairs each scenario with its prepared split for `kind`;
/// `trainer` builds a model from a training split.
pub fn run_cross_domain_matrix<C, F>(
    splits: &[(Scenario, DatasetSplit)],
    kind: AnnotationKind,
    augmented_options: &[bool],
    trainer: F,
) -> Result<(ExperimentReport, Vec<ScenarioModel<C>>)>
where
    C: Classifier,
    F: Fn(&Scenario, bool, &DatasetSplit) -> Result<C> + Sync,
{
    if splits.is_empty() {
        return Err(Error::Protocol("no scenario splits given".into()));
    }
    for (s, split) in splits {
        if split.test.is_empty() {
            return Err(Error::Protocol(format!("scenario {s} has no test samples")));
        }
    }
    let jobs: Vec<(bool, usize)> = augmented_options
        .iter()
        .flat_map(|&a| (0..splits.len()).map(move |i| (a, i)))
        .collect();
    let trained: Vec<(ScenarioModel<C>, Vec<ReportRow>)> = jobs
        .par_iter()
        .map(|&(augmented, i)| {
            let (source, split) = &splits[i];
            let model = trainer(source, augmented, split)?;
            let rows = splits
                .iter()
                .map(|(target, t)| {
                    let acc = accuracy(&model, &t.test)?;
                    Ok(ReportRow::new(source, target, kind, augmented, SampleCount::Full, vec![acc], vec![]))
                })
                .collect::<Result<Vec<_>>>()?;
            let sm = ScenarioModel {
                scenario: source.clone(),
                annotation_kind: kind,
                augmented,
                model,
            };
            Ok((sm, rows))
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::default();
    let mut models = Vec::with_capacity(trained.len());
    for (m, rows) in trained {
        report.rows.extend(rows);
        models.push(m);
    }
    Ok((report, models))
}

/// Fine-tuning curve: for every N and run `r`, a fresh copy of the base
/// model is fine-tuned on N samples of the target pool with seed
/// `seed_base + r`, then scored on the target test set and on the source
/// test set (forgetting). Counts above the pool size are skipped with a
/// warning.
pub fn run_finetune_curve<C: Classifier>(
    base: &ScenarioModel<C>,
    target: &Scenario,
    target_split: &DatasetSplit,
    source_test: &[Sample],
    cfg: &FineTuneConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if target_split.test.is_empty() || source_test.is_empty() {
        return Err(Error::Protocol("fine-tuning curve needs target and source test samples".into()));
    }
    let pool = target_split.train_pool();
    let counts: Vec<usize> = cfg
        .sample_counts
        .iter()
        .copied()
        .filter(|&n| {
            let fits = n <= pool.len();
            if !fits {
                log::warn!("skipping N={n}: target pool for {target} holds only {} samples", pool.len());
            }
            fits
        })
        .collect();
    let cells: Vec<(usize, usize)> = counts
        .iter()
        .flat_map(|&n| (0..cfg.runs).map(move |r| (n, r)))
        .collect();
    let results: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(n, r)| {
            let mut rng = seeded(cfg.seed_base.wrapping_add(r as u64));
            let tuned = fine_tune(&base.model, &pool, n, cfg, &mut rng)?;
            Ok((accuracy(&tuned, &target_split.test)?, accuracy(&tuned, source_test)?))
        })
        .collect::<Result<_>>()?;
    let rows = counts
        .iter()
        .zip(results.chunks(cfg.runs))
        .map(|(&n, runs)| {
            ReportRow::new(
                &base.scenario,
                target,
                base.annotation_kind,
                base.augmented,
                SampleCount::Count(n),
                runs.iter().map(|r| r.0).collect(),
                runs.iter().map(|r| r.1).collect(),
            )
        })
        .collect();
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelArchitecture;

    /// Predicts occupied when the patch mean exceeds a threshold; fine-tuning
    /// moves the threshold toward the midpoint of the class means.
    #[derive(Debug, Clone, PartialEq)]
    struct Threshold(f64);

    impl Classifier for Threshold {
        fn predict(&self, patch: &ImagePatch) -> Result<Label> {
            Ok(Label::from(patch.mean() > self.0))
        }

        fn fine_tune(&mut self, samples: &[Sample], cfg: &FineTuneConfig, _: &mut Rng) -> Result<()> {
            let m = |l: Label| {
                let v: Vec<f64> = samples.iter().filter(|s| s.label == l).map(|s| s.patch.mean()).collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            if let (Some(e), Some(o)) = (m(Label::Empty), m(Label::Occupied)) {
                for _ in 0..cfg.epochs {
                    self.0 += 0.5 * ((e + o) / 2.0 - self.0);
                }
            }
            Ok(())
        }
    }

    fn patch(v: f32) -> ImagePatch {
        ImagePatch::new(1, AnnotationKind::Fixed, vec![v; 3]).unwrap()
    }

    fn split(offset: f32, n: usize) -> DatasetSplit {
        let s = |i: usize| {
            let occupied = i % 2 == 0;
            Sample {
                patch: patch(offset + if occupied { 0.3 } else { 0.0 } + (i % 7) as f32 * 0.01),
                label: Label::from(occupied),
            }
        };
        DatasetSplit {
            train: (0..n).map(s).collect(),
            validation: (n..n + 4).map(s).collect(),
            test: (0..20).map(s).collect(),
        }
    }

    #[test]
    fn one_scenario_matrix_is_plain_accuracy() {
        let splits = vec![(Scenario::Ufpr04, split(0.2, 10))];
        let (report, models) =
            run_cross_domain_matrix(&splits, AnnotationKind::Polygon, &[false], |_, _, _| Ok(Threshold(0.35))).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(models.len(), 1);
        let acc = accuracy(&Threshold(0.35), &splits[0].1.test).unwrap();
        assert_eq!(report.rows[0].mean_accuracy, acc);
    }

    #[test]
    fn matrix_shape_and_single_training_per_row() {
        let splits = vec![
            (Scenario::Ufpr04, split(0.1, 10)),
            (Scenario::Ufpr05, split(0.2, 10)),
            (Scenario::Pucpr, split(0.3, 10)),
        ];
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let mut report = ExperimentReport::default();
        let mut trained = 0;
        for kind in AnnotationKind::ALL {
            let (r, models) = run_cross_domain_matrix(&splits, kind, &[false, true], |_, aug, s| {
                calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Ok(Threshold(s.train[0].patch.mean() - 0.15 + if aug { 0.01 } else { 0.0 }))
            })
            .unwrap();
            trained += models.len();
            report.extend(r);
        }
        assert_eq!((trained, calls.into_inner()), (18, 18));
        assert_eq!(report.cell_count(), 54);
        for r in &report.rows {
            assert_eq!(r.mean_accuracy, mean(&r.run_accuracies));
        }
    }

    #[test]
    fn fine_tune_boundaries() {
        let pool = split(0.2, 10).train;
        let cfg = FineTuneConfig { epochs: 0, ..Default::default() };
        let m = Model::new(ModelArchitecture::new(22), 0).unwrap();
        let big: Vec<Sample> = pool
            .iter()
            .map(|s| Sample { patch: ImagePatch::new(22, AnnotationKind::Fixed, vec![s.patch.data()[0]; 22 * 22 * 3]).unwrap(), label: s.label })
            .collect();
        assert_eq!(fine_tune(&m, &big, 10, &cfg, &mut seeded(0)).unwrap(), m);
        assert!(matches!(fine_tune(&m, &big, 11, &cfg, &mut seeded(0)), Err(Error::Sampling(_))));

        let cfg = FineTuneConfig { epochs: 1, ..Default::default() };
        let a = fine_tune(&m, &big, 10, &cfg, &mut seeded(3)).unwrap();
        let b = fine_tune(&m, &big, 10, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), m.params());
    }

    #[test]
    fn curve_skips_oversized_counts_and_averages_runs() {
        let base = ScenarioModel {
            scenario: Scenario::Ufpr04,
            annotation_kind: AnnotationKind::Fixed,
            augmented: false,
            model: Threshold(0.9),
        };
        let target = split(0.4, 30);
        let source = split(0.1, 10).test;
        let cfg = FineTuneConfig {
            sample_counts: vec![4, 8, 1000],
            runs: 3,
            ..Default::default()
        };
        let report = run_finetune_curve(&base, &Scenario::Pucpr, &target, &source, &cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.cell_count(), 6);
        for r in &report.rows {
            assert_eq!(r.run_accuracies.len(), 3);
            assert_eq!(r.mean_accuracy, mean(&r.run_accuracies));
            assert_eq!(r.forgetting_mean_accuracy, Some(mean(&r.forgetting_run_accuracies)));
        }
        let single = FineTuneConfig { runs: 1, ..cfg };
        let report = run_finetune_curve(&base, &Scenario::Pucpr, &target, &source, &single).unwrap();
        assert!(report.rows.iter().all(|r| r.mean_accuracy == r.run_accuracies[0]));
    }

    #[test]
    fn csv_round_trip() {
        let empty = ExperimentReport::default().to_csv().unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);

        let report = ExperimentReport {
            rows: vec![
                ReportRow::new(&Scenario::Ufpr04, &Scenario::Pucpr, AnnotationKind::BBox, true, SampleCount::Full, vec![0.98765], vec![]),
                ReportRow::new(&Scenario::Ufpr04, &Scenario::Ufpr05, AnnotationKind::Fixed, false, SampleCount::Count(50), vec![0.5, 0.75], vec![0.25, 1.0]),
            ],
        };
        let bytes = report.to_csv().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("UFPR04,PUCPR,bbox,true,full,0.9877,0.9877,,"));
        assert!(text.contains("UFPR04,UFPR05,fixed,false,50,0.6250,0.5000;0.7500,0.6250,0.2500;1.0000"));
        let back = ExperimentReport::from_csv(&bytes).unwrap();
        assert_eq!(back.rows[1], report.rows[1]);
        assert_eq!(back.rows[0].run_accuracies, [0.9877]);
        assert_eq!(back.to_csv().unwrap(), bytes);
    }

    #[test]
    fn config_validation() {
        assert!(FineTuneConfig::default().validate().is_ok());
        assert!(FineTuneConfig { runs: 0, ..Default::default() }.validate().is_err());
        assert!(FineTuneConfig { sample_counts: vec![100, 50], ..Default::default() }.validate().is_err());
    }
}
