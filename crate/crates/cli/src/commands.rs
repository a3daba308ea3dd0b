//! The pipeline subcommands. Each one reads its inputs, runs the library
//! operation and writes its artifacts under `--out`; identical inputs and
//! seed give identical bytes.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use parkspot_core::dataset::{discover, prepare_scenario, read_annotation_json, Manifest, SkippedImage};
use parkspot_core::experiments::{run_cross_domain_matrix, run_finetune_curve};
use parkspot_core::nn::{evaluate, read_model_file, train_with_observer, write_model_file, History};
use parkspot_core::{
    timing_summary, AnnotationDocument, DatasetSplit, Error, ExperimentReport, Model, ModelArchitecture, Scenario,
    ScenarioModel, TimingSummary,
};
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::RunConfig;
use crate::data::{PatchSource, Prepared, CACHE_DIR, MANIFEST_FILE};
use crate::error::{CliError, CliResult};

pub const RUN_CONFIG_FILE: &str = "run.toml";

fn create_out(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::from(e).in_file(out))?;
    Ok(())
}

/// Writes through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> parkspot_core::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::from(e).in_file(dir))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::from(e.error).in_file(path))?;
    Ok(())
}

fn record_config(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_atomic(&out.join(RUN_CONFIG_FILE), cfg.to_toml().as_bytes())?;
    Ok(())
}

fn model_stem(scenario: &Scenario, augmented: bool) -> String {
    format!("{}{}", scenario, if augmented { "-aug" } else { "" })
}

fn require_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.data
        .clone()
        .ok_or_else(|| CliError::usage("a dataset root is required (--data or `data` in the config)"))
}

pub fn prepare(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    let root = require_data(cfg)?;
    let wanted = cfg.scenario_filter()?;
    create_out(out)?;
    let source = PatchSource::new(&root, cfg, &out.join(CACHE_DIR))?;
    let found = discover(&root)?;
    let mut manifest = Manifest::new(cfg.seed, cfg.annotation_kind, cfg.input_side, cfg.to_toml());
    let mut matched = 0;
    for (scenario, records) in found.by_scenario() {
        if !wanted.is_empty() && !wanted.contains(&scenario) {
            continue;
        }
        matched += 1;
        let prepared = prepare_scenario(scenario.clone(), &records, &cfg.protocol(), |r| source.for_record(r))?;
        let c = prepared.raw_counts;
        info!(
            "{scenario}: {} images; raw train {}/{} and test {}/{} (empty/occupied); balanced train {}, validation {}, test {}",
            records.len(),
            c.train[0],
            c.train[1],
            c.test[0],
            c.test[1],
            prepared.train.len(),
            prepared.validation.len(),
            prepared.test.len()
        );
        manifest.push_scenario(&root, &prepared);
    }
    if matched == 0 {
        return Err(CliError::Core(Error::EmptyDataset(format!(
            "none of the requested scenarios found under {}",
            root.display()
        ))));
    }
    manifest.skipped = found
        .skipped
        .into_iter()
        .map(|s| SkippedImage {
            path: s.path.strip_prefix(&root).map(Path::to_owned).unwrap_or(s.path),
            reason: s.reason,
        })
        .collect();
    write_atomic(&out.join(MANIFEST_FILE), manifest.to_text()?.as_bytes())?;
    record_config(out, cfg)?;
    Ok(manifest)
}

/// Written next to each trained model.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TrainSummary {
    pub scenario: String,
    pub annotation_kind: String,
    pub augmented: bool,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
}

fn write_history(path: &Path, history: &History) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &history.epochs {
        w.serialize(e).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn train_model(cfg: &RunConfig, scenario: &Scenario, split: &DatasetSplit) -> parkspot_core::Result<(Model, History)> {
    let model = Model::new(ModelArchitecture::new(cfg.input_side), cfg.seed)?;
    train_with_observer(model, split, &cfg.train, |e| {
        info!(
            "{scenario} epoch {:>3}: lr {:.2e} loss {:.4} train {:.4} validation {:.4}",
            e.epoch + 1,
            e.lr,
            e.train_loss,
            e.train_accuracy,
            e.validation_accuracy
        )
    })
}

pub fn train(cfg: &RunConfig, prepared: &Prepared, out: &Path) -> CliResult<Vec<TrainSummary>> {
    check_compatible(cfg, prepared)?;
    create_out(out)?;
    let mut summaries = Vec::new();
    for scenario in prepared.scenarios(&cfg.scenario_filter()?)? {
        let split = prepared.split(&scenario)?;
        let (model, history) = train_model(cfg, &scenario, &split)?;
        let test_accuracy = evaluate(&model, &split.test)?;
        let stem = model_stem(&scenario, cfg.augment);
        write_model_file(&model, &out.join(format!("model-{stem}.pkm")))?;
        write_history(&out.join(format!("history-{stem}.csv")), &history)?;
        let summary = TrainSummary {
            scenario: scenario.to_string(),
            annotation_kind: cfg.annotation_kind.to_string(),
            augmented: cfg.augment,
            seed: cfg.seed,
            epochs_run: history.epochs.len(),
            best_epoch: history.best_epoch,
            stopped_early: history.stopped_early,
            validation_accuracy: history.best().map_or(f64::NAN, |b| b.validation_accuracy),
            test_accuracy,
        };
        let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&out.join(format!("summary-{stem}.json")), &json)?;
        info!("{scenario}: test accuracy {test_accuracy}");
        summaries.push(summary);
    }
    record_config(out, cfg)?;
    Ok(summaries)
}

/// The prepared data fixes kind and input side; a run asking for others is
/// a usage error rather than a silent switch.
fn check_compatible(cfg: &RunConfig, prepared: &Prepared) -> CliResult<()> {
    let p = &prepared.config;
    if cfg.annotation_kind != p.annotation_kind || cfg.input_side != p.input_side {
        return Err(CliError::usage(format!(
            "prepared data is {} at side {}, but this run asks for {} at side {}",
            p.annotation_kind, p.input_side, cfg.annotation_kind, cfg.input_side
        )));
    }
    Ok(())
}

/// Takes dataset root, sides and (unless given on the command line) kind
/// from the prepared manifest.
pub fn inherit(mut cfg: RunConfig, prepared: &Prepared, kind_given: bool) -> RunConfig {
    if !kind_given {
        cfg.annotation_kind = prepared.config.annotation_kind;
    }
    cfg.input_side = prepared.config.input_side;
    cfg.square_side = prepared.config.square_side;
    cfg.data = prepared.config.data.clone();
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub scenario: String,
    pub samples: usize,
    pub accuracy: f64,
}

pub fn eval(cfg: &RunConfig, prepared: &Prepared, model_path: &Path, out: Option<&Path>) -> CliResult<Vec<EvalRow>> {
    let model = read_model_file(model_path, Some(prepared.config.input_side))?;
    let mut rows = Vec::new();
    for scenario in prepared.scenarios(&cfg.scenario_filter()?)? {
        let split = prepared.split(&scenario)?;
        rows.push(EvalRow {
            scenario: scenario.to_string(),
            samples: split.test.len(),
            accuracy: evaluate(&model, &split.test)?,
        });
    }
    if let Some(out) = out {
        create_out(out)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        write_atomic(&out.join("eval.csv"), &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        record_config(out, cfg)?;
    }
    Ok(rows)
}

pub fn crossdomain(cfg: &RunConfig, prepared: &Prepared, out: &Path) -> CliResult<ExperimentReport> {
    check_compatible(cfg, prepared)?;
    create_out(out)?;
    let splits = prepared
        .scenarios(&cfg.scenario_filter()?)?
        .into_iter()
        .map(|s| Ok((s.clone(), prepared.split(&s)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let (report, models) = run_cross_domain_matrix(&splits, cfg.annotation_kind, &[cfg.augment], |s, _, split| {
        Ok(train_model(cfg, s, split)?.0)
    })?;
    for m in &models {
        write_model_file(&m.model, &out.join(format!("model-{}.pkm", model_stem(&m.scenario, m.augmented))))?;
    }
    write_atomic(&out.join("crossdomain.csv"), &report.to_csv()?)?;
    record_config(out, cfg)?;
    Ok(report)
}

pub fn finetune(
    cfg: &RunConfig,
    prepared: &Prepared,
    model_path: &Path,
    source: &Scenario,
    out: &Path,
) -> CliResult<ExperimentReport> {
    check_compatible(cfg, prepared)?;
    let scenarios = prepared.scenarios(&[])?;
    if !scenarios.contains(source) {
        return Err(CliError::usage(format!("source scenario {source} is not in the manifest")));
    }
    let targets = match cfg.scenario_filter()? {
        t if t.is_empty() => scenarios.iter().filter(|s| *s != source).cloned().collect(),
        t => prepared.scenarios(&t)?,
    };
    if targets.is_empty() {
        return Err(CliError::usage("no target scenario to fine-tune on"));
    }
    create_out(out)?;
    let base = ScenarioModel {
        scenario: source.clone(),
        annotation_kind: cfg.annotation_kind,
        augmented: cfg.augment,
        model: read_model_file(model_path, Some(cfg.input_side))?,
    };
    let source_test = prepared.split(source)?.test;
    let mut report = ExperimentReport::default();
    for target in &targets {
        let split = prepared.split(target)?;
        let part = run_finetune_curve(&base, target, &split, &source_test, &cfg.finetune)?;
        for r in &part.rows {
            info!(
                "{source}->{target} N={}: target {:.4}, source {:.4}",
                r.n,
                r.mean_accuracy,
                r.forgetting_mean_accuracy.unwrap_or(f64::NAN)
            );
        }
        report.extend(part);
    }
    write_atomic(&out.join("finetune.csv"), &report.to_csv()?)?;
    record_config(out, cfg)?;
    Ok(report)
}

/// Every `.json` annotation document under `dir`, in path order.
pub fn read_documents(dir: &Path) -> parkspot_core::Result<Vec<AnnotationDocument>> {
    if !dir.is_dir() {
        return Err(Error::Format("not a directory".into()).in_file(dir));
    }
    let mut docs = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let path = entry.path();
        if entry.file_type().is_file() && path.extension().is_some_and(|e| e == "json") {
            let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
            docs.push(read_annotation_json(&bytes).map_err(|e| e.in_file(path))?);
        }
    }
    Ok(docs)
}

pub fn timing(dir: &Path) -> CliResult<TimingSummary> {
    Ok(timing_summary(&read_documents(dir)?))
}

pub fn timing_table(summary: &TimingSummary) -> String {
    let mut s = format!("{:<8} {:>6} {:>10} {:>12}\n", "kind", "spots", "mean (s)", "reference (s)");
    for (kind, t) in &summary.kinds {
        s += &format!("{:<8} {:>6} {:>10.3} {:>12.1}\n", kind.as_str(), t.count, t.mean_seconds, t.reference_seconds);
    }
    s
}
