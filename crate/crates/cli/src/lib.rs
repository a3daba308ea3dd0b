//! The `parkspot` command line: dataset preparation, training, evaluation,
//! the cross-domain and fine-tuning experiments, and the annotation
//! service.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod server;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use parkspot_core::{AnnotationKind, Scenario};

use crate::config::{Overrides, RunConfig};
use crate::data::Prepared;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "parkspot", version, about = "Parking-space occupancy classification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_name = "polygon|bbox|fixed")]
    pub annotation_kind: Option<AnnotationKind>,

    /// Train with photometric and geometric augmentation.
    #[arg(long, global = true)]
    pub augment: bool,

    /// Restrict to these scenarios (repeatable or comma-separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub scenario: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a dataset by day, balance it and cache the spot patches.
    Prepare {
        /// Dataset root: PKLot layout, or images with annotation JSON.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Train one model per scenario of a prepared directory.
    Train {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
    },
    /// Test-set accuracy of a saved model on prepared scenarios.
    Eval {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    /// Train on each scenario and test on every scenario.
    Crossdomain {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
    },
    /// Fine-tune a source model on N target samples, repeated runs per N.
    Finetune {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Scenario the model was trained on.
        #[arg(long)]
        source: Scenario,
        /// Sample counts, overriding the config.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Serve lot images, the annotation API and the annotation tool.
    Serve {
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        /// Where documents are stored; defaults to the image directory.
        #[arg(long, value_name = "DIR")]
        annotations: Option<PathBuf>,
        /// host:port, host or port.
        #[arg(long, env = server::BIND_ENV, default_value = "127.0.0.1:8714", value_parser = server::parse_bind)]
        bind: std::net::SocketAddr,
    },
    /// Mean demarcation time per annotation kind.
    Timing {
        /// Directory of annotation JSON documents.
        dir: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            annotation_kind: self.annotation_kind,
            augment: self.augment,
            scenarios: self.scenario.clone(),
            ..Overrides::default()
        }
    }

    fn out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::usage("--out is required for this command"))
    }
}

/// Configuration for commands that work on a prepared directory. Dataset
/// root, kind and sides come from its manifest; an explicit
/// `--annotation-kind` that disagrees is rejected.
fn prepared_run(common: &Common, prepared: &Path, extra: Overrides) -> CliResult<(RunConfig, Prepared)> {
    let prepared = Prepared::open(prepared)?;
    let mut o = common.overrides();
    o.sample_counts = extra.sample_counts;
    o.runs = extra.runs;
    let cfg = RunConfig::resolve(common.config.as_deref(), o)?;
    Ok((commands::inherit(cfg, &prepared, common.annotation_kind.is_some()), prepared))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let common = &cli.common;
    match cli.command {
        Command::Prepare { data } => {
            let mut o = common.overrides();
            o.data = data;
            let cfg = RunConfig::resolve(common.config.as_deref(), o)?;
            let manifest = commands::prepare(&cfg, common.out()?)?;
            println!(
                "{} samples over {} scenario(s); {} image(s) skipped",
                manifest.entries.len(),
                manifest.scenarios().len(),
                manifest.skipped.len()
            );
        }
        Command::Train { prepared } => {
            let (cfg, prepared) = prepared_run(common, &prepared, Overrides::default())?;
            for s in commands::train(&cfg, &prepared, common.out()?)? {
                println!("{}\ttest accuracy {}", s.scenario, s.test_accuracy);
            }
        }
        Command::Eval { prepared, model } => {
            let (cfg, prepared) = prepared_run(common, &prepared, Overrides::default())?;
            for r in commands::eval(&cfg, &prepared, &model, common.out.as_deref())? {
                println!("{}\ttest accuracy {}\t({} samples)", r.scenario, r.accuracy, r.samples);
            }
        }
        Command::Crossdomain { prepared } => {
            let (cfg, prepared) = prepared_run(common, &prepared, Overrides::default())?;
            let report = commands::crossdomain(&cfg, &prepared, common.out()?)?;
            for r in &report.rows {
                println!("{} -> {}\t{:.4}", r.source, r.target, r.mean_accuracy);
            }
        }
        Command::Finetune {
            prepared,
            model,
            source,
            counts,
            runs,
        } => {
            let extra = Overrides {
                sample_counts: counts,
                runs,
                ..Overrides::default()
            };
            let (cfg, prepared) = prepared_run(common, &prepared, extra)?;
            let report = commands::finetune(&cfg, &prepared, &model, &source, common.out()?)?;
            for r in &report.rows {
                println!(
                    "{} -> {}\tN={}\ttarget {:.4}\tsource {:.4}",
                    r.source,
                    r.target,
                    r.n,
                    r.mean_accuracy,
                    r.forgetting_mean_accuracy.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Serve {
            images,
            annotations,
            bind,
        } => {
            let state = server::AppState::new(&images, annotations.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = server::bind(bind).await?;
                log::info!("serving {} on http://{}", images.display(), listener.local_addr()?);
                server::serve(listener, state).await
            })?;
        }
        Command::Timing { dir, json } => {
            let summary = commands::timing(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                print!("{}", commands::timing_table(&summary));
            }
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                let bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
                commands::write_atomic(&out.join("timing.json"), &bytes)?;
            }
        }
    }
    Ok(())
}
