use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use doclab_core::agents::save_checkpoint;
use doclab_core::collab::{agreement_scores, SelectionResult, SelectionStrategy};
use doclab_core::dataset::Sample;
use doclab_core::experiment::{
    read_json, write_json, ExperimentDir, QueueLabels, MAIN_CHECKPOINT, SELECTION,
};
use doclab_core::metrics::ConfusionMatrix;
use doclab_core::pipeline::{
    evaluate, refs, run_collab_mode_ablation, run_initialization, run_kss_iteration,
    run_lambda_sweep, run_selection_comparison, run_update_comparison, select_pool, update_round,
    ExperimentManifest, OracleLabels,
};
use doclab_core::raster::{read_mask_pgm, CLASS_COUNT};
use doclab_core::update::{SeedMetrics, UpdateReport, UpdateStrategy};
use doclab_core::{Error, Result};
use serde_json::{json, Value};

use crate::{contract, record_outcome};

#[derive(Debug, Parser)]
#[command(
    name = "doclab",
    version,
    about = "Human-in-the-loop layout segmentation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectArg {
    Kss,
    Macon,
    Sucon,
    Mecon,
    Random,
}

impl From<SelectArg> for SelectionStrategy {
    fn from(a: SelectArg) -> Self {
        match a {
            SelectArg::Kss => Self::Kss,
            SelectArg::Macon => Self::Macon,
            SelectArg::Sucon => Self::Sucon,
            SelectArg::Mecon => Self::Mecon,
            SelectArg::Random => Self::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpdateArg {
    Psft,
    Pbsft,
    Rbsft,
    Rbsre,
}

impl From<UpdateArg> for UpdateStrategy {
    fn from(a: UpdateArg) -> Self {
        match a {
            UpdateArg::Psft => Self::Psft,
            UpdateArg::Pbsft => Self::Pbsft,
            UpdateArg::Rbsft => Self::Rbsft,
            UpdateArg::Rbsre => Self::Rbsre,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Oracle,
    Human,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblateArg {
    Collab,
    Selection,
    Update,
    Lambdas,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the experiment directory and generate its corpora.
    Synth {
        #[arg(long)]
        experiment: PathBuf,
        /// Manifest JSON; the reference benchmark when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the main and co agents on the base corpus.
    InitTrain {
        #[arg(long)]
        experiment: PathBuf,
    },
    /// Agreement of the two agents on every pool page.
    Score {
        #[arg(long)]
        experiment: PathBuf,
    },
    /// Select pool pages for labelling.
    Select {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<SelectArg>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Label the current selection.
    Label {
        #[arg(long)]
        experiment: PathBuf,
        /// Copy ground-truth masks instead of waiting for annotators.
        #[arg(long)]
        oracle: bool,
    },
    /// Update the main agent with the labelled selection.
    Update {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long, value_enum, default_value = "rbsre")]
        strategy: UpdateArg,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
    },
    /// Metrics on the novel test pages.
    Eval {
        #[arg(long)]
        experiment: PathBuf,
        /// Checkpoint name under checkpoints/.
        #[arg(long, default_value = MAIN_CHECKPOINT)]
        checkpoint: String,
        /// Directory of `<id>.mask.pgm` predictions to score instead.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Initialization (if needed) plus one selection and update round.
    Loop {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long, value_enum)]
        provider: ProviderArg,
    },
    /// Comparison runs over the replicate seeds.
    Ablate {
        #[arg(value_enum)]
        what: AblateArg,
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        /// `l1:l2` pairs separated by commas.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Serve the labelling API.
    Serve {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn open(path: &PathBuf) -> Result<(ExperimentDir, ExperimentManifest)> {
    let dir = ExperimentDir::new(path);
    let m = dir.manifest()?;
    Ok((dir, m))
}

fn labeled_selection(dir: &ExperimentDir, pool: &[Sample]) -> Result<Vec<Sample>> {
    let sel: SelectionResult = read_json(&dir.selection_path(SELECTION))?;
    sel.selected
        .iter()
        .map(|id| {
            let page = pool
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::contract(format!("selected id {id} is not in the pool")))?;
            Ok(Sample {
                mask: dir.read_label(id)?,
                ..page.clone()
            })
        })
        .collect()
}

pub fn parse_grid(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::config("grid", format!("`{pair}` is not l1:l2")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config("grid", format!("`{v}` is not a number")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

/// Runs every subcommand except `serve`; returns the summary printed on
/// stdout.
pub fn run(command: Command) -> Result<Value> {
    match command {
        Command::Synth {
            experiment,
            manifest,
        } => {
            let m = match manifest {
                Some(p) => read_json(&p)?,
                None => ExperimentManifest::reference(),
            };
            let dir = ExperimentDir::create(&experiment, &m)?;
            dir.materialize(&m)?;
            let p = m.partitions;
            Ok(json!({
                "experiment": experiment,
                "base": [p.base_train, p.base_val],
                "novel": [p.novel_pool, p.novel_test],
                "second_base": m.second_base.is_some(),
            }))
        }
        Command::InitTrain { experiment } => {
            let (dir, m) = open(&experiment)?;
            let bench = dir.load_benchmark(&m)?;
            let ck = run_initialization(&bench, &m)?;
            dir.save_checkpoints(&ck)?;
            Ok(json!({ "main": ck.main.train_meta, "co": ck.co.train_meta }))
        }
        Command::Score { experiment } => {
            let (dir, m) = open(&experiment)?;
            let bench = dir.load_benchmark(&m)?;
            let ck = dir.load_checkpoints()?;
            let scores = agreement_scores(
                &ck.main,
                &ck.co,
                &refs(&bench.enc_a.novel_pool),
                &refs(&bench.enc_b.novel_pool),
            )?;
            write_json(&dir.selection_path("scores"), &scores)?;
            let over = scores
                .iter()
                .filter(|s| 1.0 - s.score > m.selection.threshold)
                .count();
            Ok(json!({ "scored": scores.len(), "above_threshold": over }))
        }
        Command::Select {
            experiment,
            strategy,
            threshold,
            budget,
        } => {
            let (dir, mut m) = open(&experiment)?;
            if let Some(s) = strategy {
                m.selection.strategy = s.into();
            }
            if let Some(t) = threshold {
                m.selection.threshold = t;
            }
            if budget.is_some() {
                m.selection.budget = budget;
            }
            m.selection.validate()?;
            let bench = dir.load_benchmark(&m)?;
            let ck = dir.load_checkpoints()?;
            let sel = select_pool(&bench, &m, &ck.main, &ck.co)?;
            write_json(&dir.selection_path(SELECTION), &sel)?;
            Ok(
                json!({ "strategy": sel.strategy, "selected": sel.selected, "warnings": sel.warnings }),
            )
        }
        Command::Label { experiment, oracle } => {
            if !oracle {
                return contract(
                    "human labels arrive through `serve`; pass --oracle to copy ground truth",
                );
            }
            let (dir, m) = open(&experiment)?;
            let pool = dir.load_pool(&m)?;
            let sel: SelectionResult = read_json(&dir.selection_path(SELECTION))?;
            for id in &sel.selected {
                let page = pool.iter().find(|s| &s.id == id).ok_or_else(|| {
                    Error::contract(format!("selected id {id} is not in the pool"))
                })?;
                dir.write_label(id, &page.mask)?;
            }
            Ok(json!({ "labeled": sel.selected }))
        }
        Command::Update {
            experiment,
            strategy,
            lambda1,
            lambda2,
        } => {
            let (dir, mut m) = open(&experiment)?;
            m.update.strategy = strategy.into();
            m.update.lambda1 = lambda1.unwrap_or(m.update.lambda1);
            m.update.lambda2 = lambda2.unwrap_or(m.update.lambda2);
            m.update.validate()?;
            let bench = dir.load_benchmark(&m)?;
            let labeled = labeled_selection(&dir, &bench.corpora.novel_pool)?;
            if labeled.is_empty() {
                return contract("the selection is empty; nothing to update with");
            }
            let ck = dir.load_checkpoints()?;
            let baseline = evaluate(&bench, &ck.main)?;
            let round = update_round(&bench, &m, &ck.main, &labeled, &baseline)?;
            let name = format!("main_{}", m.update.strategy.name().to_lowercase());
            if let Some(model) = &round.model {
                save_checkpoint(model, &dir.checkpoint_path(&name))?;
            }
            let report = UpdateReport::new(
                &m.update,
                vec![SeedMetrics {
                    seed: m.update.train.seed,
                    metrics: round.updated,
                }],
            );
            write_json(
                &dir.report_path(&format!(
                    "update-{}",
                    m.update.strategy.name().to_lowercase()
                )),
                &report,
            )?;
            Ok(json!({
                "strategy": report.strategy,
                "lambda1": report.lambda1,
                "lambda2": report.lambda2,
                "checkpoint": name,
                "baseline_f1": baseline.f1,
                "f1": report.mean_f1,
            }))
        }
        Command::Eval {
            experiment,
            checkpoint,
            predictions,
        } => {
            let (dir, m) = open(&experiment)?;
            let report = match predictions {
                Some(pred_dir) => {
                    let corpora = dir.load_corpora(&m)?;
                    let mut cm = ConfusionMatrix::new(CLASS_COUNT);
                    for s in &corpora.novel_test {
                        let pred = read_mask_pgm(&pred_dir.join(format!("{}.mask.pgm", s.id)))?;
                        cm.accumulate(&pred, &s.mask)?;
                    }
                    cm.report()?
                }
                None => {
                    let bench = dir.load_benchmark(&m)?;
                    evaluate(&bench, &dir.load_agent(&checkpoint)?)?
                }
            };
            write_json(&dir.report_path("eval"), &report)?;
            Ok(serde_json::to_value(&report)?)
        }
        Command::Loop {
            experiment,
            provider,
        } => {
            let (dir, m) = open(&experiment)?;
            let bench = dir.load_benchmark(&m)?;
            let ck = match dir.load_checkpoints() {
                Ok(ck) => ck,
                Err(_) => {
                    let ck = run_initialization(&bench, &m)?;
                    dir.save_checkpoints(&ck)?;
                    ck
                }
            };
            let outcome = match provider {
                ProviderArg::Oracle => run_kss_iteration(&bench, &m, &ck, &mut OracleLabels)?,
                ProviderArg::Human => {
                    run_kss_iteration(&bench, &m, &ck, &mut QueueLabels { dir: dir.clone() })?
                }
            };
            record_outcome(&dir, outcome)
        }
        Command::Ablate {
            what,
            experiment,
            budget,
            grid,
        } => {
            let (dir, m) = open(&experiment)?;
            let bench = dir.load_benchmark(&m)?;
            let (name, value) = match what {
                AblateArg::Collab => (
                    "collab",
                    serde_json::to_value(run_collab_mode_ablation(&bench, &m)?)?,
                ),
                AblateArg::Selection => {
                    let b = budget.or(m.selection.budget).unwrap_or(12);
                    (
                        "selection",
                        serde_json::to_value(run_selection_comparison(&bench, &m, b)?)?,
                    )
                }
                AblateArg::Update => (
                    "update",
                    serde_json::to_value(run_update_comparison(&bench, &m)?)?,
                ),
                AblateArg::Lambdas => {
                    let g = parse_grid(grid.as_deref().unwrap_or("0.2:0.8,0.5:0.5,0.8:0.2"))?;
                    (
                        "lambdas",
                        serde_json::to_value(run_lambda_sweep(&bench, &m, &g)?)?,
                    )
                }
            };
            write_json(&dir.report_path(&format!("ablate-{name}")), &value)?;
            Ok(value)
        }
        Command::Serve { .. } => contract("serve runs through the async entry point"),
    }
}

/// Ids of novel test pages; used by tests to build prediction dumps.
pub fn test_ids(dir: &ExperimentDir, m: &ExperimentManifest) -> Result<BTreeSet<String>> {
    Ok(dir
        .load_corpora(m)?
        .novel_test
        .into_iter()
        .map(|s| s.id)
        .collect())
}
