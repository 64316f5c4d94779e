//! Command line entry points and the labelling HTTP service.

pub mod cli;
pub mod server;

use doclab_core::agents::save_checkpoint;
use doclab_core::experiment::{
    write_json, ExperimentDir, LOOP_REPORT, SELECTION, UPDATED_CHECKPOINT,
};
use doclab_core::pipeline::{IterationOutcome, LoopReport};
use doclab_core::{Error, Result};
use serde_json::{json, Value};

/// Machine-readable error line written to stderr on failure.
pub fn error_line(e: &Error) -> String {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// Persists whatever an iteration produced and returns a summary.
pub fn record_outcome(dir: &ExperimentDir, outcome: IterationOutcome) -> Result<Value> {
    match outcome {
        IterationOutcome::Completed { report, updated } => {
            write_json(&dir.selection_path(SELECTION), &report.selection)?;
            if let Some(model) = &updated {
                save_checkpoint(model, &dir.checkpoint_path(UPDATED_CHECKPOINT))?;
            }
            write_json(&dir.report_path(LOOP_REPORT), &*report)?;
            Ok(loop_summary(&report))
        }
        IterationOutcome::Suspended { run_id, selection } => {
            write_json(&dir.selection_path(SELECTION), &selection)?;
            Ok(json!({
                "status": "suspended",
                "run_id": run_id,
                "pending": selection.selected,
            }))
        }
    }
}

pub fn loop_summary(r: &LoopReport) -> Value {
    let brief = |m: &doclab_core::metrics::MetricsReport| {
        json!({
            "acc": m.acc,
            "precision": m.precision.macro_avg,
            "recall": m.recall.macro_avg,
            "f1": m.f1,
            "iou": m.iou.mean,
        })
    };
    json!({
        "run_id": r.run_id,
        "status": r.status,
        "provider": r.provider,
        "key_count": r.key_count,
        "mixture_size": r.mixture_size,
        "baseline": brief(&r.baseline),
        "updated": brief(&r.updated),
        "wall_clock_secs": r.wall_clock_secs,
    })
}

pub fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::contract(msg))
}
