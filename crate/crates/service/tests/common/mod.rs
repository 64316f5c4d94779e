#![allow(dead_code)]

use std::path::Path;

use doclab_core::experiment::ExperimentDir;
use doclab_core::pipeline::{ExperimentManifest, PartitionSizes};
use doclab_core::synth::SynthConfig;
use doclab_service::cli::{run, Command, ProviderArg};
use serde_json::Value;

/// A manifest small enough to train in well under a second.
pub fn tiny() -> ExperimentManifest {
    let mut m = ExperimentManifest::reference();
    let shrink = |c: &mut SynthConfig| {
        c.page_width_px = 40;
        c.page_height_px = 40;
    };
    shrink(&mut m.base.config);
    shrink(&mut m.novel.config);
    shrink(&mut m.mix.synth_config);
    if let Some(s) = &mut m.second_base {
        shrink(&mut s.config);
    }
    m.partitions = PartitionSizes {
        base_train: 4,
        base_val: 2,
        novel_pool: 5,
        novel_test: 3,
    };
    m.normalizer_pages = 4;
    m.init_train.epochs = 1;
    m.init_train.steps_per_epoch = Some(4);
    m.init_train.batch_pixels = 128;
    m.update.train.epochs = 1;
    m.update.train.steps_per_epoch = Some(4);
    m.update.train.batch_pixels = 128;
    m.selection.threshold = 0.01;
    m.mix.target_total = 6;
    m.replicate_seeds = vec![101, 202];
    m
}

pub fn write_manifest(root: &Path, m: &ExperimentManifest) -> std::path::PathBuf {
    let path = root.join("tiny-manifest.json");
    std::fs::write(&path, serde_json::to_string(m).unwrap()).unwrap();
    path
}

/// Synthesizes the tiny experiment under `root/exp`.
pub fn synth(root: &Path) -> (ExperimentDir, ExperimentManifest) {
    let m = tiny();
    let experiment = root.join("exp");
    run(Command::Synth {
        experiment: experiment.clone(),
        manifest: Some(write_manifest(root, &m)),
    })
    .unwrap();
    (ExperimentDir::new(experiment), m)
}

/// Synthesizes, trains and opens a labelling queue.
pub fn suspended(root: &Path) -> (ExperimentDir, ExperimentManifest, Value) {
    let (dir, m) = synth(root);
    let out = run(Command::Loop {
        experiment: dir.root().to_path_buf(),
        provider: ProviderArg::Human,
    })
    .unwrap();
    assert_eq!(out["status"], "suspended", "{out}");
    (dir, m, out)
}
