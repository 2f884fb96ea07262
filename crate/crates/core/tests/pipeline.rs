//! Cross-module workflow test: procedural phantoms flow through dataset
//! assembly, a short training run, volume synthesis, metric evaluation, and
//! a checkpoint round trip — exercising the public API end to end the way
//! the command-line tool does.

use std::fs;
use std::path::PathBuf;

use agct_core::checkpoint::load_checkpoint;
use agct_core::metrics::{aggregate, evaluate, kfold};
use agct_core::model::{
    synthesize_volume, train, ModelConfig, ModelKind, TrainConfig,
};
use agct_core::phantom::{
    dataset_slices, generate_phantom, read_volume, write_volume, PhantomParams,
};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("agct-pipeline-tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

#[test]
fn phantoms_train_synthesize_evaluate_and_checkpoint_round_trip() {
    let dir = scratch("workflow");
    let params = PhantomParams {
        size: 32,
        subjects: 3,
        slices: 3,
        anomaly_rate: 0.5,
        noise: 0.02,
        bias_strength: 1.0,
        seed: 21,
    };
    for (mr, ct) in generate_phantom(&params).expect("phantoms") {
        let id = mr.subject_id.clone();
        write_volume(&mr, &dir.join(format!("{id}_mr.vol.json"))).unwrap();
        write_volume(&ct, &dir.join(format!("{id}_ct.vol.json"))).unwrap();
    }

    // Subject-level fold plan covers every subject exactly once as test.
    let ids: Vec<String> = (0..3).map(|i| format!("subject_{i:03}")).collect();
    let spec = kfold(&ids, 3, 0).expect("fold plan");
    let mut seen: Vec<String> = spec.folds.iter().flatten().cloned().collect();
    seen.sort();
    assert_eq!(seen, ids, "folds must partition the subjects");
    let (train_ids, test_ids) = spec.split(0);
    assert_eq!(train_ids.len(), 2);
    assert_eq!(test_ids.len(), 1);

    // Train the reconstruction-only variant on two subjects.
    let held_out = "subject_002";
    let (dataset, skipped) = dataset_slices(&dir, |id| id != held_out).expect("dataset");
    assert!(skipped.is_empty());
    assert_eq!(dataset.len(), 6, "2 subjects x 3 planes");

    let mut cfg = TrainConfig::new(ModelConfig {
        kind: ModelKind::Cnn,
        height: 32,
        width: 32,
        base_width: 4,
        attention_layer: 3,
    });
    cfg.epochs = 3;
    cfg.seed = 5;
    let (trainer, history) = train(&cfg, &dataset, None, |_, _| {}).expect("training");
    assert_eq!(history.epochs.len(), 3);
    let first = history.epochs.first().unwrap().reconstruction;
    let last = history.epochs.last().unwrap().reconstruction;
    assert!(first.is_finite() && last.is_finite());
    assert!(
        last < first,
        "reconstruction loss should fall over three epochs: {first:.4} -> {last:.4}"
    );
    // The reconstruction-only variant carries no adversarial stats.
    assert!(history.epochs[0].d_loss.is_none());
    assert!(history.epochs[0].adversarial.is_none());

    // Held-out synthesis stays on the CT scale and reports sane metrics.
    let mr = read_volume(&dir.join(format!("{held_out}_mr.vol.json"))).unwrap();
    let real_ct = read_volume(&dir.join(format!("{held_out}_ct.vol.json"))).unwrap();
    let result = synthesize_volume(&trainer.models, &mr).expect("synthesis");
    assert_eq!(result.ct.dims(), mr.dims());
    assert!(result
        .ct
        .voxels
        .iter()
        .all(|v| v.is_finite() && (-1024.0..=3000.0).contains(v)));
    assert!(result.masks.iter().any(|m| !m.is_empty()), "no head found anywhere");

    let report = evaluate(&real_ct, &result.ct, &result.masks).expect("metrics");
    assert!(report.mae_full.is_finite() && report.mae_full >= 0.0);
    assert!(report.voxels_head > 0);
    let agg = aggregate(std::slice::from_ref(&report)).expect("aggregate");
    assert_eq!(agg.mae_full.mean, Some(report.mae_full));
    assert_eq!(agg.mae_full.sd, Some(0.0), "single report has zero spread");

    // Checkpoint round trip: the reloaded model reproduces inference bits.
    let ckpt = dir.join("model.ckpt");
    trainer
        .save(&trainer.manifest(&cfg, cfg.epochs), &ckpt)
        .expect("save");
    let loaded = load_checkpoint(&ckpt).expect("load");
    assert!(loaded.models.discriminator.is_none(), "pure CNN has no discriminator");
    assert_eq!(loaded.manifest.model, cfg.model);
    let again = synthesize_volume(&loaded.models, &mr).expect("reloaded synthesis");
    assert!(again
        .ct
        .voxels
        .iter()
        .zip(&result.ct.voxels)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}
