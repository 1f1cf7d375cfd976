//! The training loop end to end on a micro model: logs, checkpoints,
//! determinism and failure handling.

mod common;

use camoseg::checkpoint::Checkpoint;
use camoseg::infer::{infer_image, Predictor, MASK_FILE};
use camoseg::model::{is_text_param, CamoModel};
use camoseg::nn::ParamStore;
use camoseg::objective::LossWeights;
use camoseg::taxonomy::AttributeTaxonomy;
use camoseg::train::{train, StepRecord, TrainOptions, CHECKPOINT_FILE, EPOCH_LOG_FILE, STEP_LOG_FILE};
use camoseg::Error;
use candle_core::DType;
use common::{micro_config, synth};

fn step_log(dir: &std::path::Path) -> Vec<StepRecord> {
    std::fs::read_to_string(dir.join(STEP_LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn logs_one_line_per_step_with_a_constant_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 10, 32, 1);
    let cfg = micro_config();
    let out = tmp.path().join("run");
    let outcome = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(&out)).unwrap();
    // 10 samples in batches of 4 make batches of 4 and 6 (the pair is kept).
    let log = step_log(&out);
    assert_eq!(log.len(), 3 * 3);
    assert_eq!(outcome.checkpoint.step, 9);
    assert_eq!(outcome.checkpoint.epoch, 3);
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
    assert!(log.iter().all(|r| r.config_hash == cfg.hash()));
    assert!(log.iter().all(|r| r.total.is_finite()));
    assert_eq!(log[0].lr, cfg.lr);
    assert_eq!(log[8].lr, cfg.lr * cfg.lr_decay);
    let epochs = std::fs::read_to_string(out.join(EPOCH_LOG_FILE)).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    assert!(outcome.checkpoint.metrics.contains_key("train_total"));
}

#[test]
fn max_steps_stops_early() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 8, 32, 2);
    let mut cfg = micro_config();
    cfg.max_steps = Some(3);
    let out = tmp.path().join("run");
    let outcome = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(&out)).unwrap();
    assert_eq!(outcome.checkpoint.step, 3);
    assert_eq!(step_log(&out).len(), 3);
}

#[test]
fn same_seed_same_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 8, 32, 3);
    let mut cfg = micro_config();
    cfg.hflip = true;
    let tax = AttributeTaxonomy::default();
    let a = train(&cfg, &manifest, &tax, &TrainOptions::new(tmp.path().join("a"))).unwrap();
    let b = train(&cfg, &manifest, &tax, &TrainOptions::new(tmp.path().join("b"))).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((x.total - y.total).abs() < 1e-6);
    }
    let image = manifest.resolve(&manifest.entries[0].image);
    let pa = Predictor::load(&a.checkpoint_path).unwrap();
    let pb = Predictor::load(&b.checkpoint_path).unwrap();
    infer_image(&pa, &image, &tmp.path().join("ia")).unwrap();
    infer_image(&pb, &image, &tmp.path().join("ib")).unwrap();
    for f in [MASK_FILE, "fixation.png", "attributes.json"] {
        assert_eq!(std::fs::read(tmp.path().join("ia").join(f)).unwrap(), std::fs::read(tmp.path().join("ib").join(f)).unwrap(), "{f}");
    }

    cfg.seed = 1;
    let c = train(&cfg, &manifest, &tax, &TrainOptions::new(tmp.path().join("c"))).unwrap();
    assert_ne!(a.history[0].total, c.history[0].total);
}

#[test]
fn zero_consistency_weight_leaves_the_text_side_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 8, 32, 4);
    let mut cfg = micro_config();
    cfg.loss_weights = LossWeights { gamma: 0.0, ..LossWeights::default() };
    let out = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(tmp.path().join("run"))).unwrap();

    let fresh = ParamStore::new(DType::F32, cfg.seed);
    CamoModel::new(&fresh, &cfg.model(), true).unwrap();
    let text: Vec<_> = fresh.all().into_iter().filter(|(n, _)| is_text_param(n)).collect();
    assert!(text.iter().any(|(n, _)| n.starts_with("objective.text_proj.")));
    for (name, var) in text {
        let init = var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let stored = &out.checkpoint.params[&name].data;
        assert!(init.iter().zip(stored).all(|(a, b)| a.to_bits() == b.to_bits()), "{name} moved");
    }
    assert!(out.checkpoint.adam_m.keys().all(|n| !is_text_param(n)));
    assert!(out.history.iter().all(|b| b.consist.is_finite()));

    // With the term switched on the projector does train.
    cfg.loss_weights.gamma = 1.0;
    let on = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(tmp.path().join("on"))).unwrap();
    assert!(on.checkpoint.adam_m.keys().any(|n| n.starts_with("objective.text_proj.")));
}

#[test]
fn non_finite_loss_aborts_and_keeps_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 8, 32, 5);
    let mut cfg = micro_config();
    cfg.lr = 1e30;
    cfg.epochs = 20;
    cfg.lr_decay_epoch = 10;
    let out = tmp.path().join("run");
    let err = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(&out)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    let ckpt = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    // The update that produced the bad parameters is rolled back.
    let steps = step_log(&out).len();
    assert!(steps >= 1);
    assert_eq!(ckpt.step as usize, steps - 1);
    assert_eq!(ckpt.adam_step, ckpt.step);
    assert!(ckpt.params.values().all(|r| r.data.iter().all(|v| v.is_finite())));
}

#[test]
fn checkpoints_round_trip_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 32, 6);
    let mut cfg = micro_config();
    cfg.max_steps = Some(2);
    let out = tmp.path().join("run");
    let outcome = train(&cfg, &manifest, &AttributeTaxonomy::default(), &TrainOptions::new(&out)).unwrap();
    let path = out.join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, outcome.checkpoint);
    let again = tmp.path().join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);

    // Saving leaves only the final file behind.
    let names: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.iter().all(|n| n == "again.ckpt" || n == "run" || n == "data"), "{names:?}");

    // Restored Adam state continues from the same step.
    let adam = loaded.restore_adam(DType::F32).unwrap();
    assert_eq!(adam.step_count(), 2);

    // Truncated files and foreign configs are rejected.
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut other = cfg.clone();
    other.fixation.blocks = 2;
    let store = ParamStore::new(DType::F32, 0);
    CamoModel::new(&store, &other.model(), false).unwrap();
    assert!(loaded.restore_params(&store).is_err());
    let mut narrower = cfg.clone();
    narrower.mask.conv_channels = 4;
    let store = ParamStore::new(DType::F32, 0);
    CamoModel::new(&store, &narrower.model(), false).unwrap();
    assert!(loaded.restore_params(&store).is_err());
}
