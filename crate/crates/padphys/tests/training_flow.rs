//! Cross-module training behavior: regime rules, frozen-body guarantees,
//! determinism, and the ability to fit a trivially separable corpus.

use padphys::dataset::{ClipEntry, DatasetManifest, Label, RawClipWriter, Split, ClipSampler};
use padphys::metrics::AttackType;
use padphys::network::{self, is_body_param, ModelWeights, NetworkConfig};
use padphys::preprocess::PreprocessConfig;
use padphys::synthdata::{generate, SynthConfig};
use padphys::tensor::Tensor;
use padphys::training::{score_clip, train, LossKind, Regime, TrainConfig};
use std::collections::BTreeMap;
use std::path::Path;

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        input_size: 12,
        conv_filters: vec![2, 2],
        attention_points: vec![2],
        head_hidden: 8,
        dropout_rate: 0.0,
        ..NetworkConfig::default()
    }
}

fn tiny_pre() -> PreprocessConfig {
    PreprocessConfig { target_size: 12, ..PreprocessConfig::default() }
}

fn bce_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        loss: LossKind::Bce,
        epochs,
        batch_size: 32,
        lr: 0.01,
        seed: 5,
        patience: epochs.max(1),
        ..TrainConfig::default()
    }
}

/// 16x16 frames: bona-fide clips alternate dark and bright (strong motion
/// signal), attack clips are static. A horizontal ramp gives the appearance
/// branch something nonuniform.
fn write_toy_clip(dir: &Path, name: &str, moving: bool, frames: usize) {
    let s = 16usize;
    let mut w = RawClipWriter::create(&dir.join(name), frames, s, s).unwrap();
    for t in 0..frames {
        let level = if moving {
            if t % 2 == 0 { 0.35 } else { 0.65 }
        } else {
            0.5
        };
        let mut data = vec![0.0; 3 * s * s];
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    data[(c * s + y) * s + x] = level + 0.1 * x as f64 / s as f64;
                }
            }
        }
        w.push(&Tensor::new(vec![3, s, s], data).unwrap()).unwrap();
    }
    w.finish().unwrap();
}

fn toy_manifest(dir: &Path) -> DatasetManifest {
    let mut entries = Vec::new();
    for (i, (moving, split)) in [
        (true, Split::Train),
        (true, Split::Train),
        (false, Split::Train),
        (false, Split::Train),
        (true, Split::Val),
        (false, Split::Val),
    ]
    .into_iter()
    .enumerate()
    {
        let name = format!("c{i}.ppraw");
        write_toy_clip(dir, &name, moving, 6);
        entries.push(ClipEntry {
            id: format!("c{i}"),
            path: name,
            label: if moving { Label::BonaFide } else { Label::Attack },
            attack_type: if moving { None } else { Some(AttackType::Pr) },
            split,
            bboxes: None,
            pulse_path: None,
        });
    }
    DatasetManifest::new(entries).unwrap()
}

fn weight_bits(w: &ModelWeights) -> BTreeMap<String, Vec<u64>> {
    w.params
        .iter()
        .map(|(name, p)| (name.to_string(), p.tensor.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn toy_corpus_is_memorized_by_scratch_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path());
    let cfg = bce_cfg(300);
    let (weights, log) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &cfg, None).unwrap();

    let best = log
        .records
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::MAX, f64::min);
    assert!(best < 0.05, "validation BCE stayed at {best}");
    assert!(log.records[0].val_loss > best, "loss must improve from the first epoch");

    let pre = tiny_pre();
    for e in &manifest.entries {
        let mut sampler = ClipSampler::open(e, dir.path(), &pre).unwrap();
        let scores = score_clip(&weights, &mut sampler).unwrap();
        assert_eq!(scores.len(), 5);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        match e.label {
            Label::BonaFide => assert!(mean > 0.7, "{}: {mean}", e.id),
            Label::Attack => assert!(mean < 0.3, "{}: {mean}", e.id),
        }
    }
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path());
    let cfg = bce_cfg(3);
    let (w1, log1) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &cfg, None).unwrap();
    let (w2, log2) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &cfg, None).unwrap();
    assert_eq!(w1.to_bytes().unwrap(), w2.to_bytes().unwrap());
    for (a, b) in log1.records.iter().zip(&log2.records) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
    }

    let mut reseeded = cfg;
    reseeded.seed = 6;
    let (w3, _) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &reseeded, None).unwrap();
    assert_ne!(w1.to_bytes().unwrap(), w3.to_bytes().unwrap());
}

#[test]
fn frozen_transfer_keeps_the_body_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = SynthConfig {
        n_users: 2,
        clips_per_user: 3,
        frames_per_clip: 8,
        frame_size: 24,
        seed: 31,
        ..SynthConfig::default()
    };
    let manifest = generate(&cfg, &corpus).unwrap();

    let parent = ModelWeights::init(tiny_net(), 77).unwrap();
    let parent_bits = weight_bits(&parent);
    let mut tc = bce_cfg(2);
    tc.regime = Regime::FrozenTransfer;
    let (tuned, _) = train(&manifest, &corpus, &tiny_pre(), &tiny_net(), &tc, Some(&parent)).unwrap();

    let tuned_bits = weight_bits(&tuned);
    let mut head_changed = false;
    for (name, p) in tuned.params.iter() {
        if is_body_param(name) {
            assert!(!p.trainable, "{name} must be frozen");
            assert_eq!(tuned_bits[name], parent_bits[name], "{name} drifted");
        } else {
            assert!(p.trainable);
            // Fresh head: initialized anew, then trained.
            head_changed |= parent_bits.get(name) != Some(&tuned_bits[name]);
        }
    }
    assert!(head_changed, "head parameters must differ from the parent");
    assert_eq!(tuned.provenance.last().map(String::as_str), Some("pad"));
}

#[test]
fn full_retrain_with_zero_epochs_returns_the_initial_weights() {
    let parent = ModelWeights::init(tiny_net(), 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path());
    let mut tc = bce_cfg(0);
    tc.regime = Regime::FullRetrain;
    let (out, log) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &tc, Some(&parent)).unwrap();
    assert!(log.records.is_empty());
    assert_eq!(weight_bits(&out), weight_bits(&parent));
    assert!(out.params.iter().all(|(_, p)| p.trainable));
    assert_eq!(out.provenance.last().map(String::as_str), Some("deepfake"));
}

#[test]
fn regimes_enforce_their_initial_weight_rules() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path());
    let parent = ModelWeights::init(tiny_net(), 1).unwrap();

    let mut tc = bce_cfg(1);
    tc.regime = Regime::FrozenTransfer;
    let err = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &tc, None).unwrap_err();
    assert!(err.to_string().contains("requires initial weights"), "{err}");

    tc.regime = Regime::Scratch;
    let err = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &tc, Some(&parent)).unwrap_err();
    assert!(err.to_string().contains("scratch"), "{err}");
}

#[test]
fn oscillating_validation_loss_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path());
    let mut cfg = bce_cfg(200);
    // Far too large a step: validation loss bounces instead of descending,
    // so patience runs out long before the epoch budget.
    cfg.lr = 3.0;
    cfg.patience = 2;
    let (weights, log) = train(&manifest, dir.path(), &tiny_pre(), &tiny_net(), &cfg, None).unwrap();
    assert!(log.stopped_early);
    assert!(log.records.len() < 200);

    let best = log.best_epoch.unwrap();
    assert_eq!(log.records.len(), best + cfg.patience, "stop lags the best epoch by patience");
    let best_val = log.records[best - 1].val_loss;
    assert!(log.records.iter().all(|r| r.val_loss >= best_val));

    // Returned weights are the snapshot from the best epoch, not the last:
    // rescoring the validation split must reproduce the best loss ordering.
    let pre = tiny_pre();
    for e in manifest.entries.iter().filter(|e| e.split == Split::Val) {
        let mut sampler = ClipSampler::open(e, dir.path(), &pre).unwrap();
        for s in score_clip(&weights, &mut sampler).unwrap() {
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
    }
}

#[test]
fn pulse_regression_trains_on_bona_fide_clips_only() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = SynthConfig {
        n_users: 2,
        clips_per_user: 3,
        frames_per_clip: 12,
        frame_size: 24,
        seed: 37,
        ..SynthConfig::default()
    };
    let manifest = generate(&cfg, &corpus).unwrap();

    let mut net = tiny_net();
    net.head = network::HeadKind::Regression;
    let tc = TrainConfig {
        loss: LossKind::Mse,
        epochs: 2,
        batch_size: 16,
        lr: 0.003,
        seed: 9,
        ..TrainConfig::default()
    };
    let (weights, log) = train(&manifest, &corpus, &tiny_pre(), &net, &tc, None).unwrap();
    assert_eq!(log.records.len(), 2);
    assert!(log.records.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
    assert_eq!(weights.provenance, vec!["deepphys".to_string()]);
}
