//! Losses, the Adam optimizer, and the three adaptation regimes.
//!
//! All three regimes share one loop: sample frame pairs across the training
//! clips, batch them, descend with Adam, track validation loss per epoch,
//! and keep the best-validation weights. They differ only in where the
//! initial parameters come from and which of them may move:
//!
//! * `scratch` initializes everything fresh and trains everything; with an
//!   `mse` loss and a regression head this is pulse training.
//! * `full_retrain` starts from given weights and trains everything.
//! * `frozen_transfer` transplants the convolutional body from given
//!   weights, pins it, and trains a freshly initialized head.

use crate::dataset::{ClipEntry, ClipSampler, DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::ClipClass;
use crate::network::{self, HeadKind, ModelWeights, NetworkConfig};
use crate::preprocess::PreprocessConfig;
use crate::tensor::{ParameterSet, Tape, BCE_CLAMP};
use crate::util::derive_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Scratch,
    FullRetrain,
    FrozenTransfer,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Scratch => "scratch",
            Regime::FullRetrain => "full_retrain",
            Regime::FrozenTransfer => "frozen_transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub loss: LossKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Frame pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a new best validation loss before training stops.
    pub patience: usize,
    /// When set, each epoch draws this many pairs per clip instead of
    /// walking every pair; bounds epoch cost on long clips.
    pub pairs_per_clip: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Scratch,
            loss: LossKind::Bce,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            patience: 10,
            pairs_per_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be positive".to_string()));
        }
        if self.pairs_per_clip == Some(0) {
            return Err(Error::InvalidArgument("pairs_per_clip must be positive when set".to_string()));
        }
        Ok(())
    }

    /// The loss must fit the head: regression trains against mse, the
    /// binary head against bce.
    pub fn check_loss_head(&self, net: &NetworkConfig) -> Result<()> {
        let ok = matches!(
            (self.loss, net.head),
            (LossKind::Mse, HeadKind::Regression) | (LossKind::Bce, HeadKind::Binary)
        );
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "loss {:?} does not fit a {:?} head",
                self.loss, net.head
            )));
        }
        Ok(())
    }
}

/// Mean squared error over paired sequences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "mse needs equal non-empty sequences, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::nonfinite("mse"));
    }
    Ok(loss)
}

/// Mean binary cross-entropy; predictions are clamped away from 0 and 1 by
/// the same margin the tape op uses.
pub fn bce(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "bce needs equal non-empty sequences, got {} and {}",
            pred.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidArgument("bce labels must lie in [0, 1]".to_string()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    for (a, y) in pred.iter().zip(labels) {
        let c = a.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::nonfinite("bce"));
    }
    Ok(loss)
}

/// Per-parameter first and second moment estimates, aligned with the
/// parameter set's order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect::<Vec<_>>();
        AdamState { step: 0, m: m.clone(), v: m }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. `grads` is aligned with the
/// parameter order; trainable parameters need a gradient, frozen ones are
/// left untouched whether or not one is present.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &[Option<&[f64]>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam alignment broken: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (name, p)) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = grads[i].ok_or_else(|| {
            Error::InvalidArgument(format!("trainable parameter {name} received no gradient"))
        })?;
        if g.len() != p.tensor.len() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient for {name} has {} values, parameter {}", g.len(), p.tensor.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::nonfinite(format!("gradient of {name}")));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = p.tensor.data_mut();
        for j in 0..data.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// L2 norm over all parameter values after the epoch.
    pub param_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.seconds
            ));
        }
        out
    }
}

fn provenance_tag(cfg: &TrainConfig) -> &'static str {
    match (cfg.loss, cfg.regime) {
        (LossKind::Mse, _) => "deepphys",
        (LossKind::Bce, Regime::FullRetrain) => "deepfake",
        (LossKind::Bce, _) => "pad",
    }
}

fn class_label(class: ClipClass) -> f64 {
    match class {
        ClipClass::BonaFide => 1.0,
        ClipClass::Attack(_) => 0.0,
    }
}

/// Clips a regime trains on: bce uses every clip; mse needs a pulse target,
/// so it keeps bona-fide clips that carry a trace.
fn usable<'a>(entries: impl Iterator<Item = &'a ClipEntry>, loss: LossKind) -> Vec<&'a ClipEntry> {
    entries
        .filter(|e| match loss {
            LossKind::Bce => true,
            LossKind::Mse => e.label == Label::BonaFide && e.pulse_path.is_some(),
        })
        .collect()
}

fn open_samplers(
    entries: &[&ClipEntry],
    manifest_dir: &Path,
    pre: &PreprocessConfig,
) -> Result<Vec<ClipSampler>> {
    entries.iter().map(|e| ClipSampler::open(e, manifest_dir, pre)).collect()
}

fn sample_target(s: &ClipSampler, t: usize, loss: LossKind) -> Result<f64> {
    match loss {
        LossKind::Bce => Ok(class_label(s.class)),
        LossKind::Mse => s
            .pulse_target(t)
            .ok_or_else(|| Error::Data(format!("clip {} has no pulse target for pair {t}", s.id))),
    }
}

/// Draws this epoch's (clip, pair) visit list. With `pairs_per_clip` set,
/// each clip contributes that many distinct pairs (or all of them if
/// shorter), sampled without replacement.
fn epoch_pairs(
    samplers: &[ClipSampler],
    pairs_per_clip: Option<usize>,
    rng: &mut impl rand::Rng,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ci, s) in samplers.iter().enumerate() {
        let n = s.pair_count();
        match pairs_per_clip {
            Some(k) if k < n => {
                let mut picks: Vec<usize> =
                    rand::seq::index::sample(rng, n, k).into_iter().map(|i| i + 1).collect();
                picks.sort_unstable();
                out.extend(picks.into_iter().map(|t| (ci, t)));
            }
            _ => out.extend((1..=n).map(|t| (ci, t))),
        }
    }
    out
}

/// Mean loss of eval-mode predictions over a fixed pair list.
fn eval_loss(
    weights: &ModelWeights,
    samplers: &mut [ClipSampler],
    pairs: &[(usize, usize)],
    loss: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = network::bind(&mut tape, weights, false);
    let mark = tape.mark();
    let mut rng = derive_rng(0, "eval/unused");
    let mut preds = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for &(ci, t) in pairs {
        tape.truncate(mark);
        let (m, a) = samplers[ci].pair(t)?;
        let pass = network::forward(&mut tape, weights, &bound, &m, &a, &mut rng)?;
        preds.push(tape.value(pass.score).data()[0]);
        targets.push(sample_target(&samplers[ci], t, loss)?);
    }
    match loss {
        LossKind::Mse => mse(&preds, &targets),
        LossKind::Bce => bce(&preds, &targets),
    }
}

/// Eval-mode score of every frame pair of one clip, in order. Pooling these
/// gives the clip's video-level score.
pub fn score_clip(weights: &ModelWeights, sampler: &mut ClipSampler) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = network::bind(&mut tape, weights, false);
    let mark = tape.mark();
    let mut rng = derive_rng(0, "eval/unused");
    let mut scores = Vec::with_capacity(sampler.pair_count());
    for t in 1..=sampler.pair_count() {
        tape.truncate(mark);
        let (m, a) = sampler.pair(t)?;
        let pass = network::forward(&mut tape, weights, &bound, &m, &a, &mut rng)?;
        scores.push(tape.value(pass.score).data()[0]);
    }
    Ok(scores)
}

/// Builds the starting weights for a regime from optional parent weights,
/// setting trainable flags and the provenance chain (the new stage's tag is
/// appended last).
fn initial_weights(
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    init: Option<&ModelWeights>,
) -> Result<ModelWeights> {
    let mut w = ModelWeights::init(net_cfg.clone(), cfg.seed)?;
    match (cfg.regime, init) {
        (Regime::Scratch, None) => {}
        (Regime::Scratch, Some(_)) => {
            return Err(Error::InvalidArgument(
                "scratch regime does not take initial weights".to_string(),
            ));
        }
        (Regime::FullRetrain, Some(parent)) | (Regime::FrozenTransfer, Some(parent)) => {
            if !parent.config.body_compatible(net_cfg) {
                return Err(Error::ConfigMismatch {
                    expected: net_cfg.config_hash(),
                    found: parent.config.config_hash(),
                });
            }
            let frozen_body = cfg.regime == Regime::FrozenTransfer;
            for (name, p) in w.params.iter_mut() {
                let body = network::is_body_param(name);
                // frozen_transfer swaps in a freshly initialized head for the
                // new task, so only body values carry over; full_retrain
                // keeps every parameter whose shape still fits.
                if body || !frozen_body {
                    if let Some(src) = parent.params.get(name) {
                        if src.tensor.shape() == p.tensor.shape() {
                            p.tensor = src.tensor.clone();
                        }
                    }
                }
                if frozen_body && body {
                    p.trainable = false;
                }
            }
            w.provenance = parent.provenance.clone();
        }
        (Regime::FullRetrain, None) | (Regime::FrozenTransfer, None) => {
            return Err(Error::InvalidArgument(format!(
                "{} requires initial weights",
                cfg.regime.as_str()
            )));
        }
    }
    w.provenance.push(provenance_tag(cfg).to_string());
    Ok(w)
}

/// Runs one training regime over the manifest's train split, validating on
/// its val split each epoch, and returns the weights with the best
/// validation loss together with the per-epoch log.
pub fn train(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    pre_cfg: &PreprocessConfig,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    init: Option<&ModelWeights>,
) -> Result<(ModelWeights, TrainLog)> {
    cfg.validate()?;
    net_cfg.validate()?;
    pre_cfg.validate()?;
    cfg.check_loss_head(net_cfg)?;

    let train_entries = usable(manifest.split(Split::Train), cfg.loss);
    let val_entries = usable(manifest.split(Split::Val), cfg.loss);
    if train_entries.is_empty() {
        return Err(Error::Data("manifest has no usable clips in the train split".to_string()));
    }
    if val_entries.is_empty() {
        return Err(Error::Data("manifest has no usable clips in the val split".to_string()));
    }

    let mut weights = initial_weights(net_cfg, cfg, init)?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((weights, log));
    }

    let mut train_samplers = open_samplers(&train_entries, manifest_dir, pre_cfg)?;
    let mut val_samplers = open_samplers(&val_entries, manifest_dir, pre_cfg)?;
    // The validation pair list is fixed once so epoch losses stay comparable.
    let val_pairs = epoch_pairs(
        &val_samplers,
        cfg.pairs_per_clip,
        &mut derive_rng(cfg.seed, "val_pairs"),
    );

    let mut adam = AdamState::new(&weights.params);
    let mut best: Option<(f64, ModelWeights)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut pair_rng = derive_rng(cfg.seed, &format!("pairs/{epoch}"));
        let mut pairs = epoch_pairs(&train_samplers, cfg.pairs_per_clip, &mut pair_rng);
        pairs.shuffle(&mut derive_rng(cfg.seed, &format!("shuffle/{epoch}")));
        let mut dropout_rng = derive_rng(cfg.seed, &format!("dropout/{epoch}"));

        let mut loss_sum = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = network::bind(&mut tape, &weights, true);
            let mut scores = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &(ci, t) in batch {
                let (m, a) = train_samplers[ci].pair(t)?;
                let pass = network::forward(&mut tape, &weights, &bound, &m, &a, &mut dropout_rng)?;
                scores.push(pass.score);
                targets.push(sample_target(&train_samplers[ci], t, cfg.loss)?);
            }
            let stacked = tape.concat(&scores)?;
            let loss = match cfg.loss {
                LossKind::Mse => tape.mse_loss(stacked, &targets)?,
                LossKind::Bce => tape.bce_loss(stacked, &targets)?,
            };
            loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Option<&[f64]>> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
            adam_step(&mut weights.params, &grads, &mut adam, cfg)?;
        }
        let train_loss = loss_sum / pairs.len() as f64;
        let val_loss = eval_loss(&weights, &mut val_samplers, &val_pairs, cfg.loss)?;
        let param_norm = weights
            .params
            .iter()
            .flat_map(|(_, p)| p.tensor.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            param_norm,
            seconds: t0.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, weights.clone()));
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, w)) = best {
        weights = w;
    }
    Ok((weights, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg_with(lr: f64) -> TrainConfig {
        TrainConfig { lr, ..TrainConfig::default() }
    }

    fn single_param(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::new(vec![1], vec![value]).unwrap(), true).unwrap();
        p
    }

    #[test]
    fn mse_matches_hand_values() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_matches_hand_formula() {
        let half = bce(&[0.5], &[1.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(&[0.5], &[0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // Saturated predictions stay finite thanks to the clamp.
        assert!(bce(&[0.0, 1.0], &[0.0, 1.0]).unwrap() < 1e-6);
        assert!(bce(&[1.0], &[0.0]).unwrap().is_finite());
        // Mixed batch against the direct sum.
        let p = [0.9, 0.2, 0.6];
        let y = [1.0, 0.0, 1.0];
        let want = -((0.9f64.ln()) + (0.8f64.ln()) + (0.6f64.ln())) / 3.0;
        assert!((bce(&p, &y).unwrap() - want).abs() < 1e-12);
        assert!(bce(&[0.5], &[1.5]).is_err());
    }

    #[test]
    fn adam_first_step_magnitude_is_the_learning_rate() {
        let mut params = single_param(0.0);
        let mut state = AdamState::new(&params);
        let cfg = cfg_with(0.01);
        let g = [0.5];
        adam_step(&mut params, &[Some(&g)], &mut state, &cfg).unwrap();
        let x = params.get("x").unwrap().tensor.data()[0];
        // First bias-corrected step is lr * g / (|g| + eps') regardless of
        // the gradient's size.
        assert!((x + cfg.lr).abs() < 1e-9, "x {x}");
    }

    #[test]
    fn adam_leaves_frozen_and_zero_grad_params_alone() {
        let mut params = single_param(1.5);
        params.get_mut("x").unwrap().trainable = false;
        let mut state = AdamState::new(&params);
        let g = [2.0];
        adam_step(&mut params, &[Some(&g)], &mut state, &cfg_with(0.1)).unwrap();
        assert_eq!(params.get("x").unwrap().tensor.data()[0], 1.5);

        let mut params = single_param(1.5);
        let mut state = AdamState::new(&params);
        let g = [0.0];
        adam_step(&mut params, &[Some(&g)], &mut state, &cfg_with(0.1)).unwrap();
        assert_eq!(params.get("x").unwrap().tensor.data()[0], 1.5);
    }

    #[test]
    fn adam_with_zero_lr_changes_nothing() {
        let mut params = single_param(0.7);
        let mut state = AdamState::new(&params);
        let g = [3.0];
        adam_step(&mut params, &[Some(&g)], &mut state, &cfg_with(0.0)).unwrap();
        assert_eq!(params.get("x").unwrap().tensor.data()[0], 0.7);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut params = single_param(0.0);
        let mut state = AdamState::new(&params);
        let g = [f64::NAN];
        assert!(adam_step(&mut params, &[Some(&g)], &mut state, &cfg_with(0.1)).is_err());
        assert!(adam_step(&mut params, &[None], &mut state, &cfg_with(0.1)).is_err());
        let long = [1.0, 2.0];
        assert!(adam_step(&mut params, &[Some(&long)], &mut state, &cfg_with(0.1)).is_err());
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut params = single_param(0.0);
        let mut state = AdamState::new(&params);
        let cfg = cfg_with(0.1);
        for _ in 0..200 {
            let x = params.get("x").unwrap().tensor.data()[0];
            let g = [2.0 * (x - 3.0)];
            adam_step(&mut params, &[Some(&g)], &mut state, &cfg).unwrap();
        }
        let x = params.get("x").unwrap().tensor.data()[0];
        assert!((x - 3.0).abs() < 0.1, "x {x}");
    }

    #[test]
    fn config_validation_and_loss_head_pairing() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(cfg_with(0.0).validate().is_err());
        assert!(cfg_with(-1.0).validate().is_err());
        let mut c = TrainConfig::default();
        c.beta1 = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.pairs_per_clip = Some(0);
        assert!(c.validate().is_err());

        let mut net = NetworkConfig::default();
        net.head = HeadKind::Binary;
        let mut t = TrainConfig::default();
        t.loss = LossKind::Bce;
        assert!(t.check_loss_head(&net).is_ok());
        t.loss = LossKind::Mse;
        assert!(t.check_loss_head(&net).is_err());
        net.head = HeadKind::Regression;
        assert!(t.check_loss_head(&net).is_ok());
        t.loss = LossKind::Bce;
        assert!(t.check_loss_head(&net).is_err());
    }

    #[test]
    fn provenance_tags_follow_loss_and_regime() {
        let mut c = TrainConfig::default();
        c.loss = LossKind::Mse;
        c.regime = Regime::Scratch;
        assert_eq!(provenance_tag(&c), "deepphys");
        c.loss = LossKind::Bce;
        c.regime = Regime::FullRetrain;
        assert_eq!(provenance_tag(&c), "deepfake");
        c.regime = Regime::FrozenTransfer;
        assert_eq!(provenance_tag(&c), "pad");
        c.regime = Regime::Scratch;
        assert_eq!(provenance_tag(&c), "pad");
    }

    #[test]
    fn train_log_csv_shape() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                param_norm: 3.0,
                seconds: 1.5,
            }],
            best_epoch: Some(1),
            stopped_early: false,
        };
        assert_eq!(log.to_csv(), "epoch,train_loss,val_loss,seconds\n1,0.500000,0.250000,1.500\n");
    }
}
