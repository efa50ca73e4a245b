//! The two-branch convolutional attention network.
//!
//! A motion branch reads the normalized frame difference and regresses the
//! pulse signal (or a liveness score); an appearance branch reads the raw
//! frame and produces spatial attention masks that tell the motion branch
//! where skin is. Both branches share one layout: pairs of same-padded
//! convolutions with tanh activations, average-pooled after each pair. At
//! each attention point a 1x1 convolution over the appearance features is
//! squashed through a sigmoid and normalized to a fixed mass, then
//! multiplied into the motion features across all channels.

use crate::error::{Error, Result};
use crate::tensor::{Padding, ParameterSet, Tape, Tensor, Var};
use crate::util::derive_rng;
use base64::Engine;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use sha2::Digest;
use std::collections::HashMap;
use std::path::Path;

pub const WEIGHTS_HEADER: &str = "PADPHYS-W v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Linear output, one raw value per forward pass.
    Regression,
    /// Sigmoid output in (0, 1); by convention 1 means bona-fide.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Side of the square input, pixels.
    pub input_size: usize,
    /// Output channels of each convolution. Length must be even: the branch
    /// pools after every pair.
    pub conv_filters: Vec<usize>,
    /// Convolution kernel side, odd.
    pub kernel: usize,
    /// 1-based convolution indices after which an attention mask is applied
    /// to the motion branch (before any pooling at that depth).
    pub attention_points: Vec<usize>,
    pub head: HeadKind,
    /// Width of the hidden dense layer between flatten and the output unit.
    pub head_hidden: usize,
    /// Dropout probability after each pooling stage and the hidden layer.
    pub dropout_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 36,
            conv_filters: vec![32, 32, 64, 64],
            kernel: 3,
            attention_points: vec![2, 4],
            head: HeadKind::Binary,
            head_hidden: 128,
            dropout_rate: 0.25,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.is_empty() || self.conv_filters.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "conv_filters must hold an even, positive number of layers, got {}",
                self.conv_filters.len()
            )));
        }
        if self.conv_filters.iter().any(|&f| f == 0) {
            return Err(Error::InvalidArgument("conv_filters entries must be positive".to_string()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel must be odd, got {}", self.kernel)));
        }
        let pools = self.conv_filters.len() / 2;
        let divisor = 1usize << pools;
        if self.input_size == 0 || self.input_size % divisor != 0 {
            return Err(Error::InvalidArgument(format!(
                "input_size {} must be divisible by 2^{pools} to survive {pools} pooling stages",
                self.input_size
            )));
        }
        let n = self.conv_filters.len();
        for window in self.attention_points.windows(2) {
            if window[0] >= window[1] {
                return Err(Error::InvalidArgument(
                    "attention_points must be strictly increasing".to_string(),
                ));
            }
        }
        if self.attention_points.iter().any(|&p| p == 0 || p > n) {
            return Err(Error::InvalidArgument(format!(
                "attention_points must lie in 1..={n}, got {:?}",
                self.attention_points
            )));
        }
        if self.head_hidden == 0 {
            return Err(Error::InvalidArgument("head_hidden must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Spatial side after all pooling stages.
    pub fn pooled_size(&self) -> usize {
        self.input_size >> (self.conv_filters.len() / 2)
    }

    /// Length of the flattened motion features entering the head.
    pub fn flat_len(&self) -> usize {
        self.conv_filters.last().copied().unwrap_or(0) * self.pooled_size() * self.pooled_size()
    }

    /// Hash of the full configuration; any difference (head included) changes it.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = sha2::Sha256::new();
        h.update(json.as_bytes());
        hex(&h.finalize()[..8])
    }

    /// True when the convolutional bodies of two configs have identical
    /// shapes, so body parameters can be transplanted between them. Head and
    /// dropout settings are free to differ.
    pub fn body_compatible(&self, other: &NetworkConfig) -> bool {
        self.input_size == other.input_size
            && self.conv_filters == other.conv_filters
            && self.kernel == other.kernel
            && self.attention_points == other.attention_points
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters whose names start with this prefix form the head; everything
/// else (convolutions and attention projections) is the body that
/// `frozen_transfer` training keeps fixed.
pub const HEAD_PREFIX: &str = "head.";

pub fn is_body_param(name: &str) -> bool {
    !name.starts_with(HEAD_PREFIX)
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
}

fn param_specs(config: &NetworkConfig) -> Vec<ParamSpec> {
    let k = config.kernel;
    let mut specs = Vec::new();
    let mut conv = |prefix: &str| {
        let mut c_in = 3;
        for (i, &c_out) in config.conv_filters.iter().enumerate() {
            specs.push(ParamSpec {
                name: format!("{prefix}.conv{}.weight", i + 1),
                shape: vec![c_out, c_in, k, k],
                fan_in: c_in * k * k,
                fan_out: c_out * k * k,
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.conv{}.bias", i + 1),
                shape: vec![c_out],
                fan_in: 0,
                fan_out: 0,
            });
            c_in = c_out;
        }
    };
    conv("motion");
    conv("appearance");
    for &p in &config.attention_points {
        let c = config.conv_filters[p - 1];
        specs.push(ParamSpec {
            name: format!("attention.{p}.weight"),
            shape: vec![1, c, 1, 1],
            fan_in: c,
            fan_out: 1,
        });
        specs.push(ParamSpec { name: format!("attention.{p}.bias"), shape: vec![1], fan_in: 0, fan_out: 0 });
    }
    let flat = config.flat_len();
    specs.push(ParamSpec {
        name: "head.hidden.weight".to_string(),
        shape: vec![config.head_hidden, flat],
        fan_in: flat,
        fan_out: config.head_hidden,
    });
    specs.push(ParamSpec {
        name: "head.hidden.bias".to_string(),
        shape: vec![config.head_hidden],
        fan_in: 0,
        fan_out: 0,
    });
    specs.push(ParamSpec {
        name: "head.output.weight".to_string(),
        shape: vec![1, config.head_hidden],
        fan_in: config.head_hidden,
        fan_out: 1,
    });
    specs.push(ParamSpec { name: "head.output.bias".to_string(), shape: vec![1], fan_in: 0, fan_out: 0 });
    specs
}

/// A full set of named network parameters plus the config that shapes them
/// and the training lineage that produced them.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub config: NetworkConfig,
    /// Training-stage tags in chronological order, e.g. a body pretrained on
    /// pulse regression then adapted with a frozen body reads
    /// `["deepphys", "pad"]`.
    pub provenance: Vec<String>,
    pub params: ParameterSet,
}

impl ModelWeights {
    /// Fresh weights: biases zero, each weight tensor drawn uniformly from
    /// +-sqrt(6 / (fan_in + fan_out)) on its own named RNG stream, so a
    /// parameter's initial values depend only on (seed, name, shape).
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for spec in param_specs(&config) {
            let n: usize = spec.shape.iter().product();
            let data = if spec.fan_in == 0 {
                vec![0.0; n]
            } else {
                let limit = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
                let mut rng = derive_rng(seed, &format!("init/{}", spec.name));
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            };
            params.insert(&spec.name, Tensor::new(spec.shape, data)?, true)?;
        }
        Ok(ModelWeights { config, provenance: Vec::new(), params })
    }

    pub fn config_hash(&self) -> String {
        self.config.config_hash()
    }

    /// Errors unless the stored config matches `expected` exactly.
    pub fn require_config(&self, expected: &NetworkConfig) -> Result<()> {
        if self.config != *expected {
            return Err(Error::ConfigMismatch {
                expected: expected.config_hash(),
                found: self.config_hash(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records: Vec<ParamRecord> = self
            .params
            .iter()
            .map(|(name, p)| {
                let mut raw = Vec::with_capacity(p.tensor.len() * 8);
                for v in p.tensor.data() {
                    raw.extend_from_slice(&v.to_le_bytes());
                }
                ParamRecord {
                    name: name.to_string(),
                    shape: p.tensor.shape().to_vec(),
                    trainable: p.trainable,
                    data: base64::engine::general_purpose::STANDARD.encode(raw),
                }
            })
            .collect();
        let file = WeightsFile {
            config: self.config.clone(),
            provenance: self.provenance.clone(),
            params: records,
        };
        let mut out = format!("{WEIGHTS_HEADER}\n").into_bytes();
        out.extend_from_slice(serde_json::to_string(&file)?.as_bytes());
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::WeightFormat("weight file is not UTF-8".to_string()))?;
        let Some((header, body)) = text.split_once('\n') else {
            return Err(Error::WeightFormat("missing header line".to_string()));
        };
        if header.trim_end() != WEIGHTS_HEADER {
            return Err(Error::WeightFormat(format!(
                "bad magic {header:?}, expected {WEIGHTS_HEADER:?}"
            )));
        }
        let file: WeightsFile =
            serde_json::from_str(body).map_err(|e| Error::WeightFormat(format!("bad JSON body: {e}")))?;
        file.config.validate()?;

        let mut params = ParameterSet::new();
        for rec in &file.params {
            let raw = base64::engine::general_purpose::STANDARD
                .decode(&rec.data)
                .map_err(|e| Error::WeightFormat(format!("param {}: bad base64: {e}", rec.name)))?;
            if raw.len() % 8 != 0 {
                return Err(Error::WeightFormat(format!(
                    "param {}: payload not a whole number of f64",
                    rec.name
                )));
            }
            let data: Vec<f64> =
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let want: usize = rec.shape.iter().product();
            if data.len() != want {
                return Err(Error::WeightFormat(format!(
                    "param {}: {} values do not fill shape {:?}",
                    rec.name,
                    data.len(),
                    rec.shape
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::WeightFormat(format!("param {}: non-finite value", rec.name)));
            }
            params
                .insert(&rec.name, Tensor::new(rec.shape.clone(), data)?, rec.trainable)
                .map_err(|_| Error::WeightFormat(format!("duplicate parameter {}", rec.name)))?;
        }

        let w = ModelWeights { config: file.config, provenance: file.provenance, params };
        w.check_against_config()?;
        Ok(w)
    }

    /// The stored parameters must be exactly the set the config implies, in
    /// order, with matching shapes.
    fn check_against_config(&self) -> Result<()> {
        let specs = param_specs(&self.config);
        if specs.len() != self.params.len() {
            return Err(Error::WeightFormat(format!(
                "config implies {} parameters, file holds {}",
                specs.len(),
                self.params.len()
            )));
        }
        for (spec, (name, p)) in specs.iter().zip(self.params.iter()) {
            if spec.name != name || spec.shape != p.tensor.shape() {
                return Err(Error::WeightFormat(format!(
                    "parameter {name} {:?} does not match config's {} {:?}",
                    p.tensor.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::WeightFormat(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    config: NetworkConfig,
    provenance: Vec<String>,
    params: Vec<ParamRecord>,
}

/// Parameters registered as leaves on a tape, ready for forward passes.
/// `vars` is aligned with the weight set's parameter order. In train mode a
/// leaf collects gradient only if its parameter is trainable.
pub struct Bound {
    vars: Vec<Var>,
    by_name: HashMap<String, Var>,
    train: bool,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Var {
        self.by_name[name]
    }

    pub fn train(&self) -> bool {
        self.train
    }
}

pub fn bind(tape: &mut Tape, weights: &ModelWeights, train: bool) -> Bound {
    let mut vars = Vec::with_capacity(weights.params.len());
    let mut by_name = HashMap::new();
    for (name, p) in weights.params.iter() {
        let v = tape.leaf(&p.tensor, train && p.trainable);
        vars.push(v);
        by_name.insert(name.to_string(), v);
    }
    Bound { vars, by_name, train }
}

/// One scored forward pass: the scalar output plus the normalized attention
/// masks in attention-point order, each summing to h*w/2 of its stage.
pub struct ForwardPass {
    pub score: Var,
    pub masks: Vec<Var>,
}

/// Runs the network on one standardized (motion, appearance) frame pair.
/// Dropout draws from `rng` only when the binding is in train mode.
pub fn forward(
    tape: &mut Tape,
    weights: &ModelWeights,
    bound: &Bound,
    motion: &Tensor,
    appearance: &Tensor,
    rng: &mut impl Rng,
) -> Result<ForwardPass> {
    let cfg = &weights.config;
    let want = [3, cfg.input_size, cfg.input_size];
    for (label, t) in [("motion", motion), ("appearance", appearance)] {
        if t.shape() != want {
            return Err(Error::shape(
                "network_forward",
                format!("{label} input {:?}, want {want:?}", t.shape()),
            ));
        }
    }
    let train = bound.train;
    let rate = cfg.dropout_rate;
    let mut m = tape.leaf(motion, false);
    let mut a = tape.leaf(appearance, false);
    let mut masks = Vec::new();

    for i in 1..=cfg.conv_filters.len() {
        let layer = |branch: &str| format!("{branch}.conv{i}");
        a = tape
            .conv2d(a, bound.var(&format!("appearance.conv{i}.weight")), bound.var(&format!("appearance.conv{i}.bias")), Padding::Same)
            .and_then(|v| tape.tanh(v))
            .map_err(|e| e.in_layer(&layer("appearance")))?;
        m = tape
            .conv2d(m, bound.var(&format!("motion.conv{i}.weight")), bound.var(&format!("motion.conv{i}.bias")), Padding::Same)
            .and_then(|v| tape.tanh(v))
            .map_err(|e| e.in_layer(&layer("motion")))?;
        if cfg.attention_points.contains(&i) {
            let name = format!("attention.{i}");
            let mask = tape
                .conv2d(a, bound.var(&format!("{name}.weight")), bound.var(&format!("{name}.bias")), Padding::Same)
                .and_then(|v| tape.sigmoid(v))
                .and_then(|v| tape.mask_normalize(v))
                .map_err(|e| e.in_layer(&name))?;
            m = tape.mask_mul(m, mask).map_err(|e| e.in_layer(&name))?;
            masks.push(mask);
        }
        if i % 2 == 0 {
            a = tape
                .avg_pool2x2(a)
                .and_then(|v| tape.dropout(v, rate, train, rng))
                .map_err(|e| e.in_layer(&format!("appearance.pool{}", i / 2)))?;
            m = tape
                .avg_pool2x2(m)
                .and_then(|v| tape.dropout(v, rate, train, rng))
                .map_err(|e| e.in_layer(&format!("motion.pool{}", i / 2)))?;
        }
    }

    let flat = tape.flatten(m).map_err(|e| e.in_layer("head.flatten"))?;
    let hidden = tape
        .dense(flat, bound.var("head.hidden.weight"), bound.var("head.hidden.bias"))
        .and_then(|v| tape.tanh(v))
        .and_then(|v| tape.dropout(v, rate, train, rng))
        .map_err(|e| e.in_layer("head.hidden"))?;
    let out = tape
        .dense(hidden, bound.var("head.output.weight"), bound.var("head.output.bias"))
        .map_err(|e| e.in_layer("head.output"))?;
    let score = match cfg.head {
        HeadKind::Regression => out,
        HeadKind::Binary => tape.sigmoid(out).map_err(|e| e.in_layer("head.output"))?,
    };
    Ok(ForwardPass { score, masks })
}

/// Eval-mode score of one frame pair on a private tape.
pub fn predict(weights: &ModelWeights, motion: &Tensor, appearance: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, weights, false);
    let mut rng = derive_rng(0, "predict/unused");
    let pass = forward(&mut tape, weights, &bound, motion, appearance, &mut rng)?;
    Ok(tape.value(pass.score).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(head: HeadKind) -> NetworkConfig {
        NetworkConfig {
            input_size: 8,
            conv_filters: vec![2, 2],
            kernel: 3,
            attention_points: vec![2],
            head,
            head_hidden: 4,
            dropout_rate: 0.25,
        }
    }

    fn rand_input(size: usize, seed: u64) -> Tensor {
        let mut rng = derive_rng(seed, "test/input");
        let data: Vec<f64> = (0..3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![3, size, size], data).unwrap()
    }

    #[test]
    fn config_validation_catches_bad_layouts() {
        assert!(NetworkConfig::default().validate().is_ok());
        let mut c = NetworkConfig::default();
        c.conv_filters = vec![32, 32, 64];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.kernel = 4;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.input_size = 34;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.attention_points = vec![2, 5];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.attention_points = vec![2, 2];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_shapes_follow_config() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 7).unwrap();
        let get = |n: &str| w.params.get(n).unwrap().tensor.shape().to_vec();
        assert_eq!(get("motion.conv1.weight"), vec![2, 3, 3, 3]);
        assert_eq!(get("appearance.conv2.weight"), vec![2, 2, 3, 3]);
        assert_eq!(get("attention.2.weight"), vec![1, 2, 1, 1]);
        // 8x8 input, one pool -> 4x4, 2 channels -> 32 flat.
        assert_eq!(get("head.hidden.weight"), vec![4, 32]);
        assert_eq!(get("head.output.weight"), vec![1, 4]);
        assert!(w.params.iter().all(|(_, p)| p.trainable));
        assert!(w.provenance.is_empty());
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 3).unwrap();
        for (name, p) in w.params.iter() {
            if name.ends_with(".bias") {
                assert!(p.tensor.data().iter().all(|&v| v == 0.0), "{name} not zero");
            } else {
                // Loosest bound across these layers; motion.conv1 has the
                // largest fan sum of the tiny config.
                assert!(p.tensor.data().iter().all(|&v| v.abs() < 1.5), "{name} out of range");
                assert!(p.tensor.data().iter().any(|&v| v != 0.0), "{name} all zero");
            }
        }
    }

    #[test]
    fn init_is_per_name_deterministic() {
        let a = ModelWeights::init(tiny_config(HeadKind::Binary), 11).unwrap();
        let b = ModelWeights::init(tiny_config(HeadKind::Regression), 11).unwrap();
        // Same seed, same names -> identical body draws even though the head
        // kind differs.
        for name in ["motion.conv1.weight", "appearance.conv2.weight", "attention.2.weight"] {
            assert_eq!(a.params.get(name).unwrap().tensor.data(), b.params.get(name).unwrap().tensor.data());
        }
        let c = ModelWeights::init(tiny_config(HeadKind::Binary), 12).unwrap();
        assert_ne!(
            a.params.get("motion.conv1.weight").unwrap().tensor.data(),
            c.params.get("motion.conv1.weight").unwrap().tensor.data()
        );
    }

    #[test]
    fn zero_motion_scores_one_half_with_binary_head() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 5).unwrap();
        let zero = Tensor::zeros(vec![3, 8, 8]);
        let appearance = rand_input(8, 1);
        let score = predict(&w, &zero, &appearance).unwrap();
        assert!((score - 0.5).abs() < 1e-12, "score {score}");
    }

    #[test]
    fn binary_scores_stay_in_open_unit_interval() {
        for seed in 0..5 {
            let w = ModelWeights::init(tiny_config(HeadKind::Binary), seed).unwrap();
            let s = predict(&w, &rand_input(8, seed + 100), &rand_input(8, seed + 200)).unwrap();
            assert!(s > 0.0 && s < 1.0, "score {s}");
        }
    }

    #[test]
    fn attention_masks_sum_to_half_their_area() {
        let mut cfg = tiny_config(HeadKind::Binary);
        cfg.conv_filters = vec![2, 2, 3, 3];
        cfg.attention_points = vec![2, 4];
        let w = ModelWeights::init(cfg, 9).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w, false);
        let mut rng = derive_rng(0, "t");
        let pass =
            forward(&mut tape, &w, &bound, &rand_input(8, 1), &rand_input(8, 2), &mut rng).unwrap();
        assert_eq!(pass.masks.len(), 2);
        // First mask acts at full resolution, second after one pool.
        for (mask, side) in pass.masks.iter().zip([8usize, 4]) {
            let t = tape.value(*mask);
            assert_eq!(t.shape(), [1, side, side].as_slice());
            let sum: f64 = t.data().iter().sum();
            assert!((sum - (side * side) as f64 / 2.0).abs() < 1e-9, "sum {sum} at side {side}");
            assert!(t.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn uniform_masks_make_appearance_irrelevant() {
        let mut w = ModelWeights::init(tiny_config(HeadKind::Binary), 13).unwrap();
        // Zeroed attention projection -> sigmoid 0.5 everywhere -> the
        // normalized mask is the same uniform map whatever the appearance
        // input, so the score depends on motion alone.
        let att = w.params.get_mut("attention.2.weight").unwrap();
        att.tensor.data_mut().fill(0.0);
        let motion = rand_input(8, 31);
        let s1 = predict(&w, &motion, &rand_input(8, 32)).unwrap();
        let s2 = predict(&w, &motion, &rand_input(8, 33)).unwrap();
        assert_eq!(s1, s2);
        // With live attention weights the appearance input matters again.
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 13).unwrap();
        let s3 = predict(&w, &motion, &rand_input(8, 32)).unwrap();
        let s4 = predict(&w, &motion, &rand_input(8, 33)).unwrap();
        assert_ne!(s3, s4);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 21).unwrap();
        let (m, a) = (rand_input(8, 1), rand_input(8, 2));
        let first = predict(&w, &m, &a).unwrap();
        for _ in 0..10 {
            assert_eq!(predict(&w, &m, &a).unwrap(), first);
        }
    }

    #[test]
    fn regression_head_skips_sigmoid() {
        let wr = ModelWeights::init(tiny_config(HeadKind::Regression), 2).unwrap();
        let mut wb = ModelWeights::init(tiny_config(HeadKind::Binary), 2).unwrap();
        wb.config.head = HeadKind::Binary;
        let (m, a) = (rand_input(8, 3), rand_input(8, 4));
        let raw = predict(&wr, &m, &a).unwrap();
        // Same seed gives the same parameters, so the binary score is
        // exactly the sigmoid of the regression output.
        let prob = predict(&wb, &m, &a).unwrap();
        assert!((prob - 1.0 / (1.0 + (-raw).exp())).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 2).unwrap();
        let bad = Tensor::zeros(vec![3, 6, 6]);
        let good = Tensor::zeros(vec![3, 8, 8]);
        assert!(predict(&w, &bad, &good).is_err());
        assert!(predict(&w, &good, &bad).is_err());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.weights");
        let mut w = ModelWeights::init(tiny_config(HeadKind::Binary), 17).unwrap();
        w.provenance = vec!["deepphys".to_string(), "pad".to_string()];
        w.params.get_mut("motion.conv1.weight").unwrap().trainable = false;
        w.save(&path).unwrap();

        let loaded = ModelWeights::load(&path).unwrap();
        assert_eq!(loaded.provenance, w.provenance);
        assert_eq!(loaded.config, w.config);
        for ((an, ap), (bn, bp)) in w.params.iter().zip(loaded.params.iter()) {
            assert_eq!(an, bn);
            assert_eq!(ap.trainable, bp.trainable);
            assert_eq!(ap.tensor.shape(), bp.tensor.shape());
            let same = ap.tensor.data().iter().zip(bp.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{an} changed across round trip");
        }
        // save -> load -> save is byte-identical.
        let again = dir.path().join("w2.weights");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn load_rejects_altered_magic_and_garbage() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 1).unwrap();
        let mut bytes = w.to_bytes().unwrap();
        bytes[8] = b'X';
        assert!(matches!(ModelWeights::from_bytes(&bytes), Err(Error::WeightFormat(_))));
        assert!(ModelWeights::from_bytes(b"PADPHYS-W v1\nnot json\n").is_err());
        assert!(ModelWeights::from_bytes(b"").is_err());
    }

    #[test]
    fn load_rejects_params_that_disagree_with_config() {
        let w = ModelWeights::init(tiny_config(HeadKind::Binary), 1).unwrap();
        let bytes = w.to_bytes().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        // Rename one parameter in the JSON body.
        let tampered = text.replace("motion.conv1.weight", "motion.conv9.weight");
        assert!(ModelWeights::from_bytes(tampered.as_bytes()).is_err());
    }

    #[test]
    fn config_mismatch_is_explicit() {
        let wr = ModelWeights::init(tiny_config(HeadKind::Regression), 1).unwrap();
        let binary = tiny_config(HeadKind::Binary);
        let err = wr.require_config(&binary).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch { .. }));
        assert!(wr.require_config(&tiny_config(HeadKind::Regression)).is_ok());
        // Heads differ but the bodies are transplant-compatible.
        assert!(wr.config.body_compatible(&binary));
        let mut other = binary;
        other.conv_filters = vec![4, 4];
        assert!(!wr.config.body_compatible(&other));
    }

    #[test]
    fn train_mode_dropout_changes_scores_eval_does_not() {
        let mut cfg = tiny_config(HeadKind::Binary);
        cfg.dropout_rate = 0.5;
        let w = ModelWeights::init(cfg, 3).unwrap();
        let (m, a) = (rand_input(8, 5), rand_input(8, 6));
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &w, true);
        let mut rng = derive_rng(1, "drop");
        let s1 = {
            let p = forward(&mut tape, &w, &bound, &m, &a, &mut rng).unwrap();
            tape.value(p.score).data()[0]
        };
        let mark = 0;
        tape.truncate(mark);
        let bound = bind(&mut tape, &w, true);
        let s2 = {
            let p = forward(&mut tape, &w, &bound, &m, &a, &mut rng).unwrap();
            tape.value(p.score).data()[0]
        };
        assert_ne!(s1, s2, "independent dropout draws should differ");
        assert_eq!(predict(&w, &m, &a).unwrap(), predict(&w, &m, &a).unwrap());
    }
}
