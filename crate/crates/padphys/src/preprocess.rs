//! From detector boxes and raw frames to network inputs.
//!
//! The recipe: make the face box square and grow it by a fixed ratio about
//! its center, smooth the box track over the clip with an exponential moving
//! average, crop and bilinearly resize to a small square, form the
//! normalized frame difference that feeds the motion branch, and standardize
//! each stream per clip. Box coordinates stay in f64 throughout; rounding to
//! pixels happens only inside [`crop_resize`], the final consumer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Axis-aligned square region: top-left corner plus side, in pixels but
/// fractional-valued until cropping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, side: f64) -> Self {
        BoundingBox { x, y, side }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.side / 2.0, self.y + self.side / 2.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Growth applied to the detector box side about its center.
    pub expand_ratio: f64,
    /// EMA weight on the current frame's box; 1 disables smoothing.
    pub ema_alpha: f64,
    /// Side of the square network input.
    pub target_size: usize,
    /// Per-clip standardization of both streams (appearance per channel).
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { expand_ratio: 0.8, ema_alpha: 0.5, target_size: 36, standardize: true }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.expand_ratio.is_finite() || self.expand_ratio < 0.0 {
            return Err(Error::InvalidArgument(format!("expand_ratio {} must be >= 0", self.expand_ratio)));
        }
        if !self.ema_alpha.is_finite() || !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("ema_alpha {} must lie in (0, 1]", self.ema_alpha)));
        }
        if self.target_size < 8 {
            return Err(Error::InvalidArgument(format!("target_size {} below 8", self.target_size)));
        }
        Ok(())
    }
}

/// Denominators below this are treated as empty pixels and map to 0 in the
/// motion input.
pub const MOTION_EPS: f64 = 1e-8;

/// Standard deviations are floored here before dividing.
pub const STD_FLOOR: f64 = 1e-6;

/// Grows `b` by `ratio` about its center, then shifts the result back inside
/// the frame. If the grown side cannot fit at all it is cut to
/// `min(frame_w, frame_h)`. The output is always a square inside the frame.
pub fn expand_bbox(b: &BoundingBox, frame_w: usize, frame_h: usize, ratio: f64) -> Result<BoundingBox> {
    if !ratio.is_finite() || ratio < 0.0 {
        return Err(Error::InvalidArgument(format!("expand ratio {ratio} must be >= 0")));
    }
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    if !(b.side > 0.0) || b.x < 0.0 || b.y < 0.0 || b.x + b.side > fw || b.y + b.side > fh {
        return Err(Error::InvalidArgument(format!(
            "box ({}, {}, side {}) not inside {frame_w}x{frame_h} frame",
            b.x, b.y, b.side
        )));
    }
    let mut side = b.side * (1.0 + ratio);
    let limit = fw.min(fh);
    if side > limit {
        side = limit;
    }
    let (cx, cy) = b.center();
    let x = (cx - side / 2.0).clamp(0.0, fw - side);
    let y = (cy - side / 2.0).clamp(0.0, fh - side);
    Ok(BoundingBox { x, y, side })
}

/// Exponential moving average over a box track, per coordinate:
/// `s(0) = b(0)`, `s(t) = alpha * b(t) + (1 - alpha) * s(t-1)`.
pub fn ema_smooth(boxes: &[BoundingBox], alpha: f64) -> Result<Vec<BoundingBox>> {
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("ema_smooth needs at least one box".to_string()));
    }
    if !alpha.is_finite() || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("ema alpha {alpha} must lie in (0, 1]")));
    }
    let mut out = Vec::with_capacity(boxes.len());
    let mut s = boxes[0];
    out.push(s);
    for b in &boxes[1..] {
        s = BoundingBox {
            x: alpha * b.x + (1.0 - alpha) * s.x,
            y: alpha * b.y + (1.0 - alpha) * s.y,
            side: alpha * b.side + (1.0 - alpha) * s.side,
        };
        out.push(s);
    }
    Ok(out)
}

/// Detector-free fallback: a centered square covering 70% of the short frame
/// side.
pub fn fallback_box(frame_w: usize, frame_h: usize) -> BoundingBox {
    let side = 0.7 * frame_w.min(frame_h) as f64;
    BoundingBox {
        x: (frame_w as f64 - side) / 2.0,
        y: (frame_h as f64 - side) / 2.0,
        side,
    }
}

/// Full box pipeline for one clip: per-frame expansion, EMA smoothing, and a
/// final shift back inside the frame (smoothing mixes sides, so a smoothed
/// box near an edge can otherwise poke out). Missing detector boxes fall
/// back to a centered crop.
pub fn prepare_boxes(
    boxes: Option<&[BoundingBox]>,
    n_frames: usize,
    frame_w: usize,
    frame_h: usize,
    cfg: &PreprocessConfig,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::InvalidArgument("clip has no frames".to_string()));
    }
    let raw: Vec<BoundingBox> = match boxes {
        Some(b) => {
            if b.len() != n_frames {
                return Err(Error::Data(format!("{} boxes for {} frames", b.len(), n_frames)));
            }
            b.to_vec()
        }
        None => vec![fallback_box(frame_w, frame_h); n_frames],
    };
    let expanded: Vec<BoundingBox> = raw
        .iter()
        .map(|b| expand_bbox(b, frame_w, frame_h, cfg.expand_ratio))
        .collect::<Result<_>>()?;
    let smoothed = ema_smooth(&expanded, cfg.ema_alpha)?;
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    Ok(smoothed
        .into_iter()
        .map(|b| BoundingBox {
            x: b.x.clamp(0.0, fw - b.side),
            y: b.y.clamp(0.0, fh - b.side),
            side: b.side,
        })
        .collect())
}

/// Crops `b` (rounded to whole pixels here) out of a `[c, h, w]` frame and
/// resizes to `target x target` with corner-aligned bilinear sampling: output
/// corners sample exactly the crop corners, and a crop already at the target
/// size passes through unchanged. Convex interpolation keeps values inside
/// the input range.
pub fn crop_resize(frame: &Tensor, b: &BoundingBox, target: usize) -> Result<Tensor> {
    let shape = frame.shape();
    if shape.len() != 3 {
        return Err(Error::shape("crop_resize", format!("want [c,h,w], got {shape:?}")));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("crop_resize target must be positive".to_string()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let x0 = b.x.round() as isize;
    let y0 = b.y.round() as isize;
    let side = b.side.round() as isize;
    if side < 1 || x0 < 0 || y0 < 0 || x0 + side > w as isize || y0 + side > h as isize {
        return Err(Error::Data(format!(
            "crop box ({}, {}, side {}) rounds outside {h}x{w} frame",
            b.x, b.y, b.side
        )));
    }
    let (x0, y0, side) = (x0 as usize, y0 as usize, side as usize);
    let scale = if target > 1 { (side - 1) as f64 / (target - 1) as f64 } else { 0.0 };

    let data = frame.data();
    let mut out = vec![0.0; c * target * target];
    for j in 0..target {
        let sy = y0 as f64 + j as f64 * scale;
        let fy = sy.floor();
        let wy = sy - fy;
        let yl = fy as usize;
        let yh = (yl + 1).min(h - 1);
        for i in 0..target {
            let sx = x0 as f64 + i as f64 * scale;
            let fx = sx.floor();
            let wx = sx - fx;
            let xl = fx as usize;
            let xh = (xl + 1).min(w - 1);
            for ch in 0..c {
                let base = ch * h * w;
                let tl = data[base + yl * w + xl];
                let tr = data[base + yl * w + xh];
                let bl = data[base + yh * w + xl];
                let br = data[base + yh * w + xh];
                let top = tl + (tr - tl) * wx;
                let bot = bl + (br - bl) * wx;
                out[(ch * target + j) * target + i] = top + (bot - top) * wy;
            }
        }
    }
    Tensor::new(vec![c, target, target], out)
}

/// Normalized frame difference `(curr - prev) / (curr + prev)`, elementwise.
/// Pixels whose sum falls below [`MOTION_EPS`] carry no usable intensity and
/// map to 0. For frames in [0, 1] the result lies in [-1, 1], changes sign
/// exactly under frame swap, and is invariant to positive rescaling of both
/// frames.
pub fn motion_input(prev: &Tensor, curr: &Tensor) -> Result<Tensor> {
    if prev.shape() != curr.shape() {
        return Err(Error::shape(
            "motion_input",
            format!("frame shapes differ: {:?} vs {:?}", prev.shape(), curr.shape()),
        ));
    }
    let out: Vec<f64> = prev
        .data()
        .iter()
        .zip(curr.data())
        .map(|(p, c)| {
            let denom = c + p;
            if denom.abs() < MOTION_EPS {
                0.0
            } else {
                (c - p) / denom
            }
        })
        .collect();
    Tensor::new(prev.shape().to_vec(), out)
}

/// Which normalization a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Normalized frame differences: one mean/std over the whole clip.
    Motion,
    /// Raw resized frames: mean/std per channel over the whole clip.
    Appearance,
}

/// Per-clip, per-stream moments. `mean`/`std` hold one entry for
/// [`Stream::Motion`], one per channel for [`Stream::Appearance`].
#[derive(Debug, Clone)]
pub struct StreamStats {
    pub stream: Stream,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Incremental moment accumulator so clips can be streamed frame by frame
/// without holding them in memory.
#[derive(Debug, Clone)]
pub struct StatsAccum {
    stream: Stream,
    channels: usize,
    count: Vec<f64>,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl StatsAccum {
    pub fn new(stream: Stream) -> Self {
        StatsAccum { stream, channels: 0, count: Vec::new(), sum: Vec::new(), sumsq: Vec::new() }
    }

    pub fn push(&mut self, t: &Tensor) -> Result<()> {
        let shape = t.shape();
        if shape.len() != 3 {
            return Err(Error::shape("stats", format!("want [c,h,w], got {shape:?}")));
        }
        let c = shape[0];
        let buckets = match self.stream {
            Stream::Motion => 1,
            Stream::Appearance => c,
        };
        if self.sum.is_empty() {
            self.channels = c;
            self.count = vec![0.0; buckets];
            self.sum = vec![0.0; buckets];
            self.sumsq = vec![0.0; buckets];
        } else if self.channels != c {
            return Err(Error::shape("stats", format!("channel count changed: {} vs {c}", self.channels)));
        }
        let hw = shape[1] * shape[2];
        let data = t.data();
        for ch in 0..c {
            let bucket = match self.stream {
                Stream::Motion => 0,
                Stream::Appearance => ch,
            };
            let slice = &data[ch * hw..(ch + 1) * hw];
            let mut s = 0.0;
            let mut sq = 0.0;
            for v in slice {
                s += v;
                sq += v * v;
            }
            self.count[bucket] += hw as f64;
            self.sum[bucket] += s;
            self.sumsq[bucket] += sq;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<StreamStats> {
        if self.sum.is_empty() {
            return Err(Error::InvalidArgument("stats over an empty clip".to_string()));
        }
        let mut mean = Vec::with_capacity(self.sum.len());
        let mut std = Vec::with_capacity(self.sum.len());
        for i in 0..self.sum.len() {
            let n = self.count[i];
            let m = self.sum[i] / n;
            let var = (self.sumsq[i] / n - m * m).max(0.0);
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(StreamStats { stream: self.stream, mean, std })
    }
}

/// Applies precomputed clip moments to one tensor of that clip.
pub fn standardize_with(t: &Tensor, stats: &StreamStats) -> Result<Tensor> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(Error::shape("standardize", format!("want [c,h,w], got {shape:?}")));
    }
    let c = shape[0];
    let hw = shape[1] * shape[2];
    let want = match stats.stream {
        Stream::Motion => 1,
        Stream::Appearance => c,
    };
    if stats.mean.len() != want {
        return Err(Error::shape(
            "standardize",
            format!("stats carry {} buckets, tensor wants {want}", stats.mean.len()),
        ));
    }
    let data = t.data();
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        let bucket = match stats.stream {
            Stream::Motion => 0,
            Stream::Appearance => ch,
        };
        let (m, s) = (stats.mean[bucket], stats.std[bucket]);
        for i in 0..hw {
            out[ch * hw + i] = (data[ch * hw + i] - m) / s;
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Standardizes a whole clip of `[c, h, w]` tensors per stream: zero mean,
/// unit deviation, with the deviation floored at [`STD_FLOOR`] so constant
/// clips stay finite. Appearance is handled per channel.
pub fn standardize_clip(frames: &[Tensor], stream: Stream) -> Result<Vec<Tensor>> {
    let mut acc = StatsAccum::new(stream);
    for f in frames {
        acc.push(f)?;
    }
    let stats = acc.finish()?;
    frames.iter().map(|f| standardize_with(f, &stats)).collect()
}
