//! Deterministic synthetic corpus generator.
//!
//! Real presentation-attack datasets are private, so the pipeline ships its
//! own: rendered face-like clips whose skin pixels carry a sinusoidal pulse
//! in the green-dominant channels, plus three attack styles that break or
//! distort that physiology in different ways. The corpus is only as real as
//! it needs to be for the pulse-versus-no-pulse signal to be learnable:
//!
//! * `paper_like` keeps the face texture but has no pulse and a flat
//!   specular band, like glare on a print.
//! * `mask_like` has no pulse, angular seam discontinuities, and a darkened
//!   rim where a mask edge would sit.
//! * `replay_like` re-samples a pulsatile clip with stutter-duplicated
//!   frames, a faint static grid, and a global screen flicker above the
//!   pulse band, the way a re-captured display looks. It keeps the pulse,
//!   so physiology-based detectors are expected to struggle with it; the
//!   corpus encodes that failure mode on purpose.
//!
//! Every random decision is drawn from a stream derived from (seed, clip id)
//! or (seed, user id), so generation order cannot change the output and the
//! same seed reproduces the corpus byte for byte.

use crate::dataset::{
    ClipEntry, ClipReader, DatasetManifest, GroundTruthRow, Label, RawClipWriter, Split,
    ground_truth_csv, pulse_to_string,
};
use crate::error::{Error, Result};
use crate::metrics::AttackType;
use crate::tensor::Tensor;
use crate::util::{atomic_write, derive_rng};
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

/// Probability that a replayed frame is a stutter-duplicate of the previous
/// output frame.
const STUTTER_PROB: f64 = 0.08;
/// Amplitude of the static screen grid on replayed clips; kept at or below
/// the noise floor so it stays a subtle cue.
const MOIRE_AMPLITUDE: f64 = 0.008;
/// Relative amplitude of the global luminance flicker on replayed clips,
/// the beat between a display's refresh and the camera. Sized so a detector
/// can use it, but per frame it stays weaker than the noise.
const FLICKER_AMPLITUDE: f64 = 0.012;
/// Brightness added across the specular band of paper-like clips.
const SPECULAR_BOOST: f64 = 0.18;
/// Half contrast step between adjacent mask seam sectors.
const SEAM_CONTRAST: f64 = 0.05;
/// Darkening of the mask rim.
const RIM_DARKEN: f64 = 0.12;
const BACKGROUND: f64 = 0.2;
const MASK_SECTORS: usize = 6;

/// Physiological frequency band used by the generator's self-tests, Hz.
pub const SPECTRAL_BAND: (f64, f64) = (0.7, 4.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthAttack {
    PaperLike,
    MaskLike,
    ReplayLike,
}

impl SynthAttack {
    pub const ALL: [SynthAttack; 3] = [SynthAttack::PaperLike, SynthAttack::MaskLike, SynthAttack::ReplayLike];

    /// Vocabulary label the attack is filed under: print, plastic mask, or
    /// video replay.
    pub fn attack_type(&self) -> AttackType {
        match self {
            SynthAttack::PaperLike => AttackType::Pr,
            SynthAttack::MaskLike => AttackType::PlM,
            SynthAttack::ReplayLike => AttackType::VR,
        }
    }

    fn id_token(&self) -> &'static str {
        match self {
            SynthAttack::PaperLike => "paper",
            SynthAttack::MaskLike => "mask",
            SynthAttack::ReplayLike => "replay",
        }
    }

    /// True for attacks that physically carry the source pulse.
    pub fn keeps_pulse(&self) -> bool {
        matches!(self, SynthAttack::ReplayLike)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub clips_per_user: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    /// Uniform heart-rate draw per clip, Hz.
    pub heart_rate_hz: (f64, f64),
    /// Peak green-channel modulation in [0,1] intensity units.
    pub pulse_amplitude: f64,
    /// Per-pixel, per-frame Gaussian noise deviation.
    pub noise_sigma: f64,
    /// Head sway amplitude, pixels.
    pub motion_amplitude: f64,
    /// Square frame side, pixels.
    pub frame_size: usize,
    pub attack_types: Vec<SynthAttack>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 8,
            clips_per_user: 4,
            frames_per_clip: 150,
            fps: 30.0,
            heart_rate_hz: (0.8, 3.0),
            pulse_amplitude: 0.02,
            noise_sigma: 0.01,
            motion_amplitude: 1.0,
            frame_size: 48,
            attack_types: SynthAttack::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.clips_per_user == 0 {
            return Err(Error::InvalidArgument("need at least one user and one clip per user".to_string()));
        }
        if self.frames_per_clip < 2 {
            return Err(Error::InvalidArgument("frames_per_clip must be at least 2".to_string()));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {}", self.fps)));
        }
        let (lo, hi) = self.heart_rate_hz;
        if !(lo < hi) || lo < 0.7 || hi > 4.0 {
            return Err(Error::InvalidArgument(format!(
                "heart_rate_hz range ({lo}, {hi}) must be increasing and within the physiological band [0.7, 4.0]"
            )));
        }
        if hi >= self.fps / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "heart rate {hi} Hz is not sampleable at {} fps",
                self.fps
            )));
        }
        if !(self.pulse_amplitude > 0.0 && self.pulse_amplitude < 0.1) {
            return Err(Error::InvalidArgument(format!(
                "pulse_amplitude must lie in (0, 0.1), got {}",
                self.pulse_amplitude
            )));
        }
        if !(0.0..=0.2).contains(&self.noise_sigma) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must lie in [0, 0.2], got {}",
                self.noise_sigma
            )));
        }
        if !(self.motion_amplitude >= 0.0) || !self.motion_amplitude.is_finite() {
            return Err(Error::InvalidArgument("motion_amplitude must be non-negative".to_string()));
        }
        if self.frame_size < 16 {
            return Err(Error::InvalidArgument("frame_size must be at least 16".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        if self.attack_types.iter().any(|a| !seen.insert(*a)) {
            return Err(Error::InvalidArgument("attack_types must be unique".to_string()));
        }
        Ok(())
    }
}

struct UserParams {
    base: [f64; 3],
    rx_frac: f64,
    ry_frac: f64,
}

fn user_params(seed: u64, user: usize) -> UserParams {
    let mut rng = derive_rng(seed, &format!("user/{user}"));
    UserParams {
        base: [
            0.72 + rng.random_range(-0.05..0.05),
            0.55 + rng.random_range(-0.05..0.05),
            0.45 + rng.random_range(-0.05..0.05),
        ],
        rx_frac: 0.21 + rng.random_range(-0.02..0.02),
        ry_frac: 0.26 + rng.random_range(-0.02..0.02),
    }
}

struct RenderedClip {
    frames: Vec<Tensor>,
    /// Pulse modulation actually applied per output frame (zeros when the
    /// clip has no pulse).
    pulse: Vec<f64>,
    /// Tight face box per frame, [x, y, side].
    boxes: Vec<[f64; 3]>,
    heart_rate_hz: f64,
}

/// Renders one clip. Every stochastic choice comes from the clip's own
/// derived stream, so clips are independent of generation order.
fn render_clip(cfg: &SynthConfig, user: usize, kind: Option<SynthAttack>, id: &str) -> RenderedClip {
    let mut rng = derive_rng(cfg.seed, &format!("clip/{id}"));
    let up = user_params(cfg.seed, user);
    let s = cfg.frame_size;
    let sf = s as f64;
    let n = cfg.frames_per_clip;

    let hr = rng.random_range(cfg.heart_rate_hz.0..cfg.heart_rate_hz.1);
    let phase = rng.random_range(0.0..TAU);
    let amplitude = cfg.pulse_amplitude * rng.random_range(0.8..1.2);
    let sway = (
        rng.random_range(0.05..0.1),
        rng.random_range(0.05..0.1),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
    );
    let band_center = rng.random_range(0.3..0.7) * sf;
    let seam_rot = rng.random_range(0.0..TAU);
    let moire_phase = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    // Flicker sits above the pulse band but under Nyquist, even at low fps.
    let flicker_hz = rng.random_range(5.0_f64..7.0).min((0.45 * cfg.fps).max(4.5));
    let flicker_phase = rng.random_range(0.0..TAU);
    let stutter: Vec<bool> = (0..n)
        .map(|t| t > 0 && kind == Some(SynthAttack::ReplayLike) && rng.random::<f64>() < STUTTER_PROB)
        .collect();

    let has_pulse = kind.map_or(true, |k| k.keeps_pulse());
    let (rx, ry) = (up.rx_frac * sf, up.ry_frac * sf);

    let mut frames: Vec<Tensor> = Vec::with_capacity(n);
    let mut pulse = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    let mut src_t = 0usize;
    for t in 0..n {
        if stutter[t] {
            frames.push(frames[t - 1].clone());
            pulse.push(pulse[t - 1]);
            boxes.push(boxes[t - 1]);
            continue;
        }
        let tau = src_t as f64 / cfg.fps;
        src_t += 1;
        let p = if has_pulse { amplitude * (TAU * hr * tau + phase).sin() } else { 0.0 };
        let cx = sf / 2.0 + cfg.motion_amplitude * (TAU * sway.0 * tau + sway.2).sin();
        let cy = sf / 2.0 + cfg.motion_amplitude * (TAU * sway.1 * tau + sway.3).sin();
        let flicker_gain = if kind == Some(SynthAttack::ReplayLike) {
            1.0 + FLICKER_AMPLITUDE * (TAU * flicker_hz * tau + flicker_phase).sin()
        } else {
            1.0
        };

        let plane = s * s;
        let mut data = vec![0.0; 3 * plane];
        for y in 0..s {
            for x in 0..s {
                let i = y * s + x;
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let d = dx * dx + dy * dy;
                // Every edge rolls off smoothly so the scene stays a
                // smooth function of the sub-pixel face position; hard edges
                // crossing pixel centers would leak a broadband comb of
                // motion energy into the pulse band.
                let face_cov = 1.0 / (1.0 + ((d - 0.82) / 0.07).exp());
                let mut px = [BACKGROUND; 3];
                if face_cov > 1e-4 {
                    let shade = 1.0 - 0.25 * d.min(1.0);
                    let mut skin = [up.base[0] * shade, up.base[1] * shade, up.base[2] * shade];
                    skin[0] += 0.4 * p;
                    skin[1] += p;
                    skin[2] += 0.2 * p;
                    if kind == Some(SynthAttack::MaskLike) {
                        let theta = dy.atan2(dx) + seam_rot;
                        let delta = SEAM_CONTRAST * (MASK_SECTORS as f64 * theta).cos();
                        let u = ((d - 0.5) / 0.5).clamp(0.0, 1.0);
                        let rim = u * u * (3.0 - 2.0 * u);
                        for c in &mut skin {
                            *c += delta - RIM_DARKEN * rim;
                        }
                    }
                    // Eyes and mouth ride with the face so the appearance
                    // branch has structure to attend to.
                    for (fx, fy, fr) in
                        [(-0.4, -0.3, 0.2), (0.4, -0.3, 0.2), (0.0, 0.45, 0.26)]
                    {
                        let ex = (x as f64 - (cx + fx * rx)) / (fr * rx);
                        let ey = (y as f64 - (cy + fy * ry)) / (fr * ry * 0.8);
                        let q = ex * ex + ey * ey;
                        let fcov = (-3.0 * q).exp();
                        if fcov > 1e-4 {
                            let dark = [0.15, 0.12, 0.12];
                            for (c, v) in skin.iter_mut().enumerate() {
                                *v += fcov * (dark[c] - *v);
                            }
                        }
                    }
                    for (c, v) in skin.iter().enumerate() {
                        px[c] += face_cov * (v - px[c]);
                    }
                }
                if kind == Some(SynthAttack::PaperLike) && (y as f64 - band_center).abs() < 0.06 * sf {
                    for c in &mut px {
                        *c += SPECULAR_BOOST;
                    }
                }
                if kind == Some(SynthAttack::ReplayLike) {
                    let grid = (TAU * x as f64 / 4.7 + moire_phase.0).sin()
                        * (TAU * y as f64 / 3.3 + moire_phase.1).sin();
                    for c in &mut px {
                        *c = (*c + MOIRE_AMPLITUDE * grid) * flicker_gain;
                    }
                }
                for (c, v) in px.iter().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    data[c * plane + i] = (v + cfg.noise_sigma * noise).clamp(0.0, 1.0);
                }
            }
        }
        frames.push(Tensor::new(vec![3, s, s], data).expect("rendered frame is finite"));
        pulse.push(p);
        let side = 2.0 * rx.max(ry) * 1.05;
        boxes.push([cx - side / 2.0, cy - side / 2.0, side]);
    }
    RenderedClip { frames, pulse, boxes, heart_rate_hz: if has_pulse { hr } else { 0.0 } }
}

fn split_for(clip_index: usize) -> Split {
    match clip_index % 3 {
        0 => Split::Train,
        1 => Split::Val,
        _ => Split::Test,
    }
}

/// Generates the corpus under `out_dir`: raw clips, per-clip pulse traces, a
/// manifest, and a ground-truth table. The directory is built to completion
/// in a temporary sibling and renamed into place, so a failed run leaves no
/// partial output; an existing `out_dir` is refused.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if out_dir.exists() {
        return Err(Error::Data(format!("output directory {} already exists", out_dir.display())));
    }
    let name = out_dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad output directory {}", out_dir.display())))?;
    let parent = out_dir.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = parent.join(format!("{name}.tmp{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    let result = build_corpus(cfg, &tmp);
    match result {
        Ok(manifest) => {
            std::fs::rename(&tmp, out_dir)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn build_corpus(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("clips"))?;
    std::fs::create_dir_all(dir.join("pulse"))?;
    let mut entries = Vec::new();
    let mut gt = Vec::new();
    let kinds: Vec<Option<SynthAttack>> =
        std::iter::once(None).chain(cfg.attack_types.iter().copied().map(Some)).collect();
    for user in 0..cfg.n_users {
        for kind in &kinds {
            for j in 0..cfg.clips_per_user {
                let token = kind.map_or("bf", |k| k.id_token());
                let id = format!("u{user:02}_{token}_{j}");
                let clip = render_clip(cfg, user, *kind, &id);

                let clip_rel = format!("clips/{id}.ppraw");
                let mut w = RawClipWriter::create(
                    &dir.join(&clip_rel),
                    clip.frames.len(),
                    cfg.frame_size,
                    cfg.frame_size,
                )?;
                for f in &clip.frames {
                    w.push(f)?;
                }
                w.finish()?;
                let pulse_rel = format!("pulse/{id}.csv");
                atomic_write(&dir.join(&pulse_rel), pulse_to_string(&clip.pulse).as_bytes())?;

                let (label, attack_type) = match kind {
                    None => (Label::BonaFide, None),
                    Some(k) => (Label::Attack, Some(k.attack_type())),
                };
                entries.push(ClipEntry {
                    id: id.clone(),
                    path: clip_rel,
                    label,
                    attack_type,
                    split: split_for(j),
                    bboxes: Some(clip.boxes),
                    pulse_path: Some(pulse_rel),
                });
                gt.push(GroundTruthRow {
                    clip_id: id,
                    label,
                    attack_type,
                    heart_rate_hz: clip.heart_rate_hz,
                });
            }
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.write(&dir.join("manifest.jsonl"))?;
    atomic_write(&dir.join("ground_truth.csv"), ground_truth_csv(&gt).as_bytes())?;
    Ok(manifest)
}

/// Result of a spectral self-test: the dominant in-band frequency (absent
/// when the band holds no energy) and its peak-to-median ratio.
#[derive(Debug, Clone, Copy)]
pub struct SpectralCheck {
    pub peak_hz: Option<f64>,
    pub snr: f64,
}

/// DFT peak search over a scalar trace. The trace is mean-removed (the DC
/// bin never competes) and Hann-windowed so out-of-band motion does not
/// leak sidelobes into the band; the peak is taken on a 3-bin smoothed
/// magnitude spectrum so single-bin noise spikes do not pass as pulse, and
/// the ratio is measured against the raw median magnitude across the band.
pub fn spectral_peak(trace: &[f64], fps: f64, band: (f64, f64)) -> Result<SpectralCheck> {
    let n = trace.len();
    if n < 64 {
        return Err(Error::InvalidArgument(format!("spectral check needs >= 64 samples, got {n}")));
    }
    if !(fps > 0.0) || !(band.0 > 0.0 && band.0 < band.1) {
        return Err(Error::InvalidArgument(format!("bad fps {fps} or band {band:?}")));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = trace
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let w = 0.5 * (1.0 - (TAU * t as f64 / (n - 1) as f64).cos());
            (v - mean) * w
        })
        .collect();

    let half = n / 2;
    let mut mags = vec![0.0; half + 1];
    for (k, m) in mags.iter_mut().enumerate().skip(1) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, v) in x.iter().enumerate() {
            let ang = TAU * k as f64 * t as f64 / n as f64;
            re += v * ang.cos();
            im -= v * ang.sin();
        }
        *m = (re * re + im * im).sqrt();
    }
    let freq = |k: usize| k as f64 * fps / n as f64;
    let band_bins: Vec<usize> = (1..=half).filter(|&k| freq(k) >= band.0 && freq(k) <= band.1).collect();
    if band_bins.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "band {band:?} covers only {} DFT bins at {n} samples",
            band_bins.len()
        )));
    }
    let smoothed = |k: usize| {
        let lo = k.max(2) - 1;
        let hi = (k + 1).min(half);
        let m: f64 = (lo..=hi).map(|i| mags[i]).sum();
        m / (hi - lo + 1) as f64
    };
    let peak_k = *band_bins
        .iter()
        .max_by(|a, b| smoothed(**a).total_cmp(&smoothed(**b)))
        .expect("band not empty");
    let mut raw: Vec<f64> = band_bins.iter().map(|&k| mags[k]).collect();
    raw.sort_by(f64::total_cmp);
    let median = raw[raw.len() / 2];

    // A flat trace leaves only rounding residue in the spectrum.
    let floor = 1e-12 * n as f64;
    if smoothed(peak_k) < floor {
        return Ok(SpectralCheck { peak_hz: None, snr: 0.0 });
    }
    Ok(SpectralCheck { peak_hz: Some(freq(peak_k)), snr: smoothed(peak_k) / median.max(floor) })
}

/// Mean green intensity over the central half-side square of each frame;
/// the generator keeps the face there, so this is a skin trace.
pub fn roi_green_trace(reader: &mut ClipReader) -> Result<Vec<f64>> {
    let (h, w) = reader.dims();
    let (y0, y1) = (h / 4, h - h / 4);
    let (x0, x1) = (w / 4, w - w / 4);
    let mut out = Vec::with_capacity(reader.frame_count());
    for t in 0..reader.frame_count() {
        let f = reader.frame(t)?;
        let data = f.data();
        let plane = h * w;
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                sum += data[plane + y * w + x];
            }
        }
        out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
    }
    Ok(out)
}

/// Generator self-test on an emitted clip file: spectral peak of the
/// central-ROI green trace.
pub fn spectral_check(clip_path: &Path, fps: f64, band: (f64, f64)) -> Result<SpectralCheck> {
    let mut reader = ClipReader::open(clip_path)?;
    let trace = roi_green_trace(&mut reader)?;
    spectral_peak(&trace, fps, band)
}
