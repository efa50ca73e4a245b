//! On-disk formats shared across the pipeline: the clip manifest, raw planar
//! video files, frame directories, ground-truth tables, and pulse traces.
//!
//! A manifest is line-delimited JSON under a one-line format header, so it
//! can be streamed, diffed, and parsed from any language. Clip paths inside
//! it are relative to the manifest's own directory unless absolute.

use crate::error::{Error, Result};
use crate::metrics::{AttackType, ClipClass};
use crate::preprocess::BoundingBox;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_HEADER: &str = "PADPHYS-M v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[serde(rename = "bonafide")]
    BonaFide,
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One clip of the dataset. `bboxes` holds one `[x, y, side]` per frame when
/// a detector track is available; absent, preprocessing falls back to a
/// centered crop. `pulse_path` points at the ground-truth pulse trace for
/// clips that have one (synthetic bona-fide and replay clips).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub attack_type: Option<AttackType>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bboxes: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_path: Option<String>,
}

impl ClipEntry {
    pub fn class(&self) -> Result<ClipClass> {
        match (self.label, self.attack_type) {
            (Label::BonaFide, None) => Ok(ClipClass::BonaFide),
            (Label::Attack, Some(kind)) => Ok(ClipClass::Attack(kind)),
            (Label::BonaFide, Some(_)) => {
                Err(Error::Manifest(format!("clip {} is bona-fide but carries an attack type", self.id)))
            }
            (Label::Attack, None) => {
                Err(Error::Manifest(format!("clip {} is an attack without an attack type", self.id)))
            }
        }
    }

    pub fn boxes(&self) -> Option<Vec<BoundingBox>> {
        self.bboxes
            .as_ref()
            .map(|bs| bs.iter().map(|[x, y, side]| BoundingBox::new(*x, *y, *side)).collect())
    }

    pub fn resolve_path(&self, manifest_dir: &Path) -> PathBuf {
        resolve(manifest_dir, &self.path)
    }

    pub fn resolve_pulse_path(&self, manifest_dir: &Path) -> Option<PathBuf> {
        self.pulse_path.as_ref().map(|p| resolve(manifest_dir, p))
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        dir.join(path)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ClipEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    /// Structural checks: unique ids and a coherent label/attack-type pair
    /// on every entry.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip id {:?}", e.id)));
            }
            e.class()?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_string(&self) -> Result<String> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == MANIFEST_HEADER => {}
            Some(h) => {
                return Err(Error::Manifest(format!(
                    "bad header {h:?}, expected {MANIFEST_HEADER:?}"
                )))
            }
            None => return Err(Error::Manifest("empty manifest".to_string())),
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ClipEntry = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 2)))?;
            entries.push(entry);
        }
        DatasetManifest::new(entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::util::atomic_write(path, self.to_string()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }
}

/// Magic of the raw planar clip format: after it come three little-endian
/// u32 (frame count, height, width), then per frame the R, G, and B planes
/// as f32 little-endian values in [0, 1].
pub const RAW_MAGIC: &[u8; 6] = b"PPRAW1";

const RAW_HEADER_LEN: u64 = 6 + 12;

/// Streaming writer for the raw planar clip format.
pub struct RawClipWriter {
    file: std::io::BufWriter<std::fs::File>,
    frames: u32,
    written: u32,
    plane: usize,
}

impl RawClipWriter {
    pub fn create(path: &Path, frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "raw clip needs positive dimensions, got {frames}x{height}x{width}"
            )));
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(RAW_MAGIC)?;
        file.write_all(&(frames as u32).to_le_bytes())?;
        file.write_all(&(height as u32).to_le_bytes())?;
        file.write_all(&(width as u32).to_le_bytes())?;
        Ok(RawClipWriter { file, frames: frames as u32, written: 0, plane: height * width })
    }

    /// Appends one `[3, h, w]` frame; values are clamped to [0, 1] and
    /// narrowed to f32.
    pub fn push(&mut self, frame: &Tensor) -> Result<()> {
        if self.written == self.frames {
            return Err(Error::InvalidArgument("raw clip already holds all declared frames".to_string()));
        }
        if frame.shape().len() != 3 || frame.shape()[0] != 3 || frame.len() != 3 * self.plane {
            return Err(Error::shape(
                "raw clip",
                format!("want [3, h, w] matching the header, got {:?}", frame.shape()),
            ));
        }
        let mut buf = Vec::with_capacity(frame.len() * 4);
        for v in frame.data() {
            buf.extend_from_slice(&(v.clamp(0.0, 1.0) as f32).to_le_bytes());
        }
        self.file.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.frames {
            return Err(Error::Data(format!(
                "raw clip declared {} frames but got {}",
                self.frames, self.written
            )));
        }
        self.file.flush()?;
        Ok(())
    }
}

enum ClipBacking {
    Raw { file: std::fs::File },
    Frames { paths: Vec<PathBuf> },
}

/// Random-access reader over either clip layout: a single raw planar file or
/// a directory of numbered PNG/PPM frames. Frames come out as `[3, h, w]`
/// f64 tensors with values clamped to [0, 1]; grayscale sources are
/// channel-tripled.
pub struct ClipReader {
    backing: ClipBacking,
    frames: usize,
    height: usize,
    width: usize,
}

impl ClipReader {
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Self::open_frame_dir(path)
        } else {
            Self::open_raw(path)
        }
    }

    fn open_raw(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open clip {}: {e}", path.display())))?;
        let mut header = [0u8; RAW_HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::Data(format!("{}: truncated raw clip header", path.display())))?;
        if &header[..6] != RAW_MAGIC {
            return Err(Error::Data(format!("{}: bad raw clip magic", path.display())));
        }
        let u = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (frames, height, width) = (u(6), u(10), u(14));
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Data(format!("{}: empty raw clip", path.display())));
        }
        let want = RAW_HEADER_LEN + (frames * 3 * height * width * 4) as u64;
        let got = file.metadata()?.len();
        if got != want {
            return Err(Error::Data(format!(
                "{}: raw clip is {got} bytes, header implies {want}",
                path.display()
            )));
        }
        Ok(ClipReader { backing: ClipBacking::Raw { file }, frames, height, width })
    }

    fn open_frame_dir(path: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "ppm" | "pgm")
                )
            })
            .collect();
        if paths.is_empty() {
            return Err(Error::Data(format!("{}: no PNG/PPM frames found", path.display())));
        }
        // Numbered frames: order by the numeric part so frame_10 follows
        // frame_9 even without zero padding.
        let key = |p: &PathBuf| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
            (digits.parse::<u64>().unwrap_or(u64::MAX), stem)
        };
        paths.sort_by_key(key);
        let first = image::open(&paths[0])
            .map_err(|e| Error::Data(format!("{}: {e}", paths[0].display())))?;
        let (width, height) = (first.width() as usize, first.height() as usize);
        Ok(ClipReader { backing: ClipBacking::Frames { paths }, frames: 0, height, width }
            .with_frame_count())
    }

    fn with_frame_count(mut self) -> Self {
        if let ClipBacking::Frames { paths } = &self.backing {
            self.frames = paths.len();
        }
        self
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    /// (height, width)
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn frame(&mut self, idx: usize) -> Result<Tensor> {
        if idx >= self.frames {
            return Err(Error::Data(format!("frame {idx} out of range 0..{}", self.frames)));
        }
        let plane = self.height * self.width;
        match &mut self.backing {
            ClipBacking::Raw { file } => {
                let offset = RAW_HEADER_LEN + (idx * 3 * plane * 4) as u64;
                file.seek(SeekFrom::Start(offset))?;
                let mut buf = vec![0u8; 3 * plane * 4];
                file.read_exact(&mut buf)?;
                let mut data = Vec::with_capacity(3 * plane);
                for chunk in buf.chunks_exact(4) {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::Data("raw clip holds a non-finite pixel".to_string()));
                    }
                    data.push((v as f64).clamp(0.0, 1.0));
                }
                Tensor::new(vec![3, self.height, self.width], data)
            }
            ClipBacking::Frames { paths } => {
                let img = image::open(&paths[idx])
                    .map_err(|e| Error::Data(format!("{}: {e}", paths[idx].display())))?;
                if img.width() as usize != self.width || img.height() as usize != self.height {
                    return Err(Error::Data(format!(
                        "{}: frame size {}x{} differs from first frame {}x{}",
                        paths[idx].display(),
                        img.height(),
                        img.width(),
                        self.height,
                        self.width
                    )));
                }
                let rgb = img.to_rgb32f();
                let mut data = vec![0.0; 3 * plane];
                for (i, px) in rgb.pixels().enumerate() {
                    for c in 0..3 {
                        data[c * plane + i] = (px.0[c] as f64).clamp(0.0, 1.0);
                    }
                }
                Tensor::new(vec![3, self.height, self.width], data)
            }
        }
    }
}

/// One clip opened for sampling: frames come back as standardized network
/// inputs. Opening runs a single pass over the clip to fix the face track
/// and the per-clip moments of both streams, so later `pair` calls are pure
/// lookups plus two frame reads.
pub struct ClipSampler {
    pub id: String,
    pub class: ClipClass,
    reader: ClipReader,
    boxes: Vec<BoundingBox>,
    target: usize,
    standardize: bool,
    motion_stats: crate::preprocess::StreamStats,
    appearance_stats: crate::preprocess::StreamStats,
    pulse_targets: Option<Vec<f64>>,
    cache: Option<(usize, Tensor)>,
}

impl ClipSampler {
    pub fn open(
        entry: &ClipEntry,
        manifest_dir: &Path,
        cfg: &crate::preprocess::PreprocessConfig,
    ) -> Result<Self> {
        use crate::preprocess as pp;
        cfg.validate()?;
        let class = entry.class()?;
        let mut reader = ClipReader::open(&entry.resolve_path(manifest_dir))?;
        let n = reader.frame_count();
        if n < 2 {
            return Err(Error::Data(format!("clip {}: needs at least 2 frames, has {n}", entry.id)));
        }
        let (h, w) = reader.dims();
        let raw_boxes = entry.boxes();
        let boxes = pp::prepare_boxes(raw_boxes.as_deref(), n, w, h, cfg)?;

        let mut app_acc = pp::StatsAccum::new(pp::Stream::Appearance);
        let mut mot_acc = pp::StatsAccum::new(pp::Stream::Motion);
        let mut prev: Option<Tensor> = None;
        for t in 0..n {
            let cropped = pp::crop_resize(&reader.frame(t)?, &boxes[t], cfg.target_size)?;
            app_acc.push(&cropped)?;
            if let Some(p) = &prev {
                mot_acc.push(&pp::motion_input(p, &cropped)?)?;
            }
            prev = Some(cropped);
        }

        let pulse_targets = match entry.resolve_pulse_path(manifest_dir) {
            Some(path) => {
                let pulse = read_pulse(&path)?;
                if pulse.len() != n {
                    return Err(Error::Data(format!(
                        "clip {}: pulse trace has {} samples for {n} frames",
                        entry.id,
                        pulse.len()
                    )));
                }
                Some(standardized_derivative(&pulse))
            }
            None => None,
        };

        Ok(ClipSampler {
            id: entry.id.clone(),
            class,
            reader,
            boxes,
            target: cfg.target_size,
            standardize: cfg.standardize,
            motion_stats: mot_acc.finish()?,
            appearance_stats: app_acc.finish()?,
            pulse_targets,
            cache: None,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.reader.frame_count()
    }

    /// Frame pairs are indexed by their second frame: valid `t` is
    /// `1..frame_count()`.
    pub fn pair_count(&self) -> usize {
        self.reader.frame_count() - 1
    }

    fn cropped(&mut self, t: usize) -> Result<Tensor> {
        if let Some((idx, f)) = &self.cache {
            if *idx == t {
                return Ok(f.clone());
            }
        }
        let out = crate::preprocess::crop_resize(&self.reader.frame(t)?, &self.boxes[t], self.target)?;
        self.cache = Some((t, out.clone()));
        Ok(out)
    }

    /// Standardized (motion, appearance) inputs for pair `t`, built from
    /// frames `t-1` and `t`.
    pub fn pair(&mut self, t: usize) -> Result<(Tensor, Tensor)> {
        use crate::preprocess as pp;
        if t == 0 || t >= self.reader.frame_count() {
            return Err(Error::Data(format!("pair {t} out of range 1..{}", self.reader.frame_count())));
        }
        let prev = self.cropped(t - 1)?;
        let curr = self.cropped(t)?;
        let motion = pp::motion_input(&prev, &curr)?;
        if self.standardize {
            Ok((
                pp::standardize_with(&motion, &self.motion_stats)?,
                pp::standardize_with(&curr, &self.appearance_stats)?,
            ))
        } else {
            Ok((motion, curr))
        }
    }

    /// Pulse-derivative regression target for pair `t`, if this clip carries
    /// a pulse trace.
    pub fn pulse_target(&self, t: usize) -> Option<f64> {
        self.pulse_targets.as_ref().and_then(|d| d.get(t.checked_sub(1)?)).copied()
    }

    pub fn has_pulse(&self) -> bool {
        self.pulse_targets.is_some()
    }
}

/// First difference of a trace, standardized to zero mean and unit deviation
/// (deviation floored like image standardization, so a flat trace maps to
/// zeros).
fn standardized_derivative(pulse: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = pulse.windows(2).map(|w| w[1] - w[0]).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(crate::preprocess::STD_FLOOR);
    d.iter().map(|v| (v - mean) / std).collect()
}

/// Ground-truth row mirroring the manifest classes plus the generating heart
/// rate (0 for pulse-free clips).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub clip_id: String,
    pub label: Label,
    pub attack_type: Option<AttackType>,
    pub heart_rate_hz: f64,
}

pub fn ground_truth_csv(rows: &[GroundTruthRow]) -> String {
    let mut out = String::from("clip_id,label,attack_type,heart_rate_hz\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.clip_id,
            match r.label {
                Label::BonaFide => "bonafide",
                Label::Attack => "attack",
            },
            r.attack_type.map(|a| a.as_str()).unwrap_or(""),
            format_args!("{:.6}", r.heart_rate_hz),
        ));
    }
    out
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("clip_id,label,attack_type,heart_rate_hz") => {}
        other => return Err(Error::Data(format!("ground truth header missing, got {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!("ground truth line {}: want 4 fields", i + 2)));
        }
        let label = match parts[1] {
            "bonafide" => Label::BonaFide,
            "attack" => Label::Attack,
            other => return Err(Error::Data(format!("ground truth line {}: bad label {other:?}", i + 2))),
        };
        let attack_type = if parts[2].is_empty() {
            None
        } else {
            Some(
                AttackType::parse(parts[2])
                    .ok_or_else(|| Error::Data(format!("unknown attack type {:?}", parts[2])))?,
            )
        };
        let heart_rate_hz: f64 = parts[3]
            .parse()
            .map_err(|_| Error::Data(format!("ground truth line {}: bad heart rate", i + 2)))?;
        rows.push(GroundTruthRow { clip_id: parts[0].to_string(), label, attack_type, heart_rate_hz });
    }
    Ok(rows)
}

/// Pulse trace files: one f64 sample per line, one line per frame.
pub fn pulse_to_string(trace: &[f64]) -> String {
    let mut out = String::new();
    for v in trace {
        out.push_str(&format!("{v:.9}\n"));
    }
    out
}

pub fn read_pulse(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read pulse trace {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad pulse sample at line {}", path.display(), i + 1)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: empty pulse trace", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Label, attack: Option<AttackType>) -> ClipEntry {
        ClipEntry {
            id: id.to_string(),
            path: format!("clips/{id}.ppraw"),
            label,
            attack_type: attack,
            split: Split::Train,
            bboxes: None,
            pulse_path: None,
        }
    }

    #[test]
    fn manifest_round_trips() {
        let m = DatasetManifest::new(vec![
            entry("a", Label::BonaFide, None),
            entry("b", Label::Attack, Some(AttackType::VR)),
        ])
        .unwrap();
        let text = m.to_string().unwrap();
        assert!(text.starts_with("PADPHYS-M v1\n"));
        let back = DatasetManifest::from_str(&text).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.entries[1].attack_type, Some(AttackType::VR));
    }

    #[test]
    fn manifest_rejects_duplicates_and_incoherent_labels() {
        assert!(DatasetManifest::new(vec![
            entry("a", Label::BonaFide, None),
            entry("a", Label::BonaFide, None),
        ])
        .is_err());
        assert!(DatasetManifest::new(vec![entry("a", Label::Attack, None)]).is_err());
        assert!(DatasetManifest::new(vec![entry("a", Label::BonaFide, Some(AttackType::Pr))]).is_err());
    }

    #[test]
    fn manifest_rejects_bad_header() {
        assert!(DatasetManifest::from_str("PADPHYS-M v2\n").is_err());
        assert!(DatasetManifest::from_str("").is_err());
    }

    #[test]
    fn raw_clip_round_trips_with_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ppraw");
        let frames: Vec<Tensor> = (0..4)
            .map(|t| {
                let data: Vec<f64> = (0..3 * 2 * 3).map(|i| ((t * 37 + i) % 11) as f64 / 10.0).collect();
                Tensor::new(vec![3, 2, 3], data).unwrap()
            })
            .collect();
        let mut w = RawClipWriter::create(&path, 4, 2, 3).unwrap();
        for f in &frames {
            w.push(f).unwrap();
        }
        w.finish().unwrap();

        let mut r = ClipReader::open(&path).unwrap();
        assert_eq!(r.frame_count(), 4);
        assert_eq!(r.dims(), (2, 3));
        // Read out of order to exercise seeking.
        for idx in [2usize, 0, 3, 1] {
            let got = r.frame(idx).unwrap();
            for (a, b) in got.data().iter().zip(frames[idx].data()) {
                assert!((a - b).abs() < 1e-6, "frame {idx}: {a} vs {b}");
            }
        }
        assert!(r.frame(4).is_err());
    }

    #[test]
    fn raw_clip_rejects_wrong_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ppraw");
        let mut w = RawClipWriter::create(&path, 2, 2, 2).unwrap();
        assert!(w.push(&Tensor::zeros(vec![3, 2, 3])).is_err());
        w.push(&Tensor::zeros(vec![3, 2, 2])).unwrap();
        // Declared 2 frames, wrote 1.
        assert!(w.finish().is_err());
    }

    #[test]
    fn raw_clip_detects_truncation_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ppraw");
        let mut w = RawClipWriter::create(&path, 1, 2, 2).unwrap();
        w.push(&Tensor::zeros(vec![3, 2, 2])).unwrap();
        w.finish().unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(ClipReader::open(&path).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(ClipReader::open(&path).is_err());
    }

    #[test]
    fn frame_dir_reader_orders_numerically_and_triples_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        // 10 frames so lexicographic order (1, 10, 2, ...) would be wrong.
        for i in 0..10u8 {
            let img = image::GrayImage::from_pixel(3, 2, image::Luma([i * 20]));
            img.save(dir.path().join(format!("frame_{i}.png"))).unwrap();
        }
        let mut r = ClipReader::open(dir.path()).unwrap();
        assert_eq!(r.frame_count(), 10);
        assert_eq!(r.dims(), (2, 3));
        let f9 = r.frame(9).unwrap();
        let want = 180.0 / 255.0;
        for c in 0..3 {
            let v = f9.data()[c * 6];
            assert!((v - want).abs() < 2e-3, "channel {c}: {v} vs {want}");
        }
        let f1 = r.frame(1).unwrap();
        assert!((f1.data()[0] - 20.0 / 255.0).abs() < 2e-3);
    }

    #[test]
    fn ground_truth_round_trips() {
        let rows = vec![
            GroundTruthRow {
                clip_id: "u0_bf_0".into(),
                label: Label::BonaFide,
                attack_type: None,
                heart_rate_hz: 1.25,
            },
            GroundTruthRow {
                clip_id: "u0_vr_0".into(),
                label: Label::Attack,
                attack_type: Some(AttackType::VR),
                heart_rate_hz: 1.25,
            },
        ];
        let text = ground_truth_csv(&rows);
        let back = parse_ground_truth(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn sampler_standardizes_per_clip_and_exposes_pulse_targets() {
        use crate::preprocess::PreprocessConfig;
        let dir = tempfile::tempdir().unwrap();
        let clip_path = dir.path().join("c.ppraw");
        let n = 6;
        let side = 12;
        let mut w = RawClipWriter::create(&clip_path, n, side, side).unwrap();
        for t in 0..n {
            let data: Vec<f64> = (0..3 * side * side)
                .map(|i| (0.3 + 0.05 * (t as f64) + 0.001 * (i % 97) as f64).min(1.0))
                .collect();
            w.push(&Tensor::new(vec![3, side, side], data).unwrap()).unwrap();
        }
        w.finish().unwrap();
        let pulse: Vec<f64> = (0..n).map(|t| (t as f64 * 0.9).sin()).collect();
        let pulse_path = dir.path().join("c.pulse");
        std::fs::write(&pulse_path, pulse_to_string(&pulse)).unwrap();

        let entry = ClipEntry {
            id: "c".into(),
            path: "c.ppraw".into(),
            label: Label::BonaFide,
            attack_type: None,
            split: Split::Train,
            bboxes: None,
            pulse_path: Some("c.pulse".into()),
        };
        let mut cfg = PreprocessConfig::default();
        cfg.target_size = 8;
        let mut s = ClipSampler::open(&entry, dir.path(), &cfg).unwrap();
        assert_eq!(s.pair_count(), n - 1);
        assert!(s.has_pulse());

        // Motion values pooled over every pair have zero mean and unit
        // deviation, because the sampler standardizes with clip moments.
        let mut all = Vec::new();
        for t in 1..n {
            let (m, a) = s.pair(t).unwrap();
            assert_eq!(m.shape(), [3, 8, 8].as_slice());
            assert_eq!(a.shape(), [3, 8, 8].as_slice());
            all.extend_from_slice(m.data());
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-9, "motion mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "motion std {}", var.sqrt());

        // Pulse targets are the standardized first difference.
        let targets: Vec<f64> = (1..n).map(|t| s.pulse_target(t).unwrap()).collect();
        let tm = targets.iter().sum::<f64>() / targets.len() as f64;
        assert!(tm.abs() < 1e-9);
        assert!(s.pulse_target(0).is_none());
        assert!(s.pulse_target(n).is_none());
        assert!(s.pair(0).is_err());
        assert!(s.pair(n).is_err());
    }

    #[test]
    fn sampler_rejects_pulse_length_mismatch() {
        use crate::preprocess::PreprocessConfig;
        let dir = tempfile::tempdir().unwrap();
        let clip_path = dir.path().join("c.ppraw");
        let mut w = RawClipWriter::create(&clip_path, 3, 8, 8).unwrap();
        for _ in 0..3 {
            w.push(&Tensor::zeros(vec![3, 8, 8])).unwrap();
        }
        w.finish().unwrap();
        std::fs::write(dir.path().join("c.pulse"), pulse_to_string(&[0.0, 1.0])).unwrap();
        let entry = ClipEntry {
            id: "c".into(),
            path: "c.ppraw".into(),
            label: Label::BonaFide,
            attack_type: None,
            split: Split::Train,
            bboxes: None,
            pulse_path: Some("c.pulse".into()),
        };
        let mut cfg = PreprocessConfig::default();
        cfg.target_size = 8;
        assert!(ClipSampler::open(&entry, dir.path(), &cfg).is_err());
    }

    #[test]
    fn pulse_trace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let trace = vec![0.0, 0.5, -0.123456789];
        std::fs::write(&path, pulse_to_string(&trace)).unwrap();
        let back = read_pulse(&path).unwrap();
        for (a, b) in back.iter().zip(&trace) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
