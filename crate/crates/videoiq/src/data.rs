//! Procedural synthetic video datasets and their on-disk format.
//!
//! Each video is T grayscale frames and one class label. A few frames are
//! informative: they carry a class-indexed oriented grating on top of smooth
//! distractor clutter. The rest are clutter/noise, and a fraction are
//! near-duplicates of their left neighbor (the redundancy that makes
//! skipping worthwhile). Class patterns sit in a higher frequency band than
//! the clutter, and the signal amplitude is tuned so low-bit quantization
//! degrades separability without destroying it.
//!
//! Ground-truth informative-frame masks go only into the manifest, which the
//! training code never sees; evaluation uses them for policy analytics.
//!
//! On disk: magic "VIQD", version, a spec echo, then per video the label and
//! raw f32 frames (recognizer resolution followed by the policy-resolution
//! box-downsampled copies). The manifest is an adjacent CSV.

use crate::error::{Error, Result};
use crate::kernels::box_downsample;
use crate::recognizer::VideoSample;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VIQD";
pub const VERSION: u16 = 1;

/// Where a video's informative frames sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Uniformly random positions (untrimmed-video analog).
    Uniform,
    /// One contiguous block at a random offset (trimmed-video analog).
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub frames_per_video: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Recognizer-resolution frame side.
    pub frame_size: usize,
    /// Policy-resolution frame side; must divide `frame_size`.
    pub policy_frame_size: usize,
    pub informative_frames: usize,
    pub placement: Placement,
    /// Fraction of non-informative frames that duplicate their neighbor.
    pub redundancy_rate: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            frames_per_video: 8,
            train_videos: 400,
            test_videos: 100,
            frame_size: 32,
            policy_frame_size: 16,
            informative_frames: 2,
            placement: Placement::Uniform,
            redundancy_rate: 0.5,
            noise_sigma: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Trimmed-video analog: most frames informative, packed densely.
    /// Policies trained here should skip much less.
    pub fn trimmed(seed: u64) -> Self {
        SyntheticSpec {
            informative_frames: 6,
            placement: Placement::Dense,
            redundancy_rate: 0.2,
            seed,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.informative_frames == 0 || self.informative_frames > self.frames_per_video {
            return Err(Error::InvalidArgument {
                op: "synthetic_spec",
                detail: format!(
                    "informative_frames {} outside 1..={}",
                    self.informative_frames, self.frames_per_video
                ),
            });
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument { op: "synthetic_spec", detail: "negative noise sigma".into() });
        }
        if self.frame_size == 0
            || self.policy_frame_size == 0
            || self.frame_size % self.policy_frame_size != 0
        {
            return Err(Error::InvalidArgument {
                op: "synthetic_spec",
                detail: format!(
                    "policy resolution {} must divide frame size {}",
                    self.policy_frame_size, self.frame_size
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub split: Split,
    pub videos: Vec<VideoSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    /// Byte offset of the video record in the dataset file (0 when the
    /// dataset has not been written).
    pub offset: u64,
    pub informative: Vec<bool>,
}

/// Evaluation-only ground truth; never handed to training code.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

/// Amplitudes of the frame composition. The grating amplitude is the knob
/// that makes 2-bit inference lossy but not blind.
const SIGNAL_AMP: f64 = 0.28;
const CLUTTER_AMP: f64 = 0.16;

fn class_pattern(class: usize, num_classes: usize, size: usize, phase: f64, out: &mut [f64]) {
    let theta = std::f64::consts::PI * class as f64 / num_classes as f64;
    let (ct, st) = (theta.cos(), theta.sin());
    let freq = 5.0; // cycles per frame side, above the clutter band
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 * ct + y as f64 * st) / size as f64;
            out[y * size + x] += SIGNAL_AMP * (2.0 * std::f64::consts::PI * freq * u + phase).cos();
        }
    }
}

fn clutter(rng: &mut ChaCha8Rng, size: usize, out: &mut [f64]) {
    // three low-frequency cosine ripples with random orientation and phase
    for _ in 0..3 {
        let fx: f64 = rng.random_range(-1.5..1.5);
        let fy: f64 = rng.random_range(-1.5..1.5);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = CLUTTER_AMP * rng.random_range(0.5..1.0);
        for y in 0..size {
            for x in 0..size {
                let u = fx * x as f64 / size as f64 + fy * y as f64 / size as f64;
                out[y * size + x] += amp * (std::f64::consts::TAU * u + phase).cos();
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Rounds through f32 so written files reproduce in-memory values exactly.
fn to_f32_grid(v: f64) -> f64 {
    (v as f32) as f64
}

fn informative_positions(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<bool> {
    let t = spec.frames_per_video;
    let k = spec.informative_frames;
    let mut mask = vec![false; t];
    match spec.placement {
        Placement::Uniform => {
            let mut idx: Vec<usize> = (0..t).collect();
            for i in 0..k {
                let j = rng.random_range(i..t);
                idx.swap(i, j);
            }
            for &i in &idx[..k] {
                mask[i] = true;
            }
        }
        Placement::Dense => {
            let start = rng.random_range(0..=(t - k));
            for m in mask.iter_mut().skip(start).take(k) {
                *m = true;
            }
        }
    }
    mask
}

fn generate_video(
    spec: &SyntheticSpec,
    split: Split,
    index: usize,
    global_index: u64,
) -> (VideoSample, ManifestEntry) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ global_index);
    let label = index % spec.num_classes;
    let size = spec.frame_size;
    let mask = informative_positions(&mut rng, spec);
    let mut frames: Vec<Tensor> = Vec::with_capacity(spec.frames_per_video);
    for i in 0..spec.frames_per_video {
        // duplicates only chain off non-informative neighbors, otherwise the
        // copy would carry the class pattern while the mask says it does not
        let redundant = !mask[i]
            && i > 0
            && !mask[i - 1]
            && rng.random::<f64>() < spec.redundancy_rate;
        let mut px = vec![0.5; size * size];
        if redundant {
            // jittered copy of the previous frame
            let prev = frames[i - 1].data();
            for (p, &q) in px.iter_mut().zip(prev) {
                *p = q + spec.noise_sigma * 0.3 * gaussian(&mut rng);
            }
        } else {
            clutter(&mut rng, size, &mut px);
            if mask[i] {
                // small phase wobble keeps frames distinct without washing
                // the pattern out of a per-class pixel centroid
                let phase = rng.random_range(-0.4..0.4);
                class_pattern(label, spec.num_classes, size, phase, &mut px);
            }
            for p in px.iter_mut() {
                *p += spec.noise_sigma * gaussian(&mut rng);
            }
        }
        for p in px.iter_mut() {
            *p = to_f32_grid(p.clamp(0.0, 1.0));
        }
        frames.push(Tensor::new(vec![size, size], px).unwrap());
    }
    let factor = size / spec.policy_frame_size;
    let policy_frames = frames
        .iter()
        .map(|f| {
            let down = box_downsample(f.data(), size, size, factor);
            let down = down.into_iter().map(to_f32_grid).collect();
            Tensor::new(vec![spec.policy_frame_size, spec.policy_frame_size], down).unwrap()
        })
        .collect();
    let id = format!("{}_{:05}", split.name(), index);
    (
        VideoSample { id: id.clone(), label, frames, policy_frames },
        ManifestEntry { id, label, offset: 0, informative: mask },
    )
}

/// Generates one split deterministically from (spec, seed). Labels are
/// exactly balanced across classes.
pub fn generate_split(spec: &SyntheticSpec, split: Split) -> Result<(Dataset, DatasetManifest)> {
    spec.validate()?;
    let (count, base) = match split {
        Split::Train => (spec.train_videos, 0u64),
        Split::Test => (spec.test_videos, spec.train_videos as u64),
    };
    let mut videos = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        // per-video derived seed: master seed xor global video index
        let (v, e) = generate_video(spec, split, i, base + i as u64);
        videos.push(v);
        entries.push(e);
    }
    Ok((
        Dataset { spec: spec.clone(), split, videos },
        DatasetManifest { split: split.name().to_string(), entries },
    ))
}

// ── binary format ───────────────────────────────────────────────────

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(what, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn push_frames(out: &mut Vec<u8>, frames: &[Tensor]) {
    for f in frames {
        for &v in f.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

fn spec_bytes(spec: &SyntheticSpec, split: Split, count: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(spec.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames_per_video as u32).to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frame_size as u32).to_le_bytes());
    out.extend_from_slice(&(spec.policy_frame_size as u32).to_le_bytes());
    out.extend_from_slice(&(spec.informative_frames as u32).to_le_bytes());
    out.push(match spec.placement {
        Placement::Uniform => 0,
        Placement::Dense => 1,
    });
    out.push(match split {
        Split::Train => 0,
        Split::Test => 1,
    });
    out.extend_from_slice(&spec.redundancy_rate.to_le_bytes());
    out.extend_from_slice(&spec.noise_sigma.to_le_bytes());
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.extend_from_slice(&(spec.train_videos as u32).to_le_bytes());
    out.extend_from_slice(&(spec.test_videos as u32).to_le_bytes());
    out
}

/// Serializes a dataset; returns the bytes and each video's record offset.
pub fn dataset_to_bytes(ds: &Dataset) -> (Vec<u8>, Vec<u64>) {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend(spec_bytes(&ds.spec, ds.split, ds.videos.len()));
    let mut offsets = Vec::with_capacity(ds.videos.len());
    for v in &ds.videos {
        offsets.push(out.len() as u64);
        let idb = v.id.as_bytes();
        out.extend_from_slice(&(idb.len() as u16).to_le_bytes());
        out.extend_from_slice(idb);
        out.extend_from_slice(&(v.label as u32).to_le_bytes());
        push_frames(&mut out, &v.frames);
        push_frames(&mut out, &v.policy_frames);
    }
    (out, offsets)
}

/// Writes the dataset file and fills the manifest's record offsets.
pub fn write_dataset(ds: &Dataset, manifest: &mut DatasetManifest, path: &Path) -> Result<()> {
    let (bytes, offsets) = dataset_to_bytes(ds);
    for (e, off) in manifest.entries.iter_mut().zip(offsets) {
        e.offset = off;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    dataset_from_bytes(&bytes)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format("magic", format!("expected {:?}, got {:?}", MAGIC, magic)));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let num_classes = c.u32("num_classes")? as usize;
    let frames_per_video = c.u32("frames_per_video")? as usize;
    let count = c.u32("video_count")? as usize;
    let frame_size = c.u32("frame_size")? as usize;
    let policy_frame_size = c.u32("policy_frame_size")? as usize;
    let informative_frames = c.u32("informative_frames")? as usize;
    let placement = match c.take(1, "placement")?[0] {
        0 => Placement::Uniform,
        1 => Placement::Dense,
        other => return Err(Error::format("placement", format!("unknown code {other}"))),
    };
    let split = match c.take(1, "split")?[0] {
        0 => Split::Train,
        1 => Split::Test,
        other => return Err(Error::format("split", format!("unknown code {other}"))),
    };
    let redundancy_rate = c.f64("redundancy_rate")?;
    let noise_sigma = c.f64("noise_sigma")?;
    let seed = c.u64("seed")?;
    let train_videos = c.u32("train_videos")? as usize;
    let test_videos = c.u32("test_videos")? as usize;
    let spec = SyntheticSpec {
        num_classes,
        frames_per_video,
        train_videos,
        test_videos,
        frame_size,
        policy_frame_size,
        informative_frames,
        placement,
        redundancy_rate,
        noise_sigma,
        seed,
    };
    let mut videos = Vec::with_capacity(count);
    for _ in 0..count {
        let idlen = c.u16("video id")? as usize;
        let id = String::from_utf8(c.take(idlen, "video id")?.to_vec())
            .map_err(|e| Error::format("video id", e.to_string()))?;
        let label = c.u32("label")? as usize;
        let mut read_frames = |side: usize, what: &'static str| -> Result<Vec<Tensor>> {
            let mut frames = Vec::with_capacity(frames_per_video);
            for _ in 0..frames_per_video {
                let raw = c.take(side * side * 4, what)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect();
                frames.push(Tensor::new(vec![side, side], data)?);
            }
            Ok(frames)
        };
        let frames = read_frames(frame_size, "frame data")?;
        let policy_frames = read_frames(policy_frame_size, "policy frame data")?;
        videos.push(VideoSample { id, label, frames, policy_frames });
    }
    Ok(Dataset { spec, split, videos })
}

// ── manifest CSV ────────────────────────────────────────────────────

pub fn manifest_to_csv(m: &DatasetManifest) -> String {
    let mut s = String::from("split,video_id,label,offset,informative_mask\n");
    for e in &m.entries {
        let mask: String = e.informative.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.push_str(&format!("{},{},{},{},{}\n", m.split, e.id, e.label, e.offset, mask));
    }
    s
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_csv(m))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("manifest", "empty file".to_string()))?;
    if header != "split,video_id,label,offset,informative_mask" {
        return Err(Error::format("manifest", format!("unexpected header {header:?}")));
    }
    let mut split = String::new();
    let mut entries = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::format("manifest", format!("line {}: {} columns", n + 2, cols.len())));
        }
        split = cols[0].to_string();
        let parse = |s: &str, what: &'static str| -> Result<u64> {
            s.parse().map_err(|_| Error::format(what, format!("bad number {s:?}")))
        };
        entries.push(ManifestEntry {
            id: cols[1].to_string(),
            label: parse(cols[2], "manifest label")? as usize,
            offset: parse(cols[3], "manifest offset")?,
            informative: cols[4].chars().map(|c| c == '1').collect(),
        });
    }
    Ok(DatasetManifest { split, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec { train_videos: 24, test_videos: 12, ..SyntheticSpec::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (a, ma) = generate_split(&spec, Split::Train).unwrap();
        let (b, mb) = generate_split(&spec, Split::Train).unwrap();
        assert_eq!(dataset_to_bytes(&a).0, dataset_to_bytes(&b).0);
        assert_eq!(ma, mb);
    }

    #[test]
    fn labels_balanced_within_one() {
        let spec = small_spec();
        let (ds, _) = generate_split(&spec, Split::Test).unwrap();
        let mut counts = vec![0usize; spec.num_classes];
        for v in &ds.videos {
            counts[v.label] += 1;
        }
        let mean = ds.videos.len() as f64 / spec.num_classes as f64;
        for &c in &counts {
            assert!((c as f64 - mean).abs() <= 1.0, "{counts:?}");
        }
    }

    #[test]
    fn policy_frames_are_exact_box_downsamples() {
        let spec = small_spec();
        let (ds, _) = generate_split(&spec, Split::Train).unwrap();
        let v = &ds.videos[0];
        let factor = spec.frame_size / spec.policy_frame_size;
        for (f, p) in v.frames.iter().zip(&v.policy_frames) {
            let down: Vec<f64> = box_downsample(f.data(), spec.frame_size, spec.frame_size, factor)
                .into_iter()
                .map(|x| (x as f32) as f64)
                .collect();
            assert_eq!(down, p.data());
        }
    }

    #[test]
    fn mask_count_matches_spec() {
        let spec = small_spec();
        let (_, m) = generate_split(&spec, Split::Train).unwrap();
        for e in &m.entries {
            assert_eq!(e.informative.iter().filter(|&&b| b).count(), spec.informative_frames);
        }
    }

    #[test]
    fn dense_placement_is_contiguous() {
        let spec = SyntheticSpec::trimmed(3);
        let (_, m) = generate_split(&spec, Split::Train).unwrap();
        for e in m.entries.iter().take(50) {
            let first = e.informative.iter().position(|&b| b).unwrap();
            let last = e.informative.iter().rposition(|&b| b).unwrap();
            assert_eq!(last - first + 1, spec.informative_frames);
        }
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let (ds, mut m) = generate_split(&spec, Split::Test).unwrap();
        let path = dir.path().join("test.viqd");
        write_dataset(&ds, &mut m, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
        assert!(m.entries.iter().all(|e| e.offset > 0));

        let mpath = dir.path().join("test_manifest.csv");
        write_manifest(&m, &mpath).unwrap();
        let m2 = read_manifest(&mpath).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn corrupted_magic_is_named_in_error() {
        let spec = small_spec();
        let (ds, _) = generate_split(&spec, Split::Test).unwrap();
        let (mut bytes, _) = dataset_to_bytes(&ds);
        bytes[0] = b'X';
        let err = dataset_from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = small_spec();
        let (ds, _) = generate_split(&spec, Split::Test).unwrap();
        let (bytes, _) = dataset_to_bytes(&ds);
        let err = dataset_from_bytes(&bytes[..bytes.len() / 2]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let spec = SyntheticSpec { train_videos: 0, ..small_spec() };
        let (ds, _) = generate_split(&spec, Split::Train).unwrap();
        assert!(ds.videos.is_empty());
        let (bytes, _) = dataset_to_bytes(&ds);
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small_spec();
        s.informative_frames = 0;
        assert!(generate_split(&s, Split::Train).is_err());
        let mut s = small_spec();
        s.informative_frames = s.frames_per_video + 1;
        assert!(generate_split(&s, Split::Train).is_err());
        let mut s = small_spec();
        s.policy_frame_size = 10;
        assert!(generate_split(&s, Split::Train).is_err());
    }

    /// Frame-level nearest-centroid oracle: informative frames alone carry
    /// the label; non-informative frames are near chance.
    #[test]
    fn centroid_oracle_separates_informative_frames() {
        let spec = SyntheticSpec { train_videos: 80, test_videos: 40, ..SyntheticSpec::default() };
        let (train, train_m) = generate_split(&spec, Split::Train).unwrap();
        let (test, test_m) = generate_split(&spec, Split::Test).unwrap();
        let n = spec.frame_size * spec.frame_size;

        let mut centroids = vec![vec![0.0; n]; spec.num_classes];
        let mut counts = vec![0usize; spec.num_classes];
        for (v, e) in train.videos.iter().zip(&train_m.entries) {
            for (f, &inf) in v.frames.iter().zip(&e.informative) {
                if inf {
                    for (c, &p) in centroids[v.label].iter_mut().zip(f.data()) {
                        *c += p;
                    }
                    counts[v.label] += 1;
                }
            }
        }
        for (c, &k) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|x| *x /= k as f64);
        }
        let classify = |f: &Tensor| -> usize {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let d: f64 = f.data().iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        };

        let (mut inf_ok, mut inf_total, mut non_ok, mut non_total) = (0, 0, 0, 0);
        for (v, e) in test.videos.iter().zip(&test_m.entries) {
            for (f, &inf) in v.frames.iter().zip(&e.informative) {
                let pred = classify(f);
                if inf {
                    inf_total += 1;
                    inf_ok += usize::from(pred == v.label);
                } else {
                    non_total += 1;
                    non_ok += usize::from(pred == v.label);
                }
            }
        }
        let inf_acc = inf_ok as f64 / inf_total as f64;
        let non_acc = non_ok as f64 / non_total as f64;
        assert!(inf_acc >= 0.95, "informative-frame recovery {inf_acc}");
        assert!(non_acc <= 0.30, "non-informative frames should be near chance, got {non_acc}");
    }
}
