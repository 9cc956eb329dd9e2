//! Segmentation, amplitude layer normalization and phase differencing.
//!
//! A [`Sample`] holds two planar tensors in `[layer][time][subcarrier]`
//! order:
//!
//! * `amp`: `Nr·Nt` layers, layer `l = rx·Nt + tx`, each normalized to
//!   zero mean and unit population std over its `Tw·Nsc` entries.
//! * `phd`: `Nt·(Nr−1)` layers ordered tx-major, layer `tx·(Nr−1) + r`
//!   holding `unwrap(phase[rx=r+1]) − unwrap(phase[rx=r])`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex32;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiDims, CsiRecording, DatasetManifest, MotionType};
use crate::error::{Error, Result};

/// Guard added to the layer std in the amplitude normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub const STORE_FILE: &str = "store.json";
pub const SAMPLE_MAGIC: &[u8; 5] = b"DSEG1";
const STORE_VERSION: u32 = 1;
const BLOB_HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Window length in frames.
    pub tw: usize,
    /// Stride in frames.
    pub ts: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { tw: 200, ts: 50 }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ts < 1 || self.ts > self.tw {
            return Err(Error::Config(format!("segmentation needs 1 <= ts <= tw (tw={}, ts={})", self.tw, self.ts)));
        }
        Ok(())
    }

    /// Number of windows in a recording of `t` frames.
    pub fn count(&self, t: usize) -> usize {
        if t < self.tw {
            0
        } else {
            (t - self.tw) / self.ts + 1
        }
    }
}

/// A borrowed `[Tw × Nr × Nt × Nsc]` window of a recording.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    pub dims: CsiDims,
    pub data: &'a [Complex32],
}

impl<'a> Segment<'a> {
    pub fn new(dims: CsiDims, data: &'a [Complex32]) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!("segment holds {} values, dims {:?} need {}", data.len(), dims, dims.len())));
        }
        Ok(Segment { dims, data })
    }
}

/// Sliding windows: window `k` covers frames `[k·ts, k·ts + tw)`.
pub fn segment<'a>(rec: &'a CsiRecording, cfg: &SegmentationConfig) -> Result<Vec<Segment<'a>>> {
    cfg.validate()?;
    if rec.dims.t < cfg.tw {
        return Err(Error::Validation(format!("recording has {} frames, fewer than the window length {}", rec.dims.t, cfg.tw)));
    }
    let per = rec.dims.nr * rec.dims.nt * rec.dims.nsc;
    let dims = CsiDims { t: cfg.tw, ..rec.dims };
    Ok((0..cfg.count(rec.dims.t))
        .map(|k| {
            let start = k * cfg.ts * per;
            Segment { dims, data: &rec.data[start..start + cfg.tw * per] }
        })
        .collect())
}

fn check_finite(seg: &Segment) -> Result<()> {
    if seg.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Validation("segment contains non-finite CSI values".into()));
    }
    Ok(())
}

/// Magnitudes rearranged to `[Nr·Nt][Tw][Nsc]`, each layer normalized as
/// `(a − μ) / (σ + ε)`. A constant layer maps to all zeros.
pub fn amp_pipeline(seg: &Segment) -> Result<Vec<f32>> {
    check_finite(seg)?;
    let CsiDims { t: tw, nr, nt, nsc } = seg.dims;
    let plane = tw * nsc;
    let mut out = vec![0f32; nr * nt * plane];
    let mut mag = vec![0f64; plane];
    for rx in 0..nr {
        for tx in 0..nt {
            for t in 0..tw {
                for sc in 0..nsc {
                    let c = seg.data[seg.dims.index(t, rx, tx, sc)];
                    mag[t * nsc + sc] = (c.re as f64).hypot(c.im as f64);
                }
            }
            let l = rx * nt + tx;
            normalize_layer(&mag, &mut out[l * plane..(l + 1) * plane]);
        }
    }
    Ok(out)
}

fn normalize_layer(x: &[f64], out: &mut [f32]) {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        out.fill(0.0);
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + LAYER_NORM_EPS;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ((v - mean) / denom) as f32;
    }
}

/// Unwraps a phase sequence in place: whenever a step exceeds π in
/// magnitude, the nearest multiple of 2π is removed from it and from
/// everything after it.
pub fn unwrap_in_place(phase: &mut [f64]) {
    let mut offset = 0.0;
    let mut prev = match phase.first() {
        Some(&p) => p,
        None => return,
    };
    for p in phase.iter_mut().skip(1) {
        let raw = *p;
        let d = raw - prev;
        if d.abs() > PI {
            offset -= 2.0 * PI * (d / (2.0 * PI)).round();
        }
        prev = raw;
        *p = raw + offset;
    }
}

/// Adjacent-receive-antenna differences of subcarrier-unwrapped phase,
/// `[Nt·(Nr−1)][Tw][Nsc]`.
///
/// Each difference row is shifted by a whole number of turns so that its
/// first subcarrier lies in (−π, π]; which turn each antenna's unwrap
/// starts on is an artifact of where its raw phase happened to wrap.
pub fn phd_pipeline(seg: &Segment) -> Result<Vec<f32>> {
    let CsiDims { t: tw, nr, nt, nsc } = seg.dims;
    if nr < 2 {
        return Err(Error::Config(format!("phase differencing needs at least 2 receive antennas, got {nr}")));
    }
    check_finite(seg)?;
    let npd = nt * (nr - 1);
    let plane = tw * nsc;
    let mut out = vec![0f32; npd * plane];
    let mut rows = vec![vec![0f64; nsc]; nr];
    for t in 0..tw {
        for tx in 0..nt {
            for (rx, row) in rows.iter_mut().enumerate() {
                for (sc, p) in row.iter_mut().enumerate() {
                    let c = seg.data[seg.dims.index(t, rx, tx, sc)];
                    *p = (c.im as f64).atan2(c.re as f64);
                }
                unwrap_in_place(row);
            }
            for r in 0..nr - 1 {
                let layer = tx * (nr - 1) + r;
                let dst = &mut out[layer * plane + t * nsc..layer * plane + (t + 1) * nsc];
                let d0 = rows[r + 1][0] - rows[r][0];
                let turns = -((d0 - PI) / (2.0 * PI)).ceil();
                let shift = 2.0 * PI * turns;
                for (sc, o) in dst.iter_mut().enumerate() {
                    *o = (rows[r + 1][sc] - rows[r][sc] + shift) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Per-sample tensor extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleShape {
    /// Amplitude layers `Nr·Nt`.
    pub nrt: usize,
    /// Phase-difference layers `Nt·(Nr−1)`.
    pub npd: usize,
    pub tw: usize,
    pub nsc: usize,
}

impl SampleShape {
    pub fn for_dims(dims: CsiDims, tw: usize) -> Self {
        SampleShape { nrt: dims.nr * dims.nt, npd: dims.nt * (dims.nr - 1), tw, nsc: dims.nsc }
    }

    pub fn amp_len(&self) -> usize {
        self.nrt * self.tw * self.nsc
    }

    pub fn phd_len(&self) -> usize {
        self.npd * self.tw * self.nsc
    }

    pub fn layers(&self, which: Modality) -> usize {
        match which {
            Modality::Amp => self.nrt,
            Modality::Phd => self.npd,
            Modality::Both => self.nrt + self.npd,
        }
    }
}

/// Which input tensor (or both, concatenated amp first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Amp,
    Phd,
    Both,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Amp => "amp",
            Modality::Phd => "phd",
            Modality::Both => "both",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amp" => Ok(Modality::Amp),
            "phd" => Ok(Modality::Phd),
            "both" => Ok(Modality::Both),
            other => Err(Error::Config(format!("unknown modality '{other}' (amp|phd|both)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleSource {
    /// Manifest path of the recording.
    pub recording: String,
    pub segment: usize,
}

/// One preprocessed segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub shape: SampleShape,
    pub amp: Vec<f32>,
    pub phd: Vec<f32>,
    pub label: usize,
    pub source: SampleSource,
}

impl Sample {
    pub fn from_segment(seg: &Segment, label: usize, source: SampleSource) -> Result<Self> {
        Ok(Sample { shape: SampleShape::for_dims(seg.dims, seg.dims.t), amp: amp_pipeline(seg)?, phd: phd_pipeline(seg)?, label, source })
    }

    /// Input tensor of one submodel. `Both` is not a single input.
    pub fn input(&self, which: Modality) -> &[f32] {
        match which {
            Modality::Amp => &self.amp,
            Modality::Phd => &self.phd,
            Modality::Both => panic!("Sample::input takes a single modality"),
        }
    }
}

/// A target or source task: one scenario under one motion type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub scenario_id: String,
    pub motion_type: MotionType,
}

impl TaskId {
    pub fn new(scenario_id: impl Into<String>, motion_type: MotionType) -> Self {
        TaskId { scenario_id: scenario_id.into(), motion_type }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scenario_id, self.motion_type)
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;
    /// `scenario:motion`, e.g. `roomB-NLOS:dynamic`.
    fn from_str(s: &str) -> Result<Self> {
        let (sid, motion) = s.rsplit_once(':').ok_or_else(|| Error::Config(format!("task id '{s}' is not of the form scenario:motion")))?;
        Ok(TaskId::new(sid, motion.parse()?))
    }
}

/// Preprocessed samples grouped by task. Class indices are `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStore {
    pub shape: Option<SampleShape>,
    pub segmentation: SegmentationConfig,
    pub num_classes: usize,
    pub tasks: BTreeMap<TaskId, Vec<Sample>>,
}

impl SampleStore {
    pub fn empty(segmentation: SegmentationConfig) -> Self {
        SampleStore { shape: None, segmentation, num_classes: 0, tasks: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self, id: &TaskId) -> Result<&[Sample]> {
        self.tasks.get(id).map(Vec::as_slice).ok_or_else(|| Error::Validation(format!("task {id} not found in sample store")))
    }

    pub fn scenarios(&self) -> Vec<String> {
        let mut s: Vec<String> = self.tasks.keys().map(|t| t.scenario_id.clone()).collect();
        s.dedup();
        s
    }

    /// Every sample of the listed scenarios (all when `None`), in task order.
    pub fn merged(&self, scenarios: Option<&[String]>) -> Vec<&Sample> {
        self.tasks.iter().filter(|(id, _)| scenarios.is_none_or(|s| s.contains(&id.scenario_id))).flat_map(|(_, v)| v.iter()).collect()
    }

    /// Writes `store.json` plus one DSEG1 blob per sample under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let blob_dir = dir.join("samples");
        fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (task, samples) in &self.tasks {
            for s in samples {
                let file = format!("samples/{:06}.dseg", entries.len());
                write_blob(&dir.join(&file), s)?;
                entries.push(StoreEntry {
                    file,
                    scenario_id: task.scenario_id.clone(),
                    motion_type: task.motion_type,
                    label: s.label,
                    recording: s.source.recording.clone(),
                    segment: s.source.segment,
                });
            }
        }
        let index = StoreIndex {
            format_version: STORE_VERSION,
            segmentation: self.segmentation,
            num_classes: self.num_classes,
            shape: self.shape,
            samples: entries,
        };
        let path = dir.join(STORE_FILE);
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STORE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex = serde_json::from_str(&text)?;
        if index.format_version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {}", index.format_version)));
        }
        let samples: Vec<Sample> = index
            .samples
            .par_iter()
            .map(|e| {
                let mut s = read_blob(&dir.join(&e.file))?;
                if s.label != e.label || Some(s.shape) != index.shape {
                    return Err(Error::Corruption(format!("{}: blob disagrees with store.json", e.file)));
                }
                s.source = SampleSource { recording: e.recording.clone(), segment: e.segment };
                Ok(s)
            })
            .collect::<Result<_>>()?;
        let mut tasks: BTreeMap<TaskId, Vec<Sample>> = BTreeMap::new();
        for (e, s) in index.samples.iter().zip(samples) {
            tasks.entry(TaskId::new(e.scenario_id.clone(), e.motion_type)).or_default().push(s);
        }
        Ok(SampleStore { shape: index.shape, segmentation: index.segmentation, num_classes: index.num_classes, tasks })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreIndex {
    format_version: u32,
    segmentation: SegmentationConfig,
    num_classes: usize,
    shape: Option<SampleShape>,
    samples: Vec<StoreEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreEntry {
    file: String,
    scenario_id: String,
    motion_type: MotionType,
    label: usize,
    recording: String,
    segment: usize,
}

// DSEG1 blob: magic, 3 pad bytes, u32 nrt, npd, tw, nsc (LE), then f32 amp,
// f32 phd, then the label byte.
fn write_blob(path: &Path, s: &Sample) -> Result<()> {
    let sh = s.shape;
    let mut buf = Vec::with_capacity(BLOB_HEADER_LEN + 4 * (s.amp.len() + s.phd.len()) + 1);
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&[0; 3]);
    for v in [sh.nrt, sh.npd, sh.tw, sh.nsc] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in s.amp.iter().chain(&s.phd) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let label = u8::try_from(s.label).map_err(|_| Error::Validation(format!("label {} does not fit a byte", s.label)))?;
    buf.push(label);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path) -> Result<Sample> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    if buf.len() < BLOB_HEADER_LEN || &buf[..5] != SAMPLE_MAGIC {
        return Err(Error::Format(format!("{}: not a DSEG1 sample", path.display())));
    }
    let u = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let shape = SampleShape { nrt: u(0), npd: u(1), tw: u(2), nsc: u(3) };
    let (na, np) = (shape.amp_len(), shape.phd_len());
    if buf.len() != BLOB_HEADER_LEN + 4 * (na + np) + 1 {
        return Err(Error::Corruption(format!("{}: payload length does not match header", path.display())));
    }
    let floats: Vec<f32> = buf[BLOB_HEADER_LEN..BLOB_HEADER_LEN + 4 * (na + np)]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(Sample {
        shape,
        amp: floats[..na].to_vec(),
        phd: floats[na..].to_vec(),
        label: buf[buf.len() - 1] as usize,
        source: SampleSource { recording: String::new(), segment: 0 },
    })
}

/// Segments every recording and applies both pipelines. Samples are
/// labeled with the crowd count and grouped by `(scenario, motion)`.
pub fn preprocess_dataset(manifest: &DatasetManifest, dir: &Path, cfg: &SegmentationConfig) -> Result<SampleStore> {
    cfg.validate()?;
    let mut store = SampleStore::empty(*cfg);
    let first = match manifest.recordings.first() {
        Some(e) => e,
        None => return Ok(store),
    };
    for e in &manifest.recordings {
        if (e.nr, e.nt, e.nsc) != (first.nr, first.nt, first.nsc) {
            return Err(Error::Validation(format!(
                "{}: antenna/subcarrier dims {}x{}x{} differ from {}x{}x{} of {}",
                e.path, e.nr, e.nt, e.nsc, first.nr, first.nt, first.nsc, first.path
            )));
        }
    }
    let per_recording: Vec<Vec<Sample>> = manifest
        .recordings
        .par_iter()
        .map(|e| {
            let rec = manifest.load_entry(dir, e)?;
            segment(&rec, cfg)?
                .iter()
                .enumerate()
                .map(|(k, seg)| {
                    let source = SampleSource { recording: e.path.clone(), segment: k };
                    Sample::from_segment(seg, e.crowd_count as usize, source)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|err| err.context(e.path.clone()))
        })
        .collect::<Result<_>>()?;
    store.shape = Some(SampleShape::for_dims(first.dims(), cfg.tw));
    store.num_classes = manifest.max_count().map_or(0, |m| m as usize + 1);
    for (e, samples) in manifest.recordings.iter().zip(per_recording) {
        store.tasks.entry(TaskId::new(e.scenario_id.clone(), e.motion_type)).or_default().extend(samples);
    }
    Ok(store)
}
