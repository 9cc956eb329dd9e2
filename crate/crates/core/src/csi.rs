//! CSI recordings and the on-disk dataset container.
//!
//! A recording file is a fixed 128-byte header followed by the complex
//! tensor as little-endian `f32` pairs `(re, im)` in row-major
//! `[t][rx][tx][subcarrier]` order:
//!
//! ```text
//! off  size  field
//!   0     5  magic "CSIR1"
//!   5     3  reserved (zero)
//!   8     4  T            u32
//!  12     4  Nr           u32
//!  16     4  Nt           u32
//!  20     4  Nsc          u32
//!  24     4  crowd_count  u32
//!  28     1  motion_type  u8 (0 static, 1 dynamic, 2 mixed)
//!  29     1  has_seed     u8 (0/1)
//!  30     2  reserved (zero)
//!  32     8  sample_rate  f64
//!  40     8  seed         u64 (0 when absent)
//!  48     2  scenario_id byte length (<= 64)
//!  50    64  scenario_id UTF-8, zero padded
//! 114    14  reserved (zero)
//! 128     -  payload, 8·T·Nr·Nt·Nsc bytes
//! ```
//!
//! A dataset directory holds recording files plus `manifest.json`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CSIR1";
pub const HEADER_LEN: usize = 128;
pub const MAX_SCENARIO_LEN: usize = 64;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionType {
    Static,
    Dynamic,
    Mixed,
}

impl MotionType {
    pub const ALL: [MotionType; 3] = [MotionType::Static, MotionType::Dynamic, MotionType::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionType::Static => "static",
            MotionType::Dynamic => "dynamic",
            MotionType::Mixed => "mixed",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl std::fmt::Display for MotionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MotionType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(MotionType::Static),
            "dynamic" => Ok(MotionType::Dynamic),
            "mixed" => Ok(MotionType::Mixed),
            other => Err(Error::Config(format!("unknown motion type '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub scenario_id: String,
    pub motion_type: MotionType,
    pub crowd_count: u32,
    /// Packets per second.
    pub sample_rate: f64,
    pub seed: Option<u64>,
}

/// Tensor extents `[T × Nr × Nt × Nsc]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CsiDims {
    pub t: usize,
    pub nr: usize,
    pub nt: usize,
    pub nsc: usize,
}

impl CsiDims {
    pub fn new(t: usize, nr: usize, nt: usize, nsc: usize) -> Self {
        CsiDims { t, nr, nt, nsc }
    }

    pub fn len(&self) -> usize {
        self.t * self.nr * self.nt * self.nsc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Payload bytes: two 4-byte floats per complex entry.
    pub fn payload_bytes(&self) -> u64 {
        8 * self.len() as u64
    }

    pub fn index(&self, t: usize, rx: usize, tx: usize, sc: usize) -> usize {
        ((t * self.nr + rx) * self.nt + tx) * self.nsc + sc
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 1 || self.nt < 1 || self.nsc < 1 {
            return Err(Error::Validation(format!("dimensions must be positive: {self:?}")));
        }
        if self.nr < 2 {
            return Err(Error::Validation(format!("need at least 2 receive antennas for phase differencing, got nr={}", self.nr)));
        }
        Ok(())
    }
}

/// Raw complex CSI tensor plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiRecording {
    pub dims: CsiDims,
    /// Row-major `[t][rx][tx][subcarrier]`.
    pub data: Vec<Complex32>,
    pub meta: RecordingMeta,
}

impl CsiRecording {
    pub fn new(dims: CsiDims, data: Vec<Complex32>, meta: RecordingMeta) -> Result<Self> {
        let rec = CsiRecording { dims, data, meta };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.data.len() != self.dims.len() {
            return Err(Error::Validation(format!(
                "tensor holds {} entries but dims {}x{}x{}x{} require {}",
                self.data.len(),
                self.dims.t,
                self.dims.nr,
                self.dims.nt,
                self.dims.nsc,
                self.dims.len()
            )));
        }
        if self.meta.scenario_id.len() > MAX_SCENARIO_LEN {
            return Err(Error::Validation(format!("scenario_id '{}' exceeds {MAX_SCENARIO_LEN} bytes", self.meta.scenario_id)));
        }
        Ok(())
    }

    pub fn at(&self, t: usize, rx: usize, tx: usize, sc: usize) -> Complex32 {
        self.data[self.dims.index(t, rx, tx, sc)]
    }

    /// Bitwise equality of tensor and metadata (distinguishes `-0.0`).
    pub fn bit_eq(&self, other: &CsiRecording) -> bool {
        self.dims == other.dims
            && self.meta.scenario_id == other.meta.scenario_id
            && self.meta.motion_type == other.meta.motion_type
            && self.meta.crowd_count == other.meta.crowd_count
            && self.meta.sample_rate.to_bits() == other.meta.sample_rate.to_bits()
            && self.meta.seed == other.meta.seed
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits())
    }
}

fn encode_header(dims: &CsiDims, meta: &RecordingMeta) -> Result<[u8; HEADER_LEN]> {
    let u32_dim = |v: usize, name: &str| u32::try_from(v).map_err(|_| Error::Validation(format!("{name}={v} does not fit the header")));
    let mut h = [0u8; HEADER_LEN];
    h[..5].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&u32_dim(dims.t, "T")?.to_le_bytes());
    h[12..16].copy_from_slice(&u32_dim(dims.nr, "Nr")?.to_le_bytes());
    h[16..20].copy_from_slice(&u32_dim(dims.nt, "Nt")?.to_le_bytes());
    h[20..24].copy_from_slice(&u32_dim(dims.nsc, "Nsc")?.to_le_bytes());
    h[24..28].copy_from_slice(&meta.crowd_count.to_le_bytes());
    h[28] = meta.motion_type.code();
    h[29] = meta.seed.is_some() as u8;
    h[32..40].copy_from_slice(&meta.sample_rate.to_le_bytes());
    h[40..48].copy_from_slice(&meta.seed.unwrap_or(0).to_le_bytes());
    let sid = meta.scenario_id.as_bytes();
    if sid.len() > MAX_SCENARIO_LEN {
        return Err(Error::Validation(format!("scenario_id exceeds {MAX_SCENARIO_LEN} bytes")));
    }
    h[48..50].copy_from_slice(&(sid.len() as u16).to_le_bytes());
    h[50..50 + sid.len()].copy_from_slice(sid);
    Ok(h)
}

fn decode_header(h: &[u8; HEADER_LEN], path: &Path) -> Result<(CsiDims, RecordingMeta)> {
    if &h[..5] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic {:?}", path.display(), String::from_utf8_lossy(&h[..5]))));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().expect("4 bytes")) as usize;
    let dims = CsiDims::new(u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let motion_type =
        MotionType::from_code(h[28]).ok_or_else(|| Error::Format(format!("{}: unknown motion code {}", path.display(), h[28])))?;
    let seed_val = u64::from_le_bytes(h[40..48].try_into().expect("8 bytes"));
    let sid_len = u16::from_le_bytes([h[48], h[49]]) as usize;
    if sid_len > MAX_SCENARIO_LEN {
        return Err(Error::Format(format!("{}: scenario_id length {sid_len} too large", path.display())));
    }
    let scenario_id = std::str::from_utf8(&h[50..50 + sid_len])
        .map_err(|_| Error::Format(format!("{}: scenario_id is not UTF-8", path.display())))?
        .to_string();
    let meta = RecordingMeta {
        scenario_id,
        motion_type,
        crowd_count: u32_at(24) as u32,
        sample_rate: f64::from_le_bytes(h[32..40].try_into().expect("8 bytes")),
        seed: (h[29] != 0).then_some(seed_val),
    };
    Ok((dims, meta))
}

/// Writes a recording; returns the number of bytes written.
pub fn save_recording(rec: &CsiRecording, path: &Path) -> Result<u64> {
    rec.validate()?;
    let header = encode_header(&rec.dims, &rec.meta)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in rec.data.chunks(4096) {
        buf.clear();
        for c in chunk {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(HEADER_LEN as u64 + rec.dims.payload_bytes())
}

/// Reads only the header of a recording file.
pub fn read_header(path: &Path) -> Result<(CsiDims, RecordingMeta)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = [0u8; HEADER_LEN];
    if let Err(e) = f.read_exact(&mut h) {
        return if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Err(Error::Format(format!("{}: file shorter than the {HEADER_LEN}-byte header", path.display())))
        } else {
            Err(Error::io(path, e))
        };
    }
    decode_header(&h, path)
}

/// Reads a recording, checking that the payload length matches the header
/// exactly. Never reads past the declared payload.
pub fn load_recording(path: &Path) -> Result<CsiRecording> {
    let (dims, meta) = read_header(path)?;
    let file_len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let want = HEADER_LEN as u64 + dims.payload_bytes();
    if file_len != want {
        return Err(Error::Corruption(format!(
            "{}: header declares {}x{}x{}x{} ({} payload bytes) but file holds {} payload bytes",
            path.display(),
            dims.t,
            dims.nr,
            dims.nt,
            dims.nsc,
            dims.payload_bytes(),
            file_len.saturating_sub(HEADER_LEN as u64)
        )));
    }
    dims.validate().map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut payload = vec![0u8; HEADER_LEN + dims.payload_bytes() as usize];
    f.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let data = payload[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| {
            Complex32::new(f32::from_le_bytes(b[..4].try_into().expect("4 bytes")), f32::from_le_bytes(b[4..].try_into().expect("4 bytes")))
        })
        .collect();
    Ok(CsiRecording { dims, data, meta })
}

/// One manifest row. Field names are the `manifest.json` schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub scenario_id: String,
    pub motion_type: MotionType,
    pub crowd_count: u32,
    pub sample_rate: f64,
    pub t: usize,
    pub nr: usize,
    pub nt: usize,
    pub nsc: usize,
    pub seed: Option<u64>,
}

impl ManifestEntry {
    pub fn dims(&self) -> CsiDims {
        CsiDims::new(self.t, self.nr, self.nt, self.nsc)
    }

    pub fn meta(&self) -> RecordingMeta {
        RecordingMeta {
            scenario_id: self.scenario_id.clone(),
            motion_type: self.motion_type,
            crowd_count: self.crowd_count,
            sample_rate: self.sample_rate,
            seed: self.seed,
        }
    }

    pub fn from_recording(path: impl Into<String>, rec: &CsiRecording) -> Self {
        ManifestEntry {
            path: path.into(),
            scenario_id: rec.meta.scenario_id.clone(),
            motion_type: rec.meta.motion_type,
            crowd_count: rec.meta.crowd_count,
            sample_rate: rec.meta.sample_rate,
            t: rec.dims.t,
            nr: rec.dims.nr,
            nt: rec.dims.nt,
            nsc: rec.dims.nsc,
            seed: rec.meta.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub recordings: Vec<ManifestEntry>,
    /// Header/manifest metadata conflicts found while validating. The
    /// manifest copy wins.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest { format_version: MANIFEST_VERSION, recordings: Vec::new(), warnings: Vec::new() }
    }
}

impl DatasetManifest {
    /// Largest crowd count in the dataset (the class index bound `M`).
    pub fn max_count(&self) -> Option<u32> {
        self.recordings.iter().map(|r| r.crowd_count).max()
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a recording referenced by `entry`, with the manifest metadata
    /// taking precedence over the file header.
    pub fn load_entry(&self, dir: &Path, entry: &ManifestEntry) -> Result<CsiRecording> {
        let mut rec = load_recording(&dir.join(&entry.path))?;
        if rec.dims != entry.dims() {
            return Err(Error::Validation(format!("{}: file dims {:?} disagree with manifest {:?}", entry.path, rec.dims, entry.dims())));
        }
        rec.meta = entry.meta();
        Ok(rec)
    }
}

/// Reads `dir/manifest.json` and eagerly validates every entry.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest format_version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.format_version
        )));
    }
    let mut seen = HashSet::new();
    for entry in &manifest.recordings {
        if !seen.insert(entry.path.as_str()) {
            return Err(Error::Validation(format!("duplicate manifest path '{}'", entry.path)));
        }
        entry.dims().validate().map_err(|e| Error::Validation(format!("{}: {e}", entry.path)))?;
        let file = dir.join(&entry.path);
        let len = match fs::metadata(&file) {
            Ok(m) if m.is_file() => m.len(),
            _ => return Err(Error::Validation(format!("missing recording file '{}'", entry.path))),
        };
        let payload = len.saturating_sub(HEADER_LEN as u64);
        if len < HEADER_LEN as u64 || payload != entry.dims().payload_bytes() {
            return Err(Error::Validation(format!(
                "size mismatch for '{}': payload is {payload} bytes, expected 8*{}*{}*{}*{} = {}",
                entry.path,
                entry.t,
                entry.nr,
                entry.nt,
                entry.nsc,
                entry.dims().payload_bytes()
            )));
        }
        let (hdims, hmeta) = read_header(&file)?;
        if hdims != entry.dims() {
            return Err(Error::Validation(format!("'{}': header dims {:?} disagree with manifest {:?}", entry.path, hdims, entry.dims())));
        }
        if hmeta != entry.meta() {
            let msg = format!("'{}': header metadata differs from manifest; using manifest", entry.path);
            warn!("{msg}");
            manifest.warnings.push(msg);
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RecordingMeta {
        RecordingMeta { scenario_id: "roomA-LOS".into(), motion_type: MotionType::Mixed, crowd_count: 4, sample_rate: 100.0, seed: Some(9) }
    }

    #[test]
    fn zero_tensor_payload_is_32_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let dims = CsiDims::new(1, 2, 1, 2);
        let rec = CsiRecording::new(dims, vec![Complex32::new(0.0, 0.0); 4], meta()).unwrap();
        let p = dir.path().join("z.csi");
        let n = save_recording(&rec, &p).unwrap();
        assert_eq!(n, HEADER_LEN as u64 + 32);
        assert_eq!(fs::metadata(&p).unwrap().len(), n);
    }

    #[test]
    fn full_size_payload() {
        assert_eq!(CsiDims::new(200, 3, 2, 114).payload_bytes(), 1_094_400);
    }

    #[test]
    fn dim_mismatch_is_validation_error() {
        let rec = CsiRecording { dims: CsiDims::new(1, 3, 1, 2), data: vec![Complex32::default(); 4], meta: meta() };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(save_recording(&rec, &dir.path().join("x")), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csi");
        let mut bytes = vec![0u8; HEADER_LEN + 8];
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_recording(&p), Err(Error::Format(_))));

        let dims = CsiDims::new(200, 3, 2, 114);
        let rec = CsiRecording::new(dims, vec![Complex32::new(1.0, -1.0); dims.len()], meta()).unwrap();
        let p = dir.path().join("trunc.csi");
        save_recording(&rec, &p).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..HEADER_LEN + dims.payload_bytes() as usize / 2]).unwrap();
        assert!(matches!(load_recording(&p), Err(Error::Corruption(_))));
    }

    #[test]
    fn round_trip_special_values() {
        let dir = tempfile::tempdir().unwrap();
        let dims = CsiDims::new(2, 2, 1, 2);
        let data = vec![
            Complex32::new(-0.0, f32::MIN_POSITIVE / 4.0),
            Complex32::new(f32::MAX, f32::MIN),
            Complex32::new(1e-45, -1e-45),
            Complex32::new(0.0, 3.5),
            Complex32::new(f32::EPSILON, -2.0),
            Complex32::new(7.0, 8.0),
            Complex32::new(-0.0, -0.0),
            Complex32::new(1.0, 1.0),
        ];
        let rec = CsiRecording::new(dims, data, RecordingMeta { seed: None, ..meta() }).unwrap();
        let p = dir.path().join("r.csi");
        save_recording(&rec, &p).unwrap();
        assert!(load_recording(&p).unwrap().bit_eq(&rec));
    }

    fn write_dataset(dir: &Path, n: usize) -> DatasetManifest {
        let dims = CsiDims::new(3, 2, 1, 4);
        let mut m = DatasetManifest::default();
        for i in 0..n {
            let mut md = meta();
            md.crowd_count = i as u32;
            let rec = CsiRecording::new(dims, vec![Complex32::new(i as f32, 0.5); dims.len()], md).unwrap();
            let name = format!("r{i}.csi");
            save_recording(&rec, &dir.join(&name)).unwrap();
            m.recordings.push(ManifestEntry::from_recording(name, &rec));
        }
        m.save(dir).unwrap();
        m
    }

    #[test]
    fn manifest_validation_errors_name_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), 3);
        assert_eq!(load_manifest(dir.path()).unwrap().recordings.len(), 3);

        // duplicate path
        let mut dup = m.clone();
        dup.recordings.push(dup.recordings[0].clone());
        dup.save(dir.path()).unwrap();
        let e = load_manifest(dir.path()).unwrap_err();
        assert!(matches!(&e, Error::Validation(s) if s.contains("duplicate") && s.contains("r0.csi")), "{e}");

        // size mismatch
        let mut bad = m.clone();
        bad.recordings[1].t = 4;
        bad.save(dir.path()).unwrap();
        let e = load_manifest(dir.path()).unwrap_err();
        assert!(matches!(&e, Error::Validation(s) if s.contains("size mismatch") && s.contains("r1.csi")), "{e}");

        // missing file
        m.save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("r2.csi")).unwrap();
        let e = load_manifest(dir.path()).unwrap_err();
        assert!(matches!(&e, Error::Validation(s) if s.contains("missing") && s.contains("r2.csi")), "{e}");
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        DatasetManifest::default().save(dir.path()).unwrap();
        assert!(load_manifest(dir.path()).unwrap().recordings.is_empty());
    }

    #[test]
    fn manifest_metadata_wins_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_dataset(dir.path(), 1);
        m.recordings[0].scenario_id = "renamed".into();
        m.save(dir.path()).unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        let rec = loaded.load_entry(dir.path(), &loaded.recordings[0]).unwrap();
        assert_eq!(rec.meta.scenario_id, "renamed");
    }
}
