//! Synthetic multipath CSI.
//!
//! Every entry is `H = Σ_n a_n(t)·exp(−i·2π·f_j·τ_n(t))` over a fixed set of
//! background paths, the direct path and one path per person scatterer,
//! followed by receiver noise and then phase impairments.
//!
//! Geometry is 2-D. The transmit and receive arrays are uniform linear
//! arrays along +y starting at `tx_pos` / `rx_pos`. Person scatterers are
//! points; their per-antenna delays come from exact distances. Background
//! paths are abstract (delay, departure angle, arrival angle) triples whose
//! per-antenna delays use the far-field offset `k·spacing·sin(angle)/c`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{save_recording, CsiDims, CsiRecording, DatasetManifest, ManifestEntry, MotionType, RecordingMeta};
use crate::error::{Error, Result};
use crate::seed::{self, SeedHasher};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One measurement environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub scenario_id: String,
    /// Background multipath count.
    pub n_static_paths: usize,
    /// Direct-path amplitude; 0 models a blocked line of sight.
    pub los_gain: f64,
    /// Root-power sum of the background path amplitudes.
    pub static_path_gain: f64,
    /// Mean excess delay of background paths, seconds.
    pub room_delay_spread: f64,
    /// Element spacing of both arrays, meters.
    pub antenna_spacing: f64,
    pub carrier_freq: f64,
    pub bandwidth: f64,
    pub nsc: usize,
    pub nr: usize,
    pub nt: usize,
    /// `f64::INFINITY` (JSON `null`) disables noise.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    /// Seeds the background path set.
    pub seed: u64,
    /// Room extent `[x, y]` in meters; people stay inside it.
    pub room: [f64; 2],
    pub tx_pos: [f64; 2],
    pub rx_pos: [f64; 2],
    /// Packets per second.
    pub sample_rate: f64,
    /// Overrides the dataset-wide recording length for this scene.
    pub duration_frames: Option<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            scenario_id: "roomA-LOS".into(),
            n_static_paths: 8,
            los_gain: 1.0,
            static_path_gain: 0.6,
            room_delay_spread: 30e-9,
            antenna_spacing: 0.028,
            carrier_freq: 5.32e9,
            bandwidth: 40e6,
            nsc: 114,
            nr: 3,
            nt: 2,
            snr_db: 25.0,
            seed: 1,
            room: [6.0, 5.0],
            tx_pos: [0.5, 2.5],
            rx_pos: [5.5, 2.5],
            sample_rate: 100.0,
            duration_frames: None,
        }
    }
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("scene '{}': {m}", self.scenario_id)));
        if self.scenario_id.is_empty() {
            return bad("scenario_id must not be empty".into());
        }
        if self.n_static_paths < 1 || self.nsc < 1 || self.nt < 1 {
            return bad("n_static_paths, nsc and nt must be >= 1".into());
        }
        if self.nr < 2 {
            return bad("nr must be >= 2".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be finite or +inf".into());
        }
        let nonneg = [self.los_gain, self.static_path_gain, self.room_delay_spread, self.antenna_spacing];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("gains, delay spread and spacing must be finite and >= 0".into());
        }
        if !(self.carrier_freq > 0.0 && self.bandwidth > 0.0 && self.sample_rate > 0.0) {
            return bad("carrier_freq, bandwidth and sample_rate must be positive".into());
        }
        if !(self.room[0] > 0.0 && self.room[1] > 0.0) {
            return bad("room extent must be positive".into());
        }
        if self.duration_frames == Some(0) {
            return bad("duration_frames must be >= 1".into());
        }
        Ok(())
    }

    /// Subcarrier frequency `f_j`.
    pub fn subcarrier_freq(&self, j: usize) -> f64 {
        self.carrier_freq + (j as f64 - (self.nsc as f64 - 1.0) / 2.0) * self.bandwidth / self.nsc as f64
    }

    fn tx_antenna(&self, k: usize) -> [f64; 2] {
        [self.tx_pos[0], self.tx_pos[1] + k as f64 * self.antenna_spacing]
    }

    fn rx_antenna(&self, k: usize) -> [f64; 2] {
        [self.rx_pos[0], self.rx_pos[1] + k as f64 * self.antenna_spacing]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrowdMotionConfig {
    pub scatterers_per_person: usize,
    /// Radius of a person's scatterer cluster, meters.
    pub body_radius: f64,
    /// Per-frame positional jitter std of seated people, meters.
    pub static_jitter_std: f64,
    /// Walking speed, meters per second.
    pub walk_speed: f64,
    /// Std of the per-frame heading change of walkers, radians.
    pub turn_std: f64,
    /// Probability that a person walks in a mixed recording.
    pub mixed_moving_fraction: f64,
    pub per_person_reflection_gain: f64,
}

impl Default for CrowdMotionConfig {
    fn default() -> Self {
        CrowdMotionConfig {
            scatterers_per_person: 3,
            body_radius: 0.2,
            static_jitter_std: 0.01,
            walk_speed: 1.0,
            turn_std: 0.3,
            mixed_moving_fraction: 0.5,
            per_person_reflection_gain: 0.25,
        }
    }
}

impl CrowdMotionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scatterers_per_person < 1 {
            return Err(Error::Validation("scatterers_per_person must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mixed_moving_fraction) {
            return Err(Error::Validation("mixed_moving_fraction must be in [0, 1]".into()));
        }
        let nonneg = [self.body_radius, self.static_jitter_std, self.walk_speed, self.turn_std, self.per_person_reflection_gain];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("motion parameters must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentConfig {
    /// Random per-frame phase shared by all receive antennas of one
    /// transmit antenna.
    pub common_phase_offset: bool,
    /// Std of the per-frame linear phase slope across subcarriers,
    /// radians per subcarrier. Shared by all antenna pairs.
    pub sto_slope_std: f64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        ImpairmentConfig { common_phase_offset: true, sto_slope_std: 0.05 }
    }
}

impl ImpairmentConfig {
    pub fn off() -> Self {
        ImpairmentConfig { common_phase_offset: false, sto_slope_std: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sto_slope_std.is_finite() && self.sto_slope_std >= 0.0) {
            return Err(Error::Validation("sto_slope_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A time-invariant background path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackgroundPath {
    pub amplitude: f64,
    /// Delay at transmit element 0 / receive element 0, seconds.
    pub delay: f64,
    /// Departure and arrival angles from broadside, radians.
    pub aod: f64,
    pub aoa: f64,
}

impl BackgroundPath {
    pub fn delay_at(&self, scene: &SceneConfig, rx: usize, tx: usize) -> f64 {
        let d = scene.antenna_spacing;
        self.delay + (rx as f64 * d * self.aoa.sin() + tx as f64 * d * self.aod.sin()) / SPEED_OF_LIGHT
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// The scene's background path set, a pure function of `scene.seed` and
/// `scene.scenario_id`.
pub fn background_paths(scene: &SceneConfig) -> Vec<BackgroundPath> {
    let mut rng = seed::rng(SeedHasher::new(scene.seed).str("background").str(&scene.scenario_id).finish());
    let direct = dist(scene.tx_pos, scene.rx_pos) / SPEED_OF_LIGHT;
    let raw: Vec<(f64, f64, f64, f64)> = (0..scene.n_static_paths)
        .map(|_| {
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            let excess = e1 * scene.room_delay_spread;
            let weight = (-e1).exp() * e2;
            let aod = rng.gen_range(-PI / 2.0..PI / 2.0);
            let aoa = rng.gen_range(-PI / 2.0..PI / 2.0);
            (excess, weight, aod, aoa)
        })
        .collect();
    let total: f64 = raw.iter().map(|r| r.1).sum::<f64>().max(f64::MIN_POSITIVE);
    raw.into_iter()
        .map(|(excess, w, aod, aoa)| BackgroundPath {
            amplitude: scene.static_path_gain * (w / total).sqrt(),
            delay: direct + excess,
            aod,
            aoa,
        })
        .collect()
}

/// `exp(−i·2π·f_j·τ)` for every subcarrier, added to `acc` scaled by `a`.
/// Uses a geometric progression over the uniform subcarrier grid.
fn accumulate_path(scene: &SceneConfig, a: f64, tau: f64, acc: &mut [Complex64]) {
    let f0 = scene.subcarrier_freq(0);
    let df = scene.bandwidth / scene.nsc as f64;
    let cycles = (f0 * tau).fract();
    let mut z = Complex64::from_polar(a, -2.0 * PI * cycles);
    let step = Complex64::from_polar(1.0, -2.0 * PI * (df * tau).fract());
    for h in acc.iter_mut() {
        *h += z;
        z *= step;
    }
}

#[derive(Clone, Debug)]
struct Person {
    center: [f64; 2],
    offsets: Vec<[f64; 2]>,
    walking: bool,
    heading: f64,
}

fn reflect(x: &mut f64, heading_comp: &mut f64, lo: f64, hi: f64) {
    if *x < lo {
        *x = 2.0 * lo - *x;
        *heading_comp = -*heading_comp;
    } else if *x > hi {
        *x = 2.0 * hi - *x;
        *heading_comp = -*heading_comp;
    }
    *x = x.clamp(lo, hi);
}

struct Crowd {
    people: Vec<Person>,
    rng: ChaCha8Rng,
    jitter: Normal<f64>,
    turn: Normal<f64>,
    step_len: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Crowd {
    fn new(scene: &SceneConfig, motion: &CrowdMotionConfig, motion_type: MotionType, count: u32, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "crowd"));
        let margin = motion.body_radius.min(scene.room[0] / 4.0).min(scene.room[1] / 4.0);
        let lo = [margin, margin];
        let hi = [scene.room[0] - margin, scene.room[1] - margin];
        let people = (0..count)
            .map(|_| {
                let center = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
                let offsets = (0..motion.scatterers_per_person)
                    .map(|_| {
                        let r = motion.body_radius * rng.gen::<f64>().sqrt();
                        let th = rng.gen_range(0.0..2.0 * PI);
                        [r * th.cos(), r * th.sin()]
                    })
                    .collect();
                let walking = match motion_type {
                    MotionType::Static => false,
                    MotionType::Dynamic => true,
                    MotionType::Mixed => rng.gen_bool(motion.mixed_moving_fraction),
                };
                Person { center, offsets, walking, heading: rng.gen_range(0.0..2.0 * PI) }
            })
            .collect();
        Crowd {
            people,
            rng: seed::rng(seed::derive(seed, "crowd-motion")),
            jitter: Normal::new(0.0, motion.static_jitter_std).expect("validated std"),
            turn: Normal::new(0.0, motion.turn_std).expect("validated std"),
            step_len: motion.walk_speed / scene.sample_rate,
            lo,
            hi,
        }
    }

    /// Scatterer positions for the next frame.
    fn advance(&mut self, out: &mut Vec<[f64; 2]>) {
        out.clear();
        for p in &mut self.people {
            let pos = if p.walking {
                p.heading += self.turn.sample(&mut self.rng);
                let (mut hx, mut hy) = (p.heading.cos(), p.heading.sin());
                p.center[0] += self.step_len * hx;
                p.center[1] += self.step_len * hy;
                reflect(&mut p.center[0], &mut hx, self.lo[0], self.hi[0]);
                reflect(&mut p.center[1], &mut hy, self.lo[1], self.hi[1]);
                p.heading = hy.atan2(hx);
                p.center
            } else {
                let dx = self.jitter.sample(&mut self.rng);
                let dy = self.jitter.sample(&mut self.rng);
                [p.center[0] + dx, p.center[1] + dy]
            };
            out.extend(p.offsets.iter().map(|o| [pos[0] + o[0], pos[1] + o[1]]));
        }
    }
}

/// Generates one labeled recording. Deterministic in all arguments.
#[allow(clippy::too_many_arguments)]
pub fn generate_recording(
    scene: &SceneConfig,
    motion: &CrowdMotionConfig,
    impairments: &ImpairmentConfig,
    motion_type: MotionType,
    crowd_count: u32,
    duration_frames: usize,
    seed: u64,
) -> Result<CsiRecording> {
    scene.validate()?;
    motion.validate()?;
    impairments.validate()?;
    if duration_frames < 1 {
        return Err(Error::Validation("duration_frames must be >= 1".into()));
    }
    let dims = CsiDims::new(duration_frames, scene.nr, scene.nt, scene.nsc);
    let (nr, nt, nsc) = (scene.nr, scene.nt, scene.nsc);
    let per_frame = nr * nt * nsc;

    // time-invariant part: background plus direct path
    let mut fixed = vec![Complex64::new(0.0, 0.0); per_frame];
    let bg = background_paths(scene);
    for rx in 0..nr {
        for tx in 0..nt {
            let acc = &mut fixed[(rx * nt + tx) * nsc..(rx * nt + tx + 1) * nsc];
            for p in &bg {
                accumulate_path(scene, p.amplitude, p.delay_at(scene, rx, tx), acc);
            }
            if scene.los_gain > 0.0 {
                let tau = dist(scene.tx_antenna(tx), scene.rx_antenna(rx)) / SPEED_OF_LIGHT;
                accumulate_path(scene, scene.los_gain, tau, acc);
            }
        }
    }

    let mut h = vec![Complex64::new(0.0, 0.0); dims.len()];
    let mut crowd = Crowd::new(scene, motion, motion_type, crowd_count, seed);
    let link = dist(scene.tx_pos, scene.rx_pos).max(1e-3);
    let gain = motion.per_person_reflection_gain / (motion.scatterers_per_person as f64).sqrt();
    let txs: Vec<[f64; 2]> = (0..nt).map(|k| scene.tx_antenna(k)).collect();
    let rxs: Vec<[f64; 2]> = (0..nr).map(|k| scene.rx_antenna(k)).collect();
    let mut scatterers = Vec::new();
    for frame in h.chunks_exact_mut(per_frame) {
        frame.copy_from_slice(&fixed);
        crowd.advance(&mut scatterers);
        for s in &scatterers {
            let d_tx: Vec<f64> = txs.iter().map(|&a| dist(*s, a)).collect();
            let d_rx: Vec<f64> = rxs.iter().map(|&a| dist(*s, a)).collect();
            for rx in 0..nr {
                for tx in 0..nt {
                    let len = d_tx[tx] + d_rx[rx];
                    let a = gain * link / len.max(link);
                    let acc = &mut frame[(rx * nt + tx) * nsc..(rx * nt + tx + 1) * nsc];
                    accumulate_path(scene, a, len / SPEED_OF_LIGHT, acc);
                }
            }
        }
    }

    if scene.snr_db.is_finite() {
        let power = h.iter().map(|c| c.norm_sqr()).sum::<f64>() / h.len() as f64;
        let std = (power * 10f64.powf(-scene.snr_db / 10.0) / 2.0).sqrt();
        let mut rng = seed::rng(seed::derive(seed, "noise"));
        for c in h.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *c += Complex64::new(std * re, std * im);
        }
    }

    let mut cpo_rng = seed::rng(seed::derive(seed, "common-phase"));
    let mut sto_rng = seed::rng(seed::derive(seed, "sto"));
    let center = (nsc as f64 - 1.0) / 2.0;
    for frame in h.chunks_exact_mut(per_frame) {
        let theta: Vec<f64> = (0..nt).map(|_| cpo_rng.gen_range(-PI..PI)).collect();
        let z: f64 = sto_rng.sample(StandardNormal);
        let slope = z * impairments.sto_slope_std;
        if !impairments.common_phase_offset && slope == 0.0 {
            continue;
        }
        for rx in 0..nr {
            for tx in 0..nt {
                let th = if impairments.common_phase_offset { theta[tx] } else { 0.0 };
                for sc in 0..nsc {
                    let phase = th + slope * (sc as f64 - center);
                    frame[(rx * nt + tx) * nsc + sc] *= Complex64::from_polar(1.0, phase);
                }
            }
        }
    }

    let data: Vec<Complex32> = h.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect();
    let meta = RecordingMeta {
        scenario_id: scene.scenario_id.clone(),
        motion_type,
        crowd_count,
        sample_rate: scene.sample_rate,
        seed: Some(seed),
    };
    CsiRecording::new(dims, data, meta)
}

/// Scenarios × motion types × crowd counts to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetGenConfig {
    pub scenarios: Vec<SceneConfig>,
    pub motion_types: Vec<MotionType>,
    pub counts: Vec<u32>,
    /// Largest admissible crowd count `M`.
    pub max_count: u32,
    /// Frames per recording unless a scene overrides it.
    pub duration_frames: usize,
    pub motion: CrowdMotionConfig,
    pub impairments: ImpairmentConfig,
}

impl Default for DatasetGenConfig {
    fn default() -> Self {
        DatasetGenConfig {
            scenarios: vec![SceneConfig::default()],
            motion_types: MotionType::ALL.to_vec(),
            counts: (0..=8).collect(),
            max_count: 8,
            duration_frames: 30_000,
            motion: CrowdMotionConfig::default(),
            impairments: ImpairmentConfig::default(),
        }
    }
}

impl DatasetGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.impairments.validate()?;
        let mut ids = BTreeSet::new();
        let mut files = BTreeSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !ids.insert(&s.scenario_id) {
                return Err(Error::Validation(format!("duplicate category definition: scenario '{}'", s.scenario_id)));
            }
            if !files.insert(file_stem(&s.scenario_id)) {
                return Err(Error::Validation(format!("scenario '{}' collides with another after file-name sanitizing", s.scenario_id)));
            }
        }
        let motions: BTreeSet<_> = self.motion_types.iter().collect();
        if motions.len() != self.motion_types.len() {
            return Err(Error::Validation("duplicate category definition: repeated motion type".into()));
        }
        let counts: BTreeSet<_> = self.counts.iter().collect();
        if counts.len() != self.counts.len() {
            return Err(Error::Validation("duplicate category definition: repeated crowd count".into()));
        }
        if let Some(c) = self.counts.iter().find(|&&c| c > self.max_count) {
            return Err(Error::Validation(format!("crowd count {c} exceeds max_count {}", self.max_count)));
        }
        if self.duration_frames < 1 {
            return Err(Error::Validation("duration_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Seed of one `(scenario, motion, count)` category.
pub fn category_seed(base_seed: u64, scenario_id: &str, motion: MotionType, count: u32) -> u64 {
    SeedHasher::new(base_seed).str(scenario_id).str(motion.as_str()).u64(count as u64).finish()
}

fn file_stem(scenario_id: &str) -> String {
    scenario_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes one CSIR1 file per category plus `manifest.json` into `out_dir`.
pub fn generate_dataset(cfg: &DatasetGenConfig, base_seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut jobs = Vec::new();
    for scene in &cfg.scenarios {
        for &m in &cfg.motion_types {
            for &c in &cfg.counts {
                jobs.push((scene, m, c));
            }
        }
    }
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(scene, m, c)| {
            let seed = category_seed(base_seed, &scene.scenario_id, m, c);
            let frames = scene.duration_frames.unwrap_or(cfg.duration_frames);
            let rec = generate_recording(scene, &cfg.motion, &cfg.impairments, m, c, frames, seed)?;
            let rel = format!("{}_{}_{:02}.csir", file_stem(&scene.scenario_id), m, c);
            save_recording(&rec, &out_dir.join(&rel))?;
            Ok(ManifestEntry::from_recording(rel, &rec))
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest { recordings: entries, ..Default::default() };
    manifest.save(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> SceneConfig {
        SceneConfig { nsc: 16, snr_db: f64::INFINITY, ..Default::default() }
    }

    #[test]
    fn empty_room_without_noise_is_constant() {
        let rec = generate_recording(&small_scene(), &CrowdMotionConfig::default(), &ImpairmentConfig::off(), MotionType::Dynamic, 0, 5, 3)
            .unwrap();
        let per = 3 * 2 * 16;
        for t in 1..5 {
            assert_eq!(&rec.data[..per], &rec.data[t * per..(t + 1) * per]);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let g = |seed| {
            generate_recording(&small_scene(), &CrowdMotionConfig::default(), &ImpairmentConfig::default(), MotionType::Mixed, 4, 20, seed)
                .unwrap()
        };
        assert!(g(1).bit_eq(&g(1)));
        assert!(!g(1).bit_eq(&g(2)));
    }

    #[test]
    fn subcarrier_grid_is_centered() {
        let s = SceneConfig { nsc: 4, bandwidth: 40.0, carrier_freq: 100.0, ..Default::default() };
        assert_eq!(s.subcarrier_freq(0), 100.0 - 15.0);
        assert_eq!(s.subcarrier_freq(3), 100.0 + 15.0);
    }

    #[test]
    fn duplicate_categories_are_rejected() {
        let mut cfg = DatasetGenConfig::default();
        cfg.counts = vec![1, 1];
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let mut cfg = DatasetGenConfig::default();
        cfg.scenarios.push(cfg.scenarios[0].clone());
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let mut cfg = DatasetGenConfig::default();
        cfg.counts = vec![9];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn infinite_snr_round_trips_through_json() {
        let s = small_scene();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"snr_db\":null"));
        let back: SceneConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
