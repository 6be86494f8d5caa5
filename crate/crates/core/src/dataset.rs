//! On-disk dataset format, z-scoring, splits and sequence windows.
//!
//! Layout:
//!
//! ```text
//! dataset/manifest.json
//! dataset/kernel.f32                      (optional dense kernel, station-major)
//! dataset/samples/<id>/manifest.json
//! dataset/samples/<id>/{gravity_raw,gravity_norm,density,saturation,mask}.f32
//! ```
//!
//! Payloads are little-endian `f32` with no header, x-fastest for volumes and
//! station-index order for maps. Every payload's SHA-256 is recorded in the
//! sample manifest and checked on read. Records hold `f32`-representable
//! values, so a write/read round trip reproduces them bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, KernelMode};
use crate::geo::{self, GeoStatsParams, InjectionScenario, SiteConfig};
use crate::grid::{FieldKind, GravityMap, ReservoirGrid, SensorGrid, VolumeField};
use crate::metrics::{class_weights, ClassWeights};
use crate::par::Exec;

pub const FORMAT_VERSION: u32 = 1;
pub const NORMALIZATION: &str = "per_map_zscore_population_std";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KERNEL_FILE: &str = "kernel.f32";
pub const SAMPLES_DIR: &str = "samples";
/// Window length of a [`SequenceSample`].
pub const SEQUENCE_LEN: usize = 10;
/// Per-map std at or below this is rejected by [`zscore`].
pub const MIN_STD: f64 = 1e-12;

const GRAVITY_RAW: &str = "gravity_raw";
const GRAVITY_NORM: &str = "gravity_norm";
const DENSITY: &str = "density";
const SATURATION: &str = "saturation";
const MASK: &str = "mask";

/// Round every value to the nearest `f32`.
pub fn quantize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| *v as f32 as f64).collect()
}

fn quantize_volume(field: &VolumeField) -> Result<VolumeField> {
    VolumeField::new(field.grid().clone(), field.kind(), quantize(field.values()))
}

/// Per-map z-score with the population standard deviation.
pub fn zscore(map: &GravityMap) -> Result<GravityMap> {
    let v = map.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if !(std > MIN_STD) {
        return Err(Error::DegenerateNormalization(std));
    }
    let values = v.iter().map(|x| (x - mean) / std).collect();
    GravityMap::new(map.sensors().clone(), values, true)
}

/// Grid geometry plus the reservoir mask, run-length encoded as alternating
/// outside/inside run lengths over flat x-fastest indices, starting outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub cell_size: [f64; 3],
    pub origin: [f64; 3],
    pub mask_runs: Vec<usize>,
}

impl GridSpec {
    pub fn from_grid(grid: &ReservoirGrid) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &m in grid.mask() {
            if m == current {
                len += 1;
            } else {
                runs.push(len);
                current = m;
                len = 1;
            }
        }
        runs.push(len);
        Self {
            dims: grid.dims(),
            cell_size: grid.cell_size(),
            origin: grid.origin(),
            mask_runs: runs,
        }
    }

    pub fn to_grid(&self) -> Result<ReservoirGrid> {
        let grid = ReservoirGrid::new(self.dims, self.cell_size, self.origin)?;
        let total: usize = self.mask_runs.iter().sum();
        if total != grid.len() {
            return Err(Error::Dataset(format!(
                "mask runs cover {total} cells, grid has {}",
                grid.len()
            )));
        }
        let mut mask = Vec::with_capacity(total);
        for (r, &len) in self.mask_runs.iter().enumerate() {
            mask.extend(std::iter::repeat_n(r % 2 == 1, len));
        }
        grid.with_mask(mask)
    }
}

/// Uniform station lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub spacing: f64,
    pub counts: [usize; 2],
    pub origin: [f64; 2],
    pub depth: f64,
}

impl SensorSpec {
    pub fn from_sensors(s: &SensorGrid) -> Self {
        let (m1, m2) = s.counts();
        Self {
            spacing: s.spacing(),
            counts: [m1, m2],
            origin: s.origin(),
            depth: s.depth(),
        }
    }

    pub fn to_sensors(&self) -> Result<SensorGrid> {
        SensorGrid::uniform(self.spacing, self.counts[0], self.counts[1], self.origin, self.depth)
    }
}

/// One payload file as described in a sample manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadEntry {
    pub file: String,
    pub kind: String,
    pub units: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

/// Per-directory manifest. Prediction volumes use the same structure with a
/// single `density` entry and no sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub format_version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geostats: Option<GeoStatsParams>,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorSpec>,
    pub fields: BTreeMap<String, PayloadEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_f32(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes
}

/// Write `values` as little-endian `f32`; returns the payload's SHA-256.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<String> {
    let bytes = encode_f32(values);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Read a little-endian `f32` payload, checking its length and checksum.
pub fn read_f32(path: &Path, expected_len: usize, expected_sha: Option<&str>) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    if bytes.len() / 4 != expected_len {
        return Err(Error::PayloadDimension {
            path: path.to_path_buf(),
            expected: expected_len,
            actual: bytes.len() / 4,
        });
    }
    if let Some(expected) = expected_sha {
        let actual = sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                actual,
            });
        }
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn parse_kind(name: &str) -> Result<FieldKind> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::Dataset(format!("unknown field kind {name:?}")))
}

fn volume_entry(dir: &Path, name: &str, field: &VolumeField) -> Result<PayloadEntry> {
    let file = format!("{name}.f32");
    let sha256 = write_f32(&dir.join(&file), field.values())?;
    Ok(PayloadEntry {
        file,
        kind: field.kind().name().to_string(),
        units: field.kind().units().to_string(),
        shape: field.grid().dims().to_vec(),
        sha256,
    })
}

fn map_entry(dir: &Path, name: &str, map: &GravityMap) -> Result<PayloadEntry> {
    let file = format!("{name}.f32");
    let sha256 = write_f32(&dir.join(&file), map.values())?;
    let (m1, m2) = map.sensors().counts();
    Ok(PayloadEntry {
        file,
        kind: name.to_string(),
        units: if map.is_normalized() { "1" } else { "uGal" }.to_string(),
        shape: vec![m1, m2],
        sha256,
    })
}

fn entry<'a>(manifest: &'a SampleManifest, name: &str) -> Result<&'a PayloadEntry> {
    manifest
        .fields
        .get(name)
        .ok_or_else(|| Error::Dataset(format!("sample {} has no {name} payload", manifest.id)))
}

fn read_volume_entry(dir: &Path, e: &PayloadEntry, grid: &Arc<ReservoirGrid>) -> Result<VolumeField> {
    let dims = grid.dims();
    if e.shape != dims {
        return Err(Error::Dataset(format!(
            "{} shape {:?} differs from grid {:?}",
            e.file, e.shape, dims
        )));
    }
    let values = read_f32(&dir.join(&e.file), grid.len(), Some(&e.sha256))?;
    VolumeField::new(grid.clone(), parse_kind(&e.kind)?, values)
}

fn read_map_entry(
    dir: &Path,
    e: &PayloadEntry,
    sensors: &Arc<SensorGrid>,
    normalized: bool,
) -> Result<GravityMap> {
    let (m1, m2) = sensors.counts();
    if e.shape != [m1, m2] {
        return Err(Error::Dataset(format!(
            "{} shape {:?} differs from sensor layout {m1}x{m2}",
            e.file, e.shape
        )));
    }
    let values = read_f32(&dir.join(&e.file), sensors.len(), Some(&e.sha256))?;
    GravityMap::new(sensors.clone(), values, normalized)
}

fn read_manifest(dir: &Path) -> Result<SampleManifest> {
    let m: SampleManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(m.format_version));
    }
    Ok(m)
}

/// One synthetic (gravity, plume) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// Years since injection start.
    pub time_step: f64,
    pub seed: u64,
    pub geostats: GeoStatsParams,
    pub gravity_raw: GravityMap,
    pub gravity_norm: GravityMap,
    pub density_change: VolumeField,
    pub saturation: VolumeField,
    pub plume_mask: VolumeField,
}

impl SampleRecord {
    /// Assemble a record from a simulated plume.
    ///
    /// Density and saturation are rounded to `f32`, the raw map is the
    /// forward response of the rounded density (itself rounded), the
    /// normalized map is its z-score and the mask is `saturation > 0`.
    pub fn from_truth(
        id: impl Into<String>,
        time_step: f64,
        seed: u64,
        geostats: GeoStatsParams,
        op: &ForwardOperator,
        density_change: &VolumeField,
        saturation: &VolumeField,
    ) -> Result<Self> {
        density_change.require_kind(FieldKind::DensityChange)?;
        saturation.require_kind(FieldKind::Saturation)?;
        density_change.require_same_grid(saturation)?;
        let density_change = quantize_volume(density_change)?;
        let saturation = quantize_volume(saturation)?;
        let raw = op.forward(&density_change)?;
        let gravity_raw = GravityMap::new(raw.sensors().clone(), quantize(raw.values()), false)?;
        Self::assemble(id.into(), time_step, seed, geostats, gravity_raw, density_change, saturation)
    }

    fn assemble(
        id: String,
        time_step: f64,
        seed: u64,
        geostats: GeoStatsParams,
        gravity_raw: GravityMap,
        density_change: VolumeField,
        saturation: VolumeField,
    ) -> Result<Self> {
        let norm = zscore(&gravity_raw)?;
        let gravity_norm = GravityMap::new(norm.sensors().clone(), quantize(norm.values()), true)?;
        let plume_mask = saturation.mask_where(|s| s > 0.0);
        Ok(Self {
            id,
            time_step,
            seed,
            geostats,
            gravity_raw,
            gravity_norm,
            density_change,
            saturation,
            plume_mask,
        })
    }

    pub fn grid(&self) -> &Arc<ReservoirGrid> {
        self.density_change.grid()
    }

    pub fn sensors(&self) -> &Arc<SensorGrid> {
        self.gravity_raw.sensors()
    }

    fn check_quantized(&self) -> Result<()> {
        let fields: [(&str, &[f64]); 5] = [
            (GRAVITY_RAW, self.gravity_raw.values()),
            (GRAVITY_NORM, self.gravity_norm.values()),
            (DENSITY, self.density_change.values()),
            (SATURATION, self.saturation.values()),
            (MASK, self.plume_mask.values()),
        ];
        for (name, values) in fields {
            if values.iter().any(|v| (*v as f32 as f64) != *v) {
                return Err(Error::Dataset(format!(
                    "{name} of sample {} is not f32-representable",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Write `record` into `dir` (created if missing).
pub fn write_sample(record: &SampleRecord, dir: &Path) -> Result<SampleManifest> {
    record.check_quantized()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut fields = BTreeMap::new();
    fields.insert(GRAVITY_RAW.to_string(), map_entry(dir, GRAVITY_RAW, &record.gravity_raw)?);
    fields.insert(GRAVITY_NORM.to_string(), map_entry(dir, GRAVITY_NORM, &record.gravity_norm)?);
    fields.insert(DENSITY.to_string(), volume_entry(dir, DENSITY, &record.density_change)?);
    fields.insert(SATURATION.to_string(), volume_entry(dir, SATURATION, &record.saturation)?);
    fields.insert(MASK.to_string(), volume_entry(dir, MASK, &record.plume_mask)?);
    let manifest = SampleManifest {
        format_version: FORMAT_VERSION,
        id: record.id.clone(),
        time_step: Some(record.time_step),
        seed: Some(record.seed),
        geostats: Some(record.geostats.clone()),
        grid: GridSpec::from_grid(record.grid()),
        sensors: Some(SensorSpec::from_sensors(record.sensors())),
        fields,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Read a sample written by [`write_sample`], building its own grid and sensors.
pub fn read_sample(dir: &Path) -> Result<SampleRecord> {
    let manifest = read_manifest(dir)?;
    let grid = Arc::new(manifest.grid.to_grid()?);
    let sensors = manifest
        .sensors
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("sample {} has no sensor spec", manifest.id)))?
        .to_sensors()?;
    read_sample_on(dir, &manifest, &grid, &Arc::new(sensors))
}

/// Read a sample onto an existing grid and sensor layout, which must match
/// the ones recorded in its manifest.
pub fn read_sample_with(
    dir: &Path,
    grid: &Arc<ReservoirGrid>,
    sensors: &Arc<SensorGrid>,
) -> Result<SampleRecord> {
    let manifest = read_manifest(dir)?;
    if manifest.grid != GridSpec::from_grid(grid) {
        return Err(Error::GridMismatch(format!("sample {} grid spec", manifest.id)));
    }
    if manifest.sensors.as_ref() != Some(&SensorSpec::from_sensors(sensors)) {
        return Err(Error::InvalidSensors(format!("sample {} sensor spec", manifest.id)));
    }
    read_sample_on(dir, &manifest, grid, sensors)
}

fn read_sample_on(
    dir: &Path,
    manifest: &SampleManifest,
    grid: &Arc<ReservoirGrid>,
    sensors: &Arc<SensorGrid>,
) -> Result<SampleRecord> {
    let missing = |what: &str| Error::Dataset(format!("sample {} has no {what}", manifest.id));
    let gravity_raw = read_map_entry(dir, entry(manifest, GRAVITY_RAW)?, sensors, false)?;
    let gravity_norm = read_map_entry(dir, entry(manifest, GRAVITY_NORM)?, sensors, true)?;
    let density_change = read_volume_entry(dir, entry(manifest, DENSITY)?, grid)?;
    let saturation = read_volume_entry(dir, entry(manifest, SATURATION)?, grid)?;
    let plume_mask = read_volume_entry(dir, entry(manifest, MASK)?, grid)?;
    density_change.require_kind(FieldKind::DensityChange)?;
    saturation.require_kind(FieldKind::Saturation)?;
    plume_mask.require_kind(FieldKind::BinaryMask)?;
    if plume_mask != saturation.mask_where(|s| s > 0.0) {
        return Err(Error::Dataset(format!(
            "sample {}: mask disagrees with saturation > 0",
            manifest.id
        )));
    }
    Ok(SampleRecord {
        id: manifest.id.clone(),
        time_step: manifest.time_step.ok_or_else(|| missing("time step"))?,
        seed: manifest.seed.ok_or_else(|| missing("seed"))?,
        geostats: manifest.geostats.clone().ok_or_else(|| missing("geostats"))?,
        gravity_raw,
        gravity_norm,
        density_change,
        saturation,
        plume_mask,
    })
}

/// Write a density-change volume (e.g. a learned prediction) as
/// `dir/density.f32` plus `dir/manifest.json`.
pub fn write_prediction(id: &str, field: &VolumeField, dir: &Path) -> Result<SampleManifest> {
    field.require_kind(FieldKind::DensityChange)?;
    let field = quantize_volume(field)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut fields = BTreeMap::new();
    fields.insert(DENSITY.to_string(), volume_entry(dir, DENSITY, &field)?);
    let manifest = SampleManifest {
        format_version: FORMAT_VERSION,
        id: id.to_string(),
        time_step: None,
        seed: None,
        geostats: None,
        grid: GridSpec::from_grid(field.grid()),
        sensors: None,
        fields,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Read the `density` volume of a prediction or sample directory onto `grid`.
///
/// The recorded dims, cell sizes and origin must match `grid`; the recorded
/// mask is ignored so predictions need not carry the reservoir mask.
pub fn read_prediction(dir: &Path, grid: &Arc<ReservoirGrid>) -> Result<VolumeField> {
    let manifest = read_manifest(dir)?;
    let spec = &manifest.grid;
    if spec.dims != grid.dims() || spec.cell_size != grid.cell_size() || spec.origin != grid.origin() {
        return Err(Error::GridMismatch(format!(
            "prediction {} is on a {:?} grid, expected {:?}",
            manifest.id,
            spec.dims,
            grid.dims()
        )));
    }
    let field = read_volume_entry(dir, entry(&manifest, DENSITY)?, grid)?;
    field.require_kind(FieldKind::DensityChange)?;
    Ok(field)
}

/// Train/validation/test assignment plus five cross-validation folds, as
/// indices into the sample list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Test indices of each fold.
    pub folds: Vec<Vec<usize>>,
}

pub const N_FOLDS: usize = 5;
pub const MIN_SPLIT_SAMPLES: usize = 20;

/// Deterministic shuffled split: `n/10` test, `max(1, ⌊0.05·(n − test)⌋)` of the rest
/// as validation, and five contiguous folds of the same shuffled order.
pub fn make_splits(n: usize, seed: u64) -> Result<Splits> {
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_SPLIT_SAMPLES} samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = n / 10;
    let n_val = ((n - n_test) / 20).max(1);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let test = sorted(&order[..n_test]);
    let val = sorted(&order[n_test..n_test + n_val]);
    let train = sorted(&order[n_test + n_val..]);
    let mut folds = Vec::with_capacity(N_FOLDS);
    let mut start = 0;
    for f in 0..N_FOLDS {
        let len = n / N_FOLDS + usize::from(f < n % N_FOLDS);
        folds.push(sorted(&order[start..start + len]));
        start += len;
    }
    Ok(Splits {
        seed,
        train,
        val,
        test,
        folds,
    })
}

impl Splits {
    /// Training indices of fold `f`: every sample outside its test set.
    pub fn fold_train(&self, f: usize) -> Vec<usize> {
        let n = self.train.len() + self.val.len() + self.test.len();
        let test = &self.folds[f];
        (0..n).filter(|i| test.binary_search(i).is_err()).collect()
    }
}

/// Ten consecutive normalized maps and the density change at the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub ids: Vec<String>,
    pub time_steps: Vec<f64>,
    pub maps: Vec<GravityMap>,
    pub target: VolumeField,
}

/// Sliding windows of [`SEQUENCE_LEN`] records, one per end index `i ≥ 9`.
pub fn build_sequences(records: &[SampleRecord]) -> Result<Vec<SequenceSample>> {
    if records.len() < SEQUENCE_LEN {
        return Err(Error::InvalidParameter(format!(
            "need at least {SEQUENCE_LEN} records for a sequence, got {}",
            records.len()
        )));
    }
    if let Some(w) = records.windows(2).position(|w| !(w[0].time_step < w[1].time_step)) {
        return Err(Error::InvalidParameter(format!(
            "time steps must increase strictly (records {w} and {})",
            w + 1
        )));
    }
    Ok(records
        .windows(SEQUENCE_LEN)
        .map(|w| SequenceSample {
            ids: w.iter().map(|r| r.id.clone()).collect(),
            time_steps: w.iter().map(|r| r.time_step).collect(),
            maps: w.iter().map(|r| r.gravity_norm.clone()).collect(),
            target: w[SEQUENCE_LEN - 1].density_change.clone(),
        })
        .collect())
}

/// Window index written next to a sequence dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub ids: Vec<String>,
    pub time_steps: Vec<f64>,
    pub target: String,
}

impl From<&SequenceSample> for SequenceEntry {
    fn from(s: &SequenceSample) -> Self {
        Self {
            ids: s.ids.clone(),
            time_steps: s.time_steps.clone(),
            target: s.ids[SEQUENCE_LEN - 1].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub path: String,
    pub time_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub file: String,
    /// `[n_stations, n_cells]`, station-major, cells x-fastest.
    pub shape: [usize; 2],
    pub units: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the generating configuration.
    pub config_hash: String,
    pub format_version: u32,
    pub tool_version: String,
}

impl Reproducibility {
    pub fn new<T: Serialize>(seed: u64, config: &T) -> Self {
        let bytes = serde_json::to_vec(config).expect("configuration serializes");
        Self {
            seed,
            config_hash: sha256_hex(&bytes),
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Dataset-level index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid: GridSpec,
    pub sensors: SensorSpec,
    pub scenario: InjectionScenario,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
    /// Frozen over the training split, or over all samples when unsplit.
    pub class_weights: ClassWeights,
    /// Background and foreground cell counts behind `class_weights`.
    pub class_counts: [u64; 2],
    pub normalization: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelEntry>,
    pub reproducibility: Reproducibility,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let m: DatasetManifest = read_json(&root.join(MANIFEST_FILE))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion(m.format_version));
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }

    pub fn build_grid(&self) -> Result<Arc<ReservoirGrid>> {
        Ok(Arc::new(self.grid.to_grid()?))
    }

    pub fn build_sensors(&self) -> Result<Arc<SensorGrid>> {
        Ok(Arc::new(self.sensors.to_sensors()?))
    }

    pub fn sample_dir(&self, root: &Path, index: usize) -> PathBuf {
        root.join(&self.samples[index].path)
    }

    /// Dense kernel as exported next to the manifest.
    pub fn read_kernel(&self, root: &Path) -> Result<Option<Vec<f64>>> {
        self.kernel
            .as_ref()
            .map(|k| read_f32(&root.join(&k.file), k.shape[0] * k.shape[1], Some(&k.sha256)))
            .transpose()
    }
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub site: SiteConfig,
    pub geostats: GeoStatsParams,
    /// Defaults to [`InjectionScenario::default_for`] the site grid.
    pub scenario: Option<InjectionScenario>,
    pub n_samples: usize,
    pub seed: u64,
    pub export_kernel: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            site: SiteConfig::default(),
            geostats: GeoStatsParams::default(),
            scenario: None,
            n_samples: 500,
            seed: 0,
            export_kernel: false,
        }
    }
}

/// Grid, sensors, operator and scenario shared by every sample of a run.
pub struct Workbench {
    pub grid: Arc<ReservoirGrid>,
    pub sensors: Arc<SensorGrid>,
    pub op: ForwardOperator,
    pub scenario: InjectionScenario,
}

impl Workbench {
    pub fn new(site: &SiteConfig, scenario: Option<&InjectionScenario>, exec: Exec) -> Result<Self> {
        let grid = Arc::new(site.build_grid()?);
        let sensors = Arc::new(site.build_sensors()?);
        let op = ForwardOperator::new(grid.clone(), sensors.clone(), KernelMode::DenseMatrix)?
            .with_exec(exec);
        let scenario = match scenario {
            Some(s) => s.clone(),
            None => InjectionScenario::default_for(&grid)?,
        };
        scenario.validate(&grid)?;
        Ok(Self {
            grid,
            sensors,
            op,
            scenario,
        })
    }

    /// Simulate one geology at one time and package it as a record.
    pub fn synthesize(
        &self,
        id: impl Into<String>,
        geostats: &GeoStatsParams,
        geology_seed: u64,
        t: f64,
    ) -> Result<SampleRecord> {
        let geology = geo::realize_geology(&self.grid, geostats, geology_seed)?;
        self.record_at(id, geostats, geology_seed, &geology, t)
    }

    fn record_at(
        &self,
        id: impl Into<String>,
        geostats: &GeoStatsParams,
        geology_seed: u64,
        geology: &geo::Geology,
        t: f64,
    ) -> Result<SampleRecord> {
        let saturation = geo::simulate_plume(&geology.porosity, &geology.logperm, &self.scenario, t)?;
        let density = geo::density_change(&geology.porosity, &saturation, &self.scenario)?;
        SampleRecord::from_truth(id, t, geology_seed, geostats.clone(), &self.op, &density, &saturation)
    }

    /// Snapshots of one geology at the given increasing times.
    pub fn time_series(
        &self,
        geostats: &GeoStatsParams,
        geology_seed: u64,
        times: &[f64],
        exec: Exec,
    ) -> Result<Vec<SampleRecord>> {
        let geology = geo::realize_geology(&self.grid, geostats, geology_seed)?;
        exec.map_range(times.len(), |i| {
            self.record_at(sample_id(i), geostats, geology_seed, &geology, times[i])
        })
        .into_iter()
        .collect()
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Geology seed and snapshot time of sample `index`; independent of how
/// samples are scheduled.
pub fn sample_draw(seed: u64, index: usize, scenario: &InjectionScenario) -> (u64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let geology_seed = rng.next_u64();
    let t = geo::sample_time_step(index, scenario, &mut rng);
    (geology_seed, t)
}

/// Background/foreground cell counts over the given records.
pub fn class_counts<'a>(masks: impl IntoIterator<Item = &'a VolumeField>) -> [u64; 2] {
    let mut counts = [0u64; 2];
    for m in masks {
        for v in m.values() {
            counts[(*v == 1.0) as usize] += 1;
        }
    }
    counts
}

/// Write `records` under `root/samples/` plus a dataset manifest with splits
/// (when there are enough samples), frozen class weights and optionally the
/// dense kernel.
pub fn write_dataset(
    root: &Path,
    bench: &Workbench,
    records: &[SampleRecord],
    reproducibility: Reproducibility,
    split_seed: u64,
    export_kernel: bool,
    exec: Exec,
) -> Result<DatasetManifest> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no samples to write".into()));
    }
    fs::create_dir_all(root.join(SAMPLES_DIR)).map_err(|e| Error::io(root, e))?;
    let written: Vec<Result<SampleManifest>> = exec.map_range(records.len(), |i| {
        write_sample(&records[i], &root.join(SAMPLES_DIR).join(&records[i].id))
    });
    for w in written {
        w?;
    }
    let splits = (records.len() >= MIN_SPLIT_SAMPLES)
        .then(|| make_splits(records.len(), split_seed))
        .transpose()?;
    let counts = match &splits {
        Some(s) => class_counts(s.train.iter().map(|&i| &records[i].plume_mask)),
        None => class_counts(records.iter().map(|r| &r.plume_mask)),
    };
    let kernel = if export_kernel {
        let sha256 = write_f32(&root.join(KERNEL_FILE), &bench.op.dense_matrix())?;
        Some(KernelEntry {
            file: KERNEL_FILE.to_string(),
            shape: [bench.op.n_stations(), bench.op.n_cells()],
            units: "uGal/(kg/m^3)".to_string(),
            sha256,
        })
    } else {
        None
    };
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        grid: GridSpec::from_grid(&bench.grid),
        sensors: SensorSpec::from_sensors(&bench.sensors),
        scenario: bench.scenario.clone(),
        samples: records
            .iter()
            .map(|r| SampleEntry {
                id: r.id.clone(),
                path: format!("{SAMPLES_DIR}/{}", r.id),
                time_step: r.time_step,
            })
            .collect(),
        splits,
        class_weights: class_weights(counts[0], counts[1])?,
        class_counts: counts,
        normalization: NORMALIZATION.to_string(),
        kernel,
        reproducibility,
    };
    manifest.save(root)?;
    Ok(manifest)
}

/// Generate `cfg.n_samples` records and write them as a dataset at `root`.
pub fn generate_dataset(cfg: &GenerateConfig, root: &Path, exec: Exec) -> Result<DatasetManifest> {
    cfg.geostats.validate()?;
    let bench = Workbench::new(&cfg.site, cfg.scenario.as_ref(), exec)?;
    let records: Vec<SampleRecord> = exec
        .map_range(cfg.n_samples, |i| {
            let (geology_seed, t) = sample_draw(cfg.seed, i, &bench.scenario);
            bench.synthesize(sample_id(i), &cfg.geostats, geology_seed, t)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    write_dataset(
        root,
        &bench,
        &records,
        Reproducibility::new(cfg.seed, cfg),
        cfg.seed,
        cfg.export_kernel,
        exec,
    )
}

/// All records of a dataset, in manifest order.
pub fn read_dataset(root: &Path, exec: Exec) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let manifest = DatasetManifest::load(root)?;
    let grid = manifest.build_grid()?;
    let sensors = manifest.build_sensors()?;
    let records = exec
        .map_range(manifest.samples.len(), |i| {
            read_sample_with(&manifest.sample_dir(root, i), &grid, &sensors)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sensors(m: usize) -> Arc<SensorGrid> {
        Arc::new(SensorGrid::uniform(100.0, m, m, [0.0, 0.0], 0.0).unwrap())
    }

    fn small_record(seed: u64) -> SampleRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..64).map(|_| rng.random::<f64>() < 0.7).collect();
        let grid = Arc::new(
            ReservoirGrid::new([4, 4, 4], [100.0, 100.0, 50.0], [0.0, 0.0, 500.0])
                .unwrap()
                .with_mask(mask)
                .unwrap(),
        );
        let op = ForwardOperator::new(grid.clone(), sensors(3), KernelMode::OnTheFly).unwrap();
        let sat: Vec<f64> = (0..64)
            .map(|i| if grid.in_mask(i) { rng.random::<f64>() * 0.8 } else { 0.0 })
            .collect();
        let sat = VolumeField::new(grid.clone(), FieldKind::Saturation, sat).unwrap();
        let dens: Vec<f64> = sat.values().iter().map(|s| -82.5 * s).collect();
        let dens = VolumeField::new(grid, FieldKind::DensityChange, dens).unwrap();
        SampleRecord::from_truth("a", 3.5, seed, GeoStatsParams::default(), &op, &dens, &sat).unwrap()
    }

    #[test]
    fn zscore_examples() {
        let s = Arc::new(SensorGrid::uniform(100.0, 2, 1, [0.0, 0.0], 0.0).unwrap());
        let z = zscore(&GravityMap::new(s.clone(), vec![0.0, 2.0], false).unwrap()).unwrap();
        assert_eq!(z.values(), &[-1.0, 1.0]);
        assert!(z.is_normalized());
        let c = GravityMap::new(s, vec![3.0, 3.0], false).unwrap();
        assert!(matches!(zscore(&c), Err(Error::DegenerateNormalization(_))));
    }

    #[test]
    fn grid_spec_round_trip() {
        let rec = small_record(3);
        let spec = GridSpec::from_grid(rec.grid());
        assert_eq!(spec.mask_runs.iter().sum::<usize>(), 64);
        assert_eq!(&spec.to_grid().unwrap(), rec.grid().as_ref());
        let full = ReservoirGrid::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(GridSpec::from_grid(&full).mask_runs, vec![0, 8]);
        let mut bad = spec.clone();
        bad.mask_runs.push(1);
        assert!(bad.to_grid().is_err());
    }

    #[test]
    fn sample_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let rec = small_record(11);
        write_sample(&rec, dir.path()).unwrap();
        let back = read_sample(dir.path()).unwrap();
        assert_eq!(back, rec);

        let path = dir.path().join("density.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[17] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(dir.path()), Err(Error::Checksum { .. })));

        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(dir.path()), Err(Error::Truncated { .. })));
    }

    #[test]
    fn dimension_error_for_short_payload() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Arc::new(ReservoirGrid::new([8, 8, 8], [1.0; 3], [0.0, 0.0, 10.0]).unwrap());
        let f = VolumeField::zeros(grid.clone(), FieldKind::DensityChange);
        write_prediction("p", &f, dir.path()).unwrap();
        write_f32(&dir.path().join("density.f32"), &vec![0.0; 343]).unwrap();
        assert!(matches!(
            read_prediction(dir.path(), &grid),
            Err(Error::PayloadDimension { expected: 512, actual: 343, .. })
        ));
    }

    #[test]
    fn prediction_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = small_record(5);
        write_prediction("p", &rec.density_change, dir.path()).unwrap();
        let back = read_prediction(dir.path(), rec.grid()).unwrap();
        assert_eq!(back, rec.density_change);
        let other = Arc::new(ReservoirGrid::new([4, 4, 5], [100.0, 100.0, 50.0], [0.0, 0.0, 500.0]).unwrap());
        assert!(read_prediction(dir.path(), &other).is_err());
    }

    #[test]
    fn unquantized_record_rejected() {
        let mut rec = small_record(2);
        let mut v = rec.gravity_raw.values().to_vec();
        v[0] += 1e-12;
        rec.gravity_raw = GravityMap::new(rec.sensors().clone(), v, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_sample(&rec, dir.path()).is_err());
    }

    #[test]
    fn split_examples() {
        let s = make_splits(500, 7).unwrap();
        assert_eq!(s.test.len(), 50);
        assert_eq!(s.train.len() + s.val.len(), 450);
        assert_eq!(s.val.len(), 22);
        assert_eq!(s.folds.len(), 5);
        assert!(s.folds.iter().all(|f| f.len() == 100));
        assert_eq!(s, make_splits(500, 7).unwrap());
        assert_ne!(s, make_splits(500, 8).unwrap());
        assert_eq!(s.fold_train(0).len(), 400);
        assert!(make_splits(19, 0).is_err());
        let small = make_splits(20, 0).unwrap();
        assert_eq!((small.train.len(), small.val.len(), small.test.len()), (17, 1, 2));
    }

    fn series(n: usize) -> Vec<SampleRecord> {
        let base = small_record(1);
        (0..n)
            .map(|i| {
                let mut r = base.clone();
                r.id = sample_id(i);
                r.time_step = i as f64 + 1.0;
                r
            })
            .collect()
    }

    #[test]
    fn sequence_examples() {
        assert_eq!(build_sequences(&series(10)).unwrap().len(), 1);
        let seqs = build_sequences(&series(12)).unwrap();
        assert_eq!(seqs.len(), 3);
        let targets: Vec<&str> = seqs.iter().map(|s| s.ids[9].as_str()).collect();
        assert_eq!(targets, ["s00009", "s00010", "s00011"]);
        for w in seqs.windows(2) {
            assert_eq!(w[0].ids[1..], w[1].ids[..9]);
        }
        assert!(seqs.iter().all(|s| s.maps.len() == 10));
        assert!(build_sequences(&series(9)).is_err());
        let mut bad = series(11);
        bad[4].time_step = bad[3].time_step;
        assert!(build_sequences(&bad).is_err());
    }

    #[test]
    fn sample_draws_are_stable() {
        let grid = SiteConfig::default().build_grid().unwrap();
        let sc = InjectionScenario::default_for(&grid).unwrap();
        assert_eq!(sample_draw(4, 17, &sc), sample_draw(4, 17, &sc));
        assert_ne!(sample_draw(4, 17, &sc).0, sample_draw(4, 18, &sc).0);
        let (_, t) = sample_draw(4, 3, &sc);
        assert!(t > 0.0 && t <= sc.injection_years);
    }

    #[test]
    fn class_counts_tally() {
        let rec = small_record(9);
        let [bg, fg] = class_counts([&rec.plume_mask]);
        assert_eq!(bg + fg, 64);
        assert_eq!(fg as usize, rec.plume_mask.values().iter().filter(|v| **v == 1.0).count());
    }
}
