//! Reservoir voxel grids, scalar fields on them, and seabed sensor layouts.
//!
//! Conventions shared by every module:
//!
//! - `z` is positive downward from the sea surface; sensors sit at `z = 0`
//!   (or a configured seabed depth) above the reservoir.
//! - Fields are cell-centered and stored x-fastest, then y, then z.
//! - Station lists are stored x-fastest, then y.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular voxel grid with a reservoir mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
    origin: [f64; 3],
    mask: Vec<bool>,
}

impl ReservoirGrid {
    /// Grid whose mask covers every cell.
    pub fn new(dims: [usize; 3], cell: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let [nx, ny, nz] = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if !cell.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell sizes must be positive, got {cell:?}"
            )));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if origin[2] < 0.0 {
            return Err(Error::InvalidGrid(format!(
                "origin depth must be >= 0 (reservoir below the sensor plane), got {}",
                origin[2]
            )));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            dx: cell[0],
            dy: cell[1],
            dz: cell[2],
            origin,
            mask: vec![true; nx * ny * nz],
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::InvalidGrid(format!(
                "mask has {} entries, grid has {} cells",
                mask.len(),
                self.len()
            )));
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn in_mask(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Far corner of the grid, `origin + n·d` per axis.
    pub fn upper_corner(&self) -> [f64; 3] {
        [
            self.origin[0] + self.nx as f64 * self.dx,
            self.origin[1] + self.ny as f64 * self.dy,
            self.origin[2] + self.nz as f64 * self.dz,
        ]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    pub fn checked_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        if i >= self.nx || j >= self.ny || k >= self.nz {
            return Err(Error::OutOfBounds {
                i,
                j,
                k,
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            });
        }
        Ok(self.index(i, j, k))
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    /// Center of cell `(i, j, k)` in meters.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Result<[f64; 3]> {
        self.checked_index(i, j, k)?;
        Ok(self.center_unchecked(i, j, k))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dy,
            self.origin[2] + (k as f64 + 0.5) * self.dz,
        ]
    }

    /// Center of the cell at flat index `idx`.
    #[inline]
    pub fn center_of(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.ijk(idx);
        self.center_unchecked(i, j, k)
    }

    /// Same dimensions, spacing, origin and mask.
    pub fn same_geometry(&self, other: &ReservoirGrid) -> bool {
        self == other
    }

    /// Indices of the masked cells, ascending.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }
}

/// What a [`VolumeField`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    DensityChange,
    Saturation,
    Porosity,
    PermeabilityLog,
    BinaryMask,
    /// Dimensionless standard-normal scores (unconditioned Gaussian fields).
    StandardNormal,
}

impl FieldKind {
    pub fn units(self) -> &'static str {
        match self {
            FieldKind::DensityChange => "kg/m^3",
            FieldKind::Saturation | FieldKind::Porosity => "fraction",
            FieldKind::PermeabilityLog => "log10(mD)",
            FieldKind::BinaryMask | FieldKind::StandardNormal => "1",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::DensityChange => "density_change",
            FieldKind::Saturation => "saturation",
            FieldKind::Porosity => "porosity",
            FieldKind::PermeabilityLog => "permeability_log",
            FieldKind::BinaryMask => "binary_mask",
            FieldKind::StandardNormal => "standard_normal",
        }
    }
}

impl std::fmt::Display for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const POROSITY_BOUNDS: (f64, f64) = (0.10, 0.40);

/// One scalar per cell of a [`ReservoirGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeField {
    grid: Arc<ReservoirGrid>,
    kind: FieldKind,
    values: Vec<f64>,
}

impl VolumeField {
    pub fn new(grid: Arc<ReservoirGrid>, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} field at cell {pos}")));
        }
        let out_of_range = |lo: f64, hi: f64| values.iter().position(|v| *v < lo || *v > hi);
        let bad = match kind {
            FieldKind::Saturation => out_of_range(0.0, 1.0),
            FieldKind::Porosity => out_of_range(POROSITY_BOUNDS.0, POROSITY_BOUNDS.1),
            FieldKind::BinaryMask => values.iter().position(|v| *v != 0.0 && *v != 1.0),
            FieldKind::DensityChange | FieldKind::PermeabilityLog | FieldKind::StandardNormal => {
                None
            }
        };
        if let Some(pos) = bad {
            return Err(Error::InvalidField(format!(
                "{kind} value {} at cell {pos} is outside its admissible range",
                values[pos]
            )));
        }
        Ok(Self { grid, kind, values })
    }

    pub fn zeros(grid: Arc<ReservoirGrid>, kind: FieldKind) -> Self {
        let n = grid.len();
        // zero is admissible for every kind except porosity
        debug_assert!(kind != FieldKind::Porosity);
        Self {
            grid,
            kind,
            values: vec![0.0; n],
        }
    }

    /// Binary mask of cells where `pred(value)` holds.
    pub fn mask_where(&self, pred: impl Fn(f64) -> bool) -> VolumeField {
        let values = self
            .values
            .iter()
            .map(|v| if pred(*v) { 1.0 } else { 0.0 })
            .collect();
        VolumeField {
            grid: self.grid.clone(),
            kind: FieldKind::BinaryMask,
            values,
        }
    }

    pub fn grid(&self) -> &Arc<ReservoirGrid> {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn require_kind(&self, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind.to_string(),
                actual: self.kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn require_same_grid(&self, other: &VolumeField) -> Result<()> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && !self.grid.same_geometry(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid.dims(),
                other.grid.dims()
            )));
        }
        Ok(())
    }
}

/// Resample `field` onto `target` by trilinear interpolation at target cell
/// centers. Sample positions beyond the outermost source cell centers are
/// clamped to the edge values. Binary masks are re-binarized at 0.5.
pub fn trilinear_resample(field: &VolumeField, target: Arc<ReservoirGrid>) -> Result<VolumeField> {
    let src = field.grid();
    let (lo_s, hi_s) = (src.origin(), src.upper_corner());
    let (lo_t, hi_t) = (target.origin(), target.upper_corner());
    for a in 0..3 {
        let tol = 1e-9 * (hi_s[a] - lo_s[a]).abs().max(1.0);
        if (lo_s[a] - lo_t[a]).abs() > tol || (hi_s[a] - hi_t[a]).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "resampling requires identical physical extents; axis {a}: [{}, {}] vs [{}, {}]",
                lo_s[a], hi_s[a], lo_t[a], hi_t[a]
            )));
        }
    }

    let [nx, ny, nz] = src.dims();
    let [dx, dy, dz] = src.cell_size();
    let axis = |p: f64, lo: f64, d: f64, n: usize| -> (usize, usize, f64) {
        let u = ((p - lo) / d - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (u.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, u - i0 as f64)
    };

    let vals = field.values();
    let mut out = Vec::with_capacity(target.len());
    for idx in 0..target.len() {
        let [x, y, z] = target.center_of(idx);
        let (i0, i1, tx) = axis(x, lo_s[0], dx, nx);
        let (j0, j1, ty) = axis(y, lo_s[1], dy, ny);
        let (k0, k1, tz) = axis(z, lo_s[2], dz, nz);
        let at = |i, j, k| vals[src.index(i, j, k)];
        let c00 = at(i0, j0, k0) * (1.0 - tx) + at(i1, j0, k0) * tx;
        let c10 = at(i0, j1, k0) * (1.0 - tx) + at(i1, j1, k0) * tx;
        let c01 = at(i0, j0, k1) * (1.0 - tx) + at(i1, j0, k1) * tx;
        let c11 = at(i0, j1, k1) * (1.0 - tx) + at(i1, j1, k1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        out.push(c0 * (1.0 - tz) + c1 * tz);
    }

    if field.kind() == FieldKind::BinaryMask {
        for v in &mut out {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    // Convex combinations can round a hair outside the bounds of range-checked kinds.
    match field.kind() {
        FieldKind::Saturation => out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0)),
        FieldKind::Porosity => out
            .iter_mut()
            .for_each(|v| *v = v.clamp(POROSITY_BOUNDS.0, POROSITY_BOUNDS.1)),
        _ => {}
    }
    VolumeField::new(target, field.kind(), out)
}

/// Station spacings used for the sensor-resolution study, in meters.
pub const STANDARD_SPACINGS: [f64; 6] = [100.0, 250.0, 500.0, 1000.0, 2000.0, 3000.0];

/// Planar grid of seabed gravity stations.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGrid {
    spacing: f64,
    m1: usize,
    m2: usize,
    stations: Vec<[f64; 3]>,
}

impl SensorGrid {
    /// `m1 × m2` stations at `origin + (a, b)·spacing`, all at depth `z`.
    pub fn uniform(spacing: f64, m1: usize, m2: usize, origin: [f64; 2], z: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidSensors(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if m1 == 0 || m2 == 0 {
            return Err(Error::InvalidSensors(format!(
                "station counts must be positive, got {m1}x{m2}"
            )));
        }
        if !(origin.iter().all(|o| o.is_finite()) && z.is_finite()) {
            return Err(Error::InvalidSensors("station origin must be finite".into()));
        }
        let mut stations = Vec::with_capacity(m1 * m2);
        for b in 0..m2 {
            for a in 0..m1 {
                stations.push([
                    origin[0] + a as f64 * spacing,
                    origin[1] + b as f64 * spacing,
                    z,
                ]);
            }
        }
        Ok(Self {
            spacing,
            m1,
            m2,
            stations,
        })
    }

    /// Stations every `spacing` meters across `[0, x_extent] × [0, y_extent]`
    /// (shifted by `origin`), both ends included when they fall on the lattice.
    pub fn covering(
        spacing: f64,
        x_extent: f64,
        y_extent: f64,
        origin: [f64; 2],
        z: f64,
    ) -> Result<Self> {
        if !(x_extent >= 0.0 && y_extent >= 0.0) {
            return Err(Error::InvalidSensors("extents must be non-negative".into()));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidSensors(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        let count = |extent: f64| (extent / spacing + 1e-9).floor() as usize + 1;
        Self::uniform(spacing, count(x_extent), count(y_extent), origin, z)
    }

    /// Keep every `factor`-th station along both axes, copying coordinates.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidSensors("decimation factor must be positive".into()));
        }
        let m1 = (self.m1 - 1) / factor + 1;
        let m2 = (self.m2 - 1) / factor + 1;
        let mut stations = Vec::with_capacity(m1 * m2);
        for b in 0..m2 {
            for a in 0..m1 {
                stations.push(self.stations[self.index(a * factor, b * factor)]);
            }
        }
        Ok(Self {
            spacing: self.spacing * factor as f64,
            m1,
            m2,
            stations,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[[f64; 3]] {
        &self.stations
    }

    pub fn origin(&self) -> [f64; 2] {
        [self.stations[0][0], self.stations[0][1]]
    }

    pub fn depth(&self) -> f64 {
        self.stations[0][2]
    }

    pub fn extents(&self) -> (f64, f64) {
        (
            (self.m1 - 1) as f64 * self.spacing,
            (self.m2 - 1) as f64 * self.spacing,
        )
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize) -> usize {
        a + self.m1 * b
    }
}

/// One vertical-gravity value per station, in µGal (raw) or z-score units.
#[derive(Debug, Clone, PartialEq)]
pub struct GravityMap {
    sensors: Arc<SensorGrid>,
    values: Vec<f64>,
    normalized: bool,
}

impl GravityMap {
    pub fn new(sensors: Arc<SensorGrid>, values: Vec<f64>, normalized: bool) -> Result<Self> {
        if values.len() != sensors.len() {
            return Err(Error::DimensionMismatch {
                expected: sensors.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gravity map".into()));
        }
        Ok(Self {
            sensors,
            values,
            normalized,
        })
    }

    pub fn zeros(sensors: Arc<SensorGrid>) -> Self {
        let n = sensors.len();
        Self {
            sensors,
            values: vec![0.0; n],
            normalized: false,
        }
    }

    pub fn sensors(&self) -> &Arc<SensorGrid> {
        &self.sensors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}
