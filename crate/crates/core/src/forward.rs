//! Vertical surface gravity of a density-change volume.
//!
//! Each cell acts as a point mass `Δρ·V` at its center, so station `s` sees
//!
//! ```text
//! g_z(s) = κ · γ · V · Σ_c Δρ_c · (z_c − z_s) / |r_c − r_s|³
//! ```
//!
//! with `κ = 1e8` converting m/s² to µGal. With `z` positive downward a
//! negative density change below a station gives a negative `g_z`.
//!
//! Summation order is fixed: forward sums cells in flat-index order for each
//! station, the adjoint sums stations in index order for each cell. Parallel
//! execution distributes whole stations (forward) or whole cells (adjoint)
//! across workers, so results do not depend on the execution policy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, GravityMap, ReservoirGrid, SensorGrid, VolumeField};
use crate::par::Exec;

/// Newton's gravitational constant, m³·kg⁻¹·s⁻².
pub const GAMMA: f64 = 6.6738480e-11;

/// µGal per m/s².
pub const MICROGAL_PER_MPS2: f64 = 1e8;

/// Whether kernel coefficients are recomputed on each application or cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    OnTheFly,
    /// Stores all `stations × cells` coefficients, station-major.
    DenseMatrix,
}

/// Linear map from a density-change volume (kg/m³) to station gravity (µGal).
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    grid: Arc<ReservoirGrid>,
    sensors: Arc<SensorGrid>,
    gamma: f64,
    unit_scale: f64,
    mode: KernelMode,
    exec: Exec,
    dense: Option<Arc<Vec<f64>>>,
}

impl ForwardOperator {
    pub fn new(grid: Arc<ReservoirGrid>, sensors: Arc<SensorGrid>, mode: KernelMode) -> Result<Self> {
        check_geometry(&grid, &sensors)?;
        let mut op = Self {
            grid,
            sensors,
            gamma: GAMMA,
            unit_scale: MICROGAL_PER_MPS2,
            mode,
            exec: Exec::default(),
            dense: None,
        };
        if mode == KernelMode::DenseMatrix {
            op.dense = Some(Arc::new(op.assemble()));
        }
        Ok(op)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn grid(&self) -> &Arc<ReservoirGrid> {
        &self.grid
    }

    pub fn sensors(&self) -> &Arc<SensorGrid> {
        &self.sensors
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn n_stations(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    /// Number of stored coefficients (zero in on-the-fly mode).
    pub fn stored_coefficients(&self) -> usize {
        self.dense.as_ref().map_or(0, |d| d.len())
    }

    #[inline]
    fn scale(&self) -> f64 {
        self.unit_scale * self.gamma * self.grid.cell_volume()
    }

    /// µGal at `station` per kg/m³ in `cell`.
    #[inline]
    pub fn coefficient(&self, station: usize, cell: usize) -> f64 {
        if let Some(d) = &self.dense {
            return d[station * self.grid.len() + cell];
        }
        self.compute_coefficient(station, cell)
    }

    #[inline]
    fn compute_coefficient(&self, station: usize, cell: usize) -> f64 {
        let s = self.sensors.stations()[station];
        let c = self.grid.center_of(cell);
        let (dx, dy, dz) = (c[0] - s[0], c[1] - s[1], c[2] - s[2]);
        let r2 = dx * dx + dy * dy + dz * dz;
        self.scale() * dz / (r2 * r2.sqrt())
    }

    fn assemble(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut m = vec![0.0; self.sensors.len() * n];
        self.exec
            .fill(&mut m, |flat| self.compute_coefficient(flat / n, flat % n));
        m
    }

    /// Row `station` of the kernel matrix.
    pub fn kernel_row(&self, station: usize) -> Vec<f64> {
        (0..self.grid.len())
            .map(|c| self.coefficient(station, c))
            .collect()
    }

    /// The full `stations × cells` kernel, station-major.
    pub fn dense_matrix(&self) -> Vec<f64> {
        match &self.dense {
            Some(d) => d.as_ref().clone(),
            None => self.assemble(),
        }
    }

    /// Gravity at every station for cell values `x` (length = cells).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.grid.len());
        let n = self.grid.len();
        match &self.dense {
            Some(d) => self.exec.map_range(self.sensors.len(), |s| {
                let row = &d[s * n..(s + 1) * n];
                row.iter().zip(x).fold(0.0, |acc, (a, v)| acc + a * v)
            }),
            None => self.exec.map_range(self.sensors.len(), |s| {
                let mut acc = 0.0;
                for (c, v) in x.iter().enumerate() {
                    if *v != 0.0 {
                        acc += self.compute_coefficient(s, c) * v;
                    }
                }
                acc
            }),
        }
    }

    /// Transpose of [`apply`](Self::apply): one value per cell.
    pub fn apply_adjoint(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.sensors.len());
        self.exec.map_range(self.grid.len(), |c| {
            r.iter()
                .enumerate()
                .fold(0.0, |acc, (s, v)| acc + self.coefficient(s, c) * v)
        })
    }

    /// Gravity of a model that is zero outside `cols`, given its values on `cols`.
    pub fn apply_subset(&self, cols: &[usize], x: &[f64]) -> Vec<f64> {
        assert_eq!(cols.len(), x.len());
        self.exec.map_range(self.sensors.len(), |s| {
            cols.iter()
                .zip(x)
                .fold(0.0, |acc, (c, v)| acc + self.coefficient(s, *c) * v)
        })
    }

    /// Adjoint restricted to the cells in `cols`.
    pub fn apply_adjoint_subset(&self, cols: &[usize], r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.sensors.len());
        self.exec.map_range(cols.len(), |i| {
            let c = cols[i];
            r.iter()
                .enumerate()
                .fold(0.0, |acc, (s, v)| acc + self.coefficient(s, c) * v)
        })
    }

    /// Raw vertical gravity (µGal) of a density-change volume.
    pub fn forward(&self, density: &VolumeField) -> Result<GravityMap> {
        self.check_volume(density)?;
        density.require_kind(FieldKind::DensityChange)?;
        GravityMap::new(self.sensors.clone(), self.apply(density.values()), false)
    }

    /// Transpose of [`forward`](Self::forward) applied to a station residual.
    pub fn adjoint(&self, residual: &GravityMap) -> Result<VolumeField> {
        self.check_map(residual)?;
        VolumeField::new(
            self.grid.clone(),
            FieldKind::DensityChange,
            self.apply_adjoint(residual.values()),
        )
    }

    /// Operator over the stations kept when thinning to `spacing` meters.
    pub fn subsample_sensors(&self, spacing: f64) -> Result<ForwardOperator> {
        let base = self.sensors.spacing();
        let ratio = spacing / base;
        let factor = ratio.round();
        if !(factor >= 1.0) || (ratio - factor).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidSensors(format!(
                "spacing {spacing} m is not a positive integer multiple of the base spacing {base} m"
            )));
        }
        let factor = factor as usize;
        let sensors = Arc::new(self.sensors.decimate(factor)?);
        let dense = self.dense.as_ref().map(|d| {
            let n = self.grid.len();
            let (m1, m2) = sensors.counts();
            let mut out = Vec::with_capacity(m1 * m2 * n);
            for b in 0..m2 {
                for a in 0..m1 {
                    let s = self.sensors.index(a * factor, b * factor);
                    out.extend_from_slice(&d[s * n..(s + 1) * n]);
                }
            }
            Arc::new(out)
        });
        Ok(ForwardOperator {
            grid: self.grid.clone(),
            sensors,
            gamma: self.gamma,
            unit_scale: self.unit_scale,
            mode: self.mode,
            exec: self.exec,
            dense,
        })
    }

    pub(crate) fn check_volume(&self, v: &VolumeField) -> Result<()> {
        if !Arc::ptr_eq(v.grid(), &self.grid) && !v.grid().same_geometry(&self.grid) {
            return Err(Error::GridMismatch(format!(
                "volume grid {:?} differs from operator grid {:?}",
                v.grid().dims(),
                self.grid.dims()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_map(&self, g: &GravityMap) -> Result<()> {
        if !Arc::ptr_eq(g.sensors(), &self.sensors) && **g.sensors() != *self.sensors {
            return Err(Error::InvalidSensors(format!(
                "map has {} stations on a different layout than the operator's {}",
                g.values().len(),
                self.sensors.len()
            )));
        }
        Ok(())
    }
}

/// Rejects layouts where a station sits (within `dz/10`) on a cell center.
fn check_geometry(grid: &ReservoirGrid, sensors: &SensorGrid) -> Result<()> {
    let dims = grid.dims();
    let d = grid.cell_size();
    let o = grid.origin();
    for (s, p) in sensors.stations().iter().enumerate() {
        // the nearest cell center decomposes per axis
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - o[a]) / d[a] - 0.5).round();
            ijk[a] = u.clamp(0.0, (dims[a] - 1) as f64) as usize;
        }
        let c = grid.center_unchecked(ijk[0], ijk[1], ijk[2]);
        let dist = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt();
        if dist < d[2] / 10.0 {
            return Err(Error::SingularGeometry {
                station: s,
                cell: grid.index(ijk[0], ijk[1], ijk[2]),
                distance: dist,
            });
        }
    }
    Ok(())
}
