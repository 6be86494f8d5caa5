//! Synthetic geology and CO₂ plumes.
//!
//! Porosity and log-permeability realizations are built from stationary
//! Gaussian random fields with a Gaussian covariance kernel, sampled by FFT
//! on a padded periodic domain. Plumes come from a parametric
//! vertical-equilibrium stand-in: an invasion-style greedy fill from the
//! injection well during injection, followed by upward relaxation sweeps
//! during migration. Saturation converts to bulk density change through
//! `Δρ = φ·ΔS·(ρ_CO₂ − ρ_brine)`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, ReservoirGrid, SensorGrid, VolumeField, POROSITY_BOUNDS};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Geostatistical controls for one geological realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoStatsParams {
    pub porosity_mean: f64,
    pub porosity_std: f64,
    pub porosity_bounds: (f64, f64),
    pub logperm_mean: f64,
    pub logperm_std: f64,
    pub logperm_bounds: (f64, f64),
    /// Mean of the correlation-length distribution, in cells.
    pub corr_length_mean: f64,
    pub corr_length_std: f64,
    /// Pointwise correlation between the porosity and log-permeability fields.
    pub poro_perm_corr: f64,
}

impl Default for GeoStatsParams {
    fn default() -> Self {
        Self {
            porosity_mean: 0.25,
            porosity_std: 0.03,
            porosity_bounds: POROSITY_BOUNDS,
            logperm_mean: 2.5,
            logperm_std: 2.0,
            logperm_bounds: (-5.0, 10.0),
            corr_length_mean: 26.0,
            corr_length_std: 2.0,
            poro_perm_corr: 0.30,
        }
    }
}

impl GeoStatsParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        let (plo, phi) = self.porosity_bounds;
        let (llo, lhi) = self.logperm_bounds;
        if !(plo < phi) || !(llo < lhi) {
            return bad("bounds must be ordered (lower < upper)");
        }
        if plo < POROSITY_BOUNDS.0 || phi > POROSITY_BOUNDS.1 {
            return bad("porosity bounds must lie within [0.10, 0.40]");
        }
        if !(self.porosity_std > 0.0 && self.logperm_std > 0.0 && self.corr_length_std >= 0.0) {
            return bad("standard deviations must be positive");
        }
        if !(self.corr_length_mean > 0.0) {
            return bad("correlation length mean must be positive");
        }
        if !(self.poro_perm_corr.abs() <= 1.0) {
            return bad("porosity-permeability correlation must lie in [-1, 1]");
        }
        if !(self.porosity_mean.is_finite() && self.logperm_mean.is_finite()) {
            return bad("means must be finite");
        }
        Ok(())
    }
}

/// Injection and migration schedule plus fluid properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionScenario {
    /// Injection rate in m³/day of CO₂ at reservoir conditions.
    pub rate: f64,
    pub injection_years: f64,
    pub migration_years: f64,
    pub well_cell: (usize, usize, usize),
    pub rho_co2: f64,
    pub rho_brine: f64,
    /// Saturation of a fully invaded cell.
    pub s_max: f64,
    /// Upward relaxation sweeps per year of migration.
    pub sweeps_per_year: f64,
}

impl InjectionScenario {
    /// Default schedule with the well at [`default_well_cell`].
    pub fn default_for(grid: &ReservoirGrid) -> Result<Self> {
        Ok(Self {
            rate: 14400.0,
            injection_years: 100.0,
            migration_years: 400.0,
            well_cell: default_well_cell(grid)?,
            rho_co2: 700.0,
            rho_brine: 1030.0,
            s_max: 0.8,
            sweeps_per_year: 0.1,
        })
    }

    pub fn total_years(&self) -> f64 {
        self.injection_years + self.migration_years
    }

    /// Cumulative injected volume (m³) after `t` years.
    pub fn injected_volume(&self, t: f64) -> f64 {
        self.rate * DAYS_PER_YEAR * t.min(self.injection_years).max(0.0)
    }

    pub fn validate(&self, grid: &ReservoirGrid) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.rate > 0.0) {
            return bad(format!("injection rate must be positive, got {}", self.rate));
        }
        if !(self.injection_years >= 0.0 && self.migration_years >= 0.0) {
            return bad("schedule years must be non-negative".into());
        }
        if !(self.s_max > 0.0 && self.s_max <= 1.0) {
            return bad(format!("s_max must lie in (0, 1], got {}", self.s_max));
        }
        if !(self.sweeps_per_year >= 0.0) {
            return bad("sweeps_per_year must be non-negative".into());
        }
        if !(self.rho_co2 > 0.0 && self.rho_brine > 0.0) {
            return bad("fluid densities must be positive".into());
        }
        let (i, j, k) = self.well_cell;
        let idx = grid.checked_index(i, j, k)?;
        if !grid.in_mask(idx) {
            return bad(format!("well cell {:?} is outside the reservoir mask", self.well_cell));
        }
        Ok(())
    }
}

/// The deepest masked cell of the masked column nearest the grid's center.
pub fn default_well_cell(grid: &ReservoirGrid) -> Result<(usize, usize, usize)> {
    let [nx, ny, nz] = grid.dims();
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let mut best: Option<(f64, (usize, usize, usize))> = None;
    for j in 0..ny {
        for i in 0..nx {
            let deepest = (0..nz).rev().find(|&k| grid.in_mask(grid.index(i, j, k)));
            if let Some(k) = deepest {
                let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
                if best.is_none_or(|(b, _)| d2 < b) {
                    best = Some((d2, (i, j, k)));
                }
            }
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::InvalidGrid("reservoir mask is empty".into()))
}

/// Dome-shaped reservoir layer: `thickness` cells below a top surface that
/// deepens quadratically by up to `relief` cells from the grid center to its corners.
pub fn dome_mask(dims: [usize; 3], thickness: usize, relief: f64) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut mask = vec![false; nx * ny * nz];
    let (hx, hy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    for j in 0..ny {
        for i in 0..nx {
            let rx = (i as f64 + 0.5 - hx) / hx;
            let ry = (j as f64 + 0.5 - hy) / hy;
            let top = (relief * (rx * rx + ry * ry) / 2.0).round() as usize;
            for k in top..(top + thickness).min(nz) {
                mask[i + nx * (j + ny * k)] = true;
            }
        }
    }
    mask
}

/// Desk-scale site: reservoir grid, station layout, geostatistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub dims: [usize; 3],
    pub cell_size: [f64; 3],
    pub origin: [f64; 3],
    pub reservoir_thickness: usize,
    pub dome_relief: f64,
    pub sensor_spacing: f64,
    pub sensor_depth: f64,
}

impl Default for SiteConfig {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            cell_size: [500.0, 500.0, 50.0],
            origin: [0.0, 0.0, 2200.0],
            reservoir_thickness: 6,
            dome_relief: 8.0,
            sensor_spacing: 500.0,
            sensor_depth: 0.0,
        }
    }
}

impl SiteConfig {
    pub fn build_grid(&self) -> Result<ReservoirGrid> {
        let mask = dome_mask(self.dims, self.reservoir_thickness, self.dome_relief);
        let grid = ReservoirGrid::new(self.dims, self.cell_size, self.origin)?.with_mask(mask)?;
        if grid.mask_count() == 0 {
            return Err(Error::InvalidGrid("reservoir mask is empty".into()));
        }
        Ok(grid)
    }

    /// Stations every `sensor_spacing` meters over the grid's horizontal footprint.
    pub fn build_sensors(&self) -> Result<SensorGrid> {
        let x_extent = self.dims[0] as f64 * self.cell_size[0];
        let y_extent = self.dims[1] as f64 * self.cell_size[1];
        SensorGrid::covering(
            self.sensor_spacing,
            x_extent,
            y_extent,
            [self.origin[0], self.origin[1]],
            self.sensor_depth,
        )
    }
}

fn next_smooth(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .unwrap()
}

/// Eigenvalues of the periodic 1-D Gaussian covariance on a ring of `n` cells.
fn ring_spectrum(n: usize, corr_length: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|d| {
            let r = d.min(n - d) as f64;
            Complex::new((-r * r / (2.0 * corr_length * corr_length)).exp(), 0.0)
        })
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // symmetric kernel: imaginary parts vanish; tiny negative parts are aliasing noise
    buf.iter().map(|c| c.re.max(0.0)).collect()
}

/// FFT along one axis of a row-major `[n2][n1][n0]` complex volume.
fn fft_axis(
    data: &mut [Complex<f64>],
    shape: [usize; 3],
    axis: usize,
    inverse: bool,
    planner: &mut FftPlanner<f64>,
) {
    let n = shape[axis];
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    if axis == 0 {
        fft.process(data);
        return;
    }
    let stride = if axis == 1 { shape[0] } else { shape[0] * shape[1] };
    let mut line = vec![Complex::new(0.0, 0.0); n];
    let outer = data.len() / (n * stride);
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride];
            }
            fft.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                data[base + t * stride] = *v;
            }
        }
    }
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter_mut().for_each(|v| *v -= mean);
    let std = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if std > 1e-300 {
        values.iter_mut().for_each(|v| *v /= std);
    }
}

/// Two independent standardized Gaussian fields sharing one correlation length.
///
/// The real and imaginary parts of one complex spectral synthesis are
/// independent realizations of the same stationary process.
fn gaussian_pair(grid: &ReservoirGrid, corr_length: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(corr_length > 0.0 && corr_length.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "correlation length must be positive, got {corr_length}"
        )));
    }
    let dims = grid.dims();
    let pad = (3.0 * corr_length).ceil() as usize;
    let shape = dims.map(|n| next_smooth(n + pad));
    let total = shape[0] * shape[1] * shape[2];

    let mut planner = FftPlanner::new();
    let spectra = shape.map(|n| ring_spectrum(n, corr_length, &mut planner));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<Complex<f64>> = (0..total)
        .map(|_| {
            Complex::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
        .collect();

    for axis in 0..3 {
        fft_axis(&mut data, shape, axis, false, &mut planner);
    }
    for c in 0..shape[2] {
        for b in 0..shape[1] {
            let syz = spectra[1][b] * spectra[2][c];
            let row = (c * shape[1] + b) * shape[0];
            for a in 0..shape[0] {
                data[row + a] *= (spectra[0][a] * syz).sqrt();
            }
        }
    }
    for axis in 0..3 {
        fft_axis(&mut data, shape, axis, true, &mut planner);
    }

    let scale = 1.0 / total as f64;
    let mut re = Vec::with_capacity(grid.len());
    let mut im = Vec::with_capacity(grid.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let row = (k * shape[1] + j) * shape[0];
            for i in 0..dims[0] {
                let z = data[row + i] * scale;
                re.push(z.re);
                im.push(z.im);
            }
        }
    }
    standardize(&mut re);
    standardize(&mut im);
    Ok((re, im))
}

/// Stationary Gaussian random field with covariance `exp(−r²/(2ℓ²))`, `r` in cells.
///
/// Each realization is moment-matched to zero sample mean and unit sample
/// standard deviation over the grid. Deterministic for a fixed seed.
pub fn sample_gaussian_field(
    grid: &Arc<ReservoirGrid>,
    corr_length: f64,
    seed: u64,
) -> Result<VolumeField> {
    let (values, _) = gaussian_pair(grid, corr_length, seed)?;
    VolumeField::new(grid.clone(), FieldKind::StandardNormal, values)
}

/// Correlated porosity and log-permeability realization.
#[derive(Debug, Clone)]
pub struct Geology {
    pub porosity: VolumeField,
    pub logperm: VolumeField,
    /// Correlation length (cells) drawn for this realization.
    pub corr_length: f64,
}

/// Unclipped Gaussian scores behind a [`Geology`] realization.
#[derive(Debug, Clone)]
pub struct GeologyScores {
    pub porosity: Vec<f64>,
    pub logperm: Vec<f64>,
    pub corr_length: f64,
}

/// Porosity and log-permeability scores before bound clipping.
///
/// The second field is made sample-orthogonal to the first so every
/// realization carries the configured porosity–permeability correlation.
pub fn geology_scores(grid: &ReservoirGrid, params: &GeoStatsParams, seed: u64) -> Result<GeologyScores> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(params.corr_length_mean, params.corr_length_std)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let corr_length = normal.sample(&mut rng).max(1.0);
    let (z1, mut z2) = gaussian_pair(grid, corr_length, rng.next_u64())?;

    let n = z1.len() as f64;
    let proj = z1.iter().zip(&z2).map(|(a, b)| a * b).sum::<f64>() / n;
    z2.iter_mut().zip(&z1).for_each(|(b, a)| *b -= proj * a);
    standardize(&mut z2);

    let c = params.poro_perm_corr;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let porosity = z1
        .iter()
        .map(|a| params.porosity_mean + params.porosity_std * a)
        .collect();
    let logperm = z1
        .iter()
        .zip(&z2)
        .map(|(a, b)| params.logperm_mean + params.logperm_std * (c * a + s * b))
        .collect();
    Ok(GeologyScores {
        porosity,
        logperm,
        corr_length,
    })
}

/// Porosity `clip(μ_φ + σ_φ·Z₁)` and log-permeability
/// `clip(μ_k + σ_k·(c·Z₁ + √(1−c²)·Z₂))` on a shared, randomly drawn correlation length.
pub fn realize_geology(grid: &Arc<ReservoirGrid>, params: &GeoStatsParams, seed: u64) -> Result<Geology> {
    let scores = geology_scores(grid, params, seed)?;
    let (plo, phi) = params.porosity_bounds;
    let (llo, lhi) = params.logperm_bounds;
    let porosity = scores.porosity.into_iter().map(|v| v.clamp(plo, phi)).collect();
    let logperm = scores.logperm.into_iter().map(|v| v.clamp(llo, lhi)).collect();
    Ok(Geology {
        porosity: VolumeField::new(grid.clone(), FieldKind::Porosity, porosity)?,
        logperm: VolumeField::new(grid.clone(), FieldKind::PermeabilityLog, logperm)?,
        corr_length: scores.corr_length,
    })
}

/// Fill-order key: shallowest layer first, then highest log-permeability, then index.
#[derive(Debug, Clone, Copy)]
struct FillKey {
    k: usize,
    logperm: f64,
    idx: usize,
}

impl Ord for FillKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.k
            .cmp(&other.k)
            .then_with(|| other.logperm.total_cmp(&self.logperm))
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for FillKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for FillKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FillKey {}

fn face_neighbors(grid: &ReservoirGrid, idx: usize) -> impl Iterator<Item = usize> + '_ {
    let [nx, ny, nz] = grid.dims();
    let (i, j, k) = grid.ijk(idx);
    let cand = [
        (i > 0).then(|| grid.index(i - 1, j, k)),
        (i + 1 < nx).then(|| grid.index(i + 1, j, k)),
        (j > 0).then(|| grid.index(i, j - 1, k)),
        (j + 1 < ny).then(|| grid.index(i, j + 1, k)),
        (k > 0).then(|| grid.index(i, j, k - 1)),
        (k + 1 < nz).then(|| grid.index(i, j, k + 1)),
    ];
    cand.into_iter().flatten()
}

/// CO₂ saturation after `t` years under the greedy-fill / upward-relaxation model.
///
/// Total CO₂ volume `Σ φ·s·V` equals the injected volume at all times; the last
/// cell reached during the fill holds a fractional saturation.
pub fn simulate_plume(
    porosity: &VolumeField,
    logperm: &VolumeField,
    scenario: &InjectionScenario,
    t: f64,
) -> Result<VolumeField> {
    porosity.require_kind(FieldKind::Porosity)?;
    logperm.require_kind(FieldKind::PermeabilityLog)?;
    porosity.require_same_grid(logperm)?;
    let grid = porosity.grid().clone();
    scenario.validate(&grid)?;
    if !(t >= 0.0 && t <= scenario.total_years()) {
        return Err(Error::InvalidParameter(format!(
            "time {t} outside the simulated window [0, {}] years",
            scenario.total_years()
        )));
    }

    let phi = porosity.values();
    let lk = logperm.values();
    let cell_vol = grid.cell_volume();
    let capacity = |idx: usize| phi[idx] * scenario.s_max * cell_vol;

    let requested = scenario.injected_volume(t);
    let mut co2 = vec![0.0f64; grid.len()];

    if requested > 0.0 {
        let total_capacity: f64 = grid.masked_indices().into_iter().map(capacity).sum();
        if requested > total_capacity {
            return Err(Error::CapacityExceeded {
                requested,
                capacity: total_capacity,
            });
        }

        let (wi, wj, wk) = scenario.well_cell;
        let well = grid.index(wi, wj, wk);
        let key = |idx: usize| FillKey {
            k: grid.ijk(idx).2,
            logperm: lk[idx],
            idx,
        };
        let mut queued = vec![false; grid.len()];
        let mut frontier = BinaryHeap::new();
        frontier.push(Reverse(key(well)));
        queued[well] = true;

        let mut remaining = requested;
        let mut reached = 0.0;
        while remaining > 0.0 {
            let Some(Reverse(FillKey { idx, .. })) = frontier.pop() else {
                return Err(Error::CapacityExceeded {
                    requested,
                    capacity: reached,
                });
            };
            let cap = capacity(idx);
            reached += cap;
            let take = cap.min(remaining);
            co2[idx] = take;
            remaining -= take;
            for nb in face_neighbors(&grid, idx) {
                if grid.in_mask(nb) && !queued[nb] {
                    queued[nb] = true;
                    frontier.push(Reverse(key(nb)));
                }
            }
        }
    }

    if t > scenario.injection_years {
        let sweeps = (scenario.sweeps_per_year * (t - scenario.injection_years)).round() as usize;
        for _ in 0..sweeps {
            relax_upward(&grid, lk, &mut co2, capacity);
        }
    }

    let sat = co2
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            if *v > 0.0 {
                (v / (phi[idx] * cell_vol)).clamp(0.0, scenario.s_max)
            } else {
                0.0
            }
        })
        .collect();
    VolumeField::new(grid, FieldKind::Saturation, sat)
}

/// One migration sweep: every occupied cell pushes CO₂ into the most permeable
/// masked cell among the nine cells of the layer directly above it.
///
/// Cells are visited shallowest layer first, so a parcel rises at most one
/// layer per sweep.
fn relax_upward(
    grid: &ReservoirGrid,
    logperm: &[f64],
    co2: &mut [f64],
    capacity: impl Fn(usize) -> f64,
) {
    let [nx, ny, _] = grid.dims();
    for idx in 0..grid.len() {
        if co2[idx] <= 0.0 {
            continue;
        }
        let (i, j, k) = grid.ijk(idx);
        if k == 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                    continue;
                }
                let up = grid.index(ii as usize, jj as usize, k - 1);
                if !grid.in_mask(up) || capacity(up) - co2[up] <= 0.0 {
                    continue;
                }
                if best.is_none_or(|b| logperm[up] > logperm[b]) {
                    best = Some(up);
                }
            }
        }
        if let Some(up) = best {
            let moved = co2[idx].min(capacity(up) - co2[up]);
            co2[idx] -= moved;
            co2[up] += moved;
        }
    }
}

/// Bulk density change `φ·ΔS·(ρ_CO₂ − ρ_brine)` in kg/m³; zero outside the mask.
pub fn density_change(
    porosity: &VolumeField,
    delta_saturation: &VolumeField,
    scenario: &InjectionScenario,
) -> Result<VolumeField> {
    porosity.require_kind(FieldKind::Porosity)?;
    delta_saturation.require_kind(FieldKind::Saturation)?;
    porosity.require_same_grid(delta_saturation)?;
    let grid = porosity.grid().clone();
    let contrast = scenario.rho_co2 - scenario.rho_brine;
    let values = porosity
        .values()
        .iter()
        .zip(delta_saturation.values())
        .enumerate()
        .map(|(idx, (phi, ds))| {
            if grid.in_mask(idx) {
                phi * ds * contrast
            } else {
                0.0
            }
        })
        .collect();
    VolumeField::new(grid, FieldKind::DensityChange, values)
}

/// Number of leading samples drawn from the injection period only.
pub const EARLY_SAMPLES: usize = 100;

/// Snapshot time (years) for the `index`-th sample of a dataset: uniform on
/// `(0, injection_years]` for the first [`EARLY_SAMPLES`], otherwise uniform on
/// `(0, injection_years + migration_years]`.
pub fn sample_time_step<R: Rng + ?Sized>(index: usize, scenario: &InjectionScenario, rng: &mut R) -> f64 {
    let upper = if index < EARLY_SAMPLES {
        scenario.injection_years
    } else {
        scenario.total_years()
    };
    upper * (1.0 - rng.random::<f64>())
}
