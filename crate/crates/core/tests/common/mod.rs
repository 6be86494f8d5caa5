#![allow(dead_code)]

use std::sync::Arc;

use plumegrav::dataset::{sample_draw, sample_id, SampleRecord, Workbench};
use plumegrav::geo::{GeoStatsParams, SiteConfig};
use plumegrav::par::Exec;
use plumegrav::{FieldKind, ReservoirGrid, VolumeField};
use rand::Rng;

pub const GAMMA_REF: f64 = 6.6738480e-11;

pub fn desk_bench() -> Workbench {
    Workbench::new(&SiteConfig::default(), None, Exec::Parallel).unwrap()
}

/// Desk-scale samples drawn the same way `generate` draws them.
pub fn desk_samples(bench: &Workbench, seed: u64, n: usize) -> Vec<SampleRecord> {
    let params = GeoStatsParams::default();
    (0..n)
        .map(|i| {
            let (geo_seed, t) = sample_draw(seed, i, &bench.scenario);
            bench.synthesize(sample_id(i), &params, geo_seed, t).unwrap()
        })
        .collect()
}

pub fn random_density<R: Rng>(grid: &Arc<ReservoirGrid>, rng: &mut R) -> VolumeField {
    let v = (0..grid.len()).map(|_| rng.random_range(-100.0..100.0)).collect();
    VolumeField::new(grid.clone(), FieldKind::DensityChange, v).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn nonincreasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0])
}

/// Brute-force vertical gravity of point masses, µGal.
pub fn point_mass_oracle(masses: &[([f64; 3], f64)], station: [f64; 3]) -> f64 {
    let mut g = 0.0;
    for (p, m) in masses {
        let dx = p[0] - station[0];
        let dy = p[1] - station[1];
        let dz = p[2] - station[2];
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        g += GAMMA_REF * m * dz / (r * r * r);
    }
    g * 1e8
}
