mod common;

use std::sync::Arc;

use plumegrav::geo::{self, GeoStatsParams, InjectionScenario, SiteConfig};
use plumegrav::{ReservoirGrid, VolumeField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk() -> (Arc<ReservoirGrid>, InjectionScenario) {
    let grid = Arc::new(SiteConfig::default().build_grid().unwrap());
    let sc = InjectionScenario::default_for(&grid).unwrap();
    (grid, sc)
}

fn co2_volume(porosity: &VolumeField, sat: &VolumeField) -> f64 {
    let v = porosity.grid().cell_volume();
    porosity.values().iter().zip(sat.values()).map(|(p, s)| p * s * v).sum()
}

fn mean_depth(sat: &VolumeField, porosity: &VolumeField) -> f64 {
    let g = sat.grid();
    let (mut w, mut wz) = (0.0, 0.0);
    for c in 0..g.len() {
        let m = sat.values()[c] * porosity.values()[c];
        w += m;
        wz += m * g.center_of(c)[2];
    }
    wz / w
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plume_invariants(seed in any::<u64>(), t in 0.0f64..=500.0) {
        let (grid, sc) = desk();
        let g = geo::realize_geology(&grid, &GeoStatsParams::default(), seed).unwrap();
        let sat = geo::simulate_plume(&g.porosity, &g.logperm, &sc, t).unwrap();
        let expected = sc.injected_volume(t);
        let got = co2_volume(&g.porosity, &sat);
        if expected > 0.0 {
            prop_assert!(((got - expected) / expected).abs() < 1e-6);
        } else {
            prop_assert_eq!(got, 0.0);
        }
        for (c, s) in sat.values().iter().enumerate() {
            prop_assert!(*s >= 0.0 && *s <= sc.s_max);
            if *s > 0.0 {
                prop_assert!(grid.in_mask(c));
            }
        }
        let dens = geo::density_change(&g.porosity, &sat, &sc).unwrap();
        prop_assert!(dens.values().iter().all(|d| *d <= 0.0));
        let again = geo::simulate_plume(&g.porosity, &g.logperm, &sc, t).unwrap();
        prop_assert_eq!(sat, again);
    }

    #[test]
    fn migration_moves_mass_up(seed in any::<u64>(), dt in 1.0f64..400.0) {
        let (grid, sc) = desk();
        let g = geo::realize_geology(&grid, &GeoStatsParams::default(), seed).unwrap();
        let end = geo::simulate_plume(&g.porosity, &g.logperm, &sc, sc.injection_years).unwrap();
        let later = geo::simulate_plume(&g.porosity, &g.logperm, &sc, sc.injection_years + dt).unwrap();
        let (a, b) = (co2_volume(&g.porosity, &end), co2_volume(&g.porosity, &later));
        prop_assert!(((a - b) / a).abs() < 1e-9);
        prop_assert!(mean_depth(&later, &g.porosity) <= mean_depth(&end, &g.porosity) + 1e-9);
    }

    #[test]
    fn porosity_within_bounds(seed in any::<u64>()) {
        let (grid, _) = desk();
        let g = geo::realize_geology(&grid, &GeoStatsParams::default(), seed).unwrap();
        prop_assert!(g.porosity.values().iter().all(|p| (0.10..=0.40).contains(p)));
        prop_assert!(g.corr_length >= 1.0);
    }
}

#[test]
fn t500_shallower_than_t100() {
    let (grid, sc) = desk();
    for seed in 0..5 {
        let g = geo::realize_geology(&grid, &GeoStatsParams::default(), seed).unwrap();
        let s100 = geo::simulate_plume(&g.porosity, &g.logperm, &sc, 100.0).unwrap();
        let s500 = geo::simulate_plume(&g.porosity, &g.logperm, &sc, 500.0).unwrap();
        let (a, b) = (co2_volume(&g.porosity, &s100), co2_volume(&g.porosity, &s500));
        assert!(((a - b) / a).abs() < 1e-9);
        assert!(mean_depth(&s500, &g.porosity) <= mean_depth(&s100, &g.porosity));
    }
}

#[test]
fn gaussian_field_moments_on_64_cube() {
    let grid = Arc::new(ReservoirGrid::new([64; 3], [1.0; 3], [0.0, 0.0, 10.0]).unwrap());
    for seed in 0..10 {
        let f = geo::sample_gaussian_field(&grid, 26.0, seed).unwrap();
        let v = f.values();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.1, "seed {seed}: mean {mean}");
        assert!(std > 0.8 && std < 1.2, "seed {seed}: std {std}");
    }
}

#[test]
fn poro_perm_correlation_on_64_cube() {
    let grid = ReservoirGrid::new([64; 3], [1.0; 3], [0.0, 0.0, 10.0]).unwrap();
    let params = GeoStatsParams::default();
    for seed in 0..10 {
        let s = geo::geology_scores(&grid, &params, seed).unwrap();
        let r = pearson(&s.porosity, &s.logperm);
        assert!(r > 0.15 && r < 0.45, "seed {seed}: corr {r}");
    }
}

#[test]
fn white_noise_limit_on_32_cube() {
    let grid = Arc::new(ReservoirGrid::new([32; 3], [1.0; 3], [0.0, 0.0, 10.0]).unwrap());
    let f = geo::sample_gaussian_field(&grid, 1e-3, 17).unwrap();
    let v = f.values();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..grid.len())
        .filter(|c| grid.ijk(*c).0 + 1 < 32)
        .map(|c| (v[c], v[c + 1]))
        .unzip();
    assert!(pearson(&a, &b).abs() < 0.1);
}

#[test]
fn time_step_histogram() {
    let (_, sc) = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<f64> = (0..500).map(|i| geo::sample_time_step(i, &sc, &mut rng)).collect();
    assert!(draws[..100].iter().all(|t| *t > 0.0 && *t <= 100.0));
    assert!(draws.iter().all(|t| *t > 0.0 && *t <= 500.0));
    assert!(draws.iter().filter(|t| **t <= 100.0).count() >= 100);
}
