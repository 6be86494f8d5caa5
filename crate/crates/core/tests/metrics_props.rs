use std::sync::Arc;

use plumegrav::metrics::{class_weights, dice, gdl_loss, mse_data, r_squared, ClassWeights};
use plumegrav::{FieldKind, ForwardOperator, GravityMap, KernelMode, ReservoirGrid, SensorGrid, VolumeField};
use proptest::prelude::*;

fn grid(n: usize) -> Arc<ReservoirGrid> {
    Arc::new(ReservoirGrid::new([n, 1, 1], [10.0; 3], [0.0, 0.0, 100.0]).unwrap())
}

fn mask(g: &Arc<ReservoirGrid>, bits: &[bool]) -> VolumeField {
    VolumeField::new(g.clone(), FieldKind::BinaryMask, bits.iter().map(|b| *b as u8 as f64).collect()).unwrap()
}

fn bits_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..200).prop_flat_map(|n| (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n)))
}

proptest! {
    #[test]
    fn dice_symmetric_and_order_free((p, t) in bits_pair(), rot in 0usize..200) {
        let g = grid(p.len());
        let d = dice(&mask(&g, &p), &mask(&g, &t)).unwrap();
        prop_assert_eq!(d, dice(&mask(&g, &t), &mask(&g, &p)).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        let k = rot % p.len();
        let (mut pr, mut tr) = (p.clone(), t.clone());
        pr.rotate_left(k);
        tr.rotate_left(k);
        pr.reverse();
        tr.reverse();
        prop_assert_eq!(d, dice(&mask(&g, &pr), &mask(&g, &tr)).unwrap());
    }

    #[test]
    fn gdl_in_unit_interval(
        (soft, t) in (1usize..200).prop_flat_map(|n| (
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(any::<bool>(), n),
        )),
        wb in 1e-4f64..10.0,
        wf in 1e-4f64..10.0,
    ) {
        let t: Vec<f64> = t.iter().map(|b| *b as u8 as f64).collect();
        let l = gdl_loss(&soft, &t, ClassWeights { background: wb, foreground: wf }).unwrap();
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&l));
    }

    #[test]
    fn weights_sum_to_two(n_bg in 1u64..u32::MAX as u64, n_fg in 1u64..u32::MAX as u64) {
        let w = class_weights(n_bg, n_fg).unwrap();
        prop_assert_eq!(w.background + w.foreground, 2.0);
        prop_assert!(w.background > 0.0 && w.foreground > 0.0);
        // the rarer class gets the larger weight
        prop_assert_eq!(n_bg >= n_fg, w.foreground >= w.background);
    }

    #[test]
    fn r_squared_one_iff_equal(t in proptest::collection::vec(-100.0f64..100.0, 2..64), i in any::<prop::sample::Index>(), eps in 1e-3f64..10.0) {
        prop_assume!(t.iter().any(|v| *v != t[0]));
        let g = grid(t.len());
        let tf = VolumeField::new(g.clone(), FieldKind::DensityChange, t.clone()).unwrap();
        prop_assert!((r_squared(&tf, &tf).unwrap() - 1.0).abs() <= 1e-12);
        let mut p = t.clone();
        p[i.index(t.len())] += eps;
        let pf = VolumeField::new(g, FieldKind::DensityChange, p).unwrap();
        prop_assert!(r_squared(&pf, &tf).unwrap() < 1.0 - 1e-12);
    }

    #[test]
    fn data_misfit_of_truth_is_zero(v in proptest::collection::vec(-100.0f64..0.0, 8)) {
        let g = Arc::new(ReservoirGrid::new([2, 2, 2], [50.0; 3], [0.0, 0.0, 300.0]).unwrap());
        let s = Arc::new(SensorGrid::uniform(50.0, 3, 3, [0.0, 0.0], 0.0).unwrap());
        let op = ForwardOperator::new(g.clone(), s, KernelMode::OnTheFly).unwrap();
        let truth = VolumeField::new(g, FieldKind::DensityChange, v).unwrap();
        let obs = op.forward(&truth).unwrap();
        prop_assert!(mse_data(&op, &truth, &obs).unwrap() <= 1e-10);
    }
}

#[test]
fn data_misfit_examples() {
    let g = Arc::new(ReservoirGrid::new([3, 3, 1], [50.0; 3], [0.0, 0.0, 500.0]).unwrap());
    let s = Arc::new(SensorGrid::uniform(40.0, 4, 4, [0.0, 0.0], 0.0).unwrap());
    let op = ForwardOperator::new(g.clone(), s.clone(), KernelMode::DenseMatrix).unwrap();
    let mut single = vec![0.0; 9];
    single[4] = -30.0;
    let single = VolumeField::new(g.clone(), FieldKind::DensityChange, single).unwrap();
    let obs = op.forward(&single).unwrap();
    let zero = VolumeField::zeros(g.clone(), FieldKind::DensityChange);
    let mean_sq = obs.values().iter().map(|v| v * v).sum::<f64>() / 16.0;
    assert!((mse_data(&op, &zero, &obs).unwrap() - mean_sq).abs() <= 1e-15 * mean_sq);

    let null = GravityMap::zeros(s.clone());
    let doubled = VolumeField::new(g, FieldKind::DensityChange, single.values().iter().map(|v| 2.0 * v).collect()).unwrap();
    let a = mse_data(&op, &single, &null).unwrap();
    let b = mse_data(&op, &doubled, &null).unwrap();
    assert!((b - 4.0 * a).abs() <= 1e-12 * b);

    let z = GravityMap::new(s, obs.values().to_vec(), true).unwrap();
    assert!(mse_data(&op, &zero, &z).is_err());
}
