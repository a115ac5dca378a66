//! Property tests for the crate-wide invariants: linearity and
//! reconstruction of every transform, estimator safeguards, schedule
//! invariants and grid monotonicity.

use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

use covsamp_core::schedule::{
    make_noise_info, make_time_grid, GridSpacing, ScheduleKind,
};
use covsamp_core::tensor::SpatialTensor;
use covsamp_core::transforms::TransformKind;
use covsamp_core::tweedie::{frequency_hutchinson, AveragingMode, CovEstimatorConfig};

fn tensor_from(values: &[f64], h: usize, w: usize, c: usize) -> SpatialTensor {
    let data: Vec<f64> = (0..h * w * c).map(|i| values[i % values.len()]).collect();
    SpatialTensor::new(ArrayD::from_shape_vec(IxDyn(&[h, w, c]), data).unwrap()).unwrap()
}

fn all_transforms() -> Vec<TransformKind> {
    vec![
        TransformKind::Identity,
        TransformKind::BlockDct { block_size: 4 },
        TransformKind::ConvDct { block_size: 2 },
        TransformKind::ConvDct { block_size: 4 },
        TransformKind::Haar { levels: 2 },
        TransformKind::LeGall53 { levels: 2 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transforms_are_linear_and_invertible(
        values in proptest::collection::vec(-100.0_f64..100.0, 16..64),
        others in proptest::collection::vec(-100.0_f64..100.0, 16..64),
        a in -3.0_f64..3.0,
        b in -3.0_f64..3.0,
    ) {
        let (h, w, c) = (8usize, 8, 2);
        let x = tensor_from(&values, h, w, c);
        let y = tensor_from(&others, h, w, c);
        for kind in all_transforms() {
            let combined = SpatialTensor::new(x.data() * a + y.data() * b).unwrap();
            let lhs = kind.forward(&combined).unwrap();
            let fx = kind.forward(&x).unwrap();
            let fy = kind.forward(&y).unwrap();
            let scale = 1.0 + a.abs().max(b.abs()) * 100.0;
            for (l, (px, py)) in lhs.data().iter().zip(fx.data().iter().zip(fy.data().iter())) {
                prop_assert!((l - (a * px + b * py)).abs() < 1e-10 * scale,
                    "{kind:?} linearity");
            }
            let back = kind.inverse(&fx).unwrap();
            for (orig, rec) in x.data().iter().zip(back.data().iter()) {
                prop_assert!((orig - rec).abs() < 1e-8 * (1.0 + orig.abs()),
                    "{kind:?} reconstruction");
            }
        }
    }

    #[test]
    fn orthonormal_transforms_preserve_energy(
        values in proptest::collection::vec(-50.0_f64..50.0, 16..64),
    ) {
        let x = tensor_from(&values, 8, 8, 1);
        let e_in: f64 = x.data().iter().map(|v| v * v).sum();
        for kind in [TransformKind::BlockDct { block_size: 4 }, TransformKind::Haar { levels: 3 }] {
            let y = kind.forward(&x).unwrap();
            let e_out: f64 = y.data().iter().map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-10 * e_in.max(1.0), "{kind:?}");
        }
    }

    #[test]
    fn hutchinson_never_emits_non_finite(
        dx_scale in -1e8_f64..1e8,
        eps_vals in proptest::collection::vec(-1e6_f64..1e6, 8..32),
        mode_ix in 0usize..4,
    ) {
        let modes = [
            AveragingMode::Channel,
            AveragingMode::Spatial,
            AveragingMode::Global,
            AveragingMode::Isotropic,
        ];
        let eps = tensor_from(&eps_vals, 8, 8, 1);
        let dx = SpatialTensor::new(eps.data() * dx_scale).unwrap();
        let cfg = CovEstimatorConfig {
            averaging_mode: modes[mode_ix],
            transform: TransformKind::ConvDct { block_size: 4 },
            ..CovEstimatorConfig::default()
        };
        let out = frequency_hutchinson(&dx, &eps, &cfg).unwrap();
        prop_assert!(out.data().iter().all(|v| v.is_finite()));

        // Zeros and huge constants go through the floors/caps unharmed.
        let zeros = SpatialTensor::zeros(&[8, 8, 1]).unwrap();
        let out = frequency_hutchinson(&zeros, &eps, &cfg).unwrap();
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
        let huge = SpatialTensor::new(ArrayD::from_elem(IxDyn(&[8, 8, 1]), 1e300)).unwrap();
        let out = frequency_hutchinson(&huge, &huge, &cfg).unwrap();
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hutchinson_sign_flip_is_exact(
        dx_vals in proptest::collection::vec(-10.0_f64..10.0, 8..32),
        eps_vals in proptest::collection::vec(-10.0_f64..10.0, 8..32),
    ) {
        let eps = tensor_from(&eps_vals, 8, 8, 1);
        let dx = tensor_from(&dx_vals, 8, 8, 1);
        let cfg = CovEstimatorConfig {
            transform: TransformKind::ConvDct { block_size: 4 },
            ..CovEstimatorConfig::default()
        };
        let out = frequency_hutchinson(&dx, &eps, &cfg).unwrap();
        let neg = frequency_hutchinson(
            &SpatialTensor::new(dx.data() * -1.0).unwrap(),
            &SpatialTensor::new(eps.data() * -1.0).unwrap(),
            &cfg,
        ).unwrap();
        for (a, b) in out.data().iter().zip(neg.data().iter()) {
            prop_assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn schedules_stay_variance_preserving(t in 0.0_f64..=1.0, shift in -4.0_f64..4.0) {
        for schedule in [
            ScheduleKind::Cosine,
            ScheduleKind::ShiftedCosine { shift },
            ScheduleKind::LinearLogsnr { l_min: -12.0, l_max: 12.0 },
        ] {
            let n = make_noise_info(t, schedule).unwrap();
            prop_assert!((n.alpha * n.alpha + n.sigma * n.sigma - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&n.alpha));
            prop_assert!((0.0..=1.0).contains(&n.sigma));
        }
    }

    #[test]
    fn time_grids_are_strictly_decreasing(
        steps in 1usize..40,
        uniform_logsnr in proptest::bool::ANY,
    ) {
        let spacing = if uniform_logsnr { GridSpacing::UniformLogsnr } else { GridSpacing::UniformT };
        let grid = make_time_grid(steps, spacing, ScheduleKind::Cosine).unwrap();
        prop_assert_eq!(grid.times()[0], 1.0);
        prop_assert_eq!(*grid.times().last().unwrap(), 0.0);
        prop_assert!(grid.times().windows(2).all(|w| w[0] > w[1]));
        prop_assert_eq!(grid.num_steps(), steps);
    }
}
