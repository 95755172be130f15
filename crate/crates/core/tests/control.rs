use cqiv::control::{
    control_distribution, control_ols, control_quantile, distribution_thresholds, FirstStageMethod, FirstStageSpec,
};
use cqiv::numkit::{DesignMatrix, WeightVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn design(rng: &mut ChaCha8Rng, n: usize) -> (DesignMatrix, Vec<f64>) {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d: Vec<f64> = (0..n).map(|i| 0.5 * w[i] + z[i] + rng.random_range(-1.0..1.0)).collect();
    let r = DesignMatrix::from_columns(vec![("_cons".into(), vec![1.0; n]), ("w".into(), w), ("z".into(), z)])
        .unwrap();
    (r, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ols_control_is_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, c0 in -5.0f64..5.0, c1 in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let (r, d) = design(&mut rng, n);
        let w = WeightVector::ones(n);
        let d2: Vec<f64> = (0..n).map(|i| a * d[i] + c0 + c1 * r.get(i, 2)).collect();
        let v1 = control_ols(&r, &d, &w).unwrap().v_hat;
        let v2 = control_ols(&r, &d2, &w).unwrap().v_hat;
        for (x, y) in v1.iter().zip(&v2) {
            prop_assert!((x - y).abs() < 1e-10, "{} vs {}", x, y);
        }
    }

    #[test]
    fn quantile_control_stays_on_grid(seed in any::<u64>(), nq in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let (r, d) = design(&mut rng, n);
        let spec = FirstStageSpec { n_quant: nq, ..FirstStageSpec::default() };
        let v = control_quantile(&r, &d, &spec, &WeightVector::ones(n)).unwrap().v_hat;
        let tau = 1.0 / (nq + 1) as f64;
        for x in v {
            prop_assert!(x >= tau - 1e-15 && x <= 1.0 - tau + 1e-15);
            let k = x * nq as f64;
            let clamped = x == tau || x == 1.0 - tau;
            prop_assert!(clamped || (k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn distribution_control_is_bounded(seed in any::<u64>(), nt in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 120;
        let (r, d) = design(&mut rng, n);
        let spec = FirstStageSpec { method: FirstStageMethod::Distribution, n_thresh: nt, ..FirstStageSpec::default() };
        let v = control_distribution(&r, &d, &spec, &WeightVector::ones(n)).unwrap().v_hat;
        let tau = 1.0 / (2 * nt) as f64;
        prop_assert!(v.iter().all(|x| *x >= tau && *x <= 1.0 - tau));
    }
}

#[test]
fn quantile_control_tracks_true_rank() {
    // D depends on nothing: the control approaches the empirical CDF.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 400;
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let r = DesignMatrix::from_columns(vec![("_cons".into(), vec![1.0; n])]).unwrap();
    let v = control_quantile(&r, &d, &FirstStageSpec::default(), &WeightVector::ones(n)).unwrap().v_hat;
    let worst = d.iter().zip(&v).map(|(di, vi)| (di - vi).abs()).fold(0.0, f64::max);
    assert!(worst < 0.1, "{worst}");
}

#[test]
fn thresholds_ignore_zero_weights() {
    let d = vec![1.0, 2.0, 3.0, 4.0, 100.0];
    let w = WeightVector::new(vec![1.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(distribution_thresholds(&d, 4, &w), vec![1.0, 2.0, 3.0]);
}
