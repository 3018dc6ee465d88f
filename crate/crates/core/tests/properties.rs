use nalgebra::DMatrix;
use proptest::prelude::*;

use erasekit::alignment::alignment_score;
use erasekit::coding_rate::{kernelized_rate_distortion, rate_distortion, upper_bound, CodingRateParams};
use erasekit::features::normalize_rows;
use erasekit::harness::eigen_mass;
use erasekit::kernel::{build_kernel, ConceptLabels, Distance, KernelFamily, KernelSpec};
use erasekit::metrics::{demographic_parity, gdp};
use erasekit::rng::{normal_matrix, seeded};

fn sphere(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    normalize_rows(&normal_matrix(n, d, &mut seeded(seed, 0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernelized_rate_is_sandwiched(
        n in 2usize..20,
        d in 1usize..12,
        seed in any::<u64>(),
        labels in prop::collection::vec(0.0f64..1.0, 20),
        bw in 0.05f64..3.0,
        fam in 0usize..3,
        eps in 0.1f64..1.5,
    ) {
        let params = CodingRateParams::new(eps).unwrap();
        let z = sphere(n, d, seed);
        let family = [KernelFamily::Gaussian, KernelFamily::Laplace, KernelFamily::Cauchy][fam];
        let k = build_kernel(&ConceptLabels::Continuous(labels[..n].to_vec()), &KernelSpec::new(family, Distance::Absolute, bw)).unwrap();
        let r_z = rate_distortion(&z, &params).unwrap();
        let r_zk = kernelized_rate_distortion(&z, &k, &params).unwrap();
        prop_assert!(r_z >= -1e-12);
        prop_assert!(r_z <= r_zk + 1e-8);
        prop_assert!(r_zk <= upper_bound(n, d, &params) + 1e-8);
    }

    #[test]
    fn rate_is_invariant_to_row_order(n in 2usize..15, d in 1usize..8, seed in any::<u64>(), shift in 1usize..15) {
        let params = CodingRateParams::new(0.5).unwrap();
        let z = sphere(n, d, seed);
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let a = rate_distortion(&z, &params).unwrap();
        let b = rate_distortion(&z.select_rows(&order), &params).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn alignment_is_a_fraction_and_symmetric(n in 3usize..40, seed in any::<u64>(), k_frac in 0.0f64..1.0) {
        let x = normal_matrix(n, 3, &mut seeded(seed, 1));
        let z = normal_matrix(n, 2, &mut seeded(seed, 2));
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let a = alignment_score(&x, &z, k).unwrap().a_k;
        let b = alignment_score(&z, &x, k).unwrap().a_k;
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
        prop_assert_eq!(alignment_score(&x, &x, k).unwrap().a_k, 1.0);
    }

    #[test]
    fn alignment_ignores_scale_and_translation(n in 3usize..30, seed in any::<u64>(), s in 0.1f64..10.0, t in -5.0f64..5.0) {
        let x = normal_matrix(n, 3, &mut seeded(seed, 1));
        let moved = x.map(|v| s * v + t);
        prop_assert_eq!(alignment_score(&x, &moved, n / 2 + 1).unwrap().a_k, 1.0);
    }

    #[test]
    fn demographic_parity_is_bounded(pred in prop::collection::vec(0usize..3, 2..60), flip in any::<u64>()) {
        // both groups present
        let groups: Vec<usize> = (0..pred.len()).map(|i| if i < 2 { i } else { ((flip >> (i % 64)) & 1) as usize }).collect();
        let dp = demographic_parity(&pred, &groups).unwrap();
        // twice the total-variation distance between the two groups
        prop_assert!((0.0..=2.0 + 1e-12).contains(&dp));
    }

    #[test]
    fn gdp_is_non_negative(values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5..60)) {
        let (pred, attr): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let g = gdp(&pred, &attr, 0.1).unwrap();
        prop_assert!(g >= 0.0 && g.is_finite());
    }

    #[test]
    fn eigen_mass_sums_to_one(n in 3usize..40, d in 1usize..6, seed in any::<u64>()) {
        let x = normal_matrix(n, d, &mut seeded(seed, 3));
        let m = eigen_mass(&x).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(m.windows(2).all(|w| w[0] >= w[1]));
    }
}
