//! Invariants of the public API under random inputs.

use nalgebra::DMatrix;
use proptest::prelude::*;

use bkt_core::inference::posterior_h1;
use bkt_core::io::{read_paired_csv_from, write_paired_csv_to};
use bkt_core::kernel::subsample_eval_points;
use bkt_core::likelihood::{kron_logdet, kron_quadform};
use bkt_core::{Evaluator, Hypothesis, JacobianPolicy, KernelParam, PairedDataset, SigmaMethod};

fn dataset(n: usize, d: usize, vals: &[f64]) -> PairedDataset {
    let x = DMatrix::from_fn(n, d, |i, j| vals[i * d + j]);
    let y = DMatrix::from_fn(n, d, |i, j| vals[n * d + i * d + j] + 0.5);
    PairedDataset::new(x, y).unwrap()
}

fn evaluator(data: PairedDataset, method: SigmaMethod) -> Evaluator {
    let z = subsample_eval_points(&data, 6, 17).unwrap();
    Evaluator::new(data, z, method, JacobianPolicy::Clamp).unwrap()
}

fn spd(vals: &[f64], s: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(s, s, |i, j| vals[i * s + j]);
    &a * a.transpose() + DMatrix::identity(s, s) * 0.2
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(
        d in 1usize..4,
        vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 2 * 3 * 12),
    ) {
        let n = 12;
        let data = dataset(n, d, &vals);
        let mut buf = Vec::new();
        write_paired_csv_to(&mut buf, &data, Some("# comment line")).unwrap();
        let back = read_paired_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn swapping_samples_keeps_the_bayes_factor(
        vals in prop::collection::vec(-2.0..2.0f64, 2 * 2 * 10),
        theta in 0.1..5.0f64,
        method2 in any::<bool>(),
    ) {
        let data = dataset(10, 2, &vals);
        let method = if method2 { SigmaMethod::Method2 } else { SigmaMethod::Method1 };
        let p = KernelParam::new(theta).unwrap();
        // Evaluation points come from both samples, so share one set.
        let z = subsample_eval_points(&data, 6, 17).unwrap();
        let a = Evaluator::new(data.clone(), z.clone(), method, JacobianPolicy::Clamp).unwrap();
        let b = Evaluator::new(data.swapped(), z, method, JacobianPolicy::Clamp).unwrap();
        // Sigma carries a ridge near 1e-8 of its trace, so the two orderings
        // agree only to the rounding that conditioning allows.
        for m in [Hypothesis::H0, Hypothesis::H1] {
            let (la, lb) = (a.loglik(p, m).unwrap(), b.loglik(p, m).unwrap());
            prop_assert!(close(la, lb, 1e-6), "{:?} {} vs {}", m, la, lb);
        }
    }

    #[test]
    fn common_translation_keeps_the_pseudolikelihood(
        vals in prop::collection::vec(-2.0..2.0f64, 2 * 2 * 10),
        shift in prop::collection::vec(-10.0..10.0f64, 2),
        theta in 0.1..5.0f64,
    ) {
        let data = dataset(10, 2, &vals);
        let moved = PairedDataset::new(
            DMatrix::from_fn(10, 2, |i, j| data.x()[(i, j)] + shift[j]),
            DMatrix::from_fn(10, 2, |i, j| data.y()[(i, j)] + shift[j]),
        ).unwrap();
        let p = KernelParam::new(theta).unwrap();
        let a = evaluator(data, SigmaMethod::Method2);
        let b = evaluator(moved, SigmaMethod::Method2);
        prop_assert!(close(a.log_bf(p).unwrap(), b.log_bf(p).unwrap(), 1e-6));
    }

    #[test]
    fn posterior_probability_is_monotone(a in -800.0..800.0f64, b in -800.0..800.0f64, odds in 0.01..100.0f64) {
        let (pa, pb) = (posterior_h1(a, odds), posterior_h1(b, odds));
        prop_assert!((0.0..=1.0).contains(&pa));
        if a < b {
            prop_assert!(pa >= pb);
        }
        prop_assert!(close(posterior_h1(a, 1.0) + posterior_h1(-a, 1.0), 1.0, 1e-12));
    }

    #[test]
    fn kronecker_forms_scale_consistently(
        s in 1usize..5,
        n in 1usize..6,
        vals in prop::collection::vec(-1.0..1.0f64, 2 * 25 + 25),
        c in 0.1..10.0f64,
    ) {
        let sigma = spd(&vals[..25], s);
        let r = spd(&vals[25..50], s);
        let g = DMatrix::from_fn(s, n, |i, j| vals[50 + i * 5 + j]);
        // Scaling both covariances by c scales W by c.
        let base = kron_logdet(&sigma, &r, n).unwrap();
        let scaled = kron_logdet(&(&sigma * c), &(&r * c), n).unwrap();
        prop_assert!(close(scaled, base + (n * s) as f64 * c.ln(), 1e-9));
        let q = kron_quadform(&g, &sigma, &r, n).unwrap();
        prop_assert!(q >= 0.0);
        let qs = kron_quadform(&g, &(&sigma * c), &(&r * c), n).unwrap();
        prop_assert!(close(qs * c, q, 1e-9));
    }
}
