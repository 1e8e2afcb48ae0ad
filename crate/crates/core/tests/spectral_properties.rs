use std::f64::consts::PI;
use std::sync::Arc;

use ergoswarm::spectral::{
    basis_eval, basis_grad, ergodic_metric, trajectory_spectrum, SpectralConfig, Spectrum, TimedPoint,
};
use proptest::prelude::*;

fn cfg(k: usize, q: f64) -> Arc<SpectralConfig> {
    Arc::new(SpectralConfig::new(k, 2, vec![1.0, 1.0], q).unwrap())
}

/// h_k for the unit square, from the closed form of the integral of cos².
fn h(k: [usize; 2]) -> f64 {
    k.iter()
        .map(|&ki| if ki == 0 { 1.0 } else { 0.5 })
        .product::<f64>()
        .sqrt()
}

fn f(k: [usize; 2], x: [f64; 2]) -> f64 {
    (k[0] as f64 * PI * x[0]).cos() * (k[1] as f64 * PI * x[1]).cos() / h(k)
}

fn all_k(kmax: usize) -> Vec<[usize; 2]> {
    (0..kmax).flat_map(|a| (0..kmax).map(move |b| [a, b])).collect()
}

#[test]
fn orthonormal_up_to_k5() {
    let n = 200;
    let ks = all_k(5);
    let c = cfg(5, 1.0);
    let mut worst: f64 = 0.0;
    for (i, &a) in ks.iter().enumerate() {
        for &b in &ks[i..] {
            let mut s = 0.0;
            for ix in 0..n {
                for iy in 0..n {
                    let p = [(ix as f64 + 0.5) / n as f64, (iy as f64 + 0.5) / n as f64];
                    s += basis_eval(&a, &p, &c).unwrap() * basis_eval(&b, &p, &c).unwrap();
                }
            }
            s /= (n * n) as f64;
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((s - want).abs());
        }
    }
    assert!(worst < 1e-4, "worst deviation {worst}");
}

#[test]
fn gradient_matches_finite_differences() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(100));
    let c = cfg(10, 1.0);
    runner
        .run(
            &((0usize..10, 0usize..10), (0.01f64..0.99, 0.01f64..0.99)),
            |((k0, k1), (x, y))| {
                let k = [k0, k1];
                let g = basis_grad(&k, &[x, y], &c).unwrap();
                let e = 1e-6;
                for d in 0..2 {
                    let mut hi = [x, y];
                    let mut lo = [x, y];
                    hi[d] += e;
                    lo[d] -= e;
                    let fd = (f(k, hi) - f(k, lo)) / (2.0 * e);
                    let scale = g[d].abs().max(1.0);
                    prop_assert!((fd - g[d]).abs() / scale < 1e-6, "k={k:?} d={d} fd={fd} g={}", g[d]);
                }
                Ok(())
            },
        )
        .unwrap();
}

proptest! {
    #[test]
    fn basis_matches_closed_form(k0 in 0usize..10, k1 in 0usize..10, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let v = basis_eval(&[k0, k1], &[x, y], &cfg(10, 1.0)).unwrap();
        prop_assert!((v - f([k0, k1], [x, y])).abs() < 1e-12);
    }

    #[test]
    fn metric_identity(
        c in prop::collection::vec(-2.0f64..2.0, 100),
        p in prop::collection::vec(-2.0f64..2.0, 100),
        q in 0.001f64..10.0,
    ) {
        let conf = cfg(10, q);
        let cs = Spectrum::from_coefficients(conf.clone(), c.clone()).unwrap();
        let ps = Spectrum::from_coefficients(conf.clone(), p.clone()).unwrap();
        let got = ergodic_metric(&cs, &ps).unwrap();
        let mut want = 0.0;
        for i in 0..100 {
            let k = conf.multi_index(i);
            let norm2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            want += (1.0 + norm2).powf(-1.5) * (c[i] - p[i]).powi(2);
        }
        want *= q;
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300));
    }

    #[test]
    fn stationary_trajectory_is_pointwise(x in 0.0f64..=1.0, y in 0.0f64..=1.0, n in 1usize..20, dt in 0.01f64..1.0) {
        let conf = cfg(10, 1.0);
        let traj: Vec<TimedPoint> = (0..n).map(|_| TimedPoint::new(vec![x, y], dt)).collect();
        let s = trajectory_spectrum(&traj, &conf).unwrap();
        for i in 0..conf.len() {
            let k = conf.multi_index(i);
            let want = basis_eval(k, &[x, y], &conf).unwrap();
            prop_assert!((s.coefficients()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn concatenation_averages(
        segs in prop::collection::vec(prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 5), 1..5),
    ) {
        let conf = cfg(8, 1.0);
        let dt = 0.1;
        let joint: Vec<TimedPoint> = segs.iter().flatten().map(|&(x, y)| TimedPoint::new(vec![x, y], dt)).collect();
        let s = trajectory_spectrum(&joint, &conf).unwrap();
        let parts: Vec<Spectrum> = segs
            .iter()
            .map(|seg| {
                let t: Vec<TimedPoint> = seg.iter().map(|&(x, y)| TimedPoint::new(vec![x, y], dt)).collect();
                trajectory_spectrum(&t, &conf).unwrap()
            })
            .collect();
        for i in 0..conf.len() {
            let mean = parts.iter().map(|p| p.coefficients()[i]).sum::<f64>() / parts.len() as f64;
            prop_assert!((s.coefficients()[i] - mean).abs() < 1e-12);
        }
    }
}
