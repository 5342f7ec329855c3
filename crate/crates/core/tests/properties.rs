use proptest::prelude::*;

use curvlab_core::distributional::{bump, random_nonnegative, smooth_consistency_gap, Pairing};
use curvlab_core::geometry::{cauchy_defect_nodal, sobolev_norm, Background, SobolevSpec};
use curvlab_core::grid::{CovTensorField, GridSpec, MetricField, ScalarField};
use curvlab_core::linalg::{self, Mat};
use curvlab_core::scenario::{generate, Scenario};

fn sym(n: usize, entries: &[f64]) -> Mat<f64> {
    let mut m = linalg::zeros();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[i][j] = entries[k];
            m[j][i] = entries[k];
            k += 1;
        }
    }
    m
}

/// `A Aᵀ + n·I`, comfortably positive definite.
fn spd(n: usize, entries: &[f64]) -> Mat<f64> {
    let mut m = linalg::zeros();
    for i in 0..n {
        for j in 0..n {
            let mut acc = if i == j { n as f64 } else { 0.0 };
            for k in 0..n {
                acc += entries[i * n + k] * entries[j * n + k];
            }
            m[i][j] = acc;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cauchy_defect_is_nonnegative(
        n in 2usize..=4,
        ric in prop::collection::vec(-10.0f64..10.0, 10),
        a in prop::collection::vec(-2.0f64..2.0, 16),
    ) {
        let ricci = sym(n, &ric);
        let g = spd(n, &a);
        let d = cauchy_defect_nodal(&ricci, &g, n).unwrap();
        let scale: f64 = ricci.iter().flatten().map(|v| v * v).sum();
        prop_assert!(d >= -1e-12 * (1.0 + scale), "defect {d:e}");
    }

    #[test]
    fn cauchy_defect_vanishes_for_einstein_samples(
        n in 2usize..=4,
        lambda in -5.0f64..5.0,
        a in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let g = spd(n, &a);
        let mut ricci = g;
        for row in ricci.iter_mut() {
            for v in row.iter_mut() {
                *v *= lambda;
            }
        }
        let d = cauchy_defect_nodal(&ricci, &g, n).unwrap();
        prop_assert!(d.abs() <= 1e-9 * (1.0 + lambda * lambda), "defect {d:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pairing_is_linear_in_the_test_function(
        s1 in 0u64..1000,
        s2 in 0u64..1000,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let grid = GridSpec::new(2, 16).unwrap();
        let g = generate::<f64>(&Scenario::tent(), grid).unwrap();
        let bg = Background::new(&MetricField::flat(grid)).unwrap();
        let pairing = Pairing::new(&g, &bg).unwrap();
        let phi = random_nonnegative::<f64>(grid, s1).field;
        let psi = random_nonnegative::<f64>(grid, s2).field;
        let combo = phi.zip_map(&psi, |a, b| alpha * a + beta * b).unwrap();
        let lhs = pairing.value(&combo).unwrap();
        let rhs = alpha * pairing.value(&phi).unwrap() + beta * pairing.value(&psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn sobolev_norm_obeys_the_triangle_inequality(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        p in 1.0f64..8.0,
    ) {
        let grid = GridSpec::new(2, 8).unwrap();
        let bg = Background::new(&MetricField::flat(grid)).unwrap();
        let fa = ScalarField::new(grid, a).unwrap();
        let fb = ScalarField::new(grid, b).unwrap();
        let sum = fa.zip_map(&fb, |x, y| x + y).unwrap();
        let norm = |f: &ScalarField<f64>| sobolev_norm(&CovTensorField::from_scalar(f), &bg, SobolevSpec::dual(1, p)).unwrap();
        prop_assert!(norm(&sum) <= norm(&fa) + norm(&fb) + 1e-12);
    }
}

#[test]
fn smooth_consistency_converges_at_second_order() {
    let gaps: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&n| {
            let grid = GridSpec::new(2, n).unwrap();
            let g = generate::<f64>(&Scenario::conformal_bump(), grid).unwrap();
            let bg = Background::new(&MetricField::flat(grid)).unwrap();
            smooth_consistency_gap(&g, &bg, &bump(grid, &[0.5, 0.5], 2)).unwrap()
        })
        .collect();
    for w in gaps.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.7, "{gaps:?}");
    }
    let ratio = gaps[1] / gaps[2];
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
}
