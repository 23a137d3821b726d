mod common;

use common::{max_rel_err, numeric_grad, random_array, rng};
use facestyle::backbones::FeatureSet;
use facestyle::losses::*;
use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::Rng;

fn set(name: &str, a: Array2<f64>) -> FeatureSet {
    let mut s = FeatureSet::new();
    s.insert(name, a);
    s
}

#[test]
fn nse_gradient_matches_differences() {
    let mut r = rng(1);
    for _ in 0..20 {
        let y = random_array(&mut r, 17, -1.0, 1.0);
        let x = random_array(&mut r, 17, -1.0, 1.0);
        let (_, g) = nse_grad(&y, &x, NSE_EPSILON).unwrap();
        let n = numeric_grad(&x, 1e-6, |x| nse(&y, x, NSE_EPSILON).unwrap());
        assert!(max_rel_err(&g, &n, 1e-9) < 1e-4);
    }
}

#[test]
fn content_gradients_match_differences() {
    let mut r = rng(2);
    let w = LayerWeights::new([("l", 0.7)]).unwrap();
    for mode in [ContentMode::Mse, ContentMode::Nse] {
        for _ in 0..10 {
            let c = set("l", random_array(&mut r, (4, 9), 0.0, 1.0));
            let x0 = random_array(&mut r, (4, 9), 0.0, 1.0);
            let (_, g) = content_loss_grad(&c, &set("l", x0.clone()), &w, mode).unwrap();
            let n = numeric_grad(&x0, 1e-6, |x| content_loss(&c, &set("l", x.clone()), &w, mode).unwrap());
            assert!(max_rel_err(g.get("l").unwrap(), &n, 1e-9) < 1e-4, "{mode:?}");
        }
    }
}

#[test]
fn style_gradients_match_differences() {
    let mut r = rng(3);
    let w = LayerWeights::new([("l", 1.3)]).unwrap();
    for variant in [StyleVariant::Gatys, StyleVariant::Crowson] {
        for _ in 0..10 {
            let s = set("l", random_array(&mut r, (3, 11), 0.0, 1.0));
            let x0 = random_array(&mut r, (3, 7), 0.0, 1.0);
            let (_, g) = style_loss_grad(&s, &set("l", x0.clone()), &w, variant).unwrap();
            let n = numeric_grad(&x0, 1e-6, |x| style_loss(&s, &set("l", x.clone()), &w, variant).unwrap());
            assert!(max_rel_err(g.get("l").unwrap(), &n, 1e-9) < 1e-4, "{variant:?}");
        }
    }
}

#[test]
fn tv_gradient_matches_differences() {
    let mut r = rng(4);
    for _ in 0..10 {
        let x = random_array(&mut r, (3, 5, 6), 0.0, 1.0);
        let (_, g) = tv_loss_grad(x.view()).unwrap();
        let n = numeric_grad(&x, 1e-6, |x| tv_loss(x.view()).unwrap());
        assert!(max_rel_err(&g, &n, 1e-9) < 1e-4);
    }
}

#[test]
fn nse_gradient_norm_near_one_for_equal_magnitudes() {
    let mut r = rng(5);
    for n in [1usize, 4, 50, 1000] {
        let mag = r.random_range(0.01..10.0);
        let y = Array1::from_shape_fn(n, |_| if r.random_bool(0.5) { mag } else { -mag });
        let (_, g) = nse_grad(&y, &Array1::zeros(n), NSE_EPSILON).unwrap();
        let l1: f64 = g.iter().map(|v| v.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-6, "n={n}: {l1}");
    }
}

#[test]
fn style_ignores_spatial_order() {
    let mut r = rng(6);
    let s = set("l", random_array(&mut r, (4, 10), 0.0, 1.0));
    let x = random_array(&mut r, (4, 10), 0.0, 1.0);
    let mut perm: Vec<usize> = (0..10).collect();
    perm.reverse();
    perm.swap(2, 7);
    let xp = x.select(Axis(1), &perm);
    let w = LayerWeights::new([("l", 1.0)]).unwrap();
    for variant in [StyleVariant::Gatys, StyleVariant::Crowson] {
        let a = style_loss(&s, &set("l", x.clone()), &w, variant).unwrap();
        let b = style_loss(&s, &set("l", xp.clone()), &w, variant).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn mismatched_layers_are_rejected() {
    let w = LayerWeights::new([("a", 1.0)]).unwrap();
    let s = set("b", Array2::ones((2, 2)));
    assert!(matches!(style_loss(&s, &s, &w, StyleVariant::Crowson), Err(facestyle::Error::LayerMismatch(_))));
    assert!(tv_loss(Array3::zeros((1, 2, 1)).view()).is_err());
}

proptest! {
    #[test]
    fn nse_is_nonnegative_and_zero_only_at_equality(
        y in prop::collection::vec(-5.0f64..5.0, 1..30),
        d in prop::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let n = y.len().min(d.len());
        let y = Array1::from(y[..n].to_vec());
        let x = &y + &Array1::from(d[..n].to_vec());
        let v = nse(&y, &x, NSE_EPSILON).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(nse(&y, &y, NSE_EPSILON).unwrap(), 0.0);
        if y != x {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn gram_symmetric_psd(n in 1usize..6, m in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = random_array(&mut r, (n, m), -2.0, 2.0);
        let g = gram(&f).unwrap();
        prop_assert_eq!(&g, &g.t().to_owned());
        let trace: f64 = g.diag().sum();
        let v = random_array(&mut r, n, -1.0, 1.0);
        prop_assert!(v.dot(&g.dot(&v)) >= -1e-8 * trace);
    }

    #[test]
    fn weights_sum_to_one(raw in prop::collection::vec(0.01f64..300.0, 1..8)) {
        for scheme in [WeightScheme::Softmax, WeightScheme::Sum] {
            let w = normalize_style_weights(&raw, scheme).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn tv_is_quadratic(seed in any::<u64>(), c in 0.1f64..4.0) {
        let mut r = rng(seed);
        let x = random_array(&mut r, (2, 4, 5), 0.0, 1.0);
        let a = tv_loss(x.view()).unwrap();
        let b = tv_loss((&x * c).view()).unwrap();
        prop_assert!((b - c * c * a).abs() <= 1e-9 * b.abs().max(1e-12));
    }
}
