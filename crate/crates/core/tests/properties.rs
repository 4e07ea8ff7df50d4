//! Property tests for the invariants of each module.

use ndarray::Array3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smd_core::data::{Scene, SceneConfig};
use smd_core::field::{decode_params, FeatureGrid, RawOutput5};
use smd_core::metrics::evaluate;
use smd_core::mixture::{
    entropy, integrate_window, nll, nll_grad, pdf, select_mode, unimodal_grad, unimodal_nll, MixtureParams,
    UnimodalParams,
};
use smd_core::sampling::{boundary_mask, dda_sample, dilate, gt_lookup, owning_pixel, DisparityField};

fn mixture() -> impl Strategy<Value = MixtureParams> {
    (0.0001..0.9999f64, -0.2..1.2f64, 0.001..1.0f64, -0.2..1.2f64, 0.001..1.0f64)
        .prop_map(|(pi, m1, b1, m2, b2)| MixtureParams::new(pi, m1, b1, m2, b2).unwrap())
}

/// Mixture with scales large enough for a 1e-6 central difference.
fn smooth_mixture() -> impl Strategy<Value = MixtureParams> {
    (0.0001..0.9999f64, 0.0..1.0f64, 0.01..1.0f64, 0.0..1.0f64, 0.01..1.0f64)
        .prop_map(|(pi, m1, b1, m2, b2)| MixtureParams::new(pi, m1, b1, m2, b2).unwrap())
}

fn field(max_side: usize) -> impl Strategy<Value = DisparityField> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        // Few distinct levels so that jumps and flat runs both occur.
        prop::collection::vec(0..4u8, w * h)
            .prop_map(move |v| DisparityField::new(w, h, v.iter().map(|&k| k as f64 * 0.1).collect()).unwrap())
    })
}

fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pdf_integrates_to_one(p in mixture()) {
        let mass = integrate_window(&p, |d| pdf(&p, d));
        // Simpson may overshoot 1 by rounding-level amounts on steep pieces.
        prop_assert!((1.0 - 1e-4..=1.0 + 1e-6).contains(&mass), "mass {mass}");
    }

    #[test]
    fn nll_gradient_matches_differences(p in smooth_mixture(), d in -0.2..1.2f64) {
        prop_assume!((d - p.mu1()).abs() >= 1e-3 && (d - p.mu2()).abs() >= 1e-3);
        let g = nll_grad(&p, d).to_array();
        let x = p.to_array();
        let h = 1e-6;
        for i in 0..5 {
            let (mut lo, mut hi) = (x, x);
            lo[i] -= h;
            hi[i] += h;
            let f = |a: [f64; 5]| nll(&MixtureParams::new(a[0], a[1], a[2], a[3], a[4]).unwrap(), d);
            let fd = (f(hi) - f(lo)) / (2.0 * h);
            prop_assert!(close(g[i], fd, 1e-4, 1e-7), "component {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn unimodal_gradient_matches_differences(mu in 0.0..1.0f64, b in 0.01..1.0f64, d in -0.2..1.2f64) {
        prop_assume!((d - mu).abs() >= 1e-3);
        let g = unimodal_grad(&UnimodalParams::new(mu, b).unwrap(), d);
        let f = |mu: f64, b: f64| unimodal_nll(&UnimodalParams::new(mu, b).unwrap(), d);
        let h = 1e-6;
        prop_assert!(close(g[0], (f(mu + h, b) - f(mu - h, b)) / (2.0 * h), 1e-4, 1e-7));
        prop_assert!(close(g[1], (f(mu, b + h) - f(mu, b - h)) / (2.0 * h), 1e-4, 1e-7));
    }

    #[test]
    fn collapsed_mixture_is_laplace(pi in 0.0001..0.9999f64, mu in 0.0..1.0f64, b in 0.0001..1.0f64, d in -0.5..1.5f64) {
        let p = MixtureParams::new(pi, mu, b, mu, b).unwrap();
        let want = unimodal_nll(&UnimodalParams::new(mu, b).unwrap(), d);
        prop_assert!((nll(&p, d) - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn mode_survives_swap(p in mixture()) {
        let (a, b) = (pdf(&p, p.mu1()), pdf(&p, p.mu2()));
        prop_assume!((a - b).abs() > 1e-12 * a.max(b));
        prop_assert_eq!(select_mode(&p), select_mode(&p.swapped()));
        let m = select_mode(&p);
        prop_assert!(pdf(&p, m) >= a.min(b));
    }

    #[test]
    fn decoded_params_are_valid(raw in prop::array::uniform5(1e-9..1.0 - 1e-9f64)) {
        let p = decode_params(&RawOutput5::new(raw).unwrap());
        let a = p.to_array();
        prop_assert!(a.iter().all(|v| v.is_finite()));
        prop_assert!(MixtureParams::new(a[0], a[1], a[2], a[3], a[4]).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collapsed_entropy_increases_with_scale(mu in 0.0..1.0f64, b in 0.001..0.9f64, step in 1e-3..0.1f64) {
        let h = |b: f64| entropy(&MixtureParams::new(0.5, mu, b, mu, b).unwrap());
        prop_assert!(h(b) < h(b + step));
    }

    #[test]
    fn interp_is_convex(seed in any::<u64>(), x in 0.0..4.0f64, y in 0.0..3.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = FeatureGrid::new(Array3::from_shape_fn((4, 5, 3), |_| rng.gen_range(-2.0..2.0))).unwrap();
        let tap = grid.tap(x, y).unwrap();
        prop_assert!(tap.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((tap.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = smd_core::field::interp(&grid, x, y).unwrap();
        for (c, value) in v.iter().enumerate() {
            let corners: Vec<f64> = tap.cells.iter().map(|&(cx, cy)| grid.cell(cx, cy)[c]).collect();
            let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*value >= lo - 1e-12 && *value <= hi + 1e-12);
        }
    }

    #[test]
    fn mask_commutes_with_transpose(f in field(12)) {
        prop_assert_eq!(boundary_mask(&f.transpose(), 0.15), boundary_mask(&f, 0.15).transpose());
    }

    #[test]
    fn dda_halves_respect_mask(f in field(16), rho in 0..5usize, half in 1..40usize, seed in any::<u64>()) {
        let mask = dilate(&boundary_mask(&f, 0.15), rho);
        let n = 2 * half;
        let pts = dda_sample(&f, &mask, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(pts.len(), n);
        let count = mask.count();
        if count > 0 && count < f.width() * f.height() {
            for (i, p) in pts.iter().enumerate() {
                let (px, py) = owning_pixel(p.x, p.y);
                prop_assert_eq!(mask.get(px, py), i < half);
            }
        }
        for p in &pts {
            prop_assert_eq!(gt_lookup(&f, p.x, p.y).unwrap(), p.d);
        }
    }

    #[test]
    fn lookup_within_cell(f in field(10), ux in -0.5..0.5f64, uy in -0.5..0.5f64, i in any::<prop::sample::Index>()) {
        let k = i.index(f.width() * f.height());
        let (px, py) = (k % f.width(), k / f.width());
        let (x, y) = (px as f64 + ux, py as f64 + uy);
        prop_assume!(x >= 0.0 && y >= 0.0 && x <= (f.width() - 1) as f64 && y <= (f.height() - 1) as f64);
        prop_assert_eq!(gt_lookup(&f, x, y).unwrap(), f.get(px, py));
    }

    #[test]
    fn metric_properties(gt in field(9), noise in prop::collection::vec(-0.3..0.3f64, 81)) {
        let pred = DisparityField::from_fn(gt.width(), gt.height(), |x, y| gt.get(x, y) + noise[y * 9 + x]);
        let r = evaluate(&pred, &gt, 20.0).unwrap();
        prop_assert!(r.see5_avg <= r.see3_avg);
        let t = evaluate(&pred.transpose(), &gt.transpose(), 20.0).unwrap();
        prop_assert!((r.see3_avg - t.see3_avg).abs() < 1e-12);
        prop_assert!((r.see5_avg - t.see5_avg).abs() < 1e-12);
        prop_assert!((r.epe_avg - t.epe_avg).abs() < 1e-12);
        prop_assert_eq!(r.boundary_pixels, t.boundary_pixels);
    }
}

fn scene(seed: u64, sr: usize) -> Scene {
    Scene::build(&SceneConfig {
        width: 40,
        height: 32,
        sr,
        layers: 3,
        d_lo: 1.0,
        d_hi: 9.0,
        d_max: 10.0,
        seed,
        ..SceneConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn super_resolution_gt_downsamples_to_base(seed in any::<u64>(), sr in prop::sample::select(vec![1usize, 2, 4])) {
        let s = scene(seed, sr);
        prop_assert_eq!(s.render_gt(sr, false).downsample_nearest(sr).unwrap(), s.render_gt(1, false));
    }

    #[test]
    fn gt_is_the_nearest_covering_layer(seed in any::<u64>()) {
        let s = scene(seed, 2);
        let gt = s.render_gt(2, false);
        for v in 0..gt.height() {
            for u in 0..gt.width() {
                let (x, y) = ((u as f64 + 0.5) / 2.0 - 0.5, (v as f64 + 0.5) / 2.0 - 0.5);
                let nearest = s
                    .layers
                    .iter()
                    .filter(|l| l.contains(x, y))
                    .map(|l| l.disparity)
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(gt.get(u, v), nearest / s.config.d_max);
            }
        }
    }

    #[test]
    fn background_views_are_shifted_copies(seed in any::<u64>(), d in 1..6usize) {
        let mut s = scene(seed, 1);
        s.layers.truncate(1);
        s.layers[0].disparity = d as f64;
        let sample = s.render();
        for y in 0..32 {
            for x in 0..40 - d {
                for c in 0..3 {
                    let (r, l) = (sample.right[[c, y, x]], sample.left[[c, y, x + d]]);
                    prop_assert!((r - l).abs() < 1e-12, "({x},{y}) {r} vs {l}");
                }
            }
        }
    }
}
