//! Compositing invariants of the splatting renderer.

use garment_core::cloud::GaussianCloud;
use garment_core::render::{render, Camera};
use nalgebra::Vector3;
use proptest::prelude::*;

fn gaussian() -> impl Strategy<Value = (Vector3<f64>, f64, Vector3<f64>, f64)> {
    (
        (-0.6f64..0.6, -0.6f64..0.6, 1.5f64..4.0),
        0.02f64..0.3,
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        0.0f64..1.0,
    )
        .prop_map(|((x, y, z), s, (r, g, b), a)| (Vector3::new(x, y, z), s, Vector3::new(r, g, b), a))
}

fn build(gs: &[(Vector3<f64>, f64, Vector3<f64>, f64)]) -> GaussianCloud {
    let mut c = GaussianCloud::from_positions(gs.iter().map(|g| g.0).collect(), 0.1);
    for (i, g) in gs.iter().enumerate() {
        c.scales[i] = g.1;
        c.colors[i] = g.2;
        c.opacities[i] = g.3;
    }
    c
}

fn camera() -> Camera {
    Camera::new(24, 20, 30.0, 30.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_bounded_and_rgb_finite(gs in prop::collection::vec(gaussian(), 0..30)) {
        let out = render(&build(&gs), &camera(), Vector3::new(0.5, 0.5, 0.5)).unwrap();
        prop_assert!(out.alpha.data.iter().all(|&a| (0.0..=1.0).contains(&a)));
        prop_assert!(out.rgb.is_finite());
        prop_assert!(out.rgb.data.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn adding_a_gaussian_never_lowers_alpha(
        gs in prop::collection::vec(gaussian(), 0..20),
        extra in gaussian(),
        at in 0usize..21,
    ) {
        let cam = camera();
        let base = render(&build(&gs), &cam, Vector3::zeros()).unwrap();
        let mut more = gs.clone();
        more.insert(at.min(gs.len()), extra);
        let grown = render(&build(&more), &cam, Vector3::zeros()).unwrap();
        for (a, b) in base.alpha.data.iter().zip(&grown.alpha.data) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn deterministic_across_thread_counts(gs in prop::collection::vec(gaussian(), 1..30)) {
        let c = build(&gs);
        let cam = Camera::new(40, 40, 45.0, 45.0);
        let reference = render(&c, &cam, Vector3::zeros()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| render(&c, &cam, Vector3::zeros()).unwrap());
        prop_assert_eq!(reference, single);
    }

    #[test]
    fn front_gaussian_dominates(
        ca in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        cb in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        a in 0.2f64..0.9,
        b in 0.2f64..0.9,
    ) {
        // Two overlapping splats at the principal point; swapping their depths
        // moves the pixel toward whichever color is in front, by the closed form.
        let mut cam = Camera::new(9, 9, 20.0, 20.0);
        cam.cx = 4.5;
        cam.cy = 4.5;
        let ca = Vector3::new(ca.0, ca.1, ca.2);
        let cb = Vector3::new(cb.0, cb.1, cb.2);
        let pair = |za: f64, zb: f64| {
            let mut c = GaussianCloud::from_positions(vec![Vector3::new(0.0, 0.0, za), Vector3::new(0.0, 0.0, zb)], 0.2);
            c.colors = vec![ca, cb];
            c.opacities = vec![a, b];
            let out = render(&c, &cam, Vector3::zeros()).unwrap();
            Vector3::new(out.rgb.get(4, 4, 0), out.rgb.get(4, 4, 1), out.rgb.get(4, 4, 2))
        };
        let a_front = pair(2.0, 3.0);
        let b_front = pair(3.0, 2.0);
        let expect_a = ca * a + cb * (b * (1.0 - a));
        let expect_b = cb * b + ca * (a * (1.0 - b));
        prop_assert!((a_front - expect_a).norm() < 1e-12);
        prop_assert!((b_front - expect_b).norm() < 1e-12);
        let delta = a_front - b_front;
        let predicted = (ca - cb) * (a * b);
        prop_assert!((delta - predicted).norm() < 1e-12);
    }
}

#[test]
fn transmittance_non_increasing_along_depth() {
    // Stacking splats front to back can only shrink what the background shows.
    let mut cam = Camera::new(9, 9, 20.0, 20.0);
    cam.cx = 4.5;
    cam.cy = 4.5;
    let mut last = 1.0;
    for n in 1..8 {
        let mut c = GaussianCloud::from_positions(
            (0..n).map(|i| Vector3::new(0.0, 0.0, 2.0 + i as f64 * 0.1)).collect(),
            0.2,
        );
        c.opacities = vec![0.3; n];
        let t = 1.0 - render(&c, &cam, Vector3::zeros()).unwrap().alpha.get(4, 4, 0);
        assert!(t <= last);
        assert!((t - 0.7f64.powi(n as i32)).abs() < 1e-12);
        last = t;
    }
}
