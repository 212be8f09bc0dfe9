use std::collections::BTreeMap;

use garment_core::body::{make_test_humanoid, BodyData, Pose, RegionSpec, SkinnedBody, ROOT_PARENT};
use garment_core::cloud::GaussianCloud;
use garment_core::editor::*;
use garment_core::init::{init_garment, InitConfig};
use garment_core::optim::*;
use garment_core::render::Camera;
use nalgebra::Vector3;

fn fixed_views(n: usize, size: usize) -> Views {
    Views::Fixed(
        (0..n)
            .map(|k| {
                Camera::orbit(
                    Vector3::new(0.0, 1.2, 0.0),
                    360.0 * k as f64 / n as f64,
                    10.0,
                    1.6,
                    size,
                    size,
                )
                .unwrap()
            })
            .collect(),
    )
}

fn chest_garment(seed: u64) -> (SkinnedBody, GaussianCloud) {
    let body = make_test_humanoid(4, 8).unwrap();
    let region = RegionSpec::from_names(&body, &["chest", "abdomen"]).unwrap();
    let cloud = init_garment(
        &body,
        &region,
        &InitConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    (body, cloud)
}

fn green(cloud: &GaussianCloud) -> GaussianCloud {
    let mut g = cloud.clone();
    g.colors = vec![Vector3::new(0.0, 1.0, 0.0); g.len()];
    g
}

fn small_cfg(iterations: usize) -> OptimConfig {
    OptimConfig {
        iterations,
        batch_views: 2,
        ..OptimConfig::default()
    }
}

#[test]
fn texture_edit_moves_toward_green_and_keeps_geometry() {
    let (_, cloud) = chest_garment(1);
    let bg = Vector3::new(1.0, 1.0, 1.0);
    let mock = MockGuidance::new(MockTarget::Cloud(green(&cloud)), bg).unwrap();
    let spec = GuidanceSpec::mock();
    let views = fixed_views(4, 48);
    let problem = Problem {
        guidance: &mock,
        spec: &spec,
        views: &views,
        prompt: None,
        trainable: None,
    };
    let out = edit_texture_global(&cloud, &problem, &small_cfg(150)).unwrap();
    assert_eq!(out.cloud.positions, cloud.positions);
    assert_eq!(out.cloud.scales, cloud.scales);
    assert_eq!(out.cloud.opacities, cloud.opacities);
    assert_eq!(out.cloud.rotations, cloud.rotations);
    let before = cloud.mean_color().unwrap();
    let after = out.cloud.mean_color().unwrap();
    assert!(
        after.y > before.y && after.x < before.x && after.z < before.z,
        "{before:?} -> {after:?}"
    );
    let first = out.report.rows[0].loss_image;
    let last = out.report.last().unwrap().loss_image;
    assert!(last <= 0.5 * first, "{first} -> {last}");

    let one = edit_texture_global(&cloud, &problem, &small_cfg(1)).unwrap();
    assert_eq!(one.cloud.positions, cloud.positions);
    assert_ne!(one.cloud.colors, cloud.colors);
    assert!(edit_texture_global(&cloud, &problem, &small_cfg(0)).is_err());
}

/// Three vertices on one joint whose single shape direction is the same
/// vector everywhere.
fn constant_shape_body() -> SkinnedBody {
    let dir = [0.1, 0.2, -0.3];
    let data = BodyData {
        vertices: vec![
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ],
        faces: vec![[0, 1, 2]],
        joints: vec![Vector3::zeros()],
        parents: vec![ROOT_PARENT],
        weights: vec![vec![(0, 1.0)]; 3],
        num_betas: 1,
        shape_dirs: (0..3).flat_map(|_| dir).collect(),
        labels: vec![0; 3],
        label_names: BTreeMap::from([(0, "torso".to_string())]),
        ..Default::default()
    };
    SkinnedBody::new(data).unwrap()
}

#[test]
fn constant_shape_field_translates_rigidly() {
    let body = constant_shape_body();
    let mut c = GaussianCloud::from_positions(
        vec![
            Vector3::new(0.3, 0.3, 0.1),
            Vector3::new(0.9, 0.05, 0.0),
            Vector3::new(-0.2, 0.6, 0.2),
        ],
        0.01,
    );
    c.bind_idx = vec![Some(0), Some(1), Some(2)];
    let expected = Vector3::new(0.1, 0.2, -0.3) * 0.7;
    for k in [1, 2, 3] {
        let s = edit_shape(&c, &body, &[0.5], &[1.2], k).unwrap();
        for i in 0..3 {
            assert!((s.positions[i] - c.positions[i] - expected).norm() < 1e-12, "k={k}");
        }
    }
}

#[test]
fn arm_points_track_their_vertices_and_rigid_parts_keep_distances() {
    let body = make_test_humanoid(4, 8).unwrap();
    let region = RegionSpec::from_names(&body, &["upper_arm_l", "lower_arm_l"]).unwrap();
    let c = init_garment(&body, &region, &InitConfig::default()).unwrap();
    let mut pose = Pose::zero(&body);
    pose.theta[5] = Vector3::new(0.0, 0.0, 1.2);
    pose.theta[6] = Vector3::new(0.0, 0.7, 0.0);
    let posed = repose(&c, &body, &pose).unwrap();

    let mut on_vertex = GaussianCloud::from_positions(body.vertices().to_vec(), 0.01);
    on_vertex.bind_idx = (0..body.num_vertices()).map(|v| Some(v as u32)).collect();
    let moved = repose(&on_vertex, &body, &pose).unwrap();
    let verts = body.posed_vertices(&pose).unwrap();
    for v in body.region_vertices(&region).unwrap() {
        assert!((moved.positions[v] - verts[v]).norm() < 1e-9);
    }

    let rigid = |i: usize| body.weights()[c.bind_idx[i].unwrap() as usize].len() == 1;
    let mut checked = 0;
    for i in 0..c.len() {
        for j in (i + 1)..c.len() {
            if c.bind_idx[i] == c.bind_idx[j] && rigid(i) {
                let d0 = (c.positions[i] - c.positions[j]).norm();
                let d1 = (posed.positions[i] - posed.positions[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
    let back = unpose(&posed, &body, &pose).unwrap();
    for i in 0..c.len() {
        assert!((back.positions[i] - c.positions[i]).norm() < 1e-9);
    }
}

fn local_problem<'a>(mock: &'a MockGuidance, spec: &'a GuidanceSpec, views: &'a Views) -> Problem<'a> {
    Problem {
        guidance: mock,
        spec,
        views,
        prompt: None,
        trainable: None,
    }
}

#[test]
fn local_edit_preserves_survivors_and_seeds_mean_color() {
    let (body, cloud) = chest_garment(3);
    let bg = Vector3::new(1.0, 1.0, 1.0);
    let mut target = cloud.clone();
    target.colors = vec![Vector3::new(0.9, 0.1, 0.1); target.len()];
    let mock = MockGuidance::new(MockTarget::Cloud(target), bg).unwrap();
    let spec = GuidanceSpec::mock();
    let views = fixed_views(2, 32);
    let cfg = OptimConfig {
        densify_interval: 5,
        ..small_cfg(12)
    };
    let problem = local_problem(&mock, &spec, &views);

    for names in [&["chest"][..], &["chest_pattern"][..]] {
        let region = RegionSpec::from_names(&body, names).unwrap();
        let edit = edit_local(&cloud, &body, &region, &InitConfig::default(), &problem, &cfg).unwrap();
        let keep: Vec<bool> = cloud.labels.iter().map(|&l| !region.contains(l)).collect();
        let survivors = cloud.prune(&keep).unwrap();
        assert_eq!(edit.survivors, survivors.len());
        assert_eq!(edit.pruned, cloud.len() - survivors.len());
        let idx: Vec<usize> = (0..survivors.len()).collect();
        assert_eq!(edit.cloud.select(&idx), survivors);
        assert_eq!(edit.initial.select(&idx), survivors);
        let mean = survivors.mean_color().unwrap();
        for i in survivors.len()..edit.initial.len() {
            assert_eq!(edit.initial.colors[i], mean);
        }
        assert_eq!(
            edit.cloud.len() as isize - cloud.len() as isize,
            edit.added as isize - edit.pruned as isize
        );
        assert!(edit.added > 0);
    }

    // Labels present on the body but on no Gaussian: pure insertion.
    let head = RegionSpec::from_names(&body, &["head"]).unwrap();
    let edit = edit_local(&cloud, &body, &head, &InitConfig::default(), &problem, &cfg).unwrap();
    assert_eq!(edit.pruned, 0);
    assert_eq!(edit.cloud.select(&(0..cloud.len()).collect::<Vec<_>>()), cloud);
}

#[test]
fn optimizer_reports_and_is_deterministic() {
    let (_, cloud) = chest_garment(5);
    let bg = Vector3::new(1.0, 1.0, 1.0);
    let mut target = cloud.clone();
    target.colors = vec![Vector3::new(0.2, 0.3, 0.8); target.len()];
    let mock = MockGuidance::new(MockTarget::Cloud(target), bg).unwrap();
    let spec = GuidanceSpec::mock();
    let views = Views::Random(ViewConfig {
        target: [0.0, 1.2, 0.0],
        radius: 1.6,
        width: 32,
        height: 32,
        ..ViewConfig::default()
    });
    let problem = local_problem(&mock, &spec, &views);

    let one = optimize(&cloud, &problem, &small_cfg(1)).unwrap();
    assert_eq!(one.report.rows.len(), 1);
    assert!(one
        .report
        .to_csv(false)
        .starts_with("iter,loss_image,grad_norm,points,ms\n"));

    let cfg = OptimConfig {
        densify_interval: 10,
        ..small_cfg(30)
    };
    let a = optimize(&cloud, &problem, &cfg).unwrap();
    let b = optimize(&cloud, &problem, &cfg).unwrap();
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.report.to_csv(false), b.report.to_csv(false));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| optimize(&cloud, &problem, &cfg)).unwrap();
    assert_eq!(a.cloud, c.cloud);
    let other = optimize(&cloud, &problem, &OptimConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.report.to_csv(false), other.report.to_csv(false));

    let color_only = OptimConfig {
        lr_position: 0.0,
        lr_scale: 0.0,
        lr_opacity: 0.0,
        densify: false,
        ..cfg.clone()
    };
    let iso = optimize(&cloud, &problem, &color_only).unwrap();
    assert_eq!(iso.cloud.positions, cloud.positions);
    assert_eq!(iso.cloud.scales, cloud.scales);
    assert_eq!(iso.cloud.opacities, cloud.opacities);
    assert_ne!(iso.cloud.colors, cloud.colors);
}
