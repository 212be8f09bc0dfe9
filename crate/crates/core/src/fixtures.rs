//! Synthetic scenes on the test humanoid, shared by tests, benches and demos.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{make_test_humanoid, Pose, RegionSpec, SkinnedBody};
use crate::cloud::GaussianCloud;
use crate::error::Result;
use crate::init::{init_garment, InitConfig};

/// Labels covered by the synthetic jacket.
pub const JACKET_LABELS: [&str; 8] = [
    "chest",
    "abdomen",
    "armpit_l",
    "armpit_r",
    "torso_side_l",
    "torso_side_r",
    "upper_arm_l",
    "upper_arm_r",
];

/// Labels whose points become loose flaps.
pub const FLAP_LABELS: [&str; 4] = ["armpit_l", "armpit_r", "torso_side_l", "torso_side_r"];

/// Flap displacement range along the outward normal, meters.
pub const FLAP_RANGE: (f64, f64) = (0.005, 0.02);

#[derive(Clone, Debug)]
pub struct JacketFixture {
    pub body: SkinnedBody,
    /// Arms-down pose with a non-zero shape.
    pub pose: Pose,
    /// Tight garment on the template before any displacement.
    pub tight: GaussianCloud,
    /// Indices of displaced flap points.
    pub flaps: Vec<usize>,
    /// Displaced garment carried to `pose`.
    pub posed: GaussianCloud,
}

/// Arms lowered about 57 degrees from the T-pose.
pub fn a_pose(body: &SkinnedBody, beta: &[f64]) -> Pose {
    let mut pose = Pose::zero(body);
    pose.beta[..beta.len()].copy_from_slice(beta);
    pose.theta[5] = Vector3::new(0.0, 0.0, -1.0);
    pose.theta[8] = Vector3::new(0.0, 0.0, 1.0);
    pose
}

/// A tight jacket whose armpit and side points are pushed off the body on
/// about half the points, then posed into an A-pose.
pub fn a_pose_jacket(seed: u64) -> Result<JacketFixture> {
    let body = make_test_humanoid(6, 12)?;
    let region = RegionSpec::from_names(&body, &JACKET_LABELS)?;
    let tight = init_garment(
        &body,
        &region,
        &InitConfig {
            seed,
            ..InitConfig::default()
        },
    )?;
    let flap_region = RegionSpec::from_names(&body, &FLAP_LABELS)?;
    let normals = body.vertex_normals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut loose = tight.clone();
    let mut flaps = Vec::new();
    for i in 0..loose.len() {
        if !flap_region.contains(loose.labels[i]) || !rng.random_bool(0.5) {
            continue;
        }
        let v = loose.bind_idx[i].expect("init binds every point") as usize;
        let d = rng.random_range(FLAP_RANGE.0..FLAP_RANGE.1);
        loose.positions[i] += normals[v] * d;
        flaps.push(i);
    }
    let pose = a_pose(&body, &[0.3, -0.2]);
    let posed = loose.deform_by_vertices(&body.vertex_transforms(&pose)?)?;
    Ok(JacketFixture {
        body,
        pose,
        tight,
        flaps,
        posed,
    })
}
