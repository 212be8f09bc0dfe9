//! Procedural low-poly humanoid used as a stand-in body in tests and demos.
//!
//! Capsule-ish tubes for torso, neck, head and limbs in a T-pose (y up,
//! facing +z, character's left on +x), 17 joints, 22 semantic labels, two
//! shape directions (height, girth) and one expression direction.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{BodyData, SkinnedBody, ROOT_PARENT};
use crate::error::{Error, Result};

/// Label table of the test humanoid, indexed by label id.
pub const HUMANOID_LABELS: [&str; 22] = [
    "head",
    "neck",
    "chest",
    "chest_pattern",
    "abdomen",
    "pelvis",
    "upper_arm_l",
    "upper_arm_r",
    "lower_arm_l",
    "lower_arm_r",
    "hand_l",
    "hand_r",
    "armpit_l",
    "armpit_r",
    "torso_side_l",
    "torso_side_r",
    "thigh_l",
    "thigh_r",
    "calf_l",
    "calf_r",
    "foot_l",
    "foot_r",
];

#[derive(Clone, Copy)]
#[repr(u16)]
enum L {
    Head = 0,
    Neck,
    Chest,
    ChestPattern,
    Abdomen,
    Pelvis,
    UpperArmL,
    UpperArmR,
    LowerArmL,
    LowerArmR,
    HandL,
    HandR,
    ArmpitL,
    ArmpitR,
    SideL,
    SideR,
    ThighL,
    ThighR,
    CalfL,
    CalfR,
    FootL,
    FootR,
}

// Joint indices.
const PELVIS: u32 = 0;
const SPINE: u32 = 1;
const CHEST: u32 = 2;
const NECK: u32 = 3;
const HEAD: u32 = 4;
const SHOULDER_L: u32 = 5;
const ELBOW_L: u32 = 6;
const WRIST_L: u32 = 7;
const SHOULDER_R: u32 = 8;
const ELBOW_R: u32 = 9;
const WRIST_R: u32 = 10;
const HIP_L: u32 = 11;
const KNEE_L: u32 = 12;
const ANKLE_L: u32 = 13;
const HIP_R: u32 = 14;
const KNEE_R: u32 = 15;
const ANKLE_R: u32 = 16;

const NUM_BETAS: usize = 2;
const NUM_EXPRS: usize = 1;

/// Build the humanoid with `segments` rings per body part and `radial`
/// vertices per ring. Deterministic in its arguments.
pub fn make_test_humanoid(segments: usize, radial: usize) -> Result<SkinnedBody> {
    if segments < 2 {
        return Err(Error::invalid(format!("segments must be >= 2, got {segments}")));
    }
    if radial < 3 {
        return Err(Error::invalid(format!("radial must be >= 3, got {radial}")));
    }
    let mut b = Builder::new(radial);
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());

    // Torso in three stacked zones around the +y axis; ring angle 0 points to
    // the character's left (+x), a quarter turn points to the front (+z).
    let side_l = |k: usize| angle_near(k, radial, 0.0);
    let side_r = |k: usize| k == (radial as f64 / 2.0).round() as usize || angle_near(k, radial, PI);
    let front = |k: usize| k == (radial as f64 / 4.0).round() as usize || angle_near(k, radial, PI / 2.0);
    let torso_radii = (0.16, 0.11);
    let zones = [(0.85, 0.98), (0.98, 1.18), (1.18, 1.46)];
    let mut first_ring = None;
    let mut prev_ring: Option<usize> = None;
    for (zone, &(y0, y1)) in zones.iter().enumerate() {
        for i in 0..segments {
            let u = (i as f64 + 0.5) / segments as f64;
            let center = Vector3::new(0.0, y0 + u * (y1 - y0), 0.0);
            let top = zone == 2 && i + 1 == segments;
            let ring = b.ring(center, x, z, torso_radii, |k| {
                let label = match zone {
                    0 => L::Pelvis,
                    1 if side_l(k) => L::SideL,
                    1 if side_r(k) => L::SideR,
                    1 => L::Abdomen,
                    _ if top && side_l(k) => L::ArmpitL,
                    _ if top && side_r(k) => L::ArmpitR,
                    _ if top => L::Chest,
                    _ if side_l(k) => L::SideL,
                    _ if side_r(k) => L::SideR,
                    _ if front(k) => L::ChestPattern,
                    _ => L::Chest,
                };
                let weights = match (zone, label) {
                    (0, _) => vec![(PELVIS, 1.0)],
                    (1, _) => blend(SPINE, PELVIS, u),
                    (_, L::ArmpitL) => vec![(CHEST, 0.6), (SHOULDER_L, 0.4)],
                    (_, L::ArmpitR) => vec![(CHEST, 0.6), (SHOULDER_R, 0.4)],
                    _ => blend(CHEST, SPINE, u),
                };
                (label, weights)
            });
            if let Some(p) = prev_ring {
                b.bridge(p, ring);
            } else {
                first_ring = Some(ring);
            }
            prev_ring = Some(ring);
        }
    }
    b.cap(
        first_ring.unwrap(),
        Vector3::new(0.0, 0.85, 0.0),
        L::Pelvis,
        vec![(PELVIS, 1.0)],
    );
    b.cap(
        prev_ring.unwrap(),
        Vector3::new(0.0, 1.46, 0.0),
        L::Chest,
        vec![(CHEST, 1.0)],
    );

    // Neck and head.
    b.tube(
        Vector3::new(0.0, 1.46, 0.0),
        Vector3::new(0.0, 1.56, 0.0),
        0.05,
        segments,
        (x, z),
        |_, u| (L::Neck, blend(NECK, CHEST, u)),
        None,
    );
    b.tube(
        Vector3::new(0.0, 1.56, 0.0),
        Vector3::new(0.0, 1.80, 0.0),
        0.09,
        segments,
        (x, z),
        |_, u| (L::Head, blend(HEAD, NECK, u)),
        Some((L::Head, vec![(HEAD, 1.0)])),
    );

    // Arms along ±x; ring angle 0 points down so the first upper-arm ring's
    // lowest vertex is the inner (armpit) side.
    for (sign, upper, lower, hand, pit, sh, el, wr) in [
        (
            1.0,
            L::UpperArmL,
            L::LowerArmL,
            L::HandL,
            L::ArmpitL,
            SHOULDER_L,
            ELBOW_L,
            WRIST_L,
        ),
        (
            -1.0,
            L::UpperArmR,
            L::LowerArmR,
            L::HandR,
            L::ArmpitR,
            SHOULDER_R,
            ELBOW_R,
            WRIST_R,
        ),
    ] {
        let at = |px: f64| Vector3::new(sign * px, 1.40, 0.0);
        b.tube(
            at(0.17),
            at(0.46),
            0.05,
            segments,
            (-y, z),
            |k, u| {
                let label = if u < 0.5 && k == 0 { pit } else { upper };
                (label, blend(sh, CHEST, u))
            },
            None,
        );
        b.tube(
            at(0.46),
            at(0.72),
            0.04,
            segments,
            (-y, z),
            |_, u| (lower, blend(el, sh, u)),
            None,
        );
        b.tube(
            at(0.72),
            at(0.88),
            0.035,
            segments,
            (-y, z),
            |_, u| (hand, blend(wr, el, u)),
            Some((hand, vec![(wr, 1.0)])),
        );
    }

    // Legs along -y, feet along +z.
    for (sign, thigh, calf, foot, hip, knee, ankle) in [
        (1.0, L::ThighL, L::CalfL, L::FootL, HIP_L, KNEE_L, ANKLE_L),
        (-1.0, L::ThighR, L::CalfR, L::FootR, HIP_R, KNEE_R, ANKLE_R),
    ] {
        let at = |py: f64| Vector3::new(sign * 0.09, py, 0.0);
        b.tube(
            at(0.86),
            at(0.50),
            0.07,
            segments,
            (x, z),
            |_, u| (thigh, blend(hip, PELVIS, u)),
            None,
        );
        b.tube(
            at(0.50),
            at(0.08),
            0.05,
            segments,
            (x, z),
            |_, u| (calf, blend(knee, hip, u)),
            None,
        );
        b.tube(
            Vector3::new(sign * 0.09, 0.04, -0.03),
            Vector3::new(sign * 0.09, 0.04, 0.18),
            0.04,
            segments,
            (x, y),
            |_, u| (foot, blend(ankle, knee, u)),
            Some((foot, vec![(ankle, 1.0)])),
        );
    }

    let joints = vec![
        Vector3::new(0.0, 0.93, 0.0),
        Vector3::new(0.0, 1.05, 0.0),
        Vector3::new(0.0, 1.25, 0.0),
        Vector3::new(0.0, 1.46, 0.0),
        Vector3::new(0.0, 1.58, 0.0),
        Vector3::new(0.17, 1.40, 0.0),
        Vector3::new(0.46, 1.40, 0.0),
        Vector3::new(0.72, 1.40, 0.0),
        Vector3::new(-0.17, 1.40, 0.0),
        Vector3::new(-0.46, 1.40, 0.0),
        Vector3::new(-0.72, 1.40, 0.0),
        Vector3::new(0.09, 0.88, 0.0),
        Vector3::new(0.09, 0.50, 0.0),
        Vector3::new(0.09, 0.08, 0.0),
        Vector3::new(-0.09, 0.88, 0.0),
        Vector3::new(-0.09, 0.50, 0.0),
        Vector3::new(-0.09, 0.08, 0.0),
    ];
    let parents = vec![
        ROOT_PARENT,
        PELVIS as i32,
        SPINE as i32,
        CHEST as i32,
        NECK as i32,
        CHEST as i32,
        SHOULDER_L as i32,
        ELBOW_L as i32,
        CHEST as i32,
        SHOULDER_R as i32,
        ELBOW_R as i32,
        PELVIS as i32,
        HIP_L as i32,
        KNEE_L as i32,
        PELVIS as i32,
        HIP_R as i32,
        KNEE_R as i32,
    ];

    let label_names = HUMANOID_LABELS
        .iter()
        .enumerate()
        .map(|(i, n)| (i as u16, n.to_string()))
        .collect();
    SkinnedBody::new(BodyData {
        vertices: b.verts,
        faces: b.faces,
        joints,
        parents,
        weights: b.weights,
        num_betas: NUM_BETAS,
        shape_dirs: b.shape_dirs,
        num_exprs: NUM_EXPRS,
        expr_dirs: b.expr_dirs,
        labels: b.labels,
        label_names,
    })
}

fn angle_near(k: usize, radial: usize, target: f64) -> bool {
    let phi = 2.0 * PI * k as f64 / radial as f64;
    let mut d = (phi - target).abs() % (2.0 * PI);
    if d > PI {
        d = 2.0 * PI - d;
    }
    d < 35f64.to_radians()
}

/// Bone weight ramp: half-and-half with the parent at the part's start,
/// fully on the bone from the middle on.
fn blend(bone: u32, parent: u32, u: f64) -> Vec<(u32, f64)> {
    let w = (0.5 + u).min(1.0);
    if w >= 1.0 {
        vec![(bone, 1.0)]
    } else {
        vec![(bone, w), (parent, 1.0 - w)]
    }
}

struct Builder {
    radial: usize,
    verts: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    weights: Vec<Vec<(u32, f64)>>,
    labels: Vec<u16>,
    shape_dirs: Vec<f64>,
    expr_dirs: Vec<f64>,
    /// Per vertex: the axis point it was generated around (for face orientation).
    anchor: Vec<Vector3<f64>>,
}

impl Builder {
    fn new(radial: usize) -> Self {
        Self {
            radial,
            verts: Vec::new(),
            faces: Vec::new(),
            weights: Vec::new(),
            labels: Vec::new(),
            shape_dirs: Vec::new(),
            expr_dirs: Vec::new(),
            anchor: Vec::new(),
        }
    }

    fn push(&mut self, p: Vector3<f64>, anchor: Vector3<f64>, label: L, weights: Vec<(u32, f64)>) -> u32 {
        let idx = self.verts.len() as u32;
        let radial_off = p - anchor;
        // Height: 10 % per unit, girth: 20 % of the local radius per unit.
        let height = Vector3::new(0.0, 0.1 * p.y, 0.0);
        let girth = radial_off * 0.2;
        for axis in 0..3 {
            self.shape_dirs.push(height[axis]);
            self.shape_dirs.push(girth[axis]);
        }
        let puff = if matches!(label, L::Head) {
            radial_off * 0.1
        } else {
            Vector3::zeros()
        };
        self.expr_dirs.extend(puff.iter());
        self.verts.push(p);
        self.anchor.push(anchor);
        self.labels.push(label as u16);
        self.weights.push(weights);
        idx
    }

    /// One ring of `radial` vertices; returns the index of its first vertex.
    fn ring(
        &mut self,
        center: Vector3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        radii: (f64, f64),
        mut attr: impl FnMut(usize) -> (L, Vec<(u32, f64)>),
    ) -> usize {
        let start = self.verts.len();
        for k in 0..self.radial {
            let phi = 2.0 * PI * k as f64 / self.radial as f64;
            let p = center + e1 * (radii.0 * phi.cos()) + e2 * (radii.1 * phi.sin());
            let (label, w) = attr(k);
            self.push(p, center, label, w);
        }
        start
    }

    fn tube(
        &mut self,
        a: Vector3<f64>,
        b: Vector3<f64>,
        radius: f64,
        rings: usize,
        frame: (Vector3<f64>, Vector3<f64>),
        mut attr: impl FnMut(usize, f64) -> (L, Vec<(u32, f64)>),
        end_cap: Option<(L, Vec<(u32, f64)>)>,
    ) {
        let mut prev = None;
        for i in 0..rings {
            let u = (i as f64 + 0.5) / rings as f64;
            let center = a + (b - a) * u;
            let ring = self.ring(center, frame.0, frame.1, (radius, radius), |k| attr(k, u));
            if let Some(p) = prev {
                self.bridge(p, ring);
            }
            prev = Some(ring);
        }
        if let (Some((label, w)), Some(last)) = (end_cap, prev) {
            self.cap(last, b, label, w);
        }
    }

    fn bridge(&mut self, r0: usize, r1: usize) {
        let n = self.radial;
        for k in 0..n {
            let k1 = (k + 1) % n;
            let (a, b, c, d) = (r0 + k, r0 + k1, r1 + k1, r1 + k);
            self.tri(a, b, c);
            self.tri(a, c, d);
        }
    }

    fn cap(&mut self, ring: usize, center: Vector3<f64>, label: L, weights: Vec<(u32, f64)>) {
        // The cap centre is its own anchor; orient against the ring's centroid.
        let centroid = (0..self.radial).map(|k| self.verts[ring + k]).sum::<Vector3<f64>>() / self.radial as f64;
        let c = self.push(center, centroid, label, weights) as usize;
        let out = center - centroid;
        for k in 0..self.radial {
            let (a, b) = (ring + k, ring + (k + 1) % self.radial);
            let n = (self.verts[a] - self.verts[c]).cross(&(self.verts[b] - self.verts[c]));
            if n.dot(&out) >= 0.0 {
                self.faces.push([c as u32, a as u32, b as u32]);
            } else {
                self.faces.push([c as u32, b as u32, a as u32]);
            }
        }
    }

    fn tri(&mut self, a: usize, b: usize, c: usize) {
        let v = &self.verts;
        let n = (v[b] - v[a]).cross(&(v[c] - v[a]));
        let centroid = (v[a] + v[b] + v[c]) / 3.0;
        let anchor = (self.anchor[a] + self.anchor[b] + self.anchor[c]) / 3.0;
        if n.dot(&(centroid - anchor)) >= 0.0 {
            self.faces.push([a as u32, b as u32, c as u32]);
        } else {
            self.faces.push([a as u32, c as u32, b as u32]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{Pose, RegionSpec};

    #[test]
    fn deterministic_and_covers_every_label() {
        let a = make_test_humanoid(4, 8).unwrap();
        let b = make_test_humanoid(4, 8).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert!(a.num_joints() >= 16);
        for (id, name) in HUMANOID_LABELS.iter().enumerate() {
            let n = a.labels().iter().filter(|&&l| l == id as u16).count();
            assert!(n >= 1, "label {name} has no vertex");
        }
    }

    #[test]
    fn minimal_body_is_valid_and_covered() {
        let body = make_test_humanoid(2, 3).unwrap();
        for id in 0..HUMANOID_LABELS.len() as u16 {
            assert!(body.labels().contains(&id), "label {id} missing at (2, 3)");
        }
        let pose = Pose::zero(&body);
        assert_eq!(body.posed_vertices(&pose).unwrap(), body.vertices());
    }

    #[test]
    fn arguments_below_minimum_fail() {
        assert!(make_test_humanoid(1, 8).is_err());
        assert!(make_test_humanoid(4, 2).is_err());
    }

    #[test]
    fn armpit_is_strict_subset() {
        let body = make_test_humanoid(4, 8).unwrap();
        let region = RegionSpec::from_names(&body, &["armpit_l"]).unwrap();
        let verts = body.region_vertices(&region).unwrap();
        assert!(!verts.is_empty() && verts.len() < body.num_vertices());
    }

    #[test]
    fn normals_point_away_from_torso_axis() {
        let body = make_test_humanoid(4, 8).unwrap();
        let normals = body.vertex_normals();
        let chest = body.label_id("chest_pattern").unwrap();
        for (v, &l) in body.labels().iter().enumerate() {
            if l == chest {
                assert!(normals[v].z > 0.5, "front normal {:?}", normals[v]);
            }
        }
    }
}
