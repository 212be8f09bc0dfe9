//! Neutral parametric skinned body with per-vertex semantic labels.
//!
//! The body carries a canonical T-pose template, linear shape and expression
//! blend directions, a joint tree and sparse skinning weights. Posing follows
//! the usual blend-shape then linear-blend-skinning pipeline:
//! shaped template, shaped joints, per-joint rigid transforms along the parent
//! chain, weight-blended per vertex.
//!
//! Shaped joints are regressed from the template: each joint moves by the
//! weight-averaged shape offset of the vertices for which it is the dominant
//! influence.

mod format;
mod humanoid;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Matrix4, Vector3};

pub use format::{load_body, read_body, save_body, write_body, BODY_MAGIC, BODY_VERSION};
pub use humanoid::{make_test_humanoid, HUMANOID_LABELS};

use crate::error::{check_dim, Error, Result};

/// Parent sentinel for the root joint.
pub const ROOT_PARENT: i32 = -1;

/// Tolerance on skinning-weight row sums.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

/// Raw body content, validated by [`SkinnedBody::new`].
///
/// `shape_dirs` is laid out `[vertex][axis][beta]`, `expr_dirs` likewise with
/// expression coefficients. `weights` holds one sparse row per vertex as
/// `(joint, weight)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BodyData {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub joints: Vec<Vector3<f64>>,
    pub parents: Vec<i32>,
    pub weights: Vec<Vec<(u32, f64)>>,
    pub num_betas: usize,
    pub shape_dirs: Vec<f64>,
    pub num_exprs: usize,
    pub expr_dirs: Vec<f64>,
    pub labels: Vec<u16>,
    pub label_names: BTreeMap<u16, String>,
}

/// An immutable, validated skinned body.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedBody {
    data: BodyData,
    /// Per joint, `(vertex, coefficient)` pairs whose coefficients sum to 1.
    regressor: Vec<Vec<(u32, f64)>>,
}

/// Shape, per-joint axis-angle pose and expression coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub beta: Vec<f64>,
    pub theta: Vec<Vector3<f64>>,
    pub psi: Vec<f64>,
}

/// A garment region as a set of semantic label ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSpec {
    labels: BTreeSet<u16>,
}

impl SkinnedBody {
    pub fn new(data: BodyData) -> Result<Self> {
        validate(&data)?;
        let regressor = build_regressor(&data);
        Ok(Self { data, regressor })
    }

    pub fn data(&self) -> &BodyData {
        &self.data
    }

    pub fn into_data(self) -> BodyData {
        self.data
    }

    pub fn num_vertices(&self) -> usize {
        self.data.vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.data.joints.len()
    }

    pub fn num_betas(&self) -> usize {
        self.data.num_betas
    }

    pub fn num_exprs(&self) -> usize {
        self.data.num_exprs
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.data.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.data.faces
    }

    pub fn joints(&self) -> &[Vector3<f64>] {
        &self.data.joints
    }

    pub fn parents(&self) -> &[i32] {
        &self.data.parents
    }

    pub fn weights(&self) -> &[Vec<(u32, f64)>] {
        &self.data.weights
    }

    pub fn labels(&self) -> &[u16] {
        &self.data.labels
    }

    pub fn label_names(&self) -> &BTreeMap<u16, String> {
        &self.data.label_names
    }

    pub fn label_id(&self, name: &str) -> Option<u16> {
        self.data
            .label_names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(id, _)| *id)
    }

    pub fn label_name(&self, id: u16) -> Option<&str> {
        self.data.label_names.get(&id).map(String::as_str)
    }

    /// Shape direction `beta` for vertex `v`, i.e. column `beta` of the blend matrix.
    pub fn shape_dir(&self, v: usize, beta: usize) -> Vector3<f64> {
        let b = self.data.num_betas;
        let base = v * 3 * b;
        Vector3::new(
            self.data.shape_dirs[base + beta],
            self.data.shape_dirs[base + b + beta],
            self.data.shape_dirs[base + 2 * b + beta],
        )
    }

    /// Area-weighted vertex normals of the canonical template. Isolated
    /// vertices get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let verts = &self.data.vertices;
        let mut normals = vec![Vector3::zeros(); verts.len()];
        for f in &self.data.faces {
            let [a, b, c] = f.map(|i| i as usize);
            let n = (verts[b] - verts[a]).cross(&(verts[c] - verts[a]));
            for i in [a, b, c] {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    fn check_pose(&self, pose: &Pose) -> Result<()> {
        check_dim("pose beta", self.num_betas(), pose.beta.len())?;
        check_dim("pose theta", self.num_joints(), pose.theta.len())?;
        check_dim("pose psi", self.num_exprs(), pose.psi.len())?;
        pose.validate()
    }

    /// Per-vertex blend-shape offsets `S·beta + E·psi`.
    fn blend_offsets(&self, beta: &[f64], psi: &[f64]) -> Vec<Vector3<f64>> {
        let (b, e) = (self.data.num_betas, self.data.num_exprs);
        (0..self.num_vertices())
            .map(|v| {
                let mut off = Vector3::zeros();
                for axis in 0..3 {
                    let srow = &self.data.shape_dirs[(v * 3 + axis) * b..(v * 3 + axis + 1) * b];
                    let erow = &self.data.expr_dirs[(v * 3 + axis) * e..(v * 3 + axis + 1) * e];
                    let mut acc = 0.0;
                    for (d, c) in srow.iter().zip(beta) {
                        acc += d * c;
                    }
                    for (d, c) in erow.iter().zip(psi) {
                        acc += d * c;
                    }
                    off[axis] = acc;
                }
                off
            })
            .collect()
    }

    fn shaped_joints(&self, offsets: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.data
            .joints
            .iter()
            .zip(&self.regressor)
            .map(|(j, reg)| {
                let mut shift = Vector3::zeros();
                for &(v, c) in reg {
                    shift += offsets[v as usize] * c;
                }
                j + shift
            })
            .collect()
    }

    /// Joint locations after shape and expression blending (rest pose).
    pub fn regressed_joints(&self, beta: &[f64], psi: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_dim("beta", self.num_betas(), beta.len())?;
        check_dim("psi", self.num_exprs(), psi.len())?;
        Ok(self.shaped_joints(&self.blend_offsets(beta, psi)))
    }

    fn skin(&self, pose: &Pose) -> Result<Skinning> {
        self.check_pose(pose)?;
        let offsets = self.blend_offsets(&pose.beta, &pose.psi);
        let joints = self.shaped_joints(&offsets);
        let n = self.num_joints();
        let mut global = Vec::with_capacity(n);
        let mut disp: Vec<Vector3<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let local = rodrigues(&pose.theta[j]);
            let p = self.data.parents[j];
            if p == ROOT_PARENT {
                global.push(local);
                disp.push(Vector3::zeros());
            } else {
                let p = p as usize;
                let rp: Matrix3<f64> = global[p];
                let d = disp[p] + (rp - Matrix3::identity()) * (joints[j] - joints[p]);
                global.push(rp * local);
                disp.push(d);
            }
        }
        // Joint j displaces a point x by (R_j - I)(x - J_j) + d_j.
        let linear: Vec<Matrix3<f64>> = global.iter().map(|r| r - Matrix3::identity()).collect();
        let bias: Vec<Vector3<f64>> = (0..n).map(|j| disp[j] - linear[j] * joints[j]).collect();
        Ok(Skinning {
            offsets,
            joints,
            global,
            linear,
            bias,
        })
    }

    fn blended(&self, sk: &Skinning, v: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let mut l = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for &(j, w) in &self.data.weights[v] {
            l += sk.linear[j as usize] * w;
            b += sk.bias[j as usize] * w;
        }
        (l, b)
    }

    /// Posed surface `M(beta, theta, psi)`.
    pub fn posed_vertices(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
        let sk = self.skin(pose)?;
        Ok((0..self.num_vertices())
            .map(|v| {
                let shaped = self.data.vertices[v] + sk.offsets[v];
                let (l, b) = self.blended(&sk, v);
                shaped + (l * shaped + b)
            })
            .collect())
    }

    /// Posed joint locations (the images of the shaped joints).
    pub fn posed_joints(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
        let sk = self.skin(pose)?;
        Ok(sk
            .joints
            .iter()
            .zip(&sk.bias)
            .zip(&sk.linear)
            .map(|((j, b), l)| j + (l * j + b))
            .collect())
    }

    /// Global joint rotations for `pose`.
    pub fn joint_rotations(&self, pose: &Pose) -> Result<Vec<Matrix3<f64>>> {
        Ok(self.skin(pose)?.global)
    }

    /// Per-vertex affine maps taking canonical vertex `v` to its posed location,
    /// blend shapes included.
    pub fn vertex_transforms(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        let sk = self.skin(pose)?;
        Ok((0..self.num_vertices())
            .map(|v| {
                let (l, b) = self.blended(&sk, v);
                let lin = Matrix3::identity() + l;
                let t = lin * sk.offsets[v] + b;
                affine(&lin, &t)
            })
            .collect())
    }

    /// Per-vertex affine maps taking the shaped rest surface (zero pose, same
    /// `beta` and `psi`) to the posed surface. The zero pose gives exact
    /// identities.
    pub fn rest_to_posed_transforms(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        let sk = self.skin(pose)?;
        Ok((0..self.num_vertices())
            .map(|v| {
                let (l, b) = self.blended(&sk, v);
                affine(&(Matrix3::identity() + l), &b)
            })
            .collect())
    }

    /// Shaped rest surface for the shape and expression of `pose`.
    pub fn rest_vertices(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
        let rest = Pose {
            theta: vec![Vector3::zeros(); self.num_joints()],
            ..pose.clone()
        };
        self.posed_vertices(&rest)
    }

    /// Vertices whose label is in `region`, ascending.
    pub fn region_vertices(&self, region: &RegionSpec) -> Result<Vec<usize>> {
        region.check(self)?;
        Ok(self
            .data
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| region.contains(**l))
            .map(|(i, _)| i)
            .collect())
    }

    /// Rest-pose displacement from the `beta_src` shaped surface to the
    /// `beta_dst` shaped surface.
    pub fn shape_transforms(&self, beta_src: &[f64], beta_dst: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_dim("beta_src", self.num_betas(), beta_src.len())?;
        check_dim("beta_dst", self.num_betas(), beta_dst.len())?;
        let delta: Vec<f64> = beta_dst.iter().zip(beta_src).map(|(d, s)| d - s).collect();
        let psi = vec![0.0; self.num_exprs()];
        Ok(self.blend_offsets(&delta, &psi))
    }
}

struct Skinning {
    offsets: Vec<Vector3<f64>>,
    joints: Vec<Vector3<f64>>,
    global: Vec<Matrix3<f64>>,
    linear: Vec<Matrix3<f64>>,
    bias: Vec<Vector3<f64>>,
}

pub(crate) fn affine(lin: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(lin);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Axis-angle to rotation matrix. Zero maps to the exact identity.
pub fn rodrigues(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = r / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

impl Pose {
    /// All-zero pose sized for `body` (T-pose, mean shape, neutral expression).
    pub fn zero(body: &SkinnedBody) -> Self {
        Self {
            beta: vec![0.0; body.num_betas()],
            theta: vec![Vector3::zeros(); body.num_joints()],
            psi: vec![0.0; body.num_exprs()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.beta.iter().chain(&self.psi).all(|v| v.is_finite())
            && self.theta.iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("pose".into()));
        }
        if let Some(j) = self.theta.iter().position(|t| t.norm() >= std::f64::consts::PI) {
            return Err(Error::invalid(format!("joint {j} rotation angle must be below pi")));
        }
        Ok(())
    }
}

impl RegionSpec {
    pub fn new(labels: impl IntoIterator<Item = u16>) -> Self {
        Self {
            labels: labels.into_iter().collect(),
        }
    }

    /// Resolve label names against `body`.
    pub fn from_names<S: AsRef<str>>(body: &SkinnedBody, names: &[S]) -> Result<Self> {
        let mut labels = BTreeSet::new();
        for name in names {
            let name = name.as_ref().trim();
            let id = body
                .label_id(name)
                .ok_or_else(|| Error::UnknownLabel(name.to_string()))?;
            labels.insert(id);
        }
        let region = Self { labels };
        region.check(body)?;
        Ok(region)
    }

    /// Every label of `body`.
    pub fn all(body: &SkinnedBody) -> Self {
        Self::new(body.label_names().keys().copied())
    }

    pub fn labels(&self) -> &BTreeSet<u16> {
        &self.labels
    }

    pub fn contains(&self, label: u16) -> bool {
        self.labels.contains(&label)
    }

    pub fn union(&self, other: &RegionSpec) -> RegionSpec {
        Self {
            labels: self.labels.union(&other.labels).copied().collect(),
        }
    }

    pub fn check(&self, body: &SkinnedBody) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::invalid("region has no labels"));
        }
        for l in &self.labels {
            if !body.label_names().contains_key(l) {
                return Err(Error::UnknownLabel(format!("id {l}")));
            }
        }
        Ok(())
    }
}

fn validate(d: &BodyData) -> Result<()> {
    let nv = d.vertices.len();
    let nj = d.joints.len();
    if nv == 0 {
        return Err(Error::format("body has no vertices"));
    }
    if nj == 0 {
        return Err(Error::format("body has no joints"));
    }
    if !d
        .vertices
        .iter()
        .chain(&d.joints)
        .all(|v| v.iter().all(|x| x.is_finite()))
    {
        return Err(Error::NonFinite("body vertices or joints".into()));
    }
    for (fi, f) in d.faces.iter().enumerate() {
        if f.iter().any(|&i| i as usize >= nv) {
            return Err(Error::format(format!("face index out of range (face {fi})")));
        }
    }
    check_dim("parents", nj, d.parents.len())?;
    let mut roots = 0;
    for (j, &p) in d.parents.iter().enumerate() {
        if p == ROOT_PARENT {
            roots += 1;
        } else if p < 0 || p as usize >= j {
            return Err(Error::format(format!("joint {j}: parent {p} must be an earlier joint")));
        }
    }
    if roots != 1 {
        return Err(Error::format(format!("joint tree must have one root, found {roots}")));
    }
    check_dim("skinning weight rows", nv, d.weights.len())?;
    for (v, row) in d.weights.iter().enumerate() {
        let mut seen = BTreeSet::new();
        let mut sum = 0.0;
        for &(j, w) in row {
            if j as usize >= nj {
                return Err(Error::format(format!(
                    "skinning weight joint index out of range (vertex {v})"
                )));
            }
            if !seen.insert(j) {
                return Err(Error::format(format!(
                    "duplicate skinning weight (vertex {v}, joint {j})"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::format(format!("negative skinning weight (vertex {v})")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::format(format!(
                "unnormalized skinning weights (vertex {v} sums to {sum})"
            )));
        }
    }
    check_dim("shape_dirs", nv * 3 * d.num_betas, d.shape_dirs.len())?;
    check_dim("expr_dirs", nv * 3 * d.num_exprs, d.expr_dirs.len())?;
    if !d.shape_dirs.iter().chain(&d.expr_dirs).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("blend directions".into()));
    }
    check_dim("labels", nv, d.labels.len())?;
    if let Some((v, l)) = d
        .labels
        .iter()
        .enumerate()
        .find(|(_, l)| !d.label_names.contains_key(l))
    {
        return Err(Error::format(format!("vertex {v} has undeclared label {l}")));
    }
    Ok(())
}

fn build_regressor(d: &BodyData) -> Vec<Vec<(u32, f64)>> {
    let nj = d.joints.len();
    let mut dominant: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nj];
    let mut any: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nj];
    for (v, row) in d.weights.iter().enumerate() {
        let mut best: Option<(u32, f64)> = None;
        for &(j, w) in row {
            if w > 0.0 {
                any[j as usize].push((v as u32, w));
                if best.is_none_or(|(bj, bw)| w > bw || (w == bw && j < bj)) {
                    best = Some((j, w));
                }
            }
        }
        if let Some((j, w)) = best {
            dominant[j as usize].push((v as u32, w));
        }
    }
    dominant
        .into_iter()
        .zip(any)
        .map(|(dom, any)| {
            let mut set = if dom.is_empty() { any } else { dom };
            let total: f64 = set.iter().map(|(_, w)| w).sum();
            if total > 0.0 {
                set.iter_mut().for_each(|(_, w)| *w /= total);
            }
            set
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector4;

    /// Two joints along +x, four vertices: two rigid on each joint, one 50/50.
    fn two_bone() -> SkinnedBody {
        let vertices = vec![
            Vector3::new(0.2, 0.1, 0.0),
            Vector3::new(1.5, 0.1, 0.0),
            Vector3::new(1.0, -0.2, 0.3),
            Vector3::new(1.8, 0.0, -0.1),
        ];
        let data = BodyData {
            faces: vec![[0, 1, 2], [1, 3, 2]],
            joints: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
            parents: vec![ROOT_PARENT, 0],
            weights: vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
            num_betas: 1,
            shape_dirs: vec![0.0, 0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.3, 0.1, 0.0, 0.0],
            num_exprs: 0,
            expr_dirs: vec![],
            labels: vec![0, 1, 1, 1],
            label_names: [(0, "a".to_string()), (1, "b".to_string())].into(),
            vertices,
        };
        SkinnedBody::new(data).unwrap()
    }

    #[test]
    fn zero_pose_is_exact_identity() {
        let body = two_bone();
        let pose = Pose::zero(&body);
        assert_eq!(body.posed_vertices(&pose).unwrap(), body.vertices());
        for m in body.vertex_transforms(&pose).unwrap() {
            assert_eq!(m, Matrix4::identity());
        }
    }

    #[test]
    fn rest_to_posed_maps_shaped_rest_onto_posed() {
        let body = make_test_humanoid(3, 6).unwrap();
        let mut pose = Pose::zero(&body);
        pose.beta = vec![0.5, -0.3];
        for m in body.rest_to_posed_transforms(&pose).unwrap() {
            assert_eq!(m, Matrix4::identity());
        }
        pose.theta[5] = Vector3::new(0.0, 0.0, -0.6);
        pose.theta[12] = Vector3::new(0.4, 0.0, 0.0);
        let rest = body.rest_vertices(&pose).unwrap();
        let posed = body.posed_vertices(&pose).unwrap();
        let ms = body.rest_to_posed_transforms(&pose).unwrap();
        for v in 0..rest.len() {
            let p = ms[v] * rest[v].push(1.0);
            assert!((p.xyz() - posed[v]).norm() < 1e-12);
        }
    }

    #[test]
    fn rigid_vertex_follows_joint_rotation() {
        let body = two_bone();
        let mut pose = Pose::zero(&body);
        pose.theta[1] = Vector3::new(0.0, 0.0, 0.7);
        let posed = body.posed_vertices(&pose).unwrap();
        // Vertex 1 is fully bound to joint 1 at (1, 0, 0); root is unrotated.
        let (s, c) = 0.7f64.sin_cos();
        let rel = body.vertices()[1] - Vector3::new(1.0, 0.0, 0.0);
        let expect = Vector3::new(1.0 + c * rel.x - s * rel.y, s * rel.x + c * rel.y, rel.z);
        assert!((posed[1] - expect).norm() < 1e-9);
        // Vertex 0 is on the root and does not move.
        assert!((posed[0] - body.vertices()[0]).norm() < 1e-15);
    }

    #[test]
    fn half_half_vertex_is_average_of_rigid_images() {
        let body = two_bone();
        let mut pose = Pose::zero(&body);
        pose.theta[0] = Vector3::new(0.3, -0.2, 0.1);
        pose.theta[1] = Vector3::new(0.0, 0.9, 0.0);
        let posed = body.posed_vertices(&pose).unwrap();
        let r0 = rodrigues(&pose.theta[0]);
        let r1 = r0 * rodrigues(&pose.theta[1]);
        let j1_posed = r0 * Vector3::new(1.0, 0.0, 0.0);
        let x = body.vertices()[2];
        let img0 = r0 * x;
        let img1 = r1 * (x - Vector3::new(1.0, 0.0, 0.0)) + j1_posed;
        assert!((posed[2] - (img0 + img1) * 0.5).norm() < 1e-9);
    }

    #[test]
    fn transforms_match_standard_chain_blend() {
        let body = two_bone();
        let mut pose = Pose::zero(&body);
        pose.theta[0] = Vector3::new(-0.4, 0.2, 0.5);
        pose.theta[1] = Vector3::new(0.6, 0.1, -0.3);
        let transforms = body.vertex_transforms(&pose).unwrap();
        let posed = body.posed_vertices(&pose).unwrap();
        // Standard forward kinematics: G_j = G_parent * [R_j | J_j - J_parent], then remove rest.
        let j = body.joints();
        let g0 = affine(&rodrigues(&pose.theta[0]), &j[0]);
        let g1 = g0 * affine(&rodrigues(&pose.theta[1]), &(j[1] - j[0]));
        let rest = |g: Matrix4<f64>, jj: Vector3<f64>| g * affine(&Matrix3::identity(), &(-jj));
        let g = [rest(g0, j[0]), rest(g1, j[1])];
        for (v, row) in body.weights().iter().enumerate() {
            let mut blend = Matrix4::zeros();
            for &(jj, w) in row {
                blend += g[jj as usize] * w;
            }
            assert!((blend - transforms[v]).abs().max() < 1e-12);
            let x = body.vertices()[v];
            let y = transforms[v] * Vector4::new(x.x, x.y, x.z, 1.0);
            assert!((y.xyz() - posed[v]).norm() < 1e-9);
        }
    }

    #[test]
    fn shape_transforms_follow_blend_directions() {
        let body = two_bone();
        assert!(body
            .shape_transforms(&[0.4], &[0.4])
            .unwrap()
            .iter()
            .all(|t| t.norm() == 0.0));
        let t = body.shape_transforms(&[0.0], &[1.0]).unwrap();
        for (v, tv) in t.iter().enumerate() {
            assert_eq!(*tv, body.shape_dir(v, 0));
        }
        let mut src = Pose::zero(&body);
        src.beta = vec![-0.3];
        let mut dst = Pose::zero(&body);
        dst.beta = vec![0.8];
        let a = body.posed_vertices(&src).unwrap();
        let b = body.posed_vertices(&dst).unwrap();
        let t = body.shape_transforms(&src.beta, &dst.beta).unwrap();
        for v in 0..body.num_vertices() {
            assert!((b[v] - a[v] - t[v]).norm() < 1e-12);
        }
    }

    #[test]
    fn shaped_joints_move_with_dominant_vertices() {
        let body = two_bone();
        let joints = body.regressed_joints(&[1.0], &[]).unwrap();
        // Joint 0 dominates vertex 0 and, through the 50/50 tie, vertex 2;
        // joint 1 dominates vertices 1 and 3.
        let expect0 = (Vector3::new(0.0, 0.1, 0.0) + Vector3::new(0.0, 0.0, 0.3) * 0.5) / 1.5;
        assert!((joints[0] - expect0).norm() < 1e-15);
        let expect = Vector3::new(1.0, 0.0, 0.0) + (Vector3::new(0.0, 0.2, 0.0) + Vector3::new(0.1, 0.0, 0.0)) * 0.5;
        assert!((joints[1] - expect).norm() < 1e-15);
    }

    #[test]
    fn pose_dimension_and_range_checks() {
        let body = two_bone();
        let mut pose = Pose::zero(&body);
        pose.theta.pop();
        assert!(matches!(body.posed_vertices(&pose), Err(Error::Dimension { .. })));
        let mut pose = Pose::zero(&body);
        pose.theta[0] = Vector3::new(4.0, 0.0, 0.0);
        assert!(body.posed_vertices(&pose).is_err());
        let mut pose = Pose::zero(&body);
        pose.beta[0] = f64::NAN;
        assert!(matches!(body.posed_vertices(&pose), Err(Error::NonFinite(_))));
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let base = two_bone().into_data();

        let mut d = base.clone();
        d.weights[2] = vec![(0, 0.45), (1, 0.45)];
        let err = SkinnedBody::new(d).unwrap_err().to_string();
        assert!(err.contains("unnormalized skinning weights"), "{err}");

        let mut d = base.clone();
        d.faces[1] = [1, 4, 2];
        let err = SkinnedBody::new(d).unwrap_err().to_string();
        assert!(err.contains("face index out of range"), "{err}");

        let mut d = base.clone();
        d.parents = vec![ROOT_PARENT, ROOT_PARENT];
        assert!(SkinnedBody::new(d).is_err());

        let mut d = base.clone();
        d.labels[0] = 9;
        assert!(SkinnedBody::new(d).is_err());

        let mut d = base;
        d.weights[0] = vec![(0, 1.2), (1, -0.2)];
        assert!(SkinnedBody::new(d).is_err());
    }

    #[test]
    fn region_queries() {
        let body = two_bone();
        let all = RegionSpec::all(&body);
        assert_eq!(body.region_vertices(&all).unwrap(), vec![0, 1, 2, 3]);
        let b = RegionSpec::from_names(&body, &["b"]).unwrap();
        assert_eq!(body.region_vertices(&b).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            RegionSpec::from_names(&body, &["sleeve"]),
            Err(Error::UnknownLabel(n)) if n == "sleeve"
        ));
        assert!(body.region_vertices(&RegionSpec::new([])).is_err());
        assert!(body.region_vertices(&RegionSpec::new([7])).is_err());
    }
}
