//! Isotropic Gaussian garment clouds.

mod knn;
mod ply;

use std::collections::HashSet;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

pub use knn::{knn, KdTree, KnnResult};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PLY_VERSION_COMMENT};

use crate::error::{check_dim, Error, Result};

/// Identity rotation, `(w, x, y, z)`.
pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// Struct-of-arrays Gaussian cloud. One scalar scale per point: the
/// covariance is `scale² · I`, so the rotation never changes the shape and is
/// kept only to carry orientation through deformations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    pub scales: Vec<f64>,
    /// Unit quaternions as `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    /// Linear RGB in `[0, 1]`.
    pub colors: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    pub labels: Vec<u16>,
    /// Bound body vertex, `None` while unbound.
    pub bind_idx: Vec<Option<u32>>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cloud at `positions` with neutral attributes: unit-less zero color,
    /// identity rotation, opacity 1, label 0, unbound.
    pub fn from_positions(positions: Vec<Vector3<f64>>, scale: f64) -> Self {
        let n = positions.len();
        Self {
            positions,
            scales: vec![scale; n],
            rotations: vec![IDENTITY_QUAT; n],
            colors: vec![Vector3::zeros(); n],
            opacities: vec![1.0; n],
            labels: vec![0; n],
            bind_idx: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks every structural and value invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        check_dim("scales", n, self.scales.len())?;
        check_dim("rotations", n, self.rotations.len())?;
        check_dim("colors", n, self.colors.len())?;
        check_dim("opacities", n, self.opacities.len())?;
        check_dim("labels", n, self.labels.len())?;
        check_dim("bind_idx", n, self.bind_idx.len())?;
        for i in 0..n {
            if !self.positions[i].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("position of gaussian {i}")));
            }
            if !(self.scales[i] > 0.0 && self.scales[i].is_finite()) {
                return Err(Error::invalid(format!("gaussian {i} has non-positive scale")));
            }
            let q = self.rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("gaussian {i} rotation is not unit")));
            }
            if !(0.0..=1.0).contains(&self.opacities[i]) {
                return Err(Error::invalid(format!("gaussian {i} opacity out of [0, 1]")));
            }
            if !self.colors[i].iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("gaussian {i} color out of [0, 1]")));
            }
        }
        Ok(())
    }

    /// Keep the points whose mask entry is `true`, preserving order.
    pub fn prune(&self, keep: &[bool]) -> Result<GaussianCloud> {
        check_dim("keep mask", self.len(), keep.len())?;
        let idx: Vec<usize> = keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect();
        Ok(self.select(&idx))
    }

    /// Gather points by index (indices may repeat).
    pub fn select(&self, idx: &[usize]) -> GaussianCloud {
        GaussianCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            scales: idx.iter().map(|&i| self.scales[i]).collect(),
            rotations: idx.iter().map(|&i| self.rotations[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            opacities: idx.iter().map(|&i| self.opacities[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            bind_idx: idx.iter().map(|&i| self.bind_idx[i]).collect(),
        }
    }

    /// `self` followed by `other`.
    pub fn append(&self, other: &GaussianCloud) -> GaussianCloud {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    pub fn extend(&mut self, other: &GaussianCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.scales.extend_from_slice(&other.scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.colors.extend_from_slice(&other.colors);
        self.opacities.extend_from_slice(&other.opacities);
        self.labels.extend_from_slice(&other.labels);
        self.bind_idx.extend_from_slice(&other.bind_idx);
    }

    /// Bind every point to its nearest body vertex (ties to the lower index).
    pub fn bind_to_body(&self, body_vertices: &[Vector3<f64>]) -> Result<GaussianCloud> {
        if body_vertices.is_empty() {
            return Err(Error::invalid("cannot bind to an empty body"));
        }
        let mut out = self.clone();
        if self.is_empty() {
            return Ok(out);
        }
        let res = knn(body_vertices, &self.positions, 1)?;
        out.bind_idx = res.indices.iter().map(|&v| Some(v)).collect();
        Ok(out)
    }

    /// Carry each point by the affine transform of its bound vertex.
    /// Rotations are composed with the nearest rotation to the transform's
    /// linear part; scales, colors and opacities are untouched.
    pub fn deform_by_vertices(&self, transforms: &[Matrix4<f64>]) -> Result<GaussianCloud> {
        let mut out = self.clone();
        for i in 0..self.len() {
            let v = self.bind_idx[i].ok_or_else(|| Error::invalid(format!("gaussian {i} is not bound to the body")))?
                as usize;
            let m = transforms.get(v).ok_or_else(|| {
                Error::invalid(format!(
                    "gaussian {i} bound to vertex {v}, only {} transforms",
                    transforms.len()
                ))
            })?;
            out.positions[i] = transform_point(m, &self.positions[i]);
            let lin: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
            if lin != Matrix3::identity() {
                out.rotations[i] = compose(&nearest_rotation(&lin), &self.rotations[i]);
            }
        }
        Ok(out)
    }

    /// Column-wise mean color, `None` for an empty cloud.
    pub fn mean_color(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        Some(self.colors.iter().sum::<Vector3<f64>>() / self.len() as f64)
    }
}

#[inline]
pub(crate) fn transform_point(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let lin = m.fixed_view::<3, 3>(0, 0);
    let t = m.fixed_view::<3, 1>(0, 3);
    lin * p + t
}

/// Nearest rotation (polar factor) of a 3×3 matrix.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let r = Rotation3::from_matrix_eps(m, 1e-12, 100, Rotation3::identity());
    UnitQuaternion::from_rotation_matrix(&r)
}

/// `r ⊗ q` for `q` stored as `(w, x, y, z)`, renormalized.
pub(crate) fn compose(r: &UnitQuaternion<f64>, q: &[f64; 4]) -> [f64; 4] {
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    let p = r.quaternion() * q;
    let n = p.norm();
    [p.w / n, p.i / n, p.j / n, p.k / n]
}

/// Interpolated densification: for each point find its nearest other point,
/// and for every distinct unordered pair emit `k_interp` evenly spaced interior
/// points at fractions `i / (k_interp + 1)`. Output is the input followed by
/// the interpolants, in first-seen pair order.
pub fn interpolated_densify(points: &[Vector3<f64>], k_interp: usize) -> Result<Vec<Vector3<f64>>> {
    Ok(densify_pairs(points, k_interp)?.0)
}

/// As [`interpolated_densify`], also returning the `(from, to)` pair behind
/// each interpolant.
pub fn densify_pairs(points: &[Vector3<f64>], k_interp: usize) -> Result<(Vec<Vector3<f64>>, Vec<(usize, usize)>)> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "densification needs at least 2 points, got {}",
            points.len()
        )));
    }
    if k_interp < 1 {
        return Err(Error::invalid("k_interp must be at least 1"));
    }
    let tree = KdTree::new(points)?;
    let nn = tree.nearest_other();
    let mut seen = HashSet::new();
    let mut out = points.to_vec();
    let mut pairs = Vec::new();
    for (i, n) in nn.iter().enumerate() {
        let (j, _) = n.expect("at least two points");
        let j = j as usize;
        if !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        let (a, b) = (points[i], points[j]);
        for s in 1..=k_interp {
            let f = s as f64 / (k_interp + 1) as f64;
            out.push(a * (1.0 - f) + b * f);
            pairs.push((i, j));
        }
    }
    Ok((out, pairs))
}
