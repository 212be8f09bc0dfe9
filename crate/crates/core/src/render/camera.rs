//! Pinhole cameras.
//!
//! Camera space follows the computer-vision convention: +x right, +y down,
//! +z forward. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`, so its center is
//! at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;
pub const DEFAULT_FOV_Y_DEG: f64 = 45.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// Rigid world-to-camera transform.
    pub world_to_cam: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at the origin looking down +z, principal point at the image
    /// center, default clip planes.
    pub fn new(width: usize, height: usize, fx: f64, fy: f64) -> Self {
        Self {
            world_to_cam: Matrix4::identity(),
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    /// Square-pixel camera with vertical field of view `fov_y_deg`.
    pub fn with_fov(width: usize, height: usize, fov_y_deg: f64) -> Self {
        let f = height as f64 / 2.0 / (fov_y_deg.to_radians() / 2.0).tan();
        Self::new(width, height, f, f)
    }

    /// Replace the extrinsics so the camera sits at `eye` facing `target`.
    pub fn looking_at(mut self, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        self.world_to_cam = look_at(eye, target, up)?;
        Ok(self)
    }

    /// Camera on a sphere around `target`. Azimuth 0 looks from +z, positive
    /// elevation looks from above (+y).
    pub fn orbit(
        target: Vector3<f64>,
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let dir = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        Self::with_fov(width, height, DEFAULT_FOV_Y_DEG).looking_at(target + dir * radius, target, Vector3::y())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_cam.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera_space(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Mean focal length used for isotropic footprints.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite();
        if !(ok(self.fx) && ok(self.fy) && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be finite and > 0"));
        }
        if !(ok(self.cx) && ok(self.cy)) {
            return Err(Error::invalid("camera principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera width and height must be >= 1"));
        }
        if !(ok(self.near) && ok(self.far) && self.near < self.far) {
            return Err(Error::invalid("camera requires near < far"));
        }
        if !self.world_to_cam.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("camera world_to_cam".into()));
        }
        let r = self.rotation();
        let bottom = self.world_to_cam.fixed_view::<1, 4>(3, 0);
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-6
            || r.determinant() < 0.0
            || bottom != nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)
        {
            return Err(Error::invalid("camera world_to_cam must be a rigid transform"));
        }
        Ok(())
    }
}

/// World-to-camera transform for a camera at `eye` facing `target`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Matrix4<f64>> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::invalid("camera eye and target coincide"));
    }
    let f = forward.normalize();
    let mut right = f.cross(&up);
    if right.norm() < 1e-9 {
        // Looking straight along `up`: fall back to a perpendicular axis.
        let alt = if f.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        right = f.cross(&alt);
    }
    let right = right.normalize();
    let down = f.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), f.transpose()]);
    let t = -(r * eye);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    Ok(m)
}

/// Serializable camera description.
///
/// Either explicit intrinsics with a look-at pose, or an orbit around the
/// origin-centered `look_at` target with default intrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    Explicit {
        fx: f64,
        fy: f64,
        cx: Option<f64>,
        cy: Option<f64>,
        width: usize,
        height: usize,
        position: [f64; 3],
        look_at: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        #[serde(default = "default_near")]
        near: f64,
        #[serde(default = "default_far")]
        far: f64,
    },
    Orbit {
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        #[serde(default)]
        look_at: Option<[f64; 3]>,
        #[serde(default)]
        width: Option<usize>,
        #[serde(default)]
        height: Option<usize>,
    },
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

impl CameraSpec {
    /// Resolve to a camera; `default_size` fills in unspecified orbit sizes.
    pub fn to_camera(&self, default_size: usize) -> Result<Camera> {
        let cam = match *self {
            CameraSpec::Explicit {
                fx,
                fy,
                cx,
                cy,
                width,
                height,
                position,
                look_at,
                up,
                near,
                far,
            } => {
                let mut cam = Camera::new(width, height, fx, fy);
                cam.cx = cx.unwrap_or(cam.cx);
                cam.cy = cy.unwrap_or(cam.cy);
                cam.near = near;
                cam.far = far;
                cam.looking_at(position.into(), look_at.into(), up.into())?
            }
            CameraSpec::Orbit {
                azimuth_deg,
                elevation_deg,
                radius,
                look_at,
                width,
                height,
            } => Camera::orbit(
                look_at.map_or_else(Vector3::zeros, Vector3::from),
                azimuth_deg,
                elevation_deg,
                radius,
                width.unwrap_or(default_size),
                height.unwrap_or(default_size),
            )?,
        };
        cam.validate()?;
        Ok(cam)
    }
}
