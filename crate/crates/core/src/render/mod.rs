//! Deterministic CPU splatting of isotropic Gaussians.
//!
//! Forward: pinhole projection, one global stable depth sort (ties broken by
//! index), 16×16 tile binning and front-to-back compositing per pixel.
//! Backward: exact reverse-mode gradients of the compositing equation for
//! positions, scales, colors and opacities. Isotropic footprints do not
//! depend on orientation, so there is no rotation gradient.
//!
//! Tiles are processed in parallel but every pixel is composited
//! sequentially and per-tile gradient partials are reduced in tile order, so
//! results are bit-identical regardless of thread count.

mod camera;

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

pub use camera::{look_at, Camera, CameraSpec, DEFAULT_FAR, DEFAULT_FOV_Y_DEG, DEFAULT_NEAR};

use crate::cloud::GaussianCloud;
use crate::error::{check_dim, Result};
use crate::image::Image;

/// Upper bound on a single Gaussian's per-pixel opacity.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Footprint radius in units of `sigma2d`.
pub const CUTOFF_SIGMAS: f64 = 3.0;
pub const TILE: usize = 16;
/// Depth written where no Gaussian contributes.
pub const DEPTH_SENTINEL: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    /// Pixel coordinates; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub mean2d: Vector2<f64>,
    pub sigma2d: f64,
    /// Camera-space z, meters.
    pub depth: f64,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Linear RGB, 3 channels.
    pub rgb: Image,
    /// Accumulated opacity `1 − T_final`, 1 channel.
    pub alpha: Image,
    /// Contribution-weighted mean depth, or [`DEPTH_SENTINEL`], 1 channel.
    pub depth: Image,
}

/// Gradients of a scalar loss with respect to the cloud attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderGrads {
    pub d_position: Vec<Vector3<f64>>,
    pub d_scale: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_opacity: Vec<f64>,
}

impl RenderGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_position: vec![Vector3::zeros(); n],
            d_scale: vec![0.0; n],
            d_color: vec![Vector3::zeros(); n],
            d_opacity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_scale.is_empty()
    }

    pub fn add_assign(&mut self, other: &RenderGrads) -> Result<()> {
        check_dim("gradient length", self.len(), other.len())?;
        for i in 0..self.len() {
            self.d_position[i] += other.d_position[i];
            self.d_scale[i] += other.d_scale[i];
            self.d_color[i] += other.d_color[i];
            self.d_opacity[i] += other.d_opacity[i];
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.d_position.iter_mut().for_each(|g| *g *= k);
        self.d_scale.iter_mut().for_each(|g| *g *= k);
        self.d_color.iter_mut().for_each(|g| *g *= k);
        self.d_opacity.iter_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.d_position.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.d_scale.iter().all(|x| x.is_finite())
            && self.d_color.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.d_opacity.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm over all blocks.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.d_position.iter().map(|g| g.norm_squared()).sum::<f64>()
            + self.d_scale.iter().map(|x| x * x).sum::<f64>()
            + self.d_color.iter().map(|g| g.norm_squared()).sum::<f64>()
            + self.d_opacity.iter().map(|x| x * x).sum::<f64>();
        sq.sqrt()
    }
}

/// Project every Gaussian; invisible ones are flagged, not dropped.
pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Vec<Projected> {
    let r = camera.rotation();
    let t = camera.translation();
    let f = camera.focal();
    let (w, h) = (camera.width as f64, camera.height as f64);
    cloud
        .positions
        .iter()
        .zip(&cloud.scales)
        .map(|(p, &s)| {
            let pc = r * p + t;
            let z = pc.z;
            if !(z > camera.near && z < camera.far) {
                return Projected {
                    mean2d: Vector2::zeros(),
                    sigma2d: 0.0,
                    depth: z,
                    visible: false,
                };
            }
            let mean2d = Vector2::new(camera.fx * pc.x / z + camera.cx, camera.fy * pc.y / z + camera.cy);
            let sigma2d = s * f / z;
            let radius = CUTOFF_SIGMAS * sigma2d;
            let nearest = Vector2::new(mean2d.x.clamp(0.0, w), mean2d.y.clamp(0.0, h));
            let visible = (nearest - mean2d).norm_squared() <= radius * radius;
            Projected {
                mean2d,
                sigma2d,
                depth: z,
                visible,
            }
        })
        .collect()
}

/// Visible Gaussians binned into tiles in front-to-back order.
struct Frame {
    proj: Vec<Projected>,
    tiles_x: usize,
    tiles_y: usize,
    bins: Vec<Vec<u32>>,
}

impl Frame {
    fn build(cloud: &GaussianCloud, camera: &Camera) -> Self {
        let proj = project(cloud, camera);
        let mut order: Vec<u32> = (0..proj.len() as u32).filter(|&i| proj[i as usize].visible).collect();
        order.sort_by(|&a, &b| {
            proj[a as usize]
                .depth
                .total_cmp(&proj[b as usize].depth)
                .then(a.cmp(&b))
        });
        let tiles_x = camera.width.div_ceil(TILE);
        let tiles_y = camera.height.div_ceil(TILE);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for &g in &order {
            let Some((x0, x1, y0, y1)) = pixel_bounds(&proj[g as usize], camera) else {
                continue;
            };
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    bins[ty * tiles_x + tx].push(g);
                }
            }
        }
        Self {
            proj,
            tiles_x,
            tiles_y,
            bins,
        }
    }

    fn tile_pixels(&self, tile: usize, camera: &Camera) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * TILE, ty * TILE);
        let (x1, y1) = ((x0 + TILE).min(camera.width), (y0 + TILE).min(camera.height));
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    fn num_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

/// Inclusive pixel-index range whose centers fall inside the footprint box.
fn pixel_bounds(p: &Projected, camera: &Camera) -> Option<(usize, usize, usize, usize)> {
    let r = CUTOFF_SIGMAS * p.sigma2d;
    let lo_x = (p.mean2d.x - r - 0.5).ceil().max(0.0);
    let hi_x = (p.mean2d.x + r - 0.5).floor().min(camera.width as f64 - 1.0);
    let lo_y = (p.mean2d.y - r - 0.5).ceil().max(0.0);
    let hi_y = (p.mean2d.y + r - 0.5).floor().min(camera.height as f64 - 1.0);
    if lo_x > hi_x || lo_y > hi_y {
        return None;
    }
    Some((lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize))
}

/// One Gaussian's footprint at one pixel.
#[derive(Clone, Copy)]
struct Hit {
    a: f64,
    gauss: f64,
    clamped: bool,
    offset: Vector2<f64>,
    d2: f64,
}

#[inline]
fn hit(p: &Projected, opacity: f64, x: usize, y: usize) -> Option<Hit> {
    let offset = Vector2::new(x as f64 + 0.5 - p.mean2d.x, y as f64 + 0.5 - p.mean2d.y);
    let d2 = offset.norm_squared();
    let s2 = p.sigma2d * p.sigma2d;
    if d2 > CUTOFF_SIGMAS * CUTOFF_SIGMAS * s2 {
        return None;
    }
    let gauss = (-d2 / (2.0 * s2)).exp();
    let raw = opacity * gauss;
    let clamped = raw > ALPHA_CLAMP;
    Some(Hit {
        a: if clamped { ALPHA_CLAMP } else { raw },
        gauss,
        clamped,
        offset,
        d2,
    })
}

/// Render `cloud` over a constant `background`.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: Vector3<f64>) -> Result<RenderOutput> {
    camera.validate()?;
    let frame = Frame::build(cloud, camera);
    let tiles: Vec<Vec<(usize, usize, [f64; 5])>> = (0..frame.num_tiles())
        .into_par_iter()
        .map(|tile| {
            let bin = &frame.bins[tile];
            frame
                .tile_pixels(tile, camera)
                .map(|(x, y)| {
                    let mut t = 1.0;
                    let mut c = Vector3::zeros();
                    let mut z = 0.0;
                    for &g in bin {
                        let g = g as usize;
                        let p = &frame.proj[g];
                        if let Some(h) = hit(p, cloud.opacities[g], x, y) {
                            let w = h.a * t;
                            c += cloud.colors[g] * w;
                            z += p.depth * w;
                            t *= 1.0 - h.a;
                        }
                    }
                    let alpha = 1.0 - t;
                    let rgb = c + background * t;
                    let depth = if alpha > 0.0 { z / alpha } else { DEPTH_SENTINEL };
                    (x, y, [rgb.x, rgb.y, rgb.z, alpha, depth])
                })
                .collect()
        })
        .collect();

    let (w, h) = (camera.width, camera.height);
    let mut out = RenderOutput {
        rgb: Image::new(w, h, 3),
        alpha: Image::new(w, h, 1),
        depth: Image::new(w, h, 1),
    };
    for (x, y, px) in tiles.into_iter().flatten() {
        let i = y * w + x;
        out.rgb.data[3 * i..3 * i + 3].copy_from_slice(&px[..3]);
        out.alpha.data[i] = px[3];
        out.depth.data[i] = px[4];
    }
    Ok(out)
}

/// 2D partials per tile-bin entry: d mean2d (x, y), d sigma2d, d opacity, d color.
type Partial = [f64; 7];

/// Gradients of a loss given `d_rgb = ∂L/∂rgb` and optionally
/// `d_alpha = ∂L/∂alpha`.
///
/// Clamped contributions (`α·G > 0.99`) pass no gradient to position, scale
/// or opacity. Gaussians outside the frustum get zero gradients.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: Vector3<f64>,
    d_rgb: &Image,
    d_alpha: Option<&Image>,
) -> Result<RenderGrads> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    check_dim("d_rgb width", w, d_rgb.width)?;
    check_dim("d_rgb height", h, d_rgb.height)?;
    check_dim("d_rgb channels", 3, d_rgb.channels)?;
    if let Some(da) = d_alpha {
        check_dim("d_alpha width", w, da.width)?;
        check_dim("d_alpha height", h, da.height)?;
        check_dim("d_alpha channels", 1, da.channels)?;
    }
    let frame = Frame::build(cloud, camera);

    let partials: Vec<Vec<Partial>> = (0..frame.num_tiles())
        .into_par_iter()
        .map(|tile| {
            let bin = &frame.bins[tile];
            let mut acc = vec![[0.0; 7]; bin.len()];
            let mut hits: Vec<(usize, Hit, f64)> = Vec::new();
            for (x, y) in frame.tile_pixels(tile, camera) {
                let i = y * w + x;
                let g_rgb = Vector3::new(d_rgb.data[3 * i], d_rgb.data[3 * i + 1], d_rgb.data[3 * i + 2]);
                let g_alpha = d_alpha.map_or(0.0, |da| da.data[i]);
                if g_rgb == Vector3::zeros() && g_alpha == 0.0 {
                    continue;
                }
                hits.clear();
                let mut t = 1.0;
                for (k, &g) in bin.iter().enumerate() {
                    let g = g as usize;
                    if let Some(hv) = hit(&frame.proj[g], cloud.opacities[g], x, y) {
                        hits.push((k, hv, t));
                        t *= 1.0 - hv.a;
                    }
                }
                let t_final = t;
                // Light arriving from behind the current entry.
                let mut behind = background * t_final;
                for &(k, hv, t_i) in hits.iter().rev() {
                    let g = bin[k] as usize;
                    let color = cloud.colors[g];
                    let e = &mut acc[k];
                    let w_i = hv.a * t_i;
                    e[4] += g_rgb.x * w_i;
                    e[5] += g_rgb.y * w_i;
                    e[6] += g_rgb.z * w_i;
                    let inv = 1.0 / (1.0 - hv.a);
                    let d_a = g_rgb.dot(&(color * t_i - behind * inv)) + g_alpha * t_final * inv;
                    behind += color * w_i;
                    if hv.clamped {
                        continue;
                    }
                    let p = &frame.proj[g];
                    let s2 = p.sigma2d * p.sigma2d;
                    e[3] += d_a * hv.gauss;
                    let d_gauss = d_a * cloud.opacities[g] * hv.gauss;
                    e[0] += d_gauss * hv.offset.x / s2;
                    e[1] += d_gauss * hv.offset.y / s2;
                    e[2] += d_gauss * hv.d2 / (s2 * p.sigma2d);
                }
            }
            acc
        })
        .collect();

    let n = cloud.len();
    let mut flat = vec![[0.0; 7]; n];
    for (bin, acc) in frame.bins.iter().zip(&partials) {
        for (&g, e) in bin.iter().zip(acc) {
            let dst = &mut flat[g as usize];
            for c in 0..7 {
                dst[c] += e[c];
            }
        }
    }

    let r = camera.rotation();
    let t = camera.translation();
    let f = camera.focal();
    let mut grads = RenderGrads::zeros(n);
    for g in 0..n {
        if !frame.proj[g].visible {
            continue;
        }
        let e = flat[g];
        let pc = r * cloud.positions[g] + t;
        let z = pc.z;
        let s = cloud.scales[g];
        let d_cam = Vector3::new(
            e[0] * camera.fx / z,
            e[1] * camera.fy / z,
            -(e[0] * camera.fx * pc.x + e[1] * camera.fy * pc.y + e[2] * s * f) / (z * z),
        );
        grads.d_position[g] = r.transpose() * d_cam;
        grads.d_scale[g] = e[2] * f / z;
        grads.d_opacity[g] = e[3];
        grads.d_color[g] = Vector3::new(e[4], e[5], e[6]);
    }
    Ok(grads)
}

/// Hash of the per-pixel sequence of contributing Gaussians and their clamp
/// state. Equal signatures mean the render is a smooth function of the cloud
/// attributes between the two configurations, up to cutoff boundaries.
pub fn footprint_signature(cloud: &GaussianCloud, camera: &Camera) -> u64 {
    let frame = Frame::build(cloud, camera);
    let mut hasher = DefaultHasher::new();
    for tile in 0..frame.num_tiles() {
        let bin = &frame.bins[tile];
        for (x, y) in frame.tile_pixels(tile, camera) {
            (x, y).hash(&mut hasher);
            for &g in bin {
                if let Some(hv) = hit(&frame.proj[g as usize], cloud.opacities[g as usize], x, y) {
                    (g, hv.clamped).hash(&mut hasher);
                }
            }
        }
    }
    hasher.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(pos: Vector3<f64>, scale: f64, color: Vector3<f64>, opacity: f64) -> GaussianCloud {
        let mut c = GaussianCloud::from_positions(vec![pos], scale);
        c.colors[0] = color;
        c.opacities[0] = opacity;
        c
    }

    #[test]
    fn projection_examples() {
        let cam = Camera::new(64, 64, 100.0, 100.0);
        let c = GaussianCloud::from_positions(
            vec![
                Vector3::new(0.0, 0.0, 2.0),
                Vector3::new(0.0, 0.0, 4.0),
                Vector3::new(0.0, 0.0, -2.0),
            ],
            0.1,
        );
        let p = project(&c, &cam);
        assert!((p[0].sigma2d - 5.0).abs() < 1e-12);
        assert_eq!(p[0].mean2d, Vector2::new(32.0, 32.0));
        assert!((p[1].sigma2d - 2.5).abs() < 1e-12);
        assert!(p[0].visible && p[1].visible && !p[2].visible);

        let off = one(Vector3::new(10.0, 0.0, 2.0), 0.01, Vector3::zeros(), 0.5);
        assert!(!project(&off, &cam)[0].visible);
    }

    #[test]
    fn empty_cloud_is_background() {
        let cam = Camera::new(8, 5, 10.0, 10.0);
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let out = render(&GaussianCloud::new(), &cam, bg).unwrap();
        assert!(out.rgb.data.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.depth.data.iter().all(|&d| d == DEPTH_SENTINEL));
    }

    #[test]
    fn clamped_single_gaussian() {
        let mut cam = Camera::new(33, 33, 50.0, 50.0);
        cam.cx = 16.5;
        cam.cy = 16.5;
        let c = Vector3::new(0.3, 0.6, 0.9);
        let g = one(Vector3::new(0.0, 0.0, 2.0), 100.0, c, 1.0);
        let out = render(&g, &cam, Vector3::zeros()).unwrap();
        let center = [out.rgb.get(16, 16, 0), out.rgb.get(16, 16, 1), out.rgb.get(16, 16, 2)];
        for ch in 0..3 {
            assert!((center[ch] - 0.99 * c[ch]).abs() < 1e-6);
        }
        assert!((out.alpha.get(16, 16, 0) - 0.99).abs() < 1e-12);
        assert!((out.depth.get(16, 16, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_coincident_gaussians() {
        let mut cam = Camera::new(33, 33, 50.0, 50.0);
        cam.cx = 16.5;
        cam.cy = 16.5;
        let mut c = GaussianCloud::from_positions(vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, 0.0, 2.0)], 0.1);
        c.colors = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)];
        c.opacities = vec![0.5, 0.5];
        let bg = Vector3::new(0.0, 1.0, 0.0);
        let out = render(&c, &cam, bg).unwrap();
        let px = [out.rgb.get(16, 16, 0), out.rgb.get(16, 16, 1), out.rgb.get(16, 16, 2)];
        assert!((px[0] - 0.5).abs() < 1e-15);
        assert!((px[1] - 0.25).abs() < 1e-15);
        assert!((px[2] - 0.25).abs() < 1e-15);
        assert!((out.alpha.get(16, 16, 0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cam = Camera::new(16, 16, 20.0, 20.0);
        let g = one(Vector3::new(0.0, 0.0, 2.0), 0.3, Vector3::new(0.5, 0.5, 0.5), 0.5);
        let zero = Image::new(16, 16, 3);
        let grads = render_backward(&g, &cam, Vector3::zeros(), &zero, Some(&Image::new(16, 16, 1))).unwrap();
        assert_eq!(grads, RenderGrads::zeros(1));
        assert!(render_backward(&g, &cam, Vector3::zeros(), &Image::new(15, 16, 3), None).is_err());
        assert!(render_backward(&g, &cam, Vector3::zeros(), &zero, Some(&Image::new(16, 16, 3))).is_err());
    }

    #[test]
    fn culled_gaussians_get_no_gradient() {
        let cam = Camera::new(16, 16, 20.0, 20.0);
        let mut c = GaussianCloud::from_positions(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, -1.0)], 0.3);
        c.opacities = vec![0.5, 0.5];
        let ones = Image::filled(16, 16, 3, 1.0);
        let grads = render_backward(&c, &cam, Vector3::zeros(), &ones, None).unwrap();
        assert!(grads.d_color[0].norm() > 0.0);
        assert_eq!(grads.d_color[1], Vector3::zeros());
        assert_eq!(grads.d_position[1], Vector3::zeros());
        assert_eq!(grads.d_scale[1], 0.0);
    }

    #[test]
    fn pixel_bounds_follow_cutoff() {
        let cam = Camera::new(100, 100, 1.0, 1.0);
        let p = Projected {
            mean2d: Vector2::new(50.0, 50.0),
            sigma2d: 1.0,
            depth: 1.0,
            visible: true,
        };
        // Centers within 3 px: 47.5 ..= 52.5, pixel indices 47 ..= 52.
        assert_eq!(pixel_bounds(&p, &cam), Some((47, 52, 47, 52)));
    }
}
