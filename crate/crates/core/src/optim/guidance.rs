//! Diffusion guidance behind a protocol.
//!
//! A [`Guidance`] answers with the noise residual `ε̂ − ε` for a noisy
//! rendering. [`MockGuidance`] is an in-process image-matching oracle;
//! [`HttpGuidance`] speaks the JSON/PFM wire protocol to an external
//! diffusion service.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::error::{check_dim, Error, Result};
use crate::image::Image;
use crate::render::{render, Camera};

pub const TEXT_GUIDANCE_SCALE: f64 = 10.0;
pub const IMAGE_GUIDANCE_SCALE: f64 = 3.0;
pub const DEFAULT_T_RANGE: [f64; 2] = [0.02, 0.98];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    Mock,
    Text,
    Image,
}

impl GuidanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceMode::Mock => "mock",
            GuidanceMode::Text => "text",
            GuidanceMode::Image => "image",
        }
    }

    pub fn default_scale(self) -> f64 {
        match self {
            GuidanceMode::Mock => 1.0,
            GuidanceMode::Text => TEXT_GUIDANCE_SCALE,
            GuidanceMode::Image => IMAGE_GUIDANCE_SCALE,
        }
    }
}

/// Timestep weighting `w(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Constant {
        value: f64,
    },
    /// `w(t) = 1 − ᾱ(t)`.
    OneMinusAlphaBar,
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Constant { value: 1.0 }
    }
}

impl Weighting {
    pub fn weight(&self, t: f64) -> f64 {
        match *self {
            Weighting::Constant { value } => value,
            Weighting::OneMinusAlphaBar => 1.0 - alpha_bar(t),
        }
    }
}

/// Cosine noise schedule `ᾱ(t) = cos²(πt/2)` on `t ∈ [0, 1]`.
pub fn alpha_bar(t: f64) -> f64 {
    let c = (std::f64::consts::FRAC_PI_2 * t).cos();
    c * c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub prompt: String,
    /// Defaults per mode: 10.0 text, 3.0 image.
    pub guidance_scale: Option<f64>,
    pub t_range: [f64; 2],
    pub weighting: Weighting,
    /// Base URL of a guidance service, e.g. `http://127.0.0.1:8000`.
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Mock,
            prompt: String::new(),
            guidance_scale: None,
            t_range: DEFAULT_T_RANGE,
            weighting: Weighting::default(),
            endpoint: None,
            timeout_s: 60.0,
            retries: 2,
        }
    }
}

impl GuidanceSpec {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn text(prompt: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            mode: GuidanceMode::Text,
            prompt: prompt.into(),
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn image(endpoint: impl Into<String>) -> Self {
        Self {
            mode: GuidanceMode::Image,
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn scale(&self) -> f64 {
        self.guidance_scale.unwrap_or_else(|| self.mode.default_scale())
    }

    /// Structural checks; the mock target is checked when the mock is built.
    pub fn validate(&self) -> Result<()> {
        let [t0, t1] = self.t_range;
        if !(t0.is_finite() && t1.is_finite() && 0.0 <= t0 && t0 <= t1 && t1 <= 1.0) {
            return Err(Error::invalid("guidance t_range must satisfy 0 <= t0 <= t1 <= 1"));
        }
        if !self.scale().is_finite() {
            return Err(Error::invalid("guidance_scale must be finite"));
        }
        if let Weighting::Constant { value } = self.weighting {
            if !value.is_finite() {
                return Err(Error::invalid("weighting value must be finite"));
            }
        }
        if self.mode != GuidanceMode::Mock && self.endpoint.is_none() {
            return Err(Error::invalid(format!(
                "{} guidance requires an endpoint",
                self.mode.as_str()
            )));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::invalid("guidance timeout_s must be > 0"));
        }
        Ok(())
    }
}

/// One guidance query for one view.
pub struct GuidanceRequest<'a> {
    pub mode: GuidanceMode,
    pub prompt: &'a str,
    pub guidance_scale: f64,
    pub t: f64,
    pub camera: &'a Camera,
    /// Clean rendering `x`.
    pub clean: &'a Image,
    /// Noisy rendering `x_t`.
    pub noisy: &'a Image,
    /// Injected noise `ε`.
    pub noise: &'a Image,
}

/// Target rendering for a view, used for loss reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetView {
    pub rgb: Image,
    pub mask: Image,
}

pub trait Guidance: Send + Sync {
    /// Noise residual `ε̂ − ε`, same shape as the rendering.
    fn residual(&self, req: &GuidanceRequest<'_>) -> Result<Image>;

    /// Whether [`GuidanceRequest::noisy`] and `noise` are consumed. When false
    /// the caller may pass zero-sized placeholders.
    fn needs_noise(&self) -> bool {
        true
    }

    /// Ground-truth view, when the guidance has one.
    fn target(&self, _camera: &Camera) -> Result<Option<TargetView>> {
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MockTarget {
    /// A fixed image, independent of the view.
    Image { rgb: Image, mask: Image },
    /// A reference cloud rendered at each requested view.
    Cloud(GaussianCloud),
}

/// Guidance whose predicted noise is `ε + (x − target)`, so the residual is
/// exactly `x − target`.
#[derive(Clone, Debug)]
pub struct MockGuidance {
    target: MockTarget,
    background: Vector3<f64>,
}

impl MockGuidance {
    pub fn new(target: MockTarget, background: Vector3<f64>) -> Result<Self> {
        match &target {
            MockTarget::Image { rgb, mask } => {
                check_dim("mock target channels", 3, rgb.channels)?;
                check_dim("mock mask channels", 1, mask.channels)?;
                check_dim("mock mask width", rgb.width, mask.width)?;
                check_dim("mock mask height", rgb.height, mask.height)?;
                if !rgb.is_finite() || !mask.is_finite() {
                    return Err(Error::NonFinite("mock target".into()));
                }
            }
            MockTarget::Cloud(c) => c.validate()?,
        }
        Ok(Self { target, background })
    }

    fn target_view(&self, camera: &Camera) -> Result<TargetView> {
        match &self.target {
            MockTarget::Image { rgb, mask } => Ok(TargetView {
                rgb: rgb.clone(),
                mask: mask.clone(),
            }),
            MockTarget::Cloud(c) => {
                let out = render(c, camera, self.background)?;
                Ok(TargetView {
                    rgb: out.rgb,
                    mask: out.alpha,
                })
            }
        }
    }
}

impl Guidance for MockGuidance {
    fn residual(&self, req: &GuidanceRequest<'_>) -> Result<Image> {
        let target = match &self.target {
            MockTarget::Image { rgb, .. } => rgb.clone(),
            MockTarget::Cloud(c) => render(c, req.camera, self.background)?.rgb,
        };
        if !target.same_shape(req.clean) {
            return Err(Error::invalid(format!(
                "mock target is {}x{}, rendering is {}x{}",
                target.width, target.height, req.clean.width, req.clean.height
            )));
        }
        let data = req.clean.data.iter().zip(&target.data).map(|(x, y)| x - y).collect();
        Image::from_data(target.width, target.height, 3, data)
    }

    fn needs_noise(&self) -> bool {
        false
    }

    fn target(&self, camera: &Camera) -> Result<Option<TargetView>> {
        self.target_view(camera).map(Some)
    }
}

/// Camera as it crosses the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    /// Row-major rigid transform.
    pub world_to_cam: [[f64; 4]; 4],
}

impl From<&Camera> for WireCamera {
    fn from(c: &Camera) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = c.world_to_cam[(r, k)];
            }
        }
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
            world_to_cam: m,
        }
    }
}

impl WireCamera {
    pub fn to_camera(&self) -> Result<Camera> {
        let mut cam = Camera::new(self.width, self.height, self.fx, self.fy);
        cam.cx = self.cx;
        cam.cy = self.cy;
        cam.near = self.near;
        cam.far = self.far;
        for r in 0..4 {
            for k in 0..4 {
                cam.world_to_cam[(r, k)] = self.world_to_cam[r][k];
            }
        }
        cam.validate()?;
        Ok(cam)
    }
}

/// Request body posted to `/eps_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub mode: GuidanceMode,
    pub prompt: String,
    pub guidance_scale: f64,
    pub t: f64,
    pub camera: WireCamera,
    /// Base64 PFM of the noisy rendering.
    pub image: String,
    /// Base64 PFM of the injected noise, for echo-style conformance checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    /// Base64 PFM of the predicted noise.
    pub eps_hat: String,
}

pub fn encode_image(img: &Image) -> Result<String> {
    Ok(BASE64.encode(img.to_pfm_bytes()?))
}

pub fn decode_image(s: &str) -> Result<Image> {
    let bytes = BASE64
        .decode(s.as_bytes())
        .map_err(|e| Error::Guidance(format!("invalid base64 payload: {e}")))?;
    Image::from_pfm_bytes(&bytes).map_err(|e| Error::Guidance(format!("invalid PFM payload: {e}")))
}

impl WireRequest {
    pub fn from_request(req: &GuidanceRequest<'_>) -> Result<Self> {
        Ok(Self {
            mode: req.mode,
            prompt: req.prompt.to_string(),
            guidance_scale: req.guidance_scale,
            t: req.t,
            camera: WireCamera::from(req.camera),
            image: encode_image(req.noisy)?,
            noise: Some(encode_image(req.noise)?),
        })
    }
}

/// Client for an external guidance service.
pub struct HttpGuidance {
    base: String,
    retries: u32,
    agent: ureq::Agent,
}

impl HttpGuidance {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            retries,
            agent,
        }
    }

    pub fn from_spec(spec: &GuidanceSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::invalid("guidance endpoint missing"))?;
        Ok(Self::new(
            endpoint,
            Duration::from_secs_f64(spec.timeout_s),
            spec.retries,
        ))
    }

    /// `GET /healthz`, parsed as JSON.
    pub fn health(&self) -> Result<serde_json::Value> {
        let mut resp = self
            .agent
            .get(format!("{}/healthz", self.base))
            .call()
            .map_err(|e| Error::Guidance(format!("health check failed: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Guidance(format!("health check body: {e}")))?;
        if status != 200 {
            return Err(Error::Guidance(format!("health check returned HTTP {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| Error::Guidance(format!("health check JSON: {e}")))
    }

    fn post_once(&self, body: &str) -> std::result::Result<String, (bool, String)> {
        let mut resp = self
            .agent
            .post(format!("{}/eps_hat", self.base))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| (true, format!("request failed: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, format!("reading response: {e}")))?;
        match status {
            200 => Ok(text),
            500..=599 => Err((true, format!("HTTP {status}: {text}"))),
            _ => Err((false, format!("HTTP {status}: {text}"))),
        }
    }

    /// Predicted noise `ε̂` for a request.
    pub fn eps_hat(&self, req: &GuidanceRequest<'_>) -> Result<Image> {
        let body = serde_json::to_string(&WireRequest::from_request(req)?)
            .map_err(|e| Error::Guidance(format!("encoding request: {e}")))?;
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.post_once(&body) {
                Ok(text) => {
                    let resp: WireResponse =
                        serde_json::from_str(&text).map_err(|e| Error::Guidance(format!("protocol violation: {e}")))?;
                    let eps = decode_image(&resp.eps_hat)?;
                    if !eps.same_shape(req.noisy) {
                        return Err(Error::Guidance(format!(
                            "protocol violation: eps_hat is {}x{}x{}, expected {}x{}x{}",
                            eps.width, eps.height, eps.channels, req.noisy.width, req.noisy.height, req.noisy.channels
                        )));
                    }
                    if !eps.is_finite() {
                        return Err(Error::Guidance("non-finite eps_hat".into()));
                    }
                    return Ok(eps);
                }
                Err((true, msg)) => last = msg,
                Err((false, msg)) => return Err(Error::Guidance(msg)),
            }
        }
        Err(Error::Guidance(format!("guidance endpoint unreachable: {last}")))
    }
}

impl Guidance for HttpGuidance {
    fn residual(&self, req: &GuidanceRequest<'_>) -> Result<Image> {
        let mut eps = self.eps_hat(req)?;
        for (e, n) in eps.data.iter_mut().zip(&req.noise.data) {
            *e -= n;
        }
        Ok(eps)
    }
}

/// Build the guidance described by `spec`. Mock mode needs `target`.
pub fn build_guidance(
    spec: &GuidanceSpec,
    target: Option<MockTarget>,
    background: Vector3<f64>,
) -> Result<Box<dyn Guidance>> {
    spec.validate()?;
    match spec.mode {
        GuidanceMode::Mock => {
            let target = target.ok_or_else(|| Error::invalid("mock guidance requires a target image"))?;
            Ok(Box::new(MockGuidance::new(target, background)?))
        }
        GuidanceMode::Text | GuidanceMode::Image => Ok(Box::new(HttpGuidance::from_spec(spec)?)),
    }
}
