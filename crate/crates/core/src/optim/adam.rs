//! Adam with per-attribute learning rates.

use nalgebra::Vector3;

use super::OptimConfig;
use crate::cloud::GaussianCloud;
use crate::error::{check_dim, Error, Result};
use crate::render::RenderGrads;

/// Scales never drop below this, meters.
pub const MIN_SCALE: f64 = 1e-6;

/// First and second moments per attribute block plus per-point step counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m_position: Vec<Vector3<f64>>,
    pub v_position: Vec<Vector3<f64>>,
    pub m_scale: Vec<f64>,
    pub v_scale: Vec<f64>,
    pub m_color: Vec<Vector3<f64>>,
    pub v_color: Vec<Vector3<f64>>,
    pub m_opacity: Vec<f64>,
    pub v_opacity: Vec<f64>,
    pub steps: Vec<u32>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m_position: vec![Vector3::zeros(); n],
            v_position: vec![Vector3::zeros(); n],
            m_scale: vec![0.0; n],
            v_scale: vec![0.0; n],
            m_color: vec![Vector3::zeros(); n],
            v_color: vec![Vector3::zeros(); n],
            m_opacity: vec![0.0; n],
            v_opacity: vec![0.0; n],
            steps: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Rebuild for a new point set: entry `i` copies state from `origin[i]`,
    /// or starts fresh when `None`.
    pub fn remap(&self, origin: &[Option<usize>]) -> Self {
        let mut s = Self::new(origin.len());
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = *o {
                s.m_position[i] = self.m_position[j];
                s.v_position[i] = self.v_position[j];
                s.m_scale[i] = self.m_scale[j];
                s.v_scale[i] = self.v_scale[j];
                s.m_color[i] = self.m_color[j];
                s.v_color[i] = self.v_color[j];
                s.m_opacity[i] = self.m_opacity[j];
                s.v_opacity[i] = self.v_opacity[j];
                s.steps[i] = self.steps[j];
            }
        }
        s
    }
}

struct Moments {
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Moments {
    /// Update one scalar moment pair, returning the bias-corrected direction.
    #[inline]
    fn update(&self, m: &mut f64, v: &mut f64, g: f64, bc1: f64, bc2: f64) -> f64 {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        (*m / bc1) / ((*v / bc2).sqrt() + self.eps)
    }
}

/// One Adam step over the points selected by `trainable` (all when `None`).
///
/// Positions, colors and opacities move directly; scales move in log space,
/// which keeps them positive. Colors and opacities are clamped to `[0, 1]`
/// and scales floored at [`MIN_SCALE`]. A block whose learning rate is 0 is
/// not touched at all. Rotations carry no gradient, so they never change.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    grads: &RenderGrads,
    state: &mut AdamState,
    cfg: &OptimConfig,
    trainable: Option<&[bool]>,
) -> Result<()> {
    let n = cloud.len();
    check_dim("gradient length", n, grads.len())?;
    check_dim("optimizer state length", n, state.len())?;
    if let Some(t) = trainable {
        check_dim("trainable mask length", n, t.len())?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let mo = Moments {
        b1: cfg.adam_beta1,
        b2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    for i in 0..n {
        if trainable.is_some_and(|t| !t[i]) {
            continue;
        }
        state.steps[i] += 1;
        let k = state.steps[i] as i32;
        let bc1 = 1.0 - mo.b1.powi(k);
        let bc2 = 1.0 - mo.b2.powi(k);

        if cfg.lr_position > 0.0 {
            for a in 0..3 {
                let d = mo.update(
                    &mut state.m_position[i][a],
                    &mut state.v_position[i][a],
                    grads.d_position[i][a],
                    bc1,
                    bc2,
                );
                cloud.positions[i][a] -= cfg.lr_position * d;
            }
        }
        if cfg.lr_scale > 0.0 {
            let g_log = grads.d_scale[i] * cloud.scales[i];
            let d = mo.update(&mut state.m_scale[i], &mut state.v_scale[i], g_log, bc1, bc2);
            cloud.scales[i] = (cloud.scales[i] * (-cfg.lr_scale * d).exp()).max(MIN_SCALE);
        }
        if cfg.lr_color > 0.0 {
            for a in 0..3 {
                let d = mo.update(
                    &mut state.m_color[i][a],
                    &mut state.v_color[i][a],
                    grads.d_color[i][a],
                    bc1,
                    bc2,
                );
                cloud.colors[i][a] = (cloud.colors[i][a] - cfg.lr_color * d).clamp(0.0, 1.0);
            }
        }
        if cfg.lr_opacity > 0.0 {
            let d = mo.update(
                &mut state.m_opacity[i],
                &mut state.v_opacity[i],
                grads.d_opacity[i],
                bc1,
                bc2,
            );
            cloud.opacities[i] = (cloud.opacities[i] - cfg.lr_opacity * d).clamp(0.0, 1.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize) -> GaussianCloud {
        let mut c = GaussianCloud::from_positions((0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(), 0.05);
        c.colors = vec![Vector3::new(0.5, 0.5, 0.5); n];
        c.opacities = vec![0.5; n];
        c
    }

    #[test]
    fn zero_gradient_leaves_cloud_unchanged() {
        let mut c = cloud(3);
        let before = c.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut c, &RenderGrads::zeros(3), &mut st, &OptimConfig::default(), None).unwrap();
        assert_eq!(c, before);
        assert_eq!(st.steps, vec![1, 1, 1]);
    }

    #[test]
    fn first_step_ratio_equals_lr_ratio() {
        let cfg = OptimConfig::default();
        let mut c = cloud(1);
        let before = c.clone();
        let mut g = RenderGrads::zeros(1);
        g.d_position[0].x = 0.3;
        g.d_color[0].x = 0.3;
        g.d_opacity[0] = 0.3;
        adam_step(&mut c, &g, &mut AdamState::new(1), &cfg, None).unwrap();
        let dp = before.positions[0].x - c.positions[0].x;
        let dc = before.colors[0].x - c.colors[0].x;
        let da = before.opacities[0] - c.opacities[0];
        // First bias-corrected step is lr·g/(|g| + eps).
        let unit = 0.3 / (0.3 + cfg.adam_eps);
        assert!((dp - cfg.lr_position * unit).abs() < 1e-15);
        assert!((dc - cfg.lr_color * unit).abs() < 1e-15);
        assert!((dp / dc - cfg.lr_position / cfg.lr_color).abs() < 1e-9);
        assert!((da / dc - cfg.lr_opacity / cfg.lr_color).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_descends_to_clamp() {
        let cfg = OptimConfig::default();
        let mut c = cloud(1);
        let mut st = AdamState::new(1);
        let mut g = RenderGrads::zeros(1);
        g.d_color[0] = Vector3::new(1.0, -1.0, 0.0);
        let mut prev = c.colors[0];
        for _ in 0..200 {
            adam_step(&mut c, &g, &mut st, &cfg, None).unwrap();
            assert!(c.colors[0].x <= prev.x && c.colors[0].y >= prev.y);
            prev = c.colors[0];
        }
        assert_eq!(c.colors[0], Vector3::new(0.0, 1.0, 0.5));
    }

    #[test]
    fn frozen_blocks_and_points_stay_bit_identical() {
        let cfg = OptimConfig {
            lr_position: 0.0,
            lr_scale: 0.0,
            ..OptimConfig::default()
        };
        let mut c = cloud(2);
        let before = c.clone();
        let mut g = RenderGrads::zeros(2);
        g.d_position = vec![Vector3::new(1.0, 2.0, 3.0); 2];
        g.d_scale = vec![1.0; 2];
        g.d_color = vec![Vector3::new(1.0, 1.0, 1.0); 2];
        let mut st = AdamState::new(2);
        adam_step(&mut c, &g, &mut st, &cfg, Some(&[true, false])).unwrap();
        assert_eq!(c.positions, before.positions);
        assert_eq!(c.scales, before.scales);
        assert_ne!(c.colors[0], before.colors[0]);
        assert_eq!(c.colors[1], before.colors[1]);
        assert_eq!(st.steps, vec![1, 0]);
    }

    #[test]
    fn scale_stays_positive_and_errors_reported() {
        let cfg = OptimConfig {
            lr_scale: 50.0,
            ..OptimConfig::default()
        };
        let mut c = cloud(1);
        let mut g = RenderGrads::zeros(1);
        g.d_scale[0] = 1.0;
        let mut st = AdamState::new(1);
        adam_step(&mut c, &g, &mut st, &cfg, None).unwrap();
        assert_eq!(c.scales[0], MIN_SCALE);
        g.d_scale[0] = f64::NAN;
        assert!(adam_step(&mut c, &g, &mut st, &cfg, None).is_err());
        assert!(adam_step(&mut c, &RenderGrads::zeros(2), &mut st, &cfg, None).is_err());
    }

    #[test]
    fn remap_copies_and_resets() {
        let mut st = AdamState::new(2);
        st.m_scale = vec![1.0, 2.0];
        st.steps = vec![5, 6];
        let r = st.remap(&[Some(1), None, Some(0)]);
        assert_eq!(r.m_scale, vec![2.0, 0.0, 1.0]);
        assert_eq!(r.steps, vec![6, 0, 5]);
    }
}
