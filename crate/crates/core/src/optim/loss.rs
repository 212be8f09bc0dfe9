//! Image loss and score-distillation pixel gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::guidance::{alpha_bar, Guidance, GuidanceRequest, GuidanceSpec};
use super::OptimConfig;
use crate::error::{check_dim, Error, Result};
use crate::image::Image;
use crate::render::{Camera, RenderOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageLoss {
    pub loss: f64,
    pub d_rgb: Image,
    pub d_alpha: Image,
}

/// `λ_rgb·‖rgb − target_rgb‖² + λ_mask·‖alpha − target_mask‖²`, summed over
/// pixels and channels, with exact gradients.
pub fn image_loss(out: &RenderOutput, target_rgb: &Image, target_mask: &Image, cfg: &OptimConfig) -> Result<ImageLoss> {
    check_dim("target rgb width", out.rgb.width, target_rgb.width)?;
    check_dim("target rgb height", out.rgb.height, target_rgb.height)?;
    check_dim("target rgb channels", 3, target_rgb.channels)?;
    check_dim("target mask width", out.alpha.width, target_mask.width)?;
    check_dim("target mask height", out.alpha.height, target_mask.height)?;
    check_dim("target mask channels", 1, target_mask.channels)?;
    let (lr, lm) = (cfg.lambda_rgb, cfg.lambda_mask);
    let mut loss_rgb = 0.0;
    let mut d_rgb = Image::new(out.rgb.width, out.rgb.height, 3);
    for ((d, x), t) in d_rgb.data.iter_mut().zip(&out.rgb.data).zip(&target_rgb.data) {
        let e = x - t;
        loss_rgb += e * e;
        *d = 2.0 * lr * e;
    }
    let mut loss_mask = 0.0;
    let mut d_alpha = Image::new(out.alpha.width, out.alpha.height, 1);
    for ((d, x), t) in d_alpha.data.iter_mut().zip(&out.alpha.data).zip(&target_mask.data) {
        let e = x - t;
        loss_mask += e * e;
        *d = 2.0 * lm * e;
    }
    Ok(ImageLoss {
        loss: lr * loss_rgb + lm * loss_mask,
        d_rgb,
        d_alpha,
    })
}

/// One score-distillation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SdsSample {
    pub t: f64,
    pub weight: f64,
    /// `w(t)·(ε̂ − ε)`, the loss gradient with respect to the rendering.
    pub d_rgb: Image,
}

/// Sample `t`, noise the rendering, query `guidance` and return the
/// per-pixel gradient `w(t)·(ε̂ − ε)`.
///
/// Noise is drawn from a standard normal and rounded to f32 so that it
/// survives the wire format bit-exactly.
pub fn sds_pixel_grad<R: Rng>(
    rgb: &Image,
    camera: &Camera,
    guidance: &dyn Guidance,
    spec: &GuidanceSpec,
    rng: &mut R,
) -> Result<SdsSample> {
    check_dim("rendering channels", 3, rgb.channels)?;
    check_dim("rendering width", camera.width, rgb.width)?;
    check_dim("rendering height", camera.height, rgb.height)?;
    let [t0, t1] = spec.t_range;
    let t = if t1 > t0 { rng.random_range(t0..=t1) } else { t0 };
    let weight = spec.weighting.weight(t);
    if weight == 0.0 {
        return Ok(SdsSample {
            t,
            weight,
            d_rgb: Image::new(rgb.width, rgb.height, 3),
        });
    }
    let (noise, noisy) = if guidance.needs_noise() {
        let ab = alpha_bar(t);
        let (ca, cn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps: Vec<f64> = (0..rgb.data.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32 as f64)
            .collect();
        let xt = rgb.data.iter().zip(&eps).map(|(x, e)| ca * x + cn * e).collect();
        (
            Image::from_data(rgb.width, rgb.height, 3, eps)?,
            Image::from_data(rgb.width, rgb.height, 3, xt)?,
        )
    } else {
        (Image::new(0, 0, 3), Image::new(0, 0, 3))
    };
    let req = GuidanceRequest {
        mode: spec.mode,
        prompt: &spec.prompt,
        guidance_scale: spec.scale(),
        t,
        camera,
        clean: rgb,
        noisy: &noisy,
        noise: &noise,
    };
    let mut d_rgb = guidance.residual(&req)?;
    if !d_rgb.same_shape(rgb) {
        return Err(Error::Guidance("residual shape differs from the rendering".into()));
    }
    if !d_rgb.is_finite() {
        return Err(Error::Guidance("non-finite guidance residual".into()));
    }
    if weight != 1.0 {
        d_rgb.scale(weight);
    }
    Ok(SdsSample { t, weight, d_rgb })
}

#[cfg(test)]
mod tests {
    use super::super::guidance::{MockGuidance, MockTarget, Weighting};
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn output(rgb: Image, alpha: Image) -> RenderOutput {
        let depth = Image::new(rgb.width, rgb.height, 1);
        RenderOutput { rgb, alpha, depth }
    }

    #[test]
    fn loss_examples() {
        let cfg = OptimConfig::default();
        let t_rgb = Image::filled(3, 2, 3, 0.5);
        let t_mask = Image::filled(3, 2, 1, 1.0);
        let exact = image_loss(&output(t_rgb.clone(), t_mask.clone()), &t_rgb, &t_mask, &cfg).unwrap();
        assert_eq!(exact.loss, 0.0);
        assert!(exact.d_rgb.data.iter().chain(&exact.d_alpha.data).all(|&g| g == 0.0));

        let mut rgb = t_rgb.clone();
        rgb.set(2, 1, 1, 0.6);
        let l = image_loss(&output(rgb, t_mask.clone()), &t_rgb, &t_mask, &cfg).unwrap();
        assert!((l.loss - 1000.0).abs() < 1e-9);
        assert!((l.d_rgb.get(2, 1, 1) - 2e5 * 0.1).abs() < 1e-6);

        let mut mask = t_mask.clone();
        mask.set(0, 0, 0, 0.0);
        let l = image_loss(&output(t_rgb.clone(), mask), &t_rgb, &t_mask, &cfg).unwrap();
        assert_eq!(l.loss, 50.0);
        assert_eq!(l.d_alpha.get(0, 0, 0), -100.0);

        assert!(image_loss(&output(Image::new(2, 2, 3), t_mask.clone()), &t_rgb, &t_mask, &cfg).is_err());
    }

    fn mock_setup() -> (MockGuidance, Camera, Image) {
        let target = Image::filled(4, 3, 3, 0.25);
        let mock = MockGuidance::new(
            MockTarget::Image {
                rgb: target.clone(),
                mask: Image::filled(4, 3, 1, 1.0),
            },
            Vector3::zeros(),
        )
        .unwrap();
        (mock, Camera::new(4, 3, 5.0, 5.0), target)
    }

    #[test]
    fn mock_sds_is_exact_image_difference() {
        let (mock, cam, target) = mock_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = GuidanceSpec::mock();
        let zero = sds_pixel_grad(&target, &cam, &mock, &spec, &mut rng).unwrap();
        assert!(zero.d_rgb.data.iter().all(|&g| g == 0.0));

        let mut x = target.clone();
        x.set(3, 2, 0, 0.25 + 0.2);
        let g = sds_pixel_grad(&x, &cam, &mock, &spec, &mut rng).unwrap();
        for (i, &v) in g.d_rgb.data.iter().enumerate() {
            if i == x.index(3, 2, 0) {
                assert_eq!(v, (0.25 + 0.2) - 0.25);
            } else {
                assert_eq!(v, 0.0);
            }
        }
        assert!(g.t >= 0.02 && g.t <= 0.98);
    }

    #[test]
    fn zero_weight_gives_zero_gradient() {
        let (mock, cam, _) = mock_setup();
        let spec = GuidanceSpec {
            weighting: Weighting::Constant { value: 0.0 },
            ..GuidanceSpec::mock()
        };
        let x = Image::filled(4, 3, 3, 0.9);
        let g = sds_pixel_grad(&x, &cam, &mock, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(g.d_rgb.data.iter().all(|&v| v == 0.0));
    }
}
