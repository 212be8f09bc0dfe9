//! Adaptive density control: clone, split, prune.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::OptimConfig;
use crate::cloud::GaussianCloud;
use crate::error::{check_dim, Result};
use crate::render::RenderGrads;

/// Running mean of per-point position-gradient magnitudes, over the steps
/// in which a point received any position gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradAccum {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradAccum {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn add(&mut self, grads: &RenderGrads) -> Result<()> {
        check_dim("gradient length", self.sum.len(), grads.len())?;
        for (i, g) in grads.d_position.iter().enumerate() {
            let m = g.norm();
            if m > 0.0 {
                self.sum[i] += m;
                self.count[i] += 1;
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityOutcome {
    pub cloud: GaussianCloud,
    /// For each output point, the input point it continues unchanged, or
    /// `None` for clones and split children.
    pub origin: Vec<Option<usize>>,
    /// Input point each output point derives from.
    pub parent: Vec<usize>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// One round of density control.
///
/// Points with opacity below `opacity_prune_threshold` are removed. Points
/// whose mean gradient exceeds `densify_grad_threshold` are split in two
/// when their scale exceeds `split_scale_threshold` (children offset by
/// `±split_offset·s` along a random direction, scale `s / split_factor`),
/// and cloned in place otherwise. Points with `trainable[i] == false` are
/// kept as they are. Output order: surviving input points in order (a split
/// point replaced by its first child), then clones and second children.
pub fn adaptive_density_control<R: Rng>(
    cloud: &GaussianCloud,
    grad_accum: &[f64],
    cfg: &OptimConfig,
    trainable: Option<&[bool]>,
    rng: &mut R,
) -> Result<DensityOutcome> {
    let n = cloud.len();
    check_dim("gradient accumulator length", n, grad_accum.len())?;
    if let Some(t) = trainable {
        check_dim("trainable mask length", n, t.len())?;
    }
    let mut head: Vec<(usize, Option<Vector3<f64>>, Option<f64>, bool)> = Vec::with_capacity(n);
    let mut tail: Vec<(usize, Option<Vector3<f64>>, Option<f64>)> = Vec::new();
    let (mut cloned, mut split, mut pruned) = (0, 0, 0);
    for i in 0..n {
        if trainable.is_some_and(|t| !t[i]) {
            head.push((i, None, None, true));
            continue;
        }
        if cloud.opacities[i] < cfg.opacity_prune_threshold {
            pruned += 1;
            continue;
        }
        if grad_accum[i] > cfg.densify_grad_threshold {
            let s = cloud.scales[i];
            if s > cfg.split_scale_threshold {
                let dir = random_unit(rng);
                let off = dir * (cfg.split_offset * s);
                let child = s / cfg.split_factor;
                head.push((i, Some(cloud.positions[i] + off), Some(child), false));
                tail.push((i, Some(cloud.positions[i] - off), Some(child)));
                split += 1;
            } else {
                head.push((i, None, None, true));
                tail.push((i, None, None));
                cloned += 1;
            }
        } else {
            head.push((i, None, None, true));
        }
    }

    let parent: Vec<usize> = head.iter().map(|h| h.0).chain(tail.iter().map(|t| t.0)).collect();
    let mut out = cloud.select(&parent);
    let mut origin = Vec::with_capacity(parent.len());
    for (k, &(src, pos, scale, kept)) in head.iter().enumerate() {
        if let Some(p) = pos {
            out.positions[k] = p;
        }
        if let Some(s) = scale {
            out.scales[k] = s;
        }
        origin.push(kept.then_some(src));
    }
    for (k, &(_, pos, scale)) in tail.iter().enumerate() {
        let k = head.len() + k;
        if let Some(p) = pos {
            out.positions[k] = p;
        }
        if let Some(s) = scale {
            out.scales[k] = s;
        }
        origin.push(None);
    }
    Ok(DensityOutcome {
        cloud: out,
        origin,
        parent,
        cloned,
        split,
        pruned,
    })
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
