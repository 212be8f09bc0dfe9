//! Garment edits: global texture, shape retargeting, re-posing and
//! animation, local prune-reinit-optimize.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::body::{Pose, RegionSpec, SkinnedBody};
use crate::cloud::{GaussianCloud, KdTree};
use crate::error::{Error, Result};
use crate::init::{init_garment, InitConfig};
use crate::occlusion::invert_affine;
use crate::optim::{optimize, LossReport, OptimConfig, Optimized, Problem};

/// `cfg` with every learning rate but color zeroed and density control off.
pub fn texture_config(cfg: &OptimConfig) -> OptimConfig {
    OptimConfig {
        lr_position: 0.0,
        lr_scale: 0.0,
        lr_rotation: 0.0,
        lr_opacity: 0.0,
        densify: false,
        ..cfg.clone()
    }
}

/// Recolor the garment while keeping its geometry bit-identical.
pub fn edit_texture_global(cloud: &GaussianCloud, problem: &Problem<'_>, cfg: &OptimConfig) -> Result<Optimized> {
    optimize(cloud, problem, &texture_config(cfg))
}

/// Carry a garment fitted to the rest shape `beta_src` onto `beta_dst`.
///
/// With `k == 1` each point moves by its bound vertex's shape offset. With
/// `k > 1` the offsets of the `k` nearest vertices of the `beta_src` rest
/// surface are blended by inverse distance; a point on a vertex takes that
/// vertex's offset exactly.
pub fn edit_shape(
    cloud: &GaussianCloud,
    body: &SkinnedBody,
    beta_src: &[f64],
    beta_dst: &[f64],
    k: usize,
) -> Result<GaussianCloud> {
    if k == 0 {
        return Err(Error::invalid("shape blend needs k >= 1"));
    }
    let offsets = body.shape_transforms(beta_src, beta_dst)?;
    let bound = bound_vertices(cloud)?;
    let mut out = cloud.clone();
    if k == 1 {
        for (i, &v) in bound.iter().enumerate() {
            out.positions[i] += offsets[v];
        }
        return Ok(out);
    }
    let mut src = Pose::zero(body);
    src.beta = beta_src.to_vec();
    let rest = body.rest_vertices(&src)?;
    let tree = KdTree::new(&rest)?;
    out.positions
        .par_iter_mut()
        .for_each(|p| *p += blended_offset(&tree, &offsets, p, k));
    Ok(out)
}

fn blended_offset(tree: &KdTree<'_>, offsets: &[Vector3<f64>], p: &Vector3<f64>, k: usize) -> Vector3<f64> {
    let nn = tree.nearest_k(p, k);
    if let Some(&(v, _)) = nn.iter().find(|(_, d2)| *d2 == 0.0) {
        return offsets[v as usize];
    }
    let mut acc = Vector3::zeros();
    let mut wsum = 0.0;
    for &(v, d2) in &nn {
        let w = 1.0 / d2.sqrt();
        acc += offsets[v as usize] * w;
        wsum += w;
    }
    acc / wsum
}

fn bound_vertices(cloud: &GaussianCloud) -> Result<Vec<usize>> {
    cloud
        .bind_idx
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b.map(|v| v as usize)
                .ok_or_else(|| Error::invalid(format!("gaussian {i} is not bound to the body")))
        })
        .collect()
}

/// Deform a canonical garment into `pose` by linear blend skinning.
pub fn repose(cloud: &GaussianCloud, body: &SkinnedBody, pose: &Pose) -> Result<GaussianCloud> {
    cloud.deform_by_vertices(&body.vertex_transforms(pose)?)
}

/// Inverse of [`repose`]: bring a garment in `pose` back to canonical.
pub fn unpose(cloud: &GaussianCloud, body: &SkinnedBody, pose: &Pose) -> Result<GaussianCloud> {
    let inverses = body
        .vertex_transforms(pose)?
        .iter()
        .map(invert_affine)
        .collect::<Result<Vec<_>>>()?;
    cloud.deform_by_vertices(&inverses)
}

/// One reposed cloud per frame, computed in parallel, returned in order.
pub fn animate(cloud: &GaussianCloud, body: &SkinnedBody, frames: &[Pose]) -> Result<Vec<GaussianCloud>> {
    frames.par_iter().map(|p| repose(cloud, body, p)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalEdit {
    /// Survivors followed by the new region points, before optimization.
    pub initial: GaussianCloud,
    pub cloud: GaussianCloud,
    pub report: LossReport,
    pub survivors: usize,
    pub pruned: usize,
    pub added: usize,
}

/// Replace the part of the garment labeled with `region`.
///
/// Points whose label is in `region` are pruned, a fresh region garment is
/// initialized with every color set to the survivors' mean (random colors
/// when nothing survives), appended after the survivors, and optimized with
/// the survivors frozen. A region with no body vertices only prunes.
pub fn edit_local(
    cloud: &GaussianCloud,
    body: &SkinnedBody,
    region: &RegionSpec,
    init_cfg: &InitConfig,
    problem: &Problem<'_>,
    cfg: &OptimConfig,
) -> Result<LocalEdit> {
    region.check(body)?;
    let keep: Vec<bool> = cloud.labels.iter().map(|&l| !region.contains(l)).collect();
    let survivors = cloud.prune(&keep)?;
    let pruned = cloud.len() - survivors.len();
    if body.region_vertices(region)?.is_empty() {
        if pruned == 0 {
            return Err(Error::invalid(
                "local edit region matches no gaussians and no body vertices",
            ));
        }
        return Ok(LocalEdit {
            initial: survivors.clone(),
            survivors: survivors.len(),
            cloud: survivors,
            report: LossReport::default(),
            pruned,
            added: 0,
        });
    }
    let mut fresh = init_garment(body, region, init_cfg)?;
    if let Some(mean) = survivors.mean_color() {
        fresh.colors.iter_mut().for_each(|c| *c = mean);
    }
    let initial = survivors.append(&fresh);
    let mask: Vec<bool> = (0..initial.len()).map(|i| i >= survivors.len()).collect();
    let masked = Problem {
        guidance: problem.guidance,
        spec: problem.spec,
        views: problem.views,
        prompt: problem.prompt,
        trainable: Some(mask),
    };
    let out = optimize(&initial, &masked, cfg)?;
    let added = out.cloud.len() - survivors.len();
    Ok(LocalEdit {
        initial,
        cloud: out.cloud,
        report: out.report,
        survivors: survivors.len(),
        pruned,
        added,
    })
}
