//! Self-occlusion repair: fit to T-pose, semantic optimization (distance
//! pruning, position and color descent), smooth optimization.
//!
//! Region Gaussians are paired with their nearest region vertex on the
//! shaped rest surface; pairings are re-resolved every iteration.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{affine, Pose, RegionSpec, SkinnedBody};
use crate::cloud::{GaussianCloud, KdTree};
use crate::error::{Error, Result};

pub const DEFAULT_REGION: [&str; 4] = ["armpit_l", "armpit_r", "torso_side_l", "torso_side_r"];
pub const DEFAULT_MAX_ITERS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrunePolicy {
    /// Remove the farthest `phi` fraction of region points.
    Fraction { phi: f64 },
    /// Remove region points farther than `tau` meters.
    Absolute { tau: f64 },
}

impl Default for PrunePolicy {
    fn default() -> Self {
        PrunePolicy::Fraction { phi: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub region: Vec<String>,
    /// Region membership radius, meters.
    pub rho: f64,
    pub prune: PrunePolicy,
    pub lr_position: f64,
    pub lr_color: f64,
    pub lr_smooth: f64,
    pub max_iters_position: usize,
    pub max_iters_color: usize,
    pub max_iters_smooth: usize,
    pub eps_color: f64,
    /// Smooth-stage tolerance above `D_avg`, meters.
    pub eps_smooth: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            region: DEFAULT_REGION.iter().map(|s| s.to_string()).collect(),
            rho: 0.03,
            prune: PrunePolicy::default(),
            lr_position: 0.05,
            lr_color: 0.25,
            lr_smooth: 0.25,
            max_iters_position: DEFAULT_MAX_ITERS,
            max_iters_color: DEFAULT_MAX_ITERS,
            max_iters_smooth: DEFAULT_MAX_ITERS,
            eps_color: 1e-6,
            eps_smooth: 1e-5,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("lr_position", self.lr_position),
            ("lr_color", self.lr_color),
            ("lr_smooth", self.lr_smooth),
            ("eps_color", self.eps_color),
            ("eps_smooth", self.eps_smooth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        match self.prune {
            PrunePolicy::Fraction { phi } if !(0.0..=1.0).contains(&phi) => {
                Err(Error::invalid("prune fraction phi must lie in [0, 1]"))
            }
            PrunePolicy::Absolute { tau } if !(tau.is_finite() && tau >= 0.0) => {
                Err(Error::invalid("prune threshold tau must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionContext {
    pub region_vertex_ids: Vec<usize>,
    /// Positions of the region vertices on the shaped rest surface.
    pub region_vertices: Vec<Vector3<f64>>,
    /// Ascending indices of the Gaussians assigned to the region.
    pub region_point_ids: Vec<usize>,
    pub d_total: f64,
    pub d_avg: f64,
}

impl OcclusionContext {
    fn tree(&self) -> Result<KdTree<'_>> {
        KdTree::new(&self.region_vertices)
    }

    /// Current nearest region vertex and distance for every region point.
    pub fn pairings(&self, cloud: &GaussianCloud) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
        let tree = self.tree()?;
        let mut targets = Vec::with_capacity(self.region_point_ids.len());
        let mut dists = Vec::with_capacity(self.region_point_ids.len());
        for &i in &self.region_point_ids {
            let (v, d) = tree.nearest(&cloud.positions[i]);
            targets.push(self.region_vertices[v as usize]);
            dists.push(d);
        }
        Ok((targets, dists))
    }

    /// `Σ D_i` over region points.
    pub fn distance_sum(&self, cloud: &GaussianCloud) -> Result<f64> {
        Ok(self.pairings(cloud)?.1.iter().sum())
    }
}

pub(crate) fn invert_affine(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let lin: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
    if lin == Matrix3::identity() && t == Vector3::zeros() {
        return Ok(Matrix4::identity());
    }
    let inv = lin
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("singular skinning transform".into()))?;
    Ok(affine(&inv, &-(inv * t)))
}

/// Carry a garment bound to the body posed at `source_pose` back to the
/// shaped rest pose by inverting each bound vertex's skinning transform.
pub fn fit_to_tpose(cloud: &GaussianCloud, body: &SkinnedBody, source_pose: &Pose) -> Result<GaussianCloud> {
    let inverses = body
        .rest_to_posed_transforms(source_pose)?
        .iter()
        .map(invert_affine)
        .collect::<Result<Vec<_>>>()?;
    cloud.deform_by_vertices(&inverses)
}

/// Resolve the region vertices on the rest surface of `shape` and assign
/// Gaussians within `rho` of any region vertex.
pub fn identify_region(
    cloud: &GaussianCloud,
    body: &SkinnedBody,
    shape: &Pose,
    region: &RegionSpec,
    rho: f64,
) -> Result<OcclusionContext> {
    let ids = body.region_vertices(region)?;
    if ids.is_empty() {
        return Err(Error::invalid("occlusion region covers no body vertices"));
    }
    let rest = body.rest_vertices(shape)?;
    let region_vertices: Vec<Vector3<f64>> = ids.iter().map(|&v| rest[v]).collect();
    let tree = KdTree::new(&region_vertices)?;
    let region_point_ids = (0..cloud.len())
        .filter(|&i| tree.nearest(&cloud.positions[i]).1 <= rho)
        .collect();
    Ok(OcclusionContext {
        region_vertex_ids: ids,
        region_vertices,
        region_point_ids,
        d_total: 0.0,
        d_avg: 0.0,
    })
}

/// Remove region points that sit far from the body and record `D_total`
/// over the survivors. Returns the pruned cloud and, per output point, its
/// index in the input.
pub fn distance_prune(
    cloud: &GaussianCloud,
    ctx: &mut OcclusionContext,
    policy: PrunePolicy,
) -> Result<(GaussianCloud, Vec<usize>)> {
    let (_, dists) = ctx.pairings(cloud)?;
    let n = dists.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let keep_n = match policy {
        PrunePolicy::Fraction { phi } => {
            if !(0.0..=1.0).contains(&phi) {
                return Err(Error::invalid("prune fraction phi must lie in [0, 1]"));
            }
            n - ((phi * n as f64 + 1e-9).floor() as usize).min(n)
        }
        PrunePolicy::Absolute { tau } => {
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(Error::invalid("prune threshold tau must be finite and >= 0"));
            }
            order.iter().take_while(|&&k| dists[k] <= tau).count()
        }
    };
    let mut drop = vec![false; cloud.len()];
    for &k in &order[keep_n..] {
        drop[ctx.region_point_ids[k]] = true;
    }
    let keep: Vec<bool> = drop.iter().map(|d| !d).collect();
    let out = cloud.prune(&keep)?;

    let mut new_index = vec![usize::MAX; cloud.len()];
    let mut next = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            new_index[i] = next;
            next += 1;
        }
    }
    ctx.region_point_ids = ctx
        .region_point_ids
        .iter()
        .filter(|&&i| keep[i])
        .map(|&i| new_index[i])
        .collect();
    ctx.d_total = order[..keep_n].iter().map(|&k| dists[k]).sum();
    let kept = (0..cloud.len()).filter(|&i| keep[i]).collect();
    Ok((out, kept))
}

/// `Σ ‖p_i − v_i‖²` and its gradient with respect to each `p_i`.
pub fn position_loss(points: &[Vector3<f64>], targets: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let mut loss = 0.0;
    let grads = points
        .iter()
        .zip(targets)
        .map(|(p, v)| {
            let d = p - v;
            loss += d.norm_squared();
            d * 2.0
        })
        .collect();
    (loss, grads)
}

/// `Σ ‖c_i − target‖²` and its gradient.
pub fn color_loss(colors: &[Vector3<f64>], target: &Vector3<f64>) -> (f64, Vec<Vector3<f64>>) {
    let targets = vec![*target; colors.len()];
    position_loss(colors, &targets)
}

/// `Σ 𝕀(D_i > d_avg)·(D_i − d_avg)²` with `D_i = ‖p_i − v_i‖`, and its
/// gradient with respect to each `p_i`.
pub fn smooth_loss(points: &[Vector3<f64>], targets: &[Vector3<f64>], d_avg: f64) -> (f64, Vec<Vector3<f64>>) {
    let mut loss = 0.0;
    let grads = points
        .iter()
        .zip(targets)
        .map(|(p, v)| {
            let r = p - v;
            let d = r.norm();
            if d > d_avg {
                loss += (d - d_avg) * (d - d_avg);
                r * (2.0 * (d - d_avg) / d)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (loss, grads)
}

fn region_positions(cloud: &GaussianCloud, ctx: &OcclusionContext) -> Vec<Vector3<f64>> {
    ctx.region_point_ids.iter().map(|&i| cloud.positions[i]).collect()
}

/// Pull region points toward the body until `Σ D_i ≤ 0.5·D_total` or the
/// cap is hit. Returns the iterations taken.
pub fn position_optimize(
    cloud: &mut GaussianCloud,
    ctx: &OcclusionContext,
    lr: f64,
    max_iters: usize,
) -> Result<usize> {
    if ctx.region_point_ids.is_empty() {
        return Ok(0);
    }
    for iter in 0..max_iters {
        let (targets, dists) = ctx.pairings(cloud)?;
        if dists.iter().sum::<f64>() <= 0.5 * ctx.d_total {
            return Ok(iter);
        }
        let (_, grads) = position_loss(&region_positions(cloud, ctx), &targets);
        for (k, &i) in ctx.region_point_ids.iter().enumerate() {
            cloud.positions[i] -= grads[k] * lr;
        }
    }
    Ok(max_iters)
}

/// Pull region colors toward their mean at entry until the color loss drops
/// below `eps` or the cap is hit. Returns the iterations taken.
pub fn color_optimize(
    cloud: &mut GaussianCloud,
    ctx: &OcclusionContext,
    lr: f64,
    eps: f64,
    max_iters: usize,
) -> Result<usize> {
    let ids = &ctx.region_point_ids;
    if ids.is_empty() {
        return Ok(0);
    }
    let target = ids.iter().map(|&i| cloud.colors[i]).sum::<Vector3<f64>>() / ids.len() as f64;
    for iter in 0..max_iters {
        let colors: Vec<Vector3<f64>> = ids.iter().map(|&i| cloud.colors[i]).collect();
        let (loss, grads) = color_loss(&colors, &target);
        if loss < eps {
            return Ok(iter);
        }
        for (k, &i) in ids.iter().enumerate() {
            cloud.colors[i] -= grads[k] * lr;
        }
    }
    Ok(max_iters)
}

/// Freeze `D_avg` at entry and pull outliers in until no region point is
/// farther than `D_avg + eps`. Returns the iterations taken; sets `ctx.d_avg`.
pub fn smooth_optimize(
    cloud: &mut GaussianCloud,
    ctx: &mut OcclusionContext,
    lr: f64,
    eps: f64,
    max_iters: usize,
) -> Result<usize> {
    if ctx.region_point_ids.is_empty() {
        ctx.d_avg = 0.0;
        return Ok(0);
    }
    let (_, dists) = ctx.pairings(cloud)?;
    ctx.d_avg = dists.iter().sum::<f64>() / dists.len() as f64;
    for iter in 0..max_iters {
        let (targets, dists) = ctx.pairings(cloud)?;
        if dists.iter().all(|&d| d <= ctx.d_avg + eps) {
            return Ok(iter);
        }
        let (_, grads) = smooth_loss(&region_positions(cloud, ctx), &targets, ctx.d_avg);
        for (k, &i) in ctx.region_point_ids.iter().enumerate() {
            cloud.positions[i] -= grads[k] * lr;
        }
    }
    Ok(max_iters)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageIters {
    pub position: usize,
    pub color: usize,
    pub smooth: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalSums {
    /// `Σ D_i` after the position stage.
    pub position: f64,
    /// Color loss after the color stage.
    pub color: f64,
    /// Smooth loss after the smooth stage.
    pub smooth: f64,
    /// `Σ D_i` at the end.
    pub distance: f64,
    /// `max D_i` at the end.
    pub max_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub pruned: usize,
    pub region_points: usize,
    pub d_total: f64,
    pub d_avg: f64,
    pub iters: StageIters,
    pub final_sums: FinalSums,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionResult {
    /// Repaired garment in the shaped rest pose.
    pub cloud: GaussianCloud,
    /// Fitted garment before any optimization stage.
    pub fitted: GaussianCloud,
    /// For each output point, its index in `fitted`.
    pub kept: Vec<usize>,
    pub context: OcclusionContext,
    pub report: OcclusionReport,
}

/// Run fit, identify, prune, position, color and smooth in order.
pub fn run_pipeline(
    cloud: &GaussianCloud,
    body: &SkinnedBody,
    source_pose: &Pose,
    cfg: &OcclusionConfig,
) -> Result<OcclusionResult> {
    cfg.validate()?;
    let region = RegionSpec::from_names(body, &cfg.region)?;
    let fitted = fit_to_tpose(cloud, body, source_pose)?;
    let mut ctx = identify_region(&fitted, body, source_pose, &region, cfg.rho)?;
    let (mut out, kept) = distance_prune(&fitted, &mut ctx, cfg.prune)?;
    let pruned = fitted.len() - kept.len();

    let position = position_optimize(&mut out, &ctx, cfg.lr_position, cfg.max_iters_position)?;
    let after_position = ctx.distance_sum(&out)?;
    let color = color_optimize(&mut out, &ctx, cfg.lr_color, cfg.eps_color, cfg.max_iters_color)?;
    let smooth = smooth_optimize(&mut out, &mut ctx, cfg.lr_smooth, cfg.eps_smooth, cfg.max_iters_smooth)?;

    let colors: Vec<Vector3<f64>> = ctx.region_point_ids.iter().map(|&i| out.colors[i]).collect();
    let color_final = if colors.is_empty() {
        0.0
    } else {
        let mean = colors.iter().sum::<Vector3<f64>>() / colors.len() as f64;
        color_loss(&colors, &mean).0
    };
    let (targets, dists) = ctx.pairings(&out)?;
    let smooth_final = smooth_loss(&region_positions(&out, &ctx), &targets, ctx.d_avg).0;
    let report = OcclusionReport {
        pruned,
        region_points: ctx.region_point_ids.len(),
        d_total: ctx.d_total,
        d_avg: ctx.d_avg,
        iters: StageIters {
            position,
            color,
            smooth,
        },
        final_sums: FinalSums {
            position: after_position,
            color: color_final,
            smooth: smooth_final,
            distance: dists.iter().sum(),
            max_distance: dists.iter().copied().fold(0.0, f64::max),
        },
    };
    Ok(OcclusionResult {
        cloud: out,
        fitted,
        kept,
        context: ctx,
        report,
    })
}
