//! Pose, pose-sequence and camera files, plus comma-separated arguments.

use std::collections::BTreeSet;
use std::path::Path;

use garment_core::body::{Pose, SkinnedBody};
use garment_core::error::check_dim;
use garment_core::render::{Camera, CameraSpec};
use garment_core::{Error, Result};
use nalgebra::Vector3;
use serde::Deserialize;

use crate::config::read_value;

/// Pose as stored on disk. Missing parts are zero.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    #[serde(default)]
    pub theta: Vec<[f64; 3]>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub psi: Vec<f64>,
}

impl PoseFile {
    pub fn to_pose(&self, body: &SkinnedBody) -> Result<Pose> {
        let mut pose = Pose::zero(body);
        if !self.theta.is_empty() {
            check_dim("pose theta joints", body.num_joints(), self.theta.len())?;
            pose.theta = self.theta.iter().map(|&t| Vector3::from(t)).collect();
        }
        if !self.beta.is_empty() {
            check_dim("pose beta", body.num_betas(), self.beta.len())?;
            pose.beta = self.beta.clone();
        }
        if !self.psi.is_empty() {
            check_dim("pose psi", body.num_exprs(), self.psi.len())?;
            pose.psi = self.psi.clone();
        }
        pose.validate()?;
        Ok(pose)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFile {
    pub frame: u32,
    #[serde(default)]
    pub theta: Vec<[f64; 3]>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub psi: Vec<f64>,
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_value(read_value(path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn read_pose(path: &Path, body: &SkinnedBody) -> Result<Pose> {
    parse::<PoseFile>(path)?.to_pose(body)
}

/// Frames in file order with their frame numbers, which must be unique.
pub fn read_sequence(path: &Path, body: &SkinnedBody) -> Result<Vec<(u32, Pose)>> {
    let frames: Vec<FrameFile> = parse(path)?;
    let mut seen = BTreeSet::new();
    frames
        .into_iter()
        .map(|f| {
            if !seen.insert(f.frame) {
                return Err(Error::format(format!(
                    "{}: duplicate frame {}",
                    path.display(),
                    f.frame
                )));
            }
            let pose = PoseFile {
                theta: f.theta,
                beta: f.beta,
                psi: f.psi,
            }
            .to_pose(body)?;
            Ok((f.frame, pose))
        })
        .collect()
}

pub fn read_camera(path: &Path, default_size: usize) -> Result<Camera> {
    parse::<CameraSpec>(path)?.to_camera(default_size)
}

pub fn split_names(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

pub fn parse_floats(list: &str) -> std::result::Result<Vec<f64>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

pub fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_floats(s)?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three values, got {}", v.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_lists() {
        assert_eq!(split_names("chest, abdomen,,"), vec!["chest", "abdomen"]);
        assert_eq!(parse_floats("0.5,-1").unwrap(), vec![0.5, -1.0]);
        assert!(parse_floats("x").is_err());
        assert_eq!(parse_rgb("1,0.5,0").unwrap(), [1.0, 0.5, 0.0]);
        assert!(parse_rgb("1,2").is_err());
    }
}
