//! Semantic 3D Gaussian garments anchored to a labeled skinned body.
//!
//! The crate covers the whole garment workflow on the CPU:
//!
//! * [`body`]: parametric skinned body, linear blend skinning, semantic regions.
//! * [`cloud`]: isotropic Gaussian clouds, exact KNN, interpolated densification,
//!   body binding, deformation and PLY persistence.
//! * [`init`]: garment initialization from a labeled body region.
//! * [`render`]: deterministic splatting with analytic gradients.
//! * [`optim`]: per-attribute Adam, image loss, score-distillation plumbing
//!   through a pluggable [`optim::Guidance`], adaptive density control.
//! * [`occlusion`]: self-occlusion repair (fit to T-pose, semantic and smooth
//!   optimization).
//! * [`editor`]: texture, shape, pose and local edits.

pub mod body;
pub mod cloud;
pub mod editor;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod init;
pub mod occlusion;
pub mod optim;
pub mod render;

pub use error::{Error, Result};
