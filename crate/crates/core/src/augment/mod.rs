//! Pose-aware image augmentation.
//!
//! The limb warp rotates the knee and paw of randomly chosen limbs about the
//! elbow, fits a thin-plate spline through the moved and anchored keypoints,
//! backward-warps the image and inpaints whatever the warp left uncovered.

mod basic;
mod heatmap;
mod image;
mod inpaint;
mod limbs;
mod tps;

pub use basic::{
    basic_augment, square_crop, square_region, BasicAugment, SquareRegion, DEFAULT_CROP_SIZE,
};
pub use heatmap::{gaussian_heatmap, Heatmap, Normalization, DEFAULT_SIGMA};
pub use image::ImageGrid;
pub use inpaint::{inpaint_telea, DEFAULT_INPAINT_RADIUS};
pub use limbs::{
    limb_control_points, rotate_about, sample_limb_rotations, ControlPoints, Limb, LimbRotation,
    Skeleton, DEFAULT_MAX_ANGLE,
};
pub use tps::{radial_basis, tps_fit, warp_image, Point, ThinPlateTransform};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pose::PoseInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub max_angle: f64,
    pub inpaint_radius: f64,
    pub regularization: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            max_angle: DEFAULT_MAX_ANGLE,
            inpaint_radius: DEFAULT_INPAINT_RADIUS,
            regularization: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedSample {
    pub image: ImageGrid,
    /// The input pose with rotated knees and paws.
    pub pose: PoseInstance,
    pub rotations: Vec<LimbRotation>,
    /// Pixels filled by inpainting.
    pub inpainted: usize,
}

/// Runs the limb-warp pipeline with explicit rotations.
pub fn warp_with_rotations(
    img: &ImageGrid,
    pose: &PoseInstance,
    skeleton: &Skeleton,
    rotations: &[LimbRotation],
    config: &WarpConfig,
) -> Result<WarpedSample> {
    let frame = (img.width() as f64, img.height() as f64);
    let cp = limb_control_points(pose, skeleton, rotations, Some(frame))?;
    // Backward map: output (rotated) positions back to input positions.
    let map = tps_fit(&cp.dst, &cp.src, config.regularization)?;
    let warped = warp_image(img, &map);
    let inpainted = warped.invalid_count();
    let image = inpaint_telea(&warped, config.inpaint_radius)?;
    Ok(WarpedSample {
        image,
        pose: cp.apply_to(pose),
        rotations: rotations.to_vec(),
        inpainted,
    })
}

/// Limb warp with seeded random limb choice and angles. `Ok(None)` when no
/// limb is fully visible.
pub fn warp_augment(
    img: &ImageGrid,
    pose: &PoseInstance,
    skeleton: &Skeleton,
    config: &WarpConfig,
    seed: u64,
) -> Result<Option<WarpedSample>> {
    let rotations = sample_limb_rotations(pose, skeleton, config.max_angle, seed);
    if rotations.is_empty() {
        return Ok(None);
    }
    warp_with_rotations(img, pose, skeleton, &rotations, config).map(Some)
}
