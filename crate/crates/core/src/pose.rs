//! Keypoint pose labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of keypoints per Animal-Pose instance.
pub const ANIMAL_POSE_JOINTS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 1 when the keypoint is labelled and visible, 0 otherwise.
    pub v: u8,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: u8) -> Self {
        Keypoint { x, y, v }
    }

    pub fn visible(&self) -> bool {
        self.v != 0
    }
}

/// Axis-aligned box in pixels, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BBox {
            x,
            y,
            width,
            height,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()
    }

    pub fn max_side(&self) -> f64 {
        self.width.max(self.height)
    }
}

/// One annotated animal crop: `J` keypoints, a box and a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub id: String,
    pub class_label: String,
    pub keypoints: Vec<Keypoint>,
    pub bbox: BBox,
    pub image_ref: String,
}

impl PoseInstance {
    pub fn new(
        id: impl Into<String>,
        class_label: impl Into<String>,
        keypoints: Vec<Keypoint>,
        bbox: BBox,
    ) -> Self {
        PoseInstance {
            id: id.into(),
            class_label: class_label.into(),
            keypoints,
            bbox,
            image_ref: String::new(),
        }
    }

    pub fn with_image_ref(mut self, image_ref: impl Into<String>) -> Self {
        self.image_ref = image_ref.into();
        self
    }

    pub fn num_joints(&self) -> usize {
        self.keypoints.len()
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visible()).count()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::Parameter(format!(
                "instance {}: bbox must have positive width and height, got {}x{}",
                self.id, self.bbox.width, self.bbox.height
            )));
        }
        if let Some(k) = self.keypoints.iter().find(|k| k.v > 1) {
            return Err(Error::Parameter(format!(
                "instance {}: visibility flag must be 0 or 1, got {}",
                self.id, k.v
            )));
        }
        Ok(())
    }
}
