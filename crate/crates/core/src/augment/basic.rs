//! Square cropping and the flip / rotate / noise augmentations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::ImageGrid;
use super::limbs::{rotate_about, Skeleton};
use crate::error::{Error, Result};
use crate::pose::{BBox, PoseInstance};

/// Network input size for square crops.
pub const DEFAULT_CROP_SIZE: usize = 512;

/// Square region `[x, x + side) x [y, y + side)` in source pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareRegion {
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

/// Extends the shorter side of `bbox` symmetrically to a square.
pub fn square_region(bbox: &BBox) -> Result<SquareRegion> {
    if !bbox.is_valid() {
        return Err(Error::Parameter(format!(
            "bbox must have positive area, got {}x{}",
            bbox.width, bbox.height
        )));
    }
    let side = bbox.max_side();
    Ok(SquareRegion {
        x: bbox.x + (bbox.width - side) / 2.0,
        y: bbox.y + (bbox.height - side) / 2.0,
        side,
    })
}

/// Crops the square around `bbox` (zero-padding outside the image), resizes
/// it to `out_size x out_size` and maps the pose into crop coordinates via
/// `x' = (x - x0) · out_size / side`.
pub fn square_crop(
    img: &ImageGrid,
    bbox: &BBox,
    out_size: usize,
    pose: &PoseInstance,
) -> Result<(ImageGrid, PoseInstance)> {
    if out_size == 0 {
        return Err(Error::Parameter("output size must be > 0".into()));
    }
    let region = square_region(bbox)?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if bbox.x >= w || bbox.y >= h || bbox.x + bbox.width <= 0.0 || bbox.y + bbox.height <= 0.0 {
        return Err(Error::Parameter("bbox does not overlap the image".into()));
    }
    let scale = out_size as f64 / region.side;
    let ch = img.channels();
    let mut out = ImageGrid::new(out_size, out_size, ch);
    let mut buf = vec![0.0; ch];
    for oy in 0..out_size {
        for ox in 0..out_size {
            let u = region.x + (ox as f64 + 0.5) / scale - 0.5;
            let v = region.y + (oy as f64 + 0.5) / scale - 0.5;
            let inside = u > -0.5 && v > -0.5 && u < w - 0.5 && v < h - 0.5;
            if !inside {
                continue;
            }
            let (cu, cv) = (u.clamp(0.0, w - 1.0), v.clamp(0.0, h - 1.0));
            if img.sample_bilinear(cu, cv, &mut buf) {
                for (c, &val) in buf.iter().enumerate() {
                    out.set(ox, oy, c, val);
                }
            }
        }
    }
    let mut mapped = pose.clone();
    for k in &mut mapped.keypoints {
        k.x = (k.x - region.x) * scale;
        k.y = (k.y - region.y) * scale;
    }
    mapped.bbox = BBox::new(
        (bbox.x - region.x) * scale,
        (bbox.y - region.y) * scale,
        bbox.width * scale,
        bbox.height * scale,
    );
    Ok((out, mapped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasicAugment {
    Flip,
    Rotate { degrees: f64 },
    Noise { sigma: f64 },
}

fn rotate_image(img: &ImageGrid, degrees: f64) -> ImageGrid {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let mut out = ImageGrid::new(w, h, ch);
    let mut buf = vec![0.0; ch];
    for y in 0..h {
        for x in 0..w {
            let [u, v] = rotate_about([x as f64, y as f64], center, -degrees);
            if img.sample_bilinear(u, v, &mut buf) {
                for (c, &val) in buf.iter().enumerate() {
                    out.set(x, y, c, val);
                }
            } else {
                out.set_valid(x, y, false);
            }
        }
    }
    out
}

pub fn basic_augment(
    img: &ImageGrid,
    pose: &PoseInstance,
    kind: BasicAugment,
    skeleton: &Skeleton,
    seed: u64,
) -> Result<(ImageGrid, PoseInstance)> {
    let (w, h) = (img.width(), img.height());
    match kind {
        BasicAugment::Flip => {
            if pose.num_joints() != skeleton.num_joints() {
                return Err(Error::Shape(format!(
                    "pose has {} keypoints, skeleton has {}",
                    pose.num_joints(),
                    skeleton.num_joints()
                )));
            }
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..img.channels() {
                        out.set(x, y, c, img.get(w - 1 - x, y, c));
                    }
                    out.set_valid(x, y, img.is_valid(w - 1 - x, y));
                }
            }
            let perm = skeleton.flip_permutation();
            let mut flipped = pose.clone();
            for (i, k) in pose.keypoints.iter().enumerate() {
                let mut m = *k;
                m.x = (w as f64 - 1.0) - k.x;
                flipped.keypoints[perm[i]] = m;
            }
            flipped.bbox.x = w as f64 - (pose.bbox.x + pose.bbox.width);
            Ok((out, flipped))
        }
        BasicAugment::Rotate { degrees } => {
            if degrees == 0.0 {
                return Ok((img.clone(), pose.clone()));
            }
            let out = rotate_image(img, degrees);
            let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
            let mut rotated = pose.clone();
            for k in &mut rotated.keypoints {
                let [x, y] = rotate_about([k.x, k.y], center, degrees);
                k.x = x;
                k.y = y;
            }
            let b = pose.bbox;
            let corners = [
                [b.x, b.y],
                [b.x + b.width, b.y],
                [b.x, b.y + b.height],
                [b.x + b.width, b.y + b.height],
            ]
            .map(|p| rotate_about(p, center, degrees));
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for [x, y] in corners {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            rotated.bbox = BBox::new(x0, y0, x1 - x0, y1 - y0);
            Ok((out, rotated))
        }
        BasicAugment::Noise { sigma } => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Parameter(format!(
                    "noise sigma must be >= 0, got {sigma}"
                )));
            }
            if sigma == 0.0 {
                return Ok((img.clone(), pose.clone()));
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..img.channels() {
                        let v = img.get(x, y, c) + normal.sample(&mut rng);
                        out.set(x, y, c, v.clamp(0.0, 255.0));
                    }
                }
            }
            Ok((out, pose.clone()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Keypoint;

    fn animal(w: f64) -> PoseInstance {
        let kps = (0..17)
            .map(|i| Keypoint::new((i * 3) as f64 % w, (i * 2) as f64, (i % 3 != 0) as u8))
            .collect();
        PoseInstance::new("p", "cat", kps, BBox::new(2.0, 3.0, 10.0, 12.0))
    }

    #[test]
    fn square_region_extends_short_side() {
        let r = square_region(&BBox::new(10.0, 20.0, 100.0, 60.0)).unwrap();
        assert_eq!(r.side, 100.0);
        assert_eq!((r.x, r.y), (10.0, 0.0));
        assert!(square_region(&BBox::new(0.0, 0.0, 0.0, 5.0)).is_err());
    }

    #[test]
    fn square_bbox_is_plain_crop() {
        let img = ImageGrid::from_fn(20, 20, 1, |x, y, _| (x + 20 * y) as f64);
        let pose = PoseInstance::new(
            "p",
            "cat",
            vec![Keypoint::new(7.0, 9.0, 1)],
            BBox::new(5.0, 6.0, 8.0, 8.0),
        );
        let (out, mapped) = square_crop(&img, &pose.bbox, 8, &pose).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!((out.get(x, y, 0) - img.get(x + 5, y + 6, 0)).abs() < 1e-9);
            }
        }
        assert_eq!((mapped.keypoints[0].x, mapped.keypoints[0].y), (2.0, 3.0));
        assert_eq!(mapped.bbox, BBox::new(0.0, 0.0, 8.0, 8.0));
    }

    #[test]
    fn left_edge_is_zero_padded() {
        let img = ImageGrid::filled(100, 100, 1, 200.0);
        let pose = PoseInstance::new(
            "p",
            "cat",
            vec![Keypoint::new(30.0, 50.0, 1)],
            BBox::new(0.0, 0.0, 60.0, 100.0),
        );
        let (out, mapped) = square_crop(&img, &pose.bbox, 100, &pose).unwrap();
        for y in 0..100 {
            for x in 0..100 {
                let expected = if x < 20 { 0.0 } else { 200.0 };
                assert_eq!(out.get(x, y, 0), expected, "pixel ({x}, {y})");
            }
        }
        assert_eq!(mapped.keypoints[0].x, 50.0);
    }

    #[test]
    fn flip_twice_restores_labels() {
        let img = ImageGrid::from_fn(31, 20, 3, |x, y, c| (x * 7 + y * 3 + c) as f64);
        let pose = animal(31.0);
        let s = Skeleton::animal_pose();
        let (i1, p1) = basic_augment(&img, &pose, BasicAugment::Flip, &s, 0).unwrap();
        assert_eq!(p1.keypoints[1].x, 30.0 - pose.keypoints[0].x);
        let (i2, p2) = basic_augment(&i1, &p1, BasicAugment::Flip, &s, 0).unwrap();
        assert_eq!(p2, pose);
        assert_eq!(i2, img);
    }

    #[test]
    fn zero_rotation_and_zero_noise_are_identity() {
        let img = ImageGrid::from_fn(9, 9, 1, |x, y, _| (x * y) as f64);
        let pose = animal(9.0);
        let s = Skeleton::animal_pose();
        for kind in [
            BasicAugment::Rotate { degrees: 0.0 },
            BasicAugment::Noise { sigma: 0.0 },
        ] {
            let (i, p) = basic_augment(&img, &pose, kind, &s, 4).unwrap();
            assert_eq!(i, img);
            assert_eq!(p, pose);
        }
    }

    #[test]
    fn noise_is_seeded_and_pixels_only() {
        let img = ImageGrid::filled(6, 6, 1, 100.0);
        let pose = animal(6.0);
        let s = Skeleton::animal_pose();
        let a = basic_augment(&img, &pose, BasicAugment::Noise { sigma: 5.0 }, &s, 1).unwrap();
        let b = basic_augment(&img, &pose, BasicAugment::Noise { sigma: 5.0 }, &s, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, pose);
        assert_ne!(a.0, img);
    }

    #[test]
    fn rotation_moves_keypoints_with_the_image() {
        let s = Skeleton::animal_pose();
        let img = ImageGrid::from_fn(
            21,
            21,
            1,
            |x, y, _| if x == 15 && y == 10 { 255.0 } else { 0.0 },
        );
        let mut pose = animal(21.0);
        pose.keypoints[0] = Keypoint::new(15.0, 10.0, 1);
        let (out, rotated) =
            basic_augment(&img, &pose, BasicAugment::Rotate { degrees: 90.0 }, &s, 0).unwrap();
        let k = rotated.keypoints[0];
        assert!((k.x - 10.0).abs() < 1e-9 && (k.y - 15.0).abs() < 1e-9);
        assert!((out.get(10, 15, 0) - 255.0).abs() < 1e-6);
    }
}
