//! Skeleton description and limb-rotation control points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tps::Point;
use crate::error::{Error, Result};
use crate::pose::PoseInstance;

/// Default bound on the random limb rotation, in degrees.
pub const DEFAULT_MAX_ANGLE: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limb {
    pub elbow: usize,
    pub knee: usize,
    pub paw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub keypoint_names: Vec<String>,
    pub limbs: Vec<Limb>,
    pub flip_pairs: Vec<(usize, usize)>,
}

impl Skeleton {
    pub fn new(
        keypoint_names: Vec<String>,
        limbs: Vec<Limb>,
        flip_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let s = Skeleton {
            keypoint_names,
            limbs,
            flip_pairs,
        };
        s.validate()?;
        Ok(s)
    }

    /// 17-keypoint Animal-Pose layout: eyes, ear bases, nose, then elbows,
    /// knees and paws ordered front-left, front-right, back-left, back-right.
    pub fn animal_pose() -> Self {
        let names = [
            "L_Eye",
            "R_Eye",
            "L_EarBase",
            "R_EarBase",
            "Nose",
            "L_F_Elbow",
            "R_F_Elbow",
            "L_B_Elbow",
            "R_B_Elbow",
            "L_F_Knee",
            "R_F_Knee",
            "L_B_Knee",
            "R_B_Knee",
            "L_F_Paw",
            "R_F_Paw",
            "L_B_Paw",
            "R_B_Paw",
        ];
        let limbs = (0..4)
            .map(|i| Limb {
                elbow: 5 + i,
                knee: 9 + i,
                paw: 13 + i,
            })
            .collect();
        let flip_pairs = vec![
            (0, 1),
            (2, 3),
            (5, 6),
            (7, 8),
            (9, 10),
            (11, 12),
            (13, 14),
            (15, 16),
        ];
        Skeleton::new(
            names.iter().map(|s| s.to_string()).collect(),
            limbs,
            flip_pairs,
        )
        .expect("built-in skeleton is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.num_joints();
        for (i, l) in self.limbs.iter().enumerate() {
            let idx = [l.elbow, l.knee, l.paw];
            if idx.iter().any(|&v| v >= j)
                || l.elbow == l.knee
                || l.knee == l.paw
                || l.elbow == l.paw
            {
                return Err(Error::Parameter(format!(
                    "limb {i} has invalid indices {idx:?}"
                )));
            }
        }
        let mut used = vec![false; j];
        for &(a, b) in &self.flip_pairs {
            if a >= j || b >= j || a == b || used[a] || used[b] {
                return Err(Error::Parameter(format!(
                    "flip pair ({a}, {b}) is not an involution"
                )));
            }
            used[a] = true;
            used[b] = true;
        }
        Ok(())
    }

    /// Image of every keypoint index under horizontal mirroring.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.num_joints()).collect();
        for &(a, b) in &self.flip_pairs {
            perm[a] = b;
            perm[b] = a;
        }
        perm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbRotation {
    pub limb: usize,
    pub angle_deg: f64,
}

/// Matched control points plus the new positions of every moved keypoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlPoints {
    pub src: Vec<Point>,
    pub dst: Vec<Point>,
    /// `(keypoint index, rotated position)`.
    pub moved: Vec<(usize, Point)>,
}

impl ControlPoints {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Pose with the moved keypoints replaced by their rotated positions.
    pub fn apply_to(&self, pose: &PoseInstance) -> PoseInstance {
        let mut out = pose.clone();
        for &(k, p) in &self.moved {
            out.keypoints[k].x = p[0];
            out.keypoints[k].y = p[1];
        }
        out
    }
}

pub fn rotate_about(p: Point, pivot: Point, angle_deg: f64) -> Point {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (dx, dy) = (p[0] - pivot[0], p[1] - pivot[1]);
    [pivot[0] + c * dx - s * dy, pivot[1] + s * dx + c * dy]
}

fn limb_visible(pose: &PoseInstance, limb: &Limb) -> bool {
    [limb.elbow, limb.knee, limb.paw]
        .iter()
        .all(|&i| pose.keypoints.get(i).is_some_and(|k| k.visible()))
}

/// Control points for rotating the knee and paw of each requested limb about
/// its elbow. Limbs without all three keypoints visible are skipped.
///
/// With `frame = Some((w, h))` the four image corners and every other visible
/// keypoint are added as fixed anchors so the warp stays local.
pub fn limb_control_points(
    pose: &PoseInstance,
    skeleton: &Skeleton,
    rotations: &[LimbRotation],
    frame: Option<(f64, f64)>,
) -> Result<ControlPoints> {
    if pose.num_joints() != skeleton.num_joints() {
        return Err(Error::Shape(format!(
            "pose has {} keypoints, skeleton has {}",
            pose.num_joints(),
            skeleton.num_joints()
        )));
    }
    let mut cp = ControlPoints::default();
    let mut moved = vec![false; pose.num_joints()];
    for rot in rotations {
        let limb = skeleton
            .limbs
            .get(rot.limb)
            .ok_or_else(|| Error::Parameter(format!("no limb {}", rot.limb)))?;
        if !limb_visible(pose, limb) || moved[limb.knee] || moved[limb.paw] {
            continue;
        }
        let kp = |i: usize| [pose.keypoints[i].x, pose.keypoints[i].y];
        let pivot = kp(limb.elbow);
        for i in [limb.knee, limb.paw] {
            let target = rotate_about(kp(i), pivot, rot.angle_deg);
            cp.src.push(kp(i));
            cp.dst.push(target);
            cp.moved.push((i, target));
            moved[i] = true;
        }
    }
    if cp.is_empty() {
        return Err(Error::EmptyControlSet);
    }

    if let Some((w, h)) = frame {
        let mut anchors: Vec<Point> = vec![
            [0.0, 0.0],
            [w - 1.0, 0.0],
            [0.0, h - 1.0],
            [w - 1.0, h - 1.0],
        ];
        for (i, k) in pose.keypoints.iter().enumerate() {
            if k.visible() && !moved[i] {
                anchors.push([k.x, k.y]);
            }
        }
        for a in anchors {
            let clash = cp
                .src
                .iter()
                .chain(cp.dst.iter())
                .any(|p| (p[0] - a[0]).abs() < 1e-6 && (p[1] - a[1]).abs() < 1e-6);
            if !clash {
                cp.src.push(a);
                cp.dst.push(a);
            }
        }
    }
    Ok(cp)
}

/// Picks each fully visible limb with probability 1/2 (at least one) and a
/// uniform angle in `[-max_angle, max_angle]` for each.
pub fn sample_limb_rotations(
    pose: &PoseInstance,
    skeleton: &Skeleton,
    max_angle: f64,
    seed: u64,
) -> Vec<LimbRotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible: Vec<usize> = skeleton
        .limbs
        .iter()
        .enumerate()
        .filter(|(_, l)| limb_visible(pose, l))
        .map(|(i, _)| i)
        .collect();
    if visible.is_empty() {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = visible
        .iter()
        .copied()
        .filter(|_| rng.random_bool(0.5))
        .collect();
    if chosen.is_empty() {
        chosen.push(visible[rng.random_range(0..visible.len())]);
    }
    chosen
        .into_iter()
        .map(|limb| LimbRotation {
            limb,
            angle_deg: if max_angle > 0.0 {
                rng.random_range(-max_angle..=max_angle)
            } else {
                0.0
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{BBox, Keypoint};

    fn three_joint_skeleton() -> Skeleton {
        Skeleton::new(
            vec!["elbow".into(), "knee".into(), "paw".into()],
            vec![Limb {
                elbow: 0,
                knee: 1,
                paw: 2,
            }],
            vec![],
        )
        .unwrap()
    }

    fn vertical_limb(paw_visible: u8) -> PoseInstance {
        PoseInstance::new(
            "p",
            "cat",
            vec![
                Keypoint::new(0.0, 0.0, 1),
                Keypoint::new(0.0, 1.0, 1),
                Keypoint::new(0.0, 2.0, paw_visible),
            ],
            BBox::new(0.0, 0.0, 4.0, 4.0),
        )
    }

    #[test]
    fn zero_angle_is_identity() {
        let cp = limb_control_points(
            &vertical_limb(1),
            &three_joint_skeleton(),
            &[LimbRotation {
                limb: 0,
                angle_deg: 0.0,
            }],
            None,
        )
        .unwrap();
        assert_eq!(cp.src, cp.dst);
    }

    #[test]
    fn quarter_turn() {
        let cp = limb_control_points(
            &vertical_limb(1),
            &three_joint_skeleton(),
            &[LimbRotation {
                limb: 0,
                angle_deg: 90.0,
            }],
            None,
        )
        .unwrap();
        assert!((cp.dst[0][0] + 1.0).abs() < 1e-12 && cp.dst[0][1].abs() < 1e-12);
        assert!((cp.dst[1][0] + 2.0).abs() < 1e-12 && cp.dst[1][1].abs() < 1e-12);
    }

    #[test]
    fn invisible_paw_excludes_limb() {
        let r = limb_control_points(
            &vertical_limb(0),
            &three_joint_skeleton(),
            &[LimbRotation {
                limb: 0,
                angle_deg: 10.0,
            }],
            None,
        );
        assert!(matches!(r, Err(Error::EmptyControlSet)));
        assert!(
            sample_limb_rotations(&vertical_limb(0), &three_joint_skeleton(), 15.0, 1).is_empty()
        );
    }

    #[test]
    fn anchors_include_corners_and_elbow() {
        let cp = limb_control_points(
            &vertical_limb(1),
            &three_joint_skeleton(),
            &[LimbRotation {
                limb: 0,
                angle_deg: 10.0,
            }],
            Some((8.0, 8.0)),
        )
        .unwrap();
        // knee, paw, then corners; the elbow sits on the (0, 0) corner.
        assert_eq!(cp.len(), 6);
    }

    #[test]
    fn animal_pose_skeleton_shape() {
        let s = Skeleton::animal_pose();
        assert_eq!(s.num_joints(), 17);
        assert_eq!(s.limbs.len(), 4);
        let perm = s.flip_permutation();
        assert!((0..17).all(|i| perm[perm[i]] == i));
        assert_eq!(perm[4], 4);
    }

    #[test]
    fn bad_flip_pairs_rejected() {
        let r = Skeleton::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![],
            vec![(0, 1), (1, 2)],
        );
        assert!(r.is_err());
    }
}
