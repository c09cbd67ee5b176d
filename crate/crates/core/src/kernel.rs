//! Pose feature matrices and L-ensemble kernels.
//!
//! Each pose is flattened to a row `(x1, y1, v1, ..., xJ, yJ, vJ)`. The linear
//! kernel `F Fᵀ` has rank at most `3J`, which caps how many items a k-DPP over
//! it can select; the RBF kernel has no such ceiling for distinct poses.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseInstance;

/// Relative eigenvalue cut-off used by [`numerical_rank`] when callers have no
/// better tolerance in mind.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Raw pixel coordinates.
    Pixel,
    /// Coordinates relative to the instance bbox, clamped to `[0, 1]`.
    #[default]
    BboxNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlattenOptions {
    pub scaling: Scaling,
    /// Zero the coordinates of invisible keypoints so they do not contribute
    /// to distances.
    pub mask_invisible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    joints: usize,
    scaling: Scaling,
}

impl FeatureMatrix {
    /// Wraps an existing `N x D` matrix. `D` must be a multiple of 3.
    pub fn from_matrix(data: DMatrix<f64>, scaling: Scaling) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Empty("feature matrix has no rows".into()));
        }
        if data.ncols() == 0 || !data.ncols().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "feature width {} is not a positive multiple of 3",
                data.ncols()
            )));
        }
        let joints = data.ncols() / 3;
        Ok(FeatureMatrix {
            data,
            joints,
            scaling,
        })
    }

    /// Builds a feature matrix from plain rows without the `3J` shape rule.
    /// Used for generic (non-pose) vectors, e.g. in tests and bindings.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("feature matrix has no rows".into()));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows must share one positive width".into()));
        }
        let data = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Ok(FeatureMatrix {
            data,
            joints: d.div_ceil(3),
            scaling: Scaling::Pixel,
        })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select_rows(rows.iter()),
            joints: self.joints,
            scaling: self.scaling,
        }
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.data.ncols() {
            let d = self.data[(i, c)] - self.data[(j, c)];
            acc += d * d;
        }
        acc
    }
}

pub fn flatten_poses(instances: &[PoseInstance], scaling: Scaling) -> Result<FeatureMatrix> {
    flatten_poses_with(
        instances,
        FlattenOptions {
            scaling,
            mask_invisible: false,
        },
    )
}

pub fn flatten_poses_with(
    instances: &[PoseInstance],
    opts: FlattenOptions,
) -> Result<FeatureMatrix> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Empty("no pose instances to flatten".into()))?;
    let joints = first.num_joints();
    if joints == 0 {
        return Err(Error::Shape(format!(
            "instance {} has no keypoints",
            first.id
        )));
    }
    if let Some(bad) = instances.iter().find(|p| p.num_joints() != joints) {
        return Err(Error::Shape(format!(
            "instance {} has {} keypoints, expected {}",
            bad.id,
            bad.num_joints(),
            joints
        )));
    }
    if opts.scaling == Scaling::BboxNormalized {
        if let Some(bad) = instances.iter().find(|p| !p.bbox.is_valid()) {
            return Err(Error::Parameter(format!(
                "instance {} has an invalid bbox {:?}",
                bad.id, bad.bbox
            )));
        }
    }

    let mut data = DMatrix::zeros(instances.len(), 3 * joints);
    for (i, pose) in instances.iter().enumerate() {
        for (j, kp) in pose.keypoints.iter().enumerate() {
            let (mut x, mut y) = match opts.scaling {
                Scaling::Pixel => (kp.x, kp.y),
                Scaling::BboxNormalized => (
                    ((kp.x - pose.bbox.x) / pose.bbox.width).clamp(0.0, 1.0),
                    ((kp.y - pose.bbox.y) / pose.bbox.height).clamp(0.0, 1.0),
                ),
            };
            let v = if kp.visible() { 1.0 } else { 0.0 };
            if opts.mask_invisible && !kp.visible() {
                x = 0.0;
                y = 0.0;
            }
            data[(i, 3 * j)] = x;
            data[(i, 3 * j + 1)] = y;
            data[(i, 3 * j + 2)] = v;
        }
    }
    Ok(FeatureMatrix {
        data,
        joints,
        scaling: opts.scaling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelKind {
    fn validate(&self) -> Result<()> {
        match *self {
            KernelKind::Rbf { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => Err(
                Error::Parameter(format!("RBF gamma must be finite and >= 0, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Kernel value between two feature rows.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelKind::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelKind::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Symmetric positive semi-definite `N x N` matrix defining an L-ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    data: DMatrix<f64>,
    kind: Option<KernelKind>,
}

impl KernelMatrix {
    /// Wraps a precomputed matrix. Checks that it is square, finite and
    /// symmetric; positive semi-definiteness is the caller's responsibility
    /// (see [`KernelMatrix::min_eigenvalue`]).
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::Shape(format!(
                "kernel must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel has non-finite entries".into()));
        }
        let n = data.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (data[(i, j)], data[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::Numeric(format!(
                        "kernel is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(KernelMatrix { data, kind: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("kernel rows must form a square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        KernelMatrix {
            data: DMatrix::identity(n, n),
            kind: None,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        KernelMatrix {
            data: DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }),
            kind: None,
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// The construction recipe, `None` for matrices supplied directly.
    pub fn kind(&self) -> Option<KernelKind> {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn max_diagonal(&self) -> f64 {
        self.data.diagonal().iter().copied().fold(0.0, f64::max)
    }

    /// Principal submatrix on `indices`.
    pub fn submatrix(&self, indices: &[usize]) -> DMatrix<f64> {
        let k = indices.len();
        DMatrix::from_fn(k, k, |a, b| self.data[(indices[a], indices[b])])
    }

    pub fn scaled(&self, c: f64) -> Self {
        KernelMatrix {
            data: &self.data * c,
            kind: None,
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel has non-finite entries".into()));
        }
        if self.n() == 0 {
            return Ok(Vec::new());
        }
        let eig = SymmetricEigen::new(self.data.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }
}

pub fn build_kernel(features: &FeatureMatrix, kind: KernelKind) -> Result<KernelMatrix> {
    kind.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Empty("cannot build a kernel over zero rows".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| features.row(i)).collect();
    let mut data = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                match kind {
                    KernelKind::Rbf { .. } => 1.0,
                    KernelKind::Linear => kind.eval(&rows[i], &rows[i]),
                }
            } else {
                kind.eval(&rows[i], &rows[j])
            };
            data[(i, j)] = v;
            data[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        data,
        kind: Some(kind),
    })
}

/// Number of eigenvalues above `tol` times the largest eigenvalue.
pub fn numerical_rank(kernel: &KernelMatrix, tol: f64) -> Result<usize> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parameter(format!(
            "rank tolerance must be > 0, got {tol}"
        )));
    }
    let vals = kernel.eigenvalues()?;
    let largest = vals.last().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return Ok(0);
    }
    let cutoff = tol * largest;
    Ok(vals.iter().filter(|&&v| v > cutoff).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{BBox, Keypoint};
    use approx::assert_relative_eq;

    fn pose(id: &str, kps: Vec<Keypoint>, bbox: BBox) -> PoseInstance {
        PoseInstance::new(id, "cat", kps, bbox)
    }

    #[test]
    fn flatten_shape_17_joints() {
        let kps = vec![Keypoint::new(1.0, 2.0, 1); 17];
        let f = flatten_poses(
            &[pose("a", kps, BBox::new(0.0, 0.0, 10.0, 10.0))],
            Scaling::Pixel,
        )
        .unwrap();
        assert_eq!((f.nrows(), f.ncols()), (1, 51));
    }

    #[test]
    fn zero_keypoints_give_zero_row() {
        let kps = vec![Keypoint::new(0.0, 0.0, 0); 17];
        for scaling in [Scaling::Pixel, Scaling::BboxNormalized] {
            let f = flatten_poses(
                &[pose("a", kps.clone(), BBox::new(0.0, 0.0, 50.0, 40.0))],
                scaling,
            )
            .unwrap();
            assert!(f.row(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bbox_normalization_divides_by_box() {
        let p = pose(
            "a",
            vec![Keypoint::new(64.0, 32.0, 1)],
            BBox::new(0.0, 0.0, 128.0, 128.0),
        );
        let f = flatten_poses(&[p], Scaling::BboxNormalized).unwrap();
        assert_eq!(f.row(0), vec![0.5, 0.25, 1.0]);
    }

    #[test]
    fn masked_invisible_coordinates_are_zeroed() {
        let p = pose(
            "a",
            vec![Keypoint::new(64.0, 32.0, 0), Keypoint::new(10.0, 10.0, 1)],
            BBox::new(0.0, 0.0, 100.0, 100.0),
        );
        let f = flatten_poses_with(
            &[p],
            FlattenOptions {
                scaling: Scaling::BboxNormalized,
                mask_invisible: true,
            },
        )
        .unwrap();
        assert_eq!(f.row(0), vec![0.0, 0.0, 0.0, 0.1, 0.1, 1.0]);
    }

    #[test]
    fn flatten_errors() {
        assert!(matches!(
            flatten_poses(&[], Scaling::Pixel),
            Err(Error::Empty(_))
        ));
        let a = pose(
            "a",
            vec![Keypoint::new(0.0, 0.0, 1); 17],
            BBox::new(0.0, 0.0, 1.0, 1.0),
        );
        let b = pose(
            "b",
            vec![Keypoint::new(0.0, 0.0, 1); 16],
            BBox::new(0.0, 0.0, 1.0, 1.0),
        );
        assert!(matches!(
            flatten_poses(&[a.clone(), b], Scaling::Pixel),
            Err(Error::Shape(_))
        ));
        let c = pose(
            "c",
            vec![Keypoint::new(0.0, 0.0, 1); 17],
            BBox::new(0.0, 0.0, 0.0, 1.0),
        );
        assert!(matches!(
            flatten_poses(&[a, c], Scaling::BboxNormalized),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn linear_kernel_examples() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let k = build_kernel(&f, KernelKind::Linear).unwrap();
        assert_eq!(k.matrix(), &DMatrix::identity(2, 2));

        let f = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let k = build_kernel(&f, KernelKind::Linear).unwrap();
        assert_eq!(
            k.matrix(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0])
        );
        assert_eq!(numerical_rank(&k, DEFAULT_RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn rbf_kernel_examples() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let k = build_kernel(&f, KernelKind::Rbf { gamma: 0.5 }).unwrap();
        assert_relative_eq!(k.get(0, 1), 0.606_530_659_712_633, epsilon = 1e-12);
        assert_eq!(k.get(0, 0), 1.0);

        let k = build_kernel(&f, KernelKind::Rbf { gamma: 0.0 }).unwrap();
        assert!(k.matrix().iter().all(|&v| v == 1.0));

        assert!(matches!(
            build_kernel(&f, KernelKind::Rbf { gamma: -1.0 }),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn rank_of_identity() {
        assert_eq!(
            numerical_rank(&KernelMatrix::identity(5), DEFAULT_RANK_TOL).unwrap(),
            5
        );
        assert!(numerical_rank(&KernelMatrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn non_finite_kernel_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(
            KernelMatrix::from_matrix(m),
            Err(Error::Numeric(_))
        ));
    }
}
