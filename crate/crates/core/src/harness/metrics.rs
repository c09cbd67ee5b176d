//! Evaluation utilities: PCK, distillation losses and subset diversity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dpp::subset_log_det;
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, FeatureMatrix, KernelKind, KernelMatrix};
use crate::memory::{baseline_select, StrategyKind};
use crate::pose::PoseInstance;

/// Default PCK threshold as a fraction of the reference length.
pub const DEFAULT_PCK_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceLength {
    /// `max(bbox width, bbox height)` of the ground-truth instance.
    #[default]
    BboxMaxSide,
    BboxDiagonal,
}

impl ReferenceLength {
    fn of(&self, p: &PoseInstance) -> f64 {
        match self {
            ReferenceLength::BboxMaxSide => p.bbox.max_side(),
            ReferenceLength::BboxDiagonal => p.bbox.width.hypot(p.bbox.height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PckCount {
    pub correct: usize,
    pub visible: usize,
}

impl PckCount {
    /// Fraction correct; `None` without visible keypoints.
    pub fn score(&self) -> Option<f64> {
        (self.visible > 0).then(|| self.correct as f64 / self.visible as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PckReport {
    pub per_class: BTreeMap<String, PckCount>,
    pub overall: PckCount,
    /// Ground-truth instances without a prediction (scored all-incorrect).
    pub missing_predictions: usize,
}

/// Predicted keypoint positions keyed by instance id.
pub type Predictions = BTreeMap<String, Vec<[f64; 2]>>;

pub fn pck_score(
    predictions: &Predictions,
    ground_truth: &[PoseInstance],
    tau: f64,
) -> Result<PckReport> {
    pck_score_with(predictions, ground_truth, tau, ReferenceLength::default())
}

pub fn pck_score_with(
    predictions: &Predictions,
    ground_truth: &[PoseInstance],
    tau: f64,
    reference: ReferenceLength,
) -> Result<PckReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    let mut report = PckReport::default();
    for gt in ground_truth {
        let visible = gt.visible_count();
        let mut correct = 0;
        match predictions.get(&gt.id) {
            None => report.missing_predictions += 1,
            Some(pred) => {
                if pred.len() != gt.num_joints() {
                    return Err(Error::Shape(format!(
                        "prediction for {} has {} keypoints, ground truth has {}",
                        gt.id,
                        pred.len(),
                        gt.num_joints()
                    )));
                }
                let threshold = tau * reference.of(gt);
                correct = gt
                    .keypoints
                    .iter()
                    .zip(pred)
                    .filter(|(k, p)| k.visible() && (p[0] - k.x).hypot(p[1] - k.y) <= threshold)
                    .count();
            }
        }
        let entry = report.per_class.entry(gt.class_label.clone()).or_default();
        entry.correct += correct;
        entry.visible += visible;
        report.overall.correct += correct;
        report.overall.visible += visible;
    }
    Ok(report)
}

/// Stack of heatmaps with an arbitrary shape, e.g. `[N, J, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl HeatmapSet {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(HeatmapSet { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn mse(a: &HeatmapSet, b: &HeatmapSet) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    if a.values.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.values.len() as f64)
}

/// `α · MSE(student, teacher) + (1 − α) · MSE(student, gt)`.
pub fn distillation_loss(
    student: &HeatmapSet,
    teacher: &HeatmapSet,
    gt: &HeatmapSet,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if student.shape != teacher.shape || student.shape != gt.shape {
        return Err(Error::Shape(
            "student, teacher and ground truth shapes differ".into(),
        ));
    }
    Ok(alpha * mse(student, teacher)? + (1.0 - alpha) * mse(student, gt)?)
}

/// Student, teacher and target heatmaps for one data split.
#[derive(Debug, Clone, Copy)]
pub struct DistillationTriple<'a> {
    pub student: &'a HeatmapSet,
    pub teacher: &'a HeatmapSet,
    pub gt: &'a HeatmapSet,
}

/// Balanced-finetuning objective: the distillation loss on the exemplar
/// split plus the same loss on the balanced new-class split.
pub fn balanced_finetune_loss(
    old: DistillationTriple,
    new: DistillationTriple,
    alpha: f64,
) -> Result<f64> {
    Ok(distillation_loss(old.student, old.teacher, old.gt, alpha)?
        + distillation_loss(new.student, new.teacher, new.gt, alpha)?)
}

/// Herding subset of `n` new-class instances used for balanced finetuning.
pub fn balanced_finetune_subset(instances: &[PoseInstance], n: usize) -> Result<Vec<String>> {
    baseline_select(instances, n, StrategyKind::Herding, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityMetrics {
    pub size: usize,
    /// Log-determinant of the selected kernel submatrix.
    pub log_det: f64,
    pub degenerate: bool,
    /// Pairwise feature distances; `None` for singleton selections.
    pub mean_pairwise_distance: Option<f64>,
    pub min_pairwise_distance: Option<f64>,
}

pub fn diversity_report(
    features: &FeatureMatrix,
    selection: &[usize],
    kind: KernelKind,
) -> Result<DiversityMetrics> {
    check_selection(features, selection)?;
    let kernel = build_kernel(&features.select_rows(selection), kind)?;
    let local: Vec<usize> = (0..selection.len()).collect();
    diversity_from_kernel(&kernel, &local, &features.select_rows(selection), &local)
}

/// Diversity of `selection` with a precomputed kernel over the same rows as
/// `features`.
pub fn diversity_with_kernel(
    kernel: &KernelMatrix,
    features: &FeatureMatrix,
    selection: &[usize],
) -> Result<DiversityMetrics> {
    check_selection(features, selection)?;
    if kernel.n() != features.nrows() {
        return Err(Error::Shape(format!(
            "kernel is {0}x{0} but there are {1} feature rows",
            kernel.n(),
            features.nrows()
        )));
    }
    diversity_from_kernel(kernel, selection, features, selection)
}

fn check_selection(features: &FeatureMatrix, selection: &[usize]) -> Result<()> {
    if selection.is_empty() {
        return Err(Error::Parameter("diversity of an empty selection".into()));
    }
    if let Some(&bad) = selection.iter().find(|&&i| i >= features.nrows()) {
        return Err(Error::Parameter(format!(
            "index {bad} out of range for {} rows",
            features.nrows()
        )));
    }
    Ok(())
}

fn diversity_from_kernel(
    kernel: &KernelMatrix,
    kernel_idx: &[usize],
    features: &FeatureMatrix,
    feature_idx: &[usize],
) -> Result<DiversityMetrics> {
    let ld = subset_log_det(kernel, kernel_idx);
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut pairs = 0usize;
    for a in 0..feature_idx.len() {
        for b in (a + 1)..feature_idx.len() {
            let d = features
                .squared_distance(feature_idx[a], feature_idx[b])
                .sqrt();
            sum += d;
            min = min.min(d);
            pairs += 1;
        }
    }
    Ok(DiversityMetrics {
        size: feature_idx.len(),
        log_det: ld.value,
        degenerate: ld.degenerate,
        mean_pairwise_distance: (pairs > 0).then(|| sum / pairs as f64),
        min_pairwise_distance: (pairs > 0).then_some(min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{BBox, Keypoint};

    fn gt(id: &str, kps: &[(f64, f64)]) -> PoseInstance {
        PoseInstance::new(
            id,
            "cat",
            kps.iter().map(|&(x, y)| Keypoint::new(x, y, 1)).collect(),
            BBox::new(0.0, 0.0, 100.0, 100.0),
        )
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = vec![gt("a", &[(10.0, 10.0), (20.0, 30.0)])];
        let preds: Predictions = [("a".to_string(), vec![[10.0, 10.0], [20.0, 30.0]])].into();
        assert_eq!(
            pck_score(&preds, &g, 0.05).unwrap().overall.score(),
            Some(1.0)
        );
    }

    #[test]
    fn error_beyond_threshold_fails() {
        let g = vec![gt("a", &[(10.0, 10.0)])];
        let preds: Predictions = [("a".to_string(), vec![[16.0, 10.0]])].into();
        assert_eq!(
            pck_score(&preds, &g, 0.05).unwrap().overall.score(),
            Some(0.0)
        );
    }

    #[test]
    fn mixed_errors_count_half() {
        let g = vec![
            gt("a", &[(0.0, 0.0), (50.0, 50.0)]),
            gt("b", &[(0.0, 0.0), (50.0, 50.0)]),
        ];
        let preds: Predictions = [
            ("a".to_string(), vec![[0.0, 0.0], [54.0, 50.0]]),
            ("b".to_string(), vec![[0.0, 6.0], [50.0, 60.0]]),
        ]
        .into();
        let r = pck_score(&preds, &g, 0.05).unwrap();
        assert_eq!(
            r.overall,
            PckCount {
                correct: 2,
                visible: 4
            }
        );
        assert_eq!(r.overall.score(), Some(0.5));
    }

    #[test]
    fn missing_prediction_counts_as_wrong() {
        let g = vec![gt("a", &[(0.0, 0.0)]), gt("b", &[(0.0, 0.0)])];
        let preds: Predictions = [("a".to_string(), vec![[0.0, 0.0]])].into();
        let r = pck_score(&preds, &g, 0.05).unwrap();
        assert_eq!(r.missing_predictions, 1);
        assert_eq!(r.overall.score(), Some(0.5));
    }

    #[test]
    fn invisible_keypoints_are_ignored() {
        let mut g = gt("a", &[(0.0, 0.0), (10.0, 10.0)]);
        g.keypoints[1].v = 0;
        let preds: Predictions = [("a".to_string(), vec![[0.0, 0.0], [90.0, 90.0]])].into();
        let r = pck_score(&preds, &[g], 0.05).unwrap();
        assert_eq!(
            r.overall,
            PckCount {
                correct: 1,
                visible: 1
            }
        );
    }

    fn set(values: &[f64]) -> HeatmapSet {
        HeatmapSet::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn distillation_examples() {
        let a = set(&[0.2, 0.4]);
        assert_eq!(distillation_loss(&a, &a, &a, 0.5).unwrap(), 0.0);
        assert_eq!(
            distillation_loss(&a, &a, &set(&[1.0, 1.0]), 1.0).unwrap(),
            0.0
        );
        let loss = distillation_loss(&set(&[0.5]), &set(&[1.0]), &set(&[0.0]), 0.5).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
        assert!(matches!(
            distillation_loss(&a, &set(&[1.0]), &a, 0.5),
            Err(Error::Shape(_))
        ));
        assert!(distillation_loss(&a, &a, &a, 1.5).is_err());
    }

    #[test]
    fn diversity_examples() {
        let f = FeatureMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let single = diversity_report(&f, &[1], KernelKind::Rbf { gamma: 1.0 }).unwrap();
        assert_eq!(single.log_det, 0.0);
        assert_eq!(single.mean_pairwise_distance, None);

        let id = KernelMatrix::identity(3);
        let m = diversity_with_kernel(&id, &f, &[0, 1, 2]).unwrap();
        assert_eq!(m.log_det, 0.0);
        assert!(!m.degenerate);

        let dup = diversity_report(&f, &[0, 2], KernelKind::Rbf { gamma: 1.0 }).unwrap();
        assert!(dup.degenerate);
        assert_eq!(dup.min_pairwise_distance, Some(0.0));

        assert!(diversity_report(&f, &[], KernelKind::Linear).is_err());
    }
}
