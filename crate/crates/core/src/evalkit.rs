//! Evaluation metrics: mean end-point error, PCK curves with normalized
//! area under the curve, and classification summaries for the joint labels.
//!
//! All functions are pure. Inputs are expected in metric units (millimetres
//! for 3D, pixels for 2D) — denormalization is the caller's business.

use ndarray::{ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::skeleton::{HandPose2D, HandPose3D};

/// Lower edge of the standard 3D PCK threshold sweep, in millimetres.
pub const PCK_MIN_MM: f64 = 20.0;
/// Upper edge of the standard 3D PCK threshold sweep, in millimetres.
pub const PCK_MAX_MM: f64 = 50.0;

/// The standard sweep: integer thresholds 20, 21, ..., 50 mm.
pub fn default_thresholds() -> Vec<f64> {
    (0..=30).map(|k| PCK_MIN_MM + k as f64).collect()
}

/// Per-keypoint Euclidean distances between two (B, J, D) batches,
/// flattened in batch-major order.
pub fn joint_errors(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<Vec<f64>> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (b, j, _) = pred.dim();
    if b == 0 || j == 0 {
        return Err(Error::InvalidData("joint_errors needs at least one keypoint".into()));
    }
    let mut errors = Vec::with_capacity(b * j);
    for (p_pose, g_pose) in pred.outer_iter().zip(gt.outer_iter()) {
        errors.extend(pose_errors(p_pose, g_pose));
    }
    Ok(errors)
}

fn pose_errors(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Vec<f64> {
    pred.outer_iter()
        .zip(gt.outer_iter())
        .map(|(p, g)| {
            p.iter()
                .zip(g.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Mean end-point error over a (B, J, D) batch: the average Euclidean
/// distance per keypoint.
pub fn epe(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    let errors = joint_errors(pred, gt)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Mean end-point error of a single 2D pose, in the poses' pixel frame.
pub fn epe_2d(pred: &HandPose2D, gt: &HandPose2D) -> f64 {
    let errors = pose_errors(pred.as_array().view(), gt.as_array().view());
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// Mean end-point error of a single 3D pose, in the poses' metric unit.
pub fn epe_3d(pred: &HandPose3D, gt: &HandPose3D) -> f64 {
    let errors = pose_errors(pred.as_array().view(), gt.as_array().view());
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// Fraction of keypoints within each threshold of a sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PckCurve {
    /// Strictly ascending thresholds, same unit as the errors.
    pub thresholds: Vec<f64>,
    /// PCK at each threshold; non-decreasing, in [0, 1].
    pub values: Vec<f64>,
}

/// Computes the PCK curve over `thresholds` and its area under the curve,
/// trapezoidally integrated and normalized by the threshold span so the
/// result lies in [0, 1].
///
/// The comparison is inclusive: an error exactly at a threshold counts as
/// correct.
pub fn pck_auc(errors: &[f64], thresholds: &[f64]) -> Result<(PckCurve, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidData("pck_auc needs at least one error".into()));
    }
    if let Some(bad) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::InvalidData(format!(
            "errors must be finite and non-negative, got {bad}"
        )));
    }
    if thresholds.len() < 2 {
        return Err(Error::InvalidConfig("need at least two thresholds".into()));
    }
    if thresholds
        .windows(2)
        .any(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite())
    {
        return Err(Error::InvalidConfig(
            "thresholds must be finite and strictly ascending".into(),
        ));
    }

    let n = errors.len() as f64;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|t| errors.iter().filter(|e| **e <= *t).count() as f64 / n)
        .collect();

    let span = thresholds[thresholds.len() - 1] - thresholds[0];
    let mut area = 0.0;
    for k in 1..thresholds.len() {
        area += 0.5 * (values[k] + values[k - 1]) * (thresholds[k] - thresholds[k - 1]);
    }
    let auc = area / span;
    Ok((PckCurve { thresholds: thresholds.to_vec(), values }, auc))
}

/// Accuracy plus macro-averaged precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Macro average over the classes present in the ground truth. A class
    /// that is never predicted contributes precision 0.
    pub precision: f64,
    pub recall: f64,
}

/// Scores integer class predictions against ground truth. Macro averages
/// run over the classes that actually occur in `gt`; classes the model
/// invents but the ground truth lacks only hurt via precision of the
/// classes they steal from (and via accuracy).
pub fn classification_report(
    pred: &[usize],
    gt: &[usize],
    num_classes: usize,
) -> Result<ClassificationReport> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidData("classification_report needs labels".into()));
    }
    if let Some(bad) = pred.iter().chain(gt).find(|l| **l >= num_classes) {
        return Err(Error::InvalidData(format!(
            "label {bad} outside [0, {num_classes})"
        )));
    }

    let mut true_pos = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut gt_count = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        pred_count[p] += 1;
        gt_count[g] += 1;
        if p == g {
            true_pos[p] += 1;
            correct += 1;
        }
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes {
        if gt_count[c] == 0 {
            continue;
        }
        present += 1;
        recall_sum += true_pos[c] as f64 / gt_count[c] as f64;
        if pred_count[c] > 0 {
            precision_sum += true_pos[c] as f64 / pred_count[c] as f64;
        }
    }

    Ok(ClassificationReport {
        accuracy: correct as f64 / pred.len() as f64,
        precision: precision_sum / present as f64,
        recall: recall_sum / present as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array3<f64> {
        let mut x = Array3::zeros((b, 21, d));
        x.mapv_inplace(|_| rng.gen_range(-40.0..40.0));
        x
    }

    #[test]
    fn epe_matches_hand_computed_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = pose_batch(&mut rng, 3, 3);
        assert_eq!(epe(gt.view(), gt.view()).unwrap(), 0.0);

        let offset = gt.clone() + &ndarray::arr1(&[3.0, 4.0, 0.0]);
        let err = epe(offset.view(), gt.view()).unwrap();
        assert!((err - 5.0).abs() < 1e-12, "a (3,4,0) offset is 5 away, got {err}");

        // Half the keypoints pushed 2 units along x, half exact: mean 1.
        let mut half = gt.clone();
        for b in 0..3 {
            for j in 0..21 {
                if (b * 21 + j) % 2 == 0 {
                    half[[b, j, 0]] += 2.0;
                }
            }
        }
        // 32 of 63 keypoints moved (indices 0, 2, ... of 63): mean = 64/63.
        let err = epe(half.view(), gt.view()).unwrap();
        assert!((err - 64.0 / 63.0).abs() < 1e-12, "got {err}");
    }

    #[test]
    fn epe_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = pose_batch(&mut rng, 2, 3);
            let pred = pose_batch(&mut rng, 2, 3);
            let t = ndarray::arr1(&[
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            ]);
            let base = epe(pred.view(), gt.view()).unwrap();
            let moved = epe((pred.clone() + &t).view(), (gt.clone() + &t).view()).unwrap();
            assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn pose_helpers_agree_with_batch_epe() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a3 = pose_batch(&mut rng, 1, 3);
        let b3 = pose_batch(&mut rng, 1, 3);
        let pa = HandPose3D::new(a3.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
        let pb = HandPose3D::new(b3.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
        let batch = epe(a3.view(), b3.view()).unwrap();
        assert!((epe_3d(&pa, &pb) - batch).abs() < 1e-12);

        let a2 = pose_batch(&mut rng, 1, 2).mapv(f64::abs);
        let b2 = pose_batch(&mut rng, 1, 2).mapv(f64::abs);
        let pa = HandPose2D::new(a2.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
        let pb = HandPose2D::new(b2.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
        let batch = epe(a2.view(), b2.view()).unwrap();
        assert!((epe_2d(&pa, &pb) - batch).abs() < 1e-12);
    }

    #[test]
    fn pck_saturates_at_the_extremes() {
        let thresholds = default_thresholds();
        assert_eq!(thresholds.len(), 31);
        assert_eq!(thresholds[0], 20.0);
        assert_eq!(thresholds[30], 50.0);

        let (curve, auc) = pck_auc(&vec![5.0; 64], &thresholds).unwrap();
        assert!(curve.values.iter().all(|v| *v == 1.0));
        assert_eq!(auc, 1.0, "all errors below every threshold");

        let (curve, auc) = pck_auc(&vec![100.0; 64], &thresholds).unwrap();
        assert!(curve.values.iter().all(|v| *v == 0.0));
        assert_eq!(auc, 0.0, "all errors above every threshold");
    }

    #[test]
    fn pck_threshold_comparison_is_inclusive() {
        let (curve, _) = pck_auc(&[20.0, 30.0], &[20.0, 30.0]).unwrap();
        assert_eq!(curve.values, vec![0.5, 1.0]);
    }

    #[test]
    fn uniform_errors_give_half_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let errors: Vec<f64> = (0..10_000).map(|_| rng.gen_range(20.0..50.0)).collect();
        let (curve, auc) = pck_auc(&errors, &default_thresholds()).unwrap();
        assert!(
            (auc - 0.5).abs() <= 0.02,
            "PCK of uniform errors is linear, AUC near 0.5, got {auc}"
        );
        for w in curve.values.windows(2) {
            assert!(w[1] >= w[0], "PCK must be non-decreasing in the threshold");
        }
        assert!(curve.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn auc_is_monotone_under_pointwise_improvement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let thresholds = default_thresholds();
        for _ in 0..20 {
            let errors: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..80.0)).collect();
            let improved: Vec<f64> = errors.iter().map(|e| e * 0.9).collect();
            let (_, base) = pck_auc(&errors, &thresholds).unwrap();
            let (_, better) = pck_auc(&improved, &thresholds).unwrap();
            assert!(better >= base, "shrinking every error cannot lower the AUC");
            assert!((0.0..=1.0).contains(&base));
        }
    }

    #[test]
    fn pck_rejects_degenerate_inputs() {
        let thresholds = default_thresholds();
        assert!(pck_auc(&[], &thresholds).is_err());
        assert!(pck_auc(&[1.0, f64::NAN], &thresholds).is_err());
        assert!(pck_auc(&[1.0, -2.0], &thresholds).is_err());
        assert!(pck_auc(&[1.0], &[20.0]).is_err());
        assert!(pck_auc(&[1.0], &[30.0, 20.0]).is_err());
        assert!(pck_auc(&[1.0], &[20.0, 20.0]).is_err());
    }

    #[test]
    fn perfect_predictions_score_ones() {
        let gt = vec![0, 1, 2, 3, 2, 1, 0];
        let report = classification_report(&gt, &gt, 4).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_two_classes() {
        let gt = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let pred = vec![0; 8];
        let report = classification_report(&pred, &gt, 2).unwrap();
        assert_eq!(report.accuracy, 0.5);
        // Class 0: precision 4/8; class 1: never predicted, counts as 0.
        assert_eq!(report.precision, 0.25);
        // Class 0 recall 1, class 1 recall 0.
        assert_eq!(report.recall, 0.5);
    }

    #[test]
    fn classes_absent_from_ground_truth_are_excluded() {
        // Only class 0 occurs in gt; classes 1 and 2 of C=3 must not drag
        // the macro averages down by their absence.
        let gt = vec![0, 0, 0, 0];
        let pred = vec![0, 0, 1, 2];
        let report = classification_report(&pred, &gt, 3).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.precision, 1.0, "class 0 was only predicted when true");
        assert_eq!(report.recall, 0.5, "class 0 was recovered half the time");
    }

    #[test]
    fn classification_report_rejects_bad_labels() {
        assert!(classification_report(&[0, 1], &[0], 2).is_err());
        assert!(classification_report(&[], &[], 2).is_err());
        assert!(classification_report(&[2], &[0], 2).is_err());
        assert!(classification_report(&[0], &[5], 2).is_err());
    }

    #[test]
    fn joint_errors_flatten_batch_major() {
        let mut gt = Array3::zeros((2, 21, 3));
        let mut pred = Array3::zeros((2, 21, 3));
        gt[[0, 0, 0]] = 1.0;
        pred[[1, 20, 2]] = 2.0;
        let errors = joint_errors(pred.view(), gt.view()).unwrap();
        assert_eq!(errors.len(), 42);
        assert_eq!(errors[0], 1.0);
        assert_eq!(errors[41], 2.0);
        assert!(errors[1..41].iter().all(|e| *e == 0.0));

        let bad = Array3::zeros((2, 20, 3));
        assert!(joint_errors(pred.view(), bad.view()).is_err());
    }
}
