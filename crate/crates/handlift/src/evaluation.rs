//! Metrics (3D end-point error, PCK curves, AUC) and the canonical-versus-
//! direct ablation harness.

use crate::format::TensorMap;
use crate::geometry::{Vec3, NUM_KEYPOINTS};
use crate::models::LiftingModel;
use crate::skeleton::SampleRecord;
use crate::training::{make_training_sample, NoiseConfig, TrainError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no visible keypoints in the evaluation mask")]
    EmptyMask,
    #[error("thresholds must be ascending")]
    ThresholdsNotAscending,
    #[error("threshold span is degenerate")]
    DegenerateSpan,
    #[error("checkpoint architecture {found:?} does not match expected {expected:?}")]
    ArchMismatch { expected: String, found: String },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean and median of a set of per-keypoint errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpeSummary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

/// Per-keypoint Euclidean errors over the visible entries of one pose pair.
pub fn keypoint_errors(
    pred: &[Vec3; NUM_KEYPOINTS],
    gt: &[Vec3; NUM_KEYPOINTS],
    visibility: &[bool; NUM_KEYPOINTS],
) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .zip(visibility)
        .filter(|(_, &v)| v)
        .map(|((p, g), _)| (*p - *g).norm())
        .collect()
}

/// End-point error over visible keypoints: mean and median.
pub fn epe(
    pred: &[Vec3; NUM_KEYPOINTS],
    gt: &[Vec3; NUM_KEYPOINTS],
    visibility: &[bool; NUM_KEYPOINTS],
) -> Result<EpeSummary, EvalError> {
    summarize_errors(keypoint_errors(pred, gt, visibility))
}

/// Summarize a pooled error collection.
pub fn summarize_errors(mut errors: Vec<f64>) -> Result<EpeSummary, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 0 {
        0.5 * (errors[mid - 1] + errors[mid])
    } else {
        errors[mid]
    };
    Ok(EpeSummary { mean, median, count: errors.len() })
}

/// Fraction of correct keypoints per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Fraction of errors at or below each threshold. Thresholds must ascend.
pub fn pck_curve(errors: &[f64], thresholds: &[f64]) -> Result<PckCurve, EvalError> {
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::ThresholdsNotAscending);
    }
    let n = errors.len().max(1) as f64;
    let fractions = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(PckCurve { thresholds: thresholds.to_vec(), fractions })
}

/// Normalized area under a PCK curve (trapezoidal rule over the threshold
/// span).
pub fn auc(curve: &PckCurve) -> Result<f64, EvalError> {
    if curve.thresholds.len() < 2 {
        return Err(EvalError::DegenerateSpan);
    }
    let span = curve.thresholds.last().unwrap() - curve.thresholds.first().unwrap();
    if span <= 0.0 {
        return Err(EvalError::DegenerateSpan);
    }
    let mut area = 0.0;
    for i in 1..curve.thresholds.len() {
        let dt = curve.thresholds[i] - curve.thresholds[i - 1];
        area += 0.5 * (curve.fractions[i] + curve.fractions[i - 1]) * dt;
    }
    Ok(area / span)
}

/// Default 3D PCK thresholds in normalized units: 0 to 2.5 in steps of
/// 0.05 (the millimeter-space table uses 0..50 mm in 1 mm steps).
pub fn default_normalized_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.05).collect()
}

pub fn default_mm_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64).collect()
}

/// Anything that can predict relative normalized coordinates for a sample.
/// Implemented by trained models and by test oracles.
pub trait WrelPredictor: Sync {
    fn predict(&self, record: &SampleRecord) -> Result<[Vec3; NUM_KEYPOINTS], TrainError>;
    fn name(&self) -> String;
}

impl WrelPredictor for LiftingModel {
    fn predict(&self, record: &SampleRecord) -> Result<[Vec3; NUM_KEYPOINTS], TrainError> {
        let sample = make_training_sample(
            record,
            crate::heatmap::SCOREMAP_VARIANCE,
            &NoiseConfig { keypoint_variance: 0.0, crop_jitter: false },
            None,
        )?;
        Ok(self.predict_wrel(&sample.maps, record.handedness)?)
    }

    fn name(&self) -> String {
        self.arch_name().to_string()
    }
}

/// Metrics of one model over one dataset.
#[derive(Debug, Clone)]
pub struct ModelMetrics {
    pub name: String,
    /// Relative normalized coordinate error.
    pub epe_norm: EpeSummary,
    /// The same errors rescaled by each sample's ground-truth scale (mm).
    pub epe_mm: EpeSummary,
    pub curve_norm: PckCurve,
    pub auc_norm: f64,
    pub curve_mm: PckCurve,
    pub auc_mm: f64,
}

/// Evaluate a predictor over records: pooled visible-keypoint errors in
/// normalized units and in millimeters.
pub fn evaluate_predictor(
    predictor: &dyn WrelPredictor,
    records: &[SampleRecord],
) -> Result<ModelMetrics, EvalError> {
    let per_record: Vec<(Vec<f64>, Vec<f64>)> = crate::runtime::install(|| {
        records
            .par_iter()
            .map(|record| {
                let pred = predictor.predict(record)?;
                let sample = make_training_sample(
                    record,
                    crate::heatmap::SCOREMAP_VARIANCE,
                    &NoiseConfig { keypoint_variance: 0.0, crop_jitter: false },
                    None,
                )?;
                let errors = keypoint_errors(&pred, &sample.gt_wrel.w_rel, &record.visibility);
                let mm: Vec<f64> = errors.iter().map(|e| e * sample.scale).collect();
                Ok((errors, mm))
            })
            .collect::<Result<Vec<_>, TrainError>>()
    })?;

    let mut errors_norm = Vec::new();
    let mut errors_mm = Vec::new();
    for (norm, mm) in per_record {
        errors_norm.extend(norm);
        errors_mm.extend(mm);
    }

    let curve_norm = pck_curve(&errors_norm, &default_normalized_thresholds())?;
    let curve_mm = pck_curve(&errors_mm, &default_mm_thresholds())?;
    Ok(ModelMetrics {
        name: predictor.name(),
        epe_norm: summarize_errors(errors_norm)?,
        epe_mm: summarize_errors(errors_mm)?,
        auc_norm: auc(&curve_norm)?,
        auc_mm: auc(&curve_mm)?,
        curve_norm,
        curve_mm,
    })
}

/// Side-by-side metrics of two checkpoints over the same records.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<ModelMetrics>,
}

impl AblationReport {
    /// Machine-readable table, one row per model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,epe_norm_mean,epe_norm_median,epe_mm_mean,epe_mm_median,auc_norm,auc_mm\n",
        );
        for m in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                m.name,
                m.epe_norm.mean,
                m.epe_norm.median,
                m.epe_mm.mean,
                m.epe_mm.median,
                m.auc_norm,
                m.auc_mm
            ));
        }
        out
    }
}

/// Compare two predictors over identical records.
pub fn ablation_report(
    records: &[SampleRecord],
    a: &dyn WrelPredictor,
    b: &dyn WrelPredictor,
) -> Result<AblationReport, EvalError> {
    Ok(AblationReport {
        rows: vec![evaluate_predictor(a, records)?, evaluate_predictor(b, records)?],
    })
}

/// Load a lifting model from checkpoint tensors, checking the architecture.
pub fn model_from_checkpoint(
    manifest_arch: &str,
    width_scale: f64,
    iteration: u64,
    tensors: &TensorMap,
) -> Result<LiftingModel, EvalError> {
    if manifest_arch != "poseprior" && manifest_arch != "poseprior-direct" {
        return Err(EvalError::ArchMismatch {
            expected: "poseprior | poseprior-direct".into(),
            found: manifest_arch.to_string(),
        });
    }
    let (model, _) =
        crate::training::model_from_tensors(manifest_arch, width_scale, iteration, tensors)?;
    Ok(model)
}
