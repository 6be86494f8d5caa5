//! Evaluation metrics and the segmentation loss shared with the trainer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::grid::{FieldKind, GravityMap, VolumeField};

/// Cells with `|Δρ|` above this (kg/m³) count as non-zero for Dice.
pub const NONZERO_EPS: f64 = 1e-6;

/// Mean squared difference over all cells.
pub fn mse_model(pred: &VolumeField, truth: &VolumeField) -> Result<f64> {
    pred.require_same_grid(truth)?;
    truth.require_kind(pred.kind())?;
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean squared station residual (µGal²) between the gravity of `pred` and a raw map.
pub fn mse_data(op: &ForwardOperator, pred: &VolumeField, observed: &GravityMap) -> Result<f64> {
    if observed.is_normalized() {
        return Err(Error::NormalizedInput);
    }
    op.check_map(observed)?;
    let g = op.forward(pred)?;
    let n = g.values().len() as f64;
    Ok(g.values()
        .iter()
        .zip(observed.values())
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>()
        / n)
}

/// Coefficient of determination `1 − SS_res/SS_tot` over all cells.
pub fn r_squared(pred: &VolumeField, truth: &VolumeField) -> Result<f64> {
    pred.require_same_grid(truth)?;
    let t = truth.values();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let ss_tot: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidField(
            "R² is undefined for a constant truth field".into(),
        ));
    }
    let ss_res: f64 = pred
        .values()
        .iter()
        .zip(t)
        .map(|(p, v)| (v - p) * (v - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sørensen–Dice overlap `2|P∩T| / (|P| + |T|)`; two empty masks score 1.
pub fn dice(pred_mask: &VolumeField, truth_mask: &VolumeField) -> Result<f64> {
    pred_mask.require_kind(FieldKind::BinaryMask)?;
    truth_mask.require_kind(FieldKind::BinaryMask)?;
    pred_mask.require_same_grid(truth_mask)?;
    let (mut both, mut np, mut nt) = (0usize, 0usize, 0usize);
    for (p, t) in pred_mask.values().iter().zip(truth_mask.values()) {
        let (p, t) = (*p == 1.0, *t == 1.0);
        both += (p && t) as usize;
        np += p as usize;
        nt += t as usize;
    }
    if np + nt == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (np + nt) as f64)
}

/// Mask of cells with `|value| > NONZERO_EPS`.
pub fn nonzero_mask(field: &VolumeField) -> VolumeField {
    field.mask_where(|v| v.abs() > NONZERO_EPS)
}

/// Per-class weights for the generalized Dice loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub background: f64,
    pub foreground: f64,
}

/// Inverse-frequency weights `w_k = (C / Σ_j 1/N_j) · 1/N_k` with `C = 2`.
///
/// The larger weight is computed directly and the smaller as `2 − larger`,
/// which is exact in floating point, so the weights always sum to exactly 2.
pub fn class_weights(n_bg: u64, n_fg: u64) -> Result<ClassWeights> {
    if n_bg == 0 || n_fg == 0 {
        return Err(Error::InvalidParameter(format!(
            "class counts must be positive, got background={n_bg}, foreground={n_fg}"
        )));
    }
    let total = n_bg as f64 + n_fg as f64;
    // w_fg = 2·(1/N_fg)/(1/N_bg + 1/N_fg) = 2·N_bg/(N_bg + N_fg)
    if n_bg >= n_fg {
        let foreground = 2.0 * n_bg as f64 / total;
        Ok(ClassWeights {
            background: 2.0 - foreground,
            foreground,
        })
    } else {
        let background = 2.0 * n_fg as f64 / total;
        Ok(ClassWeights {
            background,
            foreground: 2.0 - background,
        })
    }
}

/// Two-class generalized Dice loss
/// `1 − 2·Σ_k w_k Σ_i T_ik P_ik / Σ_k w_k Σ_i (T_ik² + P_ik²)`,
/// with the background class as the complement of the foreground.
pub fn gdl_loss(pred_soft: &[f64], truth_mask: &[f64], weights: ClassWeights) -> Result<f64> {
    if pred_soft.len() != truth_mask.len() {
        return Err(Error::DimensionMismatch {
            expected: truth_mask.len(),
            actual: pred_soft.len(),
        });
    }
    if !(weights.background > 0.0 && weights.foreground > 0.0) {
        return Err(Error::InvalidParameter("class weights must be positive".into()));
    }
    if pred_soft.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidField("soft predictions must lie in [0, 1]".into()));
    }
    if truth_mask.iter().any(|t| *t != 0.0 && *t != 1.0) {
        return Err(Error::InvalidField("truth mask must be binary".into()));
    }
    let (mut inter_fg, mut inter_bg, mut sq_fg, mut sq_bg) = (0.0, 0.0, 0.0, 0.0);
    for (p, t) in pred_soft.iter().zip(truth_mask) {
        let (pb, tb) = (1.0 - p, 1.0 - t);
        inter_fg += t * p;
        inter_bg += tb * pb;
        sq_fg += t * t + p * p;
        sq_bg += tb * tb + pb * pb;
    }
    let num = weights.foreground * inter_fg + weights.background * inter_bg;
    let den = weights.foreground * sq_fg + weights.background * sq_bg;
    if den == 0.0 {
        return Err(Error::InvalidField("generalized Dice denominator is zero".into()));
    }
    Ok(1.0 - 2.0 * num / den)
}

/// Mean ± population std, median and quartiles of one metric across samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Aggregate {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean,
            std,
            median: percentile(&sorted, 50.0),
            p25: percentile(&sorted, 25.0),
            p75: percentile(&sorted, 75.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    /// kg²/m⁶
    pub mse_model: f64,
    /// µGal²
    pub mse_data: f64,
    pub r_squared: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mse_model: Aggregate,
    pub mse_data: Aggregate,
    pub r_squared: Aggregate,
    pub dice: Aggregate,
}

/// Per-sample metrics plus their aggregate over the evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub aggregate: Option<AggregateMetrics>,
}

impl EvalReport {
    pub fn from_samples(mut samples: Vec<SampleMetrics>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let col = |f: fn(&SampleMetrics) -> f64| -> Vec<f64> { samples.iter().map(f).collect() };
        let aggregate = (!samples.is_empty()).then(|| AggregateMetrics {
            mse_model: Aggregate::from_values(&col(|s| s.mse_model)).unwrap(),
            mse_data: Aggregate::from_values(&col(|s| s.mse_data)).unwrap(),
            r_squared: Aggregate::from_values(&col(|s| s.r_squared)).unwrap(),
            dice: Aggregate::from_values(&col(|s| s.dice)).unwrap(),
        });
        Self { samples, aggregate }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,mse_model,mse_data,r_squared,dice\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                s.id, s.mse_model, s.mse_data, s.r_squared, s.dice
            );
        }
        out
    }
}

/// All four metrics for one prediction.
///
/// The predicted plume is `pred ≤ threshold` when a threshold is given and the
/// non-zero mask otherwise; `truth_mask` is the true plume support.
pub fn evaluate_sample(
    id: &str,
    op: &ForwardOperator,
    pred: &VolumeField,
    truth: &VolumeField,
    truth_mask: &VolumeField,
    observed_raw: &GravityMap,
    threshold: Option<f64>,
) -> Result<SampleMetrics> {
    let pred_mask = match threshold {
        Some(cut) => crate::inversion::threshold_model(pred, cut)?,
        None => nonzero_mask(pred),
    };
    Ok(SampleMetrics {
        id: id.to_string(),
        mse_model: mse_model(pred, truth)?,
        mse_data: mse_data(op, pred, observed_raw)?,
        r_squared: r_squared(pred, truth)?,
        dice: dice(&pred_mask, truth_mask)?,
    })
}
