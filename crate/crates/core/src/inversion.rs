//! Least-squares inversion of station gravity for a density-change model.
//!
//! Minimizes `½‖F(ρ) − G‖²` with CGLS over a set of free cells. In masked
//! mode only reservoir cells are free; every other cell keeps its initial
//! value bit-for-bit. The normal equations are never formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::grid::{FieldKind, GravityMap, VolumeField};

/// Cutoff (kg/m³) separating plume cells from the low-amplitude fill that
/// constrained inversion spreads over the reservoir.
pub const DEFAULT_THRESHOLD: f64 = -7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Only cells inside the reservoir mask are updated.
    #[default]
    Masked,
    Unconstrained,
}

#[derive(Debug, Clone)]
pub struct InversionConfig {
    pub max_iters: usize,
    /// Stop once `‖F(ρ) − G‖ ≤ tol·‖G‖`.
    pub rel_residual_tol: f64,
    pub constraint: Constraint,
    /// Starting model; the null model when absent.
    pub initial_model: Option<VolumeField>,
    pub record_history: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_residual_tol: 1e-8,
            constraint: Constraint::Masked,
            initial_model: None,
            record_history: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub model: VolumeField,
    /// `‖F(ρ_k) − G‖²` (µGal²) for the initial model and every accepted iterate.
    pub data_misfit_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖F(ρ) − G‖²` of the returned model, recomputed from scratch.
    pub final_misfit: f64,
    /// Misfit of the starting model.
    pub initial_misfit: f64,
    pub n_stations: usize,
}

impl InversionResult {
    /// Mean squared station residual, µGal².
    pub fn station_mse(&self) -> f64 {
        self.final_misfit / self.n_stations as f64
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn misfit(op: &ForwardOperator, model: &[f64], observed: &[f64]) -> f64 {
    op.apply(model)
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o) * (p - o))
        .sum()
}

/// CGLS inversion of raw station gravity.
pub fn invert(op: &ForwardOperator, observed: &GravityMap, cfg: &InversionConfig) -> Result<InversionResult> {
    if observed.is_normalized() {
        return Err(Error::NormalizedInput);
    }
    op.check_map(observed)?;
    if !(cfg.rel_residual_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relative residual tolerance must be positive, got {}",
            cfg.rel_residual_tol
        )));
    }
    let grid = op.grid().clone();
    let mut model = match &cfg.initial_model {
        Some(m) => {
            op.check_volume(m)?;
            m.require_kind(FieldKind::DensityChange)?;
            m.values().to_vec()
        }
        None => vec![0.0; grid.len()],
    };
    let obs = observed.values();

    let free: Vec<usize> = match cfg.constraint {
        Constraint::Masked => grid.masked_indices(),
        Constraint::Unconstrained => (0..grid.len()).collect(),
    };
    if free.is_empty() {
        return Err(Error::InvalidParameter(
            "masked inversion requires a non-empty reservoir mask".into(),
        ));
    }

    let mut r: Vec<f64> = op
        .apply(&model)
        .iter()
        .zip(obs)
        .map(|(p, o)| o - p)
        .collect();
    let mut rr = sq_norm(&r);
    let initial_misfit = rr;
    let target = cfg.rel_residual_tol * sq_norm(obs).sqrt();
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(rr);
    }

    let mut iterations = 0;
    let mut converged = rr.sqrt() <= target;
    if target > 0.0 && !converged {
        let mut x: Vec<f64> = free.iter().map(|c| model[*c]).collect();
        let mut s = op.apply_adjoint_subset(&free, &r);
        let mut p = s.clone();
        let mut gamma = sq_norm(&s);

        while iterations < cfg.max_iters && gamma > 0.0 {
            let q = op.apply_subset(&free, &p);
            let qq = sq_norm(&q);
            if qq == 0.0 {
                break;
            }
            let alpha = gamma / qq;
            let r_next: Vec<f64> = r.iter().zip(&q).map(|(ri, qi)| ri - alpha * qi).collect();
            let rr_next = sq_norm(&r_next);
            // rounding can break monotonicity once the residual stagnates
            if rr_next > rr {
                break;
            }
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r = r_next;
            rr = rr_next;
            iterations += 1;
            if cfg.record_history {
                history.push(rr);
            }
            if rr.sqrt() <= target {
                converged = true;
                break;
            }
            s = op.apply_adjoint_subset(&free, &r);
            let gamma_next = sq_norm(&s);
            let beta = gamma_next / gamma;
            p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
            gamma = gamma_next;
        }
        for (c, v) in free.iter().zip(&x) {
            model[*c] = *v;
        }
    } else if target == 0.0 {
        // ‖G‖ = 0: the initial model is returned untouched
        converged = true;
    }

    let final_misfit = misfit(op, &model, obs);
    Ok(InversionResult {
        model: VolumeField::new(grid, FieldKind::DensityChange, model)?,
        data_misfit_history: history,
        iterations,
        converged,
        final_misfit,
        initial_misfit,
        n_stations: op.n_stations(),
    })
}

/// Inversion seeded by a learned prediction.
pub fn refine(
    op: &ForwardOperator,
    observed: &GravityMap,
    prediction: &VolumeField,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    let cfg = InversionConfig {
        initial_model: Some(prediction.clone()),
        ..cfg.clone()
    };
    invert(op, observed, &cfg)
}

/// Binary mask of cells at or below `cutoff` kg/m³.
pub fn threshold_model(model: &VolumeField, cutoff: f64) -> Result<VolumeField> {
    model.require_kind(FieldKind::DensityChange)?;
    Ok(model.mask_where(|v| v <= cutoff))
}
