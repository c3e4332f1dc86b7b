//! Laxity risk: per-session laxity samples, a Student-t fit, the α-quantile
//! and the CVaR of the laxity tail, normalized for use inside the reward.

mod cvar;
mod fit;
mod student_t;

pub use cvar::{cvar_closed_form, cvar_empirical, upper_tail_cvar, var_empirical, CvarVariant, MIN_TAIL};
pub use fit::{fit_student_t, StudentTFit, DOF_CEIL, DOF_FLOOR, MIN_FIT_SAMPLES, SCALE_CEIL, SCALE_FLOOR};
pub use student_t::{
    ln_gamma, log_likelihood, standardized_cdf, standardized_pdf, standardized_ppf, student_t_pdf, CDF_TOLERANCE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{delivery_rate_kw, demand_rate_kw, RateError, SessionBatch};

#[derive(Debug, Error)]
pub enum RiskError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("no samples")]
    Empty,
    #[error("need at least {need} samples to fit, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("samples are constant at {0}; the scale is not identifiable")]
    Degenerate(f64),
    #[error("simplex search did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("degrees of freedom {0} out of range")]
    InvalidDof(f64),
    #[error("scale {0} must be positive")]
    InvalidScale(f64),
    #[error("alpha {0} must lie strictly between 0 and 1")]
    InvalidAlpha(f64),
    #[error("reference scale {0} must be positive")]
    InvalidReference(f64),
    #[error("printed CVaR form is singular at location 0")]
    PaperSingular,
    #[error("empirical tail holds {tail} samples, need {need}")]
    TailTooSmall { tail: usize, need: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaxitySampleSet {
    /// Hours, one per session.
    pub samples: Vec<f64>,
    pub source: String,
}

/// One laxity sample per session, `|ε_req/λ_req − ε_act/λ_act|` in hours,
/// with λ the demand and delivery rates of the session's EVSE group.
pub fn laxity_samples(batch: &SessionBatch) -> Result<LaxitySampleSet, RiskError> {
    let mut samples = Vec::with_capacity(batch.len());
    for group in batch.groups().values() {
        let lam_req = demand_rate_kw(group)?;
        let lam_act = delivery_rate_kw(group)?;
        for s in group {
            // a zero rate means every energy in the group is zero too
            let want = if lam_req > 0.0 { s.energy_requested_kwh / lam_req } else { 0.0 };
            let got = if lam_act > 0.0 { s.energy_delivered_kwh / lam_act } else { 0.0 };
            samples.push((want - got).abs());
        }
    }
    Ok(LaxitySampleSet {
        samples,
        source: format!("{} sessions over {} EVSEs", batch.len(), batch.groups().len()),
    })
}

/// `clamp(raw / reference, 0, 1 − 1e-9)`.
pub fn normalize_risk(raw_cvar: f64, reference_scale: f64) -> Result<f64, RiskError> {
    if !(reference_scale > 0.0 && reference_scale.is_finite()) {
        return Err(RiskError::InvalidReference(reference_scale));
    }
    if raw_cvar.is_nan() {
        return Err(RiskError::NonFinite("raw CVaR"));
    }
    Ok((raw_cvar / reference_scale).clamp(0.0, 1.0 - 1e-9))
}

/// Default normalization reference: total requested hours per EVSE.
pub fn default_reference_scale(batch: &SessionBatch) -> f64 {
    let hours: f64 = batch.iter().map(|s| s.minutes_available).sum::<f64>() / 60.0;
    hours / batch.groups().len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskOptions {
    pub alpha: f64,
    pub variant: CvarVariant,
    /// Overrides [`default_reference_scale`].
    pub reference_scale: Option<f64>,
}

impl Default for RiskOptions {
    fn default() -> Self {
        RiskOptions {
            alpha: 0.99,
            variant: CvarVariant::Standard,
            reference_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub alpha: f64,
    pub dof: f64,
    pub location: f64,
    pub scale: f64,
    /// Standardized α-quantile.
    pub cutoff: f64,
    /// `μ + σ·cutoff`, hours.
    pub var: f64,
    /// `None` where the printed form is singular.
    pub cvar_paper: Option<f64>,
    pub cvar_standard: f64,
    /// `None` when fewer than [`MIN_TAIL`] samples lie in the tail.
    pub cvar_empirical: Option<f64>,
    pub cvar_normalized: f64,
    pub variant: CvarVariant,
    pub reference_scale: f64,
    pub samples: usize,
}

impl RiskEstimate {
    /// A risk-free estimate, used when risk is switched off.
    pub fn zero(alpha: f64) -> Self {
        RiskEstimate {
            alpha,
            dof: DOF_CEIL,
            location: 0.0,
            scale: SCALE_FLOOR,
            cutoff: 0.0,
            var: 0.0,
            cvar_paper: None,
            cvar_standard: 0.0,
            cvar_empirical: None,
            cvar_normalized: 0.0,
            variant: CvarVariant::Standard,
            reference_scale: 1.0,
            samples: 0,
        }
    }
}

/// Risk estimation with default options at `alpha`.
pub fn estimate_risk(batch: &SessionBatch, alpha: f64) -> Result<RiskEstimate, RiskError> {
    estimate_risk_with(batch, &RiskOptions { alpha, ..RiskOptions::default() })
}

pub fn estimate_risk_with(batch: &SessionBatch, opts: &RiskOptions) -> Result<RiskEstimate, RiskError> {
    let alpha = opts.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::InvalidAlpha(alpha));
    }
    let reference = opts.reference_scale.unwrap_or_else(|| default_reference_scale(batch));
    if !(reference > 0.0 && reference.is_finite()) {
        return Err(RiskError::InvalidReference(reference));
    }
    let laxity = laxity_samples(batch)?;
    let xs = &laxity.samples;
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(RiskError::TooFewSamples { got: xs.len(), need: MIN_FIT_SAMPLES });
    }
    let empirical = cvar_empirical(xs, alpha).ok();

    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        log::warn!("laxity is constant at {lo} h over {} sessions; risk equals that value", xs.len());
        let dof = ((xs.len() - 1) as f64).clamp(DOF_FLOOR + 1e-9, DOF_CEIL);
        return Ok(RiskEstimate {
            alpha,
            dof,
            location: lo,
            scale: SCALE_FLOOR,
            cutoff: 0.0,
            var: lo,
            cvar_paper: None,
            cvar_standard: lo,
            cvar_empirical: empirical,
            cvar_normalized: normalize_risk(lo, reference)?,
            variant: opts.variant,
            reference_scale: reference,
            samples: xs.len(),
        });
    }

    let fit = fit_student_t(xs)?;
    let cutoff = standardized_ppf(alpha, fit.dof)?;
    let cvar_standard = upper_tail_cvar(&fit, alpha, CvarVariant::Standard)?;
    let cvar_paper = match upper_tail_cvar(&fit, alpha, CvarVariant::Paper) {
        Ok(v) => Some(v),
        Err(RiskError::PaperSingular) => None,
        Err(e) => return Err(e),
    };
    let raw = match opts.variant {
        CvarVariant::Standard => cvar_standard,
        CvarVariant::Paper => cvar_paper.ok_or(RiskError::PaperSingular)?,
    };
    Ok(RiskEstimate {
        alpha,
        dof: fit.dof,
        location: fit.location,
        scale: fit.scale,
        cutoff,
        var: fit.location + fit.scale * cutoff,
        cvar_paper,
        cvar_standard,
        cvar_empirical: empirical,
        cvar_normalized: normalize_risk(raw, reference)?,
        variant: opts.variant,
        reference_scale: reference,
        samples: xs.len(),
    })
}
