use serde::{Deserialize, Serialize};

use super::fit::StudentTFit;
use super::student_t::{standardized_pdf, standardized_ppf};
use super::RiskError;

/// Which closed form to use for the tail expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CvarVariant {
    /// `−1 / (α (1−ω) (ω+ξ²) P_ω(ξ) σ μ)`, as printed.
    Paper,
    /// `(1/α) ((ω+ξ²)/(ω−1)) P_ω(ξ) σ − μ`, the lower-tail expected shortfall.
    #[default]
    Standard,
}

/// Closed-form CVaR of the lower tail `(−∞, ξ]`, with `alpha` the tail mass
/// and `xi` the standardized cutoff.
pub fn cvar_closed_form(fit: &StudentTFit, alpha: f64, xi: f64, variant: CvarVariant) -> Result<f64, RiskError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::InvalidAlpha(alpha));
    }
    let w = fit.dof;
    if !(w > 1.0) {
        return Err(RiskError::InvalidDof(w));
    }
    let p = standardized_pdf(xi, w)?;
    match variant {
        CvarVariant::Standard => Ok((1.0 / alpha) * ((w + xi * xi) / (w - 1.0)) * p * fit.scale - fit.location),
        CvarVariant::Paper => {
            if fit.location == 0.0 {
                return Err(RiskError::PaperSingular);
            }
            Ok(-1.0 / (alpha * (1.0 - w) * (w + xi * xi) * p * fit.scale * fit.location))
        }
    }
}

/// CVaR of the upper tail above the α-quantile, mapped onto the lower-tail
/// closed form through the symmetry `X ↦ −X`.
///
/// The standard variant reflects the location as well and so returns
/// `μ + σ·ES_α`. The printed form only sees ξ², so only its tail mass changes.
pub fn upper_tail_cvar(fit: &StudentTFit, alpha: f64, variant: CvarVariant) -> Result<f64, RiskError> {
    let q = standardized_ppf(alpha, fit.dof)?;
    match variant {
        CvarVariant::Standard => {
            let mirrored = StudentTFit { location: -fit.location, ..*fit };
            cvar_closed_form(&mirrored, 1.0 - alpha, -q, variant)
        }
        CvarVariant::Paper => cvar_closed_form(fit, 1.0 - alpha, -q, variant),
    }
}

/// Minimum number of samples the empirical tail must hold.
pub const MIN_TAIL: usize = 10;

fn tail_len(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * n as f64 - 1e-9).ceil().max(0.0) as usize
}

fn sorted_tail(samples: &[f64], alpha: f64) -> Result<Vec<f64>, RiskError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::InvalidAlpha(alpha));
    }
    let k = tail_len(samples.len(), alpha);
    if k < MIN_TAIL {
        return Err(RiskError::TailTooSmall { tail: k, need: MIN_TAIL });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.split_off(sorted.len() - k))
}

/// Mean of the largest `⌈(1−α) n⌉` samples.
pub fn cvar_empirical(samples: &[f64], alpha: f64) -> Result<f64, RiskError> {
    let tail = sorted_tail(samples, alpha)?;
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Smallest sample of the tail used by [`cvar_empirical`].
pub fn var_empirical(samples: &[f64], alpha: f64) -> Result<f64, RiskError> {
    Ok(sorted_tail(samples, alpha)?[0])
}
