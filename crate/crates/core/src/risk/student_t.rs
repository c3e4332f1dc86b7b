//! Location-scale Student-t density, log-likelihood, CDF and quantile.
//!
//! The CDF is obtained by adaptive Simpson integration of the standardized
//! density, so no incomplete-beta implementation is needed.

use std::f64::consts::PI;

use super::RiskError;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ln Γ((ω+1)/2) − ln Γ(ω/2)`, stable for very large ω.
pub fn ln_gamma_half_ratio(dof: f64) -> f64 {
    let x = dof / 2.0;
    if x > 50.0 {
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        0.5 * x.ln() - inv / 8.0 + inv * inv2 / 192.0 - inv * inv2 * inv2 / 640.0
    } else {
        ln_gamma(x + 0.5) - ln_gamma(x)
    }
}

fn ln_norm_const(dof: f64) -> f64 {
    ln_gamma_half_ratio(dof) - 0.5 * (dof * PI).ln()
}

fn check_params(dof: f64, scale: f64) -> Result<(), RiskError> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(RiskError::InvalidDof(dof));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(RiskError::InvalidScale(scale));
    }
    Ok(())
}

fn standardized_pdf_unchecked(xi: f64, dof: f64) -> f64 {
    (ln_norm_const(dof) - 0.5 * (dof + 1.0) * (xi * xi / dof).ln_1p()).exp()
}

/// Density of the standardized t with `dof` degrees of freedom.
pub fn standardized_pdf(xi: f64, dof: f64) -> Result<f64, RiskError> {
    check_params(dof, 1.0)?;
    Ok(standardized_pdf_unchecked(xi, dof))
}

/// Density of the location-scale t at `d`.
pub fn student_t_pdf(d: f64, dof: f64, location: f64, scale: f64) -> Result<f64, RiskError> {
    check_params(dof, scale)?;
    Ok(standardized_pdf_unchecked((d - location) / scale, dof) / scale)
}

/// Log-likelihood of `samples` under the location-scale t:
///
/// `J lnΓ((ω+1)/2) − J lnΓ(ω/2) + (Jω/2) ln ω − J ln σ − ((ω+1)/2) Σ ln(ω + z_j²)`
///
/// with `z_j = (d_j − μ)/σ`. This is `Σ ln pdf(d_j) + (J/2) ln π`; the offset
/// depends only on the sample count.
pub fn log_likelihood(samples: &[f64], dof: f64, location: f64, scale: f64) -> Result<f64, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    check_params(dof, scale)?;
    Ok(log_likelihood_unchecked(samples, dof, location, scale))
}

pub(crate) fn log_likelihood_unchecked(samples: &[f64], dof: f64, location: f64, scale: f64) -> f64 {
    let j = samples.len() as f64;
    let inv = 1.0 / scale;
    // Σ ln(ω + z²) = J ln ω + Σ ln(1 + z²/ω); the split keeps precision at large ω
    let tail: f64 = samples
        .iter()
        .map(|&d| {
            let z = (d - location) * inv;
            (z * z / dof).ln_1p()
        })
        .sum();
    j * ln_gamma_half_ratio(dof) - j * scale.ln() - 0.5 * j * dof.ln() - 0.5 * (dof + 1.0) * tail
}

fn simpson_panel(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson_panel(f, a, fa, m, fm);
    let (rm, frm, right) = simpson_panel(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
}

/// `∫₀ˣ P_ω(t) dt` for `x ≥ 0`, over geometrically widening panels.
fn integrate_from_zero(x: f64, dof: f64, tol: f64) -> f64 {
    let f = |t: f64| standardized_pdf_unchecked(t, dof);
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = x.min(1.0);
    let mut panels = 0u32;
    while lo < x {
        panels += 1;
        let (fa, fb) = (f(lo), f(hi));
        let (m, fm, whole) = simpson_panel(&f, lo, fa, hi, fb);
        total += adaptive_simpson(&f, lo, fa, hi, fb, m, fm, whole, tol, 40);
        lo = hi;
        hi = (hi * 2.0).min(x);
        if panels > 1100 {
            break;
        }
    }
    total
}

/// Absolute integration tolerance of [`standardized_cdf`].
pub const CDF_TOLERANCE: f64 = 1e-10;

/// CDF of the standardized t, by numeric integration of the density.
pub fn standardized_cdf(xi: f64, dof: f64) -> Result<f64, RiskError> {
    check_params(dof, 1.0)?;
    if xi.is_nan() {
        return Err(RiskError::NonFinite("cdf argument"));
    }
    if xi.is_infinite() {
        return Ok(if xi > 0.0 { 1.0 } else { 0.0 });
    }
    let half = integrate_from_zero(xi.abs(), dof, CDF_TOLERANCE / 64.0);
    let p = if xi >= 0.0 { 0.5 + half } else { 0.5 - half };
    Ok(p.clamp(0.0, 1.0))
}

/// Quantile of the standardized t: smallest ξ with `CDF(ξ) ≥ alpha`,
/// located by bisection.
pub fn standardized_ppf(alpha: f64, dof: f64) -> Result<f64, RiskError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::InvalidAlpha(alpha));
    }
    check_params(dof, 1.0)?;
    if alpha == 0.5 {
        return Ok(0.0);
    }
    // solve on the upper half, mirror for the lower
    let target = alpha.max(1.0 - alpha) - 0.5;
    let mass = |x: f64| integrate_from_zero(x, dof, CDF_TOLERANCE / 64.0);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mass(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(RiskError::NonFinite("quantile bracket"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if (m - target).abs() < 1e-13 {
            lo = mid;
            hi = mid;
            break;
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(if alpha > 0.5 { q } else { -q })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn half_ratio_asymptotic_matches_lanczos_at_switch() {
        for dof in [101.0, 150.0, 400.0] {
            let x: f64 = dof / 2.0;
            let inv = 1.0 / x;
            let asym = 0.5 * x.ln() - inv / 8.0 + inv.powi(3) / 192.0 - inv.powi(5) / 640.0;
            let direct = ln_gamma(x + 0.5) - ln_gamma(x);
            assert!((asym - direct).abs() < 1e-11, "{dof}: {asym} vs {direct}");
        }
    }

    #[test]
    fn pdf_examples() {
        let normal0 = 1.0 / (2.0 * PI).sqrt();
        assert!((student_t_pdf(0.0, 1e6, 0.0, 1.0).unwrap() - normal0).abs() < 1e-3);
        assert!((standardized_pdf(0.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-12);
        assert_eq!(standardized_pdf(0.7, 4.0).unwrap(), standardized_pdf(-0.7, 4.0).unwrap());
        assert_eq!(standardized_pdf(0.7, 4.0).unwrap(), student_t_pdf(0.7, 4.0, 0.0, 1.0).unwrap());
        let peak = student_t_pdf(2.0, 5.0, 2.0, 0.5).unwrap();
        for d in [1.0, 1.9, 2.1, 3.0] {
            assert!(student_t_pdf(d, 5.0, 2.0, 0.5).unwrap() < peak);
        }
        assert!(student_t_pdf(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(student_t_pdf(0.0, 3.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        for dof in [1.5, 3.0, 30.0] {
            let total = 2.0 * integrate_from_zero(1e6, dof, 1e-12);
            assert!((total - 1.0).abs() < 2e-3, "{dof}: {total}");
        }
        assert!((2.0 * integrate_from_zero(60.0, 5.0, 1e-12) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_likelihood_examples() {
        let peak = student_t_pdf(1.0, 4.0, 1.0, 2.0).unwrap().ln();
        let ll = log_likelihood(&[1.0], 4.0, 1.0, 2.0).unwrap();
        assert!((ll - 0.5 * PI.ln() - peak).abs() < 1e-12);

        let tight = [0.99, 1.0, 1.01, 1.0];
        assert!(log_likelihood(&tight, 4.0, 1.0, 0.2).unwrap() > log_likelihood(&tight, 4.0, 1.0, 0.4).unwrap());
        let perm = [1.01, 0.99, 1.0, 1.0];
        assert!((log_likelihood(&tight, 4.0, 1.0, 0.2).unwrap() - log_likelihood(&perm, 4.0, 1.0, 0.2).unwrap()).abs() < 1e-12);
        assert!(matches!(log_likelihood(&[], 4.0, 0.0, 1.0), Err(RiskError::Empty)));
    }

    #[test]
    fn ppf_examples() {
        assert_eq!(standardized_ppf(0.5, 7.0).unwrap(), 0.0);
        assert!((standardized_ppf(0.95, 5.0).unwrap() - 2.0150).abs() < 1e-3);
        assert!((standardized_ppf(0.95, 1e6).unwrap() - 1.6449).abs() < 1e-3);
        assert!((standardized_ppf(0.05, 5.0).unwrap() + 2.0150).abs() < 1e-3);
        // Cauchy quantile has a closed form
        let q = standardized_ppf(0.9, 1.0).unwrap();
        assert!((q - (PI * 0.4).tan()).abs() < 1e-7);
        assert!(standardized_ppf(1.0, 5.0).is_err());
        assert!(standardized_ppf(0.0, 5.0).is_err());
    }

    #[test]
    fn cdf_inverts_ppf() {
        for dof in [1.5, 3.0, 10.0] {
            for k in 1..100 {
                let a = k as f64 / 100.0;
                let q = standardized_ppf(a, dof).unwrap();
                assert!((standardized_cdf(q, dof).unwrap() - a).abs() < 1e-8);
            }
        }
    }
}
