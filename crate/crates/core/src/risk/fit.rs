//! Maximum-likelihood Student-t fit by Nelder–Mead simplex search.

use serde::{Deserialize, Serialize};

use super::student_t::log_likelihood_unchecked;
use super::RiskError;

pub const MIN_FIT_SAMPLES: usize = 8;
pub const DOF_FLOOR: f64 = 1.001;
pub const DOF_CEIL: f64 = 1e6;
pub const SCALE_FLOOR: f64 = 1e-6;
pub const SCALE_CEIL: f64 = 1e6;
const MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTFit {
    pub dof: f64,
    pub location: f64,
    pub scale: f64,
    pub log_likelihood_at_optimum: f64,
}

// Search coordinates: u = ln(ω − 1.001), μ, ln σ. Both maps are clamped so
// every simplex vertex decodes to a feasible parameter triple.
fn decode(p: &[f64; 3]) -> (f64, f64, f64) {
    let dof = (DOF_FLOOR + p[0].exp()).min(DOF_CEIL);
    let scale = p[2].exp().clamp(SCALE_FLOOR, SCALE_CEIL);
    (dof.max(DOF_FLOOR + 1e-12), p[1], scale)
}

fn encode(dof: f64, location: f64, scale: f64) -> [f64; 3] {
    let dof = dof.clamp(DOF_FLOOR + 1e-9, DOF_CEIL);
    let scale = scale.clamp(SCALE_FLOOR, SCALE_CEIL);
    [(dof - DOF_FLOOR).ln(), location, scale.ln()]
}

#[derive(Clone, Copy)]
struct Vertex {
    x: [f64; 3],
    f: f64,
    dof: f64,
}

fn vertex(samples: &[f64], x: [f64; 3]) -> Vertex {
    let (dof, loc, scale) = decode(&x);
    let ll = log_likelihood_unchecked(samples, dof, loc, scale);
    let f = if ll.is_finite() { -ll } else { f64::INFINITY };
    Vertex { x, f, dof }
}

fn order(simplex: &mut [Vertex; 4]) {
    // lower objective first; equal objectives prefer the lower ω
    simplex.sort_by(|a, b| a.f.total_cmp(&b.f).then(a.dof.total_cmp(&b.dof)));
}

fn lerp(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn nelder_mead(samples: &[f64], start: [f64; 3], steps: [f64; 3]) -> Result<Vertex, RiskError> {
    let mut simplex = [vertex(samples, start); 4];
    for i in 0..3 {
        let mut x = start;
        x[i] += steps[i];
        simplex[i + 1] = vertex(samples, x);
    }
    order(&mut simplex);
    for _ in 0..MAX_ITERATIONS {
        let best = simplex[0];
        let worst = simplex[3];
        let spread = worst.f - best.f;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| (0..3).map(move |i| (v.x[i] - best.x[i]).abs()))
            .fold(0.0, f64::max);
        let scale = 1.0 + best.f.abs();
        if (spread <= 1e-12 * scale && diameter <= 1e-6) || spread <= 1e-15 * scale {
            return Ok(best);
        }

        let mut centroid = [0.0; 3];
        for v in &simplex[..3] {
            for i in 0..3 {
                centroid[i] += v.x[i] / 3.0;
            }
        }
        let reflected = vertex(samples, lerp(&centroid, &worst.x, -1.0));
        if reflected.f < best.f {
            let expanded = vertex(samples, lerp(&centroid, &worst.x, -2.0));
            simplex[3] = if expanded.f < reflected.f { expanded } else { reflected };
        } else if reflected.f < simplex[2].f {
            simplex[3] = reflected;
        } else {
            let contracted = if reflected.f < worst.f {
                vertex(samples, lerp(&centroid, &worst.x, -0.5))
            } else {
                vertex(samples, lerp(&centroid, &worst.x, 0.5))
            };
            if contracted.f < worst.f.min(reflected.f) {
                simplex[3] = contracted;
            } else {
                for i in 1..4 {
                    simplex[i] = vertex(samples, lerp(&best.x, &simplex[i].x, 0.5));
                }
            }
        }
        order(&mut simplex);
    }
    Err(RiskError::NoConvergence(MAX_ITERATIONS))
}

/// Fits (ω, μ, σ) by maximizing the log-likelihood.
///
/// Starts from ω₀ = J − 1, μ₀ = sample mean, σ₀ = sample standard deviation
/// and restarts once from the best vertex to escape a collapsed simplex.
pub fn fit_student_t(samples: &[f64]) -> Result<StudentTFit, RiskError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(RiskError::TooFewSamples {
            got: samples.len(),
            need: MIN_FIT_SAMPLES,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(RiskError::NonFinite("laxity sample"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > SCALE_FLOOR * 1e-3) {
        return Err(RiskError::Degenerate(mean));
    }

    let start = encode(n - 1.0, mean, sd);
    let first = nelder_mead(samples, start, [-1.0, 0.25 * sd, 0.25])?;
    let second = nelder_mead(samples, first.x, [-0.5, 0.05 * sd, 0.05])?;
    let best = if second.f <= first.f { second } else { first };
    let (dof, location, scale) = decode(&best.x);
    Ok(StudentTFit {
        dof,
        location,
        scale,
        log_likelihood_at_optimum: -best.f,
    })
}
