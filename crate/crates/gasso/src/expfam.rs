//! Single-parameter exponential-family primitives.
//!
//! Each supported family is described by its cumulant function `b(θ)` and
//! canonical link `g(μ) = b'^{-1}(μ)`:
//!
//! | Family    | b(θ)            | b'(θ)        | g(μ)           |
//! |-----------|-----------------|--------------|----------------|
//! | Gaussian  | θ²/2            | θ            | μ              |
//! | Poisson   | exp(θ)          | exp(θ)       | log μ          |
//! | Bernoulli | log(1+exp(θ))   | logistic(θ)  | log(μ/(1−μ))   |
//!
//! The Gaussian case has dispersion fixed at one; data with other noise
//! scales are expected to be pre-scaled (see the preprocessing helpers).

use crate::error::{GassoError, Result};
use serde::{Deserialize, Serialize};

/// Natural parameters are clamped to this magnitude before any `exp` or
/// logistic evaluation; alternating IRLS on Bernoulli/Poisson blocks can
/// otherwise push θ far enough to overflow.
pub const THETA_CLIP: f64 = 30.0;

/// Floor for `b''(θ)` wherever it appears in a denominator (Pearson
/// residuals, IRLS working responses). Saturated Bernoulli cells otherwise
/// divide by ~0.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Tag for a single-parameter exponential-family distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    GaussianUnitVar,
    Bernoulli,
    Poisson,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianUnitVar => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }

    /// Parse a family name as used in manifests and CLI flags.
    pub fn parse(s: &str) -> Result<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "gauss" => Ok(Family::GaussianUnitVar),
            "bernoulli" | "binary" => Ok(Family::Bernoulli),
            "poisson" | "count" => Ok(Family::Poisson),
            other => Err(GassoError::Parse(format!("unknown family `{other}`"))),
        }
    }

    /// Whether `x` lies in the family's support.
    pub fn in_support(&self, x: f64) -> bool {
        match self {
            Family::GaussianUnitVar => x.is_finite(),
            Family::Bernoulli => x == 0.0 || x == 1.0,
            Family::Poisson => x.is_finite() && x >= 0.0 && x.fract() == 0.0,
        }
    }
}

#[inline]
fn clip(theta: f64) -> f64 {
    theta.clamp(-THETA_CLIP, THETA_CLIP)
}

/// Stable log(1 + exp(x)).
#[inline]
fn ln_1p_exp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(GassoError::Domain(format!("non-finite theta {theta}")))
    }
}

/// Cumulant function b(θ).
pub fn cumulant(family: Family, theta: f64) -> Result<f64> {
    check_finite(theta)?;
    Ok(match family {
        Family::GaussianUnitVar => theta * theta / 2.0,
        Family::Poisson => clip(theta).exp(),
        Family::Bernoulli => ln_1p_exp(clip(theta)),
    })
}

/// Mean b'(θ).
pub fn mean_from_natural(family: Family, theta: f64) -> Result<f64> {
    check_finite(theta)?;
    Ok(match family {
        Family::GaussianUnitVar => theta,
        Family::Poisson => clip(theta).exp(),
        Family::Bernoulli => logistic(clip(theta)),
    })
}

/// Variance b''(θ).
pub fn variance_from_natural(family: Family, theta: f64) -> Result<f64> {
    check_finite(theta)?;
    Ok(match family {
        Family::GaussianUnitVar => 1.0,
        Family::Poisson => clip(theta).exp(),
        Family::Bernoulli => {
            let p = logistic(clip(theta));
            p * (1.0 - p)
        }
    })
}

/// Log-density xθ − b(θ) + log h(x).
pub fn log_density(family: Family, x: f64, theta: f64) -> Result<f64> {
    check_finite(theta)?;
    if !family.in_support(x) {
        return Err(GassoError::Domain(format!(
            "value {x} outside {} support",
            family.name()
        )));
    }
    let log_h = match family {
        Family::GaussianUnitVar => -x * x / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln(),
        Family::Poisson => -statrs::function::gamma::ln_gamma(x + 1.0),
        Family::Bernoulli => 0.0,
    };
    // clamp θ the same way the cumulant does, so the density stays a proper
    // density of the clipped parameter (otherwise saturated cells would
    // reward unbounded natural parameters)
    let t = match family {
        Family::GaussianUnitVar => theta,
        Family::Bernoulli | Family::Poisson => theta.clamp(-THETA_CLIP, THETA_CLIP),
    };
    Ok(x * t - cumulant(family, t)? + log_h)
}

/// Outcome of a Pearson residual evaluation; `floored` marks denominators
/// that hit [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, Copy)]
pub struct PearsonResidual {
    pub value: f64,
    pub floored: bool,
}

/// Pearson residual (x − b'(θ)) / sqrt(b''(θ)).
pub fn pearson_residual(family: Family, x: f64, theta: f64) -> Result<PearsonResidual> {
    let mean = mean_from_natural(family, theta)?;
    let var = variance_from_natural(family, theta)?;
    let floored = var < VARIANCE_FLOOR;
    let denom = var.max(VARIANCE_FLOOR).sqrt();
    Ok(PearsonResidual {
        value: (x - mean) / denom,
        floored,
    })
}

/// Canonical link g(μ) = b'^{-1}(μ). The mean must lie in the open mean
/// domain; callers clip boundary values first.
pub fn link(family: Family, mu: f64) -> Result<f64> {
    if !mu.is_finite() {
        return Err(GassoError::Domain(format!("non-finite mean {mu}")));
    }
    match family {
        Family::GaussianUnitVar => Ok(mu),
        Family::Poisson => {
            if mu > 0.0 {
                Ok(mu.ln())
            } else {
                Err(GassoError::Domain(format!(
                    "poisson mean {mu} outside (0, inf)"
                )))
            }
        }
        Family::Bernoulli => {
            if mu > 0.0 && mu < 1.0 {
                Ok((mu / (1.0 - mu)).ln())
            } else {
                Err(GassoError::Domain(format!(
                    "bernoulli mean {mu} outside (0, 1)"
                )))
            }
        }
    }
}
