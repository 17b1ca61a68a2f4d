//! Constitutive constants of a single spring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpringError {
    #[error("invalid spring parameters: {0}")]
    InvalidParams(String),
}

/// Stiffness `k`, state-feedback coefficient `h`, geometric slope `s` and
/// initial yield stress `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringParams {
    pub k: f64,
    pub h: f64,
    pub s: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlasticityType {
    Hardening,
    Perfect,
    Softening,
}

impl std::fmt::Display for PlasticityType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PlasticityType::Hardening => "hardening",
            PlasticityType::Perfect => "perfect",
            PlasticityType::Softening => "softening",
        };
        f.write_str(name)
    }
}

impl SpringParams {
    pub fn new(k: f64, h: f64, s: f64, c0: f64) -> Result<Self, SpringError> {
        let p = SpringParams { k, h, s, c0 };
        p.validate()?;
        Ok(p)
    }

    /// `k⁻¹s²(1−h)`; the spring is solvable when this exceeds −1.
    pub fn softening_ratio(&self) -> f64 {
        self.s * self.s * (1.0 - self.h) / self.k
    }

    pub fn validate(&self) -> Result<(), SpringError> {
        let mut problems = Vec::new();
        if ![self.k, self.h, self.s, self.c0].iter().all(|v| v.is_finite()) {
            problems.push("parameters must be finite".to_string());
        }
        if !(self.k > 0.0) {
            problems.push(format!("k = {} must be positive", self.k));
        }
        if !(self.s >= 0.0) {
            problems.push(format!("s = {} must be nonnegative", self.s));
        }
        if !(self.c0 > 0.0) {
            problems.push(format!("c0 = {} must be positive", self.c0));
        }
        if problems.is_empty() && !(self.softening_ratio() > -1.0) {
            problems.push(format!(
                "s^2(1-h)/k = {} must exceed -1",
                self.softening_ratio()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpringError::InvalidParams(problems.join("; ")))
        }
    }
}

/// Slope of the stress-elongation curve while yielding:
/// `E^p = s²(1−h) / (1 + k⁻¹s²(1−h))`.
pub fn plasticity_modulus(p: &SpringParams) -> Result<f64, SpringError> {
    p.validate()?;
    if classify(p)? == PlasticityType::Perfect {
        return Ok(0.0);
    }
    let q = p.s * p.s * (1.0 - p.h);
    Ok(q / (1.0 + q / p.k))
}

pub fn classify(p: &SpringParams) -> Result<PlasticityType, SpringError> {
    p.validate()?;
    if p.s == 0.0 || p.h == 1.0 {
        return Ok(PlasticityType::Perfect);
    }
    if p.s * p.s * (1.0 - p.h) > 0.0 {
        Ok(PlasticityType::Hardening)
    } else {
        Ok(PlasticityType::Softening)
    }
}

/// Damage at which the admissible stress interval collapses to `{0}`:
/// `a* = c0 / (s(h−1))`, defined only for softening springs.
pub fn failure_damage(p: &SpringParams) -> Option<f64> {
    if p.h > 1.0 && p.s > 0.0 {
        Some(p.c0 / (p.s * (p.h - 1.0)))
    } else {
        None
    }
}
