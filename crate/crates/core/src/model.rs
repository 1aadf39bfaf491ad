//! Model parameters: AR coefficients and the innovation law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution family of the i.i.d. innovations. Every family is centered
/// and rescaled so that its variance equals [`NoiseSpec::sigma2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Rademacher,
    UniformCentered,
    StudentT { nu: f64 },
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Rademacher => "rademacher",
            NoiseFamily::UniformCentered => "uniform_centered",
            NoiseFamily::StudentT { .. } => "student_t",
        }
    }

    /// Parse a family name; `nu` is only consulted for `student_t`.
    pub fn from_name(name: &str, nu: Option<f64>) -> Result<Self> {
        match name {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "rademacher" => Ok(NoiseFamily::Rademacher),
            "uniform_centered" | "uniform" => Ok(NoiseFamily::UniformCentered),
            "student_t" | "t" => match nu {
                Some(nu) => Ok(NoiseFamily::StudentT { nu }),
                None => Err(Error::BadSpec("student_t requires nu".into())),
            },
            other => Err(Error::BadSpec(format!("unknown noise family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub family: NoiseFamily,
    pub sigma2: f64,
}

impl NoiseSpec {
    pub fn gaussian(sigma2: f64) -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian,
            sigma2,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::BadSpec(format!(
                "sigma2 must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if let NoiseFamily::StudentT { nu } = self.family {
            // finite variance needs nu > 2
            if !(nu.is_finite() && nu > 2.0) {
                return Err(Error::BadSpec(format!(
                    "student_t needs nu > 2 for finite variance, got {nu}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::gaussian(1.0)
    }
}

/// AR(d) model `Y_n = theta_1 Y_{n-1} + ... + theta_d Y_{n-d} + Z_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub theta: Vec<f64>,
    pub noise: NoiseSpec,
}

impl ModelSpec {
    pub fn new(theta: Vec<f64>, noise: NoiseSpec) -> Result<Self> {
        let spec = ModelSpec { theta, noise };
        spec.validate()?;
        Ok(spec)
    }

    /// Gaussian innovations with variance `sigma2`.
    pub fn gaussian(theta: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::new(theta, NoiseSpec::gaussian(sigma2))
    }

    pub fn order(&self) -> usize {
        self.theta.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.noise.sigma2
    }

    pub fn validate(&self) -> Result<()> {
        validate_theta(&self.theta)?;
        self.noise.validate()
    }
}

/// `d >= 1` and all coefficients finite.
pub fn validate_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::InvalidSpec("theta must have at least one entry".into()));
    }
    if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidSpec(format!("non-finite coefficient {bad}")));
    }
    Ok(())
}
