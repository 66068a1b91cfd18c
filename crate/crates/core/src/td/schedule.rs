//! Step-size sequences `a(n)`, indexed from `n = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `a(n) = value`
    Constant { value: f64 },
    /// `a(n) = scale / (n + offset)^k`
    Power {
        k: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `a(n) = scale / (n (ln n)^p)`, defined from `n = 2`
    LogPower {
        p: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `a(n) = scale / (1 + n ln n)`
    InvNLogN {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `a(n) = values[n - 1]`
    Explicit { values: Vec<f64> },
}

impl StepSchedule {
    pub fn constant(value: f64) -> Self {
        StepSchedule::Constant { value }
    }

    pub fn power(k: f64) -> Self {
        StepSchedule::Power { k, scale: 1.0, offset: 0.0 }
    }

    pub fn scaled_power(k: f64, scale: f64) -> Self {
        StepSchedule::Power { k, scale, offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config("schedule", msg));
        match self {
            StepSchedule::Constant { value } if !(value.is_finite() && *value > 0.0) => {
                bad(format!("constant step {value} must be positive"))
            }
            StepSchedule::Power { k, scale, offset } => {
                if !(k.is_finite() && *k > 0.0) {
                    bad(format!("exponent {k} must be positive"))
                } else if !(scale.is_finite() && *scale > 0.0) {
                    bad(format!("scale {scale} must be positive"))
                } else if !(offset.is_finite() && *offset >= 0.0) {
                    bad(format!("offset {offset} must be nonnegative"))
                } else {
                    Ok(())
                }
            }
            StepSchedule::LogPower { p, scale } => {
                if !(p.is_finite() && *p >= 0.0) {
                    bad(format!("exponent {p} must be nonnegative"))
                } else if !(scale.is_finite() && *scale > 0.0) {
                    bad(format!("scale {scale} must be positive"))
                } else {
                    Ok(())
                }
            }
            StepSchedule::InvNLogN { scale } if !(scale.is_finite() && *scale > 0.0) => {
                bad(format!("scale {scale} must be positive"))
            }
            StepSchedule::Explicit { values } => {
                if values.is_empty() {
                    bad("explicit schedule is empty".into())
                } else if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    bad("explicit steps must be positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// First valid index.
    pub fn first_index(&self) -> u64 {
        match self {
            StepSchedule::LogPower { .. } => 2,
            _ => 1,
        }
    }

    /// Largest valid index, if the schedule is finite.
    pub fn len(&self) -> Option<u64> {
        match self {
            StepSchedule::Explicit { values } => Some(values.len() as u64),
            _ => None,
        }
    }

    pub fn value(&self, n: u64) -> Result<f64> {
        if n < self.first_index() {
            return Err(Error::BadIndex(n));
        }
        let x = n as f64;
        Ok(match self {
            StepSchedule::Constant { value } => *value,
            StepSchedule::Power { k, scale, offset } => scale / (x + offset).powf(*k),
            StepSchedule::LogPower { p, scale } => scale / (x * x.ln().powf(*p)),
            StepSchedule::InvNLogN { scale } => scale / (1.0 + x * x.ln()),
            StepSchedule::Explicit { values } => *values
                .get((n - 1) as usize)
                .ok_or(Error::BadIndex(n))?,
        })
    }

    /// Whether `Σ a(n)²` is finite.
    pub fn is_square_summable(&self) -> bool {
        match self {
            StepSchedule::Constant { .. } => false,
            StepSchedule::Power { k, .. } => *k > 0.5,
            StepSchedule::LogPower { .. } | StepSchedule::InvNLogN { .. } => true,
            StepSchedule::Explicit { .. } => true,
        }
    }

    /// `Σ_{n=from}^{to} a(n)`, both ends inclusive.
    pub fn partial_sum(&self, from: u64, to: u64) -> Result<f64> {
        let mut total = 0.0;
        for n in from..=to {
            total += self.value(n)?;
        }
        Ok(total)
    }
}
