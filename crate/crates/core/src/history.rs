//! Per-policyholder observation records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Claim frequency and aggregate severity of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub count: u64,
    pub total: f64,
}

impl Observation {
    /// Checks the two-part structure: the total is zero exactly when the count is.
    pub fn new(count: u64, total: f64) -> Result<Self> {
        let obs = Observation { count, total };
        obs.validate()?;
        Ok(obs)
    }

    pub fn no_claim() -> Self {
        Observation { count: 0, total: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.total.is_finite() || self.total < 0.0 {
            return Err(Error::domain(format!("aggregate severity must be finite and >= 0, got {}", self.total)));
        }
        match (self.count, self.total > 0.0) {
            (0, true) => Err(Error::domain(format!(
                "positive aggregate severity {} with zero claims",
                self.total
            ))),
            (n, false) if n > 0 => Err(Error::domain(format!("{n} claims with zero aggregate severity"))),
            _ => Ok(()),
        }
    }
}

/// One observed period of a policy: its year, covariate row and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub year: i32,
    /// Design row (intercept included when the schema asks for one).
    pub covariates: Vec<f64>,
    pub obs: Observation,
}

/// Ordered history of one policyholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHistory {
    pub policy_id: String,
    pub periods: Vec<Period>,
}

impl PolicyHistory {
    /// Periods with `year < before`.
    pub fn until(&self, before: i32) -> &[Period] {
        let n = self.periods.iter().take_while(|p| p.year < before).count();
        &self.periods[..n]
    }

    pub fn period(&self, year: i32) -> Option<&Period> {
        self.periods.iter().find(|p| p.year == year)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_part_invariant() {
        assert!(Observation::new(0, 0.0).is_ok());
        assert!(Observation::new(2, 10.0).is_ok());
        assert!(Observation::new(0, 100.0).is_err());
        assert!(Observation::new(1, 0.0).is_err());
        assert!(Observation::new(1, -4.0).is_err());
        assert!(Observation::new(1, f64::NAN).is_err());
    }
}
