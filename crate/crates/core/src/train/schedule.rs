//! Gumbel-Softmax temperature schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauSchedule {
    Constant { tau: f64 },
    /// Straight line from `start` to `end` over `steps`, then held at `end`.
    Linear { start: f64, end: f64, steps: usize },
    /// `start · gamma^step`, never below `min`.
    Exponential { start: f64, gamma: f64, min: f64 },
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule::Constant { tau: 1.5 }
    }
}

impl TauSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TauSchedule::Constant { tau } => tau > 0.0 && tau.is_finite(),
            TauSchedule::Linear { start, end, steps } => start > 0.0 && end > 0.0 && steps > 0,
            TauSchedule::Exponential { start, gamma, min } => {
                start > 0.0 && min > 0.0 && gamma > 0.0 && gamma <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid temperature schedule {self:?}")))
        }
    }
}

/// Temperature at `step`.
pub fn anneal_tau(schedule: &TauSchedule, step: usize) -> Result<f64> {
    schedule.validate()?;
    Ok(match *schedule {
        TauSchedule::Constant { tau } => tau,
        TauSchedule::Linear { start, end, steps } => {
            let f = (step.min(steps)) as f64 / steps as f64;
            start + (end - start) * f
        }
        TauSchedule::Exponential { start, gamma, min } => (start * gamma.powf(step as f64)).max(min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let c = TauSchedule::default();
        assert_eq!(anneal_tau(&c, 0).unwrap(), 1.5);
        assert_eq!(anneal_tau(&c, 12345).unwrap(), 1.5);
        let l = TauSchedule::Linear { start: 1.5, end: 0.1, steps: 1000 };
        assert!((anneal_tau(&l, 500).unwrap() - 0.8).abs() < 1e-12);
        assert!((anneal_tau(&l, 5000).unwrap() - 0.1).abs() < 1e-12);
        let e = TauSchedule::Exponential { start: 2.0, gamma: 0.999, min: 0.5 };
        assert_eq!(anneal_tau(&e, 0).unwrap(), 2.0);
        assert_eq!(anneal_tau(&e, 1_000_000).unwrap(), 0.5);
    }

    #[test]
    fn rejects_nonpositive_floor() {
        let e = TauSchedule::Exponential { start: 2.0, gamma: 0.9, min: 0.0 };
        assert!(matches!(anneal_tau(&e, 3), Err(Error::Config(_))));
        let l = TauSchedule::Linear { start: 1.0, end: -0.1, steps: 10 };
        assert!(anneal_tau(&l, 0).is_err());
    }

    #[test]
    fn json_shape() {
        let s: TauSchedule = serde_json::from_str(r#"{"kind":"linear","start":1.5,"end":0.1,"steps":10}"#).unwrap();
        assert_eq!(s, TauSchedule::Linear { start: 1.5, end: 0.1, steps: 10 });
    }
}
