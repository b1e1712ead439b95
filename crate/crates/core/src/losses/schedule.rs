use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Step,
    Linear,
    Sigmoid,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [ScheduleKind::Step, ScheduleKind::Linear, ScheduleKind::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Step => "step",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Sigmoid => "sigmoid",
        }
    }
}

/// Loss weight as a function of the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSchedule {
    pub kind: ScheduleKind,
    /// Final weight `w`.
    pub weight: f64,
    /// Step threshold and sigmoid midpoint.
    pub t0: f64,
    /// Linear ramp start and end.
    pub ramp: (f64, f64),
    /// Sigmoid steepness.
    pub k: f64,
}

impl LossSchedule {
    /// Defaults for a run of `epochs`: threshold at 30% of training, linear
    /// ramp over the middle third, steepness `10/epochs`.
    pub fn for_epochs(kind: ScheduleKind, weight: f64, epochs: usize) -> Self {
        let e = epochs.max(1) as f64;
        Self {
            kind,
            weight,
            t0: (0.3 * e).round(),
            ramp: (e / 3.0, 2.0 * e / 3.0),
            k: 10.0 / e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) {
            return Err(invalid!("schedule weight must be non-negative, got {}", self.weight));
        }
        if !(self.ramp.0 < self.ramp.1) {
            return Err(invalid!("linear ramp needs start < end, got {:?}", self.ramp));
        }
        if !(self.k > 0.0) {
            return Err(invalid!("sigmoid steepness must be positive, got {}", self.k));
        }
        if !self.t0.is_finite() {
            return Err(invalid!("schedule threshold must be finite"));
        }
        Ok(())
    }

    pub fn weight_at(&self, t: f64) -> f64 {
        let w = self.weight;
        match self.kind {
            ScheduleKind::Step => {
                if t >= self.t0 {
                    w
                } else {
                    0.0
                }
            }
            ScheduleKind::Linear => {
                let (a, b) = self.ramp;
                w * ((t - a) / (b - a)).clamp(0.0, 1.0)
            }
            ScheduleKind::Sigmoid => w / (1.0 + (-self.k * (t - self.t0)).exp()),
        }
    }
}

pub fn schedule_weight(s: &LossSchedule, epoch: usize) -> f64 {
    s.weight_at(epoch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: ScheduleKind, weight: f64, t0: f64, ramp: (f64, f64), k: f64) -> LossSchedule {
        LossSchedule {
            kind,
            weight,
            t0,
            ramp,
            k,
        }
    }

    #[test]
    fn definitions() {
        let s = sched(ScheduleKind::Step, 1.0, 10.0, (0.0, 1.0), 1.0);
        assert_eq!(schedule_weight(&s, 9), 0.0);
        assert_eq!(schedule_weight(&s, 10), 1.0);
        let s = sched(ScheduleKind::Sigmoid, 0.8, 12.0, (0.0, 1.0), 0.7);
        assert_eq!(schedule_weight(&s, 12), 0.4);
        let s = sched(ScheduleKind::Linear, 2.0, 0.0, (0.0, 10.0), 1.0);
        assert_eq!(schedule_weight(&s, 5), 1.0);
        assert_eq!(schedule_weight(&s, 0), 0.0);
        assert_eq!(schedule_weight(&s, 10), 2.0);
        assert_eq!(schedule_weight(&s, 30), 2.0);
    }

    #[test]
    fn defaults() {
        let s = LossSchedule::for_epochs(ScheduleKind::Sigmoid, 0.5, 40);
        assert_eq!(s.t0, 12.0);
        assert_eq!(s.k, 0.25);
        assert_eq!(s.ramp, (40.0 / 3.0, 80.0 / 3.0));
        s.validate().unwrap();
        let mut bad = s;
        bad.k = 0.0;
        assert!(bad.validate().is_err());
        bad = s;
        bad.ramp = (3.0, 3.0);
        assert!(bad.validate().is_err());
        bad = s;
        bad.weight = -1.0;
        assert!(bad.validate().is_err());
    }
}
