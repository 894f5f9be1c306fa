use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant,
    Linear,
}

/// Scalar hyperparameter as a function of the global step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            start: value,
            end: value,
            horizon: 1,
        }
    }

    pub fn linear(start: f64, end: f64, horizon: u64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            start,
            end,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScheduleKind::Linear && self.horizon == 0 {
            return Err(Error::invalid("linear schedule needs a positive horizon"));
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.start,
            ScheduleKind::Linear => {
                if step >= self.horizon {
                    self.end
                } else {
                    let frac = step as f64 / self.horizon as f64;
                    self.start + (self.end - self.start) * frac
                }
            }
        }
    }
}

/// Evaluates a schedule at a possibly negative step.
pub fn resolve_schedule(kind: ScheduleKind, start: f64, end: f64, horizon: u64, step: i64) -> Result<f64> {
    if step < 0 {
        return Err(Error::invalid(format!("negative step {step}")));
    }
    let s = Schedule {
        kind,
        start,
        end,
        horizon,
    };
    s.validate()?;
    Ok(s.value(step as u64))
}
