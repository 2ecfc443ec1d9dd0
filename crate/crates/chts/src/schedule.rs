//! Density-decay schedules: constant, cubic, and sigmoid, plus FLOPs
//! equalization between the sigmoid and cubic forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cubic,
    Sigmoid,
}

/// Maps a training step to a target sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySchedule {
    pub kind: ScheduleKind,
    /// Initial sparsity.
    pub s_initial: f64,
    /// Final sparsity.
    pub s_final: f64,
    /// First step of the decay window.
    pub t_start: u64,
    /// Last step of the decay window.
    pub t_end: u64,
    /// Evaluation granularity: targets change only at multiples of dt.
    pub dt: u64,
    /// Sigmoid curvature, scaled to the window length.
    pub curvature: f64,
}

impl DensitySchedule {
    pub fn constant(sparsity: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            s_initial: sparsity,
            s_final: sparsity,
            t_start: 0,
            t_end: 1,
            dt: 1,
            curvature: 6.0,
        }
    }

    pub fn cubic(s_initial: f64, s_final: f64, t_start: u64, t_end: u64, dt: u64) -> Self {
        Self { kind: ScheduleKind::Cubic, s_initial, s_final, t_start, t_end, dt, curvature: 6.0 }
    }

    pub fn sigmoid(s_initial: f64, s_final: f64, t_start: u64, t_end: u64, dt: u64) -> Self {
        Self { kind: ScheduleKind::Sigmoid, s_initial, s_final, t_start, t_end, dt, curvature: 6.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.s_initial)
            || !(0.0..1.0).contains(&self.s_final)
            || self.s_initial > self.s_final
        {
            return Err(Error::InvalidConfig(format!(
                "sparsity bounds must satisfy 0 <= s_initial <= s_final < 1, got {} and {}",
                self.s_initial, self.s_final
            )));
        }
        if self.kind != ScheduleKind::Constant && self.t_start >= self.t_end {
            return Err(Error::InvalidConfig(format!(
                "decay window must be nonempty, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.dt == 0 {
            return Err(Error::InvalidConfig("dt must be >= 1".into()));
        }
        Ok(())
    }

    /// Target sparsity at step t. Steps outside [t_start, t_end] clamp to
    /// the endpoints; within the window, t snaps down to a multiple of dt
    /// so targets only change at update boundaries.
    pub fn sparsity_at(&self, t: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.s_initial,
            ScheduleKind::Cubic | ScheduleKind::Sigmoid => {
                if t <= self.t_start {
                    return self.s_initial;
                }
                if t >= self.t_end {
                    return self.s_final;
                }
                let stepped = self.t_start + ((t - self.t_start) / self.dt) * self.dt;
                let x = (stepped - self.t_start) as f64 / (self.t_end - self.t_start) as f64;
                match self.kind {
                    ScheduleKind::Cubic => {
                        self.s_final + (self.s_initial - self.s_final) * (1.0 - x).powi(3)
                    }
                    ScheduleKind::Sigmoid => {
                        self.s_initial + (self.s_final - self.s_initial) * renormalized_logistic(x, self.curvature)
                    }
                    ScheduleKind::Constant => unreachable!(),
                }
            }
        }
    }

    pub fn density_at(&self, t: u64) -> f64 {
        1.0 - self.sparsity_at(t)
    }
}

/// Logistic in normalized window coordinates, affinely rescaled so that
/// x=0 maps to 0 and x=1 maps to 1 exactly. Symmetric about x=0.5, so the
/// midpoint value is exactly 0.5. The curvature k keeps its meaning on any
/// window length because it acts on normalized coordinates.
fn renormalized_logistic(x: f64, k: f64) -> f64 {
    let raw = |u: f64| 1.0 / (1.0 + (-k * u).exp());
    let lo = raw(-1.0);
    let hi = raw(1.0);
    (raw(2.0 * x - 1.0) - lo) / (hi - lo)
}

/// Returns the sigmoid schedule whose decay window is half the cubic
/// reference's, which matches the two schedules' density integrals over
/// the full cubic window (the sigmoid holds s_final afterwards).
pub fn equalize_flops(sigmoid: &DensitySchedule, cubic: &DensitySchedule) -> Result<DensitySchedule> {
    if sigmoid.kind == ScheduleKind::Constant {
        return Ok(*sigmoid);
    }
    if sigmoid.s_initial != cubic.s_initial
        || sigmoid.s_final != cubic.s_final
        || sigmoid.t_start != cubic.t_start
    {
        return Err(Error::InvalidConfig(
            "FLOPs equalization needs matching s_initial, s_final, and t_start".into(),
        ));
    }
    let window = cubic.t_end - cubic.t_start;
    let mut out = *sigmoid;
    out.t_end = cubic.t_start + window / 2;
    Ok(out)
}
