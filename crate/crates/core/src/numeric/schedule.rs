//! Per-step scalar schedules for learning rate, teacher temperature, EMA
//! momentum and weight decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `start` for every step.
    Constant,
    /// Half-cosine from `start` at step 0 to `final_value` at `total_steps`.
    Cosine,
    /// Linear `start -> peak` over `warmup_steps`, then half-cosine
    /// `peak -> final_value` until `total_steps`.
    WarmupCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start: f64,
    pub peak: f64,
    pub final_value: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            start: value,
            peak: value,
            final_value: value,
            warmup_steps: 0,
            total_steps: 0,
        }
    }

    pub fn cosine(start: f64, final_value: f64, total_steps: u64) -> Self {
        Self { kind: ScheduleKind::Cosine, start, peak: start, final_value, warmup_steps: 0, total_steps }
    }

    pub fn warmup_cosine(start: f64, peak: f64, final_value: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            start,
            peak,
            final_value,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    /// Value at `step`. Steps past `total_steps` are clamped with a warning;
    /// use [`Schedule::value_held`] where holding the final value is intended.
    pub fn value(&self, step: u64) -> f64 {
        if step > self.total_steps && self.kind != ScheduleKind::Constant {
            log::warn!("schedule step {step} beyond total {}; clamping", self.total_steps);
        }
        self.value_held(step)
    }

    /// Value at `min(step, total_steps)` without a warning.
    pub fn value_held(&self, step: u64) -> f64 {
        let t = step.min(self.total_steps);
        match self.kind {
            ScheduleKind::Constant => self.start,
            ScheduleKind::Cosine => cosine(self.start, self.final_value, t, self.total_steps),
            ScheduleKind::WarmupCosine => {
                if t < self.warmup_steps {
                    self.start + (self.peak - self.start) * t as f64 / self.warmup_steps as f64
                } else {
                    cosine(self.peak, self.final_value, t - self.warmup_steps, self.total_steps - self.warmup_steps)
                }
            }
        }
    }
}

fn cosine(start: f64, final_value: f64, t: u64, total: u64) -> f64 {
    if total == 0 || t >= total {
        return final_value;
    }
    if t == 0 {
        return start;
    }
    let frac = t as f64 / total as f64;
    final_value + 0.5 * (start - final_value) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn teacher_temperature_endpoints_and_midpoint() {
        let s = Schedule::cosine(0.04, 0.4, 100);
        assert_eq!(s.value(0), 0.04);
        assert_eq!(s.value(100), 0.4);
        assert!((s.value(50) - 0.22).abs() < 1e-12);
    }

    #[test]
    fn warmup_learning_rate_endpoints() {
        let s = Schedule::warmup_cosine(0.0, 2e-3, 1e-6, 20, 200);
        assert_eq!(s.value(0), 0.0);
        assert_eq!(s.value(20), 2e-3);
        assert_eq!(s.value(200), 1e-6);
        assert!((s.value(10) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn out_of_range_step_is_clamped() {
        let s = Schedule::cosine(0.992, 1.0, 10);
        assert_eq!(s.value(25), 1.0);
        assert_eq!(s.value_held(25), 1.0);
    }

    #[test]
    fn constant_ignores_step() {
        let s = Schedule::constant(0.1);
        assert_eq!(s.value(0), 0.1);
        assert_eq!(s.value(1_000_000), 0.1);
    }

    proptest! {
        #[test]
        fn cosine_is_monotone_between_endpoints(start in -5.0f64..5.0, end in -5.0f64..5.0, total in 1u64..500) {
            let s = Schedule::cosine(start, end, total);
            let (lo, hi) = (start.min(end), start.max(end));
            let mut prev = s.value(0);
            for t in 0..=total {
                let v = s.value(t);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                if end >= start { prop_assert!(v >= prev - 1e-12) } else { prop_assert!(v <= prev + 1e-12) }
                prev = v;
            }
        }
    }
}
