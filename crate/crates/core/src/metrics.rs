//! Cycle-time decomposition, scaling efficiencies and utilization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five additive components of one simulation cycle, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleTiming {
    pub t_md: f64,
    pub t_ex: f64,
    pub t_data: f64,
    /// Framework overhead: task preparation and local bookkeeping.
    pub t_framework_over: f64,
    /// Task launch overhead of the resource layer.
    pub t_launch_over: f64,
}

impl CycleTiming {
    pub fn components(&self) -> [f64; 5] {
        [
            self.t_md,
            self.t_ex,
            self.t_data,
            self.t_framework_over,
            self.t_launch_over,
        ]
    }
}

/// Total cycle time `T_c`. In multi-dimensional runs each cycle exchanges in
/// a single dimension, so this is the 1-D cycle time of that dimension.
pub fn cycle_time(timing: &CycleTiming) -> Result<f64> {
    let parts = timing.components();
    if let Some(v) = parts.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidTiming(format!(
            "component {v} must be finite and non-negative"
        )));
    }
    Ok(parts.iter().sum())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMetric(format!("{name} = {v} must be positive")))
    }
}

/// Weak scaling efficiency `T_1 / T_N × 100`.
pub fn weak_efficiency(t_1: f64, t_n: f64) -> Result<f64> {
    positive("T_1", t_1)?;
    positive("T_N", t_n)?;
    Ok(t_1 / t_n * 100.0)
}

/// Strong scaling efficiency `T_1 / (N × T_N) × 100`, where `N` is the core
/// multiplication factor `M / N_min`.
pub fn strong_efficiency(t_1: f64, t_n: f64, scale: f64) -> Result<f64> {
    positive("T_1", t_1)?;
    positive("T_N", t_n)?;
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(Error::InvalidMetric(format!("core scale factor {scale} must be >= 1")));
    }
    Ok(t_1 / (scale * t_n) * 100.0)
}

/// Utilization of a pilot as a percentage.
///
/// Defined as simulation throughput per core-hour relative to the ideal where
/// cores only run MD. Simulated time is proportional to MD busy time for a
/// fixed engine, so the ratio reduces to MD core-seconds over available
/// core-seconds.
pub fn utilization(md_core_seconds: f64, total_cores: u32, span: f64) -> Result<f64> {
    if !(span.is_finite() && span > 0.0) {
        return Err(Error::InvalidMetric(format!("pilot span {span} must be positive")));
    }
    if total_cores == 0 {
        return Err(Error::InvalidMetric("pilot has no cores".into()));
    }
    if !(md_core_seconds.is_finite() && md_core_seconds >= 0.0) {
        return Err(Error::InvalidMetric(format!("MD busy time {md_core_seconds} is invalid")));
    }
    Ok(md_core_seconds / (total_cores as f64 * span) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn timing(v: [f64; 5]) -> CycleTiming {
        CycleTiming {
            t_md: v[0],
            t_ex: v[1],
            t_data: v[2],
            t_framework_over: v[3],
            t_launch_over: v[4],
        }
    }

    #[test]
    fn cycle_time_examples() {
        assert_eq!(cycle_time(&timing([0.0; 5])).unwrap(), 0.0);
        assert!((cycle_time(&timing([139.6, 5.0, 6.3, 2.0, 10.0])).unwrap() - 162.9).abs() < 1e-12);
        assert_eq!(cycle_time(&timing([100.0, 0.0, 0.0, 0.0, 0.0])).unwrap(), 100.0);
        assert!(matches!(
            cycle_time(&timing([1.0, -0.5, 0.0, 0.0, 0.0])),
            Err(Error::InvalidTiming(_))
        ));
    }

    #[test]
    fn weak_examples() {
        assert_eq!(weak_efficiency(42.0, 42.0).unwrap(), 100.0);
        assert!((weak_efficiency(139.6, 155.1).unwrap() - 90.006447).abs() < 1e-5);
        assert_eq!(weak_efficiency(100.0, 200.0).unwrap(), 50.0);
        assert!(weak_efficiency(0.0, 1.0).is_err());
        assert!(weak_efficiency(1.0, -1.0).is_err());
    }

    #[test]
    fn strong_examples() {
        assert_eq!(strong_efficiency(7.0, 7.0, 1.0).unwrap(), 100.0);
        assert!((strong_efficiency(1000.0, 520.0, 2.0).unwrap() - 96.153846).abs() < 1e-5);
        assert_eq!(strong_efficiency(1000.0, 1000.0, 2.0).unwrap(), 50.0);
        assert!(strong_efficiency(1000.0, 1000.0, 0.5).is_err());
        assert!(strong_efficiency(1000.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization(400.0, 4, 100.0).unwrap(), 100.0);
        assert_eq!(utilization(360.0, 4, 100.0).unwrap(), 90.0);
        assert!(utilization(1.0, 4, 0.0).is_err());
        assert!(utilization(1.0, 0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn identity_efficiencies(t in 1e-6f64..1e9) {
            prop_assert_eq!(weak_efficiency(t, t).unwrap(), 100.0);
            prop_assert_eq!(strong_efficiency(t, t, 1.0).unwrap(), 100.0);
        }

        #[test]
        fn cycle_time_is_linear_and_order_free(
            v in proptest::array::uniform5(0.0f64..1e4),
            k in 0usize..5,
            extra in 0.0f64..1e3,
        ) {
            let base = cycle_time(&timing(v)).unwrap();
            let mut bumped = v;
            bumped[k] += extra;
            let t = cycle_time(&timing(bumped)).unwrap();
            prop_assert!((t - base - extra).abs() <= 1e-9 * (1.0 + t));
            let mut rev = v;
            rev.reverse();
            let r = cycle_time(&timing(rev)).unwrap();
            prop_assert!((r - base).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
