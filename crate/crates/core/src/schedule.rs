//! Step-size sequences for the four timescales.

use crate::error::{Error, Result};

/// Decay law of one step-size sequence; `k` is the outer iteration index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    /// `c / (1 + k)^rho`.
    Polynomial { c: f64, rho: f64 },
    /// `c (1 − k/K)`, zero from `K` on.
    LinearDecay { c: f64, total: u64 },
}

impl Law {
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            Law::Polynomial { c, rho } => c / (1.0 + k as f64).powf(rho),
            Law::LinearDecay { c, total } => {
                if k >= total {
                    0.0
                } else {
                    c * (1.0 - k as f64 / total as f64)
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Law::Polynomial { c, rho } => Law::Polynomial { c: c * factor, rho },
            Law::LinearDecay { c, total } => Law::LinearDecay { c: c * factor, total },
        }
    }

    pub fn constant(&self) -> f64 {
        match *self {
            Law::Polynomial { c, .. } | Law::LinearDecay { c, .. } => c,
        }
    }
}

/// Timescales in order: critics, policy, REF, multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSet {
    pub laws: [Law; 4],
}

pub const DEFAULT_RHO: [f64; 4] = [0.55, 0.65, 0.80, 1.00];

impl ScheduleSet {
    pub fn polynomial(c: [f64; 4], rho: [f64; 4]) -> Self {
        Self { laws: std::array::from_fn(|i| Law::Polynomial { c: c[i], rho: rho[i] }) }
    }

    pub fn linear(c: [f64; 4], total: u64) -> Self {
        Self { laws: std::array::from_fn(|i| Law::LinearDecay { c: c[i], total }) }
    }

    /// Linear decays to zero over `total` iterations with the practical constants
    /// 1e-3 (critics), 3e-4 (actor), 1e-4 (REF), 5e-5 (multiplier).
    pub fn practical(total: u64) -> Self {
        Self::linear([1e-3, 3e-4, 1e-4, 5e-5], total)
    }

    /// Step size of timescale `i ∈ 1..=4` at iteration `k`.
    pub fn zeta(&self, i: usize, k: u64) -> f64 {
        self.laws[i - 1].at(k)
    }

    pub fn with_scaled(&self, i: usize, factor: f64) -> Self {
        let mut out = *self;
        out.laws[i - 1] = self.laws[i - 1].scaled(factor);
        out
    }

    pub fn is_polynomial(&self) -> bool {
        self.laws.iter().all(|l| matches!(l, Law::Polynomial { .. }))
    }

    /// Structural checks: positive constants, and for an all-polynomial set the
    /// exponent conditions `1/2 < ρ ≤ 1` (Σζ = ∞, Σζ² < ∞) and `ρ1 < ρ2 < ρ3 < ρ4`
    /// (each timescale vanishes relative to the previous one). Linear decays are
    /// accepted as a declared practical schedule.
    pub fn validate(&self) -> Result<()> {
        for (i, law) in self.laws.iter().enumerate() {
            let c = law.constant();
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config {
                    key: format!("schedule.c{}", i + 1),
                    message: format!("step-size constant must be positive, got {c}"),
                });
            }
            if let Law::LinearDecay { total: 0, .. } = law {
                return Err(Error::Config {
                    key: format!("schedule.total{}", i + 1),
                    message: "linear decay needs a positive horizon".into(),
                });
            }
        }
        if self.is_polynomial() {
            self.validate_timescales()?;
        }
        Ok(())
    }

    /// The multi-timescale conditions alone; fails for non-polynomial sets.
    pub fn validate_timescales(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, law) in self.laws.iter().enumerate() {
            let Law::Polynomial { rho, .. } = *law else {
                return Err(Error::Config {
                    key: format!("schedule.law{}", i + 1),
                    message: "timescale conditions only hold for polynomial laws".into(),
                });
            };
            if !(rho > 0.5 && rho <= 1.0) {
                return Err(Error::Config {
                    key: format!("schedule.rho{}", i + 1),
                    message: format!("exponent {rho} outside (0.5, 1]"),
                });
            }
            if rho <= prev {
                return Err(Error::Config {
                    key: format!("schedule.rho{}", i + 1),
                    message: format!("exponents must strictly increase, {rho} after {prev}"),
                });
            }
            prev = rho;
        }
        Ok(())
    }
}

impl Default for ScheduleSet {
    fn default() -> Self {
        Self::polynomial([0.5, 0.1, 0.05, 0.01], DEFAULT_RHO)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_constants_start_equal() {
        let s = ScheduleSet::polynomial([1.0; 4], DEFAULT_RHO);
        for i in 1..=4 {
            assert_eq!(s.zeta(i, 0), 1.0);
        }
        let r = s.zeta(4, 10_000) / s.zeta(3, 10_000);
        assert!((r - 10_001f64.powf(-0.2)).abs() < 1e-15);
        assert!((r - 0.158).abs() < 1e-3);
    }

    #[test]
    fn linear_decay_midpoint_and_freeze() {
        let l = Law::LinearDecay { c: 1e-3, total: 1_000_000 };
        assert!((l.at(500_000) - 5e-4).abs() < 1e-18);
        assert_eq!(l.at(1_000_000), 0.0);
        assert_eq!(l.at(2_000_000), 0.0);
    }

    #[test]
    fn timescale_validation() {
        assert!(ScheduleSet::polynomial([1.0; 4], DEFAULT_RHO).validate().is_ok());
        let bad = ScheduleSet::polynomial([1.0; 4], [0.55, 0.8, 0.65, 1.0]);
        assert!(bad.validate().is_err());
        let bad = ScheduleSet::polynomial([1.0; 4], [0.5, 0.65, 0.8, 1.0]);
        assert!(bad.validate().is_err());
        assert!(ScheduleSet::practical(100).validate().is_ok());
        assert!(ScheduleSet::practical(100).validate_timescales().is_err());
    }
}
