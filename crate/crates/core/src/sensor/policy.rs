//! Randomized threshold transmission policies.

use crate::error::{Error, Result};

/// Relative distance within which `1/r - 1` is snapped to the nearest integer
/// before taking the floor, so exact breakpoints such as `r = 1/3` land on
/// the deterministic threshold despite rounding in `1/r`.
const BREAKPOINT_SNAP: f64 = 1e-12;

/// Largest threshold representable without losing integer precision in f64.
const MAX_THRESHOLD: f64 = 9.0e15;

/// Transmit never while the time since the last transmission is below `xi`,
/// with probability `b` when it equals `xi`, and always above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub xi: u64,
    pub b: f64,
}

impl ThresholdPolicy {
    pub fn new(xi: u64, b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Domain(format!(
                "randomization probability {b} outside [0, 1]"
            )));
        }
        Ok(Self { xi, b })
    }

    /// Expected number of steps between transmissions, `b(ξ+1) + (1-b)(ξ+2)`.
    pub fn expected_cycle_length(&self) -> f64 {
        self.xi as f64 + 2.0 - self.b
    }

    /// Long-run transmission rate `1 / (ξ + 2 - b)`.
    pub fn rate(&self) -> f64 {
        1.0 / self.expected_cycle_length()
    }
}

/// `floor(1/r - 1)` with breakpoint snapping. Works for any `r > 0`; callers
/// that need an integer check the result against [`MAX_THRESHOLD`].
pub(crate) fn threshold_index(r: f64) -> f64 {
    let x = 1.0 / r - 1.0;
    let nearest = x.round();
    if (x - nearest).abs() <= BREAKPOINT_SNAP * x.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    }
}

/// Policy whose long-run rate equals `r`:
/// `ξ = ⌊1/r - 1⌋`, `b = ξ + 1 + (r - 1)/r`.
pub fn threshold_from_rate(r: f64) -> Result<ThresholdPolicy> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("rate {r} outside (0, 1]")));
    }
    let xi = threshold_index(r);
    if xi > MAX_THRESHOLD {
        return Err(Error::Domain(format!(
            "rate {r} is too small for an integer threshold"
        )));
    }
    let b = (xi + 1.0 + (r - 1.0) / r).clamp(0.0, 1.0);
    Ok(ThresholdPolicy { xi: xi as u64, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn always_transmit() {
        assert_eq!(
            threshold_from_rate(1.0).unwrap(),
            ThresholdPolicy { xi: 0, b: 1.0 }
        );
    }

    #[test]
    fn exact_breakpoint_is_deterministic() {
        let p = threshold_from_rate(1.0 / 3.0).unwrap();
        assert_eq!(p.xi, 2);
        assert!((p.b - 1.0).abs() < 1e-12);
        assert!((p.rate() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn interior_rate() {
        let p = threshold_from_rate(0.4).unwrap();
        assert_eq!(p.xi, 1);
        assert!((p.b - 0.5).abs() < 1e-12);
        assert!((p.expected_cycle_length() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rates() {
        for r in [0.0, -0.1, 1.0000001, f64::NAN] {
            assert!(matches!(threshold_from_rate(r), Err(Error::Domain(_))));
        }
        assert!(threshold_from_rate(1e-300).is_err());
    }

    proptest! {
        #[test]
        fn cycle_length_inverts_rate(r in 1e-6f64..=1.0) {
            let p = threshold_from_rate(r).unwrap();
            prop_assert!((0.0..=1.0).contains(&p.b));
            let len = p.b * (p.xi as f64 + 1.0) + (1.0 - p.b) * (p.xi as f64 + 2.0);
            prop_assert!((len - 1.0 / r).abs() <= 1e-12 * (1.0 / r));
        }
    }
}
