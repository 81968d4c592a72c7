//! Void-fraction measurement corrections.
//!
//! X-ray densitometer void readings over-report in the two-phase regime;
//! the correction rescales a measured void fraction (in percent) inside the
//! instrument calibration window `[20, 90]` and passes readings outside the
//! window through unchanged. Two calibration families are supported, one
//! for standard fuel assemblies and one for high-burnup assemblies with a
//! slightly weaker over-reading.

use crate::error::{CalvalError, Result};
use serde::{Deserialize, Serialize};

/// Lower edge of the correction window (percent void).
pub const WINDOW_LOW: f64 = 20.0;
/// Upper edge of the correction window (percent void).
pub const WINDOW_HIGH: f64 = 90.0;

/// Instrument calibration family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionFamily {
    Standard,
    HighBurnup,
}

impl CorrectionFamily {
    /// Intercept of the correction denominator `k - 0.001 alpha`.
    fn intercept(self) -> f64 {
        match self {
            CorrectionFamily::Standard => 1.231,
            CorrectionFamily::HighBurnup => 1.167,
        }
    }
}

impl std::fmt::Display for CorrectionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrectionFamily::Standard => write!(f, "standard"),
            CorrectionFamily::HighBurnup => write!(f, "high_burnup"),
        }
    }
}

impl std::str::FromStr for CorrectionFamily {
    type Err = CalvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CorrectionFamily::Standard),
            "high_burnup" | "high-burnup" => Ok(CorrectionFamily::HighBurnup),
            other => Err(CalvalError::invalid(format!(
                "unknown correction family `{other}` (expected `standard` or `high_burnup`)"
            ))),
        }
    }
}

fn check_domain(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || !(0.0..=100.0).contains(&alpha) {
        return Err(CalvalError::invalid(format!(
            "void fraction {alpha} outside [0, 100]"
        )));
    }
    Ok(())
}

/// Correct a measured void fraction (percent).
///
/// Inside the calibration window the corrected value is
/// `alpha / (k - 0.001 alpha)` with family intercept `k`; outside the
/// window the reading is returned unchanged. Within the window the
/// correction is strictly increasing and always reduces the reading.
pub fn correct_void_fraction(alpha: f64, family: CorrectionFamily) -> Result<f64> {
    check_domain(alpha)?;
    if !(WINDOW_LOW..=WINDOW_HIGH).contains(&alpha) {
        return Ok(alpha);
    }
    Ok(alpha / (family.intercept() - 0.001 * alpha))
}

/// Derivative of [`correct_void_fraction`] with respect to the measured
/// value, used to propagate measurement variance through the correction by
/// the delta method. Outside the window the correction is the identity, so
/// the derivative is 1.
pub fn correction_derivative(alpha: f64, family: CorrectionFamily) -> Result<f64> {
    check_domain(alpha)?;
    if !(WINDOW_LOW..=WINDOW_HIGH).contains(&alpha) {
        return Ok(1.0);
    }
    let k = family.intercept();
    let den = k - 0.001 * alpha;
    Ok(k / (den * den))
}

/// Inverse of the correction map: the raw reading an instrument of the
/// given family would report for a true void fraction `alpha` (percent).
///
/// Supports synthetic-data generation, where true responses must be
/// distorted into as-reported readings so that applying the correction on
/// ingest is meaningful. The inverse of `y = a / (k - 0.001 a)` is
/// `a = y k / (1 + 0.001 y)`; it is applied over the whole domain, so a
/// round trip through [`correct_void_fraction`] is exact only where the
/// distorted reading lands inside the calibration window.
pub fn distort_void_fraction(alpha: f64, family: CorrectionFamily) -> Result<f64> {
    check_domain(alpha)?;
    Ok(alpha * family.intercept() / (1.0 + 0.001 * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matches_closed_form_at_window_edges() {
        let s = correct_void_fraction(20.0, CorrectionFamily::Standard).unwrap();
        assert_relative_eq!(s, 20.0 / 1.211, epsilon = 1e-12);
        assert_relative_eq!(s, 16.5153, epsilon = 1e-4);
        let h = correct_void_fraction(90.0, CorrectionFamily::HighBurnup).unwrap();
        assert_relative_eq!(h, 90.0 / 1.077, epsilon = 1e-12);
        assert_relative_eq!(h, 83.5655, epsilon = 1e-4);
    }

    #[test]
    fn passthrough_outside_window() {
        for family in [CorrectionFamily::Standard, CorrectionFamily::HighBurnup] {
            assert_eq!(correct_void_fraction(0.0, family).unwrap(), 0.0);
            assert_eq!(correct_void_fraction(19.99, family).unwrap(), 19.99);
            assert_eq!(correct_void_fraction(95.0, family).unwrap(), 95.0);
            assert_eq!(correction_derivative(10.0, family).unwrap(), 1.0);
        }
    }

    #[test]
    fn rejects_out_of_domain_readings() {
        assert!(correct_void_fraction(-0.5, CorrectionFamily::Standard).is_err());
        assert!(correct_void_fraction(100.5, CorrectionFamily::Standard).is_err());
        assert!(correct_void_fraction(f64::NAN, CorrectionFamily::Standard).is_err());
        assert!(distort_void_fraction(101.0, CorrectionFamily::Standard).is_err());
    }

    #[test]
    fn strictly_increasing_and_reducing_inside_window() {
        for family in [CorrectionFamily::Standard, CorrectionFamily::HighBurnup] {
            let mut prev = correct_void_fraction(20.0, family).unwrap();
            for i in 1..=700 {
                let a = 20.0 + 0.1 * i as f64;
                let c = correct_void_fraction(a, family).unwrap();
                assert!(c > prev, "correction not increasing at {a}");
                assert!(c < a, "correction failed to reduce reading at {a}");
                prev = c;
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for a in [25.0, 40.0, 55.0, 70.0, 89.0] {
            for family in [CorrectionFamily::Standard, CorrectionFamily::HighBurnup] {
                let d = correction_derivative(a, family).unwrap();
                let fd = (correct_void_fraction(a + h, family).unwrap()
                    - correct_void_fraction(a - h, family).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(d, fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn distortion_inverts_correction_inside_window() {
        for family in [CorrectionFamily::Standard, CorrectionFamily::HighBurnup] {
            for i in 0..=100 {
                let truth = 17.0 + 0.6 * i as f64;
                let raw = distort_void_fraction(truth, family).unwrap();
                if (WINDOW_LOW..=WINDOW_HIGH).contains(&raw) {
                    let back = correct_void_fraction(raw, family).unwrap();
                    assert_relative_eq!(back, truth, epsilon = 1e-10);
                }
            }
        }
    }
}
