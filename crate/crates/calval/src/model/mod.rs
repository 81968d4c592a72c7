//! Core model abstractions and the built-in channel void-fraction
//! benchmark.
//!
//! The benchmark is a fast algebraic stand-in for a subchannel
//! thermal-hydraulics code: four axially stacked void-fraction QoIs driven
//! by four boundary conditions (pressure, mass flow, power, inlet
//! temperature) and five dimensionless physical-model multipliers.

pub mod correction;
pub mod generator;

use crate::error::{CalvalError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A point in the design (boundary-condition) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub values: Vec<f64>,
}

impl DesignPoint {
    pub fn new(values: Vec<f64>) -> Self {
        DesignPoint { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A vector of physical-model parameters (calibration inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector { values }
    }
}

/// A vector of model responses, one entry per quantity of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoIVector {
    pub values: Vec<f64>,
}

impl QoIVector {
    pub fn new(values: Vec<f64>) -> Self {
        QoIVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Independent uniform box prior over the physical-model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nominal (pre-calibration) parameter values, used as the reference
    /// point for bias estimation and as the H1 ensemble center.
    pub nominal: Vec<f64>,
}

impl PriorSpec {
    /// Build and validate a prior. Every dimension must satisfy
    /// `lower < upper` and contain its nominal value.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nominal: Vec<f64>) -> Result<Self> {
        let spec = PriorSpec { lower, upper, nominal };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.len() != self.nominal.len() {
            return Err(CalvalError::DimensionMismatch {
                context: "PriorSpec bounds/nominal".into(),
                expected: self.lower.len(),
                actual: self.upper.len().max(self.nominal.len()),
            });
        }
        for i in 0..self.lower.len() {
            let (lo, hi, nom) = (self.lower[i], self.upper[i], self.nominal[i]);
            if !(lo.is_finite() && hi.is_finite() && nom.is_finite()) {
                return Err(CalvalError::NonFinite(format!("prior dimension {i}")));
            }
            if lo >= hi {
                return Err(CalvalError::invalid(format!(
                    "prior dimension {i}: lower {lo} must be strictly below upper {hi}"
                )));
            }
            if nom < lo || nom > hi {
                return Err(CalvalError::invalid(format!(
                    "prior dimension {i}: nominal {nom} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// True when every coordinate of `theta` lies inside the box
    /// (boundaries included).
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    /// One uniform draw from the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let values = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        ParamVector { values }
    }
}

/// Abstract computer-model interface: deterministic response at a design
/// point for a parameter vector.
pub trait ComputerModel {
    fn design_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn qoi_dim(&self) -> usize;
    fn design_names(&self) -> &[&'static str];
    fn qoi_names(&self) -> &[&'static str];
    fn evaluate(&self, x: &DesignPoint, theta: &ParamVector) -> Result<QoIVector>;
}

/// Relative axial positions of the four void-fraction measurement planes.
pub const AXIAL_POSITIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Number of calibrated model parameters.
pub const THETA_DIM: usize = 5;

/// Number of design (boundary-condition) dimensions.
pub const DESIGN_DIM: usize = 4;

/// Reference scales that nondimensionalize the boundary conditions.
const POWER_REF: f64 = 6.5;
const SUBCOOLING_REF: f64 = 12.0;
const FLOW_REF: f64 = 15.0;

/// Built-in four-elevation void-fraction benchmark.
///
/// With normalized power `q = power / 6.5`, subcooling
/// `c = (t_sat(p) - t_inlet) / 12` (floored at zero), flow `g = flow / 15`,
/// and saturation temperature `t_sat(p) = 260 + 26 (p - 6)`, the void
/// fraction at relative elevation `z` is
///
/// ```text
/// void(z) = 100 * clamp((th2 q z - th1 0.15 c) / (th3 0.6 q z + th4 0.5 + th5 0.4 g), 0, 1)
/// ```
///
/// The five multipliers scale interfacial heat transfer, wall evaporation,
/// interfacial drag, wall drag, and subcooled condensation in the stand-in
/// model; their data-generating values are available from
/// [`BenchmarkModel::theta_star`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkModel;

const DESIGN_NAMES: [&str; 4] = ["pressure", "flow", "power", "t_inlet"];
const QOI_NAMES: [&str; 4] = ["VoidF1", "VoidF2", "VoidF3", "VoidF4"];

impl BenchmarkModel {
    pub fn new() -> Self {
        BenchmarkModel
    }

    /// Data-generating multiplier values used by the synthetic experiment
    /// generator.
    pub fn theta_star(&self) -> ParamVector {
        ParamVector::new(vec![1.2, 0.9, 1.1, 0.8, 1.05])
    }

    /// Saturation temperature (deg C) at pressure `p` (MPa) in the stand-in
    /// property model.
    pub fn t_sat(p: f64) -> f64 {
        260.0 + 26.0 * (p - 6.0)
    }

    fn normalized_inputs(&self, x: &DesignPoint) -> Result<(f64, f64, f64)> {
        if x.dim() != self.design_dim() {
            return Err(CalvalError::DimensionMismatch {
                context: "BenchmarkModel design point".into(),
                expected: self.design_dim(),
                actual: x.dim(),
            });
        }
        if x.values.iter().any(|v| !v.is_finite()) {
            return Err(CalvalError::NonFinite("design point".into()));
        }
        let [p, flow, power, t_in] = [x.values[0], x.values[1], x.values[2], x.values[3]];
        let q = power / POWER_REF;
        if q < 0.0 {
            return Err(CalvalError::invalid(format!("negative power {power}")));
        }
        // Inlet subcooling cannot be negative; a saturated inlet contributes
        // no condensation sink.
        let c = ((Self::t_sat(p) - t_in) / SUBCOOLING_REF).max(0.0);
        let g = flow / FLOW_REF;
        if g < 0.0 {
            return Err(CalvalError::invalid(format!("negative flow {flow}")));
        }
        Ok((q, c, g))
    }

    /// Structural model discrepancy added by the synthetic experiment
    /// generator when bias injection is enabled: a power-dependent axial
    /// tilt, in void-fraction percentage points.
    pub fn injected_bias(&self, x: &DesignPoint) -> Result<QoIVector> {
        let (q, _, _) = self.normalized_inputs(x)?;
        Ok(QoIVector::new(
            AXIAL_POSITIONS.iter().map(|z| 1.5 * z * (q - 1.0)).collect(),
        ))
    }
}

impl ComputerModel for BenchmarkModel {
    fn design_dim(&self) -> usize {
        4
    }

    fn param_dim(&self) -> usize {
        5
    }

    fn qoi_dim(&self) -> usize {
        4
    }

    fn design_names(&self) -> &[&'static str] {
        &DESIGN_NAMES
    }

    fn qoi_names(&self) -> &[&'static str] {
        &QOI_NAMES
    }

    fn evaluate(&self, x: &DesignPoint, theta: &ParamVector) -> Result<QoIVector> {
        if theta.dim() != self.param_dim() {
            return Err(CalvalError::DimensionMismatch {
                context: "BenchmarkModel parameter vector".into(),
                expected: self.param_dim(),
                actual: theta.dim(),
            });
        }
        if theta.values.iter().any(|v| !v.is_finite()) {
            return Err(CalvalError::NonFinite("parameter vector".into()));
        }
        let (q, c, g) = self.normalized_inputs(x)?;
        let th = &theta.values;
        let mut out = Vec::with_capacity(4);
        for z in AXIAL_POSITIONS {
            let numerator = th[1] * q * z - th[0] * 0.15 * c;
            let denominator = th[2] * 0.6 * q * z + th[3] * 0.5 + th[4] * 0.4 * g;
            if denominator <= 0.0 {
                return Err(CalvalError::invalid(format!(
                    "nonpositive void-model denominator {denominator} at z = {z}"
                )));
            }
            out.push(100.0 * (numerator / denominator).clamp(0.0, 1.0));
        }
        Ok(QoIVector::new(out))
    }
}
