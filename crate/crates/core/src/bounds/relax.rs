//! Linear envelopes of a single ReLU over a preactivation interval.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::bounds::LayerBounds;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this magnitude a bound is treated as zero when deciding stability.
pub const STABILITY_TOL: f64 = 1e-12;

/// How the lower linear envelope of an unstable ReLU is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlopePolicy {
    /// Lower slope equal to the upper chord slope `u / (u - l)`.
    FastLin,
    /// Lower slope 1 when `u >= |l|`, else 0: the choice with the smaller
    /// area between envelope and function.
    CrownAdaptive,
    /// Lower envelope `x >= 0`.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Active,
    Inactive,
    Unstable,
}

impl Stability {
    pub fn classify<T: Scalar>(lower: T, upper: T) -> Self {
        let tol = T::of(STABILITY_TOL);
        if upper <= tol {
            Stability::Inactive
        } else if lower >= -tol {
            Stability::Active
        } else {
            Stability::Unstable
        }
    }
}

/// `lower_slope * z + lower_intercept <= relu(z) <= upper_slope * z + upper_intercept`
/// on the interval the relaxation was built for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluRelaxation<T> {
    pub upper_slope: T,
    pub upper_intercept: T,
    pub lower_slope: T,
    pub lower_intercept: T,
}

impl<T: Scalar> ReluRelaxation<T> {
    pub fn upper(&self, z: T) -> T {
        self.upper_slope * z + self.upper_intercept
    }

    pub fn lower(&self, z: T) -> T {
        self.lower_slope * z + self.lower_intercept
    }
}

pub fn relax_relu<T: Scalar>(lower: T, upper: T, policy: SlopePolicy) -> Result<ReluRelaxation<T>> {
    if !(lower <= upper) {
        return Err(Error::InvalidArgument(format!(
            "relaxation interval is inverted: [{lower}, {upper}]"
        )));
    }
    let (zero, one) = (T::zero(), T::one());
    Ok(match Stability::classify(lower, upper) {
        Stability::Inactive => ReluRelaxation {
            upper_slope: zero,
            upper_intercept: zero,
            lower_slope: zero,
            lower_intercept: zero,
        },
        Stability::Active => ReluRelaxation {
            upper_slope: one,
            upper_intercept: zero,
            lower_slope: one,
            lower_intercept: zero,
        },
        Stability::Unstable => {
            let slope = upper / (upper - lower);
            let lower_slope = match policy {
                SlopePolicy::FastLin => slope,
                SlopePolicy::CrownAdaptive => {
                    if upper >= -lower {
                        one
                    } else {
                        zero
                    }
                }
                SlopePolicy::Zero => zero,
            };
            ReluRelaxation {
                upper_slope: slope,
                upper_intercept: -slope * lower,
                lower_slope,
                lower_intercept: zero,
            }
        }
    })
}

/// Relaxations of a whole layer, stored column-wise.
#[derive(Clone, Debug)]
pub struct LayerRelaxation<T> {
    pub upper_slope: Array1<T>,
    pub upper_intercept: Array1<T>,
    pub lower_slope: Array1<T>,
    pub lower_intercept: Array1<T>,
}

impl<T: Scalar> LayerRelaxation<T> {
    pub fn new(bounds: &LayerBounds<T>, policy: SlopePolicy) -> Result<Self> {
        let n = bounds.len();
        let mut out = Self {
            upper_slope: Array1::zeros(n),
            upper_intercept: Array1::zeros(n),
            lower_slope: Array1::zeros(n),
            lower_intercept: Array1::zeros(n),
        };
        for j in 0..n {
            let r = relax_relu(bounds.lower[j], bounds.upper[j], policy)?;
            out.upper_slope[j] = r.upper_slope;
            out.upper_intercept[j] = r.upper_intercept;
            out.lower_slope[j] = r.lower_slope;
            out.lower_intercept[j] = r.lower_intercept;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.upper_slope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper_slope.is_empty()
    }

    pub fn neuron(&self, j: usize) -> ReluRelaxation<T> {
        ReluRelaxation {
            upper_slope: self.upper_slope[j],
            upper_intercept: self.upper_intercept[j],
            lower_slope: self.lower_slope[j],
            lower_intercept: self.lower_intercept[j],
        }
    }
}
