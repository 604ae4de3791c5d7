//! Greedy backward substitution of linear ReLU envelopes.
//!
//! Starting from an objective `C x(l0) + c0`, each ReLU layer is replaced by
//! its lower or upper envelope depending on the sign of the coefficient in
//! front of it, and each affine layer is substituted exactly. The result is a
//! pair of linear functions of an earlier activation (ultimately the input)
//! that sandwich the objective over the region.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::bounds::{check_bounds, LayerBounds, LayerRelaxation, SlopePolicy};
use crate::error::{Error, Result};
use crate::network::{InputRegion, Network};
use crate::scalar::Scalar;

/// `a_lower x(depth) + b_lower <= target <= a_upper x(depth) + b_upper`,
/// one row per target.
#[derive(Clone, Debug)]
pub struct BackwardBound<T> {
    pub depth: usize,
    pub a_lower: Array2<T>,
    pub a_upper: Array2<T>,
    pub b_lower: Array1<T>,
    pub b_upper: Array1<T>,
}

impl<T: Scalar> BackwardBound<T> {
    /// Concretize over the input region; only valid at depth 0.
    pub fn concretize(&self, region: &InputRegion<T>) -> (Array1<T>, Array1<T>) {
        assert_eq!(self.depth, 0, "concretization needs bounds in terms of the input");
        let k = self.b_lower.len();
        let lower = Array1::from_shape_fn(k, |i| region.min_linear(self.a_lower.row(i)) + self.b_lower[i]);
        let upper = Array1::from_shape_fn(k, |i| region.max_linear(self.a_upper.row(i)) + self.b_upper[i]);
        (lower, upper)
    }
}

/// Substitutes envelopes from `x(l0)` back to `x(depth)`.
///
/// `bounds` must cover `z(depth) .. z(l0-1)`.
pub fn backward_bound<T: Scalar>(
    net: &Network<T>,
    bounds: &[LayerBounds<T>],
    policy: SlopePolicy,
    l0: usize,
    c: ArrayView2<'_, T>,
    c0: ArrayView1<'_, T>,
    depth: usize,
) -> Result<BackwardBound<T>> {
    if l0 > net.hidden_depth() || depth > l0 {
        return Err(Error::InvalidArgument(format!(
            "backward substitution from layer {l0} to {depth} is out of range"
        )));
    }
    check_bounds(net, bounds, l0)?;
    let width = net.layer(l0).input_dim();
    if c.ncols() != width {
        return Err(Error::dim(format!("objective over x({l0})"), width, c.ncols()));
    }
    if c0.len() != c.nrows() {
        return Err(Error::dim("objective offsets", c.nrows(), c0.len()));
    }

    let mut a_lower = c.to_owned();
    let mut a_upper = c.to_owned();
    let mut b_lower = c0.to_owned();
    let mut b_upper = c0.to_owned();
    for l in (depth..l0).rev() {
        let relax = LayerRelaxation::new(&bounds[l], policy)?;
        substitute_relu(&mut a_lower, &mut b_lower, &relax, true);
        substitute_relu(&mut a_upper, &mut b_upper, &relax, false);
        let layer = net.layer(l);
        b_lower += &a_lower.dot(layer.bias());
        b_upper += &a_upper.dot(layer.bias());
        a_lower = a_lower.dot(layer.weights());
        a_upper = a_upper.dot(layer.weights());
    }
    Ok(BackwardBound {
        depth,
        a_lower,
        a_upper,
        b_lower,
        b_upper,
    })
}

/// Replaces `a . relu(z)` by the envelope that bounds it from below
/// (`lower == true`) or above.
fn substitute_relu<T: Scalar>(a: &mut Array2<T>, b: &mut Array1<T>, relax: &LayerRelaxation<T>, lower: bool) {
    for (mut row, bi) in a.rows_mut().into_iter().zip(b.iter_mut()) {
        for (j, coef) in row.iter_mut().enumerate() {
            let use_lower = (*coef >= T::zero()) == lower;
            let (slope, intercept) = if use_lower {
                (relax.lower_slope[j], relax.lower_intercept[j])
            } else {
                (relax.upper_slope[j], relax.upper_intercept[j])
            };
            *bi += *coef * intercept;
            *coef *= slope;
        }
    }
}

/// Lower and upper bounds of every row of `c x(l0) + c0` over the region.
pub fn greedy_primal_layer<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    policy: SlopePolicy,
    l0: usize,
    c: ArrayView2<'_, T>,
    c0: ArrayView1<'_, T>,
) -> Result<(Array1<T>, Array1<T>)> {
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    Ok(backward_bound(net, bounds, policy, l0, c, c0, 0)?.concretize(region))
}

/// Lower and upper bound of a single objective `c . x(l0) + c0`.
pub fn greedy_primal_bound<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    l0: usize,
    c: ArrayView1<'_, T>,
    c0: T,
    bounds: &[LayerBounds<T>],
    policy: SlopePolicy,
) -> Result<(T, T)> {
    let c = c.to_owned().insert_axis(ndarray::Axis(0));
    let (lo, hi) = greedy_primal_layer(net, region, bounds, policy, l0, c.view(), Array1::from_elem(1, c0).view())?;
    Ok((lo[0], hi[0]))
}
