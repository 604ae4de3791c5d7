use ndarray::Array1;

use crate::bounds::{first_layer_bounds, LayerBounds};
use crate::network::{relu, InputRegion, Network};
use crate::scalar::Scalar;

/// Interval arithmetic through every affine layer and ReLU, in center/radius form.
pub fn interval_bounds<T: Scalar>(net: &Network<T>, region: &InputRegion<T>) -> Vec<LayerBounds<T>> {
    let depth = net.hidden_depth();
    let mut out = Vec::with_capacity(depth);
    if depth == 0 {
        return out;
    }
    out.push(first_layer_bounds(net, region));
    let half = T::of(0.5);
    for l in 1..depth {
        let prev = &out[l - 1];
        let lo = prev.lower.mapv(relu);
        let hi = prev.upper.mapv(relu);
        let mid: Array1<T> = (&lo + &hi) * half;
        let rad: Array1<T> = (&hi - &lo) * half;
        let layer = net.layer(l);
        let center = layer.weights().dot(&mid) + layer.bias();
        let spread = layer.weights().mapv(T::abs).dot(&rad);
        out.push(LayerBounds {
            lower: &center - &spread,
            upper: &center + &spread,
        });
    }
    out
}
