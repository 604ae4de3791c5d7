//! Greedy solution of the Lagrangian dual with linear ReLU envelopes.
//!
//! Dual variables follow the backward recursion
//!
//! ```text
//! lambda(l0-1) = -c
//! mu(l)        = upper_slope * (lambda(l))_+ + lower_slope * (lambda(l))_-
//! lambda(l-1)  = W(l)^T mu(l)
//! ```
//!
//! and the bound is
//! `c0 + min_x (-W(0)^T mu(0)) . x + sum_l (-upper_intercept . lambda_+ - lower_intercept . lambda_- - b(l) . mu(l))`.

use ndarray::{Array1, ArrayView1};

use crate::bounds::{check_bounds, LayerBounds, LayerRelaxation, SlopePolicy, Stability};
use crate::error::{Error, Result};
use crate::network::{InputRegion, Network, Specification};
use crate::scalar::{neg, pos, Scalar};

/// Multipliers of the affine constraints (`mu`) and of the ReLU envelopes
/// (`lambda`), indexed by preactivation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVariables<T> {
    pub mu: Vec<Array1<T>>,
    pub lambda: Vec<Array1<T>>,
}

/// Greedy dual lower bound of `c . x(l0) + c0`, with the dual variables used.
pub fn greedy_dual<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    policy: SlopePolicy,
    l0: usize,
    c: ArrayView1<'_, T>,
    c0: T,
) -> Result<(T, DualVariables<T>)> {
    check_target(net, region, bounds, l0, c)?;
    if l0 == 0 {
        let dual = DualVariables {
            mu: Vec::new(),
            lambda: Vec::new(),
        };
        return Ok((c0 + region.min_linear(c), dual));
    }

    let mut mu = vec![Array1::zeros(0); l0];
    let mut lambdas = vec![Array1::zeros(0); l0];
    let mut value = c0;
    let mut lambda = c.mapv(|v| -v);
    for l in (0..l0).rev() {
        let relax = LayerRelaxation::new(&bounds[l], policy)?;
        let lp = lambda.mapv(pos);
        let ln = lambda.mapv(neg);
        let m = &relax.upper_slope * &lp + &relax.lower_slope * &ln;
        let layer = net.layer(l);
        value -= relax.upper_intercept.dot(&lp) + relax.lower_intercept.dot(&ln) + layer.bias().dot(&m);
        let next = layer.weights().t().dot(&m);
        mu[l] = m;
        lambdas[l] = lambda;
        lambda = next;
    }
    // lambda now holds W(0)^T mu(0)
    value += region.min_linear(lambda.mapv(|v| -v).view());
    Ok((value, DualVariables { mu, lambda: lambdas }))
}

/// Greedy dual lower bound of a margin specification over `x(L)`.
pub fn greedy_dual_bound<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    spec: &Specification<T>,
    bounds: &[LayerBounds<T>],
    policy: SlopePolicy,
) -> Result<T> {
    spec.check(net)?;
    Ok(greedy_dual(net, region, bounds, policy, net.hidden_depth(), spec.c.view(), spec.c0)?.0)
}

/// Lagrangian dual function of the triangle relaxation evaluated at `mu`.
///
/// `lambda` is eliminated through the recursion above, every preactivation is
/// minimized exactly over its box, and stable neurons use their exact linear
/// piece. Any `mu` gives a lower bound on the relaxed optimum.
pub fn triangle_dual_value<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    l0: usize,
    c: ArrayView1<'_, T>,
    c0: T,
    mu: &[Array1<T>],
) -> Result<T> {
    check_target(net, region, bounds, l0, c)?;
    if mu.len() != l0 {
        return Err(Error::dim("dual variables", l0, mu.len()));
    }
    if l0 == 0 {
        return Ok(c0 + region.min_linear(c));
    }
    let mut value = c0;
    let mut lambda = c.mapv(|v| -v);
    for l in (0..l0).rev() {
        let layer = net.layer(l);
        let m = &mu[l];
        if m.len() != layer.output_dim() {
            return Err(Error::dim(format!("mu({l})"), layer.output_dim(), m.len()));
        }
        let b = &bounds[l];
        for j in 0..m.len() {
            value += neuron_dual_min(m[j], lambda[j], b.lower[j], b.upper[j]);
        }
        value -= layer.bias().dot(m);
        lambda = layer.weights().t().dot(m);
    }
    value += region.min_linear(lambda.mapv(|v| -v).view());
    Ok(value)
}

/// `min over z in [l, u] of mu z - lambda_- relu_lower(z) - lambda_+ relu_upper(z)`.
fn neuron_dual_min<T: Scalar>(mu: T, lambda: T, l: T, u: T) -> T {
    let (lp, ln) = (pos(lambda), neg(lambda));
    let phi = |z: T| -> T {
        match Stability::classify(l, u) {
            Stability::Inactive => mu * z,
            Stability::Active => mu * z - lambda * z,
            Stability::Unstable => {
                let slope = u / (u - l);
                mu * z - ln * z.max(T::zero()) - lp * slope * (z - l)
            }
        }
    };
    let mut best = phi(l).min(phi(u));
    if l < T::zero() && u > T::zero() {
        best = best.min(phi(T::zero()));
    }
    best
}

fn check_target<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    l0: usize,
    c: ArrayView1<'_, T>,
) -> Result<()> {
    if l0 > net.hidden_depth() {
        return Err(Error::InvalidArgument(format!("target layer {l0} is past the last hidden layer")));
    }
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    let width = net.layer(l0).input_dim();
    if c.len() != width {
        return Err(Error::dim(format!("objective over x({l0})"), width, c.len()));
    }
    check_bounds(net, bounds, l0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{greedy_primal_bound, interval_bounds, propagate_bounds, BoundMethod};
    use crate::network::AffineLayer;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn abs_net() -> Network<f64> {
        Network::new(vec![
            AffineLayer::new(array![[1.0], [-1.0]], array![0.0, 0.0]).unwrap(),
            AffineLayer::new(array![[1.0, 1.0]], array![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn abs_example_dual_variables() {
        let net = abs_net();
        let region = InputRegion::ball(array![0.0], 1.0).unwrap();
        let bounds = interval_bounds(&net, &region);
        let (value, dual) =
            greedy_dual(&net, &region, &bounds, SlopePolicy::FastLin, 1, array![1.0, 1.0].view(), 0.0).unwrap();
        assert_eq!(dual.lambda[0], array![-1.0, -1.0]);
        assert_eq!(dual.mu[0], array![-0.5, -0.5]);
        assert_eq!(net.layer(0).weights().t().dot(&dual.mu[0]), array![0.0]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn zero_objective_returns_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::random(&[3, 4, 4, 2], &mut rng).unwrap();
        let region = InputRegion::ball(array![0.1, 0.2, 0.3], 0.5).unwrap();
        let bounds = interval_bounds(&net, &region);
        let spec = Specification::new(Array1::zeros(4), 7.0);
        assert_eq!(greedy_dual_bound(&net, &region, &spec, &bounds, SlopePolicy::CrownAdaptive).unwrap(), 7.0);
    }

    #[test]
    fn matches_greedy_primal_for_every_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let net = Network::<f64>::random(&[3, 8, 8, 2], &mut rng).unwrap();
            let region = InputRegion::ball(Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0)), 0.3).unwrap();
            for policy in [SlopePolicy::FastLin, SlopePolicy::CrownAdaptive, SlopePolicy::Zero] {
                let bounds = propagate_bounds(&net, &region, &BoundMethod::GreedyPrimal(policy)).unwrap();
                let spec = net.margin_spec(0, 1).unwrap();
                let d = greedy_dual_bound(&net, &region, &spec, &bounds, policy).unwrap();
                let (p, _) = greedy_primal_bound(&net, &region, 2, spec.c.view(), spec.c0, &bounds, policy).unwrap();
                assert!((d - p).abs() <= 1e-8, "{policy:?}: {d} vs {p}");
            }
        }
    }

    #[test]
    fn exact_inner_minimization_dominates_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f64>::random(&[2, 6, 6, 3], &mut rng).unwrap();
        let region = InputRegion::ball(array![0.3, -0.3], 0.4).unwrap();
        let bounds = propagate_bounds(&net, &region, &BoundMethod::GreedyDual(SlopePolicy::FastLin)).unwrap();
        let spec = net.margin_spec(2, 0).unwrap();
        let (g, dual) =
            greedy_dual(&net, &region, &bounds, SlopePolicy::FastLin, 2, spec.c.view(), spec.c0).unwrap();
        let t = triangle_dual_value(&net, &region, &bounds, 2, spec.c.view(), spec.c0, &dual.mu).unwrap();
        assert!(t >= g - 1e-12);
        // any dual point is below sampled objective values
        for _ in 0..20 {
            let mu: Vec<Array1<f64>> =
                (0..2).map(|l| Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0)) * (l + 1) as f64).collect();
            let v = triangle_dual_value(&net, &region, &bounds, 2, spec.c.view(), spec.c0, &mu).unwrap();
            for _ in 0..50 {
                let obj = spec.eval_network(&net, region.sample(&mut rng).view()).unwrap();
                assert!(v <= obj + 1e-12);
            }
        }
    }
}
