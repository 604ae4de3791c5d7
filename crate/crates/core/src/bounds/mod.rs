//! Preactivation bounds and the greedy linear bound algorithms.

mod dual;
mod greedy;
mod interval;
mod relax;

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, SolverConfig};
use crate::network::{InputRegion, Network};
use crate::scalar::Scalar;

pub use dual::{greedy_dual, greedy_dual_bound, triangle_dual_value, DualVariables};
pub use greedy::{backward_bound, greedy_primal_bound, greedy_primal_layer, BackwardBound};
pub use interval::interval_bounds;
pub use relax::{relax_relu, LayerRelaxation, ReluRelaxation, SlopePolicy, Stability, STABILITY_TOL};

/// Interval `[lower, upper]` for every preactivation of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBounds<T> {
    pub lower: Array1<T>,
    pub upper: Array1<T>,
}

impl<T: Scalar> LayerBounds<T> {
    pub fn new(lower: Array1<T>, upper: Array1<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("layer bounds", lower.len(), upper.len()));
        }
        for j in 0..lower.len() {
            if !(lower[j] <= upper[j]) {
                return Err(Error::InvertedBounds {
                    layer: usize::MAX,
                    neuron: j,
                    lower: lower[j].to_f64_lossy(),
                    upper: upper[j].to_f64_lossy(),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn point(values: Array1<T>) -> Self {
        Self {
            lower: values.clone(),
            upper: values,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, z: ArrayView1<'_, T>, tol: T) -> bool {
        z.len() == self.len()
            && z.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    /// Whether `self` lies inside `other` up to `tol`.
    pub fn within(&self, other: &LayerBounds<T>, tol: T) -> bool {
        self.len() == other.len()
            && (0..self.len())
                .all(|j| self.lower[j] >= other.lower[j] - tol && self.upper[j] <= other.upper[j] + tol)
    }

    pub fn stability(&self, j: usize) -> Stability {
        Stability::classify(self.lower[j], self.upper[j])
    }

    pub fn unstable_count(&self) -> usize {
        (0..self.len()).filter(|&j| self.stability(j) == Stability::Unstable).count()
    }
}

/// Unstable neurons summed over all layers.
pub fn unstable_count<T: Scalar>(bounds: &[LayerBounds<T>]) -> usize {
    bounds.iter().map(LayerBounds::unstable_count).sum()
}

/// Checks that `bounds` covers the preactivations `z(0) .. z(depth-1)`.
pub(crate) fn check_bounds<T: Scalar>(net: &Network<T>, bounds: &[LayerBounds<T>], depth: usize) -> Result<()> {
    if bounds.len() < depth {
        return Err(Error::MissingBounds(bounds.len()));
    }
    for (l, b) in bounds.iter().take(depth).enumerate() {
        let width = net.layer(l).output_dim();
        if b.len() != width {
            return Err(Error::dim(format!("bounds of layer {l}"), width, b.len()));
        }
        for j in 0..b.len() {
            if !(b.lower[j] <= b.upper[j]) {
                return Err(Error::InvertedBounds {
                    layer: l,
                    neuron: j,
                    lower: b.lower[j].to_f64_lossy(),
                    upper: b.upper[j].to_f64_lossy(),
                });
            }
        }
    }
    Ok(())
}

/// Bounds on the first preactivation layer, exact for every method.
pub(crate) fn first_layer_bounds<T: Scalar>(net: &Network<T>, region: &InputRegion<T>) -> LayerBounds<T> {
    let layer = net.layer(0);
    let w = layer.weights();
    let lower = Array1::from_shape_fn(w.nrows(), |j| region.min_linear(w.row(j)) + layer.bias()[j]);
    let upper = Array1::from_shape_fn(w.nrows(), |j| region.max_linear(w.row(j)) + layer.bias()[j]);
    LayerBounds { lower, upper }
}

/// How preactivation bounds of each layer are obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundMethod {
    Interval,
    GreedyPrimal(SlopePolicy),
    GreedyDual(SlopePolicy),
    LpExact(SolverConfig),
}

/// Bounds for `z(0) .. z(L-1)`, computed layer by layer in index order; each
/// layer only sees the bounds already computed for earlier layers.
pub fn propagate_bounds<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    method: &BoundMethod,
) -> Result<Vec<LayerBounds<T>>> {
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    let depth = net.hidden_depth();
    match method {
        BoundMethod::Interval => Ok(interval_bounds(net, region)),
        BoundMethod::LpExact(config) => lp::lp_all_bounds(net, region, config),
        BoundMethod::GreedyPrimal(policy) => {
            let mut out = Vec::with_capacity(depth);
            for l0 in 0..depth {
                let next = if l0 == 0 {
                    first_layer_bounds(net, region)
                } else {
                    let layer = net.layer(l0);
                    let (lower, upper) =
                        greedy_primal_layer(net, region, &out, *policy, l0, layer.weights().view(), layer.bias().view())?;
                    LayerBounds { lower, upper }
                };
                out.push(next);
            }
            Ok(out)
        }
        BoundMethod::GreedyDual(policy) => {
            let mut out: Vec<LayerBounds<T>> = Vec::with_capacity(depth);
            for l0 in 0..depth {
                let next = if l0 == 0 {
                    first_layer_bounds(net, region)
                } else {
                    let layer = net.layer(l0);
                    let pairs = (0..layer.output_dim())
                        .into_par_iter()
                        .map(|j| {
                            let c = layer.weights().row(j).to_owned();
                            let b = layer.bias()[j];
                            let lo = greedy_dual(net, region, &out, *policy, l0, c.view(), b)?.0;
                            let neg = c.mapv(|v| -v);
                            let hi = -greedy_dual(net, region, &out, *policy, l0, neg.view(), -b)?.0;
                            Ok((lo, hi))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    LayerBounds {
                        lower: pairs.iter().map(|p| p.0).collect(),
                        upper: pairs.iter().map(|p| p.1).collect(),
                    }
                };
                out.push(next);
            }
            Ok(out)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BoundsRecord {
    layer: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// JSON array of `{layer, lower, upper}` objects.
pub fn bounds_to_json<T: Scalar>(bounds: &[LayerBounds<T>]) -> String {
    let records: Vec<BoundsRecord> = bounds
        .iter()
        .enumerate()
        .map(|(layer, b)| BoundsRecord {
            layer,
            lower: b.lower.iter().map(|v| v.to_f64_lossy()).collect(),
            upper: b.upper.iter().map(|v| v.to_f64_lossy()).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("bounds serialize")
}

pub fn bounds_from_json(text: &str) -> Result<Vec<LayerBounds<f64>>> {
    let mut records: Vec<BoundsRecord> = serde_json::from_str(text)?;
    records.sort_by_key(|r| r.layer);
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.layer != i {
                return Err(Error::InvalidArgument(format!("bounds dump is missing layer {i}")));
            }
            LayerBounds::new(Array1::from(r.lower), Array1::from(r.upper))
        })
        .collect()
}

pub fn write_bounds<T: Scalar>(bounds: &[LayerBounds<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bounds_to_json(bounds).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::AffineLayer;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn methods() -> Vec<BoundMethod> {
        vec![
            BoundMethod::Interval,
            BoundMethod::GreedyPrimal(SlopePolicy::FastLin),
            BoundMethod::GreedyPrimal(SlopePolicy::CrownAdaptive),
            BoundMethod::GreedyDual(SlopePolicy::FastLin),
            BoundMethod::GreedyDual(SlopePolicy::Zero),
            BoundMethod::LpExact(SolverConfig::default()),
        ]
    }

    #[test]
    fn depth_one_methods_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::random(&[3, 5, 2], &mut rng).unwrap();
        let region = InputRegion::ball(array![0.1, -0.3, 0.2], 0.4).unwrap();
        let reference = propagate_bounds(&net, &region, &BoundMethod::Interval).unwrap();
        for m in methods() {
            let b = propagate_bounds(&net, &region, &m).unwrap();
            assert_eq!(b.len(), 1);
            assert!(b[0].within(&reference[0], 1e-12) && reference[0].within(&b[0], 1e-12), "{m:?}");
        }
    }

    #[test]
    fn zero_radius_collapses_to_forward_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::<f64>::random(&[3, 6, 6, 2], &mut rng).unwrap();
        let x = array![0.3, 0.1, -0.7];
        let trace = net.forward_trace(x.view()).unwrap();
        let region = InputRegion::ball(x, 0.0).unwrap();
        for m in methods() {
            let b = propagate_bounds(&net, &region, &m).unwrap();
            for (l, lb) in b.iter().enumerate() {
                for j in 0..lb.len() {
                    assert!((lb.lower[j] - trace.pre[l][j]).abs() < 1e-9, "{m:?}");
                    assert!((lb.upper[j] - trace.pre[l][j]).abs() < 1e-9, "{m:?}");
                }
            }
        }
    }

    #[test]
    fn every_method_contains_sampled_preactivations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f64>::random(&[2, 6, 6, 2], &mut rng).unwrap();
        let region = InputRegion::ball(array![0.2, -0.1], 0.3).unwrap();
        let all: Vec<_> = methods().iter().map(|m| propagate_bounds(&net, &region, m).unwrap()).collect();
        for _ in 0..2000 {
            let x = region.sample(&mut rng);
            let trace = net.forward_trace(x.view()).unwrap();
            for b in &all {
                for (l, lb) in b.iter().enumerate() {
                    assert!(lb.contains(trace.pre[l].view(), 1e-9));
                }
            }
        }
        // the exact LP bounds sit inside every other method's bounds
        let lp = all.last().unwrap();
        for b in &all {
            for (l, lb) in lp.iter().enumerate() {
                assert!(lb.within(&b[l], 1e-7));
            }
        }
    }

    #[test]
    fn shrinking_radius_never_loosens() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let net = Network::<f64>::random(&[3, 6, 5, 2], &mut rng).unwrap();
            let center = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let eps = rng.random_range(0.05..0.5);
            let wide = InputRegion::ball(center.clone(), eps).unwrap();
            let narrow = InputRegion::ball(center, eps * rng.random_range(0.2..0.95)).unwrap();
            for m in [BoundMethod::Interval, BoundMethod::LpExact(SolverConfig::default())] {
                let bw = propagate_bounds(&net, &wide, &m).unwrap();
                let bn = propagate_bounds(&net, &narrow, &m).unwrap();
                for l in 0..bw.len() {
                    assert!(bn[l].within(&bw[l], 1e-7), "{m:?}");
                }
            }
        }
    }

    #[test]
    fn bounds_json_round_trip() {
        let b = vec![
            LayerBounds::new(array![-1.0, 0.5], array![1.0, 2.0]).unwrap(),
            LayerBounds::new(array![-0.25], array![3.0]).unwrap(),
        ];
        assert_eq!(bounds_from_json(&bounds_to_json(&b)).unwrap(), b);
    }

    #[test]
    fn missing_bounds_are_reported() {
        let net = Network::new(vec![
            AffineLayer::new(array![[1.0], [-1.0]], array![0.0, 0.0]).unwrap(),
            AffineLayer::new(array![[1.0, 1.0]], array![0.0]).unwrap(),
        ])
        .unwrap();
        let region = InputRegion::ball(array![0.0], 1.0).unwrap();
        let spec = crate::network::Specification::new(array![1.0, 1.0], 0.0);
        assert!(matches!(
            greedy_dual_bound(&net, &region, &spec, &[], SlopePolicy::FastLin),
            Err(Error::MissingBounds(0))
        ));
    }
}
