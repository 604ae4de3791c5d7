//! The triangle relaxation of a ReLU network as an explicit LP.
//!
//! Variables are laid out as `x(0), z(0), x(1), z(1), ..., x(depth)`. Affine
//! layers are equalities, stable neurons use their exact linear piece, and
//! unstable neurons get the three triangle inequalities.

use std::ops::Range;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use crate::bounds::{check_bounds, first_layer_bounds, LayerBounds, Stability};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSession, Sense, SolverConfig};
use crate::network::{InputRegion, Network, Specification};
use crate::scalar::Scalar;

/// How an unstable neuron enters the LP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronPhase {
    /// Triangle relaxation.
    Relaxed,
    /// Fixed to the identity piece with `z >= 0`.
    Active,
    /// Fixed to zero with `z <= 0`.
    Inactive,
}

/// A relaxed LP together with the variable ranges of each layer.
#[derive(Clone, Debug)]
pub struct RelaxedLp<T> {
    pub lp: LinearProgram<T>,
    /// `post[l]` holds `x(l)` for `l = 0 ..= depth`.
    pub post: Vec<Range<usize>>,
    /// `pre[l]` holds `z(l)` for `l < depth`.
    pub pre: Vec<Range<usize>>,
}

impl<T: Scalar> RelaxedLp<T> {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    /// Full-length objective for `c . x(depth)`.
    pub fn objective_on_last(&self, c: ArrayView1<'_, T>) -> Array1<T> {
        let range = self.post[self.depth()].clone();
        assert_eq!(c.len(), range.len(), "objective width");
        let mut obj = Array1::zeros(self.lp.num_vars());
        for (k, j) in range.enumerate() {
            obj[j] = c[k];
        }
        obj
    }
}

/// Constraints of the relaxation up to `x(depth)`, with a zero objective.
///
/// `phases`, when given, fixes unstable neurons of layer `l` to a linear piece;
/// it is ignored for stable neurons.
pub fn build_relaxed_lp_at<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    depth: usize,
    phases: Option<&[Vec<NeuronPhase>]>,
) -> Result<RelaxedLp<T>> {
    if depth > net.hidden_depth() {
        return Err(Error::InvalidArgument(format!("depth {depth} is past the last hidden layer")));
    }
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    check_bounds(net, bounds, depth)?;
    if let Some(p) = phases {
        if p.len() < depth {
            return Err(Error::dim("neuron phases", depth, p.len()));
        }
        for l in 0..depth {
            if p[l].len() != bounds[l].len() {
                return Err(Error::dim(format!("neuron phases of layer {l}"), bounds[l].len(), p[l].len()));
            }
        }
    }

    let n0 = net.input_dim();
    let mut post = vec![0..n0];
    let mut pre = Vec::with_capacity(depth);
    let mut next = n0;
    for l in 0..depth {
        let w = net.layer(l).output_dim();
        pre.push(next..next + w);
        post.push(next + w..next + 2 * w);
        next += 2 * w;
    }

    let mut lp = LinearProgram::new(next);
    for (k, j) in post[0].clone().enumerate() {
        lp.set_bounds(j, region.lower()[k], region.upper()[k]);
        lp.set_name(j, format!("x0_{k}"));
    }
    for l in 0..depth {
        let layer = net.layer(l);
        let b = &bounds[l];
        for k in 0..layer.output_dim() {
            let zj = pre[l].start + k;
            let xj = post[l + 1].start + k;
            lp.set_name(zj, format!("z{l}_{k}"));
            lp.set_name(xj, format!("x{}_{k}", l + 1));

            let mut coeffs: Vec<(usize, T)> = Vec::with_capacity(layer.input_dim() + 1);
            coeffs.push((zj, T::one()));
            for (i, src) in post[l].clone().enumerate() {
                let w = layer.weights()[[k, i]];
                if w != T::zero() {
                    coeffs.push((src, -w));
                }
            }
            lp.add_equality(coeffs, layer.bias()[k]);

            let (lo, hi) = (b.lower[k], b.upper[k]);
            let phase = match b.stability(k) {
                Stability::Active => NeuronPhase::Active,
                Stability::Inactive => NeuronPhase::Inactive,
                Stability::Unstable => phases.map_or(NeuronPhase::Relaxed, |p| p[l][k]),
            };
            match phase {
                NeuronPhase::Active => {
                    let zlo = if b.stability(k) == Stability::Unstable { T::zero() } else { lo };
                    lp.set_bounds(zj, zlo, hi);
                    lp.add_equality(vec![(xj, T::one()), (zj, -T::one())], T::zero());
                }
                NeuronPhase::Inactive => {
                    let zhi = if b.stability(k) == Stability::Unstable { T::zero() } else { hi };
                    lp.set_bounds(zj, lo, zhi);
                    lp.add_equality(vec![(xj, T::one())], T::zero());
                }
                NeuronPhase::Relaxed => {
                    let slope = hi / (hi - lo);
                    lp.set_bounds(zj, lo, hi);
                    lp.set_bounds(xj, T::zero(), hi);
                    lp.add_inequality(vec![(xj, T::one())], Sense::Ge, T::zero());
                    lp.add_inequality(vec![(xj, T::one()), (zj, -T::one())], Sense::Ge, T::zero());
                    lp.add_inequality(vec![(xj, T::one()), (zj, -slope)], Sense::Le, -slope * lo);
                }
            }
        }
    }
    Ok(RelaxedLp { lp, post, pre })
}

/// Relaxed LP of a specification over `x(L)`, objective included.
pub fn build_relaxed_lp<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    spec: &Specification<T>,
) -> Result<RelaxedLp<T>> {
    spec.check(net)?;
    let mut rl = build_relaxed_lp_at(net, region, bounds, net.hidden_depth(), None)?;
    let obj = rl.objective_on_last(spec.c.view());
    rl.lp.set_objective(obj, spec.c0);
    Ok(rl)
}

/// Preactivation bounds from solving the relaxed LP for every neuron, layer
/// by layer, each layer using the LP bounds of the layers before it.
pub fn lp_all_bounds<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    config: &SolverConfig,
) -> Result<Vec<LayerBounds<T>>> {
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    let depth = net.hidden_depth();
    let mut out = Vec::with_capacity(depth);
    if depth == 0 {
        return Ok(out);
    }
    out.push(first_layer_bounds(net, region));
    for l0 in 1..depth {
        let rl = build_relaxed_lp_at(net, region, &out, l0, None)?;
        let session = LpSession::new(&rl.lp, config);
        let layer = net.layer(l0);
        let pairs = (0..layer.output_dim())
            .into_par_iter()
            .map(|j| {
                let row = layer.weights().row(j);
                let bias = layer.bias()[j];
                let solve = |sign: T, sense: &'static str| -> Result<T> {
                    let c = row.mapv(|v| v * sign);
                    let sol = session.solve(rl.objective_on_last(c.view()).view(), bias * sign);
                    if !sol.is_optimal() {
                        return Err(Error::NeuronLp {
                            layer: l0,
                            neuron: j,
                            sense,
                            status: sol.status,
                        });
                    }
                    Ok(sol.lower_bound())
                };
                let lo = solve(T::one(), "min")?;
                let hi = -solve(-T::one(), "max")?;
                // both ends can cross by rounding on zero-width intervals
                Ok(if lo <= hi { (lo, hi) } else { (hi, lo) })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LayerBounds {
            lower: pairs.iter().map(|p| p.0).collect(),
            upper: pairs.iter().map(|p| p.1).collect(),
        });
    }
    Ok(out)
}

/// LP lower bound of one specification given preactivation bounds.
pub fn lp_last_bound<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    spec: &Specification<T>,
    bounds: &[LayerBounds<T>],
    config: &SolverConfig,
) -> Result<T> {
    let rl = build_relaxed_lp(net, region, bounds, spec)?;
    let sol = crate::lp::solve(&rl.lp, config);
    if !sol.is_optimal() {
        return Err(Error::Lp(sol.status));
    }
    Ok(sol.lower_bound())
}

/// Result of checking every margin of a label with the relaxed LP.
#[derive(Clone, Debug, PartialEq)]
pub struct LpVerdict<T> {
    /// Every margin lower bound is positive.
    pub certified: bool,
    /// `(other class, lower bound of logit(label) - logit(other))`.
    pub margins: Vec<(usize, T)>,
}

impl<T: Scalar> LpVerdict<T> {
    pub fn min_margin(&self) -> T {
        self.margins.iter().fold(T::infinity(), |m, &(_, v)| m.min(v))
    }
}

/// Solves the relaxed LP of every margin specification of `label`.
pub fn lp_verify<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    bounds: &[LayerBounds<T>],
    config: &SolverConfig,
) -> Result<LpVerdict<T>> {
    let specs = net.margin_specs(label)?;
    let rl = build_relaxed_lp_at(net, region, bounds, net.hidden_depth(), None)?;
    let session = LpSession::new(&rl.lp, config);
    let depth = net.hidden_depth();
    let margins = specs
        .par_iter()
        .map(|(j, spec)| {
            let sol = session.solve(rl.objective_on_last(spec.c.view()).view(), spec.c0);
            if !sol.is_optimal() {
                return Err(Error::NeuronLp {
                    layer: depth,
                    neuron: *j,
                    sense: "margin",
                    status: sol.status,
                });
            }
            Ok((*j, sol.lower_bound()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LpVerdict {
        certified: margins.iter().all(|&(_, v)| v > T::zero()),
        margins,
    })
}
