//! Exact minimization over tiny networks by enumerating activation patterns of
//! the unstable neurons.
//!
//! Each pattern fixes every unstable ReLU to one linear piece, which makes the
//! problem an LP. Patterns are explored depth first; a partially fixed pattern
//! solves the triangle relaxation for the remaining neurons and is skipped
//! when that lower bound cannot beat the incumbent.

use ndarray::Array1;

use crate::bounds::{LayerBounds, Stability};
use crate::error::{Error, Result};
use crate::lp::{build_relaxed_lp_at, solve, LpStatus, NeuronPhase, SolverConfig};
use crate::network::{InputRegion, Network, Specification};
use crate::scalar::Scalar;

pub const DEFAULT_UNSTABLE_LIMIT: usize = 20;

/// Phase of every hidden neuron; stable neurons carry their fixed phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    pub phases: Vec<Vec<NeuronPhase>>,
}

impl ActivationPattern {
    /// Pattern of the forward pass at `x`; a zero preactivation counts as inactive.
    pub fn of_point<T: Scalar>(net: &Network<T>, x: ndarray::ArrayView1<'_, T>) -> Result<Self> {
        let trace = net.forward_trace(x)?;
        let phases = (0..net.hidden_depth())
            .map(|l| {
                trace.pre[l]
                    .iter()
                    .map(|&z| if z > T::zero() { NeuronPhase::Active } else { NeuronPhase::Inactive })
                    .collect()
            })
            .collect();
        Ok(Self { phases })
    }

    /// Whether `other` agrees on every neuron, letting preactivations within
    /// `tol` of zero match either phase.
    pub fn compatible_with<T: Scalar>(&self, net: &Network<T>, x: ndarray::ArrayView1<'_, T>, tol: T) -> Result<bool> {
        let trace = net.forward_trace(x)?;
        for (l, layer) in self.phases.iter().enumerate() {
            for (k, &p) in layer.iter().enumerate() {
                let z = trace.pre[l][k];
                let ok = match p {
                    NeuronPhase::Active => z >= -tol,
                    NeuronPhase::Inactive => z <= tol,
                    NeuronPhase::Relaxed => true,
                };
                if !ok {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct ExactMinimum<T> {
    pub value: T,
    pub argmin: Array1<T>,
    pub pattern: ActivationPattern,
    /// LPs solved during the search.
    pub lps_solved: usize,
}

/// Unstable neurons as `(layer, neuron)` in layer order.
pub fn unstable_neurons<T: Scalar>(bounds: &[LayerBounds<T>]) -> Vec<(usize, usize)> {
    bounds
        .iter()
        .enumerate()
        .flat_map(|(l, b)| (0..b.len()).filter(move |&k| b.stability(k) == Stability::Unstable).map(move |k| (l, k)))
        .collect()
}

struct Search<'a, T: Scalar> {
    net: &'a Network<T>,
    region: &'a InputRegion<T>,
    spec: &'a Specification<T>,
    bounds: &'a [LayerBounds<T>],
    config: SolverConfig,
    unstable: Vec<(usize, usize)>,
    best: ExactMinimum<T>,
}

impl<T: Scalar> Search<'_, T> {
    /// Solves the LP of a (partial) pattern: `None` if infeasible, else the
    /// optimum and the LP input point.
    fn node(&mut self, phases: &[Vec<NeuronPhase>]) -> Result<Option<(T, Array1<T>, Array1<T>)>> {
        let depth = self.net.hidden_depth();
        let mut rl = build_relaxed_lp_at(self.net, self.region, self.bounds, depth, Some(phases))?;
        let obj = rl.objective_on_last(self.spec.c.view());
        rl.lp.set_objective(obj, self.spec.c0);
        let sol = solve(&rl.lp, &self.config);
        self.best.lps_solved += 1;
        match sol.status {
            LpStatus::Optimal => {
                let x0 = sol.primal.slice(ndarray::s![rl.post[0].clone()]).to_owned();
                Ok(Some((sol.value, x0, sol.primal)))
            }
            LpStatus::Infeasible => Ok(None),
            other => Err(Error::Lp(other)),
        }
    }

    fn explore(&mut self, phases: &mut Vec<Vec<NeuronPhase>>, next: usize) -> Result<()> {
        let Some((value, x0, primal)) = self.node(phases)? else {
            return Ok(());
        };
        if next == self.unstable.len() {
            if value < self.best.value {
                let mut x = x0;
                self.region.project(&mut x);
                self.best.value = value;
                self.best.argmin = x;
                self.best.pattern = ActivationPattern { phases: phases.clone() };
            }
            return Ok(());
        }
        if value >= self.best.value - T::of(1e-9) {
            return Ok(());
        }
        let (l, k) = self.unstable[next];
        // try the piece the relaxed solution leans toward first
        let z_relaxed = {
            let rl_start = self.net.input_dim()
                + (0..l).map(|i| 2 * self.net.layer(i).output_dim()).sum::<usize>();
            primal[rl_start + k]
        };
        let order = if z_relaxed > T::zero() {
            [NeuronPhase::Active, NeuronPhase::Inactive]
        } else {
            [NeuronPhase::Inactive, NeuronPhase::Active]
        };
        for phase in order {
            phases[l][k] = phase;
            self.explore(phases, next + 1)?;
        }
        phases[l][k] = NeuronPhase::Relaxed;
        Ok(())
    }
}

/// Minimum of `spec` over the region, exact up to LP tolerance.
///
/// Refuses when more than `limit` neurons are unstable under `bounds`.
pub fn exact_min<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    spec: &Specification<T>,
    bounds: &[LayerBounds<T>],
    limit: usize,
) -> Result<ExactMinimum<T>> {
    spec.check(net)?;
    crate::bounds::check_bounds(net, bounds, net.hidden_depth())?;
    let unstable = unstable_neurons(&bounds[..net.hidden_depth()]);
    if unstable.len() > limit {
        return Err(Error::OracleRefused {
            unstable: unstable.len(),
            limit,
        });
    }
    // the nominal point is feasible for its own pattern and seeds the incumbent
    let center = region.center().clone();
    let best = ExactMinimum {
        value: spec.eval_network(net, center.view())?,
        pattern: ActivationPattern::of_point(net, center.view())?,
        argmin: center,
        lps_solved: 0,
    };
    let mut search = Search {
        net,
        region,
        spec,
        bounds,
        config: SolverConfig::default(),
        unstable,
        best,
    };
    let mut phases: Vec<Vec<NeuronPhase>> =
        bounds[..net.hidden_depth()].iter().map(|b| vec![NeuronPhase::Relaxed; b.len()]).collect();
    search.explore(&mut phases, 0)?;
    Ok(search.best)
}

/// A point of the region that is not classified as the expected label.
#[derive(Clone, Debug)]
pub struct Counterexample<T> {
    pub point: Array1<T>,
    pub predicted: usize,
    /// Smallest `logit(label) - logit(j)` at the point.
    pub margin: T,
}

fn as_counterexample<T: Scalar>(net: &Network<T>, x: Array1<T>, label: usize) -> Result<Counterexample<T>> {
    let logits = net.forward(x.view())?;
    let margin = (0..logits.len())
        .filter(|&j| j != label)
        .map(|j| logits[label] - logits[j])
        .fold(T::infinity(), T::min);
    Ok(Counterexample {
        predicted: crate::network::argmax(logits.view()),
        point: x,
        margin,
    })
}

/// Ground-truth search for a misclassified point.
///
/// With `grid > 1` and at most three inputs, a regular grid over the region
/// is scanned first. Otherwise, and whenever the grid finds nothing, every
/// margin is minimized exactly; a nonpositive minimum returns its argmin.
pub fn exhaustive_adversarial_check<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    bounds: &[LayerBounds<T>],
    grid: usize,
    limit: usize,
) -> Result<Option<Counterexample<T>>> {
    if label >= net.output_dim() {
        return Err(Error::InvalidArgument(format!("label {label} out of range")));
    }
    if net.predict(region.center().view())? != label {
        return as_counterexample(net, region.center().clone(), label).map(Some);
    }
    let n = region.dim();
    if grid > 1 && n <= 3 {
        let total = grid.pow(n as u32);
        for idx in 0..total {
            let mut rest = idx;
            let x = Array1::from_shape_fn(n, |i| {
                let step = rest % grid;
                rest /= grid;
                let t = T::of(step as f64 / (grid - 1) as f64);
                region.lower()[i] + t * (region.upper()[i] - region.lower()[i])
            });
            if net.predict(x.view())? != label {
                return as_counterexample(net, x, label).map(Some);
            }
        }
    }
    for (_, spec) in net.margin_specs(label)? {
        let m = exact_min(net, region, &spec, bounds, limit)?;
        if m.value <= T::zero() {
            return as_counterexample(net, m.argmin, label).map(Some);
        }
    }
    Ok(None)
}
