//! Projected gradient descent with sign steps on the margin loss.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{argmax, InputRegion, Network, Specification};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    /// Absolute step size; `None` means a tenth of the radius.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: None,
            restarts: 10,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("attack needs at least one step and one restart".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("step size must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn step<T: Scalar>(&self, region: &InputRegion<T>) -> T {
        self.step_size.map_or(region.epsilon() * T::of(0.1), T::of)
    }

    /// Restart 0 starts at the nominal point, the others uniformly in the
    /// region box; each restart draws from its own stream of the seed.
    fn start<T: Scalar>(&self, region: &InputRegion<T>, restart: usize) -> (Array1<T>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(restart as u64);
        let x = if restart == 0 { region.center().clone() } else { region.sample(&mut rng) };
        (x, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialExample<T> {
    pub point: Array1<T>,
    pub predicted: usize,
    /// `logit(label) - max over other logits`, nonpositive.
    pub margin: T,
    pub restart: usize,
    pub step: usize,
}

/// `logit(label) - max_{j != label} logit(j)` and the maximizing class.
fn margin<T: Scalar>(logits: &Array1<T>, label: usize) -> (T, usize) {
    let mut best = (T::neg_infinity(), usize::MAX);
    for (j, &v) in logits.iter().enumerate() {
        if j != label && v > best.0 {
            best = (v, j);
        }
    }
    (logits[label] - best.0, best.1)
}

fn sign_step<T: Scalar>(x: &mut Array1<T>, grad: &Array1<T>, step: T, region: &InputRegion<T>) {
    x.zip_mut_with(grad, |xi, &g| {
        if g > T::zero() {
            *xi += step;
        } else if g < T::zero() {
            *xi -= step;
        }
    });
    region.project(x);
}

fn run_restart<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    config: &AttackConfig,
    restart: usize,
) -> Result<Option<AdversarialExample<T>>> {
    let (mut x, _) = config.start(region, restart);
    let step = config.step(region);
    for it in 0..=config.steps {
        let logits = net.forward(x.view())?;
        let predicted = argmax(logits.view());
        if predicted != label {
            return Ok(Some(AdversarialExample {
                margin: margin(&logits, label).0,
                point: x,
                predicted,
                restart,
                step: it,
            }));
        }
        if it == config.steps {
            break;
        }
        // ascend max_{j != label} f_j - f_label
        let (_, j) = margin(&logits, label);
        let mut g = Array1::zeros(logits.len());
        g[j] = T::one();
        g[label] = -T::one();
        let grad = net.backward(x.view(), g.view())?;
        sign_step(&mut x, &grad, step, region);
    }
    Ok(None)
}

/// Searches the region for a point not classified as `label`.
///
/// Restarts run independently; the lowest-indexed successful restart wins so
/// the result does not depend on scheduling.
pub fn pgd_attack<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    config: &AttackConfig,
) -> Result<Option<AdversarialExample<T>>> {
    config.validate()?;
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    if label >= net.output_dim() || net.output_dim() < 2 {
        return Err(Error::InvalidArgument(format!("label {label} out of range")));
    }
    let found = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(net, region, label, config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(found.into_iter().flatten().next())
}

/// Smallest value of `spec` seen while descending it with PGD; an upper
/// bound on its minimum over the region.
pub fn pgd_margin_upper_bound<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    spec: &Specification<T>,
    config: &AttackConfig,
) -> Result<T> {
    Ok(pgd_minimize(net, region, spec, config)?.0)
}

/// As [`pgd_margin_upper_bound`], also returning the minimizing point.
pub fn pgd_minimize<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    spec: &Specification<T>,
    config: &AttackConfig,
) -> Result<(T, Array1<T>)> {
    config.validate()?;
    spec.check(net)?;
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    let step = config.step(region);
    let runs = (0..config.restarts)
        .into_par_iter()
        .map(|r| -> Result<(T, Array1<T>)> {
            let (mut x, _) = config.start(region, r);
            let mut best = (spec.eval_network(net, x.view())?, x.clone());
            for _ in 0..config.steps {
                let grad = net.backward_hidden(x.view(), spec.c.view())?;
                let descent = grad.mapv(|g| -g);
                sign_step(&mut x, &descent, step, region);
                let v = spec.eval_network(net, x.view())?;
                if v < best.0 {
                    best = (v, x.clone());
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(runs
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one restart"))
}
