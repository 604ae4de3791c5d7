//! Feedforward ReLU networks, input regions and margin specifications.
//!
//! A network is a sequence of affine layers `z(l) = W(l) x(l) + b(l)` with a
//! ReLU after every layer except the last, whose output is the logit vector.
//! With `L` hidden ReLU layers the network holds `L + 1` affine layers and the
//! preactivations that need bounds are `z(0) .. z(L-1)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer<T> {
    weights: Array2<T>,
    bias: Array1<T>,
}

impl<T: Scalar> AffineLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim("layer bias", weights.nrows(), bias.len()));
        }
        if weights.ncols() == 0 || weights.nrows() == 0 {
            return Err(Error::InvalidArgument("empty affine layer".into()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine layer".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn apply(&self, x: ArrayView1<'_, T>) -> Array1<T> {
        self.weights.dot(&x) + &self.bias
    }

    fn cast<U: Scalar>(&self) -> AffineLayer<U> {
        AffineLayer {
            weights: self.weights.mapv(|v| U::of(v.to_f64_lossy())),
            bias: self.bias.mapv(|v| U::of(v.to_f64_lossy())),
        }
    }
}

/// Every intermediate value of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `z(0) ..= z(L)`; the last entry is the logit vector.
    pub pre: Vec<Array1<T>>,
    /// `x(0) ..= x(L)`; `x(0)` is the input.
    pub post: Vec<Array1<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Array1<T> {
        self.pre.last().expect("trace of a nonempty network")
    }

    pub fn last_hidden(&self) -> &Array1<T> {
        self.post.last().expect("trace of a nonempty network")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layers: Vec<AffineLayer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<AffineLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::dim(
                    format!("input width of layer {}", l + 1),
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[AffineLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &AffineLayer<T> {
        &self.layers[l]
    }

    /// Number of hidden ReLU layers, `L`.
    pub fn hidden_depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Widths of `x(0) ..= x(L)`.
    pub fn activation_widths(&self) -> Vec<usize> {
        self.layers.iter().map(AffineLayer::input_dim).collect()
    }

    pub fn head(&self) -> &AffineLayer<T> {
        &self.layers[self.layers.len() - 1]
    }

    fn check_input(&self, x: ArrayView1<'_, T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input(x)?;
        let mut act = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(act.view());
            act = if l == last { z } else { z.mapv(relu) };
        }
        Ok(act)
    }

    pub fn forward_trace(&self, x: ArrayView1<'_, T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        post.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(post[l].view());
            if l + 1 < self.layers.len() {
                post.push(z.mapv(relu));
            }
            pre.push(z);
        }
        Ok(ForwardTrace { pre, post })
    }

    /// `x(L)`, the input of the final affine layer.
    pub fn last_hidden(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input(x)?;
        let mut act = x.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            act = layer.apply(act.view()).mapv(relu);
        }
        Ok(act)
    }

    pub fn predict(&self, x: ArrayView1<'_, T>) -> Result<usize> {
        Ok(argmax(self.forward(x)?.view()))
    }

    /// Gradient of `grad_out . f(x)` with respect to `x`.
    ///
    /// A ReLU whose preactivation is exactly zero is treated as inactive.
    pub fn backward(&self, x: ArrayView1<'_, T>, grad_out: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if grad_out.len() != self.output_dim() {
            return Err(Error::dim("output gradient", self.output_dim(), grad_out.len()));
        }
        let trace = self.forward_trace(x)?;
        let g = self.head().weights.t().dot(&grad_out);
        Ok(self.backprop_hidden(&trace, g))
    }

    /// Gradient of `grad_hidden . x(L)` with respect to `x`.
    pub fn backward_hidden(
        &self,
        x: ArrayView1<'_, T>,
        grad_hidden: ArrayView1<'_, T>,
    ) -> Result<Array1<T>> {
        let width = self.head().input_dim();
        if grad_hidden.len() != width {
            return Err(Error::dim("last-hidden gradient", width, grad_hidden.len()));
        }
        let trace = self.forward_trace(x)?;
        Ok(self.backprop_hidden(&trace, grad_hidden.to_owned()))
    }

    fn backprop_hidden(&self, trace: &ForwardTrace<T>, mut g: Array1<T>) -> Array1<T> {
        for l in (0..self.hidden_depth()).rev() {
            g.zip_mut_with(&trace.pre[l], |gi, &zi| {
                if zi <= T::zero() {
                    *gi = T::zero();
                }
            });
            g = self.layers[l].weights.t().dot(&g);
        }
        g
    }

    /// Objective whose positivity over a region certifies that class `other`
    /// never overtakes class `target`.
    pub fn margin_spec(&self, target: usize, other: usize) -> Result<Specification<T>> {
        let k = self.output_dim();
        if target >= k || other >= k {
            return Err(Error::InvalidArgument(format!(
                "class index out of range for {k} outputs: ({target}, {other})"
            )));
        }
        if target == other {
            return Err(Error::InvalidArgument(
                "margin specification needs two distinct classes".into(),
            ));
        }
        let head = self.head();
        let c = &head.weights.row(target) - &head.weights.row(other);
        let c0 = head.bias[target] - head.bias[other];
        Ok(Specification { c, c0 })
    }

    /// Margin specifications of `label` against every other class, in class order.
    pub fn margin_specs(&self, label: usize) -> Result<Vec<(usize, Specification<T>)>> {
        (0..self.output_dim())
            .filter(|&j| j != label)
            .map(|j| self.margin_spec(label, j).map(|s| (j, s)))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(AffineLayer::cast).collect(),
        }
    }

    /// Network with `dims = [n_in, h_1, .., n_out]`, weights and biases drawn
    /// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need input and output widths".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((w[1], w[0]), |_| T::of(rng.random_range(-bound..=bound)));
                let bias = Array1::from_shape_fn(w[1], |_| T::of(rng.random_range(-bound..=bound)));
                AffineLayer::new(weights, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}

#[inline]
pub(crate) fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(v: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Linear objective `c . x(L) + c0` over the last hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Specification<T> {
    pub c: Array1<T>,
    pub c0: T,
}

impl<T: Scalar> Specification<T> {
    pub fn new(c: Array1<T>, c0: T) -> Self {
        Self { c, c0 }
    }

    pub fn eval(&self, last_hidden: ArrayView1<'_, T>) -> T {
        self.c.dot(&last_hidden) + self.c0
    }

    /// Objective value of the network at input `x`.
    pub fn eval_network(&self, net: &Network<T>, x: ArrayView1<'_, T>) -> Result<T> {
        self.check(net)?;
        Ok(self.eval(net.last_hidden(x)?.view()))
    }

    pub fn check(&self, net: &Network<T>) -> Result<()> {
        let width = net.head().input_dim();
        if self.c.len() != width {
            return Err(Error::dim("specification", width, self.c.len()));
        }
        Ok(())
    }

    pub fn negated(&self) -> Self {
        Self {
            c: self.c.mapv(|v| -v),
            c0: -self.c0,
        }
    }
}

/// l-infinity ball around a nominal input, optionally intersected with a box.
#[derive(Clone, Debug, PartialEq)]
pub struct InputRegion<T> {
    center: Array1<T>,
    epsilon: T,
    clip: Option<(Array1<T>, Array1<T>)>,
    lower: Array1<T>,
    upper: Array1<T>,
}

impl<T: Scalar> InputRegion<T> {
    pub fn ball(center: Array1<T>, epsilon: T) -> Result<Self> {
        Self::build(center, epsilon, None)
    }

    pub fn clipped(center: Array1<T>, epsilon: T, low: Array1<T>, high: Array1<T>) -> Result<Self> {
        Self::build(center, epsilon, Some((low, high)))
    }

    /// Ball clipped to the unit box, the image-data default.
    pub fn unit_clipped(center: Array1<T>, epsilon: T) -> Result<Self> {
        let n = center.len();
        Self::clipped(center, epsilon, Array1::zeros(n), Array1::ones(n))
    }

    fn build(center: Array1<T>, epsilon: T, clip: Option<(Array1<T>, Array1<T>)>) -> Result<Self> {
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("region center".into()));
        }
        let mut lower = center.mapv(|c| c - epsilon);
        let mut upper = center.mapv(|c| c + epsilon);
        if let Some((lo, hi)) = &clip {
            if lo.len() != center.len() || hi.len() != center.len() {
                return Err(Error::dim("clip box", center.len(), lo.len().min(hi.len())));
            }
            for i in 0..center.len() {
                if !(lo[i] <= hi[i]) {
                    return Err(Error::InvalidArgument(format!("clip box inverted at coordinate {i}")));
                }
                if center[i] < lo[i] || center[i] > hi[i] {
                    return Err(Error::InvalidArgument(format!(
                        "center lies outside the clip box at coordinate {i}"
                    )));
                }
                lower[i] = lower[i].max(lo[i]);
                upper[i] = upper[i].min(hi[i]);
            }
        }
        Ok(Self {
            center,
            epsilon,
            clip,
            lower,
            upper,
        })
    }

    pub fn center(&self) -> &Array1<T> {
        &self.center
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn clip(&self) -> Option<(&Array1<T>, &Array1<T>)> {
        self.clip.as_ref().map(|(l, h)| (l, h))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Per-coordinate lower end of the region, which is itself a box.
    pub fn lower(&self) -> &Array1<T> {
        &self.lower
    }

    pub fn upper(&self) -> &Array1<T> {
        &self.upper
    }

    /// Same center and clip box, different radius.
    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Self::build(self.center.clone(), epsilon, self.clip.clone())
    }

    pub fn contains(&self, x: ArrayView1<'_, T>, tol: T) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    /// `min a . x` over the region.
    ///
    /// For a plain ball this is `a . x_nom - eps * |a|_1`; with a clip box each
    /// coordinate is minimized over its own interval.
    pub fn min_linear(&self, a: ArrayView1<'_, T>) -> T {
        if self.clip.is_none() {
            let l1: T = a.iter().map(|v| v.abs()).sum();
            a.dot(&self.center) - self.epsilon * l1
        } else {
            a.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(&ai, (&lo, &hi))| if ai >= T::zero() { ai * lo } else { ai * hi })
                .sum()
        }
    }

    pub fn max_linear(&self, a: ArrayView1<'_, T>) -> T {
        if self.clip.is_none() {
            let l1: T = a.iter().map(|v| v.abs()).sum();
            a.dot(&self.center) + self.epsilon * l1
        } else {
            a.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(&ai, (&lo, &hi))| if ai >= T::zero() { ai * hi } else { ai * lo })
                .sum()
        }
    }

    /// Corner of the region minimizing `a . x`.
    pub fn argmin_linear(&self, a: ArrayView1<'_, T>) -> Array1<T> {
        Array1::from_shape_fn(self.dim(), |i| {
            if a[i] >= T::zero() {
                self.lower[i]
            } else {
                self.upper[i]
            }
        })
    }

    /// Euclidean projection onto the region: l-infinity ball first, then the clip box.
    pub fn project(&self, x: &mut Array1<T>) {
        for i in 0..x.len() {
            let c = self.center[i];
            let mut v = x[i].max(c - self.epsilon).min(c + self.epsilon);
            if let Some((lo, hi)) = &self.clip {
                v = v.max(lo[i]).min(hi[i]);
            }
            x[i] = v;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        Array1::from_shape_fn(self.dim(), |i| {
            let (lo, hi) = (self.lower[i].to_f64_lossy(), self.upper[i].to_f64_lossy());
            if hi > lo {
                T::of(rng.random_range(lo..=hi))
            } else {
                self.lower[i]
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Network<f64> {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Self::from_file_repr(file)
    }

    fn from_file_repr(file: NetworkFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(l, layer)| {
                let rows = layer.weights.len();
                let cols = layer.weights.first().map_or(0, Vec::len);
                if let Some(bad) = layer.weights.iter().find(|r| r.len() != cols) {
                    return Err(Error::dim(format!("row width in layer {l}"), cols, bad.len()));
                }
                let flat: Vec<f64> = layer.weights.into_iter().flatten().collect();
                let weights = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                AffineLayer::new(weights, Array1::from(layer.bias))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_file_repr()).expect("network serializes")
    }

    fn to_file_repr(&self) -> NetworkFile {
        NetworkFile {
            layers: self
                .layers
                .iter()
                .map(|layer| LayerFile {
                    weights: layer
                        .weights
                        .axis_iter(Axis(0))
                        .map(|r| r.to_vec())
                        .collect(),
                    bias: layer.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let repr: NetworkFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Self::from_file_repr(repr)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.to_file_repr())?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
