//! Verdicts, minimum-distortion searches and robust-error accounting.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, AdversarialExample, AttackConfig};
use crate::bounds::{greedy_dual_bound, propagate_bounds, BoundMethod, LayerBounds, SlopePolicy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lp::{lp_all_bounds, lp_verify, SolverConfig};
use crate::network::{InputRegion, Network, Specification};
use crate::oracle::{exact_min, DEFAULT_UNSTABLE_LIMIT};
use crate::report::SampleRecord;
use crate::scalar::Scalar;

/// Bisection tolerance of the greedy lower search.
pub const GREEDY_EPS_TOL: f64 = 1e-5;
/// LP lower searches stop at this fraction of the greedy radius.
pub const LP_EPS_REL_TOL: f64 = 0.05;
/// Bisection tolerance of the attack upper search.
pub const PGD_EPS_TOL: f64 = 1e-5;

/// Verification method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Interval bounds everywhere.
    Interval,
    /// Greedy dual bounds everywhere.
    Greedy(SlopePolicy),
    /// Greedy Fast-Lin bounds, exact LP for the margins.
    LpLast,
    /// Exact LP for every neuron and for the margins.
    LpAll,
    /// Activation-pattern enumeration on LP-all bounds.
    Exact,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Interval,
        Method::Greedy(SlopePolicy::FastLin),
        Method::Greedy(SlopePolicy::CrownAdaptive),
        Method::Greedy(SlopePolicy::Zero),
        Method::LpLast,
        Method::LpAll,
        Method::Exact,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Interval => "ibp",
            Method::Greedy(SlopePolicy::FastLin) => "greedy-fastlin",
            Method::Greedy(SlopePolicy::CrownAdaptive) => "greedy-crown",
            Method::Greedy(SlopePolicy::Zero) => "greedy-zero",
            Method::LpLast => "lp-last",
            Method::LpAll => "lp-all",
            Method::Exact => "oracle",
        }
    }

    pub fn is_lp(&self) -> bool {
        matches!(self, Method::LpLast | Method::LpAll)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub solver: SolverConfig,
    pub oracle_limit: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            oracle_limit: DEFAULT_UNSTABLE_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict<T> {
    /// Every margin lower bound is positive.
    Robust { method: Method, margins: Vec<(usize, T)> },
    /// A concrete point of the region is misclassified.
    NotRobust { counterexample: Array1<T>, predicted: usize },
    Unknown {
        margins: Vec<(usize, T)>,
        attack_margin: Option<T>,
        diagnostic: Option<String>,
    },
}

impl<T: Scalar> Verdict<T> {
    pub fn is_robust(&self) -> bool {
        matches!(self, Verdict::Robust { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Robust { .. } => "robust",
            Verdict::NotRobust { .. } => "not_robust",
            Verdict::Unknown { .. } => "unknown",
        }
    }

    pub fn margins(&self) -> &[(usize, T)] {
        match self {
            Verdict::Robust { margins, .. } | Verdict::Unknown { margins, .. } => margins,
            Verdict::NotRobust { .. } => &[],
        }
    }

    pub fn min_margin(&self) -> Option<T> {
        self.margins().iter().map(|m| m.1).reduce(T::min)
    }
}

fn final_interval_margin<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    bounds: &[LayerBounds<T>],
    spec: &Specification<T>,
) -> T {
    let depth = net.hidden_depth();
    if depth == 0 {
        return region.min_linear(spec.c.view()) + spec.c0;
    }
    let b = &bounds[depth - 1];
    let mut v = spec.c0;
    for (j, &c) in spec.c.iter().enumerate() {
        let lo = b.lower[j].max(T::zero());
        let hi = b.upper[j].max(T::zero());
        v += if c >= T::zero() { c * lo } else { c * hi };
    }
    v
}

/// Certified lower bounds of every margin of `label`, as `(class, bound)`.
///
/// For [`Method::Exact`] the values are the exact minima.
pub fn margin_bounds<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    method: Method,
    config: &CertifyConfig,
) -> Result<Vec<(usize, T)>> {
    let specs = net.margin_specs(label)?;
    match method {
        Method::Interval => {
            let bounds = propagate_bounds(net, region, &BoundMethod::Interval)?;
            Ok(specs.iter().map(|(j, s)| (*j, final_interval_margin(net, region, &bounds, s))).collect())
        }
        Method::Greedy(policy) => {
            let bounds = propagate_bounds(net, region, &BoundMethod::GreedyPrimal(policy))?;
            specs
                .iter()
                .map(|(j, s)| Ok((*j, greedy_dual_bound(net, region, s, &bounds, policy)?)))
                .collect()
        }
        Method::LpLast => {
            let bounds = propagate_bounds(net, region, &BoundMethod::GreedyPrimal(SlopePolicy::FastLin))?;
            Ok(lp_verify(net, region, label, &bounds, &config.solver)?.margins)
        }
        Method::LpAll => {
            let bounds = lp_all_bounds(net, region, &config.solver)?;
            Ok(lp_verify(net, region, label, &bounds, &config.solver)?.margins)
        }
        Method::Exact => {
            let bounds = lp_all_bounds(net, region, &config.solver)?;
            specs
                .iter()
                .map(|(j, s)| Ok((*j, exact_min(net, region, s, &bounds, config.oracle_limit)?.value)))
                .collect()
        }
    }
}

/// Verdict of one method on one region.
///
/// A misclassified center is `NotRobust` at once. Relaxation methods answer
/// `Robust` or `Unknown`; only [`Method::Exact`] can prove `NotRobust`. Solver
/// failures and oracle refusals become `Unknown` with a diagnostic.
pub fn verify_point<T: Scalar>(
    net: &Network<T>,
    region: &InputRegion<T>,
    label: usize,
    method: Method,
    config: &CertifyConfig,
) -> Result<Verdict<T>> {
    if region.dim() != net.input_dim() {
        return Err(Error::dim("input region", net.input_dim(), region.dim()));
    }
    let predicted = net.predict(region.center().view())?;
    if predicted != label {
        return Ok(Verdict::NotRobust {
            counterexample: region.center().clone(),
            predicted,
        });
    }
    if method == Method::Exact {
        let bounds = match lp_all_bounds(net, region, &config.solver) {
            Ok(b) => b,
            Err(e) => return unknown_or(e),
        };
        let mut margins = Vec::new();
        for (j, spec) in net.margin_specs(label)? {
            match exact_min(net, region, &spec, &bounds, config.oracle_limit) {
                Ok(m) if m.value <= T::zero() => {
                    let predicted = net.predict(m.argmin.view())?;
                    return Ok(Verdict::NotRobust {
                        counterexample: m.argmin,
                        predicted,
                    });
                }
                Ok(m) => margins.push((j, m.value)),
                Err(e) => return unknown_or(e),
            }
        }
        return Ok(Verdict::Robust { method, margins });
    }
    match margin_bounds(net, region, label, method, config) {
        Ok(margins) if margins.iter().all(|m| m.1 > T::zero()) => Ok(Verdict::Robust { method, margins }),
        Ok(margins) => Ok(Verdict::Unknown {
            margins,
            attack_margin: None,
            diagnostic: None,
        }),
        Err(e) => unknown_or(e),
    }
}

fn unknown_or<T>(e: Error) -> Result<Verdict<T>> {
    match e {
        Error::Lp(_) | Error::NeuronLp { .. } | Error::OracleRefused { .. } => Ok(Verdict::Unknown {
            margins: Vec::new(),
            attack_margin: None,
            diagnostic: Some(e.to_string()),
        }),
        other => Err(other),
    }
}

/// Outcome of a radius search.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsSearchResult<T> {
    pub method: String,
    /// Certified radius for lower searches, attacked radius for upper
    /// searches (`+inf` when no attack succeeded up to the cap).
    pub eps: T,
    pub iterations: usize,
    /// Every radius tried, with whether the test succeeded there.
    pub trace: Vec<(T, bool)>,
    /// Adversarial example at `eps` for upper searches.
    pub witness: Option<Array1<T>>,
}

/// Starting radius: 0.05 for regions clipped to a box, otherwise a tenth of
/// the largest input magnitude (0.1 if the input is zero).
pub fn initial_eps_guess<T: Scalar>(region: &InputRegion<T>) -> T {
    if region.clip().is_some() {
        return T::of(0.05);
    }
    let m = region.center().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if m > T::zero() {
        m * T::of(0.1)
    } else {
        T::of(0.1)
    }
}

/// Largest radius tried while doubling: the widest side of the clip box, or
/// 2^20 times the initial guess for unclipped regions.
pub fn eps_cap<T: Scalar>(region: &InputRegion<T>) -> T {
    match region.clip() {
        Some((lo, hi)) => lo
            .iter()
            .zip(hi.iter())
            .fold(T::zero(), |m, (&l, &h)| m.max(h - l))
            .max(T::of(1e-12)),
        None => initial_eps_guess(region) * T::of(1_048_576.0),
    }
}

/// Tolerance of a lower search: absolute for greedy and interval methods,
/// relative to the greedy radius for LP methods.
pub fn lower_tolerance<T: Scalar>(method: Method, eps_greedy: Option<T>) -> T {
    match (method.is_lp() || method == Method::Exact, eps_greedy) {
        (true, Some(g)) if g > T::zero() => g * T::of(LP_EPS_REL_TOL),
        _ => T::of(GREEDY_EPS_TOL),
    }
}

/// Doubling/halving to bracket the threshold of a predicate that holds at
/// small radii, then bisection down to `tol`. Returns the largest radius seen
/// to hold (0 if none), the smallest seen to fail, and the trace.
fn bracket_and_bisect<T: Scalar>(
    guess: T,
    cap: T,
    tol: T,
    mut holds: impl FnMut(T) -> Result<bool>,
) -> Result<(T, Option<T>, Vec<(T, bool)>)> {
    let mut trace = Vec::new();
    let mut lo = T::zero();
    let mut hi: Option<T> = None;
    let mut eps = guess.min(cap);
    loop {
        let ok = holds(eps)?;
        trace.push((eps, ok));
        if ok {
            lo = eps;
            if hi.is_some() || eps >= cap {
                break;
            }
            eps = (eps + eps).min(cap);
        } else {
            hi = Some(eps);
            if lo > T::zero() || eps <= tol {
                break;
            }
            eps *= T::of(0.5);
        }
    }
    if let Some(mut h) = hi {
        while h - lo > tol {
            let mid = (lo + h) * T::of(0.5);
            let ok = holds(mid)?;
            trace.push((mid, ok));
            if ok {
                lo = mid;
            } else {
                h = mid;
            }
        }
        hi = Some(h);
    }
    Ok((lo, hi, trace))
}

/// Largest radius certified by `method`, searched around `base`'s center and
/// clip box.
pub fn eps_search_lower<T: Scalar>(
    net: &Network<T>,
    base: &InputRegion<T>,
    label: usize,
    method: Method,
    config: &CertifyConfig,
    tol: T,
) -> Result<EpsSearchResult<T>> {
    let predicted = net.predict(base.center().view())?;
    if predicted != label {
        return Err(Error::Misclassified { label, predicted });
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("search tolerance must be positive".into()));
    }
    let (lo, _, trace) = bracket_and_bisect(initial_eps_guess(base), eps_cap(base), tol, |eps| {
        Ok(verify_point(net, &base.with_epsilon(eps)?, label, method, config)?.is_robust())
    })?;
    Ok(EpsSearchResult {
        method: method.name().into(),
        eps: lo,
        iterations: trace.len(),
        trace,
        witness: None,
    })
}

/// Smallest radius at which PGD finds an adversarial example.
pub fn eps_search_upper_pgd<T: Scalar>(
    net: &Network<T>,
    base: &InputRegion<T>,
    label: usize,
    attack: &AttackConfig,
    tol: T,
) -> Result<EpsSearchResult<T>> {
    let predicted = net.predict(base.center().view())?;
    if predicted != label {
        return Err(Error::Misclassified { label, predicted });
    }
    let mut found: Vec<(T, Array1<T>)> = Vec::new();
    let (_, hi, trace) = bracket_and_bisect(initial_eps_guess(base), eps_cap(base), tol, |eps| {
        let adv = pgd_attack(net, &base.with_epsilon(eps)?, label, attack)?;
        Ok(match adv {
            Some(a) => {
                found.push((eps, a.point));
                false
            }
            None => true,
        })
    })?;
    let witness = hi.and_then(|h| found.into_iter().find(|(e, _)| *e == h).map(|(_, x)| x));
    Ok(EpsSearchResult {
        method: "pgd".into(),
        eps: hi.unwrap_or(T::infinity()),
        iterations: trace.len(),
        trace,
        witness,
    })
}

/// `100 (eps_pgd - eps_lp) / eps_pgd`.
pub fn percentage_gap<T: Scalar>(eps_pgd: T, eps_lp: T) -> Result<T> {
    if !(eps_pgd > T::zero()) {
        return Err(Error::InvalidArgument(format!("attack radius must be positive, got {eps_pgd}")));
    }
    Ok(T::of(100.0) * (eps_pgd - eps_lp) / eps_pgd)
}

/// Region of radius `eps` around a sample; clipped to the unit box when the
/// data is unit scaled.
pub fn sample_region<T: Scalar>(input: ArrayView1<'_, T>, eps: T, unit_clip: bool) -> Result<InputRegion<T>> {
    if unit_clip {
        InputRegion::unit_clipped(input.to_owned(), eps)
    } else {
        InputRegion::ball(input.to_owned(), eps)
    }
}

/// Attack seed for one sample, split from a master seed.
pub fn sample_seed(master: u64, sample_id: usize) -> u64 {
    // splitmix64 step
    let mut z = master.wrapping_add((sample_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Robust-error bounds at a fixed radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustErrorReport {
    pub eps: f64,
    pub samples: usize,
    pub clean_error: f64,
    /// Fraction misclassified or attacked successfully.
    pub lower: Option<f64>,
    /// Fraction not certified, per method.
    pub upper: Vec<(String, f64)>,
    pub records: Vec<SampleRecord>,
}

fn record(sample_id: usize, label: usize, clean_correct: bool, method: &str) -> SampleRecord {
    SampleRecord {
        sample_id,
        label,
        clean_correct,
        method: method.into(),
        verdict: String::new(),
        margin_min: None,
        eps_lower: None,
        eps_upper: None,
        gap_percent: None,
        wall_time_s: None,
    }
}

/// Verifies every sample with every method and attacks it with PGD when
/// `attack` is given.
pub fn robust_error_bounds<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    eps: T,
    methods: &[Method],
    attack: Option<&AttackConfig>,
    config: &CertifyConfig,
) -> Result<RobustErrorReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    data.check(net)?;
    let unit = data.is_unit_scaled();
    let per_sample = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(id, s)| -> Result<(bool, Vec<(bool, SampleRecord)>, Option<bool>)> {
            let region = sample_region(s.input.view(), eps, unit)?;
            let clean = net.predict(s.input.view())? == s.label;
            let mut rows = Vec::new();
            for &m in methods {
                let start = Instant::now();
                let v = verify_point(net, &region, s.label, m, config)?;
                let mut r = record(id, s.label, clean, m.name());
                r.verdict = v.kind().into();
                r.margin_min = v.min_margin().map(|x| x.to_f64_lossy());
                r.wall_time_s = Some(start.elapsed().as_secs_f64());
                rows.push((v.is_robust(), r));
            }
            let attacked = match attack {
                None => None,
                Some(a) => {
                    let start = Instant::now();
                    let cfg = AttackConfig {
                        seed: sample_seed(a.seed, id),
                        ..a.clone()
                    };
                    let adv: Option<AdversarialExample<T>> =
                        if clean { pgd_attack(net, &region, s.label, &cfg)? } else { None };
                    let mut r = record(id, s.label, clean, "pgd");
                    r.verdict = if adv.is_some() || !clean { "not_robust" } else { "unknown" }.into();
                    r.margin_min = adv.as_ref().map(|a| a.margin.to_f64_lossy());
                    r.wall_time_s = Some(start.elapsed().as_secs_f64());
                    rows.push((false, r));
                    Some(adv.is_some() || !clean)
                }
            };
            Ok((clean, rows, attacked))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = data.len() as f64;
    let clean_error = per_sample.iter().filter(|p| !p.0).count() as f64 / n;
    let lower = attack.map(|_| per_sample.iter().filter(|p| p.2 == Some(true)).count() as f64 / n);
    let upper = methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let not_certified = per_sample.iter().filter(|p| !p.1[k].0).count() as f64;
            (m.name().to_string(), not_certified / n)
        })
        .collect();
    let records = per_sample.into_iter().flat_map(|p| p.1.into_iter().map(|r| r.1)).collect();
    Ok(RobustErrorReport {
        eps: eps.to_f64_lossy(),
        samples: data.len(),
        clean_error,
        lower,
        upper,
        records,
    })
}

/// Radius searches of one sample: a lower search per method and the PGD
/// upper search. LP methods use the greedy Fast-Lin radius for their
/// tolerance, so that search runs first whenever an LP method is requested.
pub fn eps_search_sample<T: Scalar>(
    net: &Network<T>,
    base: &InputRegion<T>,
    label: usize,
    methods: &[Method],
    attack: Option<&AttackConfig>,
    config: &CertifyConfig,
) -> Result<Vec<EpsSearchResult<T>>> {
    let needs_greedy = methods.iter().any(|m| m.is_lp() || *m == Method::Exact);
    let greedy = Method::Greedy(SlopePolicy::FastLin);
    let eps_greedy = if needs_greedy || methods.contains(&greedy) {
        Some(eps_search_lower(net, base, label, greedy, config, T::of(GREEDY_EPS_TOL))?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &m in methods {
        if m == greedy {
            out.push(eps_greedy.clone().expect("computed above"));
            continue;
        }
        let tol = lower_tolerance(m, eps_greedy.as_ref().map(|r| r.eps));
        out.push(eps_search_lower(net, base, label, m, config, tol)?);
    }
    if let Some(a) = attack {
        out.push(eps_search_upper_pgd(net, base, label, a, T::of(PGD_EPS_TOL))?);
    }
    Ok(out)
}
