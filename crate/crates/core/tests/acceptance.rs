//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relaxbench::attack::{pgd_attack, pgd_margin_upper_bound, AttackConfig};
use relaxbench::bounds::{
    greedy_dual_bound, greedy_primal_bound, propagate_bounds, relax_relu, BoundMethod, SlopePolicy,
};
use relaxbench::certify::{
    eps_search_sample, lower_tolerance, margin_bounds, percentage_gap, sample_region, verify_point, CertifyConfig,
    Method,
};
use relaxbench::dataset::uniform_labelled;
use relaxbench::lp::{build_relaxed_lp, build_relaxed_lp_at, lp_all_bounds, solve, LpSession, SolverConfig};
use relaxbench::oracle::{exact_min, exhaustive_adversarial_check};
use relaxbench::report::median;
use relaxbench::{AffineLayer, InputRegion, LayerBounds, Network, Specification};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Instance {
    net: Network,
    region: InputRegion,
    label: usize,
}

/// 50 random nets: input 2-10, widths 4-8, 2-3 hidden layers, radius 0.05-0.5.
fn suite() -> Vec<Instance> {
    (0..50u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let n_in = rng.random_range(2..=10);
            let hidden = rng.random_range(2..=3);
            let mut dims = vec![n_in];
            dims.extend((0..hidden).map(|_| rng.random_range(4..=8)));
            dims.push(rng.random_range(2..=4));
            let net = Network::random(&dims, &mut rng).unwrap();
            let x: Array1<f64> = (0..n_in).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = net.predict(x.view()).unwrap();
            let eps = rng.random_range(0.05..=0.5);
            Instance {
                net,
                region: InputRegion::ball(x, eps).unwrap(),
                label,
            }
        })
        .collect()
}

fn hidden_neurons(net: &Network) -> usize {
    net.activation_widths()[1..].iter().sum()
}

fn barrier_ordering() -> Outcome {
    let config = SolverConfig::default();
    let mut specs = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, inst) in suite().iter().enumerate() {
        let fastlin = propagate_bounds(&inst.net, &inst.region, &BoundMethod::GreedyPrimal(SlopePolicy::FastLin))
            .map_err(|e| e.to_string())?;
        let lp_bounds = lp_all_bounds(&inst.net, &inst.region, &config).map_err(|e| e.to_string())?;
        for (j, spec) in inst.net.margin_specs(inst.label).unwrap() {
            let greedy = greedy_dual_bound(&inst.net, &inst.region, &spec, &fastlin, SlopePolicy::FastLin).unwrap();
            let last = lp_value(&inst.net, &inst.region, &fastlin, &spec, &config)?;
            let all = lp_value(&inst.net, &inst.region, &lp_bounds, &spec, &config)?;
            let exact = exact_min(&inst.net, &inst.region, &spec, &lp_bounds, hidden_neurons(&inst.net))
                .map_err(|e| format!("net {i}: {e}"))?
                .value;
            let attack = AttackConfig {
                seed: i as u64,
                ..AttackConfig::default()
            };
            let pgd = pgd_margin_upper_bound(&inst.net, &inst.region, &spec, &attack).unwrap();
            let chain = [greedy, last, all, exact, pgd];
            for w in chain.windows(2) {
                worst = worst.max(w[0] - w[1]);
            }
            ensure(chain.windows(2).all(|w| w[0] <= w[1] + 1e-6), || {
                format!("net {i} class {j}: greedy, LP-last, LP-all, exact, PGD = {chain:?}")
            })?;
            specs += 1;
        }
    }
    Ok(format!("50 nets, {specs} margin specs, largest violation {worst:.2e}"))
}

/// Relaxed LP optimum, taken as the smaller of the primal and dual values.
fn lp_value(net: &Network, region: &InputRegion, bounds: &[LayerBounds], spec: &Specification, config: &SolverConfig) -> Result<f64, String> {
    let lp = build_relaxed_lp(net, region, bounds, spec).map_err(|e| e.to_string())?;
    let sol = solve(&lp.lp, config);
    ensure(sol.is_optimal(), || format!("LP ended with {:?}", sol.status))?;
    Ok(sol.lower_bound())
}

fn primal_dual_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
        let n_in = rng.random_range(1..=8);
        let mut dims = vec![n_in];
        dims.extend((0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=10)));
        dims.push(rng.random_range(2..=5));
        let net = Network::random(&dims, &mut rng).unwrap();
        let x: Array1<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let region = InputRegion::ball(x, rng.random_range(0.01..1.0)).unwrap();
        let bounds = propagate_bounds(&net, &region, &BoundMethod::GreedyPrimal(SlopePolicy::FastLin)).unwrap();
        let width = *net.activation_widths().last().unwrap();
        let c: Array1<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0 = rng.random_range(-1.0..1.0);
        let spec = Specification::new(c.clone(), c0);
        let primal = greedy_primal_bound(&net, &region, net.hidden_depth(), c.view(), c0, &bounds, SlopePolicy::FastLin)
            .unwrap()
            .0;
        let dual = greedy_dual_bound(&net, &region, &spec, &bounds, SlopePolicy::FastLin).unwrap();
        let diff = (primal - dual).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-8, || format!("pair {i}: primal {primal}, dual {dual}"))?;
    }
    Ok(format!("200 pairs, largest difference {worst:.2e}"))
}

fn duality_witnesses() -> Outcome {
    let config = SolverConfig::default();
    let mut solved = 0;
    let mut worst_gap = 0.0f64;
    let mut worst_greedy = f64::NEG_INFINITY;
    let mut check = |sol: &relaxbench::LpSolution, what: &str| -> Result<(), String> {
        ensure(sol.is_optimal(), || format!("{what}: LP ended with {:?}", sol.status))?;
        let gap = sol.duality_gap();
        worst_gap = worst_gap.max(gap / (1.0 + sol.value.abs()));
        solved += 1;
        ensure(gap <= 1e-6 * (1.0 + sol.value.abs()), || {
            format!("{what}: primal {} dual {}", sol.value, sol.dual_value)
        })
    };
    for (i, inst) in suite().iter().enumerate() {
        let (net, region) = (&inst.net, &inst.region);
        let fastlin = propagate_bounds(net, region, &BoundMethod::GreedyPrimal(SlopePolicy::FastLin)).unwrap();
        let lp_bounds = lp_all_bounds(net, region, &config).map_err(|e| e.to_string())?;
        // every neuron LP of LP-all
        for l in 1..net.hidden_depth() {
            let rl = build_relaxed_lp_at(net, region, &lp_bounds[..l], l, None).map_err(|e| e.to_string())?;
            let session = LpSession::new(&rl.lp, &config);
            let layer = net.layer(l);
            for j in 0..layer.output_dim() {
                for sign in [1.0, -1.0] {
                    let c = layer.weights().row(j).mapv(|v| v * sign);
                    let sol = session.solve(rl.objective_on_last(c.view()).view(), sign * layer.bias()[j]);
                    check(&sol, &format!("net {i} layer {l} neuron {j}"))?;
                }
            }
        }
        for (j, spec) in net.margin_specs(inst.label).unwrap() {
            for bounds in [&fastlin, &lp_bounds] {
                let lp = build_relaxed_lp(net, region, bounds, &spec).unwrap();
                let sol = solve(&lp.lp, &config);
                check(&sol, &format!("net {i} class {j}"))?;
                for policy in [SlopePolicy::FastLin, SlopePolicy::CrownAdaptive, SlopePolicy::Zero] {
                    let g = greedy_dual_bound(net, region, &spec, bounds, policy).unwrap();
                    worst_greedy = worst_greedy.max(g - sol.value.min(sol.dual_value));
                    ensure(g <= sol.value.min(sol.dual_value) + 1e-7, || {
                        format!("net {i} class {j} {policy:?}: greedy {g} above LP optimum {}", sol.value)
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{solved} optimal LPs, largest relative gap {worst_gap:.2e}; greedy minus LP at most {worst_greedy:.2e}"
    ))
}

/// Logits of an affine map `x -> W x + b`; the margin of `label` over `j` is
/// minimized over the ball at `c.(W x + b) - eps |W^T c|_1`.
fn analytic_margin(w: &Array2<f64>, b: &Array1<f64>, x: &Array1<f64>, eps: f64, label: usize, j: usize) -> f64 {
    let c = &w.row(label) - &w.row(j);
    c.dot(x) + b[label] - b[j] - eps * c.iter().map(|v| v.abs()).sum::<f64>()
}

fn exactness_cases() -> Outcome {
    let config = CertifyConfig::default();
    let mut worst = 0.0f64;
    // single affine layer: every method is exact
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + i);
        let (n, k) = (rng.random_range(1..=8), rng.random_range(2..=5));
        let net = Network::random(&[n, k], &mut rng).unwrap();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = rng.random_range(0.0..0.5);
        let label = net.predict(x.view()).unwrap();
        let region = InputRegion::ball(x.clone(), eps).unwrap();
        let layer = net.layer(0);
        for m in Method::ALL {
            for (j, v) in margin_bounds(&net, &region, label, m, &config).map_err(|e| e.to_string())? {
                let exact = analytic_margin(layer.weights(), layer.bias(), &x, eps, label, j);
                worst = worst.max((v - exact).abs());
                ensure((v - exact).abs() <= 1e-8, || format!("affine net {i} {m}: {v} vs {exact}"))?;
            }
        }
    }
    // hidden layers with every neuron active: the network is affine on the
    // region and all relaxations except interval arithmetic are exact
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3100 + i);
        let n = rng.random_range(1..=6);
        let dims = [n, rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(2..=4)];
        let random = Network::random(&dims, &mut rng).unwrap();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = rng.random_range(0.0..0.5);
        let region = InputRegion::ball(x.clone(), eps).unwrap();
        // raise each hidden bias until interval bounds keep the layer active
        let mut layers: Vec<AffineLayer> = random.layers().to_vec();
        for l in 0..layers.len() - 1 {
            let partial = Network::new(layers.clone()).unwrap();
            let lo = propagate_bounds(&partial, &region, &BoundMethod::Interval).unwrap()[l].lower.clone();
            let bias = layers[l].bias() - &lo.mapv(|v| v.min(0.0)) + 0.1;
            layers[l] = AffineLayer::new(layers[l].weights().clone(), bias).unwrap();
        }
        let net = Network::new(layers).unwrap();
        let label = net.predict(x.view()).unwrap();
        let ibp = propagate_bounds(&net, &region, &BoundMethod::Interval).unwrap();
        ensure(ibp.iter().all(|b| b.lower.iter().all(|&v| v > 0.0)), || format!("stable net {i} has inactive neurons"))?;
        // collapse to the equivalent affine map
        let (mut w, mut b) = (net.layer(0).weights().clone(), net.layer(0).bias().clone());
        for a in &net.layers()[1..] {
            b = a.weights().dot(&b) + a.bias();
            w = a.weights().dot(&w);
        }
        for m in Method::ALL.into_iter().filter(|m| *m != Method::Interval) {
            for (j, v) in margin_bounds(&net, &region, label, m, &config).map_err(|e| e.to_string())? {
                let exact = analytic_margin(&w, &b, &x, eps, label, j);
                worst = worst.max((v - exact).abs());
                ensure((v - exact).abs() <= 1e-8, || format!("stable net {i} {m}: {v} vs {exact}"))?;
            }
        }
    }
    // first-layer bounds do not depend on the method
    let methods = [
        BoundMethod::Interval,
        BoundMethod::GreedyPrimal(SlopePolicy::FastLin),
        BoundMethod::GreedyPrimal(SlopePolicy::CrownAdaptive),
        BoundMethod::GreedyDual(SlopePolicy::FastLin),
        BoundMethod::GreedyDual(SlopePolicy::Zero),
        BoundMethod::LpExact(SolverConfig::default()),
    ];
    let mut first = 0.0f64;
    for inst in suite() {
        let all: Vec<LayerBounds> =
            methods.iter().map(|m| propagate_bounds(&inst.net, &inst.region, m).unwrap().remove(0)).collect();
        for b in &all[1..] {
            let d = (&b.lower - &all[0].lower)
                .iter()
                .chain((&b.upper - &all[0].upper).iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            first = first.max(d);
        }
    }
    ensure(first <= 1e-10, || format!("first-layer bounds differ by {first:.2e}"))?;
    Ok(format!(
        "40 affine-on-region nets, largest error {worst:.2e}; first-layer bounds agree to {first:.2e}"
    ))
}

fn soundness_fuzz() -> Outcome {
    let config = CertifyConfig::default();
    let bound_methods = [
        BoundMethod::Interval,
        BoundMethod::GreedyPrimal(SlopePolicy::FastLin),
        BoundMethod::GreedyPrimal(SlopePolicy::CrownAdaptive),
        BoundMethod::GreedyPrimal(SlopePolicy::Zero),
        BoundMethod::GreedyDual(SlopePolicy::FastLin),
        BoundMethod::LpExact(config.solver.clone()),
    ];
    let margin_methods = [
        Method::Interval,
        Method::Greedy(SlopePolicy::FastLin),
        Method::Greedy(SlopePolicy::CrownAdaptive),
        Method::Greedy(SlopePolicy::Zero),
        Method::LpLast,
        Method::LpAll,
    ];
    let (mut robust, mut oracle_checks, mut attacks) = (0, 0, 0);
    for (i, inst) in suite().iter().enumerate() {
        let (net, region) = (&inst.net, &inst.region);
        let bounds: Vec<Vec<LayerBounds>> =
            bound_methods.iter().map(|m| propagate_bounds(net, region, m).unwrap()).collect();
        let margins: Vec<Vec<(usize, f64)>> = margin_methods
            .iter()
            .map(|&m| margin_bounds(net, region, inst.label, m, &config).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + i as u64);
        for _ in 0..1000 {
            let x = region.sample(&mut rng);
            let trace = net.forward_trace(x.view()).unwrap();
            for (k, bs) in bounds.iter().enumerate() {
                for (l, (b, z)) in bs.iter().zip(&trace.pre).enumerate() {
                    ensure(b.contains(z.view(), 1e-9), || format!("net {i} {:?} layer {l} misses a sample", bound_methods[k]))?;
                }
            }
            let logits = trace.logits();
            for (k, ms) in margins.iter().enumerate() {
                for &(j, m) in ms {
                    let actual = logits[inst.label] - logits[j];
                    ensure(m <= actual + 1e-9, || {
                        format!("net {i} {} class {j}: certified {m} above sampled {actual}", margin_methods[k])
                    })?;
                }
            }
        }
        let lp_bounds = &bounds[5];
        let limit = hidden_neurons(net);
        let cex = exhaustive_adversarial_check(net, region, inst.label, lp_bounds, 0, limit).map_err(|e| e.to_string())?;
        oracle_checks += 1;
        for &m in &margin_methods {
            if verify_point(net, region, inst.label, m, &config).unwrap().is_robust() {
                robust += 1;
                ensure(cex.is_none(), || format!("net {i}: {m} certified a region with a counterexample"))?;
            }
        }
        let attack = AttackConfig {
            seed: i as u64,
            ..AttackConfig::default()
        };
        if let Some(adv) = pgd_attack(net, region, inst.label, &attack).unwrap() {
            attacks += 1;
            let spec = net.margin_spec(inst.label, adv.predicted).unwrap();
            let m = exact_min(net, region, &spec, lp_bounds, limit).unwrap();
            ensure(m.value <= 0.0, || format!("net {i}: attack succeeded but the exact minimum is {}", m.value))?;
        }
    }
    Ok(format!(
        "50 nets x 1000 samples, 0 violations; {robust} robust verdicts checked against {oracle_checks} oracle runs, {attacks} attacks confirmed"
    ))
}

fn eps_search_protocol() -> Outcome {
    let config = CertifyConfig::default();
    let methods = [Method::Greedy(SlopePolicy::FastLin), Method::LpLast, Method::LpAll];
    let mut worst_pgd = 0.0f64;
    let mut cases = 0;
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
        let n = rng.random_range(2..=10);
        let net = Network::random(&[n, 2], &mut rng).unwrap();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = net.predict(x.view()).unwrap();
        let layer = net.layer(0);
        let star = analytic_margin(layer.weights(), layer.bias(), &x, 0.0, label, 1 - label)
            / (&layer.weights().row(label) - &layer.weights().row(1 - label)).iter().map(|v| v.abs()).sum::<f64>();
        if star < 1e-3 {
            continue;
        }
        cases += 1;
        let base = InputRegion::ball(x, 0.0).unwrap();
        let res = eps_search_sample(&net, &base, label, &methods, Some(&AttackConfig::default()), &config)
            .map_err(|e| e.to_string())?;
        let greedy = res[0].eps;
        for (k, &m) in methods.iter().enumerate() {
            let tol = lower_tolerance(m, Some(greedy));
            let e = res[k].eps;
            ensure(e <= star && star - e <= tol, || format!("linear net {i} {m}: {e} vs {star} (tol {tol:.1e})"))?;
        }
        let up = res[3].eps;
        worst_pgd = worst_pgd.max((up - star).abs());
        ensure(up >= star - 1e-12 && up - star <= 1e-4, || format!("linear net {i} PGD: {up} vs {star}"))?;
    }
    let mut ordered = 0;
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5100 + i);
        let n = rng.random_range(2..=8);
        let net = Network::random(&[n, 10, 10, 3], &mut rng).unwrap();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let label = net.predict(x.view()).unwrap();
        let base = InputRegion::ball(x, 0.0).unwrap();
        let res = eps_search_sample(&net, &base, label, &methods, Some(&AttackConfig::default()), &config)
            .map_err(|e| e.to_string())?;
        let eps: Vec<f64> = res.iter().map(|r| r.eps).collect();
        for k in 1..3 {
            let slack = lower_tolerance(methods[k], Some(eps[0]));
            ensure(eps[k - 1] <= eps[k] + slack, || format!("ReLU net {i}: radii {eps:?}"))?;
        }
        ensure(eps[2] <= eps[3], || format!("ReLU net {i}: LP-all above PGD, radii {eps:?}"))?;
        ordered += 1;
    }
    Ok(format!(
        "{cases} linear nets within tolerance (PGD off by at most {worst_pgd:.1e}); ordering holds on {ordered} ReLU nets"
    ))
}

fn random_mlp_gap() -> Outcome {
    let lp_samples: usize = std::env::var("RELAXBENCH_LP_ALL_SAMPLES").ok().and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = CertifyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2018);
    let net = Network::random(&[784, 100, 100, 10], &mut rng).unwrap();
    let data = uniform_labelled(&net, 10, &mut rng).unwrap();
    let greedy = Method::Greedy(SlopePolicy::FastLin);
    let mut greedy_gaps = Vec::new();
    let mut lp_gaps = Vec::new();
    let mut paired_greedy = Vec::new();
    for (i, s) in data.samples.iter().enumerate() {
        let base = sample_region(s.input.view(), 0.0, true).unwrap();
        let methods: &[Method] = if i < lp_samples { &[greedy, Method::LpAll] } else { &[greedy] };
        let attack = AttackConfig {
            seed: i as u64,
            ..AttackConfig::default()
        };
        let res = eps_search_sample(&net, &base, s.label, methods, Some(&attack), &config).map_err(|e| e.to_string())?;
        let pgd = res.last().unwrap().eps;
        ensure(pgd.is_finite(), || format!("sample {i}: no attack succeeded"))?;
        let g = percentage_gap(pgd, res[0].eps).unwrap();
        greedy_gaps.push(g);
        if i < lp_samples {
            paired_greedy.push(g);
            lp_gaps.push(percentage_gap(pgd, res[1].eps).unwrap());
        }
    }
    let mg = median(&greedy_gaps).unwrap();
    let mp = median(&paired_greedy).unwrap();
    let ml = median(&lp_gaps).unwrap();
    ensure((30.0..=90.0).contains(&mg), || format!("median greedy gap {mg:.2}% outside [30, 90]"))?;
    ensure(ml <= mp, || format!("LP-all gap {ml:.2}% above greedy gap {mp:.2}% on the same samples"))?;
    Ok(format!(
        "median gap greedy {mg:.2}% over 10 samples; on {lp_samples} samples greedy {mp:.2}%, LP-all {ml:.2}%"
    ))
}

fn relaxation_values() -> Outcome {
    let r = relax_relu(-1.0, 1.0, SlopePolicy::FastLin).unwrap();
    ensure(r.upper_slope == 0.5 && r.upper_intercept == 0.5, || format!("relax_relu(-1, 1) upper = {r:?}"))?;
    for policy in [SlopePolicy::FastLin, SlopePolicy::CrownAdaptive, SlopePolicy::Zero] {
        let a = relax_relu(0.5, 2.0, policy).unwrap();
        let z = relax_relu(-2.0, -0.5, policy).unwrap();
        ensure(
            (a.upper_slope, a.upper_intercept, a.lower_slope, a.lower_intercept) == (1.0, 0.0, 1.0, 0.0)
                && (z.upper_slope, z.upper_intercept, z.lower_slope, z.lower_intercept) == (0.0, 0.0, 0.0, 0.0),
            || format!("stable relaxation not exact under {policy:?}"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    for _ in 0..1000 {
        let a: f64 = rng.random_range(-5.0..5.0);
        let b: f64 = rng.random_range(-5.0..5.0);
        let (l, u) = (a.min(b), a.max(b));
        for policy in [SlopePolicy::FastLin, SlopePolicy::CrownAdaptive, SlopePolicy::Zero] {
            let r = relax_relu(l, u, policy).unwrap();
            for k in 0..=100 {
                let z = l + (u - l) * k as f64 / 100.0;
                let relu = z.max(0.0);
                ensure(r.lower(z) <= relu + 1e-12 && relu <= r.upper(z) + 1e-12, || {
                    format!("envelope fails at z = {z} on [{l}, {u}] under {policy:?}")
                })?;
            }
        }
    }
    Ok("relax_relu(-1, 1) upper line 0.5 z + 0.5; stable cases exact; 1000 intervals x 101 points valid".into())
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut points = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    while points < 100 {
        let n = rng.random_range(1..=8);
        let dims = [n, rng.random_range(2..=10), rng.random_range(2..=10), rng.random_range(2..=5)];
        let net = Network::random(&dims, &mut rng).unwrap();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = net.forward_trace(x.view()).unwrap();
        // stay away from ReLU kinks so the function is smooth around x
        if trace.pre.iter().take(net.hidden_depth()).any(|z| z.iter().any(|v| v.abs() < 1e-3)) {
            continue;
        }
        let g: Array1<f64> = (0..dims[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = net.backward(x.view(), g.view()).unwrap();
        let h = 1e-6;
        let numeric: Array1<f64> = (0..n)
            .map(|i| {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                (net.forward(xp.view()).unwrap().dot(&g) - net.forward(xm.view()).unwrap().dot(&g)) / (2.0 * h)
            })
            .collect();
        let norm = |v: &Array1<f64>| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = norm(&(&analytic - &numeric)) / norm(&analytic).max(1e-8);
        worst = worst.max(rel);
        ensure(rel <= 1e-4, || format!("point {points}: relative error {rel:.2e}"))?;
        points += 1;
    }
    Ok(format!("100 points, largest relative error {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("barrier ordering", barrier_ordering),
        ("primal-dual greedy equivalence", primal_dual_equivalence),
        ("duality witnesses", duality_witnesses),
        ("exactness cases", exactness_cases),
        ("soundness fuzz", soundness_fuzz),
        ("eps-search protocol", eps_search_protocol),
        ("random MLP percentage gap", random_mlp_gap),
        ("ReLU relaxation values", relaxation_values),
        ("gradient check", gradient_check),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
