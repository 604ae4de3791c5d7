mod args;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use relaxbench::attack::pgd_attack;
use relaxbench::bounds::{bounds_to_json, propagate_bounds, BoundMethod, SlopePolicy};
use relaxbench::certify::{
    eps_search_sample, percentage_gap, robust_error_bounds, sample_region, sample_seed, verify_point, Method, Verdict,
};
use relaxbench::dataset::{uniform_labelled, Dataset};
use relaxbench::lp::{build_relaxed_lp_at, lp_all_bounds, write_lp_file};
use relaxbench::oracle::exact_min;
use relaxbench::report::{median, median_ci95, write_records, SampleRecord};
use relaxbench::{Error, Network, Result};

use args::{Cli, Command, PointArgs, RunArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify { run, eps } => cmd_verify(&run, eps),
        Command::EpsSearch { run } => cmd_eps_search(&run),
        Command::RobustError { run, eps } => cmd_robust_error(&run, eps),
        Command::BoundsDump { point, method, lp_dump } => cmd_bounds_dump(&point, method, lp_dump.as_deref()),
        Command::Oracle { point, limit } => cmd_oracle(&point, limit),
        Command::GenNet { dims, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Network::random(&dims, &mut rng)?.save(out)
        }
        Command::GenData { net, n, seed, out } => {
            let net = Network::load(net)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            uniform_labelled(&net, n, &mut rng)?.save(out)
        }
    }
}

struct Loaded {
    net: Network,
    data: Dataset<f64>,
    unit: bool,
}

fn load(run: &RunArgs) -> Result<Loaded> {
    if let Some(jobs) = run.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let net = Network::load(&run.net)?;
    let mut data = Dataset::load(&run.dataset)?;
    if let Some(n) = run.samples {
        data.samples.truncate(n);
    }
    data.check(&net)?;
    let unit = data.is_unit_scaled();
    Ok(Loaded { net, data, unit })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("--eps must be a nonnegative number, got {eps}")));
    }
    Ok(())
}

fn blank(sample_id: usize, label: usize, clean_correct: bool, method: &str) -> SampleRecord {
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

fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

fn emit<S: Serialize>(run: &RunArgs, command: &str, mut records: Vec<SampleRecord>, summary: &S) -> Result<()> {
    if !run.timing {
        for r in &mut records {
            r.wall_time_s = None;
        }
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let comment = format!("relaxbench {command}, written at unix time {stamp}");
    let summary = serde_json::to_string_pretty(summary)?;
    match &run.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
            write_records(std::io::BufWriter::new(file), &records, Some(&comment))?;
            let sp = summary_path(path);
            std::fs::write(&sp, summary + "\n").map_err(|e| io_error(&sp, e))?;
        }
        None => {
            write_records(std::io::stdout().lock(), &records, Some(&comment))?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_verify(run: &RunArgs, eps: f64) -> Result<()> {
    check_eps(eps)?;
    let Loaded { net, data, unit } = load(run)?;
    let methods = run.methods();
    let config = run.certify();
    let rows = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(id, s)| -> Result<Vec<SampleRecord>> {
            let region = sample_region(s.input.view(), eps, unit)?;
            let clean = net.predict(s.input.view())? == s.label;
            let mut out = Vec::new();
            let mut attack_margin = None;
            if run.wants_pgd() {
                let start = Instant::now();
                let adv = if clean {
                    pgd_attack(&net, &region, s.label, &run.attack.config(sample_seed(run.seed, id)))?
                } else {
                    None
                };
                attack_margin = adv.as_ref().map(|a| a.margin);
                let mut r = blank(id, s.label, clean, "pgd");
                r.verdict = if adv.is_some() || !clean { "not_robust" } else { "unknown" }.into();
                r.margin_min = attack_margin;
                r.wall_time_s = Some(start.elapsed().as_secs_f64());
                out.push(r);
            }
            for &m in &methods {
                let start = Instant::now();
                let mut v = verify_point(&net, &region, s.label, m, &config)?;
                if let Verdict::Unknown { attack_margin: am, .. } = &mut v {
                    *am = attack_margin;
                }
                let mut r = blank(id, s.label, clean, m.name());
                r.verdict = v.kind().into();
                r.margin_min = v.min_margin();
                r.wall_time_s = Some(start.elapsed().as_secs_f64());
                out.push(r);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<SampleRecord> = rows.into_iter().flatten().collect();

    let mut names: Vec<&str> = Vec::new();
    if run.wants_pgd() {
        names.push("pgd");
    }
    names.extend(methods.iter().map(|m| m.name()));
    let per_method: Vec<_> = names
        .iter()
        .map(|&name| {
            let count = |kind: &str| records.iter().filter(|r| r.method == name && r.verdict == kind).count();
            json!({
                "method": name,
                "robust": count("robust"),
                "not_robust": count("not_robust"),
                "unknown": count("unknown"),
            })
        })
        .collect();
    let clean = data
        .samples
        .iter()
        .filter(|s| net.predict(s.input.view()).map(|p| p == s.label).unwrap_or(false))
        .count();
    let summary = json!({
        "command": "verify",
        "eps": eps,
        "samples": data.len(),
        "clean_correct": clean,
        "methods": per_method,
    });
    emit(run, "verify", records, &summary)
}

#[derive(Serialize)]
struct GapRow {
    method: String,
    samples: usize,
    median_eps_lower: Option<f64>,
    median_gap_percent: Option<f64>,
    gap_ci95: Option<(f64, f64)>,
}

fn cmd_eps_search(run: &RunArgs) -> Result<()> {
    let Loaded { net, data, unit } = load(run)?;
    let methods = run.methods();
    let config = run.certify();
    let rows = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(id, s)| -> Result<Vec<SampleRecord>> {
            let clean = net.predict(s.input.view())? == s.label;
            let mut out = Vec::new();
            if !clean {
                for name in methods.iter().map(|m| m.name()).chain(["pgd"]) {
                    let mut r = blank(id, s.label, false, name);
                    r.verdict = "not_robust".into();
                    r.eps_lower = Some(0.0);
                    r.eps_upper = Some(0.0);
                    out.push(r);
                }
                return Ok(out);
            }
            let start = Instant::now();
            let base = sample_region(s.input.view(), 0.0, unit)?;
            let attack = run.attack.config(sample_seed(run.seed, id));
            let results = eps_search_sample(&net, &base, s.label, &methods, Some(&attack), &config)?;
            let elapsed = start.elapsed().as_secs_f64();
            let (lower, pgd) = results.split_at(methods.len());
            let eps_pgd = pgd[0].eps;
            for r in lower {
                let mut rec = blank(id, s.label, true, &r.method);
                rec.verdict = if r.eps > 0.0 { "robust" } else { "unknown" }.into();
                rec.eps_lower = Some(r.eps);
                rec.eps_upper = Some(eps_pgd);
                rec.gap_percent = if eps_pgd.is_finite() { Some(percentage_gap(eps_pgd, r.eps)?) } else { None };
                rec.wall_time_s = Some(elapsed);
                out.push(rec);
            }
            let mut rec = blank(id, s.label, true, "pgd");
            rec.verdict = if eps_pgd.is_finite() { "not_robust" } else { "unknown" }.into();
            rec.eps_upper = Some(eps_pgd);
            rec.wall_time_s = Some(elapsed);
            out.push(rec);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<SampleRecord> = rows.into_iter().flatten().collect();

    let table: Vec<GapRow> = methods
        .iter()
        .map(|m| {
            let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.method == m.name() && r.clean_correct).collect();
            let gaps: Vec<f64> = mine.iter().filter_map(|r| r.gap_percent).collect();
            let eps: Vec<f64> = mine.iter().filter_map(|r| r.eps_lower).collect();
            GapRow {
                method: m.name().into(),
                samples: mine.len(),
                median_eps_lower: median(&eps),
                median_gap_percent: median(&gaps),
                gap_ci95: median_ci95(&gaps),
            }
        })
        .collect();
    let pgd: Vec<f64> = records
        .iter()
        .filter(|r| r.method == "pgd" && r.clean_correct)
        .filter_map(|r| r.eps_upper)
        .collect();
    let summary = json!({
        "command": "eps-search",
        "samples": data.len(),
        "median_eps_pgd": median(&pgd),
        "methods": table,
    });
    emit(run, "eps-search", records, &summary)
}

fn cmd_robust_error(run: &RunArgs, eps: f64) -> Result<()> {
    check_eps(eps)?;
    let Loaded { net, data, .. } = load(run)?;
    if data.is_empty() {
        let summary = json!({ "command": "robust-error", "eps": eps, "samples": 0 });
        return emit(run, "robust-error", Vec::new(), &summary);
    }
    let attack = run.attack.config(run.seed);
    let report = robust_error_bounds(
        &net,
        &data,
        eps,
        &run.methods(),
        run.wants_pgd().then_some(&attack),
        &run.certify(),
    )?;
    let upper: serde_json::Map<String, serde_json::Value> =
        report.upper.iter().map(|(m, u)| (m.clone(), json!(u))).collect();
    let summary = json!({
        "command": "robust-error",
        "eps": report.eps,
        "samples": report.samples,
        "clean_error": report.clean_error,
        "robust_error_lower": report.lower,
        "robust_error_upper": upper,
    });
    emit(run, "robust-error", report.records, &summary)
}

fn load_point(point: &PointArgs) -> Result<(Network, relaxbench::InputRegion, usize)> {
    check_eps(point.eps)?;
    let net = Network::load(&point.net)?;
    let data = Dataset::load(&point.dataset)?;
    data.check(&net)?;
    let s = data.samples.get(point.sample).ok_or_else(|| {
        Error::InvalidArgument(format!("sample {} out of range, dataset has {}", point.sample, data.len()))
    })?;
    let region = sample_region(s.input.view(), point.eps, data.is_unit_scaled())?;
    Ok((net, region, s.label))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| io_error(path, e)),
        None => writeln!(std::io::stdout(), "{text}").map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn cmd_bounds_dump(point: &PointArgs, method: Method, lp_dump: Option<&Path>) -> Result<()> {
    let (net, region, _) = load_point(point)?;
    let solver = point.solver.config();
    let bounds = match method {
        Method::Interval => propagate_bounds(&net, &region, &BoundMethod::Interval)?,
        Method::Greedy(p) => propagate_bounds(&net, &region, &BoundMethod::GreedyPrimal(p))?,
        Method::LpLast => propagate_bounds(&net, &region, &BoundMethod::GreedyPrimal(SlopePolicy::FastLin))?,
        Method::LpAll | Method::Exact => lp_all_bounds(&net, &region, &solver)?,
    };
    if let Some(dir) = lp_dump {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        for l in 1..bounds.len() {
            let mut rl = build_relaxed_lp_at(&net, &region, &bounds, l, None)?;
            let layer = net.layer(l);
            for j in 0..layer.output_dim() {
                let obj = rl.objective_on_last(layer.weights().row(j));
                rl.lp.set_objective(obj, layer.bias()[j]);
                write_lp_file(&rl.lp, dir.join(format!("layer_{l}_{j}_min.lp")))?;
            }
        }
    }
    write_text(point.out.as_deref(), &bounds_to_json(&bounds))
}

fn cmd_oracle(point: &PointArgs, limit: usize) -> Result<()> {
    let (net, region, label) = load_point(point)?;
    let predicted = net.predict(region.center().view())?;
    let bounds = lp_all_bounds(&net, &region, &point.solver.config())?;
    let mut margins = Vec::new();
    for (j, spec) in net.margin_specs(label)? {
        let m = exact_min(&net, &region, &spec, &bounds, limit)?;
        margins.push(json!({
            "class": j,
            "min_margin": m.value,
            "argmin": m.argmin.to_vec(),
            "lps_solved": m.lps_solved,
        }));
    }
    let robust = predicted == label && margins.iter().all(|m| m["min_margin"].as_f64().is_some_and(|v| v > 0.0));
    let out = json!({
        "sample": point.sample,
        "label": label,
        "predicted": predicted,
        "eps": point.eps,
        "robust": robust,
        "margins": margins,
    });
    write_text(point.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}
