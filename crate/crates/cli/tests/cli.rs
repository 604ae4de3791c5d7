use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relaxbench"));
    c.env_remove("RELAXBENCH_JOBS");
    c
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[derive(Debug, serde::Deserialize)]
struct Row {
    sample_id: usize,
    clean_correct: bool,
    method: String,
    verdict: String,
    eps_lower: Option<f64>,
    eps_upper: Option<f64>,
}

fn rows(path: &Path) -> Vec<Row> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

/// Random 5-10-10-3 net with a 12-sample dataset labelled by the net itself.
fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["gen-net", "--dims", "5,10,10,3", "--seed", "4", "--out", "net.json"], dir.path());
    run_ok(&["gen-data", "--net", "net.json", "--n", "12", "--seed", "5", "--out", "d.csv"], dir.path());
    dir
}

#[test]
fn zero_radius_certifies_every_correct_sample() {
    let dir = setup();
    run_ok(
        &["verify", "--net", "net.json", "--dataset", "d.csv", "--eps", "0", "--methods", "greedy-fastlin", "--out", "v.csv"],
        dir.path(),
    );
    let rs = rows(&dir.path().join("v.csv"));
    assert_eq!(rs.len(), 12);
    for r in rs {
        assert_eq!(r.verdict == "robust", r.clean_correct, "{r:?}");
    }
    assert!(dir.path().join("v.summary.json").exists());
}

#[test]
fn verdicts_respect_method_strength() {
    let dir = setup();
    for eps in ["0.02", "0.08", "0.2"] {
        run_ok(
            &[
                "verify", "--net", "net.json", "--dataset", "d.csv", "--eps", eps, "--methods",
                "greedy-fastlin,lp-last,lp-all,pgd", "--out", "v.csv",
            ],
            dir.path(),
        );
        let mut by_sample: HashMap<usize, HashMap<String, String>> = HashMap::new();
        for r in rows(&dir.path().join("v.csv")) {
            by_sample.entry(r.sample_id).or_default().insert(r.method, r.verdict);
        }
        for (id, v) in by_sample {
            let robust = |m: &str| v[m] == "robust";
            assert!(!robust("greedy-fastlin") || robust("lp-last"), "sample {id} at {eps}");
            assert!(!robust("lp-last") || robust("lp-all"), "sample {id} at {eps}");
            assert!(!(robust("lp-all") && v["pgd"] == "not_robust"), "sample {id} at {eps}");
        }
    }
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = setup();
    let out = bin()
        .args(["verify", "--net", "net.json", "--dataset", "d.csv", "--eps", "0.1", "--methods", "lp-some"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lp-some"));
}

#[test]
fn missing_network_fails() {
    let dir = setup();
    let out = bin()
        .args(["verify", "--net", "nope.json", "--dataset", "d.csv", "--eps", "0.1"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn no_samples_gives_empty_report() {
    let dir = setup();
    run_ok(
        &["eps-search", "--net", "net.json", "--dataset", "d.csv", "--samples", "0", "--out", "e.csv"],
        dir.path(),
    );
    assert!(rows(&dir.path().join("e.csv")).is_empty());
}

#[test]
fn robust_error_at_zero_is_clean_error() {
    let dir = setup();
    // flip two labels so the clean error is nonzero
    let path = dir.path().join("d.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let flipped: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i < 2 {
                let (label, rest) = l.split_once(',').unwrap();
                format!("{},{rest}", (label.parse::<usize>().unwrap() + 1) % 3)
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&path, flipped.join("\n")).unwrap();
    run_ok(
        &[
            "robust-error", "--net", "net.json", "--dataset", "d.csv", "--eps", "0", "--methods",
            "greedy-fastlin,lp-all,pgd", "--out", "r.csv",
        ],
        dir.path(),
    );
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.summary.json")).unwrap()).unwrap();
    let clean = s["clean_error"].as_f64().unwrap();
    assert!((clean - 2.0 / 12.0).abs() < 1e-12);
    assert_eq!(s["robust_error_lower"].as_f64().unwrap(), clean);
    for (_, u) in s["robust_error_upper"].as_object().unwrap() {
        assert_eq!(u.as_f64().unwrap(), clean);
    }
}

#[test]
fn output_is_reproducible_apart_from_header() {
    let dir = setup();
    let body = |jobs: &str, name: &str| {
        run_ok(
            &[
                "verify", "--net", "net.json", "--dataset", "d.csv", "--eps", "0.1", "--methods",
                "greedy-crown,lp-all,pgd", "--seed", "9", "--jobs", jobs, "--out", name,
            ],
            dir.path(),
        );
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(body("1", "a.csv"), body("3", "b.csv"));
}

#[test]
fn dumped_bounds_contain_sampled_preactivations() {
    use rand::SeedableRng;
    let dir = setup();
    let eps = 0.1;
    let out = run_ok(
        &["bounds-dump", "--net", "net.json", "--dataset", "d.csv", "--sample", "3", "--eps", "0.1", "--method", "lp-all", "--lp-dump", "lps"],
        dir.path(),
    );
    let bounds = relaxbench::bounds::bounds_from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(bounds.len(), 2);
    assert!(dir.path().join("lps/layer_1_0_min.lp").exists());
    assert!(dir.path().join("lps/layer_1_9_min.lp").exists());

    let net = relaxbench::Network::load(dir.path().join("net.json")).unwrap();
    let data = relaxbench::dataset::Dataset::<f64>::load(dir.path().join("d.csv")).unwrap();
    let region = relaxbench::InputRegion::unit_clipped(data.samples[3].input.clone(), eps).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let x = region.sample(&mut rng);
        let trace = net.forward_trace(x.view()).unwrap();
        for (b, z) in bounds.iter().zip(&trace.pre) {
            assert!(b.contains(z.view(), 1e-9));
        }
    }
}

#[test]
fn oracle_on_absolute_value_net_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("abs.json"),
        r#"{"layers":[{"weights":[[1.0],[-1.0]],"bias":[0.0,0.0]},{"weights":[[1.0,1.0],[0.0,0.0]],"bias":[0.0,0.0]}]}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("p.csv"), "0,0.0\n").unwrap();
    let out = run_ok(&["oracle", "--net", "abs.json", "--dataset", "p.csv", "--eps", "1"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let m = v["margins"][0]["min_margin"].as_f64().unwrap();
    assert!(m.abs() < 1e-9, "{m}");
    assert_eq!(v["robust"], false);
}

#[test]
fn linear_sample_searches_hit_critical_radius() {
    let dir = tempfile::tempdir().unwrap();
    // margin (x0 - 2 x1) - 0.1 at (0.5, 0.1) is 0.2 with |c|_1 = 3
    std::fs::write(
        dir.path().join("lin.json"),
        r#"{"layers":[{"weights":[[1.0,-2.0],[0.0,0.0]],"bias":[0.0,0.1]}]}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("p.csv"), "0,0.5,0.1\n").unwrap();
    run_ok(
        &["eps-search", "--net", "lin.json", "--dataset", "p.csv", "--methods", "greedy-fastlin,lp-last,lp-all", "--out", "e.csv"],
        dir.path(),
    );
    let star = 0.2 / 3.0;
    for r in rows(&dir.path().join("e.csv")) {
        if r.method == "pgd" {
            let e = r.eps_upper.unwrap();
            assert!(e >= star - 1e-12 && e - star <= 1e-4, "{e}");
        } else {
            let e = r.eps_lower.unwrap();
            let tol = if r.method == "greedy-fastlin" { 1e-5 } else { 0.05 * star };
            assert!(e <= star && star - e <= tol, "{}: {e}", r.method);
        }
    }
}
