//! Radius searches on a randomly initialized 784-100-100-10 network.
//!
//! `cargo run --release -p relaxbench --example gap_random_mlp -- [samples] [lp-all]`

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relaxbench::attack::AttackConfig;
use relaxbench::bounds::SlopePolicy;
use relaxbench::certify::{eps_search_sample, percentage_gap, sample_region, CertifyConfig, Method};
use relaxbench::dataset::uniform_labelled;
use relaxbench::report::median;
use relaxbench::Network;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut methods = vec![Method::Greedy(SlopePolicy::FastLin)];
    if args.iter().any(|a| a == "lp-all") {
        methods.push(Method::LpAll);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2018);
    let net = Network::random(&[784, 100, 100, 10], &mut rng).unwrap();
    let data = uniform_labelled(&net, n, &mut rng).unwrap();
    let mut gaps = vec![Vec::new(); methods.len()];
    for (i, s) in data.samples.iter().enumerate() {
        let start = Instant::now();
        let base = sample_region(s.input.view(), 0.0, true).unwrap();
        let res = eps_search_sample(&net, &base, s.label, &methods, Some(&AttackConfig::default()), &CertifyConfig::default())
            .unwrap();
        let pgd = res.last().unwrap().eps;
        for (k, r) in res[..methods.len()].iter().enumerate() {
            let g = percentage_gap(pgd, r.eps).unwrap();
            gaps[k].push(g);
            println!("sample {i} {}: eps {:.6} pgd {:.6} gap {:.2}% ({} its)", r.method, r.eps, pgd, g, r.iterations);
        }
        println!("sample {i}: {:.1}s", start.elapsed().as_secs_f64());
    }
    for (m, g) in methods.iter().zip(&gaps) {
        println!("{m}: median gap {:.2}%", median(g).unwrap());
    }
}
