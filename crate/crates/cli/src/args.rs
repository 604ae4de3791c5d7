use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use relaxbench::attack::AttackConfig;
use relaxbench::certify::{CertifyConfig, Method};
use relaxbench::lp::SolverConfig;
use relaxbench::oracle::DEFAULT_UNSTABLE_LIMIT;

#[derive(Parser, Debug)]
#[command(name = "relaxbench", version, about = "Verify ReLU networks with convex relaxations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verdict of every method on every sample at a fixed radius.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        eps: f64,
    },
    /// Certified and attacked radii per sample, with the percentage gap.
    EpsSearch {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Lower and upper bounds on the robust error at a fixed radius.
    RobustError {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        eps: f64,
    },
    /// Preactivation bounds of one sample as JSON.
    BoundsDump {
        #[command(flatten)]
        point: PointArgs,
        /// Bound method: ibp, greedy-fastlin, greedy-crown, greedy-zero, lp-all.
        #[arg(long, default_value = "greedy-fastlin", value_parser = parse_method)]
        method: Method,
        /// Also write the relaxed LP of every neuron lower bound to this directory.
        #[arg(long)]
        lp_dump: Option<PathBuf>,
    },
    /// Exact minimum of every margin of one sample.
    Oracle {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = DEFAULT_UNSTABLE_LIMIT)]
        limit: usize,
    },
    /// Write a randomly initialized network.
    GenNet {
        /// Layer widths, input first.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write uniform [0, 1] inputs labelled by a network.
    GenData {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Choice {
    Method(Method),
    Pgd,
}

fn parse_choice(s: &str) -> Result<Choice, String> {
    if s == "pgd" {
        return Ok(Choice::Pgd);
    }
    parse_method(s).map(Choice::Method)
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method {s:?}, expected one of {}, pgd", names.join(", "))
    })
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated list of ibp, greedy-fastlin, greedy-crown,
    /// greedy-zero, lp-last, lp-all, oracle, pgd.
    #[arg(long, value_delimiter = ',', value_parser = parse_choice, default_value = "greedy-fastlin")]
    pub methods: Vec<Choice>,
    /// Use only the first N samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_UNSTABLE_LIMIT)]
    pub oracle_limit: usize,
    /// Worker threads; defaults to the number of hardware threads.
    #[arg(long, env = "RELAXBENCH_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path; the JSON summary goes next to it. Without it the CSV
    /// is printed and the summary goes to stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record wall-clock time per row.
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for c in &self.methods {
            if let Choice::Method(m) = c {
                if !out.contains(m) {
                    out.push(*m);
                }
            }
        }
        out
    }

    pub fn wants_pgd(&self) -> bool {
        self.methods.contains(&Choice::Pgd)
    }

    pub fn certify(&self) -> CertifyConfig {
        CertifyConfig {
            solver: self.solver.config(),
            oracle_limit: self.oracle_limit,
        }
    }
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long, default_value_t = 100)]
    pub pgd_steps: usize,
    #[arg(long, default_value_t = 10)]
    pub pgd_restarts: usize,
    /// Absolute step; defaults to a tenth of the radius.
    #[arg(long)]
    pub pgd_step_size: Option<f64>,
}

impl AttackArgs {
    pub fn config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            steps: self.pgd_steps,
            step_size: self.pgd_step_size,
            restarts: self.pgd_restarts,
            seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol_feas: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_opt: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            feasibility_tol: self.tol_feas,
            optimality_tol: self.tol_opt,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct PointArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Row of the dataset.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
