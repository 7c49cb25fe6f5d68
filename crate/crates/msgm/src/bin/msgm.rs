//! Command-line interface: sweep runners, bound calculators, bracket
//! verification, and the invariant self-test.
//!
//! Exit codes: 0 success, 1 invariant/verification failure, 2 configuration
//! error. `MSGM_THREADS` caps the worker pool.

use clap::{Parser, Subcommand, ValueEnum};
use msgm::bounds::{self, BoundValue, TrainingMode};
use msgm::bracketing::{self, BracketReport};
use msgm::error::Error;
use msgm::experiments::{self, SvgStyle, SweepConfig};
use msgm::gaussian;
use msgm::rng::RngStream;
use rand::Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "msgm", version, about = "Multi-source vs single-source conditional MLE lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Instantiation {
    Gaussian,
    Arm,
    Ebm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Multi,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BracketFamily {
    Gaussian,
    Ebm1d,
    Constant,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Gaussian sweep from a JSON config; writes CSV and optionally SVG.
    GaussianSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run an autoregressive sweep from a JSON config; writes CSV.
    ArmSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Evaluate the explicit bound for one instantiation; prints JSON.
    Bounds {
        #[arg(long, value_enum)]
        instantiation: Instantiation,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Repeated key=value parameters (n, K, d, d1, B, delta, epsilon,
        /// D, M, de, L, W, S as the instantiation requires).
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Construct and numerically verify a bracket family; prints JSON.
    BracketVerify {
        #[arg(long, value_enum)]
        family: BracketFamily,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every invariant suite; exit 1 if any property fails.
    Selftest,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("MSGM_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            _ => {
                eprintln!("error: MSGM_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> msgm::Result<ExitCode> {
    match cli.command {
        Command::GaussianSweep { config, out, svg } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::config(format!("{}: {e}", config.display())))?;
            let cfg = SweepConfig::from_json(&text)?;
            let rows = experiments::run_gaussian_sweep(&cfg)?;
            let provenance = provenance_line(&cfg);
            experiments::emit_csv(&rows, &provenance, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            if let Some(svg_path) = svg {
                let style = style_for(&cfg);
                experiments::emit_svg(&rows, &svg_path, &style)?;
                println!("wrote plot to {}", svg_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ArmSweep { config, out, svg } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::config(format!("{}: {e}", config.display())))?;
            let cfg = SweepConfig::from_json(&text)?;
            let rows = experiments::run_arm_sweep(&cfg)?;
            let provenance = provenance_line(&cfg);
            experiments::emit_csv(&rows, &provenance, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            if let Some(svg_path) = svg {
                let style = style_for(&cfg);
                experiments::emit_svg(&rows, &svg_path, &style)?;
                println!("wrote plot to {}", svg_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds {
            instantiation,
            mode,
            params,
        } => {
            let value = eval_bounds(instantiation, mode, &params)?;
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::BracketVerify {
            family,
            epsilon,
            seed,
        } => {
            let report = bracket_verify(family, epsilon, seed)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.dominance_violations == 0 && report.exact_l1_gap <= report.epsilon {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Selftest => {
            let report = experiments::selftest();
            for e in &report.entries {
                println!(
                    "{} {} / {} — {}",
                    if e.passed { "PASS" } else { "FAIL" },
                    e.module,
                    e.property,
                    e.detail
                );
            }
            if report.all_passed() {
                println!("selftest: all {} properties passed", report.entries.len());
                Ok(ExitCode::SUCCESS)
            } else {
                let failed = report.entries.iter().filter(|e| !e.passed).count();
                println!("selftest: {failed} properties FAILED");
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn provenance_line(cfg: &SweepConfig) -> String {
    format!(
        "experiment={:?} axis={} values={:?} seeds={} master_seed={} delta={} emit_theory={} (gaussian theory uses B=K)",
        cfg.experiment,
        cfg.axis.name(),
        cfg.axis_values,
        cfg.seeds,
        cfg.master_seed,
        cfg.delta,
        cfg.emit_theory
    )
}

fn style_for(cfg: &SweepConfig) -> SvgStyle {
    SvgStyle {
        title: format!("average TV error vs {}", cfg.axis.name()),
        x_label: cfg.axis.name().to_string(),
        y_label: "average TV error".to_string(),
    }
}

fn parse_params(params: &[String]) -> msgm::Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for p in params {
        let (key, value) = p
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {p}")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::config(format!("bad numeric value in {p}")))?;
        map.insert(key.to_string(), v);
    }
    Ok(map)
}

struct ParamReader {
    map: BTreeMap<String, f64>,
}

impl ParamReader {
    fn require(&self, key: &str) -> msgm::Result<f64> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::config(format!("missing --param {key}=...")))
    }

    fn get_or(&self, key: &str, default: f64) -> f64 {
        self.map.get(key).copied().unwrap_or(default)
    }

    fn usize_of(&self, key: &str) -> msgm::Result<usize> {
        let v = self.require(key)?;
        if v.fract() != 0.0 || v < 0.0 {
            return Err(Error::config(format!("{key} must be a nonnegative integer")));
        }
        Ok(v as usize)
    }

    fn u64_of(&self, key: &str) -> msgm::Result<u64> {
        let v = self.require(key)?;
        if v.fract() != 0.0 || v < 0.0 {
            return Err(Error::config(format!("{key} must be a nonnegative integer")));
        }
        Ok(v as u64)
    }
}

fn eval_bounds(
    instantiation: Instantiation,
    mode: Mode,
    params: &[String],
) -> msgm::Result<BoundValue> {
    let reader = ParamReader {
        map: parse_params(params)?,
    };
    let mode = match mode {
        Mode::Multi => TrainingMode::Multi,
        Mode::Single => TrainingMode::Single,
    };
    match instantiation {
        Instantiation::Gaussian => {
            let n = reader.u64_of("n")?;
            let p = bounds::GaussianBoundParams {
                n,
                k: reader.usize_of("K")?,
                d: reader.usize_of("d")?,
                d1: reader.usize_of("d1")?,
                box_bound: reader.require("B")?,
                delta: reader.get_or("delta", 0.1),
                epsilon: reader.get_or("epsilon", 1.0 / n as f64),
            };
            bounds::gaussian_bound(&p, mode)
        }
        Instantiation::Arm => {
            let n = reader.u64_of("n")?;
            let p = bounds::ArmBoundParams {
                n,
                k: reader.usize_of("K")?,
                seq_len: reader.usize_of("D")?,
                vocab: reader.usize_of("M")?,
                embed_dim: reader.usize_of("de")?,
                depth: reader.usize_of("L")?,
                width: reader.usize_of("W")?,
                sparsity: reader.u64_of("S")?,
                norm_bound: reader.get_or("B", 1.0),
                delta: reader.get_or("delta", 0.1),
                epsilon: reader.get_or("epsilon", 1.0 / n as f64),
            };
            bounds::arm_bound(&p, mode)
        }
        Instantiation::Ebm => {
            let n = reader.u64_of("n")?;
            let p = bounds::EbmBoundParams {
                n,
                k: reader.usize_of("K")?,
                embed_dim: reader.usize_of("de")?,
                depth: reader.usize_of("L")?,
                width: reader.usize_of("W")?,
                sparsity: reader.u64_of("S")?,
                norm_bound: reader.get_or("B", 1.0),
                delta: reader.get_or("delta", 0.1),
                epsilon: reader.get_or("epsilon", 1.0 / n as f64),
            };
            bounds::ebm_bound(&p, mode)
        }
    }
}

fn bracket_verify(
    family: BracketFamily,
    epsilon: f64,
    seed: u64,
) -> msgm::Result<BracketReport> {
    let stream = RngStream::new(seed);
    match family {
        BracketFamily::Gaussian => {
            // Canned protocol target: K=5, d=10, beta=0.5, box B=K.
            let target = gaussian::make_sim_family(5, 10, 0.5)?;
            let elem = bracketing::gaussian_bracket_cover(&target, 5.0, epsilon)?;
            let mut report =
                bracketing::gaussian_bracket_verify(&elem, &target, 10_000, &stream)?;
            let count = bracketing::gaussian_bracket_count(
                5,
                10,
                5,
                5.0,
                epsilon,
                TrainingMode::Multi,
            )?;
            if !count.estimated {
                report.log_cardinality = Some(count.log_count);
            }
            Ok(report)
        }
        BracketFamily::Ebm1d => {
            let energy = bracketing::EnergyGrid1D::random_piecewise_linear(
                4097,
                12,
                3.0,
                &stream.child(0),
            )?;
            bracketing::ebm_bracket_verify_1d(&energy, epsilon, &stream.child(1))
        }
        BracketFamily::Constant => {
            let levels = bracketing::constant_function_bracket(epsilon)?;
            let mut rng = stream.rng();
            let mut violations = 0usize;
            let mut max_gap = 0.0f64;
            let probes = 1000;
            for _ in 0..probes {
                let c: f64 = rng.random_range(0.0..=1.0);
                match bracketing::constant_bracket_level(&levels, c) {
                    Some(level) if level >= c => max_gap = max_gap.max(level - c),
                    _ => violations += 1,
                }
            }
            Ok(BracketReport {
                dominance_violations: violations,
                probes,
                exact_l1_gap: max_gap,
                epsilon,
                log_cardinality: Some((levels.len() as f64).ln()),
            })
        }
    }
}
