//! Config-driven sweep runner: reproduces the simulation panels (average TV
//! error vs K, n, or similarity for the Gaussian instantiation; vs K, n, or
//! D for the autoregressive one), emits CSV and SVG, and hosts the
//! invariant self-test suite.

mod selftest;
mod svg;

pub use selftest::{max_grad_rel_error, selftest, SelftestReport};
pub use svg::{emit_svg, SvgStyle};

use crate::arm::{self, ArmConfig, StrategyParams, TokenDataset, TrainSpec};
use crate::bounds::{self, TrainingMode};
use crate::data::{mean_and_std, sample_labels, SourceLabel, SourceWeights};
use crate::error::{Error, Result};
use crate::gaussian;
use crate::rng::RngStream;
use rayon::prelude::*;
use serde::Deserialize;
use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Gaussian,
    Arm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub enum Axis {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "beta_sim")]
    BetaSim,
    #[serde(rename = "D")]
    D,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "K",
            Axis::N => "n",
            Axis::BetaSim => "beta_sim",
            Axis::D => "D",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Multi,
    Single,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Multi => "multi",
            Strategy::Single => "single",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    MonteCarlo,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Exact => "exact",
            Estimator::MonteCarlo => "monte_carlo",
        })
    }
}

/// Fixed (non-axis) parameters of a sweep. Unknown keys are configuration
/// errors. Training knobs apply to the autoregressive experiment only.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub n: Option<u64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub beta_sim: Option<f64>,
    pub n_test: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "D")]
    pub seq_len: Option<usize>,
    pub de: Option<usize>,
    #[serde(rename = "L")]
    pub depth: Option<usize>,
    #[serde(rename = "W")]
    pub width: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub iters: Option<usize>,
    /// Dirichlet concentration of the ground-truth tables (default 1).
    pub concentration: Option<f64>,
    /// Convex weight of the shared component in the ground-truth tables
    /// (default 0: fully independent sources).
    pub truth_shared_weight: Option<f64>,
}

fn default_delta() -> f64 {
    0.1
}

/// Declarative sweep description, deserialized from JSON with exactly these
/// field names; unknown keys are rejected.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub axis: Axis,
    pub axis_values: Vec<f64>,
    pub fixed: FixedParams,
    pub seeds: usize,
    pub master_seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub emit_theory: bool,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis_values.is_empty() {
            return Err(Error::config("axis_values must be nonempty"));
        }
        if self.axis_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("axis_values must be strictly increasing"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::config("delta must be in (0, 1/2]"));
        }
        let integral = |name: &str| -> Result<()> {
            if self
                .axis_values
                .iter()
                .any(|&v| v.fract() != 0.0 || v < 1.0)
            {
                return Err(Error::config(format!(
                    "axis {name} requires integer values >= 1"
                )));
            }
            Ok(())
        };
        let need = |field: Option<bool>, name: &str| -> Result<()> {
            match field {
                Some(true) => Ok(()),
                _ => Err(Error::config(format!("fixed.{name} is required"))),
            }
        };
        match self.experiment {
            Experiment::Gaussian => {
                match self.axis {
                    Axis::K | Axis::N => integral(self.axis.name())?,
                    Axis::BetaSim => {
                        if self.axis_values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                            return Err(Error::config("beta_sim values must lie in [0, 1]"));
                        }
                    }
                    Axis::D => {
                        return Err(Error::config(
                            "axis D is only available for the arm experiment",
                        ))
                    }
                }
                need(self.fixed.d.map(|v| v >= 1), "d")?;
                if self.axis != Axis::N {
                    need(self.fixed.n.map(|v| v >= 1), "n")?;
                }
                if self.axis != Axis::K {
                    need(self.fixed.k.map(|v| v >= 1), "K")?;
                }
                if self.axis != Axis::BetaSim {
                    need(
                        self.fixed.beta_sim.map(|v| (0.0..=1.0).contains(&v)),
                        "beta_sim",
                    )?;
                }
            }
            Experiment::Arm => {
                match self.axis {
                    Axis::K | Axis::N | Axis::D => integral(self.axis.name())?,
                    Axis::BetaSim => {
                        return Err(Error::config(
                            "axis beta_sim is only available for the gaussian experiment",
                        ))
                    }
                }
                need(self.fixed.m.map(|v| v >= 2), "M")?;
                need(self.fixed.de.map(|v| v >= 1), "de")?;
                need(self.fixed.depth.map(|v| v >= 1), "L")?;
                need(self.fixed.width.map(|v| v >= 1), "W")?;
                need(self.fixed.lr.map(|v| v > 0.0 || v == 0.0), "lr")?;
                need(self.fixed.batch.map(|v| v >= 1), "batch")?;
                need(self.fixed.iters.map(|_| true), "iters")?;
                if self.axis != Axis::N {
                    need(self.fixed.n.map(|v| v >= 1), "n")?;
                }
                if self.axis != Axis::K {
                    need(self.fixed.k.map(|v| v >= 1), "K")?;
                }
                if self.axis != Axis::D {
                    need(self.fixed.seq_len.map(|v| v >= 1), "D")?;
                }
            }
        }
        Ok(())
    }
}

/// One aggregated line of a sweep: the mean/std of the average TV error for
/// one (axis value, strategy, estimator) cell, plus the theory curve value
/// when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_name: String,
    pub axis_value: f64,
    pub strategy: Strategy,
    pub estimator: Estimator,
    pub mean_tv: f64,
    pub std_tv: f64,
    pub n_runs: usize,
    pub theory_bound: Option<f64>,
}

struct GaussianCell {
    multi_exact: f64,
    single_exact: f64,
    multi_mc: f64,
    single_mc: f64,
}

/// Stream ids: one branch per experiment kind, then (axis index, seed).
const GAUSSIAN_STREAM: u64 = 1;
const ARM_STREAM: u64 = 2;

/// Run the Gaussian sweep: per (axis value, seed) draw a dataset from the
/// ground-truth family, fit both strategies analytically, and record both
/// the exact and the Monte-Carlo average TV error. Cells run in parallel
/// and merge in deterministic order.
pub fn run_gaussian_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.experiment != Experiment::Gaussian {
        return Err(Error::config("config is not a gaussian sweep"));
    }
    let n_test = cfg.fixed.n_test.unwrap_or(500);
    let root = RngStream::new(cfg.master_seed).child(GAUSSIAN_STREAM);

    let cells: Vec<(usize, usize)> = (0..cfg.axis_values.len())
        .flat_map(|ai| (0..cfg.seeds).map(move |si| (ai, si)))
        .collect();
    let results: Vec<GaussianCell> = cells
        .par_iter()
        .map(|&(ai, si)| -> Result<GaussianCell> {
            let axis_value = cfg.axis_values[ai];
            let k = match cfg.axis {
                Axis::K => axis_value as usize,
                _ => cfg.fixed.k.unwrap(),
            };
            let n = match cfg.axis {
                Axis::N => axis_value as u64,
                _ => cfg.fixed.n.unwrap(),
            } as usize;
            let beta = match cfg.axis {
                Axis::BetaSim => axis_value,
                _ => cfg.fixed.beta_sim.unwrap(),
            };
            let d = cfg.fixed.d.unwrap();
            let stream = root.descend(&[ai as u64, si as u64]);
            let truth = gaussian::make_sim_family(k, d, beta)?;
            let w = SourceWeights::uniform(k);
            let ds = gaussian::sample_dataset(&truth, &w, n, &stream.child(0))?;
            let multi = gaussian::fit_multi(&ds, truth.d1())?;
            let single = gaussian::fit_single(&ds, truth.d1())?;
            // One shared test stream per cell: both strategies are scored
            // on the same Monte-Carlo draw.
            let test_stream = stream.child(1);
            Ok(GaussianCell {
                multi_exact: gaussian::avg_tv_exact(&multi, &truth, &w)?,
                single_exact: gaussian::avg_tv_exact(&single, &truth, &w)?,
                multi_mc: gaussian::tv_monte_carlo(&multi, &truth, &w, n_test, &test_stream)?,
                single_mc: gaussian::tv_monte_carlo(&single, &truth, &w, n_test, &test_stream)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (ai, &axis_value) in cfg.axis_values.iter().enumerate() {
        let cell_range = ai * cfg.seeds..(ai + 1) * cfg.seeds;
        let theory = |mode: TrainingMode| -> Result<Option<f64>> {
            if !cfg.emit_theory {
                return Ok(None);
            }
            let k = match cfg.axis {
                Axis::K => axis_value as usize,
                _ => cfg.fixed.k.unwrap(),
            };
            let n = match cfg.axis {
                Axis::N => axis_value as u64,
                _ => cfg.fixed.n.unwrap(),
            };
            let beta = match cfg.axis {
                Axis::BetaSim => axis_value,
                _ => cfg.fixed.beta_sim.unwrap(),
            };
            let d = cfg.fixed.d.unwrap();
            let d1 = d - (beta * d as f64).floor() as usize;
            // Box bound B = K: the smallest box containing every true mean.
            let params = bounds::GaussianBoundParams {
                n,
                k,
                d,
                d1,
                box_bound: k as f64,
                delta: cfg.delta,
                epsilon: 1.0 / n as f64,
            };
            Ok(Some(bounds::gaussian_bound(&params, mode)?.tv_bound))
        };
        for strategy in [Strategy::Multi, Strategy::Single] {
            let mode = match strategy {
                Strategy::Multi => TrainingMode::Multi,
                Strategy::Single => TrainingMode::Single,
            };
            let bound = theory(mode)?;
            for estimator in [Estimator::Exact, Estimator::MonteCarlo] {
                let values: Vec<f64> = results[cell_range.clone()]
                    .iter()
                    .map(|c| match (strategy, estimator) {
                        (Strategy::Multi, Estimator::Exact) => c.multi_exact,
                        (Strategy::Single, Estimator::Exact) => c.single_exact,
                        (Strategy::Multi, Estimator::MonteCarlo) => c.multi_mc,
                        (Strategy::Single, Estimator::MonteCarlo) => c.single_mc,
                    })
                    .collect();
                let (mean_tv, std_tv) = mean_and_std(&values)?;
                rows.push(SweepRow {
                    axis_name: cfg.axis.name().to_string(),
                    axis_value,
                    strategy,
                    estimator,
                    mean_tv,
                    std_tv,
                    n_runs: values.len(),
                    theory_bound: bound,
                });
            }
        }
    }
    Ok(rows)
}

struct ArmCell {
    multi_exact: f64,
    single_exact: f64,
}

/// Run one autoregressive cell: generate truths, sample the dataset, train
/// one multi-source model and K single-source models with matched
/// hyperparameters, and evaluate the exact average TV by enumeration.
fn run_arm_cell(
    cfg: &SweepConfig,
    ai: usize,
    si: usize,
    root: &RngStream,
) -> Result<ArmCell> {
    let axis_value = cfg.axis_values[ai];
    let k = match cfg.axis {
        Axis::K => axis_value as usize,
        _ => cfg.fixed.k.unwrap(),
    };
    let n = match cfg.axis {
        Axis::N => axis_value as usize,
        _ => cfg.fixed.n.unwrap() as usize,
    };
    let seq_len = match cfg.axis {
        Axis::D => axis_value as usize,
        _ => cfg.fixed.seq_len.unwrap(),
    };
    let config = ArmConfig {
        vocab: cfg.fixed.m.unwrap(),
        seq_len,
        k,
        embed_dim: cfg.fixed.de.unwrap(),
        depth: cfg.fixed.depth.unwrap(),
        width: cfg.fixed.width.unwrap(),
    };
    config.validate()?;
    config.support_size()?;
    let spec = TrainSpec {
        learning_rate: cfg.fixed.lr.unwrap(),
        batch_size: cfg.fixed.batch.unwrap(),
        iters: cfg.fixed.iters.unwrap(),
    };
    let concentration = cfg.fixed.concentration.unwrap_or(1.0);
    let shared_weight = cfg.fixed.truth_shared_weight.unwrap_or(0.0);

    let stream = root.descend(&[ai as u64, si as u64]);
    let truths = arm::make_truth_tables(
        k,
        config.vocab,
        seq_len,
        concentration,
        shared_weight,
        &stream.child(0),
    )?;
    let w = SourceWeights::uniform(k);
    let labels = sample_labels(&w, n, &stream.child(1));
    let mut counts = vec![0usize; k];
    for l in &labels {
        counts[l.index()] += 1;
    }
    let mut per_source: Vec<std::vec::IntoIter<Vec<u32>>> = truths
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.sample(counts[i], &stream.child(2).child(i as u64))
                .into_iter()
        })
        .collect();
    let samples: Vec<(Vec<u32>, SourceLabel)> = labels
        .iter()
        .map(|l| (per_source[l.index()].next().unwrap(), *l))
        .collect();
    let ds = TokenDataset::new(k, samples)?;

    let init = arm::init_params(config, &stream.child(3))?;
    let (multi, _) = arm::train(&init, &ds, spec, &stream.child(4))?;
    let multi_exact = arm::exact_avg_tv(&StrategyParams::Multi(multi), &truths, &w)?;

    let groups = ds.split_by_source();
    let mut singles = Vec::with_capacity(k);
    for (i, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::EmptySource {
                source_label: i + 1,
            });
        }
        let config1 = ArmConfig { k: 1, ..config };
        let init = arm::init_params(config1, &stream.child(5).child(i as u64))?;
        let ds1 = TokenDataset::new(
            1,
            group
                .iter()
                .map(|x| (x.clone(), SourceLabel::new(1, 1).unwrap()))
                .collect(),
        )?;
        let (model, _) = arm::train(&init, &ds1, spec, &stream.child(6).child(i as u64))?;
        singles.push(model);
    }
    let single_exact = arm::exact_avg_tv(&StrategyParams::Single(singles), &truths, &w)?;
    Ok(ArmCell {
        multi_exact,
        single_exact,
    })
}

/// Run the autoregressive sweep. Cells (and the K+1 training jobs within
/// each cell) are deterministic given the master seed; cells run in
/// parallel and merge in axis order.
pub fn run_arm_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.experiment != Experiment::Arm {
        return Err(Error::config("config is not an arm sweep"));
    }
    let root = RngStream::new(cfg.master_seed).child(ARM_STREAM);
    let cells: Vec<(usize, usize)> = (0..cfg.axis_values.len())
        .flat_map(|ai| (0..cfg.seeds).map(move |si| (ai, si)))
        .collect();
    let results: Vec<ArmCell> = cells
        .par_iter()
        .map(|&(ai, si)| run_arm_cell(cfg, ai, si, &root))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (ai, &axis_value) in cfg.axis_values.iter().enumerate() {
        let cell_range = ai * cfg.seeds..(ai + 1) * cfg.seeds;
        for strategy in [Strategy::Multi, Strategy::Single] {
            let values: Vec<f64> = results[cell_range.clone()]
                .iter()
                .map(|c| match strategy {
                    Strategy::Multi => c.multi_exact,
                    Strategy::Single => c.single_exact,
                })
                .collect();
            let (mean_tv, std_tv) = mean_and_std(&values)?;
            let theory_bound = if cfg.emit_theory {
                Some(arm_theory_bound(cfg, axis_value, strategy)?)
            } else {
                None
            };
            rows.push(SweepRow {
                axis_name: cfg.axis.name().to_string(),
                axis_value,
                strategy,
                estimator: Estimator::Exact,
                mean_tv,
                std_tv,
                n_runs: values.len(),
                theory_bound,
            });
        }
    }
    Ok(rows)
}

/// Theory curve for the autoregressive sweep: the explicit bound with S set
/// to the dense parameter count of the architecture and the norm bound read
/// as 1 (no projection is applied during training).
fn arm_theory_bound(cfg: &SweepConfig, axis_value: f64, strategy: Strategy) -> Result<f64> {
    let k = match cfg.axis {
        Axis::K => axis_value as usize,
        _ => cfg.fixed.k.unwrap(),
    };
    let n = match cfg.axis {
        Axis::N => axis_value as u64,
        _ => cfg.fixed.n.unwrap(),
    };
    let seq_len = match cfg.axis {
        Axis::D => axis_value as usize,
        _ => cfg.fixed.seq_len.unwrap(),
    };
    let config = ArmConfig {
        vocab: cfg.fixed.m.unwrap(),
        seq_len,
        k,
        embed_dim: cfg.fixed.de.unwrap(),
        depth: cfg.fixed.depth.unwrap(),
        width: cfg.fixed.width.unwrap(),
    };
    let sparsity = dense_mlp_params(&config);
    let params = bounds::ArmBoundParams {
        n,
        k,
        seq_len,
        vocab: config.vocab,
        embed_dim: config.embed_dim,
        depth: config.depth,
        width: config.width,
        sparsity,
        norm_bound: 1.0,
        delta: cfg.delta,
        epsilon: 1.0 / n as f64,
    };
    let mode = match strategy {
        Strategy::Multi => TrainingMode::Multi,
        Strategy::Single => TrainingMode::Single,
    };
    Ok(bounds::arm_bound(&params, mode)?.tv_bound)
}

fn dense_mlp_params(config: &ArmConfig) -> u64 {
    let mut dims = Vec::with_capacity(config.depth + 1);
    dims.push(config.seq_len);
    for _ in 1..config.depth {
        dims.push(config.width);
    }
    dims.push(config.vocab);
    dims.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum()
}

/// Format with 6 significant digits in plain decimal.
pub(crate) fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.000000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// CSV text for a row list: one leading `#` provenance line, the fixed
/// header, then one line per row (`theory_bound` empty when absent,
/// reals at 6 significant digits, LF newlines).
pub fn csv_text(rows: &[SweepRow], provenance: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# msgm {} {}\n",
        env!("CARGO_PKG_VERSION"),
        provenance
    ));
    out.push_str("axis,axis_value,strategy,estimator,mean_tv,std_tv,n_runs,theory_bound\n");
    for r in rows {
        let theory = r.theory_bound.map(sig6).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.axis_name,
            r.axis_value,
            r.strategy,
            r.estimator,
            sig6(r.mean_tv),
            sig6(r.std_tv),
            r.n_runs,
            theory
        ));
    }
    out
}

/// Write the CSV for a sweep.
pub fn emit_csv(rows: &[SweepRow], provenance: &str, path: &Path) -> Result<()> {
    std::fs::write(path, csv_text(rows, provenance))?;
    Ok(())
}

/// Parse a CSV produced by [`emit_csv`] (used for round-trip checks).
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("axis,") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::config(format!("bad CSV line: {line}")));
        }
        let parse =
            |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::config(format!("bad number {s}"))) };
        rows.push(SweepRow {
            axis_name: fields[0].to_string(),
            axis_value: parse(fields[1])?,
            strategy: match fields[2] {
                "multi" => Strategy::Multi,
                "single" => Strategy::Single,
                other => return Err(Error::config(format!("bad strategy {other}"))),
            },
            estimator: match fields[3] {
                "exact" => Estimator::Exact,
                "monte_carlo" => Estimator::MonteCarlo,
                other => return Err(Error::config(format!("bad estimator {other}"))),
            },
            mean_tv: parse(fields[4])?,
            std_tv: parse(fields[5])?,
            n_runs: fields[6]
                .parse()
                .map_err(|_| Error::config("bad n_runs"))?,
            theory_bound: if fields[7].is_empty() {
                None
            } else {
                Some(parse(fields[7])?)
            },
        });
    }
    Ok(rows)
}
