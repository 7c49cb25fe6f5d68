//! Invariant self-test suite: runs the per-module property checks at fixed
//! seeds and reports one pass/fail line per property.

use super::{
    csv_text, run_gaussian_sweep, Axis, Experiment, FixedParams, SweepConfig,
};
use crate::arm;
use crate::bounds::{self, TrainingMode};
use crate::bracketing;
use crate::data::{mean_and_std, sample_labels, SourceLabel, SourceWeights};
use crate::gaussian;
use crate::rng::RngStream;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct SelftestEntry {
    pub module: &'static str,
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub entries: Vec<SelftestEntry>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    fn run(
        &mut self,
        module: &'static str,
        property: &'static str,
        check: impl FnOnce() -> Result<String, String>,
    ) {
        let (passed, detail) = match check() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.entries.push(SelftestEntry {
            module,
            property,
            passed,
            detail,
        });
    }
}

fn expect(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Run every invariant suite at fixed seeds.
pub fn selftest() -> SelftestReport {
    let mut report = SelftestReport::default();

    report.run("core", "determinism", || {
        let w = SourceWeights::uniform(4);
        let s = RngStream::new(100).child(1);
        let a = sample_labels(&w, 1000, &s);
        let b = sample_labels(&w, 1000, &s);
        expect(a == b, "replayed stream reproduces labels".into())
    });

    report.run("core", "stream independence", || {
        let n = 100_000;
        let mut ra = RngStream::new(101).child(0).rng();
        let mut rb = RngStream::new(101).child(1).rng();
        let xs: Vec<f64> = (0..n).map(|_| ra.random::<f64>()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rb.random::<f64>()).collect();
        let (mx, _) = mean_and_std(&xs).unwrap();
        let (my, _) = mean_and_std(&ys).unwrap();
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (xs[i] - mx) * (ys[i] - my);
            vx += (xs[i] - mx).powi(2);
            vy += (ys[i] - my).powi(2);
        }
        let r = cov / (vx.sqrt() * vy.sqrt());
        expect(r.abs() < 0.01, format!("|r| = {:.5}", r.abs()))
    });

    report.run("core", "partition identity", || {
        let w = SourceWeights::uniform(5);
        let labels = sample_labels(&w, 2000, &RngStream::new(102));
        let ds = crate::data::LabeledDataset::new(
            5,
            labels.into_iter().enumerate().collect::<Vec<(usize, _)>>()
                .into_iter()
                .map(|(i, l)| (i, l))
                .collect(),
        )
        .unwrap();
        let groups = ds.split_by_source();
        let mut merged: Vec<usize> = groups.concat();
        merged.sort_unstable();
        expect(
            merged == (0..2000).collect::<Vec<_>>(),
            "split then concatenate is a permutation".into(),
        )
    });

    report.run("gaussian", "Monte-Carlo unbiasedness", || {
        let truth = gaussian::make_sim_family(3, 6, 0.5).unwrap();
        let mut est = truth.clone();
        // Fixed perturbation with a known exact TV.
        let perturbed = gaussian::GaussianFamily::new(
            est.d(),
            est.d1(),
            {
                let mut phi: Vec<Vec<f64>> = (1..=3)
                    .map(|v| est.phi(est.label(v).unwrap()).to_vec())
                    .collect();
                phi[0][0] += 0.5;
                phi
            },
            est.psi().clone(),
            gaussian::FamilyMode::MultiEstimate,
        )
        .unwrap();
        est = perturbed;
        let w = SourceWeights::uniform(3);
        let exact = gaussian::avg_tv_exact(&est, &truth, &w).unwrap();
        let root = RngStream::new(103);
        let runs = 200;
        let values: Vec<f64> = (0..runs)
            .map(|i| {
                gaussian::tv_monte_carlo(&est, &truth, &w, 400, &root.child(i)).unwrap()
            })
            .collect();
        let (mean, std) = mean_and_std(&values).unwrap();
        let tol = 3.0 * std / (runs as f64).sqrt();
        expect(
            (mean - exact).abs() <= tol,
            format!("|mean - exact| = {:.2e} <= {:.2e}", (mean - exact).abs(), tol),
        )
    });

    report.run("gaussian", "MLE optimality under perturbation", || {
        let truth = gaussian::make_sim_family(3, 6, 0.5).unwrap();
        let w = SourceWeights::uniform(3);
        let ds = gaussian::sample_dataset(&truth, &w, 150, &RngStream::new(104)).unwrap();
        let fit = gaussian::fit_multi(&ds, truth.d1()).unwrap();
        let base = gaussian::log_likelihood(&fit, &ds);
        let mut ok = true;
        for delta in [1e-3, -1e-3] {
            for v in 1..=3usize {
                let l = fit.label(v).unwrap();
                let mut phi: Vec<Vec<f64>> = (1..=3)
                    .map(|u| fit.phi(fit.label(u).unwrap()).to_vec())
                    .collect();
                phi[l.index()][0] += delta;
                let p = gaussian::GaussianFamily::new(
                    fit.d(),
                    fit.d1(),
                    phi,
                    fit.psi().clone(),
                    gaussian::FamilyMode::MultiEstimate,
                )
                .unwrap();
                ok &= gaussian::log_likelihood(&p, &ds) <= base + 1e-9;
            }
        }
        expect(ok, "no perturbation improves the likelihood".into())
    });

    report.run("gaussian", "strategy collapse at K=1 and beta=0", || {
        let w1 = SourceWeights::new(vec![1.0]).unwrap();
        let t1 = gaussian::make_sim_family(1, 5, 0.6).unwrap();
        let d1 = gaussian::sample_dataset(&t1, &w1, 100, &RngStream::new(105)).unwrap();
        let m1 = gaussian::fit_multi(&d1, t1.d1()).unwrap();
        let s1 = gaussian::fit_single(&d1, t1.d1()).unwrap();
        let same_k1 =
            m1.mean_of(t1.label(1).unwrap()) == s1.mean_of(t1.label(1).unwrap());

        let t0 = gaussian::make_sim_family(3, 5, 0.0).unwrap();
        let w3 = SourceWeights::uniform(3);
        let d0 = gaussian::sample_dataset(&t0, &w3, 120, &RngStream::new(106)).unwrap();
        let m0 = gaussian::fit_multi(&d0, t0.d1()).unwrap();
        let s0 = gaussian::fit_single(&d0, t0.d1()).unwrap();
        let same_b0 = (1..=3).all(|v| {
            m0.mean_of(t0.label(v).unwrap()) == s0.mean_of(t0.label(v).unwrap())
        });
        expect(same_k1 && same_b0, "fits coincide".into())
    });

    report.run("gaussian", "error ordering (protocol defaults)", || {
        let root = RngStream::new(107);
        let mut ok = true;
        let mut detail = String::new();
        for (ki, &k) in [3usize, 5, 10, 15].iter().enumerate() {
            let truth = gaussian::make_sim_family(k, 10, 0.5).unwrap();
            let w = SourceWeights::uniform(k);
            let mut multi = Vec::new();
            let mut single = Vec::new();
            for seed in 0..5u64 {
                let s = root.descend(&[ki as u64, seed]);
                let ds = gaussian::sample_dataset(&truth, &w, 500, &s).unwrap();
                let m = gaussian::fit_multi(&ds, truth.d1()).unwrap();
                let g = gaussian::fit_single(&ds, truth.d1()).unwrap();
                multi.push(gaussian::avg_tv_exact(&m, &truth, &w).unwrap());
                single.push(gaussian::avg_tv_exact(&g, &truth, &w).unwrap());
            }
            let (mm, _) = mean_and_std(&multi).unwrap();
            let (ms, _) = mean_and_std(&single).unwrap();
            ok &= mm < ms;
            detail.push_str(&format!("K={k}: {mm:.4} vs {ms:.4}; "));
        }
        expect(ok, detail)
    });

    report.run("gaussian", "1/sqrt(n) scaling slope", || {
        let root = RngStream::new(108);
        let ns = [100usize, 300, 500, 1000, 5000];
        let truth = gaussian::make_sim_family(5, 10, 0.5).unwrap();
        let w = SourceWeights::uniform(5);
        let mut ok = true;
        let mut detail = String::new();
        for strategy in ["multi", "single"] {
            let mut log_means = Vec::new();
            for (ni, &n) in ns.iter().enumerate() {
                let mut vals = Vec::new();
                for seed in 0..5u64 {
                    let s = root.descend(&[ni as u64, seed]);
                    let ds = gaussian::sample_dataset(&truth, &w, n, &s).unwrap();
                    let fit = if strategy == "multi" {
                        gaussian::fit_multi(&ds, truth.d1()).unwrap()
                    } else {
                        gaussian::fit_single(&ds, truth.d1()).unwrap()
                    };
                    vals.push(gaussian::avg_tv_exact(&fit, &truth, &w).unwrap());
                }
                let (m, _) = mean_and_std(&vals).unwrap();
                log_means.push(m.ln());
            }
            let slope = least_squares_slope(
                &ns.iter().map(|&n| (n as f64).ln()).collect::<Vec<_>>(),
                &log_means,
            );
            ok &= (-0.6..=-0.4).contains(&slope);
            detail.push_str(&format!("{strategy}: slope {slope:.3}; "));
        }
        expect(ok, detail)
    });

    report.run("bounds", "Proposition 3.2 ordering (1000 random tuples)", || {
        let mut rng = RngStream::new(109).rng();
        for _ in 0..1000 {
            let k = rng.random_range(1..=16usize);
            let d = rng.random_range(1..=32usize);
            let d1 = rng.random_range(0..=d);
            let g = bounds::GaussianBoundParams {
                n: rng.random_range(1..=100_000u64),
                k,
                d,
                d1,
                box_bound: rng.random_range(0.01..20.0),
                delta: 0.1,
                epsilon: rng.random_range(0.001..=1.0),
            };
            let gm = bounds::gaussian_log_bracketing(&g, TrainingMode::Multi).unwrap();
            let gs = bounds::gaussian_log_bracketing(&g, TrainingMode::Single).unwrap();
            if gm > gs + 1e-9 {
                return Err(format!("gaussian ordering violated at {g:?}"));
            }
            let a = bounds::ArmBoundParams {
                n: g.n,
                k,
                seq_len: rng.random_range(1..=32),
                vocab: rng.random_range(2..=64),
                embed_dim: rng.random_range(1..=64),
                depth: rng.random_range(1..=8),
                width: rng.random_range(1..=64),
                sparsity: rng.random_range(1..=100_000u64),
                norm_bound: rng.random_range(0.01..5.0),
                delta: 0.1,
                epsilon: g.epsilon,
            };
            let am = bounds::arm_log_bracketing(&a, TrainingMode::Multi).unwrap();
            let asv = bounds::arm_log_bracketing(&a, TrainingMode::Single).unwrap();
            if am > asv + 1e-9 {
                return Err(format!("arm ordering violated at {a:?}"));
            }
            let e = bounds::EbmBoundParams {
                n: g.n,
                k,
                embed_dim: a.embed_dim,
                depth: a.depth,
                width: a.width,
                sparsity: a.sparsity,
                norm_bound: a.norm_bound,
                delta: 0.1,
                epsilon: g.epsilon,
            };
            let em = bounds::ebm_log_bracketing(&e, TrainingMode::Multi).unwrap();
            let es = bounds::ebm_log_bracketing(&e, TrainingMode::Single).unwrap();
            if em > es + 1e-9 {
                return Err(format!("ebm ordering violated at {e:?}"));
            }
        }
        Ok("multi <= single across all instantiations".into())
    });

    report.run("bounds", "hand-derived explicit values", || {
        let p = bounds::GaussianBoundParams {
            n: 500,
            k: 5,
            d: 10,
            d1: 5,
            box_bound: 5.0,
            delta: 0.1,
            epsilon: 1.0 / 500.0,
        };
        let m = bounds::gaussian_bound(&p, TrainingMode::Multi).unwrap().tv_bound;
        let s = bounds::gaussian_bound(&p, TrainingMode::Single).unwrap().tv_bound;
        expect(
            (m - 2.4363095288658098).abs() < 1e-6 && (s - 3.1408665226263031).abs() < 1e-6,
            format!("multi {m:.7}, single {s:.7}"),
        )
    });

    report.run("bracketing", "Gaussian bracket dominance and gap", || {
        let stream = RngStream::new(110);
        for (i, (k, d, eps)) in [(3usize, 4usize, 0.5f64), (5, 10, 0.1), (2, 1, 0.5)]
            .iter()
            .enumerate()
        {
            let fam = gaussian::make_sim_family(*k, *d, 0.5).unwrap();
            let elem = bracketing::gaussian_bracket_cover(&fam, *k as f64, *eps).unwrap();
            let rep =
                bracketing::gaussian_bracket_verify(&elem, &fam, 1000, &stream.child(i as u64))
                    .unwrap();
            if rep.dominance_violations != 0 {
                return Err(format!("dominance violated in config {i}"));
            }
            if rep.exact_l1_gap > *eps {
                return Err(format!("gap {} > eps {eps}", rep.exact_l1_gap));
            }
        }
        Ok("0 violations, gaps within eps".into())
    });

    report.run("bracketing", "enumerated count vs closed form", || {
        let c = bracketing::gaussian_bracket_count(2, 1, 1, 1.0, 0.5, TrainingMode::Multi)
            .unwrap();
        if c.estimated || (c.log_count - 81f64.ln()).abs() > 1e-12 {
            return Err(format!("expected ln(81), got {}", c.log_count));
        }
        let params = bounds::GaussianBoundParams {
            n: 1,
            k: 3,
            d: 2,
            d1: 1,
            box_bound: 1.5,
            delta: 0.1,
            epsilon: 0.5,
        };
        let count =
            bracketing::gaussian_bracket_count(3, 2, 1, 1.5, 0.5, TrainingMode::Multi).unwrap();
        let bound = bounds::gaussian_log_bracketing(&params, TrainingMode::Multi).unwrap();
        expect(
            count.log_count <= bound + 1e-9,
            format!("count {} <= bound {bound}", count.log_count),
        )
    });

    report.run("bracketing", "constant-function cover", || {
        let levels = bracketing::constant_function_bracket(0.25).unwrap();
        if levels != vec![0.25, 0.5, 0.75, 1.0] {
            return Err(format!("levels {levels:?}"));
        }
        let mut rng = RngStream::new(111).rng();
        for _ in 0..1000 {
            let c: f64 = rng.random_range(0.0..=1.0);
            match bracketing::constant_bracket_level(&levels, c) {
                Some(l) if l >= c && l - c <= 0.25 + 1e-15 => {}
                other => return Err(format!("cover failed for {c}: {other:?}")),
            }
        }
        Ok("ceiling cover dominates with gap <= eps".into())
    });

    report.run("bracketing", "energy bracket on 1-D grids", || {
        for (i, eps_u) in [0.01f64, 0.1, 0.25].iter().enumerate() {
            let s = RngStream::new(112).child(i as u64);
            let u = bracketing::EnergyGrid1D::random_piecewise_linear(
                4097,
                12,
                3.0,
                &s.child(0),
            )
            .unwrap();
            let rep = bracketing::ebm_bracket_verify_1d(&u, *eps_u, &s.child(1)).unwrap();
            if rep.dominance_violations != 0 || rep.exact_l1_gap > rep.epsilon {
                return Err(format!(
                    "eps_u {eps_u}: {} violations, gap {} vs {}",
                    rep.dominance_violations, rep.exact_l1_gap, rep.epsilon
                ));
            }
        }
        Ok("0 violations, gaps within the lemma bound".into())
    });

    report.run("bracketing", "MLP lemma universality", || {
        let stream = RngStream::new(113);
        for (i, kind) in [
            bracketing::MlpLemma::InputLipschitz,
            bracketing::MlpLemma::ParamLipschitz,
            bracketing::MlpLemma::OutputSupNorm,
        ]
        .iter()
        .enumerate()
        {
            let r =
                bracketing::mlp_lemma_check(*kind, 3, 8, 2.0, 1000, &stream.child(i as u64))
                    .unwrap();
            if r > 1.0 + 1e-9 {
                return Err(format!("{kind:?} ratio {r}"));
            }
        }
        Ok("all observed/bound ratios <= 1".into())
    });

    report.run("arm", "masking and normalization", || {
        let config = arm::ArmConfig {
            vocab: 2,
            seq_len: 6,
            k: 3,
            embed_dim: 4,
            depth: 3,
            width: 8,
        };
        let root = RngStream::new(114);
        for trial in 0..20u64 {
            let p = arm::init_params(config, &root.child(trial)).unwrap();
            let y = SourceLabel::new(1 + (trial as usize % 3), 3).unwrap();
            let dist = p.enumerate_distribution(y).unwrap();
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(format!("normalization off: {total}"));
            }
            // Masking: flip the final token, check position-1 output.
            let a = p.forward_position(&[1, 1, 1, 1, 1, 1], y, 1).unwrap();
            let b = p.forward_position(&[1, 1, 1, 1, 1, 2], y, 1).unwrap();
            if a != b {
                return Err("position-1 output depends on the last token".into());
            }
        }
        Ok("sum = 1 +- 1e-9; masking exact".into())
    });

    report.run("arm", "gradient vs finite differences", || {
        let config = arm::ArmConfig {
            vocab: 2,
            seq_len: 4,
            k: 2,
            embed_dim: 3,
            depth: 2,
            width: 4,
        };
        let root = RngStream::new(115);
        for trial in 0..2u64 {
            let p = arm::init_params(config, &root.child(trial)).unwrap();
            let truths =
                arm::make_truth_tables(2, 2, 4, 1.0, 0.0, &root.child(100 + trial)).unwrap();
            let batch: Vec<(Vec<u32>, SourceLabel)> = truths[0]
                .sample(4, &root.child(200 + trial))
                .into_iter()
                .map(|x| (x, SourceLabel::new(1, 2).unwrap()))
                .chain(
                    truths[1]
                        .sample(4, &root.child(300 + trial))
                        .into_iter()
                        .map(|x| (x, SourceLabel::new(2, 2).unwrap())),
                )
                .collect();
            let err = max_grad_rel_error(&p, &batch);
            if err >= 1e-4 {
                return Err(format!("trial {trial}: max relative error {err}"));
            }
        }
        Ok("max relative error < 1e-4".into())
    });

    report.run("experiments", "reproducibility (byte-identical CSV)", || {
        let cfg = SweepConfig {
            experiment: Experiment::Gaussian,
            axis: Axis::N,
            axis_values: vec![100.0, 200.0],
            fixed: FixedParams {
                k: Some(3),
                d: Some(6),
                beta_sim: Some(0.5),
                n_test: Some(100),
                ..Default::default()
            },
            seeds: 2,
            master_seed: 2024,
            delta: 0.1,
            emit_theory: true,
        };
        let a = csv_text(&run_gaussian_sweep(&cfg).unwrap(), "selftest");
        let b = csv_text(&run_gaussian_sweep(&cfg).unwrap(), "selftest");
        expect(a == b, format!("{} bytes, identical across runs", a.len()))
    });

    report.run("experiments", "theory attachment equals bounds module", || {
        let cfg = SweepConfig {
            experiment: Experiment::Gaussian,
            axis: Axis::K,
            axis_values: vec![2.0, 4.0],
            fixed: FixedParams {
                n: Some(100),
                d: Some(4),
                beta_sim: Some(0.5),
                n_test: Some(50),
                ..Default::default()
            },
            seeds: 1,
            master_seed: 5,
            delta: 0.1,
            emit_theory: true,
        };
        let rows = run_gaussian_sweep(&cfg).unwrap();
        for r in &rows {
            let params = bounds::GaussianBoundParams {
                n: 100,
                k: r.axis_value as usize,
                d: 4,
                d1: 2,
                box_bound: r.axis_value,
                delta: 0.1,
                epsilon: 0.01,
            };
            let mode = match r.strategy {
                super::Strategy::Multi => TrainingMode::Multi,
                super::Strategy::Single => TrainingMode::Single,
            };
            let expected = bounds::gaussian_bound(&params, mode).unwrap().tv_bound;
            if r.theory_bound != Some(expected) {
                return Err(format!(
                    "theory {:?} != bounds {expected} at K={}",
                    r.theory_bound, r.axis_value
                ));
            }
        }
        Ok("exact equality".into())
    });

    report
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Max relative error of the analytic gradient against central finite
/// differences over every parameter. Mirrors the module-level oracle used in
/// the arm tests; lives here so the self-test and acceptance suite share it.
pub fn max_grad_rel_error(
    p: &arm::ArmParams,
    batch: &[(Vec<u32>, SourceLabel)],
) -> f64 {
    let grads = arm::grad_nll(p, batch).unwrap();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut check = |mutate: &mut dyn FnMut(&mut arm::ArmParams, f64), analytic: f64| {
        let mut plus = p.clone();
        mutate(&mut plus, h);
        let mut minus = p.clone();
        mutate(&mut minus, -h);
        let numeric = (arm::mean_nll(&plus, batch).unwrap()
            - arm::mean_nll(&minus, batch).unwrap())
            / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    };
    for r in 0..p.v_y.rows() {
        for c in 0..p.v_y.cols() {
            let g = grads.v_y.row(r)[c];
            check(&mut |q, d| q.v_y.row_mut(r)[c] += d, g);
        }
    }
    for r in 0..p.v_x.rows() {
        for c in 0..p.v_x.cols() {
            let g = grads.v_x.row(r)[c];
            check(&mut |q, d| q.v_x.row_mut(r)[c] += d, g);
        }
    }
    for r in 0..p.a0.rows() {
        for c in 0..p.a0.cols() {
            let g = grads.a0.row(r)[c];
            check(&mut |q, d| q.a0.row_mut(r)[c] += d, g);
        }
    }
    for i in 0..p.b0.len() {
        let g = grads.b0[i];
        check(&mut |q, d| q.b0[i] += d, g);
    }
    for li in 0..p.mlp.depth() {
        for i in 0..p.mlp.layers()[li].weight.data().len() {
            let g = grads.mlp.layers[li].weight.data()[i];
            check(&mut |q, d| q.mlp.layers_mut()[li].weight.data_mut()[i] += d, g);
        }
        for i in 0..p.mlp.layers()[li].bias.len() {
            let g = grads.mlp.layers[li].bias[i];
            check(&mut |q, d| q.mlp.layers_mut()[li].bias[i] += d, g);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_checkout_passes_and_covers_ordering() {
        let report = selftest();
        for e in &report.entries {
            assert!(e.passed, "{}/{} failed: {}", e.module, e.property, e.detail);
        }
        assert!(report
            .entries
            .iter()
            .any(|e| e.property.contains("Proposition 3.2")));
    }
}
