//! Conditional Gaussian instantiation: unit-covariance sources whose means
//! share their trailing `d - d1` coordinates, analytic multi- and
//! single-source MLE, and exact / Monte-Carlo average TV error.

use crate::data::{LabeledDataset, SourceLabel, SourceWeights};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erf;

pub type GaussianDataset = LabeledDataset<Vec<f64>>;

/// Whether the trailing (shared) part of the mean is one vector or K vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum Psi {
    Shared(Vec<f64>),
    PerSource(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyMode {
    Truth,
    MultiEstimate,
    SingleEstimate,
}

/// K unit-covariance Gaussian sources: mean of source k is the concatenation
/// of a source-specific head `phi[k]` (length `d1`) and a tail `psi`
/// (length `d - d1`) that is shared in truth / multi-estimate mode and
/// per-source in single-estimate mode.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFamily {
    d: usize,
    d1: usize,
    phi: Vec<Vec<f64>>,
    psi: Psi,
    mode: FamilyMode,
}

impl GaussianFamily {
    pub fn new(d: usize, d1: usize, phi: Vec<Vec<f64>>, psi: Psi, mode: FamilyMode) -> Result<Self> {
        if d == 0 || d1 > d {
            return Err(Error::invalid(format!("need 0 <= d1 <= d, got d={d} d1={d1}")));
        }
        if phi.is_empty() {
            return Err(Error::invalid("at least one source required"));
        }
        if phi.iter().any(|p| p.len() != d1) {
            return Err(Error::ShapeMismatch(format!("every phi must have length d1={d1}")));
        }
        match (&psi, mode) {
            (Psi::Shared(s), _) => {
                if s.len() != d - d1 {
                    return Err(Error::ShapeMismatch(format!(
                        "shared psi has length {}, expected {}",
                        s.len(),
                        d - d1
                    )));
                }
            }
            (Psi::PerSource(list), FamilyMode::SingleEstimate) => {
                if list.len() != phi.len() || list.iter().any(|s| s.len() != d - d1) {
                    return Err(Error::ShapeMismatch(
                        "per-source psi must be K vectors of length d-d1".into(),
                    ));
                }
            }
            (Psi::PerSource(_), _) => {
                return Err(Error::invalid(
                    "truth and multi-estimate modes require a shared psi",
                ));
            }
        }
        Ok(GaussianFamily { d, d1, phi, psi, mode })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn mode(&self) -> FamilyMode {
        self.mode
    }

    pub fn phi(&self, label: SourceLabel) -> &[f64] {
        &self.phi[label.index()]
    }

    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    /// Full mean vector of source `label` (length `d`).
    pub fn mean_of(&self, label: SourceLabel) -> Vec<f64> {
        let mut m = self.phi[label.index()].clone();
        match &self.psi {
            Psi::Shared(s) => m.extend_from_slice(s),
            Psi::PerSource(list) => m.extend_from_slice(&list[label.index()]),
        }
        m
    }

    pub fn label(&self, value: usize) -> Result<SourceLabel> {
        SourceLabel::new(value, self.k())
    }
}

/// Ground-truth family of the simulation protocol:
/// `d1 = d - floor(beta_sim * d)`, `phi_k = k * 1` in `R^{d1}`, shared
/// `psi = 0` in `R^{d-d1}`.
pub fn make_sim_family(k: usize, d: usize, beta_sim: f64) -> Result<GaussianFamily> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("need K >= 1 and d >= 1"));
    }
    if !(0.0..=1.0).contains(&beta_sim) {
        return Err(Error::invalid(format!("beta_sim {beta_sim} outside [0, 1]")));
    }
    let shared = (beta_sim * d as f64).floor() as usize;
    let d1 = d - shared;
    let phi = (1..=k).map(|ki| vec![ki as f64; d1]).collect();
    GaussianFamily::new(d, d1, phi, Psi::Shared(vec![0.0; d - d1]), FamilyMode::Truth)
}

/// Draw `n` samples: label from `w`, then observation = mean + standard normal.
pub fn sample_dataset(
    family: &GaussianFamily,
    w: &SourceWeights,
    n: usize,
    stream: &RngStream,
) -> Result<GaussianDataset> {
    if family.mode() != FamilyMode::Truth {
        return Err(Error::invalid("sampling requires a truth-mode family"));
    }
    if w.k() != family.k() {
        return Err(Error::ShapeMismatch(format!(
            "weights have K={}, family has K={}",
            w.k(),
            family.k()
        )));
    }
    let labels = crate::data::sample_labels(w, n, &stream.child(0));
    let mut rng = stream.child(1).rng();
    let normal = StandardNormal;
    let samples = labels
        .into_iter()
        .map(|l| {
            let mut x = family.mean_of(l);
            for xi in &mut x {
                let z: f64 = normal.sample(&mut rng);
                *xi += z;
            }
            (x, l)
        })
        .collect();
    GaussianDataset::new(family.k(), samples)
}

fn per_source_means(
    ds: &GaussianDataset,
    lo: usize,
    hi: usize,
) -> Result<Vec<Vec<f64>>> {
    let groups = ds.split_by_source();
    let mut means = Vec::with_capacity(groups.len());
    for (idx, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::EmptySource { source_label: idx + 1 });
        }
        let mut m = vec![0.0; hi - lo];
        for x in group {
            for (mi, &xi) in m.iter_mut().zip(&x[lo..hi]) {
                *mi += xi;
            }
        }
        for mi in &mut m {
            *mi /= group.len() as f64;
        }
        means.push(m);
    }
    Ok(means)
}

/// Multi-source analytic MLE: per-source mean of the first `d1` coordinates,
/// one global mean of the rest.
pub fn fit_multi(ds: &GaussianDataset, d1: usize) -> Result<GaussianFamily> {
    let d = dataset_dim(ds, d1)?;
    let phi = per_source_means(ds, 0, d1)?;
    let mut psi = vec![0.0; d - d1];
    for (x, _) in ds.samples() {
        for (pi, &xi) in psi.iter_mut().zip(&x[d1..]) {
            *pi += xi;
        }
    }
    for pi in &mut psi {
        *pi /= ds.len() as f64;
    }
    GaussianFamily::new(d, d1, phi, Psi::Shared(psi), FamilyMode::MultiEstimate)
}

/// Single-source analytic MLE: per-source means of all coordinates.
pub fn fit_single(ds: &GaussianDataset, d1: usize) -> Result<GaussianFamily> {
    let d = dataset_dim(ds, d1)?;
    let phi = per_source_means(ds, 0, d1)?;
    let psi = per_source_means(ds, d1, d)?;
    GaussianFamily::new(d, d1, phi, Psi::PerSource(psi), FamilyMode::SingleEstimate)
}

fn dataset_dim(ds: &GaussianDataset, d1: usize) -> Result<usize> {
    let d = ds
        .samples()
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::invalid("cannot fit an empty dataset"))?;
    if ds.samples().iter().any(|(x, _)| x.len() != d) {
        return Err(Error::ShapeMismatch("observations have mixed dimensions".into()));
    }
    if d1 > d {
        return Err(Error::invalid(format!("d1={d1} exceeds data dimension {d}")));
    }
    Ok(d)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Exact TV distance between two unit-covariance Gaussians:
/// `2 Phi(||mu_a - mu_b|| / 2) - 1`.
pub fn tv_exact_pair(mu_a: &[f64], mu_b: &[f64]) -> Result<f64> {
    if mu_a.len() != mu_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean lengths {} vs {}",
            mu_a.len(),
            mu_b.len()
        )));
    }
    let dist2: f64 = mu_a
        .iter()
        .zip(mu_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(2.0 * std_normal_cdf(dist2.sqrt() / 2.0) - 1.0)
}

/// Source-weighted exact average TV error between an estimate and the truth.
pub fn avg_tv_exact(
    est: &GaussianFamily,
    truth: &GaussianFamily,
    w: &SourceWeights,
) -> Result<f64> {
    check_compatible(est, truth, w)?;
    let mut total = 0.0;
    for value in 1..=truth.k() {
        let l = truth.label(value)?;
        total += w.weight(l) * tv_exact_pair(&est.mean_of(l), &truth.mean_of(l))?;
    }
    Ok(total)
}

fn check_compatible(
    est: &GaussianFamily,
    truth: &GaussianFamily,
    w: &SourceWeights,
) -> Result<()> {
    if est.k() != truth.k() || est.d() != truth.d() {
        return Err(Error::ShapeMismatch(format!(
            "estimate (K={}, d={}) vs truth (K={}, d={})",
            est.k(),
            est.d(),
            truth.k(),
            truth.d()
        )));
    }
    if w.k() != truth.k() {
        return Err(Error::ShapeMismatch("weights K mismatch".into()));
    }
    Ok(())
}

/// Log density of the unit-covariance Gaussian with the given mean.
pub fn log_density(mean: &[f64], x: &[f64]) -> f64 {
    let d = mean.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(xi, mi)| (xi - mi) * (xi - mi)).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq
}

/// Monte-Carlo estimate of the average TV error: draw `(x, y)` from the
/// truth and average `|p_est(x|y)/p_truth(x|y) - 1| / 2`. The density ratio
/// is computed in log space, so distant means cannot overflow.
pub fn tv_monte_carlo(
    est: &GaussianFamily,
    truth: &GaussianFamily,
    w: &SourceWeights,
    n_test: usize,
    stream: &RngStream,
) -> Result<f64> {
    if n_test == 0 {
        return Err(Error::invalid("n_test must be >= 1"));
    }
    check_compatible(est, truth, w)?;
    let test = sample_dataset(truth, w, n_test, stream)?;
    let mut acc = 0.0;
    for (x, y) in test.samples() {
        let log_ratio = log_density(&est.mean_of(*y), x) - log_density(&truth.mean_of(*y), x);
        acc += (log_ratio.exp() - 1.0).abs();
    }
    Ok(acc / (2.0 * n_test as f64))
}

/// Conditional log-likelihood of a dataset under a family (sum over samples).
pub fn log_likelihood(family: &GaussianFamily, ds: &GaussianDataset) -> f64 {
    ds.samples()
        .iter()
        .map(|(x, y)| log_density(&family.mean_of(*y), x))
        .sum()
}
