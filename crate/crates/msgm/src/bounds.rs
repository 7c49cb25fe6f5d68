//! Closed-form calculators for the distribution-estimation error bounds:
//! the generic conditional-MLE bound, log-bracketing-number formulas for the
//! Gaussian / autoregressive / energy-based instantiations, MLP covering
//! numbers, similarity factors, and the multi-vs-single advantage ratio.
//!
//! Every count is handled as a natural log; raw bracketing numbers overflow
//! for realistic exponents.

use crate::error::{Error, Result};
use serde::Serialize;

/// Which conditional distribution space a bound refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingMode {
    Multi,
    Single,
}

/// log(1 + e^a), stable for large |a|; used as log(x + 1) given a = log x.
fn ln_1p_exp(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1/2]")));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("epsilon {eps} outside (0, 1]")));
    }
    Ok(())
}

/// Generic conditional-MLE average TV error bound:
/// `3 * sqrt((log_n_bracket + log(1/delta)) / n)`.
pub fn generic_mle_bound(log_n_bracket: f64, n: u64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if log_n_bracket < 0.0 {
        return Err(Error::invalid("log bracketing number must be >= 0"));
    }
    Ok(3.0 * ((log_n_bracket + (1.0 / delta).ln()) / n as f64).sqrt())
}

/// Explicit bound pair: the log bracketing number at `epsilon = 1/n` and the
/// resulting TV bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundValue {
    pub log_bracketing: f64,
    pub tv_bound: f64,
}

/// Parameters of the conditional Gaussian space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBoundParams {
    pub n: u64,
    pub k: usize,
    pub d: usize,
    pub d1: usize,
    pub box_bound: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl GaussianBoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::invalid("need n, K, d >= 1"));
        }
        if self.d1 > self.d {
            return Err(Error::invalid(format!("d1={} exceeds d={}", self.d1, self.d)));
        }
        if !(self.box_bound > 0.0) {
            return Err(Error::invalid("box bound B must be > 0"));
        }
        check_delta(self.delta)?;
        check_epsilon(self.epsilon)
    }

    /// Same parameters with the bracket width pinned to `1/n`, the value all
    /// the explicit theorems instantiate.
    pub fn with_eps_one_over_n(mut self) -> Self {
        self.epsilon = 1.0 / self.n as f64;
        self
    }
}

fn gaussian_exponent(p: &GaussianBoundParams, mode: TrainingMode) -> f64 {
    match mode {
        TrainingMode::Multi => ((p.k - 1) * p.d1 + p.d) as f64,
        TrainingMode::Single => (p.k * p.d) as f64,
    }
}

/// Log bracketing number of the conditional Gaussian space:
/// exponent `(K-1)d1 + d` (multi) or `Kd` (single) times
/// `log(2(1+d)B/eps + 1)`.
pub fn gaussian_log_bracketing(p: &GaussianBoundParams, mode: TrainingMode) -> Result<f64> {
    p.validate()?;
    let log_base = ln_1p_exp((2.0 * (1.0 + p.d as f64) * p.box_bound / p.epsilon).ln());
    Ok(gaussian_exponent(p, mode) * log_base)
}

/// Explicit Gaussian bound at `epsilon = 1/n` (the field value is ignored;
/// the theorems fix the bracket width).
pub fn gaussian_bound(p: &GaussianBoundParams, mode: TrainingMode) -> Result<BoundValue> {
    let pinned = p.with_eps_one_over_n();
    let log_bracketing = gaussian_log_bracketing(&pinned, mode)?;
    let tv_bound = generic_mle_bound(log_bracketing, pinned.n, pinned.delta)?;
    Ok(BoundValue {
        log_bracketing,
        tv_bound,
    })
}

/// Parameters of the conditional autoregressive space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmBoundParams {
    pub n: u64,
    pub k: usize,
    /// Sequence length D.
    pub seq_len: usize,
    /// Vocabulary size M.
    pub vocab: usize,
    /// Embedding width d_e.
    pub embed_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub sparsity: u64,
    pub norm_bound: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl ArmBoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.seq_len == 0 || self.vocab == 0 || self.embed_dim == 0
        {
            return Err(Error::invalid("need n, K, D, M, de >= 1"));
        }
        if self.depth == 0 || self.width == 0 || self.sparsity == 0 {
            return Err(Error::invalid("need L, W, S >= 1"));
        }
        if !(self.norm_bound > 0.0) {
            return Err(Error::invalid("norm bound B must be > 0"));
        }
        check_delta(self.delta)?;
        check_epsilon(self.epsilon)
    }

    pub fn with_eps_one_over_n(mut self) -> Self {
        self.epsilon = 1.0 / self.n as f64;
        self
    }
}

/// Bracketing exponent `S + D + (D + M + K) d_e` (multi) or
/// `K (S + D + (D + M + 1) d_e)` (single).
pub fn arm_exponent(p: &ArmBoundParams, mode: TrainingMode) -> f64 {
    let s = p.sparsity as f64;
    let d = p.seq_len as f64;
    let m = p.vocab as f64;
    let de = p.embed_dim as f64;
    match mode {
        TrainingMode::Multi => s + d + (d + m + p.k as f64) * de,
        TrainingMode::Single => p.k as f64 * (s + d + (m + d + 1.0) * de),
    }
}

/// Per-element log factor `log(24 e D (L+3) (B v 1)^{L+2} (W+1)^L / eps)`:
/// the covering radius is `eps / (8 e D)` and the logit-space covering number
/// has base `3 (L+3) (B v 1)^{L+2} (W+1)^L`.
fn arm_log_base(p: &ArmBoundParams) -> f64 {
    let bv1 = p.norm_bound.max(1.0);
    (24.0 * p.seq_len as f64).ln() + 1.0
        + ((p.depth + 3) as f64).ln()
        + (p.depth + 2) as f64 * bv1.ln()
        + p.depth as f64 * ((p.width + 1) as f64).ln()
        - p.epsilon.ln()
}

pub fn arm_log_bracketing(p: &ArmBoundParams, mode: TrainingMode) -> Result<f64> {
    p.validate()?;
    Ok(arm_exponent(p, mode) * arm_log_base(p))
}

pub fn arm_bound(p: &ArmBoundParams, mode: TrainingMode) -> Result<BoundValue> {
    let pinned = p.with_eps_one_over_n();
    let log_bracketing = arm_log_bracketing(&pinned, mode)?;
    let tv_bound = generic_mle_bound(log_bracketing, pinned.n, pinned.delta)?;
    Ok(BoundValue {
        log_bracketing,
        tv_bound,
    })
}

/// Parameters of the conditional energy-based space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EbmBoundParams {
    pub n: u64,
    pub k: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub sparsity: u64,
    pub norm_bound: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl EbmBoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("need n, K, de >= 1"));
        }
        if self.depth == 0 || self.width == 0 || self.sparsity == 0 {
            return Err(Error::invalid("need L, W, S >= 1"));
        }
        if !(self.norm_bound > 0.0) {
            return Err(Error::invalid("norm bound B must be > 0"));
        }
        check_delta(self.delta)?;
        check_epsilon(self.epsilon)
    }

    pub fn with_eps_one_over_n(mut self) -> Self {
        self.epsilon = 1.0 / self.n as f64;
        self
    }
}

/// Bracketing exponent `S + K d_e` (multi) or `K (S + d_e)` (single).
pub fn ebm_exponent(p: &EbmBoundParams, mode: TrainingMode) -> f64 {
    let s = p.sparsity as f64;
    let de = p.embed_dim as f64;
    match mode {
        TrainingMode::Multi => s + p.k as f64 * de,
        TrainingMode::Single => p.k as f64 * (s + de),
    }
}

/// Per-element log factor `log(12 e (L+1) (B v 1)^{L+1} (W+1)^L / eps)`:
/// covering radius `eps / (4 e)` composed with the energy-class covering
/// number of base `3 (L+1) (B v 1)^{L+1} (W+1)^L`.
fn ebm_log_base(p: &EbmBoundParams) -> f64 {
    let bv1 = p.norm_bound.max(1.0);
    12f64.ln() + 1.0
        + ((p.depth + 1) as f64).ln()
        + (p.depth + 1) as f64 * bv1.ln()
        + p.depth as f64 * ((p.width + 1) as f64).ln()
        - p.epsilon.ln()
}

pub fn ebm_log_bracketing(p: &EbmBoundParams, mode: TrainingMode) -> Result<f64> {
    p.validate()?;
    Ok(ebm_exponent(p, mode) * ebm_log_base(p))
}

pub fn ebm_bound(p: &EbmBoundParams, mode: TrainingMode) -> Result<BoundValue> {
    let pinned = p.with_eps_one_over_n();
    let log_bracketing = ebm_log_bracketing(&pinned, mode)?;
    let tv_bound = generic_mle_bound(log_bracketing, pinned.n, pinned.delta)?;
    Ok(BoundValue {
        log_bracketing,
        tv_bound,
    })
}

/// Log covering number of the MLP class at sup-norm accuracy `eps`:
/// `S log(2B/delta + 1)` with `delta = eps / (L (B v 1)^{L-1} (W+1)^L)`.
pub fn mlp_log_covering(eps: f64, depth: usize, width: usize, sparsity: u64, norm_bound: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    if depth == 0 || width == 0 || sparsity == 0 || !(norm_bound > 0.0) {
        return Err(Error::invalid("need L, W, S >= 1 and B > 0"));
    }
    let bv1 = norm_bound.max(1.0);
    let ln_delta = eps.ln()
        - ((depth as f64).ln()
            + (depth as f64 - 1.0) * bv1.ln()
            + depth as f64 * ((width + 1) as f64).ln());
    // log(2B/delta + 1) via the stable log-sum form.
    Ok(sparsity as f64 * ln_1p_exp((2.0 * norm_bound).ln() - ln_delta))
}

/// Input-Lipschitz constant of the MLP class: `B^L W^L`.
pub fn mlp_lipschitz_const(depth: usize, width: usize, norm_bound: f64) -> f64 {
    (norm_bound * width as f64).powi(depth as i32)
}

/// Parameter of the per-instantiation similarity factor.
#[derive(Clone, Copy, Debug)]
pub enum BetaSimParams {
    Gaussian { d: usize, d1: usize },
    Arm { seq_len: usize, vocab: usize, embed_dim: usize, sparsity: u64, k: usize },
    Ebm { embed_dim: usize, sparsity: u64 },
}

/// Similarity factor in [0, 1]: the proportion of shared dimensions
/// (Gaussian) or shared parameters (ARM / EBM).
pub fn beta_sim(params: BetaSimParams) -> Result<f64> {
    match params {
        BetaSimParams::Gaussian { d, d1 } => {
            if d == 0 || d1 > d {
                return Err(Error::invalid("need 1 <= d and d1 <= d"));
            }
            Ok((d - d1) as f64 / d as f64)
        }
        BetaSimParams::Arm { seq_len, vocab, embed_dim, sparsity, k } => {
            if seq_len == 0 || vocab == 0 || embed_dim == 0 || sparsity == 0 || k == 0 {
                return Err(Error::invalid("need D, M, de, S, K >= 1"));
            }
            let s = sparsity as f64;
            let d = seq_len as f64;
            let m = vocab as f64;
            let de = embed_dim as f64;
            let shared = s + d + (d + m) * de;
            Ok(shared / (s + d + (d + m + k as f64) * de + de))
        }
        BetaSimParams::Ebm { embed_dim, sparsity } => {
            if embed_dim == 0 && sparsity == 0 {
                return Err(Error::invalid("need S + de > 0"));
            }
            let s = sparsity as f64;
            Ok(s / (s + embed_dim as f64))
        }
    }
}

/// Multi-vs-single bound ratio `sqrt(1 - ((K-1)/K) beta)`: 1 at K=1 or
/// beta=0, `sqrt(1/K)` at beta=1.
pub fn advantage_ratio(k: usize, beta: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
    }
    Ok((1.0 - (k as f64 - 1.0) / k as f64 * beta).sqrt())
}
