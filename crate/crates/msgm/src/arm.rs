//! Conditional autoregressive model over token sequences: embedding lookup,
//! sigmoid encoding, causal masking, a ReLU MLP head with softmax, exact
//! likelihood by chain rule, hand-derived gradients, minibatch gradient
//! descent, and exact TV evaluation by enumerating the discrete support.

use crate::data::{LabeledDataset, SourceLabel, SourceWeights};
use crate::error::{Error, Result};
use crate::mlp::{Mat, Mlp, MlpGrads};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Token sequences are 1-indexed over the vocabulary `[1, M]`.
pub type TokenDataset = LabeledDataset<Vec<u32>>;

/// Exact enumeration is limited to this many outcomes (~17 MB per table).
pub const MAX_SUPPORT: u64 = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArmConfig {
    /// Vocabulary size M (>= 2).
    pub vocab: usize,
    /// Sequence length D.
    pub seq_len: usize,
    /// Source count K.
    pub k: usize,
    /// Embedding width d_e.
    pub embed_dim: usize,
    /// MLP depth L (input width D, output width M).
    pub depth: usize,
    /// MLP hidden width W.
    pub width: usize,
}

impl ArmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::invalid("vocabulary size M must be >= 2"));
        }
        if self.seq_len == 0 || self.k == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("need D, K, de >= 1"));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(Error::invalid("need L, W >= 1"));
        }
        Ok(())
    }

    pub fn support_size(&self) -> Result<u64> {
        let mut size: u64 = 1;
        for _ in 0..self.seq_len {
            size = size
                .checked_mul(self.vocab as u64)
                .filter(|&s| s <= MAX_SUPPORT)
                .ok_or_else(|| {
                    Error::ResourceGuard(format!(
                        "support M^D = {}^{} exceeds {}",
                        self.vocab, self.seq_len, MAX_SUPPORT
                    ))
                })?;
        }
        Ok(size)
    }
}

/// All weights of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmParams {
    pub config: ArmConfig,
    /// Source embeddings, K x de, entries in [0, 1].
    pub v_y: Mat,
    /// Token embeddings, M x de, entries in [0, 1].
    pub v_x: Mat,
    /// Encoding weights, D x de.
    pub a0: Mat,
    /// Encoding bias, length D.
    pub b0: Vec<f64>,
    /// Head MLP with input width D and output width M.
    pub mlp: Mlp,
}

/// Gradients with the shape of [`ArmParams`].
#[derive(Clone, Debug)]
pub struct ArmGrads {
    pub v_y: Mat,
    pub v_x: Mat,
    pub a0: Mat,
    pub b0: Vec<f64>,
    pub mlp: MlpGrads,
}

impl ArmGrads {
    pub fn zeros_like(p: &ArmParams) -> Self {
        ArmGrads {
            v_y: Mat::zeros(p.v_y.rows(), p.v_y.cols()),
            v_x: Mat::zeros(p.v_x.rows(), p.v_x.cols()),
            a0: Mat::zeros(p.a0.rows(), p.a0.cols()),
            b0: vec![0.0; p.b0.len()],
            mlp: MlpGrads::zeros_like(&p.mlp),
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.v_y.data_mut() {
            *v *= factor;
        }
        for v in self.v_x.data_mut() {
            *v *= factor;
        }
        for v in self.a0.data_mut() {
            *v *= factor;
        }
        for v in &mut self.b0 {
            *v *= factor;
        }
        for l in &mut self.mlp.layers {
            for v in l.weight.data_mut() {
                *v *= factor;
            }
            for v in &mut l.bias {
                *v *= factor;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Uniform [0,1] embeddings (their declared domain); scaled uniform
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] for the encoding and MLP weights.
pub fn init_params(config: ArmConfig, stream: &RngStream) -> Result<ArmParams> {
    config.validate()?;
    let mut rng = stream.rng();
    let de = config.embed_dim;
    let v_y = Mat::from_fn(config.k, de, |_, _| rng.random_range(0.0..=1.0));
    let v_x = Mat::from_fn(config.vocab, de, |_, _| rng.random_range(0.0..=1.0));
    let enc_scale = 1.0 / (de as f64).sqrt();
    let a0 = Mat::from_fn(config.seq_len, de, |_, _| {
        rng.random_range(-enc_scale..=enc_scale)
    });
    let b0 = (0..config.seq_len)
        .map(|_| rng.random_range(-enc_scale..=enc_scale))
        .collect();

    let mut dims = Vec::with_capacity(config.depth + 1);
    dims.push(config.seq_len);
    for _ in 1..config.depth {
        dims.push(config.width);
    }
    dims.push(config.vocab);
    let layers = (0..config.depth)
        .map(|l| {
            let scale = 1.0 / (dims[l] as f64).sqrt();
            crate::mlp::Layer {
                weight: Mat::from_fn(dims[l + 1], dims[l], |_, _| {
                    rng.random_range(-scale..=scale)
                }),
                bias: (0..dims[l + 1])
                    .map(|_| rng.random_range(-scale..=scale))
                    .collect(),
            }
        })
        .collect();
    Ok(ArmParams {
        config,
        v_y,
        v_x,
        a0,
        b0,
        mlp: Mlp::new(layers)?,
    })
}

impl ArmParams {
    fn check_tokens(&self, x: &[u32], y: SourceLabel) -> Result<()> {
        if x.len() != self.config.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {} != D = {}",
                x.len(),
                self.config.seq_len
            )));
        }
        if let Some(&t) = x.iter().find(|&&t| t == 0 || t as usize > self.config.vocab) {
            return Err(Error::invalid(format!(
                "token {t} outside [1, {}]",
                self.config.vocab
            )));
        }
        if y.get() > self.config.k {
            return Err(Error::invalid(format!(
                "label {} outside [1, {}]",
                y.get(),
                self.config.k
            )));
        }
        Ok(())
    }

    /// Encoded vector v in [0,1]^D: entry 0 encodes the source embedding,
    /// entry j >= 1 the embedding of token x_j. The last token is never read.
    fn encode(&self, x: &[u32], y: SourceLabel) -> Vec<f64> {
        let d = self.config.seq_len;
        let mut v = vec![0.0; d];
        v[0] = sigmoid(dot(self.a0.row(0), self.v_y.row(y.index())) + self.b0[0]);
        for j in 1..d {
            let token = x[j - 1] as usize - 1;
            v[j] = sigmoid(dot(self.a0.row(j), self.v_x.row(token)) + self.b0[j]);
        }
        v
    }

    /// Distribution parameter vector for position `pos` in [1, D]: softmax
    /// of the MLP on the encoded vector with entries from `pos` onward
    /// masked to zero.
    pub fn forward_position(&self, x: &[u32], y: SourceLabel, pos: usize) -> Result<Vec<f64>> {
        self.check_tokens(x, y)?;
        if pos == 0 || pos > self.config.seq_len {
            return Err(Error::invalid(format!(
                "position {pos} outside [1, {}]",
                self.config.seq_len
            )));
        }
        let mut v = self.encode(x, y);
        for entry in v.iter_mut().skip(pos) {
            *entry = 0.0;
        }
        Ok(softmax(&self.mlp.forward(&v)))
    }

    /// Chain-rule log probability of the full sequence given the source.
    pub fn log_prob(&self, x: &[u32], y: SourceLabel) -> Result<f64> {
        self.check_tokens(x, y)?;
        let v = self.encode(x, y);
        let mut masked = vec![0.0; v.len()];
        let mut total = 0.0;
        for pos in 1..=self.config.seq_len {
            masked[pos - 1] = v[pos - 1];
            let logits = self.mlp.forward(&masked);
            total += log_softmax_at(&logits, x[pos - 1] as usize - 1);
        }
        Ok(total)
    }

    /// Exact distribution over all M^D sequences for source `y`, indexed by
    /// [`CategoricalTable::seq_to_index`]. Shares prefix work across
    /// sequences.
    pub fn enumerate_distribution(&self, y: SourceLabel) -> Result<Vec<f64>> {
        let support = self.config.support_size()? as usize;
        if y.get() > self.config.k {
            return Err(Error::invalid("label out of range"));
        }
        let d = self.config.seq_len;
        let mut probs = vec![0.0; support];
        // v[0] never changes; v[j] for j >= 1 is rewritten as the DFS branch
        // assigns token x_j.
        let mut v = vec![0.0; d];
        v[0] = sigmoid(dot(self.a0.row(0), self.v_y.row(y.index())) + self.b0[0]);
        let mut masked = vec![0.0; d];
        self.enumerate_rec(0, 0.0, 0, &mut v, &mut masked, &mut probs);
        Ok(probs)
    }

    fn enumerate_rec(
        &self,
        depth: usize,
        log_prefix: f64,
        index_base: usize,
        v: &mut Vec<f64>,
        masked: &mut Vec<f64>,
        probs: &mut Vec<f64>,
    ) {
        let m = self.config.vocab;
        let d = self.config.seq_len;
        masked[..=depth].copy_from_slice(&v[..=depth]);
        for entry in masked.iter_mut().skip(depth + 1) {
            *entry = 0.0;
        }
        let logits = self.mlp.forward(masked);
        let log_rho = log_softmax(&logits);
        for token in 0..m {
            let lp = log_prefix + log_rho[token];
            let idx = index_base * m + token;
            if depth + 1 == d {
                probs[idx] = lp.exp();
            } else {
                v[depth + 1] = sigmoid(
                    dot(self.a0.row(depth + 1), self.v_x.row(token)) + self.b0[depth + 1],
                );
                self.enumerate_rec(depth + 1, lp, idx, v, masked, probs);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + z.ln();
    logits.iter().map(|&l| l - log_z).collect()
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    logits[idx] - max - z.ln()
}

/// Mean negative log-likelihood of a batch.
pub fn mean_nll(params: &ArmParams, batch: &[(Vec<u32>, SourceLabel)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut acc = 0.0;
    for (x, y) in batch {
        acc -= params.log_prob(x, *y)?;
    }
    Ok(acc / batch.len() as f64)
}

/// Gradient of the mean negative log-likelihood over the batch, with the
/// full parameter shape. Only embedding rows indexed by batch tokens and
/// labels receive nonzero embedding gradients.
pub fn grad_nll(params: &ArmParams, batch: &[(Vec<u32>, SourceLabel)]) -> Result<ArmGrads> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grads = ArmGrads::zeros_like(params);
    let d = params.config.seq_len;
    let mut masked = vec![0.0; d];
    let mut d_input = vec![0.0; d];
    for (x, y) in batch {
        params.check_tokens(x, *y)?;
        let v = params.encode(x, *y);
        // dNLL/dv accumulated across positions.
        let mut dv = vec![0.0; d];
        masked.fill(0.0);
        for pos in 1..=d {
            masked[pos - 1] = v[pos - 1];
            let preacts = params.mlp.forward_intermediates(&masked);
            let rho = softmax(preacts.last().unwrap());
            // d(-log rho[target]) / dlogits = rho - onehot(target).
            let mut d_logits = rho;
            d_logits[x[pos - 1] as usize - 1] -= 1.0;
            params
                .mlp
                .backward(&masked, &preacts, &d_logits, &mut grads.mlp, &mut d_input);
            // Only unmasked entries propagate into the encoding.
            for j in 0..pos {
                dv[j] += d_input[j];
            }
        }
        // Through the sigmoid encoding into a0, b0 and the embeddings.
        for j in 0..d {
            if dv[j] == 0.0 {
                continue;
            }
            let dz = dv[j] * v[j] * (1.0 - v[j]);
            let emb = if j == 0 {
                params.v_y.row(y.index())
            } else {
                params.v_x.row(x[j - 1] as usize - 1)
            };
            for (g, &e) in grads.a0.row_mut(j).iter_mut().zip(emb) {
                *g += dz * e;
            }
            grads.b0[j] += dz;
            let a_row = params.a0.row(j);
            let target = if j == 0 {
                grads.v_y.row_mut(y.index())
            } else {
                grads.v_x.row_mut(x[j - 1] as usize - 1)
            };
            for (g, &a) in target.iter_mut().zip(a_row) {
                *g += dz * a;
            }
        }
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok(grads)
}

/// Training hyperparameters for plain minibatch gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iters: usize,
}

/// Mean NLL on the training set before and after descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub initial_nll: f64,
    pub final_nll: f64,
}

/// Plain minibatch gradient descent on the mean NLL. Batches are drawn with
/// replacement from the stream; identical (params, data, spec, stream)
/// reproduce bit-identical output.
pub fn train(
    init: &ArmParams,
    ds: &TokenDataset,
    spec: TrainSpec,
    stream: &RngStream,
) -> Result<(ArmParams, TrainStats)> {
    if ds.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if spec.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut params = init.clone();
    let samples = ds.samples();
    let initial_nll = mean_nll(&params, samples)?;
    let mut rng = stream.rng();
    let mut batch: Vec<(Vec<u32>, SourceLabel)> = Vec::with_capacity(spec.batch_size);
    for iter in 0..spec.iters {
        batch.clear();
        for _ in 0..spec.batch_size {
            let idx = rng.random_range(0..samples.len());
            batch.push(samples[idx].clone());
        }
        let grads = grad_nll(&params, &batch)?;
        apply_step(&mut params, &grads, spec.learning_rate);
        if !params.v_y.data().iter().all(|v| v.is_finite())
            || !params.mlp.layers().iter().all(|l| {
                l.weight.data().iter().all(|v| v.is_finite())
                    && l.bias.iter().all(|v| v.is_finite())
            })
        {
            return Err(Error::Diverged(format!(
                "non-finite parameters at iteration {iter} (lr={}, batch={})",
                spec.learning_rate, spec.batch_size
            )));
        }
    }
    let final_nll = mean_nll(&params, samples)?;
    if !final_nll.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite final NLL (lr={}, batch={})",
            spec.learning_rate, spec.batch_size
        )));
    }
    Ok((
        params,
        TrainStats {
            initial_nll,
            final_nll,
        },
    ))
}

fn apply_step(params: &mut ArmParams, grads: &ArmGrads, lr: f64) {
    for (p, g) in params.v_y.data_mut().iter_mut().zip(grads.v_y.data()) {
        *p -= lr * g;
    }
    for (p, g) in params.v_x.data_mut().iter_mut().zip(grads.v_x.data()) {
        *p -= lr * g;
    }
    for (p, g) in params.a0.data_mut().iter_mut().zip(grads.a0.data()) {
        *p -= lr * g;
    }
    for (p, g) in params.b0.iter_mut().zip(&grads.b0) {
        *p -= lr * g;
    }
    params.mlp.sgd_step(&grads.mlp, lr);
}

/// Ground-truth categorical distribution over `[M]^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalTable {
    pub vocab: usize,
    pub seq_len: usize,
    probs: Vec<f64>,
}

impl CategoricalTable {
    pub fn new(vocab: usize, seq_len: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = (vocab as u64).pow(seq_len as u32);
        if probs.len() as u64 != expected {
            return Err(Error::ShapeMismatch(format!(
                "table has {} entries, expected {expected}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and >= 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("table sums to {sum}, expected 1")));
        }
        Ok(CategoricalTable {
            vocab,
            seq_len,
            probs,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of a sequence: x_1 is the most significant digit.
    pub fn seq_to_index(&self, x: &[u32]) -> usize {
        let mut idx = 0usize;
        for &t in x {
            idx = idx * self.vocab + (t as usize - 1);
        }
        idx
    }

    pub fn index_to_seq(&self, mut idx: usize) -> Vec<u32> {
        let mut x = vec![0u32; self.seq_len];
        for d in (0..self.seq_len).rev() {
            x[d] = (idx % self.vocab) as u32 + 1;
            idx /= self.vocab;
        }
        x
    }

    /// Draw `n` sequences i.i.d. from the table (inverse CDF).
    pub fn sample(&self, n: usize, stream: &RngStream) -> Vec<Vec<u32>> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for &p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let mut rng = stream.rng();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|&c| c < u).min(self.probs.len() - 1);
                self.index_to_seq(idx)
            })
            .collect()
    }
}

/// K ground-truth tables from a symmetric Dirichlet with the given
/// concentration (gamma draws, normalized). `shared_weight` in [0, 1]
/// couples the sources: each table is the convex mixture
/// `shared_weight * q + (1 - shared_weight) * r_k` of one shared Dirichlet
/// table `q` and an independent per-source table `r_k`. At 0 the sources
/// are fully independent; above 0 they share structure the way the
/// shared-parameter formulation assumes.
pub fn make_truth_tables(
    k: usize,
    vocab: usize,
    seq_len: usize,
    concentration: f64,
    shared_weight: f64,
    stream: &RngStream,
) -> Result<Vec<CategoricalTable>> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if !(concentration > 0.0) {
        return Err(Error::invalid("concentration must be > 0"));
    }
    if !(0.0..=1.0).contains(&shared_weight) {
        return Err(Error::invalid("shared_weight must be in [0, 1]"));
    }
    let config = ArmConfig {
        vocab,
        seq_len,
        k,
        embed_dim: 1,
        depth: 1,
        width: 1,
    };
    let support = config.support_size()? as usize;
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::invalid(format!("gamma parameters: {e}")))?;
    let dirichlet = |stream: &RngStream| -> Vec<f64> {
        let mut rng = stream.rng();
        let mut probs: Vec<f64> = (0..support).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        probs
    };
    let shared = if shared_weight > 0.0 {
        Some(dirichlet(&stream.child(u64::MAX)))
    } else {
        None
    };
    (0..k)
        .map(|ki| {
            let mut probs = dirichlet(&stream.child(ki as u64));
            if let Some(q) = &shared {
                for (p, &qv) in probs.iter_mut().zip(q) {
                    *p = shared_weight * qv + (1.0 - shared_weight) * *p;
                }
            }
            CategoricalTable::new(vocab, seq_len, probs)
        })
        .collect()
}

/// Total variation between two mass functions on the same support.
pub fn tv_tables(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch("support size mismatch".into()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Model parameters per strategy: one shared model or K per-source models.
#[derive(Clone, Debug)]
pub enum StrategyParams {
    Multi(ArmParams),
    Single(Vec<ArmParams>),
}

impl StrategyParams {
    /// Model distribution for source `label` (1-indexed). Single-source
    /// models are trained with K=1, so each is queried at its own label 1.
    pub fn distribution_for(&self, label: SourceLabel) -> Result<Vec<f64>> {
        match self {
            StrategyParams::Multi(p) => p.enumerate_distribution(label),
            StrategyParams::Single(models) => {
                let model = models.get(label.index()).ok_or_else(|| {
                    Error::invalid(format!(
                        "no single-source model for source {}",
                        label.get()
                    ))
                })?;
                model.enumerate_distribution(SourceLabel::new(1, 1)?)
            }
        }
    }
}

/// Source-weighted exact average TV between model distributions and truths.
pub fn exact_avg_tv(
    strategy: &StrategyParams,
    truths: &[CategoricalTable],
    w: &SourceWeights,
) -> Result<f64> {
    if truths.len() != w.k() {
        return Err(Error::ShapeMismatch("truths K mismatch".into()));
    }
    let mut total = 0.0;
    for (idx, truth) in truths.iter().enumerate() {
        let label = SourceLabel::new(idx + 1, truths.len())?;
        let model_dist = strategy.distribution_for(label)?;
        total += w.weight(label) * tv_tables(&model_dist, truth.probs())?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_config() -> ArmConfig {
        ArmConfig {
            vocab: 2,
            seq_len: 4,
            k: 2,
            embed_dim: 3,
            depth: 2,
            width: 4,
        }
    }

    fn label(v: usize, k: usize) -> SourceLabel {
        SourceLabel::new(v, k).unwrap()
    }

    fn zero_mlp_params(config: ArmConfig, stream: &RngStream) -> ArmParams {
        let mut p = init_params(config, stream).unwrap();
        for layer in p.mlp.layers_mut() {
            layer.weight.data_mut().fill(0.0);
            layer.bias.fill(0.0);
        }
        p
    }

    #[test]
    fn zero_mlp_gives_uniform() {
        let p = zero_mlp_params(small_config(), &RngStream::new(1));
        let rho = p.forward_position(&[1, 2, 1, 2], label(1, 2), 2).unwrap();
        for v in &rho {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
        let lp = p.log_prob(&[1, 1, 2, 2], label(2, 2)).unwrap();
        assert_abs_diff_eq!(lp, 4.0 * (0.5f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let p = init_params(small_config(), &RngStream::new(2)).unwrap();
        for pos in 1..=4 {
            let rho = p
                .forward_position(&[2, 1, 2, 1], label(1, 2), pos)
                .unwrap();
            assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(rho.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn causal_masking_exact() {
        let p = init_params(small_config(), &RngStream::new(3)).unwrap();
        let base = [1u32, 2, 1, 2];
        for pos in 1..=4usize {
            let reference = p.forward_position(&base, label(1, 2), pos).unwrap();
            // Perturbing any token at position >= pos must leave the output
            // bitwise identical.
            for t in (pos - 1)..4 {
                let mut x = base;
                x[t] = if x[t] == 1 { 2 } else { 1 };
                let got = p.forward_position(&x, label(1, 2), pos).unwrap();
                assert_eq!(reference, got, "pos {pos} token {t}");
            }
        }
    }

    #[test]
    fn token_and_label_range_checked() {
        let p = init_params(small_config(), &RngStream::new(4)).unwrap();
        assert!(p.forward_position(&[0, 1, 1, 1], label(1, 2), 1).is_err());
        assert!(p.forward_position(&[3, 1, 1, 1], label(1, 2), 1).is_err());
        assert!(p.forward_position(&[1, 1, 1], label(1, 2), 1).is_err());
        assert!(p.forward_position(&[1, 1, 1, 1], label(1, 2), 5).is_err());
    }

    #[test]
    fn log_prob_normalizes_over_support() {
        let config = ArmConfig {
            vocab: 2,
            seq_len: 10,
            k: 2,
            embed_dim: 3,
            depth: 2,
            width: 4,
        };
        let p = init_params(config, &RngStream::new(5)).unwrap();
        let table = CategoricalTable::new(2, 10, vec![1.0 / 1024.0; 1024]).unwrap();
        let mut total = 0.0;
        for idx in 0..1024 {
            let x = table.index_to_seq(idx);
            total += p.log_prob(&x, label(1, 2)).unwrap().exp();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn log_prob_ignores_unused_source_rows() {
        let mut p = init_params(small_config(), &RngStream::new(6)).unwrap();
        let x = [1u32, 2, 2, 1];
        let before = p.log_prob(&x, label(1, 2)).unwrap();
        // Rewrite the unused source row.
        for v in p.v_y.row_mut(1) {
            *v = 0.123;
        }
        let after = p.log_prob(&x, label(1, 2)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn enumerate_matches_log_prob_and_normalizes() {
        let p = init_params(small_config(), &RngStream::new(7)).unwrap();
        let dist = p.enumerate_distribution(label(2, 2)).unwrap();
        assert_eq!(dist.len(), 16);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let table = CategoricalTable::new(2, 4, vec![1.0 / 16.0; 16]).unwrap();
        for idx in 0..16 {
            let x = table.index_to_seq(idx);
            let lp = p.log_prob(&x, label(2, 2)).unwrap();
            assert_abs_diff_eq!(dist[idx], lp.exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn enumerate_single_step_equals_forward() {
        let config = ArmConfig {
            vocab: 3,
            seq_len: 1,
            k: 1,
            embed_dim: 2,
            depth: 2,
            width: 3,
        };
        let p = init_params(config, &RngStream::new(8)).unwrap();
        let dist = p.enumerate_distribution(label(1, 1)).unwrap();
        let rho = p.forward_position(&[1], label(1, 1), 1).unwrap();
        for (a, b) in dist.iter().zip(&rho) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn support_guard_enforced() {
        let config = ArmConfig {
            vocab: 2,
            seq_len: 25,
            k: 1,
            embed_dim: 2,
            depth: 1,
            width: 1,
        };
        assert!(config.support_size().is_err());
    }

    /// Shared helper: max relative error of grad_nll vs central differences.
    pub(crate) fn max_grad_rel_error(p: &ArmParams, batch: &[(Vec<u32>, SourceLabel)]) -> f64 {
        let grads = grad_nll(p, batch).unwrap();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let mut check = |get: &mut dyn FnMut(&mut ArmParams) -> &mut f64, analytic: f64| {
            let mut plus = p.clone();
            *get(&mut plus) += h;
            let mut minus = p.clone();
            *get(&mut minus) -= h;
            let numeric =
                (mean_nll(&plus, batch).unwrap() - mean_nll(&minus, batch).unwrap()) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        };
        for r in 0..p.v_y.rows() {
            for c in 0..p.v_y.cols() {
                let g = grads.v_y.row(r)[c];
                check(&mut |q: &mut ArmParams| &mut q.v_y.row_mut(r)[c], g);
            }
        }
        for r in 0..p.v_x.rows() {
            for c in 0..p.v_x.cols() {
                let g = grads.v_x.row(r)[c];
                check(&mut |q: &mut ArmParams| &mut q.v_x.row_mut(r)[c], g);
            }
        }
        for r in 0..p.a0.rows() {
            for c in 0..p.a0.cols() {
                let g = grads.a0.row(r)[c];
                check(&mut |q: &mut ArmParams| &mut q.a0.row_mut(r)[c], g);
            }
        }
        for i in 0..p.b0.len() {
            let g = grads.b0[i];
            check(&mut |q: &mut ArmParams| &mut q.b0[i], g);
        }
        for li in 0..p.mlp.depth() {
            for i in 0..p.mlp.layers()[li].weight.data().len() {
                let g = grads.mlp.layers[li].weight.data()[i];
                check(
                    &mut |q: &mut ArmParams| &mut q.mlp.layers_mut()[li].weight.data_mut()[i],
                    g,
                );
            }
            for i in 0..p.mlp.layers()[li].bias.len() {
                let g = grads.mlp.layers[li].bias[i];
                check(
                    &mut |q: &mut ArmParams| &mut q.mlp.layers_mut()[li].bias[i],
                    g,
                );
            }
        }
        max_rel
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // The acceptance suite runs 10 instances; this is the smoke version.
        let p = init_params(small_config(), &RngStream::new(9)).unwrap();
        let batch: Vec<(Vec<u32>, SourceLabel)> = vec![
            (vec![1, 2, 2, 1], label(1, 2)),
            (vec![2, 2, 1, 1], label(2, 2)),
            (vec![1, 1, 1, 2], label(1, 2)),
        ];
        let max_rel = max_grad_rel_error(&p, &batch);
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn unused_source_row_gradient_is_zero() {
        let p = init_params(small_config(), &RngStream::new(10)).unwrap();
        let batch = vec![(vec![1, 2, 2, 1], label(1, 2))];
        let grads = grad_nll(&p, &batch).unwrap();
        assert!(grads.v_y.row(1).iter().all(|&g| g == 0.0));
        assert!(grads.v_y.row(0).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradient_unchanged() {
        let p = init_params(small_config(), &RngStream::new(11)).unwrap();
        let batch = vec![
            (vec![1u32, 2, 2, 1], label(1, 2)),
            (vec![2u32, 1, 1, 2], label(2, 2)),
        ];
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let g1 = grad_nll(&p, &batch).unwrap();
        let g2 = grad_nll(&p, &doubled).unwrap();
        for (a, b) in g1.v_y.data().iter().zip(g2.v_y.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        for (a, b) in g1.mlp.layers[0]
            .weight
            .data()
            .iter()
            .zip(g2.mlp.layers[0].weight.data())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let config = small_config();
        let p = init_params(config, &RngStream::new(12)).unwrap();
        let truth = make_truth_tables(2, 2, 4, 1.0, 0.0, &RngStream::new(13)).unwrap();
        let mut all: Vec<(Vec<u32>, SourceLabel)> = truth[0]
            .sample(20, &RngStream::new(14))
            .into_iter()
            .map(|x| (x, label(1, 2)))
            .collect();
        all.extend(
            truth[1]
                .sample(20, &RngStream::new(15))
                .into_iter()
                .map(|x| (x, label(2, 2))),
        );
        let ds = TokenDataset::new(2, all).unwrap();
        let (trained, stats) = train(
            &p,
            &ds,
            TrainSpec {
                learning_rate: 0.0,
                batch_size: 8,
                iters: 50,
            },
            &RngStream::new(16),
        )
        .unwrap();
        assert_eq!(trained, p);
        assert_eq!(stats.initial_nll, stats.final_nll);
    }

    #[test]
    fn training_deterministic() {
        let config = small_config();
        let p = init_params(config, &RngStream::new(17)).unwrap();
        let truth = make_truth_tables(1, 2, 4, 1.0, 0.0, &RngStream::new(18)).unwrap();
        let xs = truth[0].sample(50, &RngStream::new(19));
        let ds =
            TokenDataset::new(2, xs.into_iter().map(|x| (x, label(1, 2))).collect()).unwrap();
        let spec = TrainSpec {
            learning_rate: 0.1,
            batch_size: 10,
            iters: 100,
        };
        let (a, _) = train(&p, &ds, spec, &RngStream::new(20)).unwrap();
        let (b, _) = train(&p, &ds, spec, &RngStream::new(20)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_on_uniform_truth_approaches_entropy_floor() {
        // Uniform truth is exactly representable (zero-weight MLP); the NLL
        // floor is D log M.
        let config = ArmConfig {
            vocab: 2,
            seq_len: 6,
            k: 1,
            embed_dim: 3,
            depth: 2,
            width: 4,
        };
        let p = init_params(config, &RngStream::new(21)).unwrap();
        let support = 1usize << 6;
        let truth = CategoricalTable::new(2, 6, vec![1.0 / support as f64; support]).unwrap();
        let xs = truth.sample(2000, &RngStream::new(22));
        let ds =
            TokenDataset::new(1, xs.into_iter().map(|x| (x, label(1, 1))).collect()).unwrap();
        let (_, stats) = train(
            &p,
            &ds,
            TrainSpec {
                learning_rate: 0.3,
                batch_size: 100,
                iters: 2000,
            },
            &RngStream::new(23),
        )
        .unwrap();
        let floor = 6.0 * (2.0f64).ln();
        assert!(
            stats.final_nll <= stats.initial_nll,
            "NLL should not increase"
        );
        assert!(
            (stats.final_nll - floor).abs() / floor < 0.02,
            "final NLL {} vs floor {floor}",
            stats.final_nll
        );
    }

    #[test]
    fn truth_tables_normalized_and_distinct() {
        let tables = make_truth_tables(3, 2, 4, 1.0, 0.0, &RngStream::new(24)).unwrap();
        assert_eq!(tables.len(), 3);
        for t in &tables {
            assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_ne!(tables[0], tables[1]);
    }

    #[test]
    fn shared_weight_couples_tables() {
        let stream = RngStream::new(27);
        let indep = make_truth_tables(2, 2, 6, 1.0, 0.0, &stream).unwrap();
        let coupled = make_truth_tables(2, 2, 6, 1.0, 0.9, &stream).unwrap();
        let tv_indep = tv_tables(indep[0].probs(), indep[1].probs()).unwrap();
        let tv_coupled = tv_tables(coupled[0].probs(), coupled[1].probs()).unwrap();
        assert!(
            tv_coupled < 0.5 * tv_indep,
            "coupling should pull tables together: {tv_coupled} vs {tv_indep}"
        );
        assert!(make_truth_tables(2, 2, 4, 1.0, 1.5, &stream).is_err());
        // Fully shared: identical tables.
        let same = make_truth_tables(3, 2, 4, 1.0, 1.0, &stream).unwrap();
        assert_eq!(same[0], same[1]);
        assert_eq!(same[1], same[2]);
    }

    #[test]
    fn high_concentration_approaches_uniform() {
        let tables = make_truth_tables(1, 2, 4, 1e6, 0.0, &RngStream::new(25)).unwrap();
        let uniform = 1.0 / 16.0;
        for &p in tables[0].probs() {
            assert!((p - uniform).abs() < 1e-2);
        }
    }

    #[test]
    fn tv_tables_hand_values() {
        // Uniform vs point mass on M=2, D=1: TV = 1/2.
        let tv = tv_tables(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(tv, 0.5, epsilon = 1e-15);
        assert!(tv_tables(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn exact_avg_tv_zero_for_matching_tables() {
        let config = ArmConfig {
            vocab: 2,
            seq_len: 3,
            k: 2,
            embed_dim: 2,
            depth: 1,
            width: 1,
        };
        let p = init_params(config, &RngStream::new(26)).unwrap();
        let w = SourceWeights::uniform(2);
        // Use the model's own distributions as "truths": TV must be 0.
        let truths: Vec<CategoricalTable> = (1..=2)
            .map(|v| {
                CategoricalTable::new(2, 3, p.enumerate_distribution(label(v, 2)).unwrap())
                    .unwrap()
            })
            .collect();
        let tv = exact_avg_tv(&StrategyParams::Multi(p), &truths, &w).unwrap();
        assert!(tv < 1e-12);
    }

    #[test]
    fn seq_index_roundtrip() {
        let table = CategoricalTable::new(3, 4, vec![1.0 / 81.0; 81]).unwrap();
        for idx in 0..81 {
            let x = table.index_to_seq(idx);
            assert_eq!(table.seq_to_index(&x), idx);
            assert!(x.iter().all(|&t| (1..=3).contains(&t)));
        }
    }
}
