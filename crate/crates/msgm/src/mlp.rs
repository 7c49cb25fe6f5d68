//! Dense ReLU multilayer perceptron with hand-derived reverse-mode
//! gradients.
//!
//! Layer semantics follow the function-class definition used by the bound
//! calculators: the first layer is affine on the raw input and ReLU sits
//! *between* layers, so a depth-1 network is a plain affine map and the
//! final layer output has no activation. `forward_intermediates` exposes
//! the pre-activation output of every layer, which is what the sup-norm
//! and Lipschitz lemma checks quantify over.

use crate::error::{Error, Result};
use rand::Rng;

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yr = acc;
        }
    }

    /// y = A^T x.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.fill(0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += a * xr;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Parameter gradients with the same shape as an [`Mlp`]; accumulated with `+=`.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("MLP needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} feeds layer input {}",
                    w[0].weight.rows(),
                    w[1].weight.cols()
                )));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weight.rows()) {
            return Err(Error::ShapeMismatch("bias length must match rows".into()));
        }
        Ok(Mlp { layers })
    }

    /// Dense network with all hidden widths equal to `width`; entries drawn
    /// uniformly from `[-bound, bound]`.
    pub fn random_uniform(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        depth: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("depth must be >= 1"));
        }
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(input_dim);
        for _ in 1..depth {
            dims.push(width);
        }
        dims.push(output_dim);
        let layers = (0..depth)
            .map(|l| Layer {
                weight: Mat::from_fn(dims[l + 1], dims[l], |_, _| {
                    rng.random_range(-bound..=bound)
                }),
                bias: (0..dims[l + 1])
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Maximum absolute parameter entry.
    pub fn max_abs_entry(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(&l.bias))
            .fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Total parameter count (dense sparsity S for bound reporting).
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.weight.data().len() + l.bias.len()) as u64)
            .sum()
    }

    /// Pre-activation output of every layer; the last entry is the network
    /// output.
    pub fn forward_intermediates(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            if idx > 0 {
                for v in &mut cur {
                    *v = v.max(0.0);
                }
            }
            let mut next = vec![0.0; layer.weight.rows()];
            layer.weight.matvec(&cur, &mut next);
            for (n, b) in next.iter_mut().zip(&layer.bias) {
                *n += b;
            }
            outs.push(next.clone());
            cur = next;
        }
        outs
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_intermediates(x).pop().unwrap()
    }

    /// Reverse-mode pass. `preacts` must come from `forward_intermediates`
    /// on the same input. Accumulates parameter gradients into `grads` and
    /// writes the input gradient into `d_input`.
    pub fn backward(
        &self,
        x: &[f64],
        preacts: &[Vec<f64>],
        d_out: &[f64],
        grads: &mut MlpGrads,
        d_input: &mut [f64],
    ) {
        debug_assert_eq!(preacts.len(), self.layers.len());
        debug_assert_eq!(d_out.len(), self.output_dim());
        let mut d_cur = d_out.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let g = &mut grads.layers[idx];
            // Layer input: ReLU of previous pre-activation, or x at idx 0.
            let apply_grad = |g: &mut Layer, input: &[f64], d_cur: &[f64]| {
                for (r, &dr) in d_cur.iter().enumerate() {
                    if dr != 0.0 {
                        let row = g.weight.row_mut(r);
                        for (w, &a) in row.iter_mut().zip(input) {
                            *w += dr * a;
                        }
                    }
                    g.bias[r] += dr;
                }
            };
            if idx == 0 {
                apply_grad(g, x, &d_cur);
                layer.weight.matvec_transpose(&d_cur, d_input);
            } else {
                let prev = &preacts[idx - 1];
                let input: Vec<f64> = prev.iter().map(|&v| v.max(0.0)).collect();
                apply_grad(g, &input, &d_cur);
                let mut d_prev = vec![0.0; prev.len()];
                layer.weight.matvec_transpose(&d_cur, &mut d_prev);
                for (dp, &p) in d_prev.iter_mut().zip(prev) {
                    if p <= 0.0 {
                        *dp = 0.0;
                    }
                }
                d_cur = d_prev;
            }
        }
    }

    /// Plain gradient step: `param -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn depth_one_is_affine() {
        let mlp = Mlp::new(vec![Layer {
            weight: Mat::from_fn(1, 2, |_, c| if c == 0 { 2.0 } else { -1.0 }),
            bias: vec![0.5],
        }])
        .unwrap();
        assert_eq!(mlp.forward(&[3.0, 1.0]), vec![2.0 * 3.0 - 1.0 + 0.5]);
    }

    #[test]
    fn relu_applied_between_layers_only() {
        // f(x) = 1 * ReLU(-x): first layer output is negative, gets clamped.
        let mlp = Mlp::new(vec![
            Layer {
                weight: Mat::from_fn(1, 1, |_, _| -1.0),
                bias: vec![0.0],
            },
            Layer {
                weight: Mat::from_fn(1, 1, |_, _| 1.0),
                bias: vec![0.0],
            },
        ])
        .unwrap();
        assert_eq!(mlp.forward(&[2.0]), vec![0.0]);
        assert_eq!(mlp.forward(&[-2.0]), vec![2.0]);
        // Final layer output itself is not clamped.
        let neg_out = Mlp::new(vec![
            Layer {
                weight: Mat::from_fn(1, 1, |_, _| 1.0),
                bias: vec![0.0],
            },
            Layer {
                weight: Mat::from_fn(1, 1, |_, _| -1.0),
                bias: vec![0.0],
            },
        ])
        .unwrap();
        assert_eq!(neg_out.forward(&[2.0]), vec![-2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(31).rng();
        let mlp = Mlp::random_uniform(3, 5, 2, 3, 1.0, &mut rng).unwrap();
        let x = [0.3, -0.7, 0.2];
        let d_out = [1.0, -2.0];
        // Scalar objective: d_out . f(x).
        let objective = |m: &Mlp, x: &[f64]| -> f64 {
            m.forward(x).iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };

        let preacts = mlp.forward_intermediates(&x);
        let mut grads = MlpGrads::zeros_like(&mlp);
        let mut d_input = vec![0.0; 3];
        mlp.backward(&x, &preacts, &d_out, &mut grads, &mut d_input);

        let h = 1e-6;
        for li in 0..mlp.depth() {
            for i in 0..mlp.layers()[li].weight.data().len() {
                let mut plus = mlp.clone();
                plus.layers_mut()[li].weight.data_mut()[i] += h;
                let mut minus = mlp.clone();
                minus.layers_mut()[li].weight.data_mut()[i] -= h;
                let num = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
                let ana = grads.layers[li].weight.data()[i];
                assert!(
                    (num - ana).abs() <= 1e-5 * num.abs().max(ana.abs()).max(1.0),
                    "layer {li} weight {i}: {ana} vs {num}"
                );
            }
            for i in 0..mlp.layers()[li].bias.len() {
                let mut plus = mlp.clone();
                plus.layers_mut()[li].bias[i] += h;
                let mut minus = mlp.clone();
                minus.layers_mut()[li].bias[i] -= h;
                let num = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
                let ana = grads.layers[li].bias[i];
                assert!(
                    (num - ana).abs() <= 1e-5 * num.abs().max(ana.abs()).max(1.0),
                    "layer {li} bias {i}: {ana} vs {num}"
                );
            }
        }
        // Input gradient.
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let num = (objective(&mlp, &xp) - objective(&mlp, &xm)) / (2.0 * h);
            assert!((num - d_input[i]).abs() <= 1e-5 * num.abs().max(1.0));
        }
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut rng = RngStream::new(5).rng();
        let mut mlp = Mlp::random_uniform(2, 3, 1, 2, 0.5, &mut rng).unwrap();
        let before = mlp.layers()[0].weight.data()[0];
        let mut grads = MlpGrads::zeros_like(&mlp);
        grads.layers[0].weight.data_mut()[0] = 2.0;
        mlp.sgd_step(&grads, 0.1);
        assert!((mlp.layers()[0].weight.data()[0] - (before - 0.2)).abs() < 1e-15);
    }
}
