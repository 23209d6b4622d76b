//! Dense feed-forward networks with a recorded activation tape.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One affine layer followed by an activation. `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Activations recorded by [`Mlp::forward`]; consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("tape of a non-empty network")
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Orthogonally initialised network. `sizes` lists every width from input
    /// to output; hidden layers use `hidden_gain`, the last layer `output_gain`.
    pub fn orthogonal(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let (act, gain) = if last { (output, output_gain) } else { (hidden, hidden_gain) };
                Dense {
                    weight: orthogonal_matrix(sizes[i + 1], sizes[i], gain, rng),
                    bias: Array1::zeros(sizes[i + 1]),
                    activation: act,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(NnError::ShapeMismatch {
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(NnError::ShapeMismatch { expected: l.output_dim(), got: l.bias.len() });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::output_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Tape), NnError> {
        self.check_input(input.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = apply_layer(layer, &x);
            inputs.push(x);
            x = y.clone();
            outputs.push(y);
        }
        Ok((x, Tape { inputs, outputs }))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(input.ncols())?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = apply_layer(layer, &x);
        }
        Ok(x)
    }

    /// Single-vector convenience wrapper around [`Mlp::forward`].
    pub fn forward_vec(&self, input: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        let (y, tape) = self.forward(&x)?;
        Ok((y.into_raw_vec_and_offset().0, tape))
    }

    /// Reverse pass. Returns parameter gradients (shaped like `self`) and the
    /// gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, d_output: &Array2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Tanh {
                let out = &tape.outputs[i];
                ndarray::Zip::from(&mut delta).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
            }
            let d_weight = delta.t().dot(&tape.inputs[i]);
            let d_bias = delta.sum_axis(Axis(0));
            let d_input = delta.dot(&layer.weight);
            grads.push(Dense { weight: d_weight, bias: d_bias, activation: layer.activation });
            delta = d_input;
        }
        grads.reverse();
        (Mlp { layers: grads }, delta)
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim(), l.activation))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::ShapeMismatch { expected: self.input_dim(), got: cols });
        }
        Ok(())
    }
}

fn apply_layer(layer: &Dense, x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(&layer.weight.t());
    y += &layer.bias;
    if layer.activation == Activation::Tanh {
        y.mapv_inplace(f64::tanh);
    }
    y
}

/// `rows × cols` matrix with orthonormal rows (or columns, whichever is
/// shorter), scaled by `gain`. Modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Array2<f64> {
    let transpose = rows < cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    // n ≥ m: orthonormalise the m columns of an n × m matrix.
    let mut a = Array2::<f64>::zeros((n, m));
    for v in a.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for j in 0..m {
        for p in 0..j {
            let dot: f64 = (0..n).map(|i| a[[i, j]] * a[[i, p]]).sum();
            for i in 0..n {
                a[[i, j]] -= dot * a[[i, p]];
            }
        }
        let norm: f64 = (0..n).map(|i| a[[i, j]] * a[[i, j]]).sum::<f64>().sqrt();
        let norm = if norm > 1e-12 { norm } else { 1.0 };
        for i in 0..n {
            a[[i, j]] /= norm;
        }
    }
    a *= gain;
    if transpose {
        a.t().as_standard_layout().into_owned()
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use ndarray::array;

    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &net.layers {
            let mut next = vec![0.0; l.output_dim()];
            for (o, n) in next.iter_mut().enumerate() {
                let mut s = l.bias[o];
                for (i, c) in cur.iter().enumerate() {
                    s += l.weight[[o, i]] * c;
                }
                *n = match l.activation {
                    Activation::Identity => s,
                    Activation::Tanh => s.tanh(),
                };
            }
            cur = next;
        }
        cur
    }

    fn random_net(sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = rng_from(seed);
        let mut net = Mlp::orthogonal(sizes, Activation::Tanh, Activation::Identity, 1.0, 1.0, &mut rng);
        for l in &mut net.layers {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::from_layers(vec![
            Dense::zeros(3, 4, Activation::Tanh),
            Dense::zeros(4, 2, Activation::Identity),
        ])
        .unwrap();
        let (y, _) = net.forward_vec(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut l = Dense::zeros(3, 3, Activation::Identity);
        l.weight = Array2::eye(3);
        let net = Mlp::from_layers(vec![l]).unwrap();
        let (y, _) = net.forward_vec(&[0.5, -1.5, 2.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let net = random_net(&[5, 7, 6, 3], 11);
        let x = [0.3, -0.7, 1.1, 0.05, -2.0];
        let (y, _) = net.forward_vec(&x).unwrap();
        let r = reference_forward(&net, &x);
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = random_net(&[4, 3], 1);
        assert!(matches!(
            net.forward_vec(&[1.0, 2.0]),
            Err(NnError::ShapeMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn linear_squared_loss_gradient_is_analytic() {
        // L = ||Wx - y||², dL/dW = 2 (Wx - y) xᵀ
        let mut l = Dense::zeros(2, 2, Activation::Identity);
        l.weight = array![[0.5, -1.0], [2.0, 0.25]];
        let net = Mlp::from_layers(vec![l]).unwrap();
        let x = [1.5, -0.5];
        let y = [0.2, 1.0];
        let (out, tape) = net.forward_vec(&x).unwrap();
        let r: Vec<f64> = out.iter().zip(&y).map(|(o, t)| o - t).collect();
        let d_out = Array2::from_shape_vec((1, 2), r.iter().map(|v| 2.0 * v).collect()).unwrap();
        let (g, _) = net.backward(&tape, &d_out);
        for o in 0..2 {
            for i in 0..2 {
                assert!((g.layers[0].weight[[o, i]] - 2.0 * r[o] * x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = random_net(&[3, 4, 2], 5);
        let x = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, -0.1, 0.4, 0.9]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&tape, &Array2::zeros((2, 2)));
        assert_eq!(g.squared_norm(), 0.0);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_layer_gradient_matches_central_differences() {
        let net = random_net(&[4, 6, 3], 23);
        let x = Array2::from_shape_vec(
            (3, 4),
            vec![0.2, -0.4, 0.9, 1.3, -1.1, 0.5, 0.05, -0.3, 0.7, 0.7, -0.8, 0.1],
        )
        .unwrap();
        let c = Array2::from_shape_vec((3, 3), vec![0.3, -1.0, 0.5, 1.2, 0.4, -0.7, -0.2, 0.9, 0.6])
            .unwrap();
        // L = Σ c ⊙ tanh-net(x)² / 2
        let loss = |n: &Mlp| -> f64 {
            let y = n.predict(&x).unwrap();
            (&y * &y * &c).sum() * 0.5
        };
        let (y, tape) = net.forward(&x).unwrap();
        let d_out = &y * &c;
        let (g, _) = net.backward(&tape, &d_out);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for li in 0..net.layers.len() {
            for idx in 0..net.layers[li].weight.len() {
                let mut p = net.clone();
                p.layers[li].weight.as_slice_mut().unwrap()[idx] += h;
                let mut m = net.clone();
                m.layers[li].weight.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = g.layers[li].weight.as_slice().unwrap()[idx];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rng_from(3);
        let w = orthogonal_matrix(4, 9, 1.0, &mut rng);
        let g = w.dot(&w.t());
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-10);
            }
        }
        let w = orthogonal_matrix(9, 4, 2.0, &mut rng);
        let g = w.t().dot(&w);
        assert!((g[[2, 2]] - 4.0).abs() < 1e-10);
        assert!(g[[0, 3]].abs() < 1e-10);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let net = random_net(&[6, 8, 4], 99);
        let x = Array2::from_shape_fn((5, 6), |(i, j)| (i as f64 * 0.37 - j as f64 * 0.11).sin());
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
    }
}
