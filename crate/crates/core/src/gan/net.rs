use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs × outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Fully connected feed-forward network operating on row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Intermediate values kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Trace {
    /// Pre-activation of the final layer.
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Parameter-shaped container used for gradients and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("network needs at least one layer")]
    Empty,
    #[error("layer {layer}: expects {expected} inputs, previous layer gives {found}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(NetError::ShapeMismatch {
                    layer: i + 1,
                    expected: pair[1].inputs(),
                    found: pair[0].outputs(),
                });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(NetError::ShapeMismatch {
                    layer: i,
                    expected: l.outputs(),
                    found: l.bias.len(),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output; `hidden` applies between them.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a)),
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weights) + &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            h = z;
        }
        h
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let z = h.dot(&l.weights) + &l.bias;
            let y = z.mapv(|v| l.activation.apply(v));
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        Trace { inputs, pre, output: h }
    }

    /// Backpropagate `grad_out` (loss gradient w.r.t. the network output).
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>) -> (Gradients, Array2<f64>) {
        let last = self.layers.len() - 1;
        let mut delta = grad_out.clone();
        let act = self.layers[last].activation;
        Zip::from(&mut delta)
            .and(&trace.pre[last])
            .and(&trace.output)
            .for_each(|d, &x, &y| *d *= act.derivative(x, y));
        self.backward_from_logits(trace, delta)
    }

    /// Backpropagate a gradient taken w.r.t. the final layer's
    /// pre-activation, which lets losses be written on logits.
    pub fn backward_from_logits(&self, trace: &Trace, mut delta: Array2<f64>) -> (Gradients, Array2<f64>) {
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        for i in (0..n).rev() {
            weights[i] = trace.inputs[i].t().dot(&delta);
            biases[i] = delta.sum_axis(Axis(0));
            let mut up = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                let act = self.layers[i - 1].activation;
                Zip::from(&mut up)
                    .and(&trace.pre[i - 1])
                    .and(&trace.inputs[i])
                    .for_each(|d, &x, &y| *d *= act.derivative(x, y));
            }
            delta = up;
        }
        (Gradients { weights, biases }, delta)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut it = p.iter();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|w| *w = *it.next().unwrap());
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert_eq!(softplus(800.0), 800.0);
        approx::assert_abs_diff_eq!(softplus(0.3), (1.0 + 0.3f64.exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = DenseNet::new(&[3, 4], Activation::Relu, Activation::Identity, &mut rng);
        let b = DenseNet::new(&[5, 2], Activation::Relu, Activation::Identity, &mut rng);
        let layers = vec![a.layers[0].clone(), b.layers[0].clone()];
        assert_eq!(
            DenseNet::from_layers(layers),
            Err(NetError::ShapeMismatch {
                layer: 1,
                expected: 5,
                found: 4
            })
        );
        assert_eq!(DenseNet::from_layers(vec![]), Err(NetError::Empty));
    }

    #[test]
    fn forward_matches_hand_computation() {
        let net = DenseNet::from_layers(vec![Layer {
            weights: array![[1.0, -1.0], [2.0, 0.5]],
            bias: array![0.5, 0.0],
            activation: Activation::Relu,
        }])
        .unwrap();
        let y = net.forward(array![[1.0, 1.0]].view());
        assert_eq!(y, array![[3.5, 0.0]]);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(&[4, 7, 3], Activation::Tanh, Activation::Sigmoid, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |x: &Array2<f64>| net.forward(x.view()).sum();
        let tr = net.forward_trace(x.view());
        let (_, gx) = net.backward(&tr, &Array2::ones((2, 3)));
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[[i, j]] += h;
                m[[i, j]] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                approx::assert_relative_eq!(gx[[i, j]], fd, max_relative = 1e-6);
            }
        }
    }
}
