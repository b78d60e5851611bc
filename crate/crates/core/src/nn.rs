//! Dense ReLU network with hand-written backpropagation and plain SGD.
//!
//! All math is f64. Batched variants run the same algebra on a
//! `[batch x features]` matrix so a minibatch costs a handful of matrix
//! products instead of per-sample vector loops.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("action {action} out of range for {outputs} outputs")]
    ActionOutOfRange { action: usize, outputs: usize },
    #[error("target must be finite, got {0}")]
    NonFiniteTarget(f64),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("malformed parameter text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out x in]`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Gradients for every parameter of an [`Mlp`], shaped like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weights.iter().chain(g.biases.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.biases *= factor;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.biases.iter()).copied())
    }
}

/// Multilayer perceptron `Q(s, .; theta)`: hidden ReLU layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Forward activations kept for backpropagation.
struct Trace {
    /// `inputs[l]` is the input matrix fed to layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Mlp {
    /// Zero-initialized network with the given layer widths, e.g.
    /// `[10, 256, 256, 10]`. Hidden layers use ReLU, the last is identity.
    pub fn new(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least an input and an output width");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Self { layers }
    }

    /// `channels -> hidden... -> channels`, one Q-value per channel.
    pub fn q_network(channels: usize, hidden: &[usize]) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(channels);
        sizes.extend_from_slice(hidden);
        sizes.push(channels);
        Self::new(&sizes)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ArchitectureMismatch("no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.biases.len() != l.outputs() {
                return Err(NnError::DimensionMismatch {
                    expected: l.outputs(),
                    actual: l.biases.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Layer widths, input first.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::outputs))
            .collect()
    }

    fn same_architecture(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.activation == b.activation
            })
    }

    /// Glorot-uniform weights in `[-b, b]`, `b = sqrt(6 / (fan_in + fan_out))`;
    /// zero biases.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let bound = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-bound..=bound));
            layer.biases.fill(0.0);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut x = Array1::from(input.to_vec());
        for layer in &self.layers {
            let mut z = layer.weights.dot(&x) + &layer.biases;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(relu);
            }
            x = z;
        }
        Ok(x.to_vec())
    }

    /// Forward pass over a `[batch x input_dim]` matrix.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_batch(inputs)?;
        let mut x = inputs.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t()) + &layer.biases;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(relu);
            }
            x = z;
        }
        Ok(x)
    }

    fn check_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<(), NnError> {
        if inputs.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    fn trace(&self, inputs: ArrayView2<'_, f64>) -> Trace {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = inputs.to_owned();
        for layer in &self.layers {
            let z = x.dot(&layer.weights.t()) + &layer.biases;
            let a = match layer.activation {
                Activation::Relu => z.mapv(relu),
                Activation::Identity => z.clone(),
            };
            layer_inputs.push(x);
            pre.push(z);
            x = a;
        }
        Trace {
            inputs: layer_inputs,
            pre,
            output: x,
        }
    }

    /// Squared error `(Q(input)[action] - target)^2` and its gradient with
    /// respect to every parameter.
    pub fn backward(
        &self,
        input: &[f64],
        action: usize,
        target: f64,
    ) -> Result<(f64, GradientSet), NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|_| {
            NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            }
        })?;
        self.backward_batch(x, &[action], &[target])
    }

    /// Mean over the batch of the per-sample squared errors, and the mean of
    /// the per-sample gradients.
    pub fn backward_batch(
        &self,
        inputs: ArrayView2<'_, f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, GradientSet), NnError> {
        self.check_batch(inputs)?;
        let k = inputs.nrows();
        if actions.len() != k || targets.len() != k {
            return Err(NnError::DimensionMismatch {
                expected: k,
                actual: actions.len().min(targets.len()),
            });
        }
        let outputs = self.output_dim();
        for (&a, &y) in actions.iter().zip(targets) {
            if a >= outputs {
                return Err(NnError::ActionOutOfRange { action: a, outputs });
            }
            if !y.is_finite() {
                return Err(NnError::NonFiniteTarget(y));
            }
        }

        let trace = self.trace(inputs);
        let scale = 1.0 / k as f64;
        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros((k, outputs));
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = trace.output[[i, a]] - y;
            loss += err * err;
            delta[[i, a]] = 2.0 * err * scale;
        }
        loss *= scale;

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut delta)
                    .and(&trace.pre[l])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            let gw = delta.t().dot(&trace.inputs[l]);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push(LayerGrad {
                weights: gw,
                biases: gb,
            });
        }
        grads.reverse();
        Ok((loss, GradientSet { layers: grads }))
    }

    fn check_grads(&self, grads: &GradientSet) -> Result<(), NnError> {
        let ok = grads.layers.len() == self.layers.len()
            && self.layers.iter().zip(&grads.layers).all(|(l, g)| {
                l.weights.dim() == g.weights.dim() && l.biases.dim() == g.biases.dim()
            });
        if ok {
            Ok(())
        } else {
            Err(NnError::ArchitectureMismatch(
                "gradient shapes do not match the network".into(),
            ))
        }
    }

    /// `theta <- theta - learning_rate * grad`, in place.
    pub fn sgd_step(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<(), NnError> {
        self.check_grads(grads)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-learning_rate, &g.weights);
            layer.biases.scaled_add(-learning_rate, &g.biases);
        }
        Ok(())
    }

    /// Overwrites `self` with the parameters of `src`.
    pub fn copy_parameters_from(&mut self, src: &Mlp) -> Result<(), NnError> {
        if !self.same_architecture(src) {
            return Err(NnError::ArchitectureMismatch(format!(
                "cannot copy {:?} into {:?}",
                src.shape(),
                self.shape()
            )));
        }
        for (d, s) in self.layers.iter_mut().zip(&src.layers) {
            d.weights.assign(&s.weights);
            d.biases.assign(&s.biases);
        }
        Ok(())
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    /// Portable text form: one `layer` header per layer followed by its
    /// row-major weights and its biases, floats in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mlp {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(out, "layer {} {} {}", l.inputs(), l.outputs(), l.activation.name()).unwrap();
            out.push('w');
            for v in l.weights.iter() {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
            out.push('b');
            for v in l.biases.iter() {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Mlp::to_text`] output from `lines`. `first_line` is the
    /// 1-based line number of the first item, used in error messages.
    pub fn from_text_lines<'a, I>(lines: &mut I, first_line: usize) -> Result<Self, NnError>
    where
        I: Iterator<Item = &'a str>,
    {
        let mut lineno = first_line;
        let mut next = |what: &str| -> Result<(usize, &'a str), NnError> {
            let l = lines.next().ok_or_else(|| NnError::Parse {
                line: lineno,
                message: format!("unexpected end of input, wanted {what}"),
            })?;
            lineno += 1;
            Ok((lineno - 1, l))
        };
        let perr = |line: usize, message: String| NnError::Parse { line, message };

        let (ln, head) = next("mlp header")?;
        let count: usize = head
            .strip_prefix("mlp ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| perr(ln, format!("expected `mlp <layers>`, got {head:?}")))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, head) = next("layer header")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(perr(ln, format!("expected `layer <in> <out> <activation>`, got {head:?}")));
            }
            let inputs: usize = parts[1].parse().map_err(|_| perr(ln, "bad input width".into()))?;
            let outputs: usize = parts[2].parse().map_err(|_| perr(ln, "bad output width".into()))?;
            let activation = Activation::parse(parts[3])
                .ok_or_else(|| perr(ln, format!("unknown activation {:?}", parts[3])))?;

            let (ln, wline) = next("weights")?;
            let w = parse_floats(wline, 'w', inputs * outputs).map_err(|m| perr(ln, m))?;
            let (ln, bline) = next("biases")?;
            let b = parse_floats(bline, 'b', outputs).map_err(|m| perr(ln, m))?;
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((outputs, inputs), w).expect("length checked"),
                biases: Array1::from(b),
                activation,
            });
        }
        Mlp::from_layers(layers)
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        Self::from_text_lines(&mut text.lines(), 1)
    }
}

fn parse_floats(line: &str, tag: char, expected: usize) -> Result<Vec<f64>, String> {
    let mut it = line.split_whitespace();
    if it.next() != Some(tag.encode_utf8(&mut [0; 4])) {
        return Err(format!("expected line tagged `{tag}`"));
    }
    let values = it
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad number {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, got {}", values.len()));
    }
    Ok(values)
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Copies `src`'s parameters into `dst`. Architectures must match.
pub fn copy_parameters(src: &Mlp, dst: &mut Mlp) -> Result<(), NnError> {
    dst.copy_parameters_from(src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hand_net() -> Mlp {
        // 2 -> 2 relu -> 2 identity
        Mlp::from_layers(vec![
            DenseLayer {
                weights: array![[1.0, -2.0], [0.5, 0.25]],
                biases: array![0.5, -1.0],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: array![[2.0, 1.0], [-1.0, 3.0]],
                biases: array![0.0, 0.1],
                activation: Activation::Identity,
            },
        ])
        .unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::q_network(4, &[8, 8]);
        assert_eq!(net.forward(&[0.3, 0.1, 0.9, 0.2]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::from_layers(vec![DenseLayer {
            weights: Array2::eye(3),
            biases: Array1::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn hand_evaluated_forward() {
        // x = [1, 0.5]
        // h_pre = [1 - 1 + 0.5, 0.5 + 0.125 - 1] = [0.5, -0.375] -> relu [0.5, 0]
        // out = [2*0.5 + 0, -0.5 + 0 + 0.1] = [1.0, -0.4]
        let out = hand_net().forward(&[1.0, 0.5]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[1] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        assert_eq!(
            hand_net().forward(&[1.0]),
            Err(NnError::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        );
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let mut net = Mlp::q_network(3, &[4]);
        net.init_parameters(7);
        let x = [0.2, 0.4, 0.9];
        let q = net.forward(&x).unwrap();
        let (loss, grads) = net.backward(&x, 1, q[1]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter_values().all(|g| g == 0.0));
    }

    #[test]
    fn unselected_output_is_decoupled() {
        let net = Mlp::from_layers(vec![DenseLayer {
            weights: array![[2.0, 0.0], [0.0, 3.0]],
            biases: array![0.0, 0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let (_, g) = net.backward(&[1.0, 1.0], 0, 5.0).unwrap();
        assert_eq!(g.layers[0].weights.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.layers[0].biases[1], 0.0);
        assert_ne!(g.layers[0].biases[0], 0.0);
    }

    #[test]
    fn backward_rejects_bad_inputs() {
        let net = hand_net();
        assert!(matches!(
            net.backward(&[1.0, 1.0], 0, f64::NAN),
            Err(NnError::NonFiniteTarget(_))
        ));
        assert!(matches!(
            net.backward(&[1.0, 1.0], 2, 0.0),
            Err(NnError::ActionOutOfRange { .. })
        ));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = Mlp::from_layers(vec![DenseLayer {
            weights: array![[1.0]],
            biases: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let grads = GradientSet {
            layers: vec![LayerGrad {
                weights: array![[2.0]],
                biases: array![0.0],
            }],
        };
        let before = net.clone();
        net.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(net, before);
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // loss (w - 3)^2 through a 1x1 identity layer with x = 1 and target 3;
        // error shrinks by a factor 0.8 per step, 0.8^k * 3 < 1e-3 needs k >= 36.
        let mut net = Mlp::from_layers(vec![DenseLayer {
            weights: array![[0.0]],
            biases: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut steps = 0;
        while steps < 100 {
            let w = net.layers()[0].weights[[0, 0]];
            if (w - 3.0).abs() < 1e-3 {
                break;
            }
            let mut g = GradientSet::zeros_like(&net);
            g.layers[0].weights[[0, 0]] = 2.0 * (w - 3.0);
            net.sgd_step(&g, 0.1).unwrap();
            steps += 1;
        }
        assert!((net.layers()[0].weights[[0, 0]] - 3.0).abs() < 1e-3);
        assert_eq!(steps, 36);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut net = hand_net();
        let other = Mlp::q_network(3, &[2]);
        assert!(net.sgd_step(&GradientSet::zeros_like(&other), 0.1).is_err());
    }

    #[test]
    fn copy_is_isolated() {
        let mut src = Mlp::q_network(4, &[16, 16]);
        src.init_parameters(1);
        let mut dst = Mlp::q_network(4, &[16, 16]);
        copy_parameters(&src, &mut dst).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(src.forward(&x).unwrap(), dst.forward(&x).unwrap());
        let before = dst.forward(&x).unwrap();
        src.init_parameters(2);
        assert_eq!(dst.forward(&x).unwrap(), before);
    }

    #[test]
    fn copy_rejects_different_input_dim() {
        let src = Mlp::q_network(10, &[256, 256]);
        let mut dst = Mlp::q_network(8, &[256, 256]);
        assert!(matches!(
            copy_parameters(&src, &mut dst),
            Err(NnError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let mut a = Mlp::q_network(10, &[256, 256]);
        let mut b = Mlp::q_network(10, &[256, 256]);
        a.init_parameters(42);
        b.init_parameters(42);
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|&v| v == 0.0)));
        let bound = (6.0f64 / 512.0).sqrt();
        assert!(a.layers()[1].weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_weight_mean_near_zero() {
        // 65536 draws from U[-b, b], b = sqrt(6/512) ~ 0.108: standard error of
        // the mean is b / sqrt(3 * 65536) ~ 2.4e-4, far inside 0.01.
        let mut net = Mlp::new(&[256, 256]);
        net.init_parameters(9);
        let w = &net.layers()[0].weights;
        let mean = w.sum() / w.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn text_round_trip() {
        let mut net = Mlp::q_network(3, &[5, 4]);
        net.init_parameters(11);
        let text = net.to_text();
        assert_eq!(Mlp::from_text(&text).unwrap(), net);
    }

    #[test]
    fn text_parse_error_names_line() {
        let mut text = hand_net().to_text();
        text = text.replace("relu", "tanh");
        match Mlp::from_text(&text) {
            Err(NnError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let mut net = Mlp::q_network(3, &[6, 5]);
        net.init_parameters(5);
        let xs = array![[0.1, 0.7, 0.3], [0.9, 0.2, 0.4], [0.5, 0.5, 0.0]];
        let actions = [0, 2, 1];
        let targets = [1.0, -0.5, 0.25];
        let (loss, batch) = net.backward_batch(xs.view(), &actions, &targets).unwrap();
        let mut sum = GradientSet::zeros_like(&net);
        let mut loss_sum = 0.0;
        for i in 0..3 {
            let (l, g) = net
                .backward(xs.row(i).as_slice().unwrap(), actions[i], targets[i])
                .unwrap();
            loss_sum += l;
            sum.add_assign(&g);
        }
        sum.scale(1.0 / 3.0);
        assert!((loss - loss_sum / 3.0).abs() < 1e-12);
        for (a, b) in batch.iter_values().zip(sum.iter_values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
