//! A small fully connected value network with hand-written backpropagation.
//!
//! The network maps the concatenation `[state, action]` to a scalar. Hidden
//! layers use the rectifier, the output layer is linear. Parameters are kept
//! in flat row-major buffers so that a snapshot is a plain clone.

use std::io::{BufRead, Write};

use rand::Rng as _;
use thiserror::Error;

use crate::seeding::Rng;

const FILE_MAGIC: &str = "fairagent-qnet/1";

#[derive(Debug, Error)]
pub enum QnetError {
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network needs at least an input and an output size, and every size must be positive")]
    BadShape,
    #[error("output layer must have width 1, got {0}")]
    OutputWidth(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dense layer, `out = weights · in + bias` with `weights` stored
/// row-major as `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| self.bias[o] + dot(self.row(o), input)));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueNetwork {
    layers: Vec<Dense>,
}

impl ValueNetwork {
    /// He-uniform weights, zero biases. `sizes` lists every layer width from
    /// the input to the output (which must be 1).
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self, QnetError> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, QnetError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(QnetError::BadShape);
        }
        let out = *sizes.last().expect("checked length");
        if out != 1 {
            return Err(QnetError::OutputWidth(out));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, QnetError> {
        if layers.is_empty() {
            return Err(QnetError::BadShape);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(QnetError::ShapeMismatch(format!("layer {i} buffers disagree with its size")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(QnetError::ShapeMismatch(format!("layer {i} does not compose")));
            }
        }
        let out = layers.last().expect("non-empty").outputs;
        if out != 1 {
            return Err(QnetError::OutputWidth(out));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, state: &[f64], action: &[f64]) -> Result<(), QnetError> {
        let got = state.len() + action.len();
        if got != self.input_len() {
            return Err(QnetError::DimensionMismatch {
                expected: self.input_len(),
                got,
            });
        }
        Ok(())
    }

    /// Value of `[state, action]`.
    pub fn forward(&self, state: &[f64], action: &[f64]) -> Result<f64, QnetError> {
        self.check_input(state, action)?;
        let first = self.first_layer_state_part(state);
        Ok(self.finish_forward(&first, state.len(), action))
    }

    /// Values of one state paired with each action. The state's share of the
    /// first layer is computed once.
    pub fn forward_many<A: AsRef<[f64]>>(&self, state: &[f64], actions: &[A]) -> Result<Vec<f64>, QnetError> {
        for a in actions {
            self.check_input(state, a.as_ref())?;
        }
        let first = self.first_layer_state_part(state);
        Ok(actions
            .iter()
            .map(|a| self.finish_forward(&first, state.len(), a.as_ref()))
            .collect())
    }

    fn first_layer_state_part(&self, state: &[f64]) -> Vec<f64> {
        let l = &self.layers[0];
        (0..l.outputs)
            .map(|o| l.bias[o] + dot(&l.row(o)[..state.len()], state))
            .collect()
    }

    fn finish_forward(&self, first: &[f64], offset: usize, action: &[f64]) -> f64 {
        let l0 = &self.layers[0];
        let mut h: Vec<f64> = (0..l0.outputs)
            .map(|o| first[o] + dot(&l0.row(o)[offset..], action))
            .collect();
        let mut next = Vec::new();
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            layer.apply(&h, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        h[0]
    }

    /// Gradient of `(target - forward)^2` with respect to every parameter,
    /// together with that loss. The network is not modified.
    pub fn backward(&self, state: &[f64], action: &[f64], target: f64) -> Result<(f64, Gradients), QnetError> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_backward(state, action, target, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `scale ×` the gradient of one sample into `grads` and returns its
    /// unscaled loss.
    pub fn accumulate_backward(
        &self,
        state: &[f64],
        action: &[f64],
        target: f64,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64, QnetError> {
        self.check_input(state, action)?;
        grads.check_shape(self)?;
        let input: Vec<f64> = state.iter().chain(action).copied().collect();

        // Post-activation inputs of every layer.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&acts[i], &mut out);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut out);
            }
            acts.push(out);
        }
        let q = acts.last().expect("output")[0];
        let residual = q - target;

        let mut delta = vec![2.0 * residual * scale];
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let input = &acts[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                prev.iter_mut().zip(layer.row(o)).for_each(|(p, w)| *p += d * w);
            }
            // Rectifier derivative: the activation was positive.
            prev.iter_mut().zip(input).for_each(|(p, &a)| {
                if a <= 0.0 {
                    *p = 0.0;
                }
            });
            delta = prev;
        }
        Ok(residual * residual)
    }

    /// An independent copy of the parameters.
    pub fn snapshot(&self) -> ValueNetwork {
        self.clone()
    }

    pub fn load_snapshot(&mut self, snapshot: &ValueNetwork) -> Result<(), QnetError> {
        if self.sizes() != snapshot.sizes() {
            return Err(QnetError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.sizes(),
                snapshot.sizes()
            )));
        }
        self.layers.clone_from(&snapshot.layers);
        Ok(())
    }

    /// Text format: a magic line, a `sizes` line, then for every layer one
    /// line per weight row followed by one bias line. Values use exponent
    /// notation that round-trips exactly.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), QnetError> {
        writeln!(w, "{FILE_MAGIC}")?;
        let sizes: Vec<String> = self.sizes().iter().map(usize::to_string).collect();
        writeln!(w, "sizes {}", sizes.join(" "))?;
        let line = |vals: &[f64]| vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        for layer in &self.layers {
            for o in 0..layer.outputs {
                writeln!(w, "{}", line(layer.row(o)))?;
            }
            writeln!(w, "{}", line(&layer.bias))?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, QnetError> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), QnetError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(QnetError::Parse {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim() != FILE_MAGIC {
            return Err(QnetError::Parse {
                line: n,
                reason: format!("expected `{FILE_MAGIC}`"),
            });
        }
        let (n, sizes_line) = next("sizes")?;
        let sizes: Vec<usize> = sizes_line
            .strip_prefix("sizes ")
            .ok_or_else(|| QnetError::Parse {
                line: n,
                reason: "expected `sizes ...`".into(),
            })?
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| QnetError::Parse {
                line: n,
                reason: format!("bad size: {e}"),
            })?;
        let mut net = Self::zeros(&sizes)?;
        let parse_row = |n: usize, text: &str, want: usize| -> Result<Vec<f64>, QnetError> {
            let vals: Vec<f64> = text
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| QnetError::Parse {
                    line: n,
                    reason: format!("bad number: {e}"),
                })?;
            if vals.len() != want {
                return Err(QnetError::Parse {
                    line: n,
                    reason: format!("expected {want} values, found {}", vals.len()),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(QnetError::NonFinite(format!("parameter file line {n}")));
            }
            Ok(vals)
        };
        for layer in &mut net.layers {
            for o in 0..layer.outputs {
                let (n, text) = next("weight row")?;
                let row = parse_row(n, &text, layer.inputs)?;
                layer.weights[o * layer.inputs..(o + 1) * layer.inputs].copy_from_slice(&row);
            }
            let (n, text) = next("bias row")?;
            layer.bias = parse_row(n, &text, layer.outputs)?;
        }
        Ok(net)
    }
}

/// Parameter-shaped buffers, one per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &ValueNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    fn check_shape(&self, net: &ValueNetwork) -> Result<(), QnetError> {
        let same = self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.inputs == l.inputs && g.outputs == l.outputs);
        if same {
            Ok(())
        } else {
            Err(QnetError::ShapeMismatch("gradient does not match network".into()))
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn clear(&mut self) {
        self.scale(0.0);
    }
}

/// Plain gradient descent with optional heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: Option<f64>,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: Option<f64>) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    /// Moves `net` against `grads`. Non-finite gradients leave the network
    /// untouched.
    pub fn apply(&mut self, net: &mut ValueNetwork, grads: &Gradients) -> Result<(), QnetError> {
        grads.check_shape(net)?;
        if let Some((i, _)) = grads.values().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(QnetError::NonFinite(format!("gradient entry {i}")));
        }
        let lr = self.learning_rate;
        match self.momentum {
            None => {
                for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
                    step(&mut l.weights, &g.weights, lr);
                    step(&mut l.bias, &g.bias, lr);
                }
            }
            Some(mu) => {
                let vel = self.velocity.get_or_insert_with(|| Gradients::zeros_like(net));
                vel.check_shape(net)?;
                for ((l, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut vel.layers) {
                    for (vv, gg) in v.weights.iter_mut().zip(&g.weights) {
                        *vv = mu * *vv + gg;
                    }
                    for (vv, gg) in v.bias.iter_mut().zip(&g.bias) {
                        *vv = mu * *vv + gg;
                    }
                    step(&mut l.weights, &v.weights, lr);
                    step(&mut l.bias, &v.bias, lr);
                }
            }
        }
        Ok(())
    }
}

fn step(params: &mut [f64], grads: &[f64], lr: f64) {
    params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g);
}

/// Weights of layer `li` come first, then its biases.
fn param_mut(net: &mut ValueNetwork, li: usize, pi: usize) -> &mut f64 {
    let l = &mut net.layers[li];
    let n_w = l.weights.len();
    if pi < n_w {
        &mut l.weights[pi]
    } else {
        &mut l.bias[pi - n_w]
    }
}

/// Largest relative error between the analytic gradient and a central finite
/// difference with step `h`, over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(net: &ValueNetwork, state: &[f64], action: &[f64], target: f64, h: f64) -> Result<f64, QnetError> {
    let (_, analytic) = net.backward(state, action, target)?;
    let loss = |n: &ValueNetwork| -> Result<f64, QnetError> {
        let q = n.forward(state, action)?;
        Ok((target - q) * (target - q))
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for li in 0..net.layers.len() {
        let n_w = net.layers[li].weights.len();
        for pi in 0..n_w + net.layers[li].bias.len() {
            let original = *param_mut(&mut probe, li, pi);
            *param_mut(&mut probe, li, pi) = original + h;
            let plus = loss(&probe)?;
            *param_mut(&mut probe, li, pi) = original - h;
            let minus = loss(&probe)?;
            *param_mut(&mut probe, li, pi) = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.layers[li].weights.iter().chain(&analytic.layers[li].bias).nth(pi).copied().unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn random_input(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ValueNetwork::zeros(&[6, 4, 1]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_linear_layer_is_a_dot_product() {
        let net = ValueNetwork::from_layers(vec![Dense {
            inputs: 3,
            outputs: 1,
            weights: vec![0.5, -1.0, 2.0],
            bias: vec![0.0],
        }])
        .unwrap();
        assert_eq!(net.forward(&[2.0, 1.0], &[3.0]).unwrap(), 1.0 - 1.0 + 6.0);
    }

    #[test]
    fn forward_is_pure_and_many_agrees() {
        let mut rng = rng_from(1, &[]);
        let net = ValueNetwork::new(&[8, 5, 5, 1], &mut rng).unwrap();
        let s = random_input(&mut rng, 5);
        let actions: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 3)).collect();
        let many = net.forward_many(&s, &actions).unwrap();
        for (a, v) in actions.iter().zip(&many) {
            assert_eq!(net.forward(&s, a).unwrap(), *v);
            assert_eq!(net.forward(&s, a).unwrap(), *v);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = ValueNetwork::zeros(&[4, 1]).unwrap();
        assert!(matches!(
            net.forward(&[1.0], &[1.0]),
            Err(QnetError::DimensionMismatch { expected: 4, got: 2 })
        ));
        assert!(matches!(ValueNetwork::zeros(&[4, 2]), Err(QnetError::OutputWidth(2))));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = rng_from(2, &[]);
        let net = ValueNetwork::new(&[4, 3, 1], &mut rng).unwrap();
        let (s, a) = ([0.1, 0.2], [0.3, -0.4]);
        let q = net.forward(&s, &a).unwrap();
        let (loss, g) = net.backward(&s, &a, q).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn doubling_residual_doubles_last_layer_gradient() {
        let mut rng = rng_from(3, &[]);
        let net = ValueNetwork::new(&[4, 6, 1], &mut rng).unwrap();
        let (s, a) = ([0.5, -0.2], [0.3, 0.9]);
        let q = net.forward(&s, &a).unwrap();
        let (_, g1) = net.backward(&s, &a, q - 0.25).unwrap();
        let (_, g2) = net.backward(&s, &a, q - 0.5).unwrap();
        let last = net.layers().len() - 1;
        for (x, y) in g1.layers[last].weights.iter().zip(&g2.layers[last].weights) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        assert!((2.0 * g1.layers[last].bias[0] - g2.layers[last].bias[0]).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = rng_from(100 + seed, &[]);
            let net = ValueNetwork::new(&[6, 5, 4, 1], &mut rng).unwrap();
            let s = random_input(&mut rng, 4);
            let a = random_input(&mut rng, 2);
            let worst = gradient_check(&net, &s, &a, 0.7, 1e-5).unwrap();
            assert!(worst <= 1e-4, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn backward_does_not_mutate() {
        let mut rng = rng_from(4, &[]);
        let net = ValueNetwork::new(&[3, 3, 1], &mut rng).unwrap();
        let before = net.clone();
        net.backward(&[1.0, 2.0], &[3.0], 10.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn zero_gradient_step_is_identity_and_steps_are_deterministic() {
        let mut rng = rng_from(5, &[]);
        let net = ValueNetwork::new(&[3, 4, 1], &mut rng).unwrap();
        let mut a = net.clone();
        Sgd::new(0.1, Some(0.9)).apply(&mut a, &Gradients::zeros_like(&net)).unwrap();
        assert_eq!(a, net);

        let (_, g) = net.backward(&[0.1, 0.2], &[0.3], 1.0).unwrap();
        let mut b = net.clone();
        let mut c = net.clone();
        let (mut ob, mut oc) = (Sgd::new(0.1, Some(0.9)), Sgd::new(0.1, Some(0.9)));
        for _ in 0..2 {
            ob.apply(&mut b, &g).unwrap();
            oc.apply(&mut c, &g).unwrap();
        }
        assert_eq!(b, c);
    }

    #[test]
    fn descent_on_one_parameter_quadratic() {
        let mut net = ValueNetwork::from_layers(vec![Dense {
            inputs: 1,
            outputs: 1,
            weights: vec![3.0],
            bias: vec![0.0],
        }])
        .unwrap();
        let loss = |n: &ValueNetwork| (n.forward(&[1.0], &[]).unwrap() - 1.0).powi(2);
        let before = loss(&net);
        let (_, g) = net.backward(&[1.0], &[], 1.0).unwrap();
        Sgd::new(0.01, None).apply(&mut net, &g).unwrap();
        assert!(loss(&net) < before);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = ValueNetwork::zeros(&[2, 1]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[1] = f64::NAN;
        let before = net.clone();
        assert!(matches!(Sgd::new(0.1, None).apply(&mut net, &g), Err(QnetError::NonFinite(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn fits_a_fixed_pair() {
        let mut rng = rng_from(6, &[]);
        let mut net = ValueNetwork::new(&[4, 16, 16, 1], &mut rng).unwrap();
        let (s, a) = ([0.2, -0.1, 0.4], [0.7]);
        let mut opt = Sgd::new(1e-2, None);
        let mut loss = f64::INFINITY;
        for _ in 0..10_000 {
            let (l, g) = net.backward(&s, &a, 1.5).unwrap();
            loss = l;
            if loss < 1e-6 {
                break;
            }
            opt.apply(&mut net, &g).unwrap();
        }
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn snapshot_is_independent_and_round_trips() {
        let mut rng = rng_from(7, &[]);
        let mut net = ValueNetwork::new(&[4, 3, 1], &mut rng).unwrap();
        let snap = net.snapshot();
        let (s, a) = ([0.3, 0.1], [0.2, 0.9]);
        let q = snap.forward(&s, &a).unwrap();
        let (_, g) = net.backward(&s, &a, 5.0).unwrap();
        Sgd::new(0.1, None).apply(&mut net, &g).unwrap();
        assert_eq!(snap.forward(&s, &a).unwrap(), q);
        net.load_snapshot(&snap).unwrap();
        assert_eq!(net.forward(&s, &a).unwrap().to_bits(), q.to_bits());
        let mut other = ValueNetwork::zeros(&[5, 1]).unwrap();
        assert!(other.load_snapshot(&snap).is_err());
    }

    #[test]
    fn text_file_round_trips_exactly() {
        let mut rng = rng_from(8, &[]);
        let net = ValueNetwork::new(&[5, 4, 3, 1], &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = ValueNetwork::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let truncated = &buf[..buf.len() / 2];
        assert!(ValueNetwork::read_from(truncated).is_err());
    }
}
