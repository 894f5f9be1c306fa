//! Small dense networks with hand-written reverse-mode derivatives.
//!
//! A [`DenseNet`] is a chain of affine layers, each followed by an
//! elementwise activation. [`DenseNet::forward`] returns a [`Trace`] that
//! [`DenseNet::backward`] consumes; backward never mutates the network, so a
//! frozen copy can serve any number of readers.

use std::io::{Read, Write};

use rand::Rng;

use crate::{Error, Result, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`. relu'(0) = 0.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            _ => Err(Error::invalid(format!("unknown activation code {c}"))),
        }
    }
}

/// Affine map `y = act(W x + b)` with `W` stored row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize, activation: Activation) -> Result<Self> {
        let out_dim = bias.len();
        if in_dim == 0 || out_dim == 0 || weights.len() != in_dim * out_dim {
            return Err(Error::invalid(format!(
                "layer shape: {} weights for {in_dim} -> {out_dim}",
                weights.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Uniform `+-1/sqrt(in_dim)` initialisation for weights and biases.
    pub fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer pre-activations and outputs recorded by a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Gradient accumulators shaped like a network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, c: f64) {
        self.iter_mut().for_each(|g| *g *= c);
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }

    /// Flat iteration in snapshot order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.bias.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.iter().map(|g| g * g).sum()
    }

    fn congruent(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && net
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.bias))
                .all(|(l, (w, b))| w.len() == l.weights.len() && b.len() == l.bias.len())
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn random(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut SeededRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::random(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        let trace = self.trace(input)?;
        Ok((trace.output().to_vec(), trace))
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().unwrap();
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            values.push(y);
        }
        Ok(Trace { values, pre })
    }

    /// Output only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.values.pop().unwrap())
    }

    /// Derivatives of `output . output_grad` with respect to all parameters
    /// and the input.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64]) -> Result<(GradientBuffer, Vec<f64>)> {
        let mut grads = GradientBuffer::zeros_like(self);
        let input_grad = self.backward_into(trace, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`backward`](Self::backward) but adds into `grads`.
    pub fn backward_into(&self, trace: &Trace, output_grad: &[f64], grads: &mut GradientBuffer) -> Result<Vec<f64>> {
        if !grads.congruent(self) {
            return Err(Error::invalid("gradient buffer shape mismatch"));
        }
        self.backprop(trace, output_grad, Some(grads))
    }

    /// Derivative of `output . output_grad` with respect to the input only.
    pub fn input_grad(&self, trace: &Trace, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.backprop(trace, output_grad, None)
    }

    fn backprop(&self, trace: &Trace, output_grad: &[f64], mut grads: Option<&mut GradientBuffer>) -> Result<Vec<f64>> {
        if trace.pre.len() != self.layers.len()
            || self.layers.iter().zip(&trace.pre).any(|(l, z)| z.len() != l.out_dim)
        {
            return Err(Error::invalid("trace does not match network"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "output gradient has {} values, network outputs {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[l];
            let y = &trace.values[l + 1];
            let x = &trace.values[l];
            for ((d, &zo), &yo) in delta.iter_mut().zip(z).zip(y) {
                *d *= layer.activation.derivative(zo, yo);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let gw = &mut grads.weights[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                for (g, d) in grads.bias[l].iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Writes the parameter snapshot.
    ///
    /// Layout (all little-endian): `u32` layer count, then per layer `u32`
    /// in_dim, `u32` out_dim, `u32` activation code (0 identity, 1 tanh,
    /// 2 relu); then per layer the weights row-major followed by the bias,
    /// as `f64`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            for v in [l.in_dim as u32, l.out_dim as u32, l.activation.code()] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let n_layers = read_u32(&mut r)? as usize;
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let i = read_u32(&mut r)? as usize;
            let o = read_u32(&mut r)? as usize;
            let a = Activation::from_code(read_u32(&mut r)?)?;
            shapes.push((i, o, a));
        }
        let mut f = [0u8; 8];
        let mut read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut f)?;
                    Ok(f64::from_le_bytes(f))
                })
                .collect()
        };
        let mut layers = Vec::with_capacity(n_layers);
        for (i, o, a) in shapes {
            let w = read_f64s(&mut r, i * o)?;
            let b = read_f64s(&mut r, o)?;
            layers.push(Layer::new(w, b, i, a)?);
        }
        Self::from_layers(layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    RmsProp { decay: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.99, eps: 1e-8 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &DenseNet) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let n = net.n_params();
        Ok(Self {
            kind,
            learning_rate,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        })
    }

    pub fn rmsprop(learning_rate: f64, net: &DenseNet) -> Result<Self> {
        Self::new(OptimizerKind::rmsprop(), learning_rate, net)
    }

    pub fn adam(learning_rate: f64, net: &DenseNet) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, net)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descends along `grads`. A non-finite gradient is reported and the
    /// update skipped.
    pub fn step(&mut self, net: &mut DenseNet, grads: &GradientBuffer) -> Result<()> {
        if !grads.congruent(net) || self.first.len() != net.n_params() {
            return Err(Error::invalid("optimizer state does not match network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        let params = net.params_mut();
        let moments = self.first.iter_mut().zip(self.second.iter_mut());
        match self.kind {
            OptimizerKind::RmsProp { decay, eps } => {
                for ((p, g), (_, v)) in params.zip(grads.iter()).zip(moments) {
                    *v = decay * *v + (1.0 - decay) * g * g;
                    *p -= lr * g / (v.sqrt() + eps);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.zip(grads.iter()).zip(moments) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

pub fn optimizer_step(state: &mut OptimizerState, net: &mut DenseNet, grads: &GradientBuffer) -> Result<()> {
    state.step(net, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncPolicy {
    /// Copy every `every` learner updates.
    Hard { every: u64 },
    /// Polyak blend with factor `tau` after every update.
    Soft { tau: f64 },
}

/// Frozen parameter copy used for bootstrap targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet {
    pub net: DenseNet,
    pub policy: SyncPolicy,
}

impl TargetNet {
    pub fn new(source: &DenseNet, policy: SyncPolicy) -> Self {
        Self {
            net: source.clone(),
            policy,
        }
    }

    /// Applies the sync policy after the learner's `update_count`-th update.
    pub fn after_update(&mut self, source: &DenseNet, update_count: u64) -> Result<()> {
        match self.policy {
            SyncPolicy::Hard { every } => {
                if every > 0 && update_count.is_multiple_of(every) {
                    hard_sync(&mut self.net, source)?;
                }
                Ok(())
            }
            SyncPolicy::Soft { tau } => soft_sync(&mut self.net, source, tau),
        }
    }
}

pub fn hard_sync(target: &mut DenseNet, source: &DenseNet) -> Result<()> {
    if !target.same_shape(source) {
        return Err(Error::invalid("target/source shape mismatch"));
    }
    target.clone_from(source);
    Ok(())
}

/// `target <- (1 - tau) * target + tau * source`.
pub fn soft_sync(target: &mut DenseNet, source: &DenseNet, tau: f64) -> Result<()> {
    if !target.same_shape(source) {
        return Err(Error::invalid("target/source shape mismatch"));
    }
    for (t, s) in target.params_mut().zip(source.params()) {
        *t = (1.0 - tau) * *t + tau * s;
    }
    Ok(())
}

/// Synchronises `target` with `source` according to its policy,
/// unconditionally (the hard period is not consulted).
pub fn sync_target(target: &mut TargetNet, source: &DenseNet) -> Result<()> {
    match target.policy {
        SyncPolicy::Hard { .. } => hard_sync(&mut target.net, source),
        SyncPolicy::Soft { tau } => soft_sync(&mut target.net, source, tau),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(vec![w], vec![b], 1, act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(single(2.0, 1.0, Activation::Identity).forward(&[3.0]).unwrap().0, vec![7.0]);
        assert_eq!(single(0.0, 0.0, Activation::Tanh).forward(&[5.0]).unwrap().0, vec![0.0]);
        let zero = DenseNet::from_layers(vec![
            Layer::new(vec![0.0; 6], vec![0.0; 3], 2, Activation::Tanh).unwrap(),
            Layer::new(vec![0.0; 6], vec![0.0; 2], 3, Activation::Identity).unwrap(),
        ])
        .unwrap();
        assert_eq!(zero.forward(&[1.5, -2.0]).unwrap().0, vec![0.0, 0.0]);
        assert!(zero.forward(&[1.0]).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let a = Layer::new(vec![0.0; 6], vec![0.0; 3], 2, Activation::Tanh).unwrap();
        let b = Layer::new(vec![0.0; 4], vec![0.0; 2], 2, Activation::Tanh).unwrap();
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
        assert!(Layer::new(vec![0.0; 5], vec![0.0; 3], 2, Activation::Tanh).is_err());
    }

    #[test]
    fn backward_linear_case() {
        let net = DenseNet::from_layers(vec![Layer::new(vec![2.0, -3.0], vec![0.5], 2, Activation::Identity).unwrap()]).unwrap();
        let (_, trace) = net.forward(&[4.0, 5.0]).unwrap();
        let (g, input_grad) = net.backward(&trace, &[1.0]).unwrap();
        assert_eq!(g.weights[0], vec![4.0, 5.0]);
        assert_eq!(g.bias[0], vec![1.0]);
        assert_eq!(input_grad, vec![2.0, -3.0]);
        assert!(net.backward(&trace, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let net = single(1.0, 0.0, Activation::Relu);
        let (_, trace) = net.forward(&[0.0]).unwrap();
        let (g, ig) = net.backward(&trace, &[1.0]).unwrap();
        assert_eq!(g.bias[0], vec![0.0]);
        assert_eq!(ig, vec![0.0]);
    }

    #[test]
    fn backward_does_not_mutate() {
        let mut rng = seeded(3);
        let net = DenseNet::random(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let (_, trace) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        net.backward(&trace, &[1.0, -1.0]).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut rng = seeded(4);
        let mut net = DenseNet::random(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        for kind in [OptimizerKind::rmsprop(), OptimizerKind::adam()] {
            let mut opt = OptimizerState::new(kind, 0.1, &net).unwrap();
            opt.step(&mut net, &GradientBuffer::zeros_like(&before)).unwrap();
            assert_eq!(net, before);
        }
    }

    #[test]
    fn rmsprop_first_step_closed_form() {
        let mut net = single(0.5, -0.25, Activation::Identity);
        let mut opt = OptimizerState::rmsprop(0.01, &net).unwrap();
        let mut g = GradientBuffer::zeros_like(&net);
        g.weights[0][0] = 0.3;
        g.bias[0][0] = -2.0;
        opt.step(&mut net, &g).unwrap();
        let expect = |p: f64, g: f64| p - 0.01 * g / (((1.0 - 0.99) * g * g).sqrt() + 1e-8);
        assert!((net.layers()[0].weights[0] - expect(0.5, 0.3)).abs() < 1e-15);
        assert!((net.layers()[0].bias[0] - expect(-0.25, -2.0)).abs() < 1e-15);
    }

    #[test]
    fn nonfinite_gradient_is_skipped() {
        let mut net = single(0.5, 0.0, Activation::Identity);
        let before = net.clone();
        let mut opt = OptimizerState::adam(0.01, &net).unwrap();
        let mut g = GradientBuffer::zeros_like(&net);
        g.weights[0][0] = f64::NAN;
        assert!(matches!(opt.step(&mut net, &g), Err(Error::NonFinite(_))));
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let mut rng = seeded(9);
        let net0 = DenseNet::random(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut g = GradientBuffer::zeros_like(&net0);
        g.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let run = || {
            let mut net = net0.clone();
            let mut opt = OptimizerState::rmsprop(1e-3, &net).unwrap();
            for _ in 0..5 {
                opt.step(&mut net, &g).unwrap();
            }
            net
        };
        let (a, b) = (run(), run());
        assert!(a.params().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn target_sync_modes() {
        let mut rng = seeded(5);
        let src = DenseNet::random(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let init = DenseNet::random(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();

        let mut t = TargetNet::new(&init, SyncPolicy::Hard { every: 10 });
        sync_target(&mut t, &src).unwrap();
        assert_eq!(t.net, src);

        let mut t = TargetNet::new(&init, SyncPolicy::Soft { tau: 1.0 });
        sync_target(&mut t, &src).unwrap();
        assert_eq!(t.net, src);

        let mut t = TargetNet::new(&init, SyncPolicy::Soft { tau: 0.0 });
        sync_target(&mut t, &src).unwrap();
        assert_eq!(t.net, init);

        let mut t = TargetNet::new(&init, SyncPolicy::Hard { every: 3 });
        t.after_update(&src, 2).unwrap();
        assert_eq!(t.net, init);
        t.after_update(&src, 3).unwrap();
        assert_eq!(t.net, src);

        let other = DenseNet::random(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(hard_sync(&mut t.net, &other).is_err());
    }

    #[test]
    fn soft_sync_contracts() {
        let mut rng = seeded(6);
        let src = DenseNet::random(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut tgt = DenseNet::random(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let dist = |a: &DenseNet| a.params().zip(src.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut last = dist(&tgt);
        for _ in 0..50 {
            soft_sync(&mut tgt, &src, 0.05).unwrap();
            let d = dist(&tgt);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = seeded(7);
        let net = DenseNet::random(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 * 12 + 8 * net.n_params());
        assert_eq!(&buf[0..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        let first_weight = net.layers()[0].weights[0].to_le_bytes();
        assert_eq!(&buf[28..36], &first_weight);
        assert_eq!(DenseNet::read_snapshot(buf.as_slice()).unwrap(), net);
        assert!(DenseNet::read_snapshot(&buf[..buf.len() - 1]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn snapshot_round_trips_bitwise(seed in 0u64..1000, a in 1usize..6, b in 1usize..6, c in 1usize..6) {
            let net = DenseNet::random(&[a, b, c], Activation::Tanh, Activation::Identity, &mut seeded(seed)).unwrap();
            let mut buf = Vec::new();
            net.write_snapshot(&mut buf).unwrap();
            let back = DenseNet::read_snapshot(buf.as_slice()).unwrap();
            proptest::prop_assert!(net.params().zip(back.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn unit_tau_soft_sync_is_hard_sync(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let source = DenseNet::random(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
            let mut soft = DenseNet::random(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
            let mut hard = soft.clone();
            soft_sync(&mut soft, &source, 1.0).unwrap();
            hard_sync(&mut hard, &source).unwrap();
            proptest::prop_assert_eq!(soft, hard);
        }

        #[test]
        fn backward_is_linear_in_output_grad(seed in 0u64..1000, c in -3.0f64..3.0) {
            let mut rng = seeded(seed);
            let net = DenseNet::random(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let trace = net.trace(&[0.3, -0.2, 0.9]).unwrap();
            let (g1, i1) = net.backward(&trace, &[1.0, -0.5]).unwrap();
            let (gc, ic) = net.backward(&trace, &[c, -0.5 * c]).unwrap();
            for (x, y) in g1.iter().chain(i1.iter()).zip(gc.iter().chain(ic.iter())) {
                proptest::prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
