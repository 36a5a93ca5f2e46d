use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerSpec, NnError, Tensor};

/// Feed-forward network over single sample vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<Vec<Tensor>>,
    seed: u64,
}

/// Activations recorded by [`Network::forward_recorded`], input first.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    activations: Vec<Vec<f64>>,
}

impl Tape {
    /// Every activation, starting with the network input.
    pub fn activations(&self) -> &[Vec<f64>] {
        &self.activations
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Per-layer gradients with the same layout as the network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<Tensor>>);

impl Grads {
    pub fn zeros_like(net: &Network) -> Self {
        Grads(
            net.params
                .iter()
                .map(|ts| ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
                .collect(),
        )
    }

    pub fn fill_zero(&mut self) {
        for t in self.0.iter_mut().flatten() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flatten().flat_map(|t| t.data().iter().copied())
    }
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        Self::check_chain(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|layer| {
                let (fan_in, fan_out) = layer.fans();
                layer
                    .param_shapes()
                    .into_iter()
                    .enumerate()
                    .map(|(k, shape)| {
                        let mut t = Tensor::zeros(shape);
                        if k == 0 {
                            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                            for v in t.data_mut() {
                                *v = rng.random_range(-limit..=limit);
                            }
                        }
                        t
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            layers,
            params,
            seed,
        })
    }

    /// Assembles a network from stored weights, checking every shape.
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        params: Vec<Vec<Tensor>>,
        seed: u64,
    ) -> Result<Self, NnError> {
        Self::check_chain(&layers)?;
        if params.len() != layers.len() {
            return Err(NnError::ShapeMismatch {
                context: "weight layers",
                expected: layers.len(),
                got: params.len(),
            });
        }
        for (layer, ts) in layers.iter().zip(&params) {
            let shapes = layer.param_shapes();
            if shapes.len() != ts.len() || shapes.iter().zip(ts).any(|(s, t)| s != t.shape()) {
                return Err(NnError::InvalidLayer(format!(
                    "weights do not match {layer}"
                )));
            }
        }
        Ok(Self {
            layers,
            params,
            seed,
        })
    }

    fn check_chain(layers: &[LayerSpec]) -> Result<(), NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidLayer("empty network".into()));
        }
        for l in layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(NnError::InvalidLayer(format!(
                    "{} does not feed {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn macs(&self) -> usize {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (layer, ps) in self.layers.iter().zip(&self.params) {
            layer.forward(ps, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that keeps every intermediate activation.
    pub fn forward_recorded(&self, x: &[f64]) -> Result<Tape, NnError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (layer, ps) in self.layers.iter().zip(&self.params) {
            let mut y = Vec::with_capacity(layer.output_dim());
            layer.forward(ps, activations.last().unwrap(), &mut y);
            activations.push(y);
        }
        Ok(Tape { activations })
    }

    /// Accumulates `scale * dL/dW` into `grads`; returns `dL/dinput`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        grads: &mut Grads,
        scale: f64,
    ) -> Result<Vec<f64>, NnError> {
        if tape.activations.is_empty() {
            return Err(NnError::NoForwardPass);
        }
        let consistent = tape.activations.len() == self.layers.len() + 1
            && self
                .layers
                .iter()
                .zip(&tape.activations)
                .all(|(l, a)| l.input_dim() == a.len());
        if !consistent || grads.0.len() != self.layers.len() {
            return Err(NnError::TapeMismatch);
        }
        if grad_out.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                context: "output gradient",
                expected: self.output_dim(),
                got: grad_out.len(),
            });
        }
        let mut dy = grad_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            dy = layer.backward(
                &self.params[idx],
                &tape.activations[idx],
                &tape.activations[idx + 1],
                &dy,
                &mut grads.0[idx],
                scale,
            );
        }
        Ok(dy)
    }

    /// Analytic gradients of `<grad_out, output>` with respect to every weight.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64]) -> Result<Grads, NnError> {
        let mut grads = Grads::zeros_like(self);
        self.backward_into(tape, grad_out, &mut grads, 1.0)?;
        Ok(grads)
    }
}
