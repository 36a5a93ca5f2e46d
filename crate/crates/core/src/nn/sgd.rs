use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Grads, Network, NnError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(NnError::InvalidParam(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidParam(format!("momentum {}", self.momentum)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::InvalidParam("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Momentum SGD: `v <- momentum * v + g`, `w <- w - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<Grads>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Grads) -> Result<(), NnError> {
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        let shapes_match = grads.0.len() == net.params().len()
            && grads
                .0
                .iter()
                .zip(net.params())
                .all(|(g, p)| g.len() == p.len() && g.iter().zip(p).all(|(a, b)| a.shape() == b.shape()));
        if !shapes_match {
            return Err(NnError::InvalidParam("gradient layout does not match network".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| Grads::zeros_like(net));
        for ((vl, gl), pl) in velocity.0.iter_mut().zip(&grads.0).zip(net.params_mut()) {
            for ((v, g), p) in vl.iter_mut().zip(gl).zip(pl.iter_mut()) {
                for ((vi, gi), wi) in v
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(p.data_mut().iter_mut())
                {
                    *vi = self.momentum * *vi + gi;
                    *wi -= self.learning_rate * *vi;
                }
            }
        }
        Ok(())
    }
}

/// Loss history of one [`fit`] run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    /// Weighted mean loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training loop.
///
/// `loss(i, output)` returns the loss and output gradient for sample `i`.
/// Sample weights are normalised to mean one before use.
pub fn fit<F>(
    net: &mut Network,
    inputs: &[&[f64]],
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut loss: F,
) -> Result<FitReport, NnError>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>), NnError>,
{
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(NnError::InvalidParam("no training samples".into()));
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != inputs.len() || w.iter().any(|v| !(*v >= 0.0)) {
                return Err(NnError::InvalidParam("sample weights".into()));
            }
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            if !(mean > 0.0) {
                return Err(NnError::InvalidParam("sample weights sum to zero".into()));
            }
            w.iter().map(|v| v / mean).collect()
        }
        None => vec![1.0; inputs.len()],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut sgd = Sgd::new(cfg);
    let mut grads = Grads::zeros_like(net);
    let mut report = FitReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let tape = net.forward_recorded(inputs[i])?;
                let (l, g) = loss(i, tape.output())?;
                if !l.is_finite() {
                    return Err(NnError::Diverged { epoch });
                }
                total += w * l;
                net.backward_into(&tape, &g, &mut grads, w * scale)?;
            }
            sgd.step(net, &grads).map_err(|e| match e {
                NnError::NonFinite(_) => NnError::Diverged { epoch },
                other => other,
            })?;
        }
        report.epoch_losses.push(total / inputs.len() as f64);
    }
    Ok(report)
}
