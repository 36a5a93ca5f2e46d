#![allow(dead_code)]

use cachenet::nn::loss::{cross_entropy, distill_loss, weighted_selector_loss};
use cachenet::nn::{LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub cases: usize,
    pub checks: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    fn record(&mut self, case: &str, what: &str, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checks += 1;
        self.worst = self.worst.max(e);
        if e > TOLERANCE || !e.is_finite() {
            self.failures.push(format!("{case} {what}: analytic {analytic} numeric {numeric} (rel {e:.2e})"));
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A random architecture on 8 inputs built from one of several shapes.
fn random_layers(rng: &mut ChaCha8Rng) -> Vec<LayerSpec> {
    let classes = rng.random_range(2..6);
    let hidden = rng.random_range(3..12);
    match rng.random_range(0..5) {
        0 => vec![
            LayerSpec::Dense { input: 8, output: hidden },
            LayerSpec::Relu { dim: hidden },
            LayerSpec::Dense { input: hidden, output: classes },
        ],
        1 => {
            let kernel = rng.random_range(1..5);
            let stride = rng.random_range(1..3);
            let out = (8 - kernel) / stride + 1;
            vec![
                LayerSpec::Conv1d { input: 8, kernel, stride },
                LayerSpec::Relu { dim: out },
                LayerSpec::Dense { input: out, output: classes },
                LayerSpec::Softmax { dim: classes },
            ]
        }
        2 => {
            let window = [1, 2, 4, 8][rng.random_range(0..4)];
            vec![
                LayerSpec::AvgPool { input: 8, window },
                LayerSpec::Dense { input: 8 / window, output: classes },
            ]
        }
        3 => vec![
            LayerSpec::Dense { input: 8, output: hidden },
            LayerSpec::Softmax { dim: hidden },
            LayerSpec::Dense { input: hidden, output: classes },
        ],
        _ => vec![
            LayerSpec::Dense { input: 8, output: 12 },
            LayerSpec::Relu { dim: 12 },
            LayerSpec::AvgPool { input: 12, window: 3 },
            LayerSpec::Conv1d { input: 4, kernel: 2, stride: 1 },
            LayerSpec::Dense { input: 3, output: classes },
        ],
    }
}

fn objective(net: &Network, x: &[f64], g: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(g).map(|(o, w)| o * w).sum()
}

fn with_param(net: &Network, layer: usize, tensor: usize, idx: usize, delta: f64) -> Network {
    let mut params: Vec<Vec<Tensor>> = net.params().to_vec();
    let t = &params[layer][tensor];
    let mut data = t.data().to_vec();
    data[idx] += delta;
    params[layer][tensor] = Tensor::new(t.shape().to_vec(), data).unwrap();
    Network::from_parts(net.layers().to_vec(), params, net.seed()).unwrap()
}

/// Inputs whose ReLU pre-activations all stay clear of the kink.
fn smooth_input(net: &Network, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let x = uniform(rng, 8, 1.0);
        let tape = net.forward_recorded(&x).unwrap();
        let clear = net
            .layers()
            .iter()
            .zip(tape.activations())
            .filter(|(l, _)| matches!(l, LayerSpec::Relu { .. }))
            .all(|(_, a)| a.iter().all(|v| v.abs() > 1e-3));
        if clear {
            return x;
        }
    }
}

fn network_case(rng: &mut ChaCha8Rng, case: usize, report: &mut GradReport) {
    let layers = random_layers(rng);
    let net = Network::new(layers, rng.random()).unwrap();
    let x = smooth_input(&net, rng);
    let g = uniform(rng, net.output_dim(), 1.0);
    let tape = net.forward_recorded(&x).unwrap();
    let mut grads = cachenet::nn::Grads::zeros_like(&net);
    let dx = net.backward_into(&tape, &g, &mut grads, 1.0).unwrap();
    let name = format!("net#{case}");
    for (l, tensors) in net.params().iter().enumerate() {
        for (t, tensor) in tensors.iter().enumerate() {
            for i in 0..tensor.len() {
                let up = objective(&with_param(&net, l, t, i, STEP), &x, &g);
                let down = objective(&with_param(&net, l, t, i, -STEP), &x, &g);
                let numeric = (up - down) / (2.0 * STEP);
                report.record(&name, &format!("w[{l}][{t}][{i}]"), grads.0[l][t].data()[i], numeric);
            }
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += STEP;
        xm[i] -= STEP;
        let numeric = (objective(&net, &xp, &g) - objective(&net, &xm, &g)) / (2.0 * STEP);
        report.record(&name, &format!("x[{i}]"), dx[i], numeric);
    }
}

fn logit_case(
    report: &mut GradReport,
    name: &str,
    z: &[f64],
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
) {
    let (_, grad) = f(z);
    for i in 0..z.len() {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[i] += STEP;
        zm[i] -= STEP;
        let numeric = (f(&zp).0 - f(&zm).0) / (2.0 * STEP);
        report.record(name, &format!("z[{i}]"), grad[i], numeric);
    }
}

/// Central-difference checks of every layer kind and every loss.
pub fn gradient_suite(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    for case in 0..64 {
        network_case(&mut rng, case, &mut report);
        report.cases += 1;
    }
    for case in 0..16 {
        let n = rng.random_range(2..8);
        let z = uniform(&mut rng, n, 3.0);
        let label = rng.random_range(0..n);
        logit_case(&mut report, &format!("ce#{case}"), &z, |z| {
            let l = cross_entropy(z, label).unwrap();
            (l.loss, l.grad)
        });
        report.cases += 1;
    }
    for case in 0..16 {
        let n = rng.random_range(2..8);
        let z = uniform(&mut rng, n, 3.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let base: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let label = rng.random_range(0..n);
        let tau = rng.random_range(0.5..4.0);
        let mix = rng.random_range(0.0..1.0);
        logit_case(&mut report, &format!("distill#{case}"), &z, |z| {
            let l = distill_loss(z, &base, label, tau, mix).unwrap();
            (l.loss, l.grad)
        });
        report.cases += 1;
    }
    for case in 0..16 {
        let z = rng.random_range(-6.0..6.0);
        let label = rng.random::<bool>();
        let w_fp = rng.random_range(0.5..5.0);
        let w_fn = rng.random_range(0.5..5.0);
        logit_case(&mut report, &format!("selector#{case}"), &[z], |z| {
            let (l, g) = weighted_selector_loss(z[0], label, w_fp, w_fn).unwrap();
            (l, vec![g])
        });
        report.cases += 1;
    }
    report
}
