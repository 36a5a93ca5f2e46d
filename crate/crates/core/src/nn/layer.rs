use std::fmt;

use super::{NnError, Tensor};

/// One stage of a feed-forward network.
///
/// Parametric layers own their weights in [`super::Network`]; the spec only
/// records sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// `y = W x + b` with `W` stored as `[output, input]`.
    Dense { input: usize, output: usize },
    Relu { dim: usize },
    /// Non-overlapping mean over consecutive windows.
    AvgPool { input: usize, window: usize },
    /// Single-channel valid convolution with a shared kernel and scalar bias.
    Conv1d {
        input: usize,
        kernel: usize,
        stride: usize,
    },
    Softmax { dim: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidLayer(msg));
        match *self {
            LayerSpec::Dense { input, output } if input == 0 || output == 0 => {
                bad(format!("dense {input}->{output}"))
            }
            LayerSpec::Relu { dim } | LayerSpec::Softmax { dim } if dim == 0 => {
                bad(format!("{self} has zero width"))
            }
            LayerSpec::AvgPool { input, window } => {
                if input == 0 || window == 0 || input % window != 0 {
                    bad(format!("pool window {window} does not divide {input}"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::Conv1d {
                input,
                kernel,
                stride,
            } => {
                if kernel == 0 || stride == 0 || kernel > input {
                    bad(format!("conv1d k={kernel} s={stride} on {input}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. }
            | LayerSpec::AvgPool { input, .. }
            | LayerSpec::Conv1d { input, .. } => input,
            LayerSpec::Relu { dim } | LayerSpec::Softmax { dim } => dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { output, .. } => output,
            LayerSpec::AvgPool { input, window } => input / window,
            LayerSpec::Conv1d {
                input,
                kernel,
                stride,
            } => (input - kernel) / stride + 1,
            LayerSpec::Relu { dim } | LayerSpec::Softmax { dim } => dim,
        }
    }

    /// Shapes of the weight tensors this layer owns, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => vec![vec![output, input], vec![output]],
            LayerSpec::Conv1d { kernel, .. } => vec![vec![kernel], vec![1]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output } => input * output,
            LayerSpec::Conv1d { kernel, .. } => self.output_dim() * kernel,
            LayerSpec::AvgPool { input, .. } => input,
            LayerSpec::Relu { .. } | LayerSpec::Softmax { .. } => 0,
        }
    }

    /// Glorot fan sizes for the first weight tensor.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output } => (input, output),
            LayerSpec::Conv1d { kernel, .. } => (kernel, 1),
            _ => (0, 0),
        }
    }

    pub(crate) fn forward(&self, params: &[Tensor], x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        match *self {
            LayerSpec::Dense { input, output } => {
                let w = params[0].data();
                let b = params[1].data();
                y.extend((0..output).map(|o| {
                    let row = &w[o * input..(o + 1) * input];
                    b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                }));
            }
            LayerSpec::Relu { .. } => y.extend(x.iter().map(|&v| v.max(0.0))),
            LayerSpec::AvgPool { window, .. } => {
                let scale = 1.0 / window as f64;
                y.extend(x.chunks_exact(window).map(|c| c.iter().sum::<f64>() * scale));
            }
            LayerSpec::Conv1d { kernel, stride, .. } => {
                let k = params[0].data();
                let bias = params[1].data()[0];
                y.extend((0..self.output_dim()).map(|o| {
                    let start = o * stride;
                    bias + k
                        .iter()
                        .zip(&x[start..start + kernel])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                }));
            }
            LayerSpec::Softmax { .. } => y.extend(super::loss::softmax(x)),
        }
    }

    /// Accumulates `scale * dL/dparams` into `grads` and returns `dL/dx`.
    pub(crate) fn backward(
        &self,
        params: &[Tensor],
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grads: &mut [Tensor],
        scale: f64,
    ) -> Vec<f64> {
        match *self {
            LayerSpec::Dense { input, output } => {
                let w = params[0].data();
                let mut dx = vec![0.0; input];
                let (gw, gb) = grads.split_at_mut(1);
                let gw = gw[0].data_mut();
                let gb = gb[0].data_mut();
                for o in 0..output {
                    let d = dy[o];
                    if d == 0.0 {
                        continue;
                    }
                    let sd = d * scale;
                    gb[o] += sd;
                    let row = &w[o * input..(o + 1) * input];
                    let grow = &mut gw[o * input..(o + 1) * input];
                    for i in 0..input {
                        grow[i] += sd * x[i];
                        dx[i] += d * row[i];
                    }
                }
                dx
            }
            LayerSpec::Relu { .. } => x
                .iter()
                .zip(dy)
                .map(|(&xi, &d)| if xi > 0.0 { d } else { 0.0 })
                .collect(),
            LayerSpec::AvgPool { window, .. } => {
                let s = 1.0 / window as f64;
                dy.iter()
                    .flat_map(|&d| std::iter::repeat_n(d * s, window))
                    .collect()
            }
            LayerSpec::Conv1d { kernel, stride, .. } => {
                let k = params[0].data();
                let mut dx = vec![0.0; x.len()];
                let (gk, gb) = grads.split_at_mut(1);
                let gk = gk[0].data_mut();
                let gb = gb[0].data_mut();
                for (o, &d) in dy.iter().enumerate() {
                    let start = o * stride;
                    gb[0] += d * scale;
                    for j in 0..kernel {
                        gk[j] += d * scale * x[start + j];
                        dx[start + j] += d * k[j];
                    }
                }
                dx
            }
            LayerSpec::Softmax { .. } => {
                // dx_i = y_i (dy_i - sum_j y_j dy_j)
                let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                y.iter().zip(dy).map(|(&yi, &d)| yi * (d - dot)).collect()
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Dense { input, output } => write!(f, "dense({input}->{output})"),
            LayerSpec::Relu { dim } => write!(f, "relu({dim})"),
            LayerSpec::AvgPool { input, window } => write!(f, "avgpool({input}/{window})"),
            LayerSpec::Conv1d {
                input,
                kernel,
                stride,
            } => write!(f, "conv1d({input},k={kernel},s={stride})"),
            LayerSpec::Softmax { dim } => write!(f, "softmax({dim})"),
        }
    }
}
