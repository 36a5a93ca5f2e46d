use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::nn::LayerSpec;
use crate::{Error, Result};

/// Predictor architecture family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchSpec {
    /// Dense hidden layer of `hidden` units, relu, dense projection.
    Fc { hidden: usize },
    /// Average-pool the tap down to `size` values, then dense projection.
    Pool { size: usize },
    /// Single-channel conv1d, relu, dense projection.
    Conv { kernel: usize, stride: usize },
}

impl ArchSpec {
    /// Predictor layers mapping a `tap_dim` hidden output to class logits.
    pub fn predictor_layers(&self, tap_dim: usize, num_classes: usize) -> Result<Vec<LayerSpec>> {
        let layers = match *self {
            ArchSpec::Fc { hidden } => vec![
                LayerSpec::Dense {
                    input: tap_dim,
                    output: hidden,
                },
                LayerSpec::Relu { dim: hidden },
                LayerSpec::Dense {
                    input: hidden,
                    output: num_classes,
                },
            ],
            ArchSpec::Pool { size } => {
                if size == 0 || size > tap_dim || tap_dim % size != 0 {
                    return Err(Error::invalid(
                        "architecture",
                        format!("{self} does not fit tap dim {tap_dim}"),
                    ));
                }
                vec![
                    LayerSpec::AvgPool {
                        input: tap_dim,
                        window: tap_dim / size,
                    },
                    LayerSpec::Dense {
                        input: size,
                        output: num_classes,
                    },
                ]
            }
            ArchSpec::Conv { kernel, stride } => {
                if kernel == 0 || stride == 0 || kernel > tap_dim {
                    return Err(Error::invalid(
                        "architecture",
                        format!("{self} does not fit tap dim {tap_dim}"),
                    ));
                }
                let out = (tap_dim - kernel) / stride + 1;
                vec![
                    LayerSpec::Conv1d {
                        input: tap_dim,
                        kernel,
                        stride,
                    },
                    LayerSpec::Relu { dim: out },
                    LayerSpec::Dense {
                        input: out,
                        output: num_classes,
                    },
                ]
            }
        };
        if let ArchSpec::Fc { hidden: 0 } = self {
            return Err(Error::invalid("architecture", "FC(0)"));
        }
        Ok(layers)
    }
}

/// Adapts a menu written for wide feature maps to a narrow tap.
///
/// Pool sizes above the tap dimension are scaled down together so the
/// largest one equals the tap dimension and relative sizes are kept; each
/// result is then rounded down to a divisor of the tap dimension.
pub fn resolve_menu(menu: &[ArchSpec], tap_dim: usize) -> Vec<ArchSpec> {
    let largest_pool = menu
        .iter()
        .filter_map(|a| match a {
            ArchSpec::Pool { size } => Some(*size),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    menu.iter()
        .map(|&a| match a {
            ArchSpec::Pool { size } if largest_pool > tap_dim => {
                let scaled = ((size as f64 * tap_dim as f64 / largest_pool as f64).floor() as usize).max(1);
                let size = (1..=scaled).rev().find(|d| tap_dim % d == 0).unwrap_or(1);
                ArchSpec::Pool { size }
            }
            ArchSpec::Pool { size } => {
                let size = (1..=size.min(tap_dim)).rev().find(|d| tap_dim % d == 0).unwrap_or(1);
                ArchSpec::Pool { size }
            }
            other => other,
        })
        .collect()
}

/// Six-variant menu: FC(1024), FC(512), Pool(8192), Pool(4096), Conv(3,1), Conv(5,2).
pub fn default_menu() -> Vec<ArchSpec> {
    vec![
        ArchSpec::Fc { hidden: 1024 },
        ArchSpec::Fc { hidden: 512 },
        ArchSpec::Pool { size: 8192 },
        ArchSpec::Pool { size: 4096 },
        ArchSpec::Conv { kernel: 3, stride: 1 },
        ArchSpec::Conv { kernel: 5, stride: 2 },
    ]
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ArchSpec::Fc { hidden } => write!(f, "FC({hidden})"),
            ArchSpec::Pool { size } => write!(f, "Pool({size})"),
            ArchSpec::Conv { kernel, stride } => write!(f, "Conv({kernel},{stride})"),
        }
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("architecture", format!("`{}`", crate::textfmt::truncate(s)));
        let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<usize> = args
            .split(',')
            .map(|a| a.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let arch = match (name, nums.as_slice()) {
            ("FC", [h]) => ArchSpec::Fc { hidden: *h },
            ("Pool", [s]) => ArchSpec::Pool { size: *s },
            ("Conv", [k, s]) => ArchSpec::Conv {
                kernel: *k,
                stride: *s,
            },
            _ => return Err(bad()),
        };
        if nums.contains(&0) {
            return Err(bad());
        }
        Ok(arch)
    }
}

impl Serialize for ArchSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
