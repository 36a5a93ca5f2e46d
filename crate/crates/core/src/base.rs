//! Synthetic classification task and the multi-block base network whose
//! hidden-layer taps feed learned caches.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::loss::{argmax, cross_entropy, softmax};
use crate::nn::{fit, LayerSpec, Network, TrainConfig};
use crate::textfmt::{self, Provenance};
use crate::{Error, Result};

/// Gaussian-cluster classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    pub noise: f64,
    /// Sub-clusters per class; more than one makes the task non-linear.
    #[serde(default = "one")]
    pub modes_per_class: usize,
    /// Train / validation / test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Set from the experiment's global seed, never read from files.
    #[serde(skip)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            input_dim: 32,
            samples_per_class: 100,
            separation: 2.0,
            noise: 1.0,
            modes_per_class: 4,
            split: default_split(),
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("dataset spec", r));
        if self.num_classes == 0 {
            return bad("zero classes");
        }
        if self.input_dim == 0 || self.samples_per_class == 0 || self.modes_per_class == 0 {
            return bad("input_dim, samples_per_class and modes_per_class must be positive");
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return bad("separation must be > 0");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be >= 0");
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("split fractions must be non-negative and sum to 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub input: Vec<f64>,
}

/// Stratified train / validation / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

fn random_centre(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * radius / norm).collect()
}

/// Class centres followed by their sub-cluster centres, as generated for `spec`.
pub fn class_centres(spec: &DatasetSpec) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_classes)
        .map(|_| {
            let centre = random_centre(&mut rng, spec.input_dim, spec.separation);
            if spec.modes_per_class == 1 {
                return vec![centre];
            }
            (0..spec.modes_per_class)
                .map(|_| {
                    let offset = random_centre(&mut rng, spec.input_dim, spec.separation);
                    centre.iter().zip(offset).map(|(c, o)| c + o).collect()
                })
                .collect()
        })
        .collect()
}

pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let centres = class_centres(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_da7a);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid("dataset spec", e.to_string()))?;
    let mut ds = Dataset {
        num_classes: spec.num_classes,
        input_dim: spec.input_dim,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (label, modes) in centres.iter().enumerate() {
        let mut class: Vec<Sample> = (0..spec.samples_per_class)
            .map(|_| {
                let mode = &modes[rng.random_range(0..modes.len())];
                let input = mode.iter().map(|c| c + noise.sample(&mut rng)).collect();
                Sample { label, input }
            })
            .collect();
        class.shuffle(&mut rng);
        let n = class.len();
        let n_train = (spec.split[0] * n as f64).round() as usize;
        let n_val = ((spec.split[1] * n as f64).round() as usize).min(n - n_train);
        let test = class.split_off(n_train + n_val);
        let val = class.split_off(n_train);
        ds.train.extend(class);
        ds.validation.extend(val);
        ds.test.extend(test);
    }
    Ok(ds)
}

const DATASET_FORMAT: &str = "dataset";

/// Writes the delimited-text dataset format:
///
/// ```text
/// # cachenet-dataset v1
/// # config-hash=<hex> tool-version=<semver>      (optional)
/// classes=<C> dim=<D>
/// <split>,<label>,<x_0>,...,<x_{D-1}>            (split: train|validation|test)
/// ```
pub fn write_dataset(ds: &Dataset, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "dataset", 1, prov);
    let _ = writeln!(out, "classes={} dim={}", ds.num_classes, ds.input_dim);
    for (name, part) in [("train", &ds.train), ("validation", &ds.validation), ("test", &ds.test)] {
        for s in part {
            let _ = write!(out, "{name},{}", s.label);
            for v in &s.input {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = textfmt::numbered(text);
    textfmt::read_header(&mut lines, DATASET_FORMAT, "dataset", 1)?;
    let (n, dims) = lines
        .next()
        .ok_or_else(|| Error::parse(DATASET_FORMAT, 2, "missing classes/dim line"))?;
    let (classes, dim) = dims
        .trim()
        .strip_prefix("classes=")
        .and_then(|r| r.split_once(" dim="))
        .ok_or_else(|| Error::parse(DATASET_FORMAT, n, "expected `classes=<C> dim=<D>`"))?;
    let num_classes = textfmt::parse_usize(classes, DATASET_FORMAT, n, "classes")?;
    let input_dim = textfmt::parse_usize(dim, DATASET_FORMAT, n, "dim")?;
    if num_classes == 0 || input_dim == 0 {
        return Err(Error::parse(DATASET_FORMAT, n, "classes and dim must be positive"));
    }
    let mut ds = Dataset {
        num_classes,
        input_dim,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let part = match fields.next() {
            Some("train") => &mut ds.train,
            Some("validation") => &mut ds.validation,
            Some("test") => &mut ds.test,
            Some(other) => {
                return Err(Error::parse(
                    DATASET_FORMAT,
                    n,
                    format!("unknown split `{}`", textfmt::truncate(other)),
                ))
            }
            None => unreachable!(),
        };
        let label = textfmt::parse_usize(
            fields.next().unwrap_or_default(),
            DATASET_FORMAT,
            n,
            "label",
        )?;
        if label >= num_classes {
            return Err(Error::parse(DATASET_FORMAT, n, format!("label {label} out of range")));
        }
        let mut input = Vec::with_capacity(input_dim);
        for f in fields {
            if input.len() == input_dim {
                return Err(Error::parse(DATASET_FORMAT, n, "too many values"));
            }
            input.push(textfmt::parse_f64(f, DATASET_FORMAT, n, "value")?);
        }
        if input.len() != input_dim {
            return Err(Error::parse(
                DATASET_FORMAT,
                n,
                format!("expected {input_dim} values, found {}", input.len()),
            ));
        }
        part.push(Sample { label, input });
    }
    Ok(ds)
}

/// Shape of the base network: `blocks` x (dense + relu), then a dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    pub blocks: usize,
    pub width: usize,
    /// Per-block widths overriding `width`; must have `blocks` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
}

impl Default for BaseSpec {
    fn default() -> Self {
        Self {
            blocks: 8,
            width: 64,
            widths: None,
        }
    }
}

impl BaseSpec {
    pub fn block_widths(&self) -> Result<Vec<usize>> {
        if self.blocks < 2 {
            return Err(Error::invalid("base spec", "at least two blocks required"));
        }
        let widths = match &self.widths {
            Some(w) if w.len() != self.blocks => {
                return Err(Error::invalid(
                    "base spec",
                    format!("{} widths for {} blocks", w.len(), self.blocks),
                ))
            }
            Some(w) => w.clone(),
            None => vec![self.width; self.blocks],
        };
        if widths.contains(&0) {
            return Err(Error::invalid("base spec", "zero block width"));
        }
        Ok(widths)
    }
}

/// Per-block compute latencies in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerProfile {
    pub latencies_ms: Vec<f64>,
}

impl Default for LayerProfile {
    fn default() -> Self {
        Self {
            latencies_ms: vec![4.0; 8],
        }
    }
}

impl LayerProfile {
    pub fn new(latencies_ms: Vec<f64>) -> Result<Self> {
        let p = Self { latencies_ms };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latencies_ms.is_empty() {
            return Err(Error::invalid("layer profile", "no layers"));
        }
        if self.latencies_ms.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("layer profile", "latencies must be positive"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.latencies_ms.len()
    }

    pub fn total(&self) -> f64 {
        self.latencies_ms.iter().fold(0.0, |a, l| a + l)
    }

    /// Sum of the first `layer` latencies (1-based, inclusive).
    pub fn prefix(&self, layer: usize) -> f64 {
        self.latencies_ms[..layer.min(self.latencies_ms.len())]
            .iter()
            .fold(0.0, |a, l| a + l)
    }

    /// Sum of latencies of layers `from+1 ..= to` (1-based).
    pub fn span(&self, from: usize, to: usize) -> f64 {
        self.latencies_ms[from.min(to)..to.min(self.latencies_ms.len())]
            .iter()
            .fold(0.0, |a, l| a + l)
    }
}

/// `# cachenet-profile v1` header followed by `latencies_ms = [...]`.
pub fn write_profile(p: &LayerProfile, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "profile", 1, prov);
    out.push_str(&toml::to_string(p).expect("profiles serialize"));
    out
}

pub fn parse_profile(text: &str) -> Result<LayerProfile> {
    let (p, _): (LayerProfile, _) = textfmt::parse_toml(text, "profile", "profile", 1)?;
    p.validate()?;
    Ok(p)
}

/// Hidden-layer outputs of one forward pass plus the final class distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    /// `hidden[i]` is the output of block `i + 1`.
    pub hidden: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl Taps {
    pub fn prediction(&self) -> usize {
        argmax(&self.probs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    network: Network,
    blocks: usize,
    pub test_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

impl BaseModel {
    pub fn build(spec: &BaseSpec, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let widths = spec.block_widths()?;
        let mut layers = Vec::with_capacity(2 * widths.len() + 1);
        let mut prev = input_dim;
        for &w in &widths {
            layers.push(LayerSpec::Dense {
                input: prev,
                output: w,
            });
            layers.push(LayerSpec::Relu { dim: w });
            prev = w;
        }
        layers.push(LayerSpec::Dense {
            input: prev,
            output: num_classes,
        });
        Ok(Self {
            network: Network::new(layers, seed)?,
            blocks: widths.len(),
            test_accuracy: 0.0,
            epoch_losses: Vec::new(),
        })
    }

    /// Wraps a stored network (blocks followed by one dense head).
    pub fn from_network(network: Network) -> Result<Self> {
        let layers = network.layers();
        let well_formed = layers.len() >= 5
            && layers.len() % 2 == 1
            && layers.chunks(2).enumerate().all(|(i, pair)| {
                if i == layers.len() / 2 {
                    matches!(pair[0], LayerSpec::Dense { .. })
                } else {
                    matches!(pair[0], LayerSpec::Dense { .. })
                        && matches!(pair.get(1), Some(LayerSpec::Relu { .. }))
                }
            });
        if !well_formed {
            return Err(Error::invalid("base model", "network is not blocks of dense+relu plus a head"));
        }
        let blocks = layers.len() / 2;
        Ok(Self {
            network,
            blocks,
            test_accuracy: 0.0,
            epoch_losses: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.network.output_dim()
    }

    /// Output width of each block, block 1 first.
    pub fn tap_dims(&self) -> Vec<usize> {
        (0..self.blocks)
            .map(|b| self.network.layers()[2 * b + 1].output_dim())
            .collect()
    }

    pub fn forward_with_taps(&self, input: &[f64]) -> Result<Taps> {
        let tape = self.network.forward_recorded(input)?;
        let acts = tape.activations();
        let hidden = (0..self.blocks).map(|b| acts[2 * b + 2].clone()).collect();
        Ok(Taps {
            hidden,
            probs: softmax(tape.output()),
        })
    }

    /// Applies the output head (dense + softmax) to the last block's output.
    pub fn head(&self, last_hidden: &[f64]) -> Result<Vec<f64>> {
        let layers = self.network.layers();
        let head = Network::from_parts(
            vec![layers[layers.len() - 1]],
            vec![self.network.params()[layers.len() - 1].clone()],
            0,
        )?;
        Ok(softmax(&head.forward(last_hidden)?))
    }

    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.network.forward(input)?))
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("sample set"));
        }
        let mut correct = 0usize;
        for s in samples {
            if self.predict(&s.input)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Trains the base classifier on the training split with cross-entropy.
pub fn train_base(spec: &BaseSpec, data: &Dataset, cfg: &TrainConfig) -> Result<BaseModel> {
    if data.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut model = BaseModel::build(spec, data.input_dim, data.num_classes, cfg.seed)?;
    let inputs: Vec<&[f64]> = data.train.iter().map(|s| s.input.as_slice()).collect();
    let report = fit(&mut model.network, &inputs, None, cfg, |i, logits| {
        let lg = cross_entropy(logits, data.train[i].label)?;
        Ok((lg.loss, lg.grad))
    })?;
    model.epoch_losses = report.epoch_losses;
    let eval = if data.test.is_empty() { &data.train } else { &data.test };
    model.test_accuracy = model.accuracy(eval)?;
    Ok(model)
}
