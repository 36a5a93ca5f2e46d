use serde::{Deserialize, Serialize};

use super::{ArchSpec, Confusion, CostModel, VariantMetrics};
use crate::nn::loss::{argmax, distill_loss, sigmoid, softmax, weighted_selector_loss};
use crate::nn::{fit, DistillParams, FitReport, LayerSpec, Network, TrainConfig};
use crate::{Error, Result};

pub const SELECTOR_HIDDEN: usize = 16;

/// One `(HO_i, Y)` training pair: a block output and the base model's class
/// distribution for the same input.
#[derive(Clone, Debug, PartialEq)]
pub struct TapSample {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Predictor + selector pair attached to one base-model block.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheVariant {
    pub layer: usize,
    pub variant: usize,
    pub arch: ArchSpec,
    pub predictor: Network,
    pub selector: Network,
    /// Selector fires when `sigmoid(logit) >= threshold`.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lookup {
    pub hit: bool,
    /// Predicted class distribution; meaningful to callers only on a hit.
    pub probs: Vec<f64>,
    pub confidence: f64,
}

impl Lookup {
    pub fn prediction(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Hyper-parameters for training one cache variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheTrainConfig {
    pub predictor: TrainConfig,
    pub selector: TrainConfig,
    #[serde(default)]
    pub distill: DistillParams,
    /// Loss weight on selector false positives.
    pub w_fp: f64,
    /// Loss weight on selector false negatives.
    pub w_fn: f64,
    /// Conditional accuracy the tuned threshold must reach.
    pub target_accuracy: f64,
    /// Candidate thresholds, scanned in ascending order.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Fraction of the cache-training taps held back from the predictor and
    /// used to train the selector and tune its threshold.
    #[serde(default)]
    pub selector_holdout: f64,
}

pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * k as f64).collect()
}

impl Default for CacheTrainConfig {
    fn default() -> Self {
        Self {
            predictor: TrainConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                epochs: 30,
                batch_size: 16,
                seed: 0,
            },
            selector: TrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                epochs: 30,
                batch_size: 16,
                seed: 0,
            },
            distill: DistillParams::default(),
            w_fp: 3.0,
            w_fn: 1.0,
            target_accuracy: 0.97,
            thresholds: default_thresholds(),
            selector_holdout: 0.25,
        }
    }
}

impl CacheTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.selector.validate()?;
        if !(self.w_fp > 0.0) || !(self.w_fn > 0.0) {
            return Err(Error::invalid("cache training", "w_fp and w_fn must be > 0"));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::invalid("cache training", "target_accuracy must be in (0,1]"));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(Error::invalid("cache training", "thresholds must lie in (0,1)"));
        }
        if !(0.0..1.0).contains(&self.selector_holdout) {
            return Err(Error::invalid("cache training", "selector_holdout must be in [0,1)"));
        }
        Ok(())
    }
}

/// Selector network: class distribution -> 16 relu units -> one logit.
pub fn selector_layers(num_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            input: num_classes,
            output: SELECTOR_HIDDEN,
        },
        LayerSpec::Relu {
            dim: SELECTOR_HIDDEN,
        },
        LayerSpec::Dense {
            input: SELECTOR_HIDDEN,
            output: 1,
        },
    ]
}

/// Seed for the job training `(layer, variant)` under `global` seed.
pub fn job_seed(global: u64, layer: usize, variant: usize) -> u64 {
    global
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((layer as u64) << 32)
        .wrapping_add(variant as u64)
}

pub fn build_variant(
    layer: usize,
    variant: usize,
    arch: ArchSpec,
    tap_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<CacheVariant> {
    let predictor = Network::new(arch.predictor_layers(tap_dim, num_classes)?, seed)?;
    let selector = Network::new(selector_layers(num_classes), seed ^ 0xA5A5)?;
    Ok(CacheVariant {
        layer,
        variant,
        arch,
        predictor,
        selector,
        threshold: 0.5,
    })
}

impl CacheVariant {
    pub fn tap_dim(&self) -> usize {
        self.predictor.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.predictor.output_dim()
    }

    pub fn predict(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.predictor.forward(hidden)?))
    }

    pub fn selector_logit(&self, probs: &[f64]) -> Result<f64> {
        Ok(self.selector.forward(probs)?[0])
    }

    pub fn lookup(&self, hidden: &[f64]) -> Result<Lookup> {
        let probs = self.predict(hidden)?;
        let confidence = sigmoid(self.selector_logit(&probs)?);
        Ok(Lookup {
            hit: confidence >= self.threshold,
            probs,
            confidence,
        })
    }

    pub fn param_count(&self) -> usize {
        self.predictor.param_count() + self.selector.param_count()
    }

    pub fn macs(&self) -> usize {
        self.predictor.macs() + self.selector.macs()
    }
}

/// Distillation training of the predictor against the base model's outputs.
pub fn train_predictor(
    variant: &mut CacheVariant,
    taps: &[TapSample],
    cfg: &TrainConfig,
    distill: &DistillParams,
    weights: Option<&[f64]>,
) -> Result<FitReport> {
    if taps.is_empty() {
        return Err(Error::Empty("predictor training taps"));
    }
    let inputs: Vec<&[f64]> = taps.iter().map(|t| t.hidden.as_slice()).collect();
    let report = fit(&mut variant.predictor, &inputs, weights, cfg, |i, logits| {
        let t = &taps[i];
        let lg = distill_loss(logits, &t.probs, argmax(&t.probs), distill.temperature, distill.mix)?;
        Ok((lg.loss, lg.grad))
    })?;
    Ok(report)
}

/// `G = 1` iff the predictor's argmax equals the base model's argmax.
pub fn label_selector_data(predicted: &[Vec<f64>], base: &[Vec<f64>]) -> Result<Vec<bool>> {
    if predicted.is_empty() {
        return Err(Error::Empty("selector labelling input"));
    }
    if predicted.len() != base.len() {
        return Err(Error::invalid(
            "selector labelling input",
            format!("{} predictions vs {} base outputs", predicted.len(), base.len()),
        ));
    }
    Ok(predicted
        .iter()
        .zip(base)
        .map(|(p, y)| argmax(p) == argmax(y))
        .collect())
}

pub fn train_selector(
    variant: &mut CacheVariant,
    data: &[(Vec<f64>, bool)],
    cfg: &TrainConfig,
    w_fp: f64,
    w_fn: f64,
    weights: Option<&[f64]>,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::Empty("selector training data"));
    }
    let inputs: Vec<&[f64]> = data.iter().map(|(p, _)| p.as_slice()).collect();
    let report = fit(&mut variant.selector, &inputs, weights, cfg, |i, out| {
        let (loss, g) = weighted_selector_loss(out[0], data[i].1, w_fp, w_fn)?;
        Ok((loss, vec![g]))
    })?;
    Ok(report)
}

/// Picks the smallest threshold in `grid` whose conditional accuracy on
/// `data` reaches `target`; falls back to the largest candidate.
pub fn tune_threshold(
    variant: &mut CacheVariant,
    data: &[(Vec<f64>, bool)],
    target: f64,
    grid: &[f64],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("threshold tuning data"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let scored: Vec<(f64, bool)> = data
        .iter()
        .map(|(p, g)| Ok((sigmoid(variant.selector_logit(p)?), *g)))
        .collect::<Result<_>>()?;
    let chosen = grid
        .iter()
        .copied()
        .find(|&delta| {
            let mut c = Confusion::default();
            for &(conf, g) in &scored {
                c.record(conf >= delta, g);
            }
            c.accuracy() >= target
        })
        .unwrap_or_else(|| *grid.last().unwrap());
    variant.threshold = chosen;
    Ok(chosen)
}

/// Confusion counts of `variant` on measurement taps.
pub fn confusion(variant: &CacheVariant, taps: &[TapSample]) -> Result<Confusion> {
    let mut c = Confusion::default();
    for t in taps {
        let l = variant.lookup(&t.hidden)?;
        c.record(l.hit, l.prediction() == argmax(&t.probs));
    }
    Ok(c)
}

pub fn measure_metrics(variant: &CacheVariant, taps: &[TapSample], cost: &CostModel) -> Result<VariantMetrics> {
    if taps.is_empty() {
        return Err(Error::Empty("measurement set"));
    }
    let c = confusion(variant, taps)?;
    Ok(VariantMetrics::from_confusion(
        variant.layer,
        variant.variant,
        variant.arch,
        c,
        cost.lookup_ms(variant.macs()),
        cost.memory_mb(variant.param_count()),
    ))
}

/// Trains predictor, then selector, then tunes the threshold.
///
/// With a non-zero `selector_holdout` the tail of `taps` is reserved for the
/// selector stage so its labels reflect predictor behaviour on unseen data.
pub fn train_variant(
    variant: &mut CacheVariant,
    taps: &[TapSample],
    cfg: &CacheTrainConfig,
    weights: Option<&[f64]>,
) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::Empty("cache training taps"));
    }
    let split = if cfg.selector_holdout > 0.0 && taps.len() >= 2 {
        let held = ((taps.len() as f64 * cfg.selector_holdout).round() as usize).clamp(1, taps.len() - 1);
        taps.len() - held
    } else {
        taps.len()
    };
    let (pred_taps, pred_w) = (&taps[..split], weights.map(|w| &w[..split]));
    let (sel_taps, sel_w) = if split < taps.len() {
        (&taps[split..], weights.map(|w| &w[split..]))
    } else {
        (taps, weights)
    };
    train_predictor(variant, pred_taps, &cfg.predictor, &cfg.distill, pred_w)?;
    let prs: Vec<Vec<f64>> = sel_taps
        .iter()
        .map(|t| variant.predict(&t.hidden))
        .collect::<Result<_>>()?;
    let ys: Vec<Vec<f64>> = sel_taps.iter().map(|t| t.probs.clone()).collect();
    let labels = label_selector_data(&prs, &ys)?;
    let data: Vec<(Vec<f64>, bool)> = prs.into_iter().zip(labels).collect();
    train_selector(variant, &data, &cfg.selector, cfg.w_fp, cfg.w_fn, sel_w)?;
    tune_threshold(variant, &data, cfg.target_accuracy, &cfg.thresholds)?;
    Ok(())
}
