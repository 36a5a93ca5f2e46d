//! Exploration phase: train and measure every (layer, variant) pair.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_variant, default_menu, job_seed, measure_metrics, resolve_menu, train_variant, ArchSpec,
    CacheTrainConfig, CacheVariant, CostModel, TapSample, VariantMetrics,
};
use crate::base::{BaseModel, Sample, Taps};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    pub menu: Vec<ArchSpec>,
    /// 1-based blocks to explore; empty means every block.
    #[serde(default)]
    pub layers: Vec<usize>,
    pub train: CacheTrainConfig,
    #[serde(default)]
    pub cost: CostModel,
    /// Share of the validation split kept for measurement.
    #[serde(default = "default_measure_fraction")]
    pub measure_fraction: f64,
    /// Worker threads; 0 picks the machine's parallelism.
    #[serde(default)]
    pub threads: usize,
}

fn default_measure_fraction() -> f64 {
    0.2
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            menu: default_menu(),
            layers: Vec::new(),
            train: CacheTrainConfig::default(),
            cost: CostModel::default(),
            measure_fraction: default_measure_fraction(),
            threads: 0,
        }
    }
}

/// Base-model taps over the validation split, divided into a cache-training
/// part and a disjoint measurement part.
#[derive(Clone, Debug)]
pub struct CacheData {
    pub train: Vec<Taps>,
    pub measure: Vec<Taps>,
}

impl CacheData {
    pub fn build(base: &BaseModel, validation: &[Sample], measure_fraction: f64, seed: u64) -> Result<Self> {
        if validation.len() < 2 {
            return Err(Error::Empty("validation split"));
        }
        if !(measure_fraction > 0.0 && measure_fraction < 1.0) {
            return Err(Error::invalid("measure fraction", measure_fraction.to_string()));
        }
        let mut order: Vec<usize> = (0..validation.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xCAC4E));
        let n_measure = ((validation.len() as f64 * measure_fraction).round() as usize).clamp(1, validation.len() - 1);
        let taps = order
            .iter()
            .map(|&i| base.forward_with_taps(&validation[i].input))
            .collect::<Result<Vec<_>>>()?;
        let (train, measure) = taps.split_at(validation.len() - n_measure);
        Ok(Self {
            train: train.to_vec(),
            measure: measure.to_vec(),
        })
    }
}

/// `(HO_layer, Y)` pairs for a 1-based block.
pub fn layer_taps(taps: &[Taps], layer: usize) -> Vec<TapSample> {
    taps.iter()
        .map(|t| TapSample {
            hidden: t.hidden[layer - 1].clone(),
            probs: t.probs.clone(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Explored {
    pub variants: Vec<CacheVariant>,
    pub metrics: Vec<VariantMetrics>,
}

impl Explored {
    pub fn variant(&self, layer: usize, variant: usize) -> Option<&CacheVariant> {
        self.variants.iter().find(|v| v.layer == layer && v.variant == variant)
    }
}

/// Trains and measures every menu entry at every requested block.
///
/// Each job seeds its own RNG from `(layer, variant, seed)`, so the result
/// does not depend on the number of threads.
pub fn explore(base: &BaseModel, data: &CacheData, cfg: &ExploreConfig, seed: u64) -> Result<Explored> {
    cfg.train.validate()?;
    cfg.cost.validate()?;
    if cfg.menu.is_empty() {
        return Err(Error::invalid("variant menu", "empty"));
    }
    let layers: Vec<usize> = if cfg.layers.is_empty() {
        (1..=base.blocks()).collect()
    } else {
        cfg.layers.clone()
    };
    if layers.iter().any(|&l| l == 0 || l > base.blocks()) {
        return Err(Error::invalid("explore layers", format!("{layers:?}")));
    }
    let tap_dims = base.tap_dims();
    let mut jobs = Vec::new();
    for &layer in &layers {
        for (j, arch) in resolve_menu(&cfg.menu, tap_dims[layer - 1]).into_iter().enumerate() {
            jobs.push((layer, j + 1, arch));
        }
    }
    let per_layer: Vec<(Vec<TapSample>, Vec<TapSample>)> = (1..=base.blocks())
        .map(|l| {
            if layers.contains(&l) {
                (layer_taps(&data.train, l), layer_taps(&data.measure, l))
            } else {
                (Vec::new(), Vec::new())
            }
        })
        .collect();

    let run = |&(layer, variant, arch): &(usize, usize, ArchSpec)| -> Result<(CacheVariant, VariantMetrics)> {
        let s = job_seed(seed, layer, variant);
        let mut v = build_variant(layer, variant, arch, tap_dims[layer - 1], base.num_classes(), s)?;
        let mut tc = cfg.train.clone();
        tc.predictor.seed = s;
        tc.selector.seed = s.wrapping_add(1);
        let (train, measure) = &per_layer[layer - 1];
        train_variant(&mut v, train, &tc, None)?;
        let m = measure_metrics(&v, measure, &cfg.cost)?;
        Ok((v, m))
    };

    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
    .min(jobs.len())
    .max(1);
    let results: Mutex<Vec<Option<Result<(CacheVariant, VariantMetrics)>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = run(&jobs[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut out = Explored {
        variants: Vec::with_capacity(jobs.len()),
        metrics: Vec::with_capacity(jobs.len()),
    };
    for r in results.into_inner().unwrap() {
        let (v, m) = r.expect("every job ran")?;
        out.variants.push(v);
        out.metrics.push(m);
    }
    Ok(out)
}
