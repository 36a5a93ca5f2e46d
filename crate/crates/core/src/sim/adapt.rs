//! Online cache adaptation: sample served requests into a sliding window and
//! periodically fine-tune every deployed cache on recent traffic.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{serve, Deployment, Request, RequestTrace};
use crate::base::{BaseModel, LayerProfile, Taps};
use crate::cache::{train_variant, CacheTrainConfig, TapSample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Probability that a served request is kept for retraining.
    pub sample_rate: f64,
    pub window_min: f64,
    pub retrain_interval_min: f64,
    /// Weight multiplier per retrain interval of sample age.
    pub decay: f64,
    /// Share of each retraining set drawn from the original cache-training data.
    pub mix_in: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Simulated time after each swap during which caches are offline and
    /// requests run on the base model alone.
    #[serde(default)]
    pub swap_pause_ms: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            sample_rate: 0.2,
            window_min: 60.0,
            retrain_interval_min: 15.0,
            decay: 0.7,
            mix_in: 0.5,
            epochs: 5,
            learning_rate: 0.002,
            swap_pause_ms: 0.0,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("adaptation", r));
        if !(0.0..=1.0).contains(&self.sample_rate) {
            return bad("sample_rate must be in [0,1]");
        }
        if !(self.window_min > 0.0 && self.window_min.is_finite()) {
            return bad("window_min must be > 0");
        }
        if !(self.retrain_interval_min > 0.0 && self.retrain_interval_min.is_finite()) {
            return bad("retrain_interval_min must be > 0");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must be in (0,1]");
        }
        if !(0.0..1.0).contains(&self.mix_in) {
            return bad("mix_in must be in [0,1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.swap_pause_ms >= 0.0 && self.swap_pause_ms.is_finite()) {
            return bad("swap_pause_ms must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub interval: usize,
    pub start_min: f64,
    pub requests: usize,
    pub hits: usize,
    pub hit_rate: f64,
    pub agreement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainEvent {
    pub at_min: f64,
    pub window_samples: usize,
    pub mixed_samples: usize,
    /// `(layer, variant)` of every cache that was replaced.
    pub swapped: Vec<(usize, usize)>,
    /// Caches whose retraining failed and were kept as they were.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AdaptationRun {
    pub traces: Vec<RequestTrace>,
    /// Hit rate per retrain interval.
    pub timeline: Vec<TimelineRow>,
    pub events: Vec<RetrainEvent>,
    /// Caches in service when the stream ended.
    pub deployment: Deployment,
}

/// Serves `stream` in order; when `enabled`, retrains at every interval
/// boundary and swaps the new caches in before the next request. With
/// `enabled == false` the same loop runs as a static baseline.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptation(
    base: &BaseModel,
    profile: &LayerProfile,
    deployment: &Deployment,
    stream: &[Request],
    original: &[Taps],
    train_cfg: &CacheTrainConfig,
    cfg: &AdaptationConfig,
    enabled: bool,
) -> Result<AdaptationRun> {
    cfg.validate()?;
    train_cfg.validate()?;
    if enabled && cfg.mix_in > 0.0 && original.is_empty() {
        return Err(Error::Empty("original cache-training taps"));
    }
    let interval_s = cfg.retrain_interval_min * 60.0;
    let window_s = cfg.window_min * 60.0;
    let pause_s = cfg.swap_pause_ms / 1000.0;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut live = deployment.clone();
    let mut window: VecDeque<(f64, Taps)> = VecDeque::new();
    let mut next_retrain = interval_s;
    let mut last_swap = f64::NEG_INFINITY;
    let mut traces = Vec::with_capacity(stream.len());
    let mut timeline: Vec<TimelineRow> = Vec::new();
    let mut events = Vec::new();
    let mut agree_counts: Vec<usize> = Vec::new();

    for req in stream {
        while req.timestamp_s >= next_retrain {
            if enabled {
                while window.front().is_some_and(|(t, _)| *t < next_retrain - window_s) {
                    window.pop_front();
                }
                if !window.is_empty() {
                    let ev = retrain(&mut live, &window, original, next_retrain, interval_s, events.len(), train_cfg, cfg);
                    if !ev.swapped.is_empty() {
                        last_swap = next_retrain;
                    }
                    events.push(ev);
                }
            }
            next_retrain += interval_s;
        }
        let offline = req.timestamp_s < last_swap + pause_s;
        let caches = if offline { &[][..] } else { &live.caches[..] };
        let (trace, taps) = serve(base, profile, caches, req)?;
        if sample_rng.random::<f64>() < cfg.sample_rate {
            window.push_back((req.timestamp_s, taps));
        }

        let bucket = (req.timestamp_s / interval_s).floor() as usize;
        while timeline.len() <= bucket {
            timeline.push(TimelineRow {
                interval: timeline.len(),
                start_min: timeline.len() as f64 * cfg.retrain_interval_min,
                requests: 0,
                hits: 0,
                hit_rate: 0.0,
                agreement: 0.0,
            });
            agree_counts.push(0);
        }
        let row = &mut timeline[bucket];
        row.requests += 1;
        row.hits += usize::from(trace.hit_layer.is_some());
        agree_counts[bucket] += usize::from(trace.served_prediction == trace.base_prediction);
        traces.push(trace);
    }
    for (row, agree) in timeline.iter_mut().zip(agree_counts) {
        if row.requests > 0 {
            row.hit_rate = row.hits as f64 / row.requests as f64;
            row.agreement = agree as f64 / row.requests as f64;
        }
    }
    Ok(AdaptationRun {
        traces,
        timeline,
        events,
        deployment: live,
    })
}

#[allow(clippy::too_many_arguments)]
fn retrain(
    live: &mut Deployment,
    window: &VecDeque<(f64, Taps)>,
    original: &[Taps],
    now_s: f64,
    interval_s: f64,
    index: usize,
    train_cfg: &CacheTrainConfig,
    cfg: &AdaptationConfig,
) -> RetrainEvent {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0000 ^ index as u64);
    // Sample weights decay geometrically with age in whole intervals.
    let mut pool: Vec<(&Taps, f64)> = window
        .iter()
        .map(|(t, taps)| (taps, cfg.decay.powf(((now_s - t) / interval_s).floor())))
        .collect();
    let n_window = pool.len();
    let n_orig = if original.is_empty() {
        0
    } else {
        (n_window as f64 * cfg.mix_in / (1.0 - cfg.mix_in)).round() as usize
    };
    for _ in 0..n_orig {
        pool.push((&original[rng.random_range(0..original.len())], 1.0));
    }
    pool.shuffle(&mut rng);

    let mut tc = train_cfg.clone();
    for stage in [&mut tc.predictor, &mut tc.selector] {
        stage.epochs = cfg.epochs;
        stage.learning_rate = cfg.learning_rate;
    }
    let weights: Vec<f64> = pool.iter().map(|p| p.1).collect();
    let mut replacements = Vec::with_capacity(live.caches.len());
    let mut failures = Vec::new();
    for (k, c) in live.caches.iter().enumerate() {
        let taps: Vec<TapSample> = pool
            .iter()
            .map(|(t, _)| TapSample {
                hidden: t.hidden[c.layer - 1].clone(),
                probs: t.probs.clone(),
            })
            .collect();
        tc.predictor.seed = cfg.seed.wrapping_add((index * 64 + k) as u64);
        tc.selector.seed = tc.predictor.seed.wrapping_add(1 << 32);
        let mut v = c.variant.clone();
        match train_variant(&mut v, &taps, &tc, Some(&weights)) {
            Ok(()) => replacements.push((k, v)),
            Err(e) => failures.push(format!("layer {} variant {}: {e}", c.layer, c.variant.variant)),
        }
    }
    let swapped = replacements
        .iter()
        .map(|(k, _)| (live.caches[*k].layer, live.caches[*k].variant.variant))
        .collect();
    for (k, v) in replacements {
        live.caches[k].variant = v;
    }
    RetrainEvent {
        at_min: now_s / 60.0,
        window_samples: n_window,
        mixed_samples: n_orig,
        swapped,
        failures,
    }
}
