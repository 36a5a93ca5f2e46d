//! Serving simulation in simulated time.
//!
//! Lookups run beside the base model: a lookup started after block `i`
//! finishes before the base computation reaches the next chosen cache, so a
//! hit at `i` returns at `prefix(i) + T` and a miss costs exactly the full
//! network latency.

mod adapt;
mod report;
mod workload;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base::{BaseModel, LayerProfile, Taps};
use crate::cache::CacheVariant;
use crate::compose::{PlanReport, EPS};
use crate::nn::loss::argmax;
use crate::{Error, Result};

pub use adapt::{run_adaptation, AdaptationConfig, AdaptationRun, RetrainEvent, TimelineRow};
pub use report::{parse_trace, write_latency_cdf, write_summary, write_timeline, write_trace};
pub use workload::{gen_workload, zipf_probability, Request, WorkloadSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RequestTrace {
    pub id: usize,
    pub timestamp_s: f64,
    pub true_class: usize,
    pub base_prediction: usize,
    pub served_prediction: usize,
    /// Block whose cache answered, `None` on a miss.
    pub hit_layer: Option<usize>,
    pub latency_ms: f64,
}

/// A plan's caches bound to trained variants, ordered by layer.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub caches: Vec<ActiveCache>,
}

#[derive(Clone, Debug)]
pub struct ActiveCache {
    pub layer: usize,
    pub lookup_ms: f64,
    pub variant: CacheVariant,
}

/// Rejects plans whose lookups could delay the base model.
pub fn check_timing(plan: &PlanReport, profile: &LayerProfile) -> Result<()> {
    plan.validate()?;
    for c in &plan.caches {
        if c.layer > profile.num_layers() {
            return Err(Error::Infeasible(format!(
                "cache at layer {} but the model has {} blocks",
                c.layer,
                profile.num_layers()
            )));
        }
        let window = profile.span(c.layer, c.next_layer.unwrap_or(profile.num_layers()));
        if c.lookup_ms > window + EPS {
            return Err(Error::Infeasible(format!(
                "lookup at layer {} takes {} ms, window is {window} ms",
                c.layer, c.lookup_ms
            )));
        }
    }
    Ok(())
}

impl Deployment {
    pub fn new(plan: &PlanReport, variants: &[CacheVariant], profile: &LayerProfile) -> Result<Self> {
        check_timing(plan, profile)?;
        let caches = plan
            .caches
            .iter()
            .map(|c| {
                let v = variants
                    .iter()
                    .find(|v| v.layer == c.layer && v.variant == c.variant)
                    .ok_or(Error::MissingMetrics {
                        layer: c.layer,
                        variant: c.variant,
                    })?;
                Ok(ActiveCache {
                    layer: c.layer,
                    lookup_ms: c.lookup_ms,
                    variant: v.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { caches })
    }

    pub fn empty() -> Self {
        Self { caches: Vec::new() }
    }
}

/// Serves one request; also returns the taps so callers can sample them.
pub(crate) fn serve(
    base: &BaseModel,
    profile: &LayerProfile,
    caches: &[ActiveCache],
    req: &Request,
) -> Result<(RequestTrace, Taps)> {
    let taps = base.forward_with_taps(&req.input)?;
    let base_prediction = taps.prediction();
    let mut served = (base_prediction, None, profile.total());
    for c in caches {
        let l = c.variant.lookup(&taps.hidden[c.layer - 1])?;
        if l.hit {
            served = (argmax(&l.probs), Some(c.layer), profile.prefix(c.layer) + c.lookup_ms);
            break;
        }
    }
    Ok((
        RequestTrace {
            id: req.id,
            timestamp_s: req.timestamp_s,
            true_class: req.class,
            base_prediction,
            served_prediction: served.0,
            hit_layer: served.1,
            latency_ms: served.2,
        },
        taps,
    ))
}

/// Runs real base-model and cache inference for every request.
pub fn simulate_model(
    base: &BaseModel,
    profile: &LayerProfile,
    deployment: &Deployment,
    stream: &[Request],
) -> Result<Vec<RequestTrace>> {
    if profile.num_layers() != base.blocks() {
        return Err(Error::invalid(
            "layer profile",
            format!("{} layers for a {}-block model", profile.num_layers(), base.blocks()),
        ));
    }
    stream
        .iter()
        .map(|r| serve(base, profile, &deployment.caches, r).map(|(t, _)| t))
        .collect()
}

/// Samples hits from the plan's effective hit rates instead of running
/// models. The request's class stands in for the base prediction; a wrong
/// hit serves the next class.
pub fn simulate_profile(
    plan: &PlanReport,
    profile: &LayerProfile,
    stream: &[Request],
    num_classes: usize,
    seed: u64,
) -> Result<Vec<RequestTrace>> {
    check_timing(plan, profile)?;
    if num_classes < 2 {
        return Err(Error::invalid("profile simulation", "needs at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(stream.len());
    for r in stream {
        let mut served = (r.class, None, profile.total());
        let mut taken = 0.0;
        for c in &plan.caches {
            let remaining = 1.0 - taken;
            let p = if remaining > 0.0 {
                (c.effective_hit_rate / remaining).min(1.0)
            } else {
                0.0
            };
            taken += c.effective_hit_rate;
            let hit = rng.random::<f64>() < p;
            let correct = rng.random::<f64>() < c.accuracy;
            if hit {
                let class = if correct { r.class } else { (r.class + 1) % num_classes };
                served = (class, Some(c.layer), profile.prefix(c.layer) + c.lookup_ms);
                break;
            }
        }
        out.push(RequestTrace {
            id: r.id,
            timestamp_s: r.timestamp_s,
            true_class: r.class,
            base_prediction: r.class,
            served_prediction: served.0,
            hit_layer: served.1,
            latency_ms: served.2,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub requests: usize,
    pub avg_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub max_latency_ms: f64,
    /// Share of requests whose served answer equals the base prediction.
    pub agreement: f64,
    pub ground_truth_accuracy: f64,
    pub base_ground_truth_accuracy: f64,
    pub hit_rate: f64,
    /// Served-prediction errors against the base model; every one is a hit.
    pub false_positive_hits: usize,
    pub hits_by_layer: BTreeMap<String, usize>,
    pub misses: usize,
    pub full_latency_ms: f64,
    pub speedup: f64,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn summarize(traces: &[RequestTrace], full_latency_ms: f64) -> Result<Summary> {
    if traces.is_empty() {
        return Err(Error::Empty("trace list"));
    }
    let n = traces.len() as f64;
    let mut lat: Vec<f64> = traces.iter().map(|t| t.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let avg = lat.iter().sum::<f64>() / n;
    let mut hits_by_layer = BTreeMap::new();
    let mut misses = 0;
    for t in traces {
        match t.hit_layer {
            Some(l) => *hits_by_layer.entry(l.to_string()).or_insert(0) += 1,
            None => misses += 1,
        }
    }
    let count = |f: &dyn Fn(&RequestTrace) -> bool| traces.iter().filter(|t| f(t)).count();
    Ok(Summary {
        requests: traces.len(),
        avg_latency_ms: avg,
        p50_latency_ms: percentile(&lat, 0.5),
        p99_latency_ms: percentile(&lat, 0.99),
        max_latency_ms: *lat.last().unwrap(),
        agreement: count(&|t| t.served_prediction == t.base_prediction) as f64 / n,
        ground_truth_accuracy: count(&|t| t.served_prediction == t.true_class) as f64 / n,
        base_ground_truth_accuracy: count(&|t| t.base_prediction == t.true_class) as f64 / n,
        hit_rate: (traces.len() - misses) as f64 / n,
        false_positive_hits: count(&|t| t.hit_layer.is_some() && t.served_prediction != t.base_prediction),
        hits_by_layer,
        misses,
        full_latency_ms,
        speedup: full_latency_ms / avg,
    })
}
