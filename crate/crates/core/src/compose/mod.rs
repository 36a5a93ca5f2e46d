//! Choosing which cache variants to deploy.
//!
//! Two solvers share one constraint checker: [`compose_relaxed`] maximizes
//! the summed per-variant score, [`compose_exact`] enumerates every selection
//! and minimizes expected latency directly.

mod planfile;
mod search;

use serde::{Deserialize, Serialize};

use crate::base::LayerProfile;
use crate::cache::VariantMetrics;
use crate::{Error, Result};

pub use planfile::{parse_plan, write_plan, PlanReport, PlannedCache};
pub use search::{compose_exact, compose_relaxed, default_alpha_grid, sweep_alpha, AlphaRow, AlphaSweep, ENUMERATION_LIMIT};

/// Slack for comparing float sums against budgets and thresholds.
pub const EPS: f64 = 1e-9;

/// Weight of hit rate against latency gain in the relaxed score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Fixed(f64),
    /// Try the default grid and keep the lowest-latency plan.
    Sweep,
}

impl Serialize for Alpha {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Alpha::Fixed(a) => s.serialize_f64(*a),
            Alpha::Sweep => s.serialize_str("sweep"),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Alpha;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number in [0, 1] or \"sweep\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Alpha, E> {
                Ok(Alpha::Fixed(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Alpha, E> {
                Ok(Alpha::Fixed(v as f64))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Alpha, E> {
                Ok(Alpha::Fixed(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Alpha, E> {
                if v == "sweep" {
                    Ok(Alpha::Sweep)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposerConfig {
    /// Minimum plan accuracy, and the per-variant filter in the relaxed solver.
    pub accuracy_threshold: f64,
    pub memory_budget_mb: f64,
    pub alpha: Alpha,
    #[serde(default = "one")]
    pub max_concurrent_lookups: usize,
}

fn one() -> usize {
    1
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            accuracy_threshold: 0.97,
            memory_budget_mb: 1024.0,
            alpha: Alpha::Fixed(0.2),
            max_concurrent_lookups: 1,
        }
    }
}

impl ComposerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_threshold > 0.0 && self.accuracy_threshold <= 1.0) {
            return Err(Error::invalid("composer", "accuracy_threshold must be in (0,1]"));
        }
        if !self.memory_budget_mb.is_finite() {
            return Err(Error::invalid("composer", "memory_budget_mb must be finite"));
        }
        if let Alpha::Fixed(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid("composer", format!("alpha {a} outside [0,1]")));
            }
        }
        if self.max_concurrent_lookups != 1 {
            return Err(Error::invalid("composer", "only one concurrent lookup is supported"));
        }
        Ok(())
    }
}

/// One chosen cache: variant `variant` attached after block `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Choice {
    pub layer: usize,
    pub variant: usize,
}

/// A set of chosen variants, kept sorted by layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPlan {
    choices: Vec<Choice>,
}

impl SelectionPlan {
    pub fn new(mut choices: Vec<Choice>) -> Self {
        choices.sort();
        Self { choices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Layer of the next chosen cache after each choice (`None` = network end).
    pub fn next_layers(&self) -> Vec<Option<usize>> {
        (0..self.choices.len())
            .map(|k| self.choices.get(k + 1).map(|c| c.layer))
            .collect()
    }

    fn duplicate_layers(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .choices
            .windows(2)
            .filter(|w| w[0].layer == w[1].layer)
            .map(|w| w[0].layer)
            .collect();
        d.dedup();
        d
    }
}

pub(crate) fn find_metrics<'a>(metrics: &'a [VariantMetrics], c: Choice) -> Result<&'a VariantMetrics> {
    metrics
        .iter()
        .find(|m| m.layer == c.layer && m.variant == c.variant)
        .ok_or(Error::MissingMetrics {
            layer: c.layer,
            variant: c.variant,
        })
}

fn check_layer(profile: &LayerProfile, layer: usize) -> Result<()> {
    if layer == 0 || layer > profile.num_layers() {
        return Err(Error::invalid(
            "cache layer",
            format!("{layer} outside 1..={}", profile.num_layers()),
        ));
    }
    Ok(())
}

/// Whole-network latency over the latency to a hit at `layer` with lookup
/// cost `lookup_ms`.
pub fn latency_gain(profile: &LayerProfile, layer: usize, lookup_ms: f64) -> Result<f64> {
    check_layer(profile, layer)?;
    if !(lookup_ms >= 0.0) {
        return Err(Error::invalid("lookup latency", lookup_ms.to_string()));
    }
    Ok(profile.total() / (profile.prefix(layer) + lookup_ms))
}

pub fn score(hit_rate: f64, gain: f64, alpha: f64) -> f64 {
    alpha * hit_rate + (1.0 - alpha) * gain
}

/// Effective hit rates in layer order, with the layers whose raw recursion
/// went negative and was clamped to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveHits {
    pub rates: Vec<f64>,
    pub clamped: Vec<usize>,
}

impl EffectiveHits {
    pub fn total(&self) -> f64 {
        self.rates.iter().fold(0.0, |a, r| a + r)
    }
}

/// Each cache's share of requests: its hit rate minus the shares already
/// taken by every shallower chosen cache.
pub fn effective_hit_rates(plan: &SelectionPlan, metrics: &[VariantMetrics]) -> Result<EffectiveHits> {
    let mut rates = Vec::with_capacity(plan.len());
    let mut clamped = Vec::new();
    let mut taken = 0.0;
    for &c in plan.choices() {
        let raw = find_metrics(metrics, c)?.hit_rate - taken;
        let eh = if raw < 0.0 {
            clamped.push(c.layer);
            0.0
        } else {
            raw
        };
        taken += eh;
        rates.push(eh);
    }
    Ok(EffectiveHits { rates, clamped })
}

/// Effective hit rate, expected latency and plan accuracy for choices
/// already resolved to their metrics, in ascending layer order.
pub(crate) fn evaluate_resolved(chosen: &[&VariantMetrics], profile: &LayerProfile) -> (EffectiveHits, f64, f64) {
    let mut rates = Vec::with_capacity(chosen.len());
    let mut clamped = Vec::new();
    let mut taken = 0.0;
    for m in chosen {
        let raw = m.hit_rate - taken;
        let eh = if raw < 0.0 {
            clamped.push(m.layer);
            0.0
        } else {
            raw
        };
        taken += eh;
        rates.push(eh);
    }
    let mut lat = 0.0;
    let mut acc = 0.0;
    for (m, &e) in chosen.iter().zip(&rates) {
        lat += e * (profile.prefix(m.layer) + m.lookup_ms);
        acc += e * m.accuracy;
    }
    let miss = 1.0 - taken;
    (EffectiveHits { rates, clamped }, lat + miss * profile.total(), acc + miss)
}

fn resolve<'a>(plan: &SelectionPlan, metrics: &'a [VariantMetrics], profile: &LayerProfile) -> Result<Vec<&'a VariantMetrics>> {
    plan.choices()
        .iter()
        .map(|&c| {
            check_layer(profile, c.layer)?;
            find_metrics(metrics, c)
        })
        .collect()
}

pub fn expected_latency(plan: &SelectionPlan, metrics: &[VariantMetrics], profile: &LayerProfile) -> Result<f64> {
    Ok(evaluate_resolved(&resolve(plan, metrics, profile)?, profile).1)
}

/// Expected agreement with the base model; misses count as agreeing.
pub fn plan_accuracy(plan: &SelectionPlan, metrics: &[VariantMetrics]) -> Result<f64> {
    let eh = effective_hit_rates(plan, metrics)?;
    let mut acc = 0.0;
    for (&c, &e) in plan.choices().iter().zip(&eh.rates) {
        acc += e * find_metrics(metrics, c)?.accuracy;
    }
    Ok(acc + (1.0 - eh.total()))
}

pub fn plan_memory(plan: &SelectionPlan, metrics: &[VariantMetrics]) -> Result<f64> {
    plan.choices()
        .iter()
        .try_fold(0.0, |acc, &c| find_metrics(metrics, c).map(|m| acc + m.memory_mb))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Memory { used_mb: f64, budget_mb: f64 },
    /// A lookup outlasts the base computation up to the next decision point.
    Concurrency {
        layer: usize,
        lookup_ms: f64,
        window_ms: f64,
        next_layer: Option<usize>,
    },
    DuplicateLayer { layer: usize },
    Accuracy { achieved: f64, required: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Memory { used_mb, budget_mb } => {
                write!(f, "memory {used_mb} MB exceeds budget {budget_mb} MB")
            }
            Violation::Concurrency {
                layer,
                lookup_ms,
                window_ms,
                next_layer,
            } => {
                let next = next_layer.map_or("the network end".to_owned(), |l| format!("layer {l}"));
                write!(
                    f,
                    "lookup at layer {layer} takes {lookup_ms} ms but only {window_ms} ms of compute remain before {next}"
                )
            }
            Violation::DuplicateLayer { layer } => write!(f, "more than one variant at layer {layer}"),
            Violation::Accuracy { achieved, required } => {
                write!(f, "plan accuracy {achieved} below {required}")
            }
        }
    }
}

/// Feasibility verdict; the plan is feasible iff `violations` is empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_constraints(
    plan: &SelectionPlan,
    metrics: &[VariantMetrics],
    profile: &LayerProfile,
    cfg: &ComposerConfig,
) -> Result<Verdict> {
    let mut v = Vec::new();
    for &c in plan.choices() {
        check_layer(profile, c.layer)?;
        find_metrics(metrics, c)?;
    }
    let used = plan_memory(plan, metrics)?;
    if used > cfg.memory_budget_mb + EPS {
        v.push(Violation::Memory {
            used_mb: used,
            budget_mb: cfg.memory_budget_mb,
        });
    }
    let dups = plan.duplicate_layers();
    if dups.is_empty() {
        for (&c, next) in plan.choices().iter().zip(plan.next_layers()) {
            let lookup_ms = find_metrics(metrics, c)?.lookup_ms;
            let window_ms = profile.span(c.layer, next.unwrap_or(profile.num_layers()));
            if lookup_ms > window_ms + EPS {
                v.push(Violation::Concurrency {
                    layer: c.layer,
                    lookup_ms,
                    window_ms,
                    next_layer: next,
                });
            }
        }
    } else {
        v.extend(dups.into_iter().map(|layer| Violation::DuplicateLayer { layer }));
    }
    let achieved = plan_accuracy(plan, metrics)?;
    if achieved + EPS < cfg.accuracy_threshold {
        v.push(Violation::Accuracy {
            achieved,
            required: cfg.accuracy_threshold,
        });
    }
    Ok(Verdict { violations: v })
}
