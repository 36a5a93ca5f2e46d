//! Plan file: a TOML document behind the usual header comment lines.
//!
//! ```text
//! # cachenet-plan v1
//! # config-hash=<hex> tool-version=<semver>
//! alpha = 0.2
//! expected_latency_ms = 24.17284
//! plan_accuracy = 0.981
//! memory_mb = 167.0
//! total_latency_ms = 32.0
//!
//! [[cache]]
//! layer = 3
//! variant = 2
//! arch = "Pool(8192)"
//! hit_rate = 0.341
//! accuracy = 0.967
//! effective_hit_rate = 0.341
//! lookup_ms = 1.32
//! memory_mb = 33.0
//! next_layer = 6
//! ```
//!
//! `next_layer` is omitted for the deepest cache; `alpha` is omitted for
//! plans not produced by the relaxed solver.

use serde::{Deserialize, Serialize};

use super::{effective_hit_rates, expected_latency, find_metrics, plan_accuracy, plan_memory, Choice, SelectionPlan, EPS};
use crate::base::LayerProfile;
use crate::cache::{ArchSpec, VariantMetrics};
use crate::textfmt::{self, Provenance};
use crate::{Error, Result};

const FORMAT: &str = "plan";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedCache {
    pub layer: usize,
    pub variant: usize,
    pub arch: ArchSpec,
    pub hit_rate: f64,
    pub accuracy: f64,
    pub effective_hit_rate: f64,
    pub lookup_ms: f64,
    pub memory_mb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_layer: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub expected_latency_ms: f64,
    pub plan_accuracy: f64,
    pub memory_mb: f64,
    /// Full base-model latency, i.e. the latency of a miss.
    pub total_latency_ms: f64,
    #[serde(default, rename = "cache")]
    pub caches: Vec<PlannedCache>,
}

impl PlanReport {
    pub fn build(
        plan: &SelectionPlan,
        metrics: &[VariantMetrics],
        profile: &LayerProfile,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let eh = effective_hit_rates(plan, metrics)?;
        let caches = plan
            .choices()
            .iter()
            .zip(&eh.rates)
            .zip(plan.next_layers())
            .map(|((&c, &e), next_layer)| {
                let m = find_metrics(metrics, c)?;
                Ok(PlannedCache {
                    layer: c.layer,
                    variant: c.variant,
                    arch: m.arch,
                    hit_rate: m.hit_rate,
                    accuracy: m.accuracy,
                    effective_hit_rate: e,
                    lookup_ms: m.lookup_ms,
                    memory_mb: m.memory_mb,
                    next_layer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            alpha,
            expected_latency_ms: expected_latency(plan, metrics, profile)?,
            plan_accuracy: plan_accuracy(plan, metrics)?,
            memory_mb: plan_memory(plan, metrics)?,
            total_latency_ms: profile.total(),
            caches,
        })
    }

    pub fn plan(&self) -> SelectionPlan {
        SelectionPlan::new(
            self.caches
                .iter()
                .map(|c| Choice {
                    layer: c.layer,
                    variant: c.variant,
                })
                .collect(),
        )
    }

    /// Metrics rows for the chosen variants, without confusion counts.
    pub fn metrics(&self) -> Vec<VariantMetrics> {
        self.caches
            .iter()
            .map(|c| VariantMetrics {
                layer: c.layer,
                variant: c.variant,
                arch: c.arch,
                hit_rate: c.hit_rate,
                accuracy: c.accuracy,
                lookup_ms: c.lookup_ms,
                memory_mb: c.memory_mb,
                confusion: None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("plan", r));
        for (k, c) in self.caches.iter().enumerate() {
            if c.layer == 0 || c.variant == 0 {
                return bad(format!("cache {k}: layer and variant ids are 1-based"));
            }
            if k > 0 && self.caches[k - 1].layer >= c.layer {
                return bad(format!("cache {k}: layers must be strictly increasing"));
            }
            let expected_next = self.caches.get(k + 1).map(|n| n.layer);
            if c.next_layer != expected_next {
                return bad(format!("cache {k}: next_layer {:?} != {:?}", c.next_layer, expected_next));
            }
            for (name, v) in [
                ("hit_rate", c.hit_rate),
                ("accuracy", c.accuracy),
                ("effective_hit_rate", c.effective_hit_rate),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("cache {k}: {name} {v} outside [0,1]"));
                }
            }
            if !(c.lookup_ms >= 0.0 && c.lookup_ms.is_finite()) || !(c.memory_mb >= 0.0 && c.memory_mb.is_finite()) {
                return bad(format!("cache {k}: lookup_ms and memory_mb must be finite and >= 0"));
            }
        }
        let total: f64 = self.caches.iter().map(|c| c.effective_hit_rate).sum();
        if total > 1.0 + EPS {
            return bad(format!("effective hit rates sum to {total}"));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha {a} outside [0,1]"));
            }
        }
        for (name, v) in [
            ("expected_latency_ms", self.expected_latency_ms),
            ("memory_mb", self.memory_mb),
            ("total_latency_ms", self.total_latency_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.plan_accuracy) {
            return bad(format!("plan_accuracy {} outside [0,1]", self.plan_accuracy));
        }
        Ok(())
    }
}

pub fn write_plan(report: &PlanReport, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "plan", 1, prov);
    out.push_str(&toml::to_string(report).expect("plan reports serialize"));
    out
}

pub fn parse_plan(text: &str) -> Result<PlanReport> {
    let (report, _): (PlanReport, _) = textfmt::parse_toml(text, FORMAT, "plan", 1)?;
    report.validate()?;
    Ok(report)
}
