use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::base::Sample;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub num_classes: usize,
    /// Zipf exponent over the rotating class ranking.
    pub zipf_alpha: f64,
    /// Simulated minutes between shifts of the dominant class.
    pub rotation_period_min: f64,
    pub requests_per_second: f64,
    pub duration_min: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            zipf_alpha: 1.5,
            rotation_period_min: 15.0,
            requests_per_second: 1.0,
            duration_min: 60.0,
            seed: 11,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("workload", r));
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1");
        }
        if !(self.zipf_alpha > 0.0 && self.zipf_alpha.is_finite()) {
            return bad("zipf_alpha must be > 0");
        }
        if !(self.rotation_period_min > 0.0 && self.rotation_period_min.is_finite()) {
            return bad("rotation_period_min must be > 0");
        }
        if !(self.requests_per_second > 0.0 && self.requests_per_second.is_finite()) {
            return bad("requests_per_second must be > 0");
        }
        if !(self.duration_min > 0.0 && self.duration_min.is_finite()) {
            return bad("duration_min must be > 0");
        }
        if self.request_count() > 50_000_000 {
            return bad("more than 50M requests");
        }
        Ok(())
    }

    pub fn request_count(&self) -> usize {
        (self.duration_min * 60.0 * self.requests_per_second).floor() as usize
    }

    /// Class ranked first during the period containing `minute`.
    pub fn dominant_class(&self, minute: f64) -> usize {
        ((minute / self.rotation_period_min).floor() as usize) % self.num_classes
    }
}

/// Probability of the class at 1-based `rank` under Zipf(`alpha`) over `n`.
pub fn zipf_probability(n: usize, alpha: f64, rank: usize) -> f64 {
    let norm: f64 = (1..=n).map(|k| (k as f64).powf(-alpha)).sum();
    (rank as f64).powf(-alpha) / norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub id: usize,
    pub timestamp_s: f64,
    pub class: usize,
    pub input: Vec<f64>,
}

impl Request {
    pub fn minute(&self) -> f64 {
        self.timestamp_s / 60.0
    }
}

/// Evenly spaced requests whose classes follow a Zipf law over a ranking
/// that advances by one class every rotation period.
pub fn gen_workload(spec: &WorkloadSpec, pool: &[Sample]) -> Result<Vec<Request>> {
    spec.validate()?;
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); spec.num_classes];
    for s in pool {
        if s.label >= spec.num_classes {
            return Err(Error::invalid(
                "workload pool",
                format!("label {} >= {} classes", s.label, spec.num_classes),
            ));
        }
        by_class[s.label].push(s);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::invalid("workload pool", format!("no samples of class {c}")));
    }
    let zipf = Zipf::new(spec.num_classes as f64, spec.zipf_alpha)
        .map_err(|e| Error::invalid("workload", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.request_count();
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        let timestamp_s = id as f64 / spec.requests_per_second;
        let rank = (zipf.sample(&mut rng) as usize).clamp(1, spec.num_classes);
        let class = (spec.dominant_class(timestamp_s / 60.0) + rank - 1) % spec.num_classes;
        let members = &by_class[class];
        let s = members[rng.random_range(0..members.len())];
        out.push(Request {
            id,
            timestamp_s,
            class,
            input: s.input.clone(),
        });
    }
    Ok(out)
}
