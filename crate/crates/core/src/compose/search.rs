use std::cmp::Ordering;

use super::{
    check_layer, evaluate_resolved, expected_latency, latency_gain, plan_accuracy, score, Alpha, Choice,
    ComposerConfig, SelectionPlan, EPS,
};
use crate::base::LayerProfile;
use crate::cache::VariantMetrics;
use crate::{Error, Result};

/// Largest number of selections [`compose_exact`] will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Tolerance when comparing objective values for ties.
const TIE: f64 = 1e-12;

pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

struct Cand<'a> {
    m: &'a VariantMetrics,
    score: f64,
}

/// Metrics grouped by layer, deepest layer first.
fn by_layer<'a>(
    metrics: &'a [VariantMetrics],
    profile: &LayerProfile,
    keep: impl Fn(&VariantMetrics) -> bool,
) -> Result<Vec<(usize, Vec<&'a VariantMetrics>)>> {
    let mut groups: Vec<(usize, Vec<&VariantMetrics>)> = Vec::new();
    for m in metrics {
        check_layer(profile, m.layer)?;
        if !keep(m) {
            continue;
        }
        match groups.iter_mut().find(|g| g.0 == m.layer) {
            Some(g) => g.1.push(m),
            None => groups.push((m.layer, vec![m])),
        }
    }
    groups.sort_by(|a, b| b.0.cmp(&a.0));
    for g in &mut groups {
        g.1.sort_by_key(|m| m.variant);
    }
    Ok(groups)
}

fn check_budget(cfg: &ComposerConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.memory_budget_mb < 0.0 {
        return Err(Error::Infeasible(format!(
            "memory budget {} MB is negative",
            cfg.memory_budget_mb
        )));
    }
    Ok(())
}

/// Incumbent ordering shared by both solvers: `primary` is the objective
/// already oriented so that larger is better.
fn better(primary: f64, plan: &[Choice], mem: f64, best: &Option<(f64, Vec<Choice>, f64)>) -> bool {
    let Some((bp, bplan, bmem)) = best else {
        return true;
    };
    if primary > bp + TIE {
        return true;
    }
    if primary < bp - TIE {
        return false;
    }
    match plan.len().cmp(&bplan.len()) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    if mem < bmem - TIE {
        return true;
    }
    if mem > bmem + TIE {
        return false;
    }
    let mut a = plan.to_vec();
    let mut b = bplan.clone();
    a.sort();
    b.sort();
    a < b
}

/// Relaxed composition: drop variants below the accuracy threshold, then
/// pick at most one per layer maximizing the summed score under the memory
/// budget and the lookup-concurrency constraint.
///
/// Ties on score go to fewer variants, then lower memory. With
/// [`Alpha::Sweep`] the plan of [`sweep_alpha`] over the default grid is
/// returned.
pub fn compose_relaxed(metrics: &[VariantMetrics], profile: &LayerProfile, cfg: &ComposerConfig) -> Result<SelectionPlan> {
    match cfg.alpha {
        Alpha::Fixed(a) => relaxed(metrics, profile, cfg, a),
        Alpha::Sweep => Ok(sweep_alpha(metrics, profile, cfg, &default_alpha_grid())?.best_plan().clone()),
    }
}

fn relaxed(metrics: &[VariantMetrics], profile: &LayerProfile, cfg: &ComposerConfig, alpha: f64) -> Result<SelectionPlan> {
    check_budget(cfg)?;
    let budget = cfg.memory_budget_mb;
    let groups = by_layer(metrics, profile, |m| {
        m.accuracy + EPS >= cfg.accuracy_threshold && m.memory_mb <= budget + EPS
    })?;
    let mut layers: Vec<(usize, Vec<Cand>)> = Vec::with_capacity(groups.len());
    for (layer, ms) in groups {
        let cands = ms
            .into_iter()
            .map(|m| {
                Ok(Cand {
                    m,
                    score: score(m.hit_rate, latency_gain(profile, layer, m.lookup_ms)?, alpha),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push((layer, cands));
    }
    // Optimistic remaining score: the best candidate at every remaining layer.
    let mut bound = vec![0.0; layers.len() + 1];
    for k in (0..layers.len()).rev() {
        let best = layers[k].1.iter().map(|c| c.score).fold(0.0, f64::max);
        bound[k] = bound[k + 1] + best;
    }

    struct Search<'a, 'b> {
        layers: &'b [(usize, Vec<Cand<'a>>)],
        bound: &'b [f64],
        profile: &'b LayerProfile,
        budget: f64,
        chosen: Vec<Choice>,
        best: Option<(f64, Vec<Choice>, f64)>,
    }

    impl Search<'_, '_> {
        fn go(&mut self, k: usize, next: usize, mem: f64, total: f64) {
            if let Some((b, _, _)) = &self.best {
                if total + self.bound[k] < b - TIE {
                    return;
                }
            }
            if k == self.layers.len() {
                if better(total, &self.chosen, mem, &self.best) {
                    self.best = Some((total, self.chosen.clone(), mem));
                }
                return;
            }
            let (layer, ref cands) = self.layers[k];
            let window = self.profile.span(layer, next);
            for c in cands {
                if c.m.lookup_ms > window + EPS || mem + c.m.memory_mb > self.budget + EPS {
                    continue;
                }
                self.chosen.push(Choice {
                    layer,
                    variant: c.m.variant,
                });
                self.go(k + 1, layer, mem + c.m.memory_mb, total + c.score);
                self.chosen.pop();
            }
            self.go(k + 1, next, mem, total);
        }
    }

    let mut s = Search {
        layers: &layers,
        bound: &bound,
        profile,
        budget,
        chosen: Vec::new(),
        best: None,
    };
    s.go(0, profile.num_layers(), 0.0, 0.0);
    let (_, chosen, _) = s.best.expect("the empty plan is always reachable");
    Ok(SelectionPlan::new(chosen))
}

/// Exact composition: enumerates every selection with at most one variant
/// per layer, keeps those meeting all constraints, and returns the one with
/// the lowest expected latency (ties: fewer variants, then lower memory).
pub fn compose_exact(metrics: &[VariantMetrics], profile: &LayerProfile, cfg: &ComposerConfig) -> Result<SelectionPlan> {
    check_budget(cfg)?;
    let groups = by_layer(metrics, profile, |_| true)?;
    let combinations: f64 = groups.iter().map(|g| (g.1.len() + 1) as f64).product();
    if combinations > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            combinations,
            limit: ENUMERATION_LIMIT,
        });
    }

    struct Search<'a, 'b> {
        groups: &'b [(usize, Vec<&'a VariantMetrics>)],
        profile: &'b LayerProfile,
        cfg: &'b ComposerConfig,
        // Deepest first while searching.
        chosen: Vec<&'a VariantMetrics>,
        best: Option<(f64, Vec<Choice>, f64)>,
    }

    impl Search<'_, '_> {
        fn go(&mut self, k: usize, next: usize, mem: f64) {
            if k == self.groups.len() {
                let ordered: Vec<&VariantMetrics> = self.chosen.iter().rev().copied().collect();
                let (_, latency, accuracy) = evaluate_resolved(&ordered, self.profile);
                if accuracy + EPS < self.cfg.accuracy_threshold {
                    return;
                }
                let plan: Vec<Choice> = ordered
                    .iter()
                    .map(|m| Choice {
                        layer: m.layer,
                        variant: m.variant,
                    })
                    .collect();
                if better(-latency, &plan, mem, &self.best) {
                    self.best = Some((-latency, plan, mem));
                }
                return;
            }
            let (layer, ref ms) = self.groups[k];
            let window = self.profile.span(layer, next);
            for &m in ms {
                if m.lookup_ms > window + EPS || mem + m.memory_mb > self.cfg.memory_budget_mb + EPS {
                    continue;
                }
                self.chosen.push(m);
                self.go(k + 1, layer, mem + m.memory_mb);
                self.chosen.pop();
            }
            self.go(k + 1, next, mem);
        }
    }

    let mut s = Search {
        groups: &groups,
        profile,
        cfg,
        chosen: Vec::new(),
        best: None,
    };
    s.go(0, profile.num_layers(), 0.0);
    let (_, chosen, _) = s.best.expect("the empty plan is always feasible");
    Ok(SelectionPlan::new(chosen))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    pub plan: SelectionPlan,
    pub expected_latency_ms: f64,
    pub plan_accuracy: f64,
}

/// Relaxed plans across an alpha grid and the lowest-latency one among them.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSweep {
    pub rows: Vec<AlphaRow>,
    pub best: usize,
}

impl AlphaSweep {
    pub fn best_alpha(&self) -> f64 {
        self.rows[self.best].alpha
    }

    pub fn best_plan(&self) -> &SelectionPlan {
        &self.rows[self.best].plan
    }

    pub fn best_latency(&self) -> f64 {
        self.rows[self.best].expected_latency_ms
    }
}

/// Runs the relaxed solver at every grid point; the earliest grid point
/// wins latency ties.
pub fn sweep_alpha(
    metrics: &[VariantMetrics],
    profile: &LayerProfile,
    cfg: &ComposerConfig,
    grid: &[f64],
) -> Result<AlphaSweep> {
    if grid.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid("alpha grid", format!("{a} outside [0,1]")));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let plan = relaxed(metrics, profile, cfg, alpha)?;
        rows.push(AlphaRow {
            alpha,
            expected_latency_ms: expected_latency(&plan, metrics, profile)?,
            plan_accuracy: plan_accuracy(&plan, metrics)?,
            plan,
        });
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.plan_accuracy + EPS < cfg.accuracy_threshold {
            continue;
        }
        if best.is_none_or(|b| r.expected_latency_ms < rows[b].expected_latency_ms - TIE) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::Infeasible("no grid point met the accuracy threshold".into()))?;
    Ok(AlphaSweep { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{reference_fixture, ArchSpec};
    use crate::compose::check_constraints;

    fn l4x8() -> LayerProfile {
        LayerProfile::new(vec![4.0; 8]).unwrap()
    }

    fn cfg(acc: f64, budget: f64, alpha: f64) -> ComposerConfig {
        ComposerConfig {
            accuracy_threshold: acc,
            memory_budget_mb: budget,
            alpha: Alpha::Fixed(alpha),
            max_concurrent_lookups: 1,
        }
    }

    #[test]
    fn accuracy_filter_on_reference_menu() {
        let menu = reference_fixture();
        let survivors: Vec<(usize, String)> = menu
            .iter()
            .filter(|m| m.accuracy + EPS >= 0.97)
            .map(|m| (m.layer, m.arch.to_string()))
            .collect();
        assert_eq!(
            survivors,
            vec![
                (3, "FC(1024)".to_owned()),
                (6, "FC(1024)".to_owned()),
                (6, "Conv(3,1)".to_owned())
            ]
        );
    }

    #[test]
    fn zero_budget_gives_empty_plan() {
        let menu = reference_fixture();
        for alpha in [0.0, 0.2, 1.0] {
            assert!(relaxed(&menu, &l4x8(), &cfg(0.9, 0.0, alpha), alpha).unwrap().is_empty());
        }
        assert!(compose_exact(&menu, &l4x8(), &cfg(0.9, 0.0, 0.2)).unwrap().is_empty());
        assert!(matches!(
            compose_exact(&menu, &l4x8(), &cfg(0.9, -1.0, 0.2)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn relaxed_output_is_feasible() {
        let menu = reference_fixture();
        for budget in [0.0, 2.0, 40.0, 167.0, 300.0, 1000.0] {
            for acc in [0.9, 0.96, 0.97, 0.99] {
                let c = cfg(acc, budget, 0.2);
                let p = compose_relaxed(&menu, &l4x8(), &c).unwrap();
                assert!(check_constraints(&p, &menu, &l4x8(), &c).unwrap().is_feasible());
            }
        }
    }

    #[test]
    fn exact_prefers_single_useful_cache() {
        let m = vec![VariantMetrics {
            layer: 1,
            variant: 1,
            arch: ArchSpec::Fc { hidden: 4 },
            hit_rate: 0.5,
            accuracy: 1.0,
            lookup_ms: 1.0,
            memory_mb: 1.0,
            confusion: None,
        }];
        let p = LayerProfile::new(vec![5.0, 5.0]).unwrap();
        let plan = compose_exact(&m, &p, &cfg(0.9, 10.0, 0.2)).unwrap();
        assert_eq!(plan.choices(), &[Choice { layer: 1, variant: 1 }]);
    }

    #[test]
    fn exact_guard() {
        let mut m = Vec::new();
        for layer in 1..=8 {
            for variant in 1..=7 {
                m.push(VariantMetrics {
                    layer,
                    variant,
                    arch: ArchSpec::Fc { hidden: 4 },
                    hit_rate: 0.1,
                    accuracy: 1.0,
                    lookup_ms: 0.0,
                    memory_mb: 0.0,
                    confusion: None,
                });
            }
        }
        // 8^8 = 16.7M selections
        assert!(matches!(
            compose_exact(&m, &l4x8(), &cfg(0.9, 1.0, 0.2)),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn sweep_has_eleven_rows_and_picks_min() {
        let menu = reference_fixture();
        let s = sweep_alpha(&menu, &l4x8(), &cfg(0.96, 167.0, 0.2), &default_alpha_grid()).unwrap();
        assert_eq!(s.rows.len(), 11);
        assert!(s.rows.iter().all(|r| s.best_latency() <= r.expected_latency_ms));
    }
}
