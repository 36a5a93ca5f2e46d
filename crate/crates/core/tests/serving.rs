use cachenet::base::{gen_dataset, train_base, BaseModel, Dataset, LayerProfile};
use cachenet::cache::{build_variant, explore, ArchSpec, CacheData, CacheVariant, ExploreConfig, VariantMetrics};
use cachenet::compose::{Choice, PlanReport, SelectionPlan};
use cachenet::config::ExperimentConfig;
use cachenet::sim::{gen_workload, run_adaptation, simulate_model, summarize, AdaptationConfig, Deployment, WorkloadSpec};

struct Setup {
    ds: Dataset,
    base: BaseModel,
    data: CacheData,
    profile: LayerProfile,
}

fn setup() -> Setup {
    let cfg = ExperimentConfig::default();
    let ds = gen_dataset(&cfg.dataset).unwrap();
    let base = train_base(&cfg.base, &ds, &cfg.base_training).unwrap();
    let data = CacheData::build(&base, &ds.validation, 0.2, 1).unwrap();
    Setup {
        ds,
        base,
        data,
        profile: LayerProfile::new(vec![4.0; 8]).unwrap(),
    }
}

fn single_cache(s: &Setup, layer: usize, variants: &[CacheVariant], metrics: &[VariantMetrics]) -> Deployment {
    let plan = SelectionPlan::new(vec![Choice { layer, variant: 1 }]);
    let report = PlanReport::build(&plan, metrics, &s.profile, None).unwrap();
    Deployment::new(&report, variants, &s.profile).unwrap()
}

fn trained_cache(s: &Setup, layer: usize) -> Deployment {
    let ec = ExploreConfig {
        layers: vec![layer],
        menu: vec![ArchSpec::Fc { hidden: 1024 }],
        ..ExploreConfig::default()
    };
    let ex = explore(&s.base, &s.data, &ec, 1).unwrap();
    single_cache(s, layer, &ex.variants, &ex.metrics)
}

#[test]
fn forced_hits_at_block_three_take_thirteen_ms() {
    let s = setup();
    let mut v = build_variant(3, 1, ArchSpec::Fc { hidden: 16 }, s.base.tap_dims()[2], 10, 4).unwrap();
    v.threshold = 0.0;
    let m = VariantMetrics {
        layer: 3,
        variant: 1,
        arch: v.arch,
        hit_rate: 1.0,
        accuracy: 1.0,
        lookup_ms: 1.0,
        memory_mb: 0.1,
        confusion: None,
    };
    let dep = single_cache(&s, 3, &[v], &[m]);
    let stream = gen_workload(&WorkloadSpec { duration_min: 2.0, ..WorkloadSpec::default() }, &s.ds.test).unwrap();
    let traces = simulate_model(&s.base, &s.profile, &dep, &stream).unwrap();
    assert_eq!(traces.len(), 120);
    assert!(traces.iter().all(|t| t.latency_ms == 13.0 && t.hit_layer == Some(3)));
}

#[test]
fn empty_deployment_serves_the_base_model_at_full_latency() {
    let s = setup();
    let stream = gen_workload(&WorkloadSpec { duration_min: 2.0, ..WorkloadSpec::default() }, &s.ds.test).unwrap();
    let traces = simulate_model(&s.base, &s.profile, &Deployment::empty(), &stream).unwrap();
    let sum = summarize(&traces, s.profile.total()).unwrap();
    assert_eq!(sum.max_latency_ms, 32.0);
    assert_eq!(sum.avg_latency_ms, 32.0);
    assert_eq!(sum.agreement, 1.0);
    assert_eq!(sum.hit_rate, 0.0);
}

#[test]
fn misses_cost_the_full_network_and_errors_are_false_positive_hits() {
    let s = setup();
    let dep = trained_cache(&s, 4);
    let stream = gen_workload(&WorkloadSpec { duration_min: 10.0, ..WorkloadSpec::default() }, &s.ds.test).unwrap();
    let traces = simulate_model(&s.base, &s.profile, &dep, &stream).unwrap();
    let sum = summarize(&traces, s.profile.total()).unwrap();
    for t in &traces {
        assert!(t.latency_ms <= 32.0);
        if t.hit_layer.is_none() {
            assert_eq!(t.latency_ms, 32.0);
            assert_eq!(t.served_prediction, t.base_prediction);
        }
    }
    let disagreements = traces.iter().filter(|t| t.served_prediction != t.base_prediction).count();
    assert_eq!(disagreements, sum.false_positive_hits);
}

#[test]
fn stationary_traffic_keeps_the_adapted_hit_rate_near_static() {
    let s = setup();
    let dep = trained_cache(&s, 6);
    let ws = WorkloadSpec {
        zipf_alpha: 1e-9,
        duration_min: 60.0,
        seed: 3,
        ..WorkloadSpec::default()
    };
    let stream = gen_workload(&ws, &s.ds.validation).unwrap();
    let cfg = AdaptationConfig {
        seed: 3,
        ..AdaptationConfig::default()
    };
    let train = &ExploreConfig::default().train;
    let on = run_adaptation(&s.base, &s.profile, &dep, &stream, &s.data.train, train, &cfg, true).unwrap();
    let off = run_adaptation(&s.base, &s.profile, &dep, &stream, &s.data.train, train, &cfg, false).unwrap();
    assert!(!on.events.is_empty());
    assert!(off.events.is_empty());
    for (a, b) in on.timeline.iter().zip(&off.timeline) {
        assert!((a.hit_rate - b.hit_rate).abs() <= 0.05, "interval {}: {} vs {}", a.interval, a.hit_rate, b.hit_rate);
    }
}

#[test]
fn hit_rate_recovers_within_two_intervals_of_a_shift() {
    let s = setup();
    let dep = trained_cache(&s, 2);
    let train = &ExploreConfig::default().train;
    let (mut drops, mut recovered) = (0, 0);
    for seed in 0..4 {
        let ws = WorkloadSpec {
            zipf_alpha: 1.5,
            requests_per_second: 2.0,
            duration_min: 60.0,
            seed,
            ..WorkloadSpec::default()
        };
        let stream = gen_workload(&ws, &s.ds.test).unwrap();
        let cfg = AdaptationConfig {
            retrain_interval_min: 5.0,
            seed,
            ..AdaptationConfig::default()
        };
        let run = run_adaptation(&s.base, &s.profile, &dep, &stream, &s.data.train, train, &cfg, true).unwrap();
        let h: Vec<f64> = run.timeline.iter().map(|r| r.hit_rate).collect();
        let per = (ws.rotation_period_min / cfg.retrain_interval_min) as usize;
        for k in (per..h.len() - 2).step_by(per) {
            if h[k] < h[k - 1] {
                drops += 1;
                if h[k + 1].max(h[k + 2]) > h[k] {
                    recovered += 1;
                }
            }
        }
    }
    assert!(drops >= 1, "no shift lowered the hit rate");
    assert!(2 * recovered > drops, "{recovered}/{drops} drops recovered");
}
