use std::fmt::Write as _;

use cachenet::base::{gen_dataset, parse_dataset, train_base, write_dataset, write_profile, BaseModel, Dataset, Sample};
use cachenet::cache::{bundle, explore as explore_variants, parse_metrics, reference_fixture, write_metrics, CacheData, VariantMetrics};
use cachenet::compose::{
    check_constraints, compose_exact, compose_relaxed, default_alpha_grid, expected_latency, parse_plan, plan_accuracy,
    plan_memory, sweep_alpha, write_plan, Alpha, ComposerConfig, PlanReport, SelectionPlan,
};
use cachenet::config::SimMode;
use cachenet::nn::checkpoint;
use cachenet::planner::{
    monte_carlo, parse_dag, query_seed, run_query, traffic_dag, write_audit, CacheHitLatency, FixedLatency,
    LatencyOracle, QueryDag,
};
use cachenet::sim::{
    check_timing, gen_workload, run_adaptation, simulate_profile, summarize, write_latency_cdf, write_summary,
    write_timeline, write_trace, AdaptationRun, Deployment, RequestTrace, WorkloadSpec,
};
use cachenet::Error;

use crate::{Ctx, Failure, Fixture, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_MISSING};

const DATASET: &str = "dataset.csv";
const BASE: &str = "base.ckpt";
const PROFILE: &str = "profile.toml";
const METRICS: &str = "metrics.tsv";
const CACHES: &str = "caches.bin";
const PLAN: &str = "plan.toml";

fn header(ctx: &Ctx, kind: &str) -> String {
    format!(
        "# cachenet-{kind} v1\n# config-hash={} tool-version={}\n",
        ctx.out.prov.config_hash, ctx.out.prov.tool_version
    )
}

/// Unreadable artifacts count as missing.
fn artifact<T>(ctx: &Ctx, name: &str, r: cachenet::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::new(EXIT_MISSING, format!("{}: {e}", ctx.out.path(name).display())))
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset, Failure> {
    artifact(ctx, DATASET, parse_dataset(&ctx.out.read_text(DATASET, "prepare")?))
}

fn load_base(ctx: &Ctx) -> Result<BaseModel, Failure> {
    let ckpt = checkpoint::decode(&ctx.out.read(BASE, "prepare")?).map_err(Error::from);
    artifact(ctx, BASE, ckpt.and_then(|c| BaseModel::from_network(c.network)))
}

pub fn prepare(ctx: &mut Ctx) -> Result<(), Failure> {
    let cfg = ctx.cfg.clone();
    let ds = gen_dataset(&cfg.dataset)?;
    let base = train_base(&cfg.base, &ds, &cfg.base_training)?;
    let prov = ctx.out.prov.clone();
    ctx.out.write(DATASET, write_dataset(&ds, Some(&prov)))?;
    ctx.out.write(BASE, checkpoint::encode(base.network(), &ctx.out.binary_meta()))?;
    ctx.out.write(PROFILE, write_profile(&cfg.profile, Some(&prov)))?;
    ctx.out.finish()?;
    println!(
        "prepared {} samples, {}-block base model (test accuracy {:.3}), profile total {} ms",
        ds.len(),
        base.blocks(),
        base.test_accuracy,
        cfg.profile.total()
    );
    Ok(())
}

pub fn explore(ctx: &mut Ctx, fixture: Option<Fixture>) -> Result<(), Failure> {
    let prov = ctx.out.prov.clone();
    let metrics = match fixture {
        Some(Fixture::Reference) => reference_fixture(),
        None => {
            let cfg = ctx.cfg.clone();
            let ds = load_dataset(ctx)?;
            let base = load_base(ctx)?;
            let data = CacheData::build(&base, &ds.validation, cfg.explore.measure_fraction, cfg.explore_seed())?;
            let found = explore_variants(&base, &data, &cfg.explore, cfg.explore_seed())?;
            ctx.out.write(CACHES, bundle::encode(&found.variants, &ctx.out.binary_meta()))?;
            found.metrics
        }
    };
    ctx.out.write(METRICS, write_metrics(&metrics, Some(&prov)))?;
    ctx.out.finish()?;
    println!("measured {} cache variants", metrics.len());
    Ok(())
}

fn load_metrics(ctx: &Ctx, fixture: Option<Fixture>) -> Result<Vec<VariantMetrics>, Failure> {
    match fixture {
        Some(Fixture::Reference) => Ok(reference_fixture()),
        None => artifact(ctx, METRICS, parse_metrics(&ctx.out.read_text(METRICS, "explore")?)),
    }
}

fn plan_label(plan: &SelectionPlan) -> String {
    let parts: Vec<String> = plan
        .choices()
        .iter()
        .map(|c| format!("{}@{}", c.variant, c.layer))
        .collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(" ")
    }
}

pub fn compose(ctx: &mut Ctx, fixture: Option<Fixture>) -> Result<(), Failure> {
    let cfg = ctx.cfg.clone();
    let metrics = load_metrics(ctx, fixture)?;
    let profile = &cfg.profile;

    // Relaxed solver at every grid point, kept even when some are infeasible.
    let mut sweep = header(ctx, "alpha-sweep");
    sweep.push_str("alpha,expected_latency_ms,plan_accuracy,memory_mb,feasible,plan\n");
    for alpha in default_alpha_grid() {
        let point = ComposerConfig {
            alpha: Alpha::Fixed(alpha),
            ..cfg.composer.clone()
        };
        let plan = compose_relaxed(&metrics, profile, &point)?;
        let verdict = check_constraints(&plan, &metrics, profile, &point)?;
        let _ = writeln!(
            sweep,
            "{alpha},{},{},{},{},{}",
            expected_latency(&plan, &metrics, profile)?,
            plan_accuracy(&plan, &metrics)?,
            plan_memory(&plan, &metrics)?,
            verdict.is_feasible(),
            plan_label(&plan)
        );
    }
    ctx.out.write("alpha_sweep.csv", sweep)?;

    let (plan, alpha) = match cfg.composer.alpha {
        Alpha::Fixed(a) => (compose_relaxed(&metrics, profile, &cfg.composer)?, a),
        Alpha::Sweep => {
            let s = sweep_alpha(&metrics, profile, &cfg.composer, &default_alpha_grid())?;
            (s.best_plan().clone(), s.best_alpha())
        }
    };
    let verdict = check_constraints(&plan, &metrics, profile, &cfg.composer)?;
    let relaxed_latency = expected_latency(&plan, &metrics, profile)?;

    let mut report = header(ctx, "compose-report");
    let _ = writeln!(report, "alpha = {alpha}");
    let _ = writeln!(report, "plan = \"{}\"", plan_label(&plan));
    let _ = writeln!(report, "expected_latency_ms = {relaxed_latency}");
    let _ = writeln!(report, "plan_accuracy = {}", plan_accuracy(&plan, &metrics)?);
    let _ = writeln!(report, "memory_mb = {}", plan_memory(&plan, &metrics)?);
    let _ = writeln!(report, "memory_budget_mb = {}", cfg.composer.memory_budget_mb);
    let _ = writeln!(report, "feasible = {}", verdict.is_feasible());
    let violations: Vec<String> = verdict.violations.iter().map(|v| format!("{:?}", v.to_string())).collect();
    let _ = writeln!(report, "violations = [{}]", violations.join(", "));
    report.push_str("\n[exact]\n");
    match compose_exact(&metrics, profile, &cfg.composer) {
        Ok(exact) => {
            let exact_latency = expected_latency(&exact, &metrics, profile)?;
            let _ = writeln!(report, "status = \"solved\"");
            let _ = writeln!(report, "plan = \"{}\"", plan_label(&exact));
            let _ = writeln!(report, "expected_latency_ms = {exact_latency}");
            let _ = writeln!(report, "gap_ms = {}", relaxed_latency - exact_latency);
            let _ = writeln!(report, "gap_ratio = {}", relaxed_latency / exact_latency - 1.0);
        }
        Err(Error::TooLarge { combinations, .. }) => {
            let _ = writeln!(report, "status = \"skipped\"");
            let _ = writeln!(report, "combinations = {combinations}");
        }
        Err(e) => return Err(e.into()),
    }
    ctx.out.write("compose_report.toml", report)?;

    if !verdict.is_feasible() {
        ctx.out.finish()?;
        let reasons: Vec<String> = verdict.violations.iter().map(ToString::to_string).collect();
        return Err(Failure::new(EXIT_INFEASIBLE, format!("composed plan is infeasible: {}", reasons.join("; "))));
    }
    let built = PlanReport::build(&plan, &metrics, profile, Some(alpha))?;
    let prov = ctx.out.prov.clone();
    ctx.out.write(PLAN, write_plan(&built, Some(&prov)))?;
    ctx.out.finish()?;
    println!(
        "plan {} : expected latency {:.3} ms of {} ms, accuracy {:.4}, memory {:.2} MB",
        plan_label(&plan),
        built.expected_latency_ms,
        built.total_latency_ms,
        built.plan_accuracy,
        built.memory_mb
    );
    Ok(())
}

fn write_run(ctx: &mut Ctx, name: &str, traces: &[RequestTrace], timeline: Option<&AdaptationRun>) -> Result<(), Failure> {
    let prov = ctx.out.prov.clone();
    let summary = summarize(traces, ctx.cfg.profile.total())?;
    ctx.out.write(&format!("{name}_trace.csv"), write_trace(traces, Some(&prov)))?;
    ctx.out.write(&format!("{name}_summary.toml"), write_summary(&summary, Some(&prov)))?;
    ctx.out.write(&format!("{name}_latency_cdf.csv"), write_latency_cdf(traces, Some(&prov)))?;
    if let Some(run) = timeline {
        ctx.out.write(&format!("{name}_timeline.csv"), write_timeline(&run.timeline, Some(&prov)))?;
    }
    println!(
        "{name}: {} requests, avg latency {:.3} ms (full {} ms), hit rate {:.3}, agreement {:.4}",
        summary.requests, summary.avg_latency_ms, summary.full_latency_ms, summary.hit_rate, summary.agreement
    );
    Ok(())
}

pub fn simulate(ctx: &mut Ctx, adapt: bool) -> Result<(), Failure> {
    let cfg = ctx.cfg.clone();
    let plan = artifact(ctx, PLAN, parse_plan(&ctx.out.read_text(PLAN, "compose")?))?;
    check_timing(&plan, &cfg.profile)?;
    match cfg.simulation.mode {
        SimMode::Profile => {
            if adapt {
                return Err(Failure::new(EXIT_CONFIG, "adaptation needs simulation.mode = \"model\""));
            }
            let n = cfg.simulation.profile_requests;
            let w = &cfg.simulation.workload;
            let spec = WorkloadSpec {
                duration_min: (n as f64 + 0.5) / (w.requests_per_second * 60.0),
                ..w.clone()
            };
            let pool: Vec<Sample> = (0..w.num_classes)
                .map(|label| Sample {
                    label,
                    input: Vec::new(),
                })
                .collect();
            let mut stream = gen_workload(&spec, &pool)?;
            stream.truncate(n);
            let traces = simulate_profile(&plan, &cfg.profile, &stream, w.num_classes, cfg.profile_sim_seed())?;
            write_run(ctx, "profile", &traces, None)?;
        }
        SimMode::Model => {
            let ds = load_dataset(ctx)?;
            let base = load_base(ctx)?;
            let variants = if plan.caches.is_empty() {
                Vec::new()
            } else {
                artifact(ctx, CACHES, bundle::decode(&ctx.out.read(CACHES, "explore")?))?.variants
            };
            let deployment = Deployment::new(&plan, &variants, &cfg.profile)?;
            let pool = if ds.test.is_empty() { &ds.validation } else { &ds.test };
            let stream = gen_workload(&cfg.simulation.workload, pool)?;
            let train = &cfg.explore.train;
            let adaptation = &cfg.simulation.adaptation;
            let fixed = run_adaptation(&base, &cfg.profile, &deployment, &stream, &[], train, adaptation, false)?;
            write_run(ctx, "static", &fixed.traces, Some(&fixed))?;
            if adapt {
                let original = CacheData::build(&base, &ds.validation, cfg.explore.measure_fraction, cfg.explore_seed())?.train;
                let live = run_adaptation(&base, &cfg.profile, &deployment, &stream, &original, train, adaptation, true)?;
                write_run(ctx, "adaptive", &live.traces, Some(&live))?;
                let mut cmp = header(ctx, "adaptation-comparison");
                cmp.push_str("interval,start_min,static_hit_rate,adaptive_hit_rate,static_agreement,adaptive_agreement\n");
                for (s, a) in fixed.timeline.iter().zip(&live.timeline) {
                    let _ = writeln!(
                        cmp,
                        "{},{},{},{},{},{}",
                        s.interval, s.start_min, s.hit_rate, a.hit_rate, s.agreement, a.agreement
                    );
                }
                ctx.out.write("adaptation_comparison.csv", cmp)?;
                let mut events = header(ctx, "retrain-events");
                events.push_str("at_min,window_samples,mixed_samples,swapped,failures\n");
                for e in &live.events {
                    let swapped: Vec<String> = e.swapped.iter().map(|(l, v)| format!("{v}@{l}")).collect();
                    let _ = writeln!(
                        events,
                        "{},{},{},{},{}",
                        e.at_min,
                        e.window_samples,
                        e.mixed_samples,
                        swapped.join(" "),
                        e.failures.len()
                    );
                }
                ctx.out.write("retrain_events.csv", events)?;
            }
        }
    }
    ctx.out.finish()
}

fn load_dag(ctx: &Ctx) -> Result<QueryDag, Failure> {
    match &ctx.cfg.planner.dag {
        None => Ok(traffic_dag()),
        Some(rel) => {
            let path = ctx.config_dir.join(rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::new(EXIT_MISSING, format!("{}: {e}", path.display())))?;
            parse_dag(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
        }
    }
}

pub fn plan(ctx: &mut Ctx, replan: bool) -> Result<(), Failure> {
    let cfg = ctx.cfg.planner.clone();
    let dag = load_dag(ctx)?;
    let oracle: Box<dyn LatencyOracle> = match &cfg.cache_node {
        Some(name) => Box::new(CacheHitLatency {
            node: dag.index_of(name)?,
            hit_probability: cfg.hit_probability,
            hit_latency_ms: cfg.hit_latency_ms,
        }),
        None => Box::new(FixedLatency),
    };
    let seed = ctx.cfg.planner_seed();
    let mut sweep = header(ctx, "slo-sweep");
    sweep.push_str("slo_ms,replan,queries,mean_accuracy,mean_latency_ms,slo_violations,slo_risk_queries\n");
    let mut audit_rows = Vec::new();
    for slo in cfg.slo_grid() {
        for mode in [false, true] {
            let s = monte_carlo(&dag, slo, cfg.policy, oracle.as_ref(), mode, cfg.queries, seed)?;
            let _ = writeln!(
                sweep,
                "{},{},{},{},{},{},{}",
                s.slo_ms, s.replan, s.queries, s.mean_accuracy, s.mean_latency_ms, s.slo_violations, s.slo_risk_queries
            );
            println!(
                "SLO {slo} ms, replan {}: accuracy {:.4}, latency {:.2} ms, {} at risk",
                if mode { "on " } else { "off" },
                s.mean_accuracy,
                s.mean_latency_ms,
                s.slo_risk_queries
            );
        }
        for q in 0..cfg.queries {
            let o = run_query(&dag, slo, cfg.policy, oracle.as_ref(), replan, query_seed(seed, q))?;
            audit_rows.push((q, slo, replan, o));
        }
    }
    ctx.out.write("slo_sweep.csv", sweep)?;
    let prov = ctx.out.prov.clone();
    ctx.out.write("audit.csv", write_audit(&dag, &audit_rows, Some(&prov)))?;
    ctx.out.finish()
}
