//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::time::{Duration, Instant};

use maas_core::api::{ClaimDoc, RequestDoc};
use maas_core::bridge::sim::{CallOp, ChangeKind};
use maas_core::bridge::{BridgePlugin, Delay, FaultRule, LatencyModel, Profile, SimulatedCloud};
use maas_core::claim_controller::ClaimController;
use maas_core::model::{
    diff_configurations, indicators_of, probes_of, ChangeSet, ConfigKey, EnvType, Indicator, MonitoringUnit, Operator,
    Probe, ProbeId, Target, UnitConfiguration, UnitId, UnitState, UnitStrategy,
};
use maas_core::testkit::{conf, pc, probe};
use maas_core::unit_controller::UnitController;
use maas_harness::runner::{generated_probe, Runner, Settings, TickSummary, PLATFORM};
use maas_harness::{run_scenario, RunOptions, ScenarioScript};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("running example fidelity", running_example),
        ("hard-error recovery", hard_error_recovery),
        ("soft-error retry ladder", retry_ladder),
        ("sharing and scaling", scaling),
        ("convergence and quiescence", convergence),
        ("diff oracle equivalence", diff_oracle),
        ("mutual exclusion across replicas", mutual_exclusion),
        ("work bounds", work_bounds),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} [{secs:.2}s]", n + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {reason} [{secs:.2}s]", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn scenario(name: &str) -> Result<ScenarioScript, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    ScenarioScript::load(&path).map_err(|e| e.to_string())
}

fn runner_for(script: &ScenarioScript) -> Runner {
    let mut s = Settings::new(script.strategy, script.profile, script.seed);
    s.retry_threshold = script.retry_threshold;
    s.replicas = script.replicas;
    Runner::new(s)
}

fn key(p: &str, names: &[&str], op: &str) -> ConfigKey {
    ConfigKey {
        probe: ProbeId::new(p),
        indicators: names.iter().map(|n| Indicator::new(n).unwrap()).collect(),
        operator: Operator::new(op),
    }
}

fn keys(c: &UnitConfiguration) -> BTreeSet<ConfigKey> {
    c.iter().map(|pc| pc.key()).collect()
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn err<E: ToString>(e: E) -> String {
    e.to_string()
}

fn unit_running(r: &Runner, probe: &str) -> Result<MonitoringUnit, String> {
    let p = ProbeId::new(probe);
    r.api()
        .list_units()
        .into_iter()
        .find(|u| probes_of(&u.desired_conf).contains(&p) || probes_of(&u.current_conf).contains(&p))
        .ok_or_else(|| format!("no unit for {probe}"))
}

// ---- 1 -------------------------------------------------------------------

fn running_example() -> Outcome {
    const NET: &str = "NETWORK_CONSUMPTION";
    const CPU: &str = "CPU_CONSUMPTION";
    const SESS: &str = "USER_SESSION_DATA";
    let started = Instant::now();
    let script = scenario("running-example.json")?;
    ensure!(
        script.strategy == UnitStrategy::SingleProbe,
        "script must run SINGLE_PROBE"
    );
    let steps = script.steps_for(None).map_err(err)?;
    let mut r = runner_for(&script);

    // Up to and including the settle after 2-more-kpis-conf.
    let split = steps
        .iter()
        .position(|s| matches!(s, maas_harness::Step::Submit { label: Some(l), .. } if l == "2-more-kpis-conf"))
        .ok_or("script lacks the 2-more-kpis-conf submission")?
        + 2;
    r.execute(&steps[..split]).map_err(err)?;
    let cpu = unit_running(&r, "p_cpu")?;
    let want: BTreeSet<ConfigKey> = [key("p_cpu", &[CPU], "op-B"), key("p_cpu", &[CPU], "op-A")].into();
    ensure!(
        keys(&cpu.desired_conf) == want,
        "cpu unit desired {:?}",
        keys(&cpu.desired_conf)
    );
    let log = r.sim().call_log();
    let deploys = |p: &str| {
        log.iter()
            .flat_map(|c| c.changes())
            .filter(|c| c.probe.as_str() == p && c.kind != ChangeKind::Drop)
            .count()
    };
    ensure!(
        deploys("p_cpu") == 1,
        "p_cpu deployed {} times, expected only the initial deploy",
        deploys("p_cpu")
    );
    let session = unit_running(&r, "p_session")?;
    ensure!(session.id != cpu.id, "session must get its own unit");
    ensure!(
        deploys("p_session") == 1,
        "p_session deployed {} times",
        deploys("p_session")
    );

    let net_id = unit_running(&r, "p_net")?.id;
    r.execute(&steps[split..]).map_err(err)?;
    ensure!(unit_running(&r, "p_net")?.id == net_id, "net unit was replaced");
    ensure!(unit_running(&r, "p_cpu")?.id == cpu.id, "cpu unit was replaced");
    let units = r.api().list_units();
    let op_b = Operator::new("op-B");
    ensure!(
        units
            .iter()
            .all(|u| !u.desired_conf.operators().contains(&op_b) && !u.current_conf.operators().contains(&op_b)),
        "op-B still has entries"
    );
    ensure!(unit_running(&r, "p_db").is_err(), "db-metrics unit still present");
    for (p, name) in [("p_net", NET), ("p_cpu", CPU), ("p_session", SESS)] {
        let u = unit_running(&r, p)?;
        let want: BTreeSet<ConfigKey> = [key(p, &[name], "op-A")].into();
        ensure!(
            keys(&u.current_conf) == want && keys(&u.desired_conf) == want,
            "{p} unit holds {:?}",
            keys(&u.current_conf)
        );
        ensure!(
            r.sim()
                .instance(&u.id)
                .is_some_and(|i| i.processes.contains_key(&ProbeId::new(p))),
            "{p} not running"
        );
    }
    ensure!(r.sim().stats().dismissals == 1, "expected one dismissal");

    let report = run_scenario(&script, &RunOptions::default()).map_err(err)?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{} scripted assertions and exact-state checks hold, {} ms",
        report.runs[0].assertions,
        elapsed.as_millis()
    ))
}

// ---- 2 -------------------------------------------------------------------

fn hard_error_recovery() -> Outcome {
    // VM style: one unit with both probes.
    let script = scenario("hard-error.json")?;
    ensure!(
        script.strategy == UnitStrategy::MultiProbe,
        "hard-error must run MULTI_PROBE"
    );
    let steps = script.steps_for(None).map_err(err)?;
    let settle_at = steps
        .iter()
        .position(|s| matches!(s, maas_harness::Step::Settle { .. }))
        .ok_or("no settle step")?;
    let mut r = runner_for(&script);
    r.execute(&steps[..settle_at]).map_err(err)?;
    let busy = r.settle(10)?;
    ensure!(busy <= 3, "needed {busy} ticks");
    r.execute(&steps[settle_at + 1..]).map_err(err)?;

    let log = r.sim().call_log();
    let shape: Vec<String> = log
        .iter()
        .map(|c| match &c.op {
            CallOp::DoChanges { changes } => {
                let parts: Vec<String> = changes
                    .iter()
                    .map(|ch| format!("{:?} {} {:?}", ch.kind, ch.probe, ch.outcome))
                    .collect();
                format!("DoChanges[{}]", parts.join(", "))
            }
            other => format!("{other:?}"),
        })
        .collect();
    let want = vec![
        "DoChanges[Add p_broken HardError, Add p_good Applied]".to_owned(),
        "Clean { ok: true }".to_owned(),
        "DoChanges[Add p_good Applied]".to_owned(),
    ];
    ensure!(shape == want, "call log {shape:?}");
    let stats = r.sim().stats();
    ensure!(stats.cleans == 1, "cleans {}", stats.cleans);
    let u = &r.api().list_units()[0];
    ensure!(u.state == UnitState::Stable, "unit is {:?}", u.state);
    let view = r.api().get_unit(&u.id).map_err(err)?;
    ensure!(
        view.blacklist == vec![key("p_broken", &["GC_PAUSES"], "op-A")],
        "blacklist {:?}",
        view.blacklist
    );
    let running: Vec<ProbeId> = r
        .sim()
        .instance(&u.id)
        .map(|i| i.processes.into_keys().collect())
        .unwrap_or_default();
    ensure!(running == vec![ProbeId::new("p_good")], "running {running:?}");

    // Container style: one unit per probe.
    let script = scenario("hard-error-container.json")?;
    ensure!(
        script.strategy == UnitStrategy::SingleProbe,
        "container variant must run SINGLE_PROBE"
    );
    let steps = script.steps_for(None).map_err(err)?;
    let mut r = runner_for(&script);
    r.execute(&steps[..settle_at]).map_err(err)?;
    let busy_c = r.settle(10)?;
    ensure!(busy_c <= 3, "container variant needed {busy_c} ticks");
    r.execute(&steps[settle_at + 1..]).map_err(err)?;
    let broken = unit_running(&r, "p_broken")?;
    let kinds: Vec<&str> = r
        .sim()
        .call_log()
        .into_iter()
        .filter(|c| c.unit == broken.id)
        .map(|c| match c.op {
            CallOp::DoChanges { .. } => "do_changes",
            CallOp::Clean { ok: true } => "clean",
            CallOp::Dismiss { .. } => "dismiss",
            _ => "other",
        })
        .collect();
    ensure!(
        kinds == ["do_changes", "clean", "dismiss"],
        "faulty unit calls {kinds:?}"
    );
    ensure!(
        r.sim().instance(&broken.id).is_none(),
        "faulty unit still has an instance"
    );
    let view = r.api().get_unit(&broken.id).map_err(err)?;
    ensure!(
        view.blacklist == vec![key("p_broken", &["GC_PAUSES"], "op-A")],
        "blacklist {:?}",
        view.blacklist
    );
    let good = unit_running(&r, "p_good")?;
    ensure!(good.state == UnitState::Stable, "working unit is {:?}", good.state);
    Ok(format!("VM recovered in {busy} ticks with one clean; container faulty unit cleaned, dismissed, blacklisted in {busy_c} ticks"))
}

// ---- 3 -------------------------------------------------------------------

fn retry_ladder() -> Outcome {
    let mut pairs = 0;
    for threshold in [1u32, 3, 5] {
        for k in 0..=threshold + 2 {
            for strategy in [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe] {
                let mut s = Settings::new(strategy, Profile::Zero, 0);
                s.retry_threshold = threshold;
                let mut r = Runner::new(s);
                r.sim().add_target(Target::new(PLATFORM, "t", EnvType::AccessibleVm));
                r.api()
                    .upload_probe(generated_probe("p_flaky", "FLAKY_0")?)
                    .map_err(err)?;
                if k > 0 {
                    r.api()
                        .inject_fault(FaultRule::soft("p_flaky-artifact", Some(k)))
                        .map_err(err)?;
                }
                r.submit(None, "op", "t", &strings(&["FLAKY_0"]))?;
                r.settle(threshold + 5)?;
                let attempts = |r: &Runner| {
                    r.sim()
                        .call_log()
                        .iter()
                        .flat_map(|c| c.changes().to_vec())
                        .filter(|c| c.probe.as_str() == "p_flaky")
                        .count() as u32
                };
                let u = r.api().list_units().pop().ok_or("no unit")?;
                let view = r.api().get_unit(&u.id).map_err(err)?;
                let running = r
                    .sim()
                    .instance(&u.id)
                    .is_some_and(|i| i.processes.contains_key(&ProbeId::new("p_flaky")));
                let ctx = format!("threshold {threshold}, k {k}, {strategy}");
                if k < threshold {
                    ensure!(attempts(&r) == k + 1, "{ctx}: {} attempts", attempts(&r));
                    ensure!(
                        view.blacklist.is_empty() && running && u.state == UnitState::Stable,
                        "{ctx}: not deployed"
                    );
                } else {
                    ensure!(attempts(&r) == threshold, "{ctx}: {} attempts", attempts(&r));
                    ensure!(
                        view.blacklist == vec![key("p_flaky", &["FLAKY_0"], "op")],
                        "{ctx}: blacklist {:?}",
                        view.blacklist
                    );
                    ensure!(!running, "{ctx}: blacklisted probe running");
                    for _ in 0..5 {
                        r.tick();
                    }
                    ensure!(attempts(&r) == threshold, "{ctx}: attempted again after blacklisting");
                }
                pairs += 1;
            }
        }
    }
    Ok(format!(
        "{pairs} (threshold, k, strategy) runs match k+1 / threshold attempts"
    ))
}

// ---- 4 -------------------------------------------------------------------

fn scaling() -> Outcome {
    let script = scenario("scaling.json")?;
    let values: Vec<i64> = script.sweep.as_ref().map(|s| s.values.clone()).unwrap_or_default();
    ensure!(values == [1, 5, 10, 20, 30], "sweep values {values:?}");
    let mut summary = Vec::new();
    for strategy in [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe] {
        let started = Instant::now();
        let report = run_scenario(
            &script,
            &RunOptions {
                strategy: Some(strategy),
                ..Default::default()
            },
        )
        .map_err(err)?;
        let elapsed = started.elapsed();
        ensure!(elapsed < Duration::from_secs(30), "{strategy}: sweep took {elapsed:?}");
        for run in &report.runs {
            let n = run.sweep_value.ok_or("missing sweep value")? as u64;
            let new = run
                .measures
                .iter()
                .find(|m| m.label == "new-indicators")
                .ok_or("no new-indicators measure")?;
            ensure!(
                new.deploys == n && new.bridge_op_count == n,
                "{strategy} N={n}: {} deploys, {} ops for new indicators",
                new.deploys,
                new.bridge_op_count
            );
            let sharing: Vec<_> = run
                .measures
                .iter()
                .filter(|m| m.label.starts_with("sharing-"))
                .collect();
            ensure!(
                sharing.len() as u64 == n,
                "{strategy} N={n}: {} sharing measures",
                sharing.len()
            );
            let deploys: u64 = sharing.iter().map(|m| m.deploys).sum();
            let zero: u64 = sharing.iter().map(|m| m.zero_op_reconciles).sum();
            ensure!(
                deploys == 1 && zero == n - 1,
                "{strategy} N={n}: sharing gave {deploys} deploys, {zero} zero-op reconciles"
            );
        }
        summary.push(format!("{strategy} {} ms", elapsed.as_millis()));
    }
    Ok(format!(
        "N new indicators = N deploys, N sharing operators = 1 deploy + N-1 zero-op ({})",
        summary.join(", ")
    ))
}

// ---- 5 -------------------------------------------------------------------

const INDICATORS: [&str; 6] = ["I0", "I1", "I2", "I3", "I4", "I5"];

/// Four single-indicator probes and one probe collecting I4 and I5, so
/// claims exercise adds, updates and drops.
fn seed_catalog(r: &Runner, targets: usize) -> Result<(), String> {
    for t in 0..targets {
        r.sim()
            .add_target(Target::new(PLATFORM, &format!("t{t}"), EnvType::Container));
    }
    for (i, name) in INDICATORS[..4].iter().enumerate() {
        r.api().upload_probe(probe(&format!("p{i}"), &[name])).map_err(err)?;
    }
    r.api().upload_probe(probe("p_pair", &["I4", "I5"])).map_err(err)?;
    Ok(())
}

fn random_indicators(rng: &mut ChaCha8Rng) -> Vec<String> {
    INDICATORS
        .iter()
        .filter(|_| rng.random_bool(0.4))
        .map(|s| s.to_string())
        .collect()
}

fn convergence() -> Outcome {
    let mut claims = 0;
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let strategy = if case % 2 == 0 {
            UnitStrategy::SingleProbe
        } else {
            UnitStrategy::MultiProbe
        };
        let mut r = Runner::new(Settings::new(strategy, Profile::Zero, case));
        let n_targets = rng.random_range(1..=3);
        let n_ops = rng.random_range(1..=4);
        seed_catalog(&r, n_targets)?;
        let mut last: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for c in 0..rng.random_range(1..=10) {
            let op = format!("op-{}", rng.random_range(0..n_ops));
            let t = format!("t{}", rng.random_range(0..n_targets));
            let set = random_indicators(&mut rng);
            r.submit(Some(&format!("c{c}")), &op, &t, &set)?;
            last.insert((op, t), set.into_iter().collect());
            claims += 1;
            for _ in 0..rng.random_range(0..=2) {
                r.tick();
            }
        }
        r.settle(50).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(r.is_converged(), "case {case}: not at fixpoint");
        let units = r.api().list_units();
        for u in &units {
            ensure!(
                u.current_conf == u.desired_conf,
                "case {case}: {} current differs from desired",
                u.id
            );
        }
        for ((op, t), want) in &last {
            let got: BTreeSet<String> = units
                .iter()
                .filter(|u| &u.target.platform_id == t)
                .flat_map(|u| u.desired_conf.iter())
                .filter(|pc| pc.operator.as_str() == op)
                .flat_map(|pc| pc.indicators.iter().map(|i| i.as_str().to_owned()))
                .collect();
            ensure!(
                &got == want,
                "case {case}: {op} on {t} holds {got:?}, last claim {want:?}"
            );
        }
        let calls = r.sim().call_count();
        for _ in 0..3 {
            ensure!(r.tick().is_idle(), "case {case}: work after fixpoint");
        }
        ensure!(
            r.sim().call_count() == calls,
            "case {case}: bridge called after fixpoint"
        );
    }
    Ok(format!("200/200 sequences ({claims} claims) reach a quiet fixpoint"))
}

// ---- 6 -------------------------------------------------------------------

type Summary = BTreeMap<ProbeId, (&'static str, BTreeSet<ConfigKey>)>;

fn summarize(cs: &ChangeSet) -> Summary {
    let mut out = Summary::new();
    for (kind, map) in [("add", &cs.to_add), ("update", &cs.to_update), ("drop", &cs.to_drop)] {
        for (p, change) in map {
            let prev = out.insert(p.clone(), (kind, change.entries.iter().map(|pc| pc.key()).collect()));
            assert!(prev.is_none(), "probe {p} in two change classes");
        }
    }
    out
}

/// Enumerates the probe universe and decides membership entry by entry.
fn oracle(current: &UnitConfiguration, desired: &UnitConfiguration, universe: &[Probe]) -> Summary {
    let mut out = Summary::new();
    for p in universe {
        let cur: Vec<ConfigKey> = current
            .iter()
            .filter(|pc| pc.probe.id == p.id)
            .map(|pc| pc.key())
            .collect();
        let des: Vec<ConfigKey> = desired
            .iter()
            .filter(|pc| pc.probe.id == p.id)
            .map(|pc| pc.key())
            .collect();
        let union = |ks: &[ConfigKey]| ks.iter().flat_map(|k| k.indicators.clone()).collect::<BTreeSet<_>>();
        let entry = match (cur.is_empty(), des.is_empty()) {
            (true, false) => Some(("add", des)),
            (false, true) => Some(("drop", cur)),
            (false, false) if union(&cur) != union(&des) => Some(("update", des)),
            _ => None,
        };
        if let Some((kind, ks)) = entry {
            out.insert(p.id.clone(), (kind, ks.into_iter().collect()));
        }
    }
    out
}

fn random_conf(rng: &mut ChaCha8Rng, probes: &[Probe], ops: usize) -> UnitConfiguration {
    let names = ["A", "B", "C", "D"];
    let mut entries = Vec::new();
    for p in probes {
        for o in 0..ops {
            if rng.random_bool(0.4) {
                let mut sub: Vec<&str> = names.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                if sub.is_empty() {
                    sub.push(names[rng.random_range(0..names.len())]);
                }
                entries.push(pc(p, &sub, &format!("op{o}")));
            }
        }
    }
    conf(entries)
}

fn diff_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut classes = BTreeMap::<&str, usize>::new();
    for case in 0..1000 {
        let n_probes = rng.random_range(1..=5);
        let ops = rng.random_range(1..=3);
        let probes: Vec<Probe> = (0..n_probes)
            .map(|i| probe(&format!("p{i}"), &["A", "B", "C", "D"]))
            .collect();
        let current = random_conf(&mut rng, &probes, ops);
        // Every third pair is a small edit of the current configuration so
        // unchanged and shared probes are common.
        let desired = if case % 3 == 0 {
            let mut d = current.clone();
            if let Some(pc) = current.iter().nth(rng.random_range(0..current.len().max(1))) {
                d.remove(pc);
            }
            d.union(&random_conf(&mut rng, &probes[..1], ops))
        } else {
            random_conf(&mut rng, &probes, ops)
        };
        let got = summarize(&diff_configurations(&current, &desired));
        let want = oracle(&current, &desired, &probes);
        ensure!(got == want, "case {case}: diff {got:?} oracle {want:?}");
        for p in &probes {
            let class = match want.get(&p.id) {
                Some((k, _)) => *k,
                None if indicators_of(&current, &p.id).is_empty() => "absent",
                None => "unchanged",
            };
            *classes.entry(class).or_default() += 1;
        }
    }
    Ok(format!("1000/1000 pairs agree; probe outcomes {classes:?}"))
}

// ---- 7 -------------------------------------------------------------------

fn quiescent(api: &maas_core::api::ApiService) -> bool {
    api.pending_claims().is_empty()
        && api.list_divergent_units().is_empty()
        && api
            .list_units()
            .iter()
            .all(|u| api.lease_holder(&u.id).is_none() && u.current_conf == u.desired_conf)
}

fn mutual_exclusion() -> Outcome {
    let names: Vec<String> = (0..10).map(|i| format!("K_{i}")).collect();
    let mut resubmitted = 0;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + run);
        let mut s = Settings::new(UnitStrategy::SingleProbe, Profile::Container, run);
        s.replicas = 3;
        let mut r = Runner::new(s);
        r.sim().add_target(Target::new(PLATFORM, "t", EnvType::Container));
        for (i, name) in names.iter().enumerate() {
            r.api()
                .upload_probe(generated_probe(&format!("p{i}"), name)?)
                .map_err(err)?;
        }
        let mut model = r.sim().latency_model();
        model.realtime_scale = 0.0002;
        r.sim().set_latency_model(model);
        r.submit(Some("all"), "op", "t", &names)?;
        let api = r.api().clone();
        let claims = ClaimController::new(api.clone());
        claims.process_pending();
        ensure!(
            api.list_divergent_units().len() == 10,
            "run {run}: expected 10 divergent units"
        );

        let shutdown = AtomicBool::new(false);
        let converged = std::thread::scope(|scope| {
            for i in 0..3 {
                let c = UnitController::new(api.clone(), format!("uc-{i}"));
                let stop = &shutdown;
                scope.spawn(move || c.run_control_loop(Duration::from_millis(2), stop));
            }
            if rng.random_bool(0.5) {
                std::thread::sleep(Duration::from_micros(rng.random_range(0..2_000)));
                let keep: Vec<String> = names.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
                let op = Operator::new("op");
                let doc = RequestDoc {
                    operator: op.clone(),
                    claims: vec![ClaimDoc {
                        indicators: keep.iter().map(|n| Indicator::new(n).unwrap()).collect(),
                        target: maas_core::model::TargetKey::new(PLATFORM, "t"),
                    }],
                };
                api.submit_monitoring_request(&op, &doc).expect("resubmission accepted");
                claims.process_pending();
                resubmitted += 1;
            }
            let deadline = Instant::now() + Duration::from_secs(20);
            let mut ok = false;
            while Instant::now() < deadline {
                if quiescent(&api) {
                    ok = true;
                    break;
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            shutdown.store(true, Ordering::Relaxed);
            ok
        });
        let stats = r.sim().stats();
        ensure!(
            stats.reentrancy_violations == 0,
            "run {run}: {} concurrent actuations",
            stats.reentrancy_violations
        );
        ensure!(converged && quiescent(&api), "run {run}: units did not converge");
    }

    // Negative control: unsynchronised callers on one unit trip the guard.
    let sim = SimulatedCloud::new(PLATFORM);
    sim.set_latency_model(LatencyModel {
        apply: Delay::Fixed { ms: 1_000 },
        realtime_scale: 0.02,
        ..LatencyModel::default()
    });
    let p = probe("p", &["K"]);
    let unit = MonitoringUnit::empty(
        UnitId::new("mu-x"),
        Target::new(PLATFORM, "t", EnvType::AccessibleVm),
        PLATFORM.into(),
        UnitStrategy::MultiProbe,
    );
    let changes = diff_configurations(&UnitConfiguration::new(), &conf([pc(&p, &["K"], "op")]));
    let barrier = Barrier::new(2);
    std::thread::scope(|scope| {
        for _ in 0..2 {
            scope.spawn(|| {
                barrier.wait();
                sim.do_changes(&unit, &changes).expect("simulated call");
            });
        }
    });
    let detected = sim.stats().reentrancy_violations;
    ensure!(detected >= 1, "guard missed two concurrent callers");
    Ok(format!(
        "100/100 runs with 3 replicas converge without overlap ({resubmitted} with mid-run resubmission); guard flags unsynchronised callers"
    ))
}

// ---- 8 -------------------------------------------------------------------

#[derive(Default)]
struct Tally {
    claims: usize,
    reconciles: usize,
    error_routines: usize,
}

fn checked_tick(r: &mut Runner, tally: &mut Tally) -> Result<TickSummary, String> {
    let before = r.api().store_metrics();
    let t = r.tick();
    let after = r.api().store_metrics();
    ensure!(t.claims.is_empty(), "claims processed inside the unit check");
    let mut ledger = 0u64;
    for rep in &t.reconciles {
        let calls: Vec<_> = t
            .calls
            .iter()
            .filter(|c| c.unit == rep.unit_id && matches!(c.op, CallOp::DoChanges { .. }))
            .collect();
        if rep.change_set.is_empty() {
            ensure!(
                calls.is_empty(),
                "{}: bridge called for an empty change set",
                rep.unit_id
            );
        } else {
            ensure!(calls.len() == 1, "{}: {} do_changes calls", rep.unit_id, calls.len());
            let sent = calls[0].changes().len();
            ensure!(
                sent == rep.change_set.len(),
                "{}: {sent} bridge changes for |change set| {}",
                rep.unit_id,
                rep.change_set.len()
            );
            tally.reconciles += 1;
        }
        let errors = rep
            .bridge_result
            .as_ref()
            .map_or(0, |b| b.soft_errors.len() + b.hard_errors.len());
        ensure!(
            rep.ledger_writes as usize == errors,
            "{}: {} table writes for {errors} errors",
            rep.unit_id,
            rep.ledger_writes
        );
        if errors > 0 {
            tally.error_routines += 1;
        }
        ledger += u64::from(rep.ledger_writes);
    }
    let written = after.ledger_writes() - before.ledger_writes();
    ensure!(written == ledger, "store saw {written} table writes, reports {ledger}");
    Ok(t)
}

fn work_bounds() -> Outcome {
    let mut tally = Tally::default();
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + case);
        let strategy = if case % 2 == 0 {
            UnitStrategy::SingleProbe
        } else {
            UnitStrategy::MultiProbe
        };
        let mut r = Runner::new(Settings::new(strategy, Profile::Zero, case));
        seed_catalog(&r, 2)?;
        let artifacts = [
            "p0-artifact",
            "p1-artifact",
            "p2-artifact",
            "p3-artifact",
            "p_pair-artifact",
        ];
        if rng.random_bool(0.7) {
            let a = artifacts[rng.random_range(0..artifacts.len())];
            r.api()
                .inject_fault(FaultRule::soft(a, Some(rng.random_range(1..=4))))
                .map_err(err)?;
        }
        if rng.random_bool(0.5) {
            let a = artifacts[rng.random_range(0..artifacts.len())];
            r.api()
                .inject_fault(FaultRule::hard(a, Some(rng.random_range(1..=2))))
                .map_err(err)?;
        }
        let claims = ClaimController::new(r.api().clone());
        for c in 0..rng.random_range(1..=8) {
            let op = format!("op-{}", rng.random_range(0..3));
            let t = format!("t{}", rng.random_range(0..2));
            let set = random_indicators(&mut rng);
            r.submit(Some(&format!("c{c}")), &op, &t, &set)?;
            let before = r.api().store_metrics();
            let reports = claims.process_pending();
            let after = r.api().store_metrics();
            ensure!(reports.len() == 1, "case {case}: {} claims processed", reports.len());
            let rep = &reports[0];
            let commits = after.desired_commits - before.desired_commits;
            ensure!(
                commits <= 1 + u64::from(rep.probe_configs),
                "case {case}: {commits} store writes for |P| = {}",
                rep.probe_configs
            );
            ensure!(
                after.desired_writes - before.desired_writes == u64::from(rep.desired_writes),
                "case {case}: unreported writes"
            );
            tally.claims += 1;
            for _ in 0..rng.random_range(0..=3) {
                checked_tick(&mut r, &mut tally).map_err(|e| format!("case {case}: {e}"))?;
            }
        }
        let mut idle = false;
        for _ in 0..40 {
            if checked_tick(&mut r, &mut tally)
                .map_err(|e| format!("case {case}: {e}"))?
                .is_idle()
            {
                idle = true;
                break;
            }
        }
        ensure!(idle, "case {case}: never settled");
    }
    Ok(format!(
        "{} claims within 1+|P| writes, {} actuations with |changes| = |change set|, {} error routines with writes = |soft|+|hard|",
        tally.claims, tally.reconciles, tally.error_routines
    ))
}
