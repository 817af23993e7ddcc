use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use maas_core::api::{ClaimView, UnitView};
use maas_core::model::{ClaimStatus, EnvType, Target, UnitState, UnitStrategy};
use maas_core::testkit::{probe, RunningExample, CPU, DB, NET, SESSION, SIM_PLATFORM};
use maas_server::{BackgroundServer, ServerConfig};
use serde_json::Value;

struct Env {
    server: BackgroundServer,
    dir: tempfile::TempDir,
}

fn start(strategy: UnitStrategy, retry_threshold: u32) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let ex = RunningExample::new(EnvType::Container);
    let targets = vec![
        ex.target.clone(),
        Target::new(SIM_PLATFORM, "vm-1", EnvType::AccessibleVm),
    ];
    std::fs::write(dir.path().join("targets.json"), serde_json::to_vec(&targets).unwrap()).unwrap();
    let cfg = ServerConfig {
        state_dir: Some(dir.path().join("state")),
        seed_dir: Some(dir.path().to_owned()),
        listen_addr: "127.0.0.1:0".parse().unwrap(),
        strategy,
        retry_threshold,
        loop_interval: Duration::from_millis(20),
        ..Default::default()
    };
    let server = BackgroundServer::start(&cfg).unwrap();
    Env { server, dir }
}

impl Env {
    fn ctl(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_maasctl"))
            .args(args)
            .env("MAAS_SERVER", self.server.url())
            .env_remove("MAAS_OPERATOR")
            .output()
            .expect("maasctl runs")
    }

    fn write(&self, name: &str, v: &impl serde::Serialize) -> String {
        let path = self.dir.path().join(name);
        std::fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
        path.display().to_string()
    }

    fn add_probes(&self) {
        let ex = RunningExample::new(EnvType::Container);
        for p in ex.probes() {
            let file = self.write(&format!("{}.json", p.id), p);
            let out = self.ctl(&["probes", "add", &file]);
            assert!(out.status.success(), "{}", stderr(&out));
            assert!(stdout(&out).contains("registered"));
        }
    }

    fn wait_unit(&self, pred: impl Fn(&UnitView) -> bool) -> UnitView {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            for u in self.server.api().list_units() {
                let out = self.ctl(&["--output", "json", "status", "unit", u.id.as_str()]);
                if out.status.success() {
                    let view: UnitView = serde_json::from_slice(&out.stdout).unwrap();
                    if pred(&view) {
                        return view;
                    }
                }
            }
            assert!(Instant::now() < deadline, "no unit reached the expected state");
            std::thread::sleep(Duration::from_millis(30));
        }
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn submit_wait(env: &Env, op: &str, indicators: &str) -> Value {
    let out = env.ctl(&[
        "--operator",
        op,
        "--output",
        "json",
        "submit",
        "--target",
        "target-PSQL",
        "--indicators",
        indicators,
        "--wait",
        "--timeout",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn running_example_through_the_cli() {
    let env = start(UnitStrategy::SingleProbe, 3);
    env.add_probes();
    let out = env.ctl(&["probes", "list"]);
    assert_eq!(stdout(&out).lines().count(), 5, "header plus four probes");

    submit_wait(&env, "op-A", NET);
    submit_wait(&env, "op-B", &[NET, CPU, DB].join(","));
    let v = submit_wait(&env, "op-A", &[NET, CPU, SESSION].join(","));
    let view: ClaimView = serde_json::from_value(v["results"][0].clone()).unwrap();
    assert_eq!(view.status, ClaimStatus::Fulfilled);

    let out = env.ctl(&[
        "--operator",
        "op-B",
        "submit",
        "--target",
        "target-PSQL",
        "--indicators",
        "",
        "--wait",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("FULFILLED"));

    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let units = env.server.api().list_units();
        let settled = units.len() == 3
            && units.iter().all(|u| u.current_conf == u.desired_conf)
            && units
                .iter()
                .all(|u| u.desired_conf.operators().iter().all(|o| o.as_str() == "op-A"));
        if settled {
            break;
        }
        assert!(Instant::now() < deadline, "op-B never left");
        std::thread::sleep(Duration::from_millis(20));
    }

    let out = env.ctl(&["status", "target", "target-PSQL"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("CONTAINER") && text.contains("SINGLE_PROBE"));
    assert!(!text.contains("op-B"));

    let out = env.ctl(&[
        "--output",
        "json",
        "status",
        "target",
        &format!("{SIM_PLATFORM}/target-PSQL"),
    ]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["units"].as_array().unwrap().len(), 3);

    let out = env.ctl(&["targets"]);
    assert!(stdout(&out).contains("vm-1"));
}

#[test]
fn request_file_doubles_as_api_fixture() {
    let env = start(UnitStrategy::MultiProbe, 3);
    env.add_probes();
    let doc = serde_json::json!({
        "operator": "op-F",
        "claims": [{ "target": { "targetPlatform": SIM_PLATFORM, "targetPlatformId": "vm-1" }, "indicators": [CPU] }]
    });
    let file = env.write("request.json", &doc);
    let out = env.ctl(&["--output", "json", "submit", "--file", &file, "--wait"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["results"][0]["status"], "FULFILLED");
    assert_eq!(v["results"][0]["operator"], "op-F");
}

#[test]
fn exit_codes_follow_the_contract() {
    let env = start(UnitStrategy::SingleProbe, 3);
    env.add_probes();

    let out = env.ctl(&[
        "--operator",
        "op-A",
        "submit",
        "--target",
        "target-PSQL",
        "--indicators",
        "DISK_IO",
        "--wait",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no matching probe"), "{}", stderr(&out));

    let out = env.ctl(&["--operator", "op-A", "status", "claim", "claim-404"]);
    assert_eq!(out.status.code(), Some(2));
    let out = env.ctl(&["status", "unit", "mu-9999"]);
    assert_eq!(out.status.code(), Some(2));
    let out = env.ctl(&[
        "--operator",
        "op-A",
        "submit",
        "--target",
        "missing",
        "--indicators",
        NET,
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = env.ctl(&["--operator", "op-B", "status", "claim", "claim-1"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_maasctl"))
        .args(["--server", "http://127.0.0.1:1", "targets"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    let out = env.ctl(&["admin", "inject-fault", "--phase", "PREPARE", "--effect", "HARD"]);
    assert_eq!(out.status.code(), Some(5), "invalid rule rejected by the server");
    let out = env.ctl(&["submit"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn unsound_unit_shows_retry_count() {
    let env = start(UnitStrategy::SingleProbe, 1000);
    env.add_probes();
    let out = env.ctl(&[
        "admin",
        "inject-fault",
        "--phase",
        "PREPARE",
        "--artifact",
        "p_cpu-artifact",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    submit_wait(&env, "op-A", CPU);
    let view = env.wait_unit(|v| v.unit.state == UnitState::Unsound && !v.retries.is_empty());
    assert!(view.retries[0].count >= 1);

    let out = env.ctl(&["status", "unit", view.unit.id.as_str()]);
    let text = stdout(&out);
    assert!(text.contains("UNSOUND") && text.contains("retrying:"), "{text}");
}

#[test]
fn reset_errors_clears_blacklist() {
    let env = start(UnitStrategy::MultiProbe, 3);
    env.add_probes();
    let rule = serde_json::json!({ "match": { "artifactId": "p_db-artifact" }, "phase": "APPLY", "effect": "HARD", "count": 1 });
    let file = env.write("fault.json", &rule);
    let out = env.ctl(&["admin", "inject-fault", "--file", &file]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = env.ctl(&[
        "--operator",
        "op-A",
        "submit",
        "--target",
        &format!("{SIM_PLATFORM}/vm-1"),
        "--indicators",
        &format!("{DB},{NET}"),
        "--wait",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let view = env.wait_unit(|v| v.blacklist.len() == 1 && v.unit.state == UnitState::Stable);
    assert_eq!(view.unit.current_conf.len(), 1);

    let out = env.ctl(&["admin", "reset-errors", "--unit", view.unit.id.as_str()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let view = env.wait_unit(|v| v.blacklist.is_empty() && v.unit.current_conf.len() == 2);
    assert_eq!(view.unit.current_conf, view.unit.desired_conf);
}

#[test]
fn json_output_round_trips() {
    let env = start(UnitStrategy::SingleProbe, 3);
    let p = probe("p_kafka", &["KAFKA_BROKERS"]);
    let file = env.write("kafka_exporter.json", &p);
    assert!(env.ctl(&["probes", "add", &file]).status.success());
    let out = env.ctl(&["--output", "json", "probes", "list"]);
    let probes: Vec<maas_core::model::Probe> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(probes, vec![p]);
    let again = env.ctl(&["--output", "json", "probes", "list"]);
    assert_eq!(out.stdout, again.stdout, "byte-stable");
    assert!(Path::new(&file).exists());
}
