//! `maasctl`: operator client for the monitoring control plane.

mod client;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use maas_core::api::{ClaimDoc, ClaimView, RequestDoc, SubmitResponse, UnitView};
use maas_core::bridge::FaultRule;
use maas_core::events::StatusEvent;
use maas_core::model::{parse_indicator_list, ClaimStatus, MonitoringUnit, Operator, Probe, Target, TargetKey};
use serde_json::{json, Value};

use client::{ApiClient, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Table,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "maasctl",
    version,
    about = "Operator client for the monitoring control plane"
)]
struct Cli {
    /// Base URL of the API service.
    #[arg(long, global = true, env = "MAAS_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Operator identity sent with every request.
    #[arg(long, global = true, env = "MAAS_OPERATOR")]
    operator: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Submit a monitoring request.
    Submit(SubmitArgs),
    /// Show a claim, a monitoring unit or a target.
    Status {
        #[command(subcommand)]
        what: StatusCmd,
    },
    /// List the targets known to the cloud bridge.
    Targets,
    /// Manage the probe catalog.
    Probes {
        #[command(subcommand)]
        cmd: ProbesCmd,
    },
    /// Administrative commands.
    Admin {
        #[command(subcommand)]
        cmd: AdminCmd,
    },
}

#[derive(Debug, Args)]
struct SubmitArgs {
    /// Request document in the JSON shape the API consumes.
    #[arg(long, short, conflicts_with_all = ["target", "indicators"])]
    file: Option<PathBuf>,
    /// `platform/id`, or a bare id when it is unique across platforms.
    #[arg(long, required_unless_present = "file")]
    target: Option<String>,
    /// Comma-separated indicators; empty stops monitoring the target.
    #[arg(long, allow_hyphen_values = true)]
    indicators: Option<String>,
    /// Block until every claim is fulfilled or aborted.
    #[arg(long)]
    wait: bool,
    /// Give up waiting after this many seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

#[derive(Debug, Subcommand)]
enum StatusCmd {
    Claim {
        id: String,
    },
    Unit {
        id: String,
    },
    /// Target document plus the units attached to it.
    Target {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
enum ProbesCmd {
    /// Register a probe from a JSON file.
    Add {
        file: PathBuf,
    },
    List,
}

#[derive(Debug, Subcommand)]
enum AdminCmd {
    /// Clear the retry table and blacklist.
    ResetErrors {
        /// Only this unit's rows.
        #[arg(long)]
        unit: Option<String>,
    },
    /// Add a fault rule to the simulated plug-in.
    InjectFault(FaultArgs),
    /// Re-read the simulated plug-in's seed files.
    Reload,
}

#[derive(Debug, Args)]
struct FaultArgs {
    /// Rule document in JSON.
    #[arg(long, short, conflicts_with_all = ["phase", "artifact", "probe", "unit", "effect", "count"])]
    file: Option<PathBuf>,
    /// PREPARE, APPLY, CLEAN or TRANSPORT.
    #[arg(long, required_unless_present = "file")]
    phase: Option<String>,
    #[arg(long)]
    artifact: Option<String>,
    #[arg(long)]
    probe: Option<String>,
    #[arg(long)]
    unit: Option<String>,
    /// SOFT or HARD; derived from the phase when omitted.
    #[arg(long)]
    effect: Option<String>,
    /// Occurrences before the rule clears itself; unlimited when omitted.
    #[arg(long)]
    count: Option<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maasctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let api = ApiClient::new(&cli.server, cli.operator.clone())?;
    match &cli.command {
        Command::Submit(args) => submit(&api, cli.output, args),
        Command::Status { what } => status(&api, cli.output, what),
        Command::Targets => {
            let targets: Vec<Target> = api.get("/api/v1/targets")?;
            emit(cli.output, &targets, || render::targets(&targets))
        }
        Command::Probes { cmd } => probes(&api, cli.output, cmd),
        Command::Admin { cmd } => admin(&api, cli.output, cmd),
    }
}

fn emit<T: serde::Serialize>(output: Output, value: &T, table: impl FnOnce() -> String) -> Result<(), CliError> {
    match output {
        Output::Json => println!(
            "{}",
            serde_json::to_string_pretty(value).map_err(|e| CliError::Server(e.to_string()))?
        ),
        Output::Table => print!("{}", table()),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn resolve_target(api: &ApiClient, raw: &str) -> Result<TargetKey, CliError> {
    if let Some((platform, id)) = raw.split_once('/') {
        return Ok(TargetKey::new(platform, id));
    }
    let targets: Vec<Target> = api.get("/api/v1/targets")?;
    let mut hits = targets.iter().filter(|t| t.platform_id == raw);
    match (hits.next(), hits.next()) {
        (Some(t), None) => Ok(t.key()),
        (None, _) => Err(CliError::NotFound(format!("target {raw}"))),
        (Some(_), Some(_)) => Err(CliError::Usage(format!(
            "target id {raw} exists on several platforms; use platform/id"
        ))),
    }
}

fn submit(api: &ApiClient, output: Output, args: &SubmitArgs) -> Result<(), CliError> {
    let doc = match &args.file {
        Some(path) => read_json::<RequestDoc>(path)?,
        None => {
            let operator = api
                .operator()
                .ok_or_else(|| CliError::Usage("--operator is required".into()))?;
            let target = resolve_target(api, args.target.as_deref().unwrap_or_default())?;
            let indicators = parse_indicator_list(args.indicators.as_deref().unwrap_or_default())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            RequestDoc {
                operator: Operator::new(operator),
                claims: vec![ClaimDoc { indicators, target }],
            }
        }
    };
    // Submissions from a file act on behalf of the operator named in it.
    let owned;
    let api = match api.operator() {
        Some(_) => api,
        None => {
            owned = ApiClient::new(api.base(), Some(doc.operator.to_string()))?;
            &owned
        }
    };
    let cursor = if args.wait { api.last_seq()? } else { 0 };
    let resp: SubmitResponse = api.post("/api/v1/monitoring-requests", &doc)?;
    let rejected: Vec<String> = resp
        .claims
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.target)))
        .collect();
    if !args.wait {
        emit(output, &resp, || render::submission(&resp))?;
        return match rejected.is_empty() {
            true => Ok(()),
            false => Err(CliError::BadRequest(rejected.join("; "))),
        };
    }
    let views = wait_for_claims(api, &resp, cursor, Duration::from_secs(args.timeout))?;
    emit(
        output,
        &json!({ "requestId": resp.request_id, "claims": resp.claims, "results": views }),
        || render::submission(&resp) + &render::claims(&views),
    )?;
    let aborted: Vec<String> = views
        .iter()
        .filter(|v| v.status == ClaimStatus::Aborted)
        .map(|v| format!("claim {} aborted: {}", v.id, v.cause.as_deref().unwrap_or("no cause")))
        .collect();
    if !aborted.is_empty() {
        return Err(CliError::Aborted(aborted.join("; ")));
    }
    if !rejected.is_empty() {
        return Err(CliError::BadRequest(rejected.join("; ")));
    }
    Ok(())
}

/// Long-polls the event stream until every submitted claim is terminal.
fn wait_for_claims(
    api: &ApiClient,
    resp: &SubmitResponse,
    mut cursor: u64,
    timeout: Duration,
) -> Result<Vec<ClaimView>, CliError> {
    let ids = resp.claim_ids();
    let deadline = Instant::now() + timeout;
    loop {
        let mut views = Vec::with_capacity(ids.len());
        for id in &ids {
            views.push(api.get::<ClaimView>(&format!("/api/v1/claims/{id}"))?);
        }
        if views.iter().all(|v| v.status.is_terminal()) {
            return Ok(views);
        }
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(CliError::Server(format!(
                "claims not settled after {}s",
                timeout.as_secs()
            )));
        }
        let (events, last) = api.events::<StatusEvent>(cursor, left.min(Duration::from_secs(5)))?;
        cursor = events.last().map_or(last, |e| e.seq).max(cursor);
    }
}

fn status(api: &ApiClient, output: Output, what: &StatusCmd) -> Result<(), CliError> {
    match what {
        StatusCmd::Claim { id } => {
            let view: ClaimView = api.get(&format!("/api/v1/claims/{id}"))?;
            emit(output, &view, || render::claims(std::slice::from_ref(&view)))
        }
        StatusCmd::Unit { id } => {
            let view: UnitView = api.get(&format!("/api/v1/units/{id}"))?;
            emit(output, &view, || render::unit(&view))
        }
        StatusCmd::Target { id } => {
            let key = resolve_target(api, id)?;
            let targets: Vec<Target> = api.get("/api/v1/targets")?;
            let target = targets
                .into_iter()
                .find(|t| t.key() == key)
                .ok_or_else(|| CliError::NotFound(format!("target {key}")))?;
            let units: Vec<MonitoringUnit> = api.get(&format!("/api/v1/units?target={key}"))?;
            let doc = json!({ "target": target, "units": units });
            emit(output, &doc, || render::target(&target, &units))
        }
    }
}

fn probes(api: &ApiClient, output: Output, cmd: &ProbesCmd) -> Result<(), CliError> {
    match cmd {
        ProbesCmd::Add { file } => {
            let probe: Probe = read_json(file)?;
            let resp: Value = api.post("/api/v1/probes", &probe)?;
            emit(output, &resp, || {
                format!("registered {}\n", resp["id"].as_str().unwrap_or_default())
            })
        }
        ProbesCmd::List => {
            let probes: Vec<Probe> = api.get("/api/v1/probes")?;
            emit(output, &probes, || render::probes(&probes))
        }
    }
}

fn admin(api: &ApiClient, output: Output, cmd: &AdminCmd) -> Result<(), CliError> {
    match cmd {
        AdminCmd::ResetErrors { unit } => {
            let body = match unit {
                Some(u) => json!({ "unitId": u }),
                None => json!({}),
            };
            api.post_empty("/api/v1/admin/error-tables/reset", &body)?;
            let scope = unit.as_deref().map_or("all units".to_owned(), |u| format!("unit {u}"));
            emit(output, &json!({ "reset": scope }), || {
                format!("error tables reset for {scope}\n")
            })
        }
        AdminCmd::InjectFault(args) => {
            let rule = fault_rule(args)?;
            api.post_empty("/api/v1/admin/faults", &rule)?;
            emit(output, &rule, || "fault rule added\n".to_owned())
        }
        AdminCmd::Reload => {
            api.post_empty("/api/v1/admin/reload", &json!({}))?;
            emit(output, &json!({ "reloaded": true }), || {
                "seed data reloaded\n".to_owned()
            })
        }
    }
}

fn fault_rule(args: &FaultArgs) -> Result<FaultRule, CliError> {
    if let Some(path) = &args.file {
        return read_json(path);
    }
    let upper = |s: &Option<String>| s.as_deref().map(str::to_uppercase);
    let mut matcher = serde_json::Map::new();
    for (k, v) in [
        ("artifactId", &args.artifact),
        ("probe", &args.probe),
        ("unit", &args.unit),
    ] {
        if let Some(v) = v {
            matcher.insert(k.into(), json!(v));
        }
    }
    let phase = upper(&args.phase).unwrap_or_default();
    let effect = upper(&args.effect).or(match phase.as_str() {
        "PREPARE" => Some("SOFT".into()),
        "APPLY" => Some("HARD".into()),
        _ => None,
    });
    let doc = json!({ "match": matcher, "phase": phase, "effect": effect, "count": args.count });
    serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid fault rule: {e}")))
}
