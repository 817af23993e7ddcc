//! Plain-text tables for `--output table`.

use std::fmt::Write;

use maas_core::api::{ClaimView, SubmitResponse, UnitView};
use maas_core::model::{MonitoringUnit, Probe, Target, UnitConfiguration};

/// Left-aligned columns separated by two spaces.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut l = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                l.push_str(cell);
            } else {
                let _ = write!(l, "{cell:<w$}  ");
            }
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn dash(s: Option<&str>) -> String {
    s.filter(|s| !s.is_empty()).unwrap_or("-").to_owned()
}

fn variant<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn targets(targets: &[Target]) -> String {
    let rows: Vec<_> = targets
        .iter()
        .map(|t| vec![t.platform.clone(), t.platform_id.clone(), variant(&t.env_type)])
        .collect();
    table(&["PLATFORM", "ID", "ENV"], &rows)
}

pub fn submission(resp: &SubmitResponse) -> String {
    let rows: Vec<_> = resp
        .claims
        .iter()
        .map(|c| {
            vec![
                c.target.to_string(),
                dash(c.claim_id.as_ref().map(|i| i.as_str())),
                dash(c.error.as_deref()),
            ]
        })
        .collect();
    format!(
        "request {}\n{}",
        resp.request_id,
        table(&["TARGET", "CLAIM", "ERROR"], &rows)
    )
}

pub fn claims(views: &[ClaimView]) -> String {
    let rows: Vec<_> = views
        .iter()
        .map(|v| {
            vec![
                v.id.to_string(),
                v.operator.to_string(),
                v.target.to_string(),
                dash(Some(&join(&v.indicators))),
                variant(&v.status),
                dash(v.cause.as_deref()),
            ]
        })
        .collect();
    table(&["CLAIM", "OPERATOR", "TARGET", "INDICATORS", "STATUS", "CAUSE"], &rows)
}

fn entries(conf: &UnitConfiguration) -> String {
    if conf.is_empty() {
        return "  (empty)\n".to_owned();
    }
    let rows: Vec<_> = conf
        .iter()
        .map(|pc| vec![pc.probe.id.to_string(), join(&pc.indicators), pc.operator.to_string()])
        .collect();
    table(&["PROBE", "INDICATORS", "OPERATOR"], &rows)
        .lines()
        .map(|l| format!("  {l}\n"))
        .collect()
}

pub fn unit(view: &UnitView) -> String {
    let u = &view.unit;
    let mut out = String::new();
    let _ = writeln!(out, "unit         {}", u.id);
    let _ = writeln!(out, "target       {}", u.target.key());
    let _ = writeln!(out, "host         {}", u.host);
    let _ = writeln!(out, "strategy     {}", u.strategy);
    let _ = writeln!(out, "state        {}", variant(&u.state));
    let _ = writeln!(out, "provisioned  {}", view.provisioned);
    if view.clean_pending {
        let _ = writeln!(out, "clean        pending");
    }
    let _ = writeln!(out, "lease        {}", dash(view.lease_holder.as_deref()));
    let _ = writeln!(out, "current:\n{}", entries(&u.current_conf));
    let _ = writeln!(out, "desired:\n{}", entries(&u.desired_conf));
    if view.effective_desired != u.desired_conf {
        let _ = writeln!(out, "effective:\n{}", entries(&view.effective_desired));
    }
    if !view.retries.is_empty() {
        let rows: Vec<_> = view
            .retries
            .iter()
            .map(|r| vec![r.config.to_string(), r.count.to_string()])
            .collect();
        let _ = writeln!(out, "retrying:\n{}", indent(&table(&["CONFIGURATION", "COUNT"], &rows)));
    }
    if !view.blacklist.is_empty() {
        let _ = writeln!(out, "blacklisted:");
        for k in &view.blacklist {
            let _ = writeln!(out, "  {k}");
        }
    }
    out
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}\n")).collect()
}

pub fn target(t: &Target, units: &[MonitoringUnit]) -> String {
    let mut out = format!("target  {}\nenv     {}\n", t.key(), variant(&t.env_type));
    for (k, v) in &t.metadata {
        let _ = writeln!(
            out,
            "  {k}: {}",
            v.as_str().map_or_else(|| v.to_string(), str::to_owned)
        );
    }
    let rows: Vec<_> = units
        .iter()
        .map(|u| {
            vec![
                u.id.to_string(),
                u.strategy.to_string(),
                variant(&u.state),
                join(u.current_conf.iter()),
                join(u.desired_conf.iter()),
            ]
        })
        .collect();
    out.push('\n');
    out + &table(&["UNIT", "STRATEGY", "STATE", "CURRENT", "DESIRED"], &rows)
}

pub fn probes(probes: &[Probe]) -> String {
    let rows: Vec<_> = probes
        .iter()
        .map(|p| {
            vec![
                p.id.to_string(),
                p.artifact_id.clone(),
                join(&p.metadata.supported_indicators),
                join(&p.metadata.supported_strategies),
                join(p.metadata.supported_env_types.iter().map(variant)),
            ]
        })
        .collect();
    table(&["PROBE", "ARTIFACT", "INDICATORS", "STRATEGIES", "ENV TYPES"], &rows)
}
