//! Files written for a run and rows written for a sweep.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::consensus::{Outcome, Role};
use crate::scenario::RunResult;
use crate::types::SpId;
use crate::vep::Record;

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut any = false;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
        any = true;
    }
    if !any {
        // keep an empty file so consumers can rely on it existing
        w.flush()?;
    }
    w.flush()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> io::Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v).map_err(io::Error::other)?)
}

#[derive(Serialize)]
struct PbftRow<'a> {
    process_id: &'a str,
    station: u32,
    role: Role,
    outcome: Outcome,
    delay_ms: Option<f64>,
    retransmissions: u32,
    reason: Option<String>,
    digest: String,
}

#[derive(Serialize)]
struct BlockRow<'a> {
    station: u32,
    sp_id: u16,
    event_id: u32,
    phase: &'a str,
    hash: String,
    messages: usize,
    flag: String,
    at_ms: f64,
}

#[derive(Serialize)]
struct AbortRow<'a> {
    sp_id: u16,
    station: u32,
    event_id: u32,
    reason: &'a str,
}

/// Writes metrics, traces, ledgers, balances, and the analytic report
/// into `dir`.
pub fn write_run(res: &RunResult, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let out = &res.output;
    write_json(
        &dir.join("metrics.json"),
        &serde_json::json!({
            "scenario": res.scenario.name,
            "seed": res.scenario.seed,
            "metrics": out.metrics,
            "trace_digest": out.trace_digest,
            "generator_digest": out.generator_digest,
            "sp_stats": out.sp_stats,
            "violations": out.violations,
            "stations": res.meta,
        }),
    )?;
    write_csv(&dir.join("queue_trace.csv"), &out.queue_trace)?;

    let mut pbft = Vec::new();
    let mut blocks = Vec::new();
    let mut aborts = Vec::new();
    let mut maneuver = Vec::new();
    let mut tolling = Vec::new();
    let mut settlements = Vec::new();
    for r in &out.records {
        match r {
            Record::Pbft(p) => pbft.push(PbftRow {
                process_id: &p.process_id,
                station: p.station,
                role: p.role,
                outcome: p.outcome,
                delay_ms: p.delay_ms,
                retransmissions: p.retransmissions,
                reason: p.reason.map(|r| format!("{r:?}")),
                digest: p.digest.to_hex(),
            }),
            Record::Block(b) => blocks.push(BlockRow {
                station: b.station,
                sp_id: b.sp_id,
                event_id: b.event_id,
                phase: &b.phase,
                hash: b.hash.to_hex(),
                messages: b.messages,
                flag: b.flag.to_string(),
                at_ms: b.at_ms,
            }),
            Record::Delay(d) if d.sp_id == SpId::MANEUVER.0 => maneuver.push(d),
            Record::Delay(d) if d.sp_id == SpId::TOLLING.0 => tolling.push(d),
            Record::Delay(_) => {}
            Record::Settlement(s) => settlements.push(s),
            Record::Abort {
                sp_id,
                station,
                event_id,
                reason,
            } => aborts.push(AbortRow {
                sp_id: *sp_id,
                station: *station,
                event_id: *event_id,
                reason,
            }),
        }
    }
    write_csv(&dir.join("pbft_trace.csv"), pbft)?;
    write_csv(&dir.join("blocks.csv"), blocks)?;
    write_csv(&dir.join("aborts.csv"), aborts)?;
    write_csv(&dir.join("maneuver_delays.csv"), maneuver)?;
    write_csv(&dir.join("tolling_delays.csv"), tolling)?;
    write_csv(&dir.join("settlements.csv"), settlements)?;
    if res.scenario.record_packets {
        write_csv(&dir.join("packets.csv"), &out.packets)?;
    }

    let ledger_dir = dir.join("ledger");
    fs::create_dir_all(&ledger_dir)?;
    for (id, chain) in &out.ledgers {
        let f = fs::File::create(ledger_dir.join(format!("station_{}.jsonl", id.0)))?;
        chain.dump_jsonl(io::BufWriter::new(f))?;
    }
    write_json(
        &dir.join("balances.json"),
        &serde_json::json!({
            "initial_supply": res.meta.initial_supply,
            "final_supply": out.settlement.total_supply(),
            "settlements": out.settlement.settlements(),
            "accounts": out.settlement.snapshot(),
        }),
    )?;
    write_json(&dir.join("report.json"), &res.report)
}

/// Summary of one sweep point, flattened for CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub point: String,
    pub seed: u64,
    pub packets: u64,
    pub extended_packets: u64,
    pub cbr: f64,
    pub overhead_pct: f64,
    pub min_frame: usize,
    pub max_frame: usize,
    pub decided: usize,
    pub failed: usize,
    pub primary_delay_ms: Option<f64>,
    pub verification_delay_ms: Option<f64>,
    pub settlements: u64,
    pub invariant_violations: u64,
}

pub fn sweep_row(point: &str, res: &RunResult) -> SweepRow {
    let m = &res.output.metrics;
    let primaries: Vec<_> = res.pbft_records().filter(|p| p.role == Role::Primary).collect();
    let d = res.primary_delays();
    let v = res.delays(SpId::MANEUVER, "verification");
    let avg = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    SweepRow {
        point: point.to_string(),
        seed: res.scenario.seed,
        packets: m.packets,
        extended_packets: m.extended_packets,
        cbr: m.cbr,
        overhead_pct: m.overhead_pct,
        min_frame: m.min_frame.unwrap_or(0),
        max_frame: m.max_frame.unwrap_or(0),
        decided: primaries.iter().filter(|p| p.outcome == Outcome::Decided).count(),
        failed: primaries.iter().filter(|p| p.outcome == Outcome::Failed).count(),
        primary_delay_ms: avg(&d),
        verification_delay_ms: avg(&v),
        settlements: res.output.settlement.settlements(),
        invariant_violations: m.invariant_violations,
    }
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> io::Result<()> {
    write_csv(path, rows)
}
