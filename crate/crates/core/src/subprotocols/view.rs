//! Shared-view agreement: a proposer periodically asks its group to agree
//! on a payload through three-stage BFT consensus carried passively on
//! CAMs.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::consensus::{FaultMode, PbftAction, PbftParams, ProcessTable, TimerKind};
use crate::ledger::forge_block;
use crate::types::{InfoFlag, ItsMessage, MsgType, ProcessId, SimTime, SpId, Stage, StationId, VeeExtension};
use crate::vep::{BlockRecordEvent, PbftRecord, Record, SpContext, SpError, SpRegistration, SubProtocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    /// Period between proposal attempts of a proposer. Attempts made while
    /// a process is still running are skipped.
    pub trigger_period_ms: u64,
    /// First attempt; defaults to one period after start.
    pub first_trigger_ms: Option<u64>,
    pub payload_bytes: usize,
    /// Record each decided proposal as a block.
    pub ledger: bool,
    pub pbft: PbftParams,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            trigger_period_ms: 5000,
            first_trigger_ms: None,
            payload_bytes: 32,
            ledger: false,
            pbft: PbftParams::default(),
        }
    }
}

const TRIGGER: u64 = 0;

pub struct ViewSp {
    reg: SpRegistration,
    cfg: ViewConfig,
    table: ProcessTable,
    membership: Vec<StationId>,
    proposer: bool,
    timers: BTreeMap<u64, (ProcessId, TimerKind)>,
    next_token: u64,
    /// Earliest known message carrying each PRE_PREPARE.
    pre_prepares: BTreeMap<ProcessId, ItsMessage>,
    stats: BTreeMap<String, f64>,
}

/// Event identifier carried by every container of a process.
pub fn view_event_id(pid: &ProcessId) -> u32 {
    (pid.nonce as u32) ^ pid.proposer.0.rotate_left(24)
}

impl ViewSp {
    pub fn new(
        station: StationId,
        cfg: ViewConfig,
        membership: Vec<StationId>,
        proposer: bool,
        fault: FaultMode,
    ) -> Self {
        ViewSp {
            reg: SpRegistration::passive_on_cam(SpId::VIEW),
            table: ProcessTable::new(station, cfg.pbft.clone(), fault),
            cfg,
            membership,
            proposer,
            timers: BTreeMap::new(),
            next_token: TRIGGER + 1,
            pre_prepares: BTreeMap::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn table(&self) -> &ProcessTable {
        &self.table
    }

    fn bump(&mut self, k: &str) {
        *self.stats.entry(k.to_string()).or_default() += 1.0;
    }

    fn apply(&mut self, actions: Vec<PbftAction>, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        for a in actions {
            match a {
                PbftAction::Enqueue(c) => {
                    let mut ext = VeeExtension::new(view_event_id(&c.process_id), SpId::VIEW);
                    if c.stage == Stage::PrePrepare && self.cfg.ledger {
                        ext = ext.with_ledger(ctx.ledger.make_container(InfoFlag::None));
                    }
                    ctx.queue.enqueue(ext.with_consensus(c), ctx.now);
                }
                PbftAction::ArmTimer { process, at, kind } => {
                    let token = self.next_token;
                    self.next_token += 1;
                    self.timers.insert(token, (process, kind));
                    ctx.timer(SpId::VIEW, at, token);
                }
                PbftAction::Purge(pid) => {
                    ctx.queue.retain(|q| {
                        !(q.ext.sp_id == SpId::VIEW && q.ext.consensus.as_ref().is_some_and(|c| c.process_id == pid))
                    });
                    self.timers.retain(|_, (p, _)| *p != pid);
                }
                PbftAction::Decided { process, digest, delay } => {
                    self.bump("decided");
                    self.timers.retain(|_, (p, _)| *p != process);
                    let p = self.table.get(&process).expect("decided process exists");
                    ctx.record(Record::Pbft(PbftRecord {
                        process_id: process.to_string(),
                        station: ctx.station.0,
                        role: p.role,
                        outcome: p.outcome,
                        delay_ms: Some(delay.as_ms()),
                        retransmissions: p.retransmissions_used,
                        reason: None,
                        digest,
                    }));
                    if self.cfg.ledger {
                        self.record_block(process, ctx)?;
                    }
                }
                PbftAction::Failed { process, reason } => {
                    self.bump("failed");
                    let p = self.table.get(&process).expect("failed process exists");
                    ctx.record(Record::Pbft(PbftRecord {
                        process_id: process.to_string(),
                        station: ctx.station.0,
                        role: p.role,
                        outcome: p.outcome,
                        delay_ms: None,
                        retransmissions: p.retransmissions_used,
                        reason: Some(reason),
                        digest: p.proposal_digest,
                    }));
                }
            }
        }
        Ok(())
    }

    fn record_block(&mut self, pid: ProcessId, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(msg) = self.pre_prepares.get(&pid) else {
            return Err(SpError::Protocol(format!("no PRE_PREPARE message kept for {pid}")));
        };
        let Some(lc) = msg.extension.as_ref().and_then(|e| e.ledger.as_ref()) else {
            return Err(SpError::Protocol(format!(
                "PRE_PREPARE of {pid} carries no ledger container"
            )));
        };
        let block = forge_block(
            lc.localchain_id,
            lc.prev_block_hash,
            &[Some(msg)],
            InfoFlag::Success,
            |m| ctx.verify(m),
        )?;
        let hash = block.hash;
        ctx.ledger.append(block)?;
        ctx.record(Record::Block(BlockRecordEvent {
            station: ctx.station.0,
            sp_id: SpId::VIEW.0,
            event_id: view_event_id(&pid),
            phase: "decision".into(),
            hash,
            messages: 1,
            flag: InfoFlag::Success,
            at_ms: ctx.now.as_ms(),
        }));
        Ok(())
    }

    fn keep_pre_prepare(&mut self, msg: &ItsMessage) {
        let Some(c) = msg.extension.as_ref().and_then(|e| e.consensus.as_ref()) else {
            return;
        };
        if c.stage != Stage::PrePrepare || msg.sender != c.process_id.proposer {
            return;
        }
        let e = self.pre_prepares.entry(c.process_id).or_insert_with(|| msg.clone());
        if (msg.timestamp_ms, msg.seq) < (e.timestamp_ms, e.seq) {
            *e = msg.clone();
        }
    }
}

impl SubProtocol for ViewSp {
    fn registration(&self) -> &SpRegistration {
        &self.reg
    }

    fn on_start(&mut self, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if self.proposer {
            let first = self.cfg.first_trigger_ms.unwrap_or(self.cfg.trigger_period_ms);
            ctx.timer(SpId::VIEW, SimTime::from_ms(first), TRIGGER);
        }
        Ok(())
    }

    fn on_message(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if msg.msg_type != MsgType::Cam || msg.sp_id() != Some(SpId::VIEW) {
            return Ok(());
        }
        let Some(c) = msg.extension.as_ref().and_then(|e| e.consensus.clone()) else {
            return Ok(());
        };
        if self.cfg.ledger {
            self.keep_pre_prepare(msg);
        }
        let actions = self.table.on_container(ctx.now, msg.sender, &c);
        self.apply(actions, ctx)
    }

    fn on_timer(&mut self, token: u64, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if token == TRIGGER {
            let next = ctx.now + SimTime::from_ms(self.cfg.trigger_period_ms.max(1));
            ctx.timer(SpId::VIEW, next, TRIGGER);
            self.table.prune_buffer(ctx.now);
            let mut payload = vec![0u8; self.cfg.payload_bytes];
            ctx.rng.fill_bytes(&mut payload);
            return match self.table.start(ctx.now, self.membership.clone(), payload) {
                Ok((_, actions)) => {
                    self.bump("started");
                    self.apply(actions, ctx)
                }
                Err(crate::consensus::ConsensusError::Busy(_)) => {
                    self.bump("skipped_busy");
                    Ok(())
                }
                Err(e) => Err(e.into()),
            };
        }
        let Some((pid, kind)) = self.timers.remove(&token) else {
            return Ok(());
        };
        let actions = self.table.on_timer(ctx.now, pid, kind);
        self.apply(actions, ctx)
    }

    fn on_transmitted(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(c) = msg.extension.as_ref().and_then(|e| e.consensus.clone()) else {
            return Ok(());
        };
        if self.cfg.ledger {
            self.keep_pre_prepare(msg);
        }
        let actions = self.table.on_transmitted(ctx.now, &c);
        self.apply(actions, ctx)
    }

    fn stats(&self) -> BTreeMap<String, f64> {
        self.stats.clone()
    }
}
