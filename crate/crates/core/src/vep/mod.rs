//! Per-station extension engine: sub-protocol registry, interactive and
//! passive dispatch, and the passive FIFO.

mod queue;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use queue::{ExtensionQueue, QueueRecord, QueuedVee, DEFAULT_WARN_THRESHOLD};

use crate::codec::{self, EncodingError};
use crate::consensus::ConsensusError;
use crate::crypto::{KeyError, KeyRegistry};
use crate::ledger::{LedgerError, Localchain};
use crate::token::{SettlementLedger, TokenError};
use crate::types::{Digest, InfoFlag, ItsMessage, MsgType, SimTime, SpId, StationId, VeeExtension};

#[derive(Debug, Error)]
pub enum SpError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("{0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModePolicy {
    Interactive,
    PassiveEligible,
    Ignore,
}

/// What a sub-protocol does with each message type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpRegistration {
    pub sp_id: SpId,
    pub policy: BTreeMap<MsgType, ModePolicy>,
}

impl SpRegistration {
    /// Passive on CAMs only, the default for periodic transport.
    pub fn passive_on_cam(sp_id: SpId) -> Self {
        SpRegistration {
            sp_id,
            policy: BTreeMap::from([(MsgType::Cam, ModePolicy::PassiveEligible)]),
        }
    }

    pub fn with(mut self, t: MsgType, p: ModePolicy) -> Self {
        self.policy.insert(t, p);
        self
    }

    pub fn mode(&self, t: MsgType) -> ModePolicy {
        self.policy.get(&t).copied().unwrap_or(ModePolicy::Ignore)
    }

    pub fn handles(&self, t: MsgType) -> bool {
        self.mode(t) != ModePolicy::Ignore
    }
}

/// Position and velocity of the station, in metres and metres/second.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Kinematics {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Kinematics {
    pub fn at_offset(&self, dt_s: f64) -> (f64, f64) {
        (self.x + self.vx * dt_s, self.y + self.vy * dt_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub sp_id: u16,
    pub station: u32,
    pub run: u32,
    pub phase: String,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbftRecord {
    pub process_id: String,
    pub station: u32,
    pub role: crate::consensus::Role,
    pub outcome: crate::consensus::Outcome,
    pub delay_ms: Option<f64>,
    pub retransmissions: u32,
    pub reason: Option<crate::consensus::FailReason>,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecordEvent {
    pub station: u32,
    pub sp_id: u16,
    pub event_id: u32,
    pub phase: String,
    pub hash: Digest,
    pub messages: usize,
    pub flag: InfoFlag,
    pub at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub sp_id: u16,
    pub event_id: u32,
    pub station: u32,
    pub amount: u64,
    pub accepted: bool,
    pub detail: String,
}

/// Measurements emitted by sub-protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Record {
    Delay(DelayRecord),
    Pbft(PbftRecord),
    Block(BlockRecordEvent),
    Settlement(SettlementRecord),
    /// A sub-protocol event gave up (timeout, missing data).
    Abort {
        sp_id: u16,
        station: u32,
        event_id: u32,
        reason: String,
    },
}

/// Requests a sub-protocol makes of its host station.
#[derive(Debug, Clone, PartialEq)]
pub enum SpEffect {
    Timer {
        sp: SpId,
        at: SimTime,
        token: u64,
    },
    /// Transmit an event-triggered message now; it passes through
    /// `on_outgoing` like any other.
    Emit {
        msg_type: MsgType,
        body: Vec<u8>,
    },
    /// Set speed to `factor` times nominal, returning linearly to nominal
    /// over `ramp_ms`.
    SpeedChange {
        factor: f64,
        ramp_ms: u64,
    },
    Record(Record),
}

/// Station state borrowed for the duration of one engine call.
pub struct Env<'a> {
    pub now: SimTime,
    pub station: StationId,
    pub kin: Kinematics,
    pub ledger: &'a mut Localchain,
    pub keys: &'a KeyRegistry,
    pub settlement: &'a mut SettlementLedger,
    pub rng: &'a mut ChaCha8Rng,
    pub effects: &'a mut Vec<SpEffect>,
}

/// What a sub-protocol callback can see and touch.
pub struct SpContext<'a> {
    pub now: SimTime,
    pub station: StationId,
    pub kin: Kinematics,
    pub queue: &'a mut ExtensionQueue,
    pub ledger: &'a mut Localchain,
    pub keys: &'a KeyRegistry,
    pub settlement: &'a mut SettlementLedger,
    pub rng: &'a mut ChaCha8Rng,
    pub effects: &'a mut Vec<SpEffect>,
}

impl SpContext<'_> {
    pub fn timer(&mut self, sp: SpId, at: SimTime, token: u64) {
        self.effects.push(SpEffect::Timer { sp, at, token });
    }

    pub fn record(&mut self, r: Record) {
        self.effects.push(SpEffect::Record(r));
    }

    pub fn emit(&mut self, msg_type: MsgType, body: Vec<u8>) {
        self.effects.push(SpEffect::Emit { msg_type, body });
    }

    pub fn verify(&self, msg: &ItsMessage) -> bool {
        self.keys
            .verify(msg.sender, &msg.signing_payload(), &msg.signature)
            .unwrap_or(false)
    }
}

fn context<'b>(env: &'b mut Env<'_>, queue: &'b mut ExtensionQueue) -> SpContext<'b> {
    SpContext {
        now: env.now,
        station: env.station,
        kin: env.kin,
        queue,
        ledger: &mut *env.ledger,
        keys: env.keys,
        settlement: &mut *env.settlement,
        rng: &mut *env.rng,
        effects: &mut *env.effects,
    }
}

/// An event-type specific protocol built on the extension modules.
pub trait SubProtocol: Send {
    fn registration(&self) -> &SpRegistration;

    /// Called once when the station comes up.
    fn on_start(&mut self, _ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        Ok(())
    }

    /// Offered outgoing messages this SP registered as interactive for.
    fn claim(&mut self, _msg: &ItsMessage, _ctx: &mut SpContext<'_>) -> Result<Option<VeeExtension>, SpError> {
        Ok(None)
    }

    fn on_message(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError>;

    fn on_timer(&mut self, _token: u64, _ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        Ok(())
    }

    /// An outgoing message carrying this SP's extension was transmitted.
    fn on_transmitted(&mut self, _msg: &ItsMessage, _ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        Ok(())
    }

    /// Summary counters for reports.
    fn stats(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    Interactive,
    Passive,
}

#[derive(Debug, Clone)]
pub struct Outgoing {
    pub message: ItsMessage,
    pub mode: Option<ExtensionMode>,
    /// The queue entry attached in passive mode.
    pub dequeued: Option<QueuedVee>,
}

pub struct VepEngine {
    station: StationId,
    sps: Vec<Box<dyn SubProtocol>>,
    queue: ExtensionQueue,
    enabled: bool,
    failures: u64,
}

impl VepEngine {
    pub fn new(station: StationId) -> Self {
        VepEngine {
            station,
            sps: Vec::new(),
            queue: ExtensionQueue::new(station),
            enabled: true,
            failures: 0,
        }
    }

    /// An engine that never touches traffic, as if the station had no
    /// extension support at all.
    pub fn disabled(station: StationId) -> Self {
        VepEngine {
            enabled: false,
            ..VepEngine::new(station)
        }
    }

    pub fn with_queue(mut self, queue: ExtensionQueue) -> Self {
        self.queue = queue;
        self
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn register(&mut self, sp: Box<dyn SubProtocol>) {
        self.sps.push(sp);
    }

    pub fn sub_protocols(&self) -> impl Iterator<Item = &dyn SubProtocol> {
        self.sps.iter().map(|b| b.as_ref())
    }

    pub fn queue(&self) -> &ExtensionQueue {
        &self.queue
    }

    pub fn queue_mut(&mut self) -> &mut ExtensionQueue {
        &mut self.queue
    }

    /// SP callbacks that failed; the affected traffic went out unextended.
    pub fn failures(&self) -> u64 {
        self.failures
    }

    fn fail(&mut self, sp: SpId, what: &str, e: &SpError) {
        self.failures += 1;
        log::warn!("{}: sub-protocol {} failed in {}: {}", self.station, sp.0, what, e);
    }

    pub fn start(&mut self, env: &mut Env<'_>) {
        if !self.enabled {
            return;
        }
        for i in 0..self.sps.len() {
            let mut ctx = context(env, &mut self.queue);
            if let Err(e) = self.sps[i].on_start(&mut ctx) {
                let sp = self.sps[i].registration().sp_id;
                self.fail(sp, "start", &e);
            }
        }
    }

    /// Attaches at most one extension: an interactive claim first, else the
    /// queue head if this message type may carry it.
    pub fn on_outgoing(&mut self, mut msg: ItsMessage, env: &mut Env<'_>) -> Outgoing {
        msg.extension = None;
        self.queue.note_transmission(env.now);
        if !self.enabled {
            return Outgoing {
                message: msg,
                mode: None,
                dequeued: None,
            };
        }

        for i in 0..self.sps.len() {
            let reg = self.sps[i].registration();
            if reg.mode(msg.msg_type) != ModePolicy::Interactive {
                continue;
            }
            let sp = reg.sp_id;
            let mut ctx = context(env, &mut self.queue);
            match self.sps[i].claim(&msg, &mut ctx) {
                Ok(Some(ext)) => match codec::extension_len(&ext) {
                    Ok(_) => {
                        msg.extension = Some(ext);
                        return Outgoing {
                            message: msg,
                            mode: Some(ExtensionMode::Interactive),
                            dequeued: None,
                        };
                    }
                    Err(e) => self.fail(sp, "claim", &SpError::from(e)),
                },
                Ok(None) => {}
                Err(e) => self.fail(sp, "claim", &e),
            }
        }

        let eligible = self.queue.head().is_some_and(|head| {
            self.sps.iter().any(|s| {
                let reg = s.registration();
                reg.sp_id == head.ext.sp_id && reg.mode(msg.msg_type) == ModePolicy::PassiveEligible
            })
        });
        if eligible {
            let v = self.queue.pop(env.now).expect("head checked");
            msg.extension = Some(v.ext.clone());
            return Outgoing {
                message: msg,
                mode: Some(ExtensionMode::Passive),
                dequeued: Some(v),
            };
        }
        Outgoing {
            message: msg,
            mode: None,
            dequeued: None,
        }
    }

    /// Tells the owning SP that its extension went out.
    pub fn on_transmitted(&mut self, msg: &ItsMessage, env: &mut Env<'_>) {
        let Some(sp) = msg.sp_id() else {
            return;
        };
        if let Some(i) = self.sps.iter().position(|s| s.registration().sp_id == sp) {
            let mut ctx = context(env, &mut self.queue);
            if let Err(e) = self.sps[i].on_transmitted(msg, &mut ctx) {
                self.fail(sp, "on_transmitted", &e);
            }
        }
    }

    /// Delivers a received message to every SP that handles its type.
    pub fn on_incoming(&mut self, msg: &ItsMessage, env: &mut Env<'_>) {
        if !self.enabled {
            return;
        }
        for i in 0..self.sps.len() {
            let reg = self.sps[i].registration();
            if !reg.handles(msg.msg_type) {
                continue;
            }
            let sp = reg.sp_id;
            let mut ctx = context(env, &mut self.queue);
            if let Err(e) = self.sps[i].on_message(msg, &mut ctx) {
                self.fail(sp, "on_message", &e);
            }
        }
    }

    pub fn on_timer(&mut self, sp: SpId, token: u64, env: &mut Env<'_>) {
        if !self.enabled {
            return;
        }
        if let Some(i) = self.sps.iter().position(|s| s.registration().sp_id == sp) {
            let mut ctx = context(env, &mut self.queue);
            if let Err(e) = self.sps[i].on_timer(token, &mut ctx) {
                self.fail(sp, "on_timer", &e);
            }
        }
    }

    pub fn take_queue_trace(&mut self) -> Vec<QueueRecord> {
        self.queue.take_trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LedgerContainer;
    use rand::SeedableRng;

    struct Probe {
        reg: SpRegistration,
        claim_ok: Option<bool>,
        seen: usize,
    }

    impl SubProtocol for Probe {
        fn registration(&self) -> &SpRegistration {
            &self.reg
        }
        fn claim(&mut self, _m: &ItsMessage, _c: &mut SpContext<'_>) -> Result<Option<VeeExtension>, SpError> {
            match self.claim_ok {
                Some(true) => Ok(Some(ext(99))),
                Some(false) => Err(SpError::Protocol("boom".into())),
                None => Ok(None),
            }
        }
        fn on_message(&mut self, _m: &ItsMessage, _c: &mut SpContext<'_>) -> Result<(), SpError> {
            self.seen += 1;
            Ok(())
        }
    }

    fn ext(id: u32) -> VeeExtension {
        VeeExtension::new(id, SpId::MANEUVER).with_ledger(LedgerContainer {
            localchain_id: 1,
            prev_block_hash: Digest::default(),
            info_flag: InfoFlag::None,
        })
    }

    struct Fixture {
        ledger: Localchain,
        keys: KeyRegistry,
        settlement: SettlementLedger,
        rng: ChaCha8Rng,
        effects: Vec<SpEffect>,
    }

    impl Fixture {
        fn new() -> Self {
            Fixture {
                ledger: Localchain::new(1),
                keys: KeyRegistry::new(),
                settlement: SettlementLedger::new(),
                rng: ChaCha8Rng::seed_from_u64(0),
                effects: Vec::new(),
            }
        }
        fn env(&mut self, now: SimTime) -> Env<'_> {
            Env {
                now,
                station: StationId(1),
                kin: Kinematics::default(),
                ledger: &mut self.ledger,
                keys: &self.keys,
                settlement: &mut self.settlement,
                rng: &mut self.rng,
                effects: &mut self.effects,
            }
        }
    }

    fn engine(claim: Option<bool>) -> VepEngine {
        let mut e = VepEngine::new(StationId(1));
        e.register(Box::new(Probe {
            reg: SpRegistration::passive_on_cam(SpId::MANEUVER).with(MsgType::McmRequest, ModePolicy::Interactive),
            claim_ok: claim,
            seen: 0,
        }));
        e
    }

    fn msg(t: MsgType) -> ItsMessage {
        ItsMessage::new(t, StationId(1), 0, 0, vec![])
    }

    #[test]
    fn passive_fifo() {
        let mut fx = Fixture::new();
        let mut e = engine(None);
        e.queue_mut().enqueue(ext(1), SimTime::ZERO);
        e.queue_mut().enqueue(ext(2), SimTime::ZERO);
        let out = e.on_outgoing(msg(MsgType::Cam), &mut fx.env(SimTime::from_ms(10)));
        assert_eq!(out.mode, Some(ExtensionMode::Passive));
        assert_eq!(out.message.extension.unwrap().event_id, 1);
        assert_eq!(e.queue().len(), 1);
        // DENM is not eligible
        let out = e.on_outgoing(msg(MsgType::Denm), &mut fx.env(SimTime::from_ms(11)));
        assert!(out.message.extension.is_none());
    }

    #[test]
    fn interactive_beats_passive() {
        let mut fx = Fixture::new();
        let mut e = engine(Some(true));
        e.queue_mut().enqueue(ext(1), SimTime::ZERO);
        let out = e.on_outgoing(msg(MsgType::McmRequest), &mut fx.env(SimTime::ZERO));
        assert_eq!(out.mode, Some(ExtensionMode::Interactive));
        assert_eq!(out.message.extension.unwrap().event_id, 99);
        assert_eq!(e.queue().len(), 1);
    }

    #[test]
    fn failing_sp_forwards_unextended() {
        let mut fx = Fixture::new();
        let mut e = engine(Some(false));
        let out = e.on_outgoing(msg(MsgType::McmRequest), &mut fx.env(SimTime::ZERO));
        assert!(out.message.extension.is_none());
        assert_eq!(e.failures(), 1);
    }

    #[test]
    fn disabled_engine_is_transparent() {
        let mut fx = Fixture::new();
        let mut e = VepEngine::disabled(StationId(1));
        e.queue_mut().enqueue(ext(1), SimTime::ZERO);
        let m = msg(MsgType::Cam);
        let out = e.on_outgoing(m.clone(), &mut fx.env(SimTime::ZERO));
        assert_eq!(out.message, m);
    }
}
