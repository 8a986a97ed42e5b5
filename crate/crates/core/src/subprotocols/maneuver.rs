//! Maneuver coordination with a verifiable record: the request and the
//! responses form the agreement block, and each participant later attests
//! the outcome on a CAM, forming the verification block.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::forge_block;
use crate::simnet::decode_kinematics;
use crate::token::{PromiseState, TokenWallet};
use crate::types::{
    Digest, InfoFlag, ItsMessage, MsgType, SimTime, SpId, StationId, TokenContainer, TokenMechanism, VeeExtension,
};
use crate::vep::{
    BlockRecordEvent, DelayRecord, Kinematics, ModePolicy, Record, SettlementRecord, SpContext, SpError,
    SpRegistration, SubProtocol,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverTrigger {
    /// Start a maneuver with the configured targets every period.
    Periodic,
    /// Start one when a neighbour's trajectory comes too close to ours.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManeuverConfig {
    pub trigger: ManeuverTrigger,
    pub trigger_period_ms: u64,
    pub first_trigger_ms: Option<u64>,
    /// Initiator gives up if the agreement is not complete by then.
    pub response_timeout_ms: u64,
    /// Delay between agreement and outcome attestation.
    pub verify_after_ms: u64,
    /// Relative speed change of the target vehicles.
    pub speed_change: f64,
    pub speed_ramp_ms: u64,
    /// Tokens promised to the targets; zero disables the promise.
    pub promise_amount: u64,
    /// Probability that a participant attests a failed maneuver.
    pub failure_probability: f64,
    pub overlap_horizon_ms: u64,
    pub overlap_distance_m: f64,
    /// Minimum gap between two overlap-triggered maneuvers.
    pub cooldown_ms: u64,
    /// Leave the initiator's own verdict out of the promise vote.
    pub exclude_proposer_verdict: bool,
}

impl Default for ManeuverConfig {
    fn default() -> Self {
        ManeuverConfig {
            trigger: ManeuverTrigger::Periodic,
            trigger_period_ms: 10_000,
            first_trigger_ms: None,
            response_timeout_ms: 1000,
            verify_after_ms: 5000,
            speed_change: 0.1,
            speed_ramp_ms: 5000,
            promise_amount: 0,
            failure_probability: 0.0,
            overlap_horizon_ms: 5000,
            overlap_distance_m: 3.0,
            cooldown_ms: 10_000,
            exclude_proposer_verdict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    Negotiating,
    Agreed,
    Verified,
    Aborted,
}

#[derive(Debug, Clone)]
struct Event {
    id: u32,
    initiator: StationId,
    targets: Vec<StationId>,
    participants: Vec<StationId>,
    state: EventState,
    started_at: SimTime,
    prev: Option<Digest>,
    request: Option<ItsMessage>,
    responses: BTreeMap<StationId, ItsMessage>,
    agreement: Option<Digest>,
    verify_enqueued_at: Option<SimTime>,
    verifications: BTreeMap<StationId, ItsMessage>,
    proposal: Option<TokenContainer>,
}

impl Event {
    fn participant(&self, s: StationId) -> bool {
        self.participants.contains(&s)
    }
}

const K_TRIGGER: u64 = 0;
const K_TIMEOUT: u64 = 1;
const K_VERIFY: u64 = 2;

fn token(kind: u64, event: u32) -> u64 {
    kind << 32 | event as u64
}

fn request_body(id: u32, targets: &[StationId]) -> Vec<u8> {
    let mut b = Vec::with_capacity(5 + 4 * targets.len());
    b.extend_from_slice(&id.to_be_bytes());
    b.push(targets.len() as u8);
    for t in targets {
        b.extend_from_slice(&t.0.to_be_bytes());
    }
    b
}

fn parse_request(b: &[u8]) -> Option<(u32, Vec<StationId>)> {
    let id = u32::from_be_bytes(b.get(0..4)?.try_into().ok()?);
    let n = *b.get(4)? as usize;
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let o = 5 + 4 * i;
        targets.push(StationId(u32::from_be_bytes(b.get(o..o + 4)?.try_into().ok()?)));
    }
    Some((id, targets))
}

/// Whether two constant-velocity trajectories come within `dist` metres
/// during the next `horizon_ms`, sampled every 100 ms.
pub fn trajectories_overlap(a: &Kinematics, b: &Kinematics, horizon_ms: u64, dist: f64) -> bool {
    (0..=horizon_ms / 100).any(|i| {
        let t = i as f64 * 0.1;
        let (ax, ay) = a.at_offset(t);
        let (bx, by) = b.at_offset(t);
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() < dist
    })
}

pub struct ManeuverSp {
    reg: SpRegistration,
    cfg: ManeuverConfig,
    station: StationId,
    initiator: bool,
    targets: Vec<StationId>,
    wallet: Option<TokenWallet>,
    events: BTreeMap<u32, Event>,
    claims: VecDeque<(MsgType, VeeExtension)>,
    counter: u32,
    last_start: Option<SimTime>,
    stats: BTreeMap<String, f64>,
}

impl ManeuverSp {
    pub fn new(
        station: StationId,
        cfg: ManeuverConfig,
        initiator: bool,
        targets: Vec<StationId>,
        wallet: Option<TokenWallet>,
    ) -> Self {
        let reg = SpRegistration::passive_on_cam(SpId::MANEUVER)
            .with(MsgType::McmRequest, ModePolicy::Interactive)
            .with(MsgType::McmResponse, ModePolicy::Interactive)
            // trajectory broadcasts are only listened to
            .with(MsgType::Other, ModePolicy::Interactive);
        ManeuverSp {
            reg,
            cfg,
            station,
            initiator,
            targets,
            wallet,
            events: BTreeMap::new(),
            claims: VecDeque::new(),
            counter: 0,
            last_start: None,
            stats: BTreeMap::new(),
        }
    }

    pub fn state(&self, event: u32) -> Option<EventState> {
        self.events.get(&event).map(|e| e.state)
    }

    fn bump(&mut self, k: &str) {
        *self.stats.entry(k.to_string()).or_default() += 1.0;
    }

    fn busy(&self) -> bool {
        self.events
            .values()
            .any(|e| e.initiator == self.station && matches!(e.state, EventState::Negotiating | EventState::Agreed))
    }

    fn start(&mut self, targets: Vec<StationId>, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if targets.is_empty() || self.busy() {
            self.bump("skipped");
            return Ok(());
        }
        self.counter = self.counter.wrapping_add(1);
        let id = (self.station.0 << 16) | (self.counter & 0xFFFF);
        let lc = ctx.ledger.make_container(InfoFlag::None);
        let mut ext = VeeExtension::new(id, SpId::MANEUVER).with_ledger(lc);
        let mut proposal = None;
        if self.cfg.promise_amount > 0 {
            if let Some(w) = self.wallet.as_mut() {
                let c = w.make_promise_proposal(ctx.settlement, self.cfg.promise_amount)?;
                ext = ext.with_token(c.clone());
                proposal = Some(c);
            }
        }
        let mut participants = targets.clone();
        participants.push(self.station);
        participants.sort();
        participants.dedup();
        self.events.insert(
            id,
            Event {
                id,
                initiator: self.station,
                targets: targets.clone(),
                participants,
                state: EventState::Negotiating,
                started_at: ctx.now,
                prev: None,
                request: None,
                responses: BTreeMap::new(),
                agreement: None,
                verify_enqueued_at: None,
                verifications: BTreeMap::new(),
                proposal,
            },
        );
        self.last_start = Some(ctx.now);
        self.bump("initiated");
        self.claims.push_back((MsgType::McmRequest, ext));
        ctx.emit(MsgType::McmRequest, request_body(id, &targets));
        ctx.timer(
            SpId::MANEUVER,
            ctx.now + SimTime::from_ms(self.cfg.response_timeout_ms),
            token(K_TIMEOUT, id),
        );
        Ok(())
    }

    fn on_request(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(ext) = msg.extension.as_ref().filter(|e| e.sp_id == SpId::MANEUVER) else {
            return Ok(());
        };
        let Some((id, targets)) = parse_request(&msg.body) else {
            return Err(SpError::Protocol("malformed maneuver request".into()));
        };
        if id != ext.event_id || self.events.contains_key(&id) || !ctx.verify(msg) {
            return Ok(());
        }
        let Some(lc) = ext.ledger.as_ref() else {
            return Ok(());
        };
        let mut participants = targets.clone();
        participants.push(msg.sender);
        participants.sort();
        participants.dedup();
        let proposal = ext
            .token
            .clone()
            .filter(|t| t.mechanism == TokenMechanism::PromiseProposal);
        let target = targets.contains(&self.station);
        self.events.insert(
            id,
            Event {
                id,
                initiator: msg.sender,
                targets,
                participants,
                state: EventState::Negotiating,
                started_at: ctx.now,
                prev: Some(lc.prev_block_hash),
                request: Some(msg.clone()),
                responses: BTreeMap::new(),
                agreement: None,
                verify_enqueued_at: None,
                verifications: BTreeMap::new(),
                proposal: proposal.clone(),
            },
        );
        if target {
            let mut reply = VeeExtension::new(id, SpId::MANEUVER)
                .with_ledger(ctx.ledger.container_for(lc.prev_block_hash, InfoFlag::None));
            if let (Some(p), Some(w)) = (&proposal, &self.wallet) {
                reply = reply.with_token(w.make_promise_output(p.tx_nonce)?);
            }
            self.claims.push_back((MsgType::McmResponse, reply));
            ctx.emit(MsgType::McmResponse, id.to_be_bytes().to_vec());
            ctx.timer(
                SpId::MANEUVER,
                ctx.now + SimTime::from_ms(self.cfg.response_timeout_ms),
                token(K_TIMEOUT, id),
            );
        }
        self.try_agreement(id, ctx)
    }

    fn try_agreement(&mut self, id: u32, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let station = self.station;
        let Some(e) = self.events.get_mut(&id) else {
            return Ok(());
        };
        if e.state != EventState::Negotiating {
            return Ok(());
        }
        let (Some(req), Some(prev)) = (&e.request, e.prev) else {
            return Ok(());
        };
        if !e.targets.iter().all(|t| e.responses.contains_key(t)) {
            return Ok(());
        }
        let slots: Vec<Option<&ItsMessage>> = e
            .participants
            .iter()
            .map(|p| {
                if *p == e.initiator {
                    Some(req)
                } else {
                    e.responses.get(p)
                }
            })
            .collect();
        let block = forge_block(ctx.ledger.id(), prev, &slots, InfoFlag::None, |m| ctx.verify(m))?;
        let hash = block.hash;
        ctx.ledger.append(block)?;
        e.agreement = Some(hash);
        e.state = EventState::Agreed;
        let n = e.participants.len();
        let started = e.started_at;
        let role_index = e.targets.iter().position(|t| *t == station);
        let participant = e.participant(station);
        let initiator = e.initiator == station;
        ctx.record(Record::Block(BlockRecordEvent {
            station: station.0,
            sp_id: SpId::MANEUVER.0,
            event_id: id,
            phase: "agreement".into(),
            hash,
            messages: n,
            flag: InfoFlag::None,
            at_ms: ctx.now.as_ms(),
        }));
        if initiator {
            self.bump("agreed");
            ctx.record(Record::Delay(DelayRecord {
                sp_id: SpId::MANEUVER.0,
                station: station.0,
                run: id,
                phase: "agreement".into(),
                delay_ms: ctx.now.saturating_sub(started).as_ms(),
            }));
        }
        if let Some(i) = role_index {
            let f = if i % 2 == 0 {
                1.0 + self.cfg.speed_change
            } else {
                1.0 - self.cfg.speed_change
            };
            ctx.effects.push(crate::vep::SpEffect::SpeedChange {
                factor: f,
                ramp_ms: self.cfg.speed_ramp_ms,
            });
        }
        if participant {
            ctx.timer(
                SpId::MANEUVER,
                ctx.now + SimTime::from_ms(self.cfg.verify_after_ms),
                token(K_VERIFY, id),
            );
        }
        Ok(())
    }

    fn verify_now(&mut self, id: u32, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(e) = self.events.get_mut(&id) else {
            return Ok(());
        };
        let Some(agreement) = e.agreement else {
            return Ok(());
        };
        let success = self.cfg.failure_probability <= 0.0 || ctx.rng.gen::<f64>() >= self.cfg.failure_probability;
        let flag = if success { InfoFlag::Success } else { InfoFlag::Failure };
        let mut ext = VeeExtension::new(id, SpId::MANEUVER).with_ledger(ctx.ledger.container_for(agreement, flag));
        if let (Some(p), Some(w)) = (&e.proposal, &self.wallet) {
            ext = ext.with_token(w.make_promise_verify(p.tx_nonce, success)?);
        }
        ctx.queue.enqueue(ext, ctx.now);
        e.verify_enqueued_at = Some(ctx.now);
        Ok(())
    }

    fn on_attestation(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(ext) = msg.extension.as_ref().filter(|e| e.sp_id == SpId::MANEUVER) else {
            return Ok(());
        };
        let Some(lc) = &ext.ledger else {
            return Ok(());
        };
        let Some(e) = self.events.get_mut(&ext.event_id) else {
            return Ok(());
        };
        if e.agreement != Some(lc.prev_block_hash) || !e.participant(msg.sender) {
            return Ok(());
        }
        e.verifications.entry(msg.sender).or_insert_with(|| msg.clone());
        self.try_verification(ext.event_id, ctx)
    }

    fn try_verification(&mut self, id: u32, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let station = self.station;
        let Some(e) = self.events.get_mut(&id) else {
            return Ok(());
        };
        if e.state != EventState::Agreed || e.verifications.len() < e.participants.len() {
            return Ok(());
        }
        let Some(agreement) = e.agreement else {
            return Ok(());
        };
        let slots: Vec<Option<&ItsMessage>> = e.participants.iter().map(|p| e.verifications.get(p)).collect();
        let all_ok = e.verifications.values().all(|m| {
            m.extension
                .as_ref()
                .and_then(|x| x.ledger.as_ref())
                .is_some_and(|l| l.info_flag == InfoFlag::Success)
        });
        let flag = if all_ok { InfoFlag::Success } else { InfoFlag::Failure };
        let block = forge_block(ctx.ledger.id(), agreement, &slots, flag, |m| ctx.verify(m))?;
        let hash = block.hash;
        ctx.ledger.append(block)?;
        e.state = EventState::Verified;
        ctx.record(Record::Block(BlockRecordEvent {
            station: station.0,
            sp_id: SpId::MANEUVER.0,
            event_id: id,
            phase: "verification".into(),
            hash,
            messages: e.participants.len(),
            flag,
            at_ms: ctx.now.as_ms(),
        }));
        if let Some(t0) = e.verify_enqueued_at {
            ctx.record(Record::Delay(DelayRecord {
                sp_id: SpId::MANEUVER.0,
                station: station.0,
                run: id,
                phase: "verification".into(),
                delay_ms: ctx.now.saturating_sub(t0).as_ms(),
            }));
        }
        if e.initiator != station {
            return Ok(());
        }
        let e = e.clone();
        self.bump("verified");
        if let Some(proposal) = e.proposal.clone() {
            self.settle(&e, proposal, ctx);
        }
        Ok(())
    }

    fn settle(&mut self, e: &Event, proposal: TokenContainer, ctx: &mut SpContext<'_>) {
        let result = (|| {
            let mut p = PromiseState::new(e.id, e.initiator, proposal, e.participants.iter().copied())?;
            p.exclude_proposer_verdict = self.cfg.exclude_proposer_verdict;
            for (s, m) in &e.responses {
                if let Some(t) = m.extension.as_ref().and_then(|x| x.token.as_ref()) {
                    p.add_output(*s, t)?;
                }
            }
            for (s, m) in &e.verifications {
                if let Some(t) = m.extension.as_ref().and_then(|x| x.token.as_ref()) {
                    p.add_verification(*s, t)?;
                }
            }
            ctx.settlement.settle_promise(&mut p)
        })();
        let (accepted, amount, detail) = match result {
            Ok(Some(r)) => (true, r.transfers.iter().map(|t| t.1).sum(), "paid".to_string()),
            Ok(None) => (false, 0, "not approved".to_string()),
            Err(err) => (false, 0, err.to_string()),
        };
        self.bump(if accepted { "settled" } else { "unsettled" });
        ctx.record(Record::Settlement(SettlementRecord {
            sp_id: SpId::MANEUVER.0,
            event_id: e.id,
            station: self.station.0,
            amount,
            accepted,
            detail,
        }));
    }
}

impl SubProtocol for ManeuverSp {
    fn registration(&self) -> &SpRegistration {
        &self.reg
    }

    fn on_start(&mut self, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if self.initiator && self.cfg.trigger == ManeuverTrigger::Periodic {
            let first = self.cfg.first_trigger_ms.unwrap_or(self.cfg.trigger_period_ms);
            ctx.timer(SpId::MANEUVER, SimTime::from_ms(first), token(K_TRIGGER, 0));
        }
        Ok(())
    }

    fn claim(&mut self, msg: &ItsMessage, _ctx: &mut SpContext<'_>) -> Result<Option<VeeExtension>, SpError> {
        match self.claims.front() {
            Some((t, _)) if *t == msg.msg_type => Ok(self.claims.pop_front().map(|c| c.1)),
            _ => Ok(None),
        }
    }

    fn on_message(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        match msg.msg_type {
            MsgType::McmRequest => self.on_request(msg, ctx),
            MsgType::McmResponse => {
                let Some(ext) = msg.extension.as_ref().filter(|e| e.sp_id == SpId::MANEUVER) else {
                    return Ok(());
                };
                let id = ext.event_id;
                let Some(e) = self.events.get_mut(&id) else {
                    return Ok(());
                };
                if !e.targets.contains(&msg.sender) {
                    return Ok(());
                }
                e.responses.entry(msg.sender).or_insert_with(|| msg.clone());
                self.try_agreement(id, ctx)
            }
            MsgType::Cam => self.on_attestation(msg, ctx),
            MsgType::Other => {
                if !self.initiator || self.cfg.trigger != ManeuverTrigger::Overlap {
                    return Ok(());
                }
                let Some(theirs) = decode_kinematics(&msg.body) else {
                    return Ok(());
                };
                let cooled = self
                    .last_start
                    .is_none_or(|t| ctx.now.saturating_sub(t) >= SimTime::from_ms(self.cfg.cooldown_ms));
                if cooled
                    && trajectories_overlap(
                        &ctx.kin,
                        &theirs,
                        self.cfg.overlap_horizon_ms,
                        self.cfg.overlap_distance_m,
                    )
                {
                    self.start(vec![msg.sender], ctx)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn on_timer(&mut self, tok: u64, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let (kind, id) = (tok >> 32, tok as u32);
        match kind {
            K_TRIGGER => {
                ctx.timer(
                    SpId::MANEUVER,
                    ctx.now + SimTime::from_ms(self.cfg.trigger_period_ms.max(1)),
                    token(K_TRIGGER, 0),
                );
                let targets = self.targets.clone();
                self.start(targets, ctx)
            }
            K_TIMEOUT => {
                let station = self.station;
                let Some(e) = self.events.get_mut(&id) else {
                    return Ok(());
                };
                if e.state != EventState::Negotiating {
                    return Ok(());
                }
                e.state = EventState::Aborted;
                let missing = e.targets.iter().filter(|t| !e.responses.contains_key(t)).count();
                let initiator = e.initiator == station;
                ctx.record(Record::Abort {
                    sp_id: SpId::MANEUVER.0,
                    station: station.0,
                    event_id: id,
                    reason: format!("{missing} response(s) missing at timeout"),
                });
                if initiator {
                    self.bump("aborted");
                }
                Ok(())
            }
            K_VERIFY => self.verify_now(id, ctx),
            _ => Ok(()),
        }
    }

    fn on_transmitted(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some(ext) = msg.extension.as_ref() else {
            return Ok(());
        };
        let id = ext.event_id;
        match msg.msg_type {
            MsgType::McmRequest => {
                if let Some(e) = self.events.get_mut(&id) {
                    e.prev = ext.ledger.as_ref().map(|l| l.prev_block_hash);
                    e.request = Some(msg.clone());
                }
                self.try_agreement(id, ctx)
            }
            MsgType::McmResponse => {
                if let Some(e) = self.events.get_mut(&id) {
                    e.responses.insert(self.station, msg.clone());
                }
                self.try_agreement(id, ctx)
            }
            MsgType::Cam => self.on_attestation(msg, ctx),
            _ => Ok(()),
        }
    }

    fn stats(&self) -> BTreeMap<String, f64> {
        self.stats.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_round_trip() {
        let t = vec![StationId(3), StationId(9)];
        assert_eq!(parse_request(&request_body(77, &t)), Some((77, t)));
        assert_eq!(parse_request(&[0, 0, 0, 1, 2, 0]), None);
    }

    #[test]
    fn overlap_detection() {
        let a = Kinematics {
            x: 0.0,
            y: 0.0,
            vx: 25.0,
            vy: 0.0,
        };
        let b = Kinematics {
            x: 50.0,
            y: 2.0,
            vx: 15.0,
            vy: 0.0,
        };
        assert!(trajectories_overlap(&a, &b, 5000, 3.0));
        let far = Kinematics { y: 10.0, ..b };
        assert!(!trajectories_overlap(&a, &far, 5000, 3.0));
    }
}
