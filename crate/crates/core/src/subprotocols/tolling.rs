//! Zone tolling: a roadside unit advertises a zone and a fee, vehicles
//! entering the zone pay with a signed offer, and the unit settles each
//! offer once and acknowledges it.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::forge_block;
use crate::token::{TokenError, TokenWallet};
use crate::types::{
    Address, Digest, InfoFlag, ItsMessage, MsgType, SimTime, SpId, StationId, TokenContainer, TokenMechanism,
    TokenOutput, VeeExtension,
};
use crate::vep::{
    BlockRecordEvent, DelayRecord, ModePolicy, Record, SettlementRecord, SpContext, SpError, SpRegistration,
    SubProtocol,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Zone {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Advertisement carried in the announcement body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TollAdvert {
    pub zone: Zone,
    pub fee: u64,
    pub provider: Address,
}

impl TollAdvert {
    pub const LEN: usize = 72;

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(Self::LEN);
        for v in [self.zone.x_min, self.zone.x_max, self.zone.y_min, self.zone.y_max] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&self.fee.to_be_bytes());
        b.extend_from_slice(&self.provider.0 .0);
        b
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < Self::LEN {
            return None;
        }
        let f = |i: usize| f64::from_be_bytes(b[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        let mut provider = [0u8; 32];
        provider.copy_from_slice(&b[40..72]);
        Some(TollAdvert {
            zone: Zone {
                x_min: f(0),
                x_max: f(1),
                y_min: f(2),
                y_max: f(3),
            },
            fee: u64::from_be_bytes(b[32..40].try_into().expect("8 bytes")),
            provider: Address(Digest(provider)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TollingConfig {
    pub zone: Zone,
    pub fee: u64,
    /// How often a vehicle checks whether it is inside the zone.
    pub check_period_ms: u64,
    pub retransmit_ms: u64,
    pub max_retransmissions: u32,
    /// Per crossing, the vehicle discards the first k acknowledgements,
    /// with k uniform in 0..=this.
    pub forced_ack_loss_max: u32,
}

impl Default for TollingConfig {
    fn default() -> Self {
        TollingConfig {
            zone: Zone {
                x_min: 400.0,
                x_max: 600.0,
                y_min: -20.0,
                y_max: 20.0,
            },
            fee: 10,
            check_period_ms: 100,
            retransmit_ms: 300,
            max_retransmissions: 5,
            forced_ack_loss_max: 0,
        }
    }
}

fn ack_body(vehicle: StationId, event: u32) -> Vec<u8> {
    let mut b = vehicle.0.to_be_bytes().to_vec();
    b.extend_from_slice(&event.to_be_bytes());
    b
}

fn parse_ack(b: &[u8]) -> Option<(StationId, u32)> {
    Some((
        StationId(u32::from_be_bytes(b.get(0..4)?.try_into().ok()?)),
        u32::from_be_bytes(b.get(4..8)?.try_into().ok()?),
    ))
}

/// Roadside side: settles offers and answers every request for the same
/// transaction with the same acknowledgement.
pub struct TollProvider {
    reg: SpRegistration,
    station: StationId,
    address: Address,
    fee: u64,
    acks: BTreeMap<(StationId, u64), VeeExtension>,
    claims: VecDeque<VeeExtension>,
    stats: BTreeMap<String, f64>,
}

impl TollProvider {
    pub fn new(station: StationId, address: Address, fee: u64) -> Self {
        TollProvider {
            reg: SpRegistration {
                sp_id: SpId::TOLLING,
                policy: BTreeMap::from([
                    (MsgType::Tum, ModePolicy::Interactive),
                    (MsgType::TumAck, ModePolicy::Interactive),
                ]),
            },
            station,
            address,
            fee,
            acks: BTreeMap::new(),
            claims: VecDeque::new(),
            stats: BTreeMap::new(),
        }
    }

    fn bump(&mut self, k: &str) {
        *self.stats.entry(k.to_string()).or_default() += 1.0;
    }

    fn settle(
        &mut self,
        msg: &ItsMessage,
        ext: &VeeExtension,
        offer: &TokenContainer,
        ctx: &mut SpContext<'_>,
    ) -> VeeExtension {
        let reply = VeeExtension::new(ext.event_id, SpId::TOLLING);
        let pays_us = offer.outputs.iter().any(|o| o.address == self.address)
            && offer
                .outputs
                .iter()
                .filter(|o| o.address == self.address)
                .map(|o| o.amount)
                .sum::<u64>()
                >= self.fee;
        let result = if !ctx.verify(msg) {
            Err("bad message signature".to_string())
        } else if !pays_us {
            Err("offer does not pay the fee".to_string())
        } else {
            ctx.settlement
                .settle_offer(offer)
                .map_err(|e: TokenError| e.to_string())
        };
        let (flag, detail) = match result {
            Ok(_) => (InfoFlag::Success, "paid".to_string()),
            Err(e) => (InfoFlag::Failure, e),
        };
        let accepted = flag == InfoFlag::Success;
        self.bump(if accepted { "settled" } else { "rejected" });
        ctx.record(Record::Settlement(SettlementRecord {
            sp_id: SpId::TOLLING.0,
            event_id: ext.event_id,
            station: msg.sender.0,
            amount: if accepted { offer.amount } else { 0 },
            accepted,
            detail,
        }));
        let lc = ctx.ledger.make_container(flag);
        let mut prev = lc.prev_block_hash;
        if accepted {
            match forge_block(ctx.ledger.id(), lc.prev_block_hash, &[Some(msg)], flag, |_| true) {
                Ok(block) => {
                    prev = block.hash;
                    let hash = block.hash;
                    if ctx.ledger.append(block).is_ok() {
                        ctx.record(Record::Block(BlockRecordEvent {
                            station: self.station.0,
                            sp_id: SpId::TOLLING.0,
                            event_id: ext.event_id,
                            phase: "payment".into(),
                            hash,
                            messages: 1,
                            flag,
                            at_ms: ctx.now.as_ms(),
                        }));
                    }
                }
                Err(e) => log::warn!("{}: payment block not forged: {e}", self.station),
            }
        }
        reply.with_ledger(ctx.ledger.container_for(prev, flag))
    }
}

impl SubProtocol for TollProvider {
    fn registration(&self) -> &SpRegistration {
        &self.reg
    }

    fn claim(&mut self, msg: &ItsMessage, _ctx: &mut SpContext<'_>) -> Result<Option<VeeExtension>, SpError> {
        if msg.msg_type == MsgType::TumAck {
            return Ok(self.claims.pop_front());
        }
        Ok(None)
    }

    fn on_message(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if msg.msg_type != MsgType::Tum {
            return Ok(());
        }
        let Some(ext) = msg.extension.as_ref().filter(|e| e.sp_id == SpId::TOLLING) else {
            return Ok(());
        };
        let Some(offer) = ext.token.as_ref().filter(|t| t.mechanism == TokenMechanism::Offer) else {
            return Ok(());
        };
        self.bump("requests");
        let key = (msg.sender, offer.tx_nonce);
        let reply = match self.acks.get(&key).cloned() {
            Some(cached) => {
                self.bump("repeated_acks");
                cached
            }
            None => {
                let r = self.settle(msg, ext, offer, ctx);
                self.acks.insert(key, r.clone());
                r
            }
        };
        self.claims.push_back(reply);
        ctx.emit(MsgType::TumAck, ack_body(msg.sender, ext.event_id));
        Ok(())
    }

    fn stats(&self) -> BTreeMap<String, f64> {
        self.stats.clone()
    }
}

#[derive(Debug, Clone)]
enum Crossing {
    Outside,
    Requesting {
        event: u32,
        offer: TokenContainer,
        started: SimTime,
        retransmissions: u32,
        drop_acks: u32,
        generation: u64,
    },
    Done,
}

const K_CHECK: u64 = 0;

/// Vehicle side: pays once per zone crossing, retransmitting the same
/// signed offer until acknowledged.
pub struct TollClient {
    reg: SpRegistration,
    station: StationId,
    cfg: TollingConfig,
    wallet: TokenWallet,
    advert: Option<(StationId, TollAdvert)>,
    crossing: Crossing,
    crossings: u32,
    generation: u64,
    claims: VecDeque<VeeExtension>,
    stats: BTreeMap<String, f64>,
}

impl TollClient {
    pub fn new(station: StationId, cfg: TollingConfig, wallet: TokenWallet) -> Self {
        TollClient {
            reg: SpRegistration {
                sp_id: SpId::TOLLING,
                policy: BTreeMap::from([
                    (MsgType::Saem, ModePolicy::Interactive),
                    (MsgType::Tum, ModePolicy::Interactive),
                    (MsgType::TumAck, ModePolicy::Interactive),
                ]),
            },
            station,
            cfg,
            wallet,
            advert: None,
            crossing: Crossing::Outside,
            crossings: 0,
            generation: 0,
            claims: VecDeque::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.wallet.address()
    }

    fn bump(&mut self, k: &str, by: f64) {
        *self.stats.entry(k.to_string()).or_default() += by;
    }

    fn send(&mut self, event: u32, offer: &TokenContainer, ctx: &mut SpContext<'_>) {
        self.claims
            .push_back(VeeExtension::new(event, SpId::TOLLING).with_token(offer.clone()));
        ctx.emit(MsgType::Tum, event.to_be_bytes().to_vec());
        self.generation += 1;
        ctx.timer(
            SpId::TOLLING,
            ctx.now + SimTime::from_ms(self.cfg.retransmit_ms),
            self.generation,
        );
    }

    fn check(&mut self, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        let Some((_, adv)) = self.advert else {
            return Ok(());
        };
        let inside = adv.zone.contains(ctx.kin.x, ctx.kin.y);
        match (&self.crossing, inside) {
            (Crossing::Outside, true) => {
                self.crossings += 1;
                let event = (self.station.0 << 16) | (self.crossings & 0xFFFF);
                let out = TokenOutput {
                    address: adv.provider,
                    amount: adv.fee,
                };
                let offer = match self.wallet.make_offer(ctx.settlement, adv.fee, vec![out]) {
                    Ok(o) => o,
                    Err(e) => {
                        self.crossing = Crossing::Done;
                        ctx.record(Record::Abort {
                            sp_id: SpId::TOLLING.0,
                            station: self.station.0,
                            event_id: event,
                            reason: e.to_string(),
                        });
                        return Ok(());
                    }
                };
                let drop_acks = if self.cfg.forced_ack_loss_max > 0 {
                    ctx.rng.gen_range(0..=self.cfg.forced_ack_loss_max)
                } else {
                    0
                };
                self.bump("crossings", 1.0);
                self.send(event, &offer, ctx);
                self.crossing = Crossing::Requesting {
                    event,
                    offer,
                    started: ctx.now,
                    retransmissions: 0,
                    drop_acks,
                    generation: self.generation,
                };
            }
            (Crossing::Requesting { event, .. }, false) => {
                let event = *event;
                self.bump("left_unacknowledged", 1.0);
                ctx.record(Record::Abort {
                    sp_id: SpId::TOLLING.0,
                    station: self.station.0,
                    event_id: event,
                    reason: "left the zone before acknowledgement".into(),
                });
                self.crossing = Crossing::Outside;
            }
            (Crossing::Done, false) => self.crossing = Crossing::Outside,
            _ => {}
        }
        Ok(())
    }
}

impl SubProtocol for TollClient {
    fn registration(&self) -> &SpRegistration {
        &self.reg
    }

    fn on_start(&mut self, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        ctx.timer(SpId::TOLLING, SimTime::from_ms(self.cfg.check_period_ms), K_CHECK);
        Ok(())
    }

    fn claim(&mut self, msg: &ItsMessage, _ctx: &mut SpContext<'_>) -> Result<Option<VeeExtension>, SpError> {
        if msg.msg_type == MsgType::Tum {
            return Ok(self.claims.pop_front());
        }
        Ok(None)
    }

    fn on_message(&mut self, msg: &ItsMessage, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        match msg.msg_type {
            MsgType::Saem => {
                if let Some(adv) = TollAdvert::decode(&msg.body) {
                    self.advert = Some((msg.sender, adv));
                }
                Ok(())
            }
            MsgType::TumAck => {
                let Some((vehicle, event)) = parse_ack(&msg.body) else {
                    return Ok(());
                };
                if vehicle != self.station {
                    return Ok(());
                }
                let Crossing::Requesting {
                    event: current,
                    started,
                    retransmissions,
                    drop_acks,
                    ..
                } = &mut self.crossing
                else {
                    return Ok(());
                };
                if *current != event {
                    return Ok(());
                }
                if *drop_acks > 0 {
                    *drop_acks -= 1;
                    self.bump("acks_discarded", 1.0);
                    return Ok(());
                }
                let ok = msg
                    .extension
                    .as_ref()
                    .and_then(|e| e.ledger.as_ref())
                    .is_some_and(|l| l.info_flag == InfoFlag::Success);
                let (started, retrans) = (*started, *retransmissions);
                self.crossing = Crossing::Done;
                self.bump(if ok { "paid" } else { "refused" }, 1.0);
                self.bump("retransmissions", retrans as f64);
                ctx.record(Record::Delay(DelayRecord {
                    sp_id: SpId::TOLLING.0,
                    station: self.station.0,
                    run: event,
                    phase: "payment".into(),
                    delay_ms: ctx.now.saturating_sub(started).as_ms(),
                }));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn on_timer(&mut self, tok: u64, ctx: &mut SpContext<'_>) -> Result<(), SpError> {
        if tok == K_CHECK {
            ctx.timer(
                SpId::TOLLING,
                ctx.now + SimTime::from_ms(self.cfg.check_period_ms.max(1)),
                K_CHECK,
            );
            return self.check(ctx);
        }
        let max = self.cfg.max_retransmissions;
        let Crossing::Requesting {
            event,
            offer,
            retransmissions,
            generation,
            ..
        } = &mut self.crossing
        else {
            return Ok(());
        };
        if tok != *generation {
            return Ok(());
        }
        if *retransmissions >= max {
            let event = *event;
            self.crossing = Crossing::Done;
            self.bump("gave_up", 1.0);
            ctx.record(Record::Abort {
                sp_id: SpId::TOLLING.0,
                station: self.station.0,
                event_id: event,
                reason: "retransmissions exhausted".into(),
            });
            return Ok(());
        }
        *retransmissions += 1;
        let (event, offer) = (*event, offer.clone());
        self.send(event, &offer, ctx);
        if let Crossing::Requesting { generation, .. } = &mut self.crossing {
            *generation = self.generation;
        }
        Ok(())
    }

    fn stats(&self) -> BTreeMap<String, f64> {
        self.stats.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advert_round_trip() {
        let a = TollAdvert {
            zone: TollingConfig::default().zone,
            fee: 7,
            provider: Address(Digest([9; 32])),
        };
        let b = a.encode();
        assert_eq!(b.len(), TollAdvert::LEN);
        assert_eq!(TollAdvert::decode(&b), Some(a));
    }
}
