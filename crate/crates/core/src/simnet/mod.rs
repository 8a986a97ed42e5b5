//! Deterministic discrete-event simulation of a broadcast channel shared by
//! ITS stations.
//!
//! Events are ordered by (time, station, insertion sequence). Every random
//! draw comes from a per-purpose stream: generator timing and sizes, each
//! station's sub-protocols, and the channel. Switching extensions on or off
//! therefore leaves upper-layer timing untouched.

mod mobility;
mod period;
mod services;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub use mobility::{Mobility, Path};
pub use period::{DistError, PeriodDistribution, PeriodPoint};
pub use services::{decode_kinematics, encode_kinematics, CamGenerator, CamSizeModel, FixedGenerator, Generator};

use crate::codec::{self, HeaderModel};
use crate::crypto::KeyRegistry;
use crate::ledger::Localchain;
use crate::token::SettlementLedger;
use crate::types::{ItsMessage, MsgType, SimTime, SpId, StationId};
use crate::vep::{Env, Kinematics, QueueRecord, Record, SpEffect, VepEngine};

/// Time on air of a frame of `len` bytes.
pub fn airtime_us(len: usize, bitrate_bps: f64, phy_overhead_us: f64) -> f64 {
    len as f64 * 8.0 / bitrate_bps * 1e6 + phy_overhead_us
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub bitrate_bps: f64,
    /// Fixed per-frame preamble and MAC framing time.
    pub phy_overhead_us: f64,
    /// Receive-side processing before a frame reaches the station.
    pub processing_ms: f64,
    /// Independent per-receiver delivery probability.
    pub pdr: f64,
    /// Receivers farther than this never hear the frame.
    pub range_m: Option<f64>,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            bitrate_bps: 6e6,
            phy_overhead_us: 0.0,
            processing_ms: 1.0,
            pdr: 1.0,
            range_m: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Placement {
    Mobile(Mobility),
    Fixed(Kinematics),
}

impl Placement {
    pub fn kinematics(&self, now: SimTime) -> Kinematics {
        match self {
            Placement::Mobile(m) => m.kinematics(now),
            Placement::Fixed(k) => *k,
        }
    }
}

pub struct StationSpec {
    pub id: StationId,
    pub placement: Placement,
    pub generators: Vec<Generator>,
    pub engine: VepEngine,
    pub localchain_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration: SimTime,
    pub seed: u64,
    pub channel: ChannelModel,
    pub header: HeaderModel,
    /// Keep one record per transmitted frame.
    pub record_packets: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Periodic upper-layer traffic.
    Generator,
    /// Event-triggered traffic requested by a sub-protocol.
    SubProtocol,
}

/// One transmitted frame, shared by every receiver.
#[derive(Debug, Clone)]
pub struct Frame {
    pub message: ItsMessage,
    pub len: usize,
    pub ext_len: usize,
    pub tx_time: SimTime,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub t_ms: f64,
    pub station: u32,
    pub msg_type: MsgType,
    pub len: usize,
    pub ext_len: usize,
    pub sp_id: Option<u16>,
    pub airtime_us: f64,
    pub containers: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub n_tx: BTreeMap<u32, u64>,
    /// Receptions keyed `"sender->receiver"`.
    pub n_rx: BTreeMap<String, u64>,
    pub tx_by_type: BTreeMap<String, u64>,
    pub packets: u64,
    pub extended_packets: u64,
    pub frame_bytes: u64,
    pub ext_bytes: u64,
    pub min_frame: Option<usize>,
    pub max_frame: Option<usize>,
    pub busy_us: f64,
    pub ext_airtime_us: f64,
    pub wall_us: u64,
    pub cbr: f64,
    /// Extension bytes over non-extension bytes, percent.
    pub overhead_pct: f64,
    /// Delivered over attempted receptions.
    pub pdr_measured: f64,
    pub sp_failures: u64,
    pub queue_dropped: u64,
    pub invariant_violations: u64,
    pub events: u64,
}

pub struct SimOutput {
    pub metrics: SimMetrics,
    pub records: Vec<Record>,
    pub queue_trace: Vec<QueueRecord>,
    pub ledgers: BTreeMap<StationId, Localchain>,
    pub settlement: SettlementLedger,
    pub sp_stats: BTreeMap<String, BTreeMap<String, f64>>,
    pub packets: Vec<PacketRecord>,
    /// Hash over every transmitted frame.
    pub trace_digest: String,
    /// Hash over the base part of generator traffic only.
    pub generator_digest: String,
    pub violations: Vec<String>,
}

#[derive(Debug)]
enum EventKind {
    Generate(usize),
    SpTimer { sp: SpId, token: u64 },
    Deliver(Arc<Frame>),
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    station: usize,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // min-heap on (time, station, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.station, other.seq).cmp(&(self.time, self.station, self.seq))
    }
}

struct Station {
    id: StationId,
    placement: Placement,
    generators: Vec<Generator>,
    engine: VepEngine,
    ledger: Localchain,
    up_rng: ChaCha8Rng,
    sp_rng: ChaCha8Rng,
    /// Last sequence number per message type, so that one service's
    /// traffic never renumbers another's.
    seqs: [u64; MsgType::ALL.len()],
}

impl Station {
    fn next_seq(&self, t: MsgType) -> u64 {
        self.seqs[t.code() as usize - 1] + 1
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub struct Simulation {
    cfg: SimConfig,
    stations: Vec<Station>,
    keys: KeyRegistry,
    settlement: SettlementLedger,
    channel_rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    next_event: u64,
    metrics: SimMetrics,
    records: Vec<Record>,
    packets: Vec<PacketRecord>,
    trace: Sha256,
    generator_trace: Sha256,
    violations: Vec<String>,
    attempts: u64,
    delivered: u64,
}

impl Simulation {
    /// Stations are processed in ascending id order on ties.
    pub fn new(cfg: SimConfig, mut specs: Vec<StationSpec>, keys: KeyRegistry, settlement: SettlementLedger) -> Self {
        specs.sort_by_key(|s| s.id);
        let stations = specs
            .into_iter()
            .map(|s| Station {
                id: s.id,
                placement: s.placement,
                generators: s.generators,
                engine: s.engine,
                ledger: Localchain::new(s.localchain_id),
                up_rng: stream(cfg.seed, 3 * s.id.0 as u64),
                sp_rng: stream(cfg.seed, 3 * s.id.0 as u64 + 1),
                seqs: [0; MsgType::ALL.len()],
            })
            .collect();
        Simulation {
            channel_rng: stream(cfg.seed, u64::MAX),
            cfg,
            stations,
            keys,
            settlement,
            heap: BinaryHeap::new(),
            next_event: 0,
            metrics: SimMetrics::default(),
            records: Vec::new(),
            packets: Vec::new(),
            trace: Sha256::new(),
            generator_trace: Sha256::new(),
            violations: Vec::new(),
            attempts: 0,
            delivered: 0,
        }
    }

    fn push(&mut self, time: SimTime, station: usize, kind: EventKind) {
        self.next_event += 1;
        self.heap.push(Event {
            time,
            station,
            seq: self.next_event,
            kind,
        });
    }

    /// Runs one engine callback with the station's environment and returns
    /// the effects it requested.
    fn with_env(&mut self, idx: usize, now: SimTime, f: impl FnOnce(&mut VepEngine, &mut Env<'_>)) -> Vec<SpEffect> {
        let mut effects = Vec::new();
        let st = &mut self.stations[idx];
        let kin = st.placement.kinematics(now);
        let mut env = Env {
            now,
            station: st.id,
            kin,
            ledger: &mut st.ledger,
            keys: &self.keys,
            settlement: &mut self.settlement,
            rng: &mut st.sp_rng,
            effects: &mut effects,
        };
        f(&mut st.engine, &mut env);
        effects
    }

    fn apply(&mut self, idx: usize, now: SimTime, effects: Vec<SpEffect>) {
        let mut work: std::collections::VecDeque<SpEffect> = effects.into();
        while let Some(e) = work.pop_front() {
            match e {
                SpEffect::Timer { sp, at, token } => {
                    let at = if at < now { now } else { at };
                    self.push(at, idx, EventKind::SpTimer { sp, token });
                }
                SpEffect::Emit { msg_type, body } => {
                    let more = self.transmit(idx, now, msg_type, body, Origin::SubProtocol);
                    work.extend(more);
                }
                SpEffect::SpeedChange { factor, ramp_ms } => {
                    if let Placement::Mobile(m) = &mut self.stations[idx].placement {
                        m.speed_change(now, factor, ramp_ms);
                    }
                }
                SpEffect::Record(r) => self.records.push(r),
            }
        }
    }

    fn violation(&mut self, what: String) {
        log::error!("invariant violation: {what}");
        self.metrics.invariant_violations += 1;
        self.violations.push(what);
    }

    fn transmit(
        &mut self,
        idx: usize,
        now: SimTime,
        msg_type: MsgType,
        body: Vec<u8>,
        origin: Origin,
    ) -> Vec<SpEffect> {
        let st = &mut self.stations[idx];
        let sender = st.id;
        let seq = st.next_seq(msg_type);
        st.seqs[msg_type.code() as usize - 1] = seq;
        let mut msg = ItsMessage::new(msg_type, sender, now.whole_ms(), seq, body);
        match self.keys.sign(sender, &msg.signing_payload()) {
            Ok(sig) => msg.signature = sig,
            Err(e) => {
                self.violation(format!("{sender}: cannot sign: {e}"));
                return Vec::new();
            }
        }

        let mut out = None;
        let mut effects = self.with_env(idx, now, |eng, env| out = Some(eng.on_outgoing(msg, env)));
        let msg = out.expect("engine returned").message;

        let bytes = match codec::encode_with(&msg, &self.cfg.header) {
            Ok(b) => b,
            Err(e) => {
                self.violation(format!("{sender}: encoding failed: {e}"));
                return effects;
            }
        };
        let decoded = match codec::decode(&bytes) {
            Ok(d) => d,
            Err(e) => {
                self.violation(format!("{sender}: own frame does not decode: {e}"));
                return effects;
            }
        };
        if decoded.message != msg {
            self.violation(format!("{sender}: frame round trip changed seq {}", msg.seq));
        }
        let len = bytes.len();
        let ext_len = len - decoded.base_len;
        let ch = &self.cfg.channel;
        let air = airtime_us(len, ch.bitrate_bps, ch.phy_overhead_us);

        let m = &mut self.metrics;
        *m.n_tx.entry(sender.0).or_default() += 1;
        *m.tx_by_type.entry(msg_type.to_string()).or_default() += 1;
        m.packets += 1;
        m.frame_bytes += len as u64;
        m.busy_us += air;
        if ext_len > 0 {
            m.extended_packets += 1;
            m.ext_bytes += ext_len as u64;
            m.ext_airtime_us += ext_len as f64 * 8.0 / ch.bitrate_bps * 1e6;
        }
        m.min_frame = Some(m.min_frame.map_or(len, |x| x.min(len)));
        m.max_frame = Some(m.max_frame.map_or(len, |x| x.max(len)));
        if self.cfg.record_packets {
            self.packets.push(PacketRecord {
                t_ms: now.as_ms(),
                station: sender.0,
                msg_type,
                len,
                ext_len,
                sp_id: msg.sp_id().map(|s| s.0),
                airtime_us: air,
                containers: msg.extension.as_ref().map(|e| e.summary()).unwrap_or_default(),
            });
        }
        self.trace.update(now.as_us().to_be_bytes());
        self.trace.update(sender.0.to_be_bytes());
        self.trace.update(&bytes);
        if origin == Origin::Generator {
            self.generator_trace.update(now.as_us().to_be_bytes());
            self.generator_trace.update(sender.0.to_be_bytes());
            self.generator_trace.update(&bytes[..decoded.base_len]);
        }

        let deliver_at = now + SimTime::from_ms_f64(air / 1000.0 + self.cfg.channel.processing_ms);
        let frame = Arc::new(Frame {
            message: decoded.message,
            len,
            ext_len,
            tx_time: now,
            origin,
        });
        let here = self.stations[idx].placement.kinematics(now);
        for r in 0..self.stations.len() {
            if r == idx {
                continue;
            }
            if let Some(range) = self.cfg.channel.range_m {
                let k = self.stations[r].placement.kinematics(now);
                if ((k.x - here.x).powi(2) + (k.y - here.y).powi(2)).sqrt() > range {
                    continue;
                }
            }
            self.attempts += 1;
            let pdr = self.cfg.channel.pdr;
            if pdr >= 1.0 || self.channel_rng.gen::<f64>() < pdr {
                self.delivered += 1;
                let key = format!("{}->{}", sender.0, self.stations[r].id.0);
                *self.metrics.n_rx.entry(key).or_default() += 1;
                self.push(deliver_at, r, EventKind::Deliver(frame.clone()));
            }
        }

        let signed = frame.message.clone();
        effects.extend(self.with_env(idx, now, |eng, env| eng.on_transmitted(&signed, env)));
        effects
    }

    pub fn run(mut self) -> SimOutput {
        for idx in 0..self.stations.len() {
            let firsts: Vec<SimTime> = {
                let st = &mut self.stations[idx];
                let rng = &mut st.up_rng;
                st.generators
                    .iter()
                    .map(|g| match g {
                        Generator::Cam(c) => c.first_emission(rng),
                        Generator::Fixed(f) => f.first_emission(rng),
                    })
                    .collect()
            };
            for (g, t) in firsts.into_iter().enumerate() {
                self.push(t, idx, EventKind::Generate(g));
            }
            let eff = self.with_env(idx, SimTime::ZERO, |eng, env| eng.start(env));
            self.apply(idx, SimTime::ZERO, eff);
        }

        while let Some(ev) = self.heap.pop() {
            if ev.time > self.cfg.duration {
                break;
            }
            self.metrics.events += 1;
            let now = ev.time;
            let idx = ev.station;
            match ev.kind {
                EventKind::Generate(g) => {
                    let (msg_type, body, next) = {
                        let st = &mut self.stations[idx];
                        let kin = st.placement.kinematics(now);
                        let seq = st.next_seq(MsgType::Cam);
                        match &mut st.generators[g] {
                            Generator::Cam(c) => {
                                let body = c.body(now, seq, &mut st.up_rng);
                                (MsgType::Cam, body, c.next_period(&mut st.up_rng))
                            }
                            Generator::Fixed(f) => (f.msg_type, f.body(&kin), SimTime::from_ms(f.period_ms.max(1))),
                        }
                    };
                    self.push(now + next, idx, EventKind::Generate(g));
                    let eff = self.transmit(idx, now, msg_type, body, Origin::Generator);
                    self.apply(idx, now, eff);
                }
                EventKind::SpTimer { sp, token } => {
                    let eff = self.with_env(idx, now, |eng, env| eng.on_timer(sp, token, env));
                    self.apply(idx, now, eff);
                }
                EventKind::Deliver(frame) => {
                    let eff = self.with_env(idx, now, |eng, env| eng.on_incoming(&frame.message, env));
                    self.apply(idx, now, eff);
                }
            }
        }
        self.finish()
    }

    fn finish(mut self) -> SimOutput {
        let wall = self.cfg.duration.as_us();
        let m = &mut self.metrics;
        m.wall_us = wall;
        m.cbr = if wall > 0 { m.busy_us / wall as f64 } else { 0.0 };
        let base = m.frame_bytes - m.ext_bytes;
        m.overhead_pct = if base > 0 {
            m.ext_bytes as f64 / base as f64 * 100.0
        } else {
            0.0
        };
        m.pdr_measured = if self.attempts > 0 {
            self.delivered as f64 / self.attempts as f64
        } else {
            1.0
        };
        let mut queue_trace = Vec::new();
        let mut ledgers = BTreeMap::new();
        let mut sp_stats = BTreeMap::new();
        for st in &mut self.stations {
            m.sp_failures += st.engine.failures();
            m.queue_dropped += st.engine.queue().dropped();
            queue_trace.extend(st.engine.take_queue_trace());
            for sp in st.engine.sub_protocols() {
                let stats = sp.stats();
                if !stats.is_empty() {
                    sp_stats.insert(format!("{}/sp{}", st.id.0, sp.registration().sp_id.0), stats);
                }
            }
            ledgers.insert(st.id, st.ledger.clone());
        }
        queue_trace.sort_by(|a, b| a.tx_ms.total_cmp(&b.tx_ms).then(a.station.cmp(&b.station)));
        SimOutput {
            metrics: self.metrics,
            records: self.records,
            queue_trace,
            ledgers,
            settlement: self.settlement,
            sp_stats,
            packets: self.packets,
            trace_digest: hex::encode(self.trace.finalize()),
            generator_digest: hex::encode(self.generator_trace.finalize()),
            violations: self.violations,
        }
    }
}
