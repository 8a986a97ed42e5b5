//! PBFT over a lossy, reordering piggyback transport.
//!
//! The state machine here is transport-agnostic: every call returns a list
//! of [`PbftAction`]s that the caller maps onto its extension queue and
//! timers. Containers are only "sent" once the caller reports them through
//! [`ProcessTable::on_transmitted`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{ConsensusContainer, Digest, ProcessId, SimTime, Stage, StationId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("station already runs process {0}")]
    Busy(ProcessId),
    #[error("proposer {0} is not in the membership")]
    NotMember(StationId),
    #[error("membership of {0} is too small")]
    TooSmall(usize),
    #[error("station is configured silent")]
    Silent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PbftParams {
    /// Retransmission timeout after each own transmission.
    pub tau_d_ms: u64,
    /// Retransmissions allowed per station per process.
    pub max_retransmissions: u32,
    pub process_deadline_ms: u64,
    /// Re-send our own stage message when a peer is visibly stuck on it
    /// (it retransmits a vote we already counted, or sends an earlier
    /// stage than ours). Uses the same retransmission budget.
    pub assist_peers: bool,
}

impl Default for PbftParams {
    fn default() -> Self {
        PbftParams {
            tau_d_ms: 2200,
            max_retransmissions: 5,
            process_deadline_ms: 30_000,
            assist_peers: true,
        }
    }
}

/// Tolerated faulty nodes for a membership of `n`.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// PREPARE votes needed to move to the commit stage.
pub fn prepare_quorum(n: usize) -> usize {
    2 * max_faulty(n)
}

/// COMMIT votes, own included, needed to decide.
pub fn commit_quorum(n: usize) -> usize {
    2 * max_faulty(n) + 1
}

pub fn proposal_digest(payload: &[u8]) -> Digest {
    Digest(Sha256::digest(payload).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Primary,
    Replica,
    Onlooker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Pending,
    Decided,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    RetransmissionsExhausted,
    Deadline,
    /// Lost the precedence rule to a concurrent process.
    Yielded,
    /// The same proposer started a newer process.
    Superseded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultMode {
    #[default]
    Honest,
    /// Ignores everything and never transmits.
    Silent,
    /// Alternates between the true digest and a forged one on every
    /// container it creates.
    Equivocate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    Retransmit { generation: u64 },
    Deadline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PbftAction {
    Enqueue(ConsensusContainer),
    ArmTimer {
        process: ProcessId,
        at: SimTime,
        kind: TimerKind,
    },
    /// Drop queued containers of this process that were not yet sent.
    Purge(ProcessId),
    Decided {
        process: ProcessId,
        digest: Digest,
        delay: SimTime,
    },
    Failed {
        process: ProcessId,
        reason: FailReason,
    },
}

#[derive(Debug, Clone)]
pub struct PbftProcess {
    pub process_id: ProcessId,
    pub membership: Vec<StationId>,
    pub role: Role,
    /// Stage of the message this station currently owes.
    pub stage: Stage,
    pub proposal_digest: Digest,
    pub proposal_payload: Vec<u8>,
    pub start: SimTime,
    pub retransmissions_used: u32,
    pub outcome: Outcome,
    pub fail_reason: Option<FailReason>,
    pub decided_at: Option<SimTime>,
    pub prepare_votes: BTreeSet<StationId>,
    pub commit_votes: BTreeSet<StationId>,
    view: u32,
    own_sent: bool,
    generation: u64,
    /// Stages whose own message currently sits in the queue.
    queued: BTreeSet<Stage>,
    /// Stages whose own message went out at least once.
    sent: BTreeSet<Stage>,
    /// Highest stage each peer has been heard on.
    peer_stage: BTreeMap<StationId, Stage>,
}

impl PbftProcess {
    pub fn n(&self) -> usize {
        self.membership.len()
    }

    pub fn delay(&self) -> Option<SimTime> {
        self.decided_at.map(|t| t.saturating_sub(self.start))
    }

    fn is_member(&self, s: StationId) -> bool {
        self.membership.contains(&s)
    }
}

/// Per-station table of consensus processes.
#[derive(Debug, Clone)]
pub struct ProcessTable {
    station: StationId,
    params: PbftParams,
    fault: FaultMode,
    processes: BTreeMap<ProcessId, PbftProcess>,
    buffer: BTreeMap<ProcessId, Vec<(SimTime, StationId, ConsensusContainer)>>,
    active: Option<ProcessId>,
    last_nonce: u64,
    forge_toggle: bool,
}

impl ProcessTable {
    pub fn new(station: StationId, params: PbftParams, fault: FaultMode) -> Self {
        ProcessTable {
            station,
            params,
            fault,
            processes: BTreeMap::new(),
            buffer: BTreeMap::new(),
            active: None,
            last_nonce: 0,
            forge_toggle: false,
        }
    }

    pub fn station(&self) -> StationId {
        self.station
    }

    pub fn params(&self) -> &PbftParams {
        &self.params
    }

    pub fn fault(&self) -> FaultMode {
        self.fault
    }

    pub fn active(&self) -> Option<ProcessId> {
        self.active
    }

    pub fn get(&self, pid: &ProcessId) -> Option<&PbftProcess> {
        self.processes.get(pid)
    }

    pub fn processes(&self) -> impl Iterator<Item = &PbftProcess> {
        self.processes.values()
    }

    /// Starts a process as primary. The nonce is the trigger time in
    /// milliseconds, bumped if needed to stay strictly increasing, so that
    /// every station orders concurrent processes the same way.
    pub fn start(
        &mut self,
        now: SimTime,
        membership: Vec<StationId>,
        payload: Vec<u8>,
    ) -> Result<(ProcessId, Vec<PbftAction>), ConsensusError> {
        if self.fault == FaultMode::Silent {
            return Err(ConsensusError::Silent);
        }
        if let Some(a) = self.active {
            return Err(ConsensusError::Busy(a));
        }
        if !membership.contains(&self.station) {
            return Err(ConsensusError::NotMember(self.station));
        }
        if membership.len() < 2 {
            return Err(ConsensusError::TooSmall(membership.len()));
        }
        let nonce = now.whole_ms().max(self.last_nonce + 1);
        self.last_nonce = nonce;
        let pid = ProcessId {
            proposer: self.station,
            nonce,
        };
        let digest = proposal_digest(&payload);
        let proc_ = PbftProcess {
            process_id: pid,
            membership,
            role: Role::Primary,
            stage: Stage::PrePrepare,
            proposal_digest: digest,
            proposal_payload: payload,
            start: now,
            retransmissions_used: 0,
            outcome: Outcome::Pending,
            fail_reason: None,
            decided_at: None,
            prepare_votes: BTreeSet::new(),
            commit_votes: BTreeSet::new(),
            view: 0,
            own_sent: false,
            generation: 0,
            queued: BTreeSet::new(),
            sent: BTreeSet::new(),
            peer_stage: BTreeMap::new(),
        };
        self.processes.insert(pid, proc_);
        self.active = Some(pid);
        let mut out = vec![PbftAction::ArmTimer {
            process: pid,
            at: now + SimTime::from_ms(self.params.process_deadline_ms),
            kind: TimerKind::Deadline,
        }];
        self.enqueue_stage(pid, Stage::PrePrepare, &mut out);
        Ok((pid, out))
    }

    fn container(&mut self, pid: ProcessId, stage: Stage) -> ConsensusContainer {
        let p = &self.processes[&pid];
        let mut c = ConsensusContainer {
            process_id: pid,
            stage,
            view: p.view,
            proposal_digest: p.proposal_digest,
            proposal_payload: None,
            membership: Vec::new(),
        };
        if stage == Stage::PrePrepare {
            c.proposal_payload = Some(p.proposal_payload.clone());
            c.membership = p.membership.clone();
        }
        if self.fault == FaultMode::Equivocate {
            self.forge_toggle = !self.forge_toggle;
            if self.forge_toggle {
                let mut forged = p.proposal_payload.clone();
                forged.push(0xEE);
                c.proposal_digest = proposal_digest(&forged);
                if stage == Stage::PrePrepare {
                    c.proposal_payload = Some(forged);
                }
            }
        }
        c
    }

    fn enqueue_stage(&mut self, pid: ProcessId, stage: Stage, out: &mut Vec<PbftAction>) {
        let c = self.container(pid, stage);
        if let Some(p) = self.processes.get_mut(&pid) {
            p.queued.insert(stage);
        }
        out.push(PbftAction::Enqueue(c));
    }

    /// Handles a container received from `from`.
    pub fn on_container(&mut self, now: SimTime, from: StationId, c: &ConsensusContainer) -> Vec<PbftAction> {
        let mut out = Vec::new();
        if self.fault == FaultMode::Silent || from == self.station {
            return out;
        }
        let pid = c.process_id;
        if c.stage == Stage::PrePrepare {
            if from != pid.proposer {
                return out;
            }
            if !self.processes.contains_key(&pid) {
                self.on_pre_prepare(now, c, &mut out);
                return out;
            }
        }
        if !self.processes.contains_key(&pid) {
            let entries = self.buffer.entry(pid).or_default();
            entries.push((now, from, c.clone()));
            return out;
        }
        self.on_vote(now, from, c, &mut out);
        out
    }

    fn on_pre_prepare(&mut self, now: SimTime, c: &ConsensusContainer, out: &mut Vec<PbftAction>) {
        let pid = c.process_id;
        let Some(payload) = c.proposal_payload.clone() else {
            return;
        };
        if proposal_digest(&payload) != c.proposal_digest || c.membership.len() < 2 {
            return;
        }
        let member = c.membership.contains(&self.station);
        let role = if member { Role::Replica } else { Role::Onlooker };

        if member {
            if let Some(active) = self.active {
                let keep_current = if active.proposer == pid.proposer {
                    active.nonce >= pid.nonce
                } else {
                    (active.nonce, active.proposer) < (pid.nonce, pid.proposer)
                };
                if keep_current {
                    return;
                }
                let reason = if active.proposer == pid.proposer {
                    FailReason::Superseded
                } else {
                    FailReason::Yielded
                };
                self.fail(active, reason, out);
            }
        }

        let proc_ = PbftProcess {
            process_id: pid,
            membership: c.membership.clone(),
            role,
            stage: Stage::Prepare,
            proposal_digest: c.proposal_digest,
            proposal_payload: payload,
            start: now,
            retransmissions_used: 0,
            outcome: Outcome::Pending,
            fail_reason: None,
            decided_at: None,
            prepare_votes: BTreeSet::new(),
            commit_votes: BTreeSet::new(),
            view: c.view,
            own_sent: false,
            generation: 0,
            queued: BTreeSet::new(),
            sent: BTreeSet::new(),
            peer_stage: BTreeMap::new(),
        };
        self.processes.insert(pid, proc_);
        out.push(PbftAction::ArmTimer {
            process: pid,
            at: now + SimTime::from_ms(self.params.process_deadline_ms),
            kind: TimerKind::Deadline,
        });
        if member {
            self.active = Some(pid);
            self.enqueue_stage(pid, Stage::Prepare, out);
        }

        if let Some(early) = self.buffer.remove(&pid) {
            let deadline = SimTime::from_ms(self.params.process_deadline_ms);
            for (t, from, ec) in early {
                if now.saturating_sub(t) <= deadline {
                    self.on_vote(now, from, &ec, out);
                }
            }
        }
        self.progress(now, pid, out);
    }

    fn on_vote(&mut self, now: SimTime, from: StationId, c: &ConsensusContainer, out: &mut Vec<PbftAction>) {
        let pid = c.process_id;
        let Some(p) = self.processes.get_mut(&pid) else {
            return;
        };
        if !p.is_member(from) || c.proposal_digest != p.proposal_digest {
            return;
        }
        let fresh = match c.stage {
            Stage::PrePrepare => false,
            Stage::Prepare => from != pid.proposer && p.prepare_votes.insert(from),
            Stage::Commit => p.commit_votes.insert(from),
        };
        // A peer repeating a counted vote, or still on an earlier stage,
        // has not reached quorum yet: help it with our own copy. Anything
        // below the peer's best known stage is a stale queued copy and says
        // nothing about where the peer is now.
        let best = p.peer_stage.entry(from).or_insert(c.stage);
        let stale = c.stage < *best;
        *best = (*best).max(c.stage);
        let behind = !stale && c.stage < p.stage;
        let repeat = !stale && !fresh && c.stage != Stage::PrePrepare;
        let helper = p.role != Role::Onlooker;

        if self.params.assist_peers && helper && (repeat || behind) {
            self.assist(now, pid, c.stage, out);
        }
        if fresh {
            self.progress(now, pid, out);
        }
    }

    fn assist(&mut self, now: SimTime, pid: ProcessId, stage: Stage, out: &mut Vec<PbftAction>) {
        let params = self.params.clone();
        let Some(p) = self.processes.get_mut(&pid) else {
            return;
        };
        if p.outcome == Outcome::Failed || now.saturating_sub(p.start) > SimTime::from_ms(params.process_deadline_ms) {
            return;
        }
        // what we can offer for that stage
        let ours = match (stage, p.role) {
            (Stage::Prepare, Role::Replica) => Stage::Prepare,
            (Stage::Commit, _) => Stage::Commit,
            _ => return,
        };
        if !p.sent.contains(&ours) || p.queued.contains(&ours) {
            return;
        }
        if p.retransmissions_used >= params.max_retransmissions {
            return;
        }
        p.retransmissions_used += 1;
        self.enqueue_stage(pid, ours, out);
    }

    fn progress(&mut self, now: SimTime, pid: ProcessId, out: &mut Vec<PbftAction>) {
        let Some(p) = self.processes.get_mut(&pid) else {
            return;
        };
        if p.outcome != Outcome::Pending {
            return;
        }
        let n = p.n();
        let prepared = match p.role {
            Role::Onlooker => p.prepare_votes.len() >= prepare_quorum(n),
            _ => p.sent.contains(&p.role_first_stage()) && p.prepare_votes.len() >= prepare_quorum(n),
        };
        if p.stage != Stage::Commit && prepared {
            p.stage = Stage::Commit;
            p.generation += 1;
            p.own_sent = false;
            if p.role != Role::Onlooker {
                p.commit_votes.insert(self.station);
                self.enqueue_stage(pid, Stage::Commit, out);
            }
        }
        let p = self.processes.get_mut(&pid).unwrap();
        if p.stage == Stage::Commit && p.commit_votes.len() >= commit_quorum(n) {
            p.outcome = Outcome::Decided;
            p.decided_at = Some(now);
            p.generation += 1;
            out.push(PbftAction::Decided {
                process: pid,
                digest: p.proposal_digest,
                delay: now.saturating_sub(p.start),
            });
            if self.active == Some(pid) {
                self.active = None;
            }
        }
    }

    /// The caller transmitted one of our containers.
    pub fn on_transmitted(&mut self, now: SimTime, c: &ConsensusContainer) -> Vec<PbftAction> {
        let mut out = Vec::new();
        let pid = c.process_id;
        let tau_d = SimTime::from_ms(self.params.tau_d_ms);
        let station = self.station;
        let Some(p) = self.processes.get_mut(&pid) else {
            return out;
        };
        p.queued.remove(&c.stage);
        p.sent.insert(c.stage);
        if c.stage == Stage::Prepare && p.role == Role::Replica {
            p.prepare_votes.insert(station);
        }
        if p.outcome == Outcome::Pending && c.stage == p.stage_message() {
            p.own_sent = true;
            p.generation += 1;
            out.push(PbftAction::ArmTimer {
                process: pid,
                at: now + tau_d,
                kind: TimerKind::Retransmit {
                    generation: p.generation,
                },
            });
        }
        self.progress(now, pid, &mut out);
        out
    }

    pub fn on_timer(&mut self, now: SimTime, pid: ProcessId, kind: TimerKind) -> Vec<PbftAction> {
        let mut out = Vec::new();
        let deadline = SimTime::from_ms(self.params.process_deadline_ms);
        let budget = self.params.max_retransmissions;
        let Some(p) = self.processes.get_mut(&pid) else {
            return out;
        };
        if p.outcome != Outcome::Pending {
            return out;
        }
        let verdict = match kind {
            TimerKind::Deadline => Some(FailReason::Deadline),
            TimerKind::Retransmit { generation } => {
                if generation != p.generation || !p.own_sent {
                    return out;
                }
                if now.saturating_sub(p.start) > deadline {
                    Some(FailReason::Deadline)
                } else if p.retransmissions_used >= budget {
                    Some(FailReason::RetransmissionsExhausted)
                } else {
                    p.retransmissions_used += 1;
                    p.own_sent = false;
                    let stage = p.stage_message();
                    if !p.queued.contains(&stage) {
                        self.enqueue_stage(pid, stage, &mut out);
                    }
                    None
                }
            }
        };
        if let Some(reason) = verdict {
            self.fail(pid, reason, &mut out);
        }
        out
    }

    fn fail(&mut self, pid: ProcessId, reason: FailReason, out: &mut Vec<PbftAction>) {
        if let Some(p) = self.processes.get_mut(&pid) {
            if p.outcome != Outcome::Pending {
                return;
            }
            p.outcome = Outcome::Failed;
            p.fail_reason = Some(reason);
            p.generation += 1;
            p.queued.clear();
        }
        if self.active == Some(pid) {
            self.active = None;
        }
        out.push(PbftAction::Purge(pid));
        out.push(PbftAction::Failed { process: pid, reason });
    }

    /// Drops buffered early containers older than the process deadline.
    pub fn prune_buffer(&mut self, now: SimTime) {
        let deadline = SimTime::from_ms(self.params.process_deadline_ms);
        self.buffer.retain(|_, v| {
            v.retain(|(t, _, _)| now.saturating_sub(*t) <= deadline);
            !v.is_empty()
        });
    }

    pub fn buffered(&self) -> usize {
        self.buffer.values().map(Vec::len).sum()
    }
}

impl PbftProcess {
    /// The first message this station sends in the protocol.
    fn role_first_stage(&self) -> Stage {
        match self.role {
            Role::Primary => Stage::PrePrepare,
            _ => Stage::Prepare,
        }
    }

    /// The message currently owed: the primary owes its PRE_PREPARE until
    /// it reaches the commit stage.
    fn stage_message(&self) -> Stage {
        match (self.role, self.stage) {
            (Role::Primary, Stage::Prepare) => Stage::PrePrepare,
            (_, s) => s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<StationId> {
        (0..n).map(StationId).collect()
    }

    fn enqueued(actions: &[PbftAction]) -> Vec<ConsensusContainer> {
        actions
            .iter()
            .filter_map(|a| match a {
                PbftAction::Enqueue(c) => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!((max_faulty(4), prepare_quorum(4), commit_quorum(4)), (1, 2, 3));
        assert_eq!((max_faulty(7), prepare_quorum(7), commit_quorum(7)), (2, 4, 5));
        assert_eq!(max_faulty(3), 0);
    }

    #[test]
    fn busy_while_pending() {
        let mut t = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let (pid, acts) = t.start(SimTime::ZERO, ids(4), vec![1; 32]).unwrap();
        let pp = enqueued(&acts);
        assert_eq!(pp.len(), 1);
        assert_eq!(pp[0].membership.len(), 4);
        assert_eq!(pp[0].proposal_digest, proposal_digest(&[1; 32]));
        assert_eq!(
            t.start(SimTime::from_ms(5), ids(4), vec![]).unwrap_err(),
            ConsensusError::Busy(pid)
        );
    }

    #[test]
    fn replica_commits_after_two_prepares() {
        let mut prim = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let (_, acts) = prim.start(SimTime::ZERO, ids(4), vec![7; 32]).unwrap();
        let pp = enqueued(&acts).remove(0);
        prim.on_transmitted(SimTime::ZERO, &pp);

        let mut r = ProcessTable::new(StationId(1), PbftParams::default(), FaultMode::Honest);
        let acts = r.on_container(SimTime::from_ms(1), StationId(0), &pp);
        let prep = enqueued(&acts).remove(0);
        assert_eq!(prep.stage, Stage::Prepare);
        // own prepare out, plus one peer prepare = 2f
        r.on_transmitted(SimTime::from_ms(2), &prep);
        let mut peer = prep.clone();
        peer.process_id = pp.process_id;
        let acts = r.on_container(SimTime::from_ms(3), StationId(2), &peer);
        let commit = enqueued(&acts);
        assert_eq!(commit.len(), 1);
        assert_eq!(commit[0].stage, Stage::Commit);

        // duplicate prepare changes nothing
        let before = r.get(&pp.process_id).unwrap().prepare_votes.clone();
        r.on_container(SimTime::from_ms(4), StationId(2), &peer);
        assert_eq!(r.get(&pp.process_id).unwrap().prepare_votes, before);
    }

    #[test]
    fn primary_decides_with_own_and_two_commits() {
        let mut prim = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let (pid, acts) = prim.start(SimTime::ZERO, ids(4), vec![7; 32]).unwrap();
        let pp = enqueued(&acts).remove(0);
        prim.on_transmitted(SimTime::ZERO, &pp);
        let mut vote = pp.clone();
        vote.proposal_payload = None;
        vote.membership.clear();
        vote.stage = Stage::Prepare;
        prim.on_container(SimTime::from_ms(1), StationId(1), &vote);
        let acts = prim.on_container(SimTime::from_ms(2), StationId(2), &vote);
        assert_eq!(enqueued(&acts)[0].stage, Stage::Commit);
        vote.stage = Stage::Commit;
        prim.on_container(SimTime::from_ms(3), StationId(1), &vote);
        assert_eq!(prim.get(&pid).unwrap().outcome, Outcome::Pending);
        let acts = prim.on_container(SimTime::from_ms(4), StationId(3), &vote);
        assert!(acts.iter().any(|a| matches!(a, PbftAction::Decided { .. })));
        assert_eq!(prim.get(&pid).unwrap().delay(), Some(SimTime::from_ms(4)));
    }

    #[test]
    fn early_votes_are_buffered() {
        let mut prim = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let (_, acts) = prim.start(SimTime::ZERO, ids(4), vec![7; 32]).unwrap();
        let pp = enqueued(&acts).remove(0);
        let mut vote = pp.clone();
        vote.proposal_payload = None;
        vote.membership.clear();
        vote.stage = Stage::Prepare;

        let mut r = ProcessTable::new(StationId(1), PbftParams::default(), FaultMode::Honest);
        assert!(r.on_container(SimTime::from_ms(1), StationId(2), &vote).is_empty());
        assert_eq!(r.buffered(), 1);
        r.on_container(SimTime::from_ms(2), StationId(0), &pp);
        assert_eq!(r.buffered(), 0);
        assert!(r.get(&pp.process_id).unwrap().prepare_votes.contains(&StationId(2)));
    }

    #[test]
    fn deadline_fails() {
        let mut t = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let (pid, _) = t.start(SimTime::ZERO, ids(4), vec![]).unwrap();
        let acts = t.on_timer(SimTime::from_ms(30_001), pid, TimerKind::Deadline);
        assert!(acts.contains(&PbftAction::Failed {
            process: pid,
            reason: FailReason::Deadline
        }));
        assert_eq!(t.active(), None);
    }

    #[test]
    fn retransmission_budget() {
        let params = PbftParams {
            max_retransmissions: 2,
            ..PbftParams::default()
        };
        let mut t = ProcessTable::new(StationId(0), params, FaultMode::Honest);
        let (pid, acts) = t.start(SimTime::ZERO, ids(4), vec![]).unwrap();
        let pp = enqueued(&acts).remove(0);
        let mut now = SimTime::ZERO;
        let mut retrans = 0;
        loop {
            let acts = t.on_transmitted(now, &pp);
            let PbftAction::ArmTimer { at, kind, .. } = acts[0].clone() else {
                panic!("no timer")
            };
            now = at;
            let acts = t.on_timer(now, pid, kind);
            if acts.iter().any(|a| matches!(a, PbftAction::Failed { .. })) {
                break;
            }
            retrans += 1;
        }
        assert_eq!(retrans, 2);
        assert_eq!(t.get(&pid).unwrap().retransmissions_used, 2);
    }

    #[test]
    fn earlier_process_takes_precedence() {
        let mut a = ProcessTable::new(StationId(0), PbftParams::default(), FaultMode::Honest);
        let mut b = ProcessTable::new(StationId(1), PbftParams::default(), FaultMode::Honest);
        let (pa, acts_a) = a.start(SimTime::from_ms(100), ids(4), vec![1]).unwrap();
        let (pb, acts_b) = b.start(SimTime::from_ms(110), ids(4), vec![2]).unwrap();
        let pp_a = enqueued(&acts_a).remove(0);
        let pp_b = enqueued(&acts_b).remove(0);

        // b yields to the earlier process
        let acts = b.on_container(SimTime::from_ms(120), StationId(0), &pp_a);
        assert!(acts.contains(&PbftAction::Failed {
            process: pb,
            reason: FailReason::Yielded
        }));
        assert_eq!(b.active(), Some(pa));
        // a ignores the later one
        assert!(a.on_container(SimTime::from_ms(121), StationId(1), &pp_b).is_empty());
        assert_eq!(a.active(), Some(pa));
    }
}
