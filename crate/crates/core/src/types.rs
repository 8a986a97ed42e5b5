//! Domain types shared by every module: station identities, ITS message
//! envelopes, and the VEE extension with its containers.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Identity of an ITS station within a scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

/// Virtual time since scenario start, in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_ms_f64(ms: f64) -> Self {
        SimTime((ms * 1_000.0).round().max(0.0) as u64)
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Whole milliseconds, as carried in message timestamps.
    pub fn whole_ms(self) -> u64 {
        self.0 / 1_000
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Opaque signature bytes produced by a signer backend.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct SignatureBytes(pub Vec<u8>);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig[{}B]", self.0.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    Cam,
    McmRequest,
    McmResponse,
    Denm,
    Saem,
    Tum,
    TumAck,
    Other,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::Cam,
        MsgType::McmRequest,
        MsgType::McmResponse,
        MsgType::Denm,
        MsgType::Saem,
        MsgType::Tum,
        MsgType::TumAck,
        MsgType::Other,
    ];

    pub fn code(self) -> u8 {
        match self {
            MsgType::Cam => 1,
            MsgType::McmRequest => 2,
            MsgType::McmResponse => 3,
            MsgType::Denm => 4,
            MsgType::Saem => 5,
            MsgType::Tum => 6,
            MsgType::TumAck => 7,
            MsgType::Other => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        MsgType::ALL.iter().copied().find(|t| t.code() == code)
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MsgType::Cam => "CAM",
            MsgType::McmRequest => "MCM_REQUEST",
            MsgType::McmResponse => "MCM_RESPONSE",
            MsgType::Denm => "DENM",
            MsgType::Saem => "SAEM",
            MsgType::Tum => "TUM",
            MsgType::TumAck => "TUMACK",
            MsgType::Other => "OTHER",
        };
        f.write_str(s)
    }
}

/// An underlying-protocol message, optionally carrying one VEE.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItsMessage {
    pub msg_type: MsgType,
    pub sender: StationId,
    pub timestamp_ms: u64,
    pub seq: u64,
    pub body: Vec<u8>,
    pub signature: SignatureBytes,
    pub extension: Option<VeeExtension>,
}

impl ItsMessage {
    /// Unsigned message without extension.
    pub fn new(msg_type: MsgType, sender: StationId, timestamp_ms: u64, seq: u64, body: Vec<u8>) -> Self {
        ItsMessage {
            msg_type,
            sender,
            timestamp_ms,
            seq,
            body,
            signature: SignatureBytes::default(),
            extension: None,
        }
    }

    /// Bytes covered by the message signature. The extension is not part of
    /// them: containers that need authentication carry their own signature.
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.body.len());
        out.push(self.msg_type.code());
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&self.timestamp_ms.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn sp_id(&self) -> Option<SpId> {
        self.extension.as_ref().map(|e| e.sp_id)
    }
}

/// Sub-protocol identifier carried in every VEE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpId(pub u16);

impl SpId {
    pub const MANEUVER: SpId = SpId(1);
    pub const VIEW: SpId = SpId(2);
    pub const TOLLING: SpId = SpId(3);
}

/// The piggyback payload appended after a base ITS message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VeeExtension {
    pub event_id: u32,
    pub sp_id: SpId,
    pub ledger: Option<LedgerContainer>,
    pub consensus: Option<ConsensusContainer>,
    pub token: Option<TokenContainer>,
}

impl VeeExtension {
    pub fn new(event_id: u32, sp_id: SpId) -> Self {
        VeeExtension {
            event_id,
            sp_id,
            ledger: None,
            consensus: None,
            token: None,
        }
    }

    /// Short human-readable list of the carried containers, such as
    /// `ledger+PREPARE 1:5000`.
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if let Some(l) = &self.ledger {
            parts.push(format!("ledger {}", l.info_flag));
        }
        if let Some(c) = &self.consensus {
            parts.push(format!("{:?} {}", c.stage, c.process_id));
        }
        if let Some(t) = &self.token {
            parts.push(format!("{:?}", t.mechanism));
        }
        parts.join("+")
    }

    pub fn with_ledger(mut self, c: LedgerContainer) -> Self {
        self.ledger = Some(c);
        self
    }

    pub fn with_consensus(mut self, c: ConsensusContainer) -> Self {
        self.consensus = Some(c);
        self
    }

    pub fn with_token(mut self, c: TokenContainer) -> Self {
        self.token = Some(c);
        self
    }

    pub fn has_container(&self) -> bool {
        self.ledger.is_some() || self.consensus.is_some() || self.token.is_some()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InfoFlag {
    #[default]
    None,
    Success,
    Failure,
}

impl fmt::Display for InfoFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfoFlag::None => "NONE",
            InfoFlag::Success => "SUCCESS",
            InfoFlag::Failure => "FAILURE",
        })
    }
}

impl InfoFlag {
    pub fn code(self) -> u8 {
        match self {
            InfoFlag::None => 0,
            InfoFlag::Success => 1,
            InfoFlag::Failure => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(InfoFlag::None),
            1 => Some(InfoFlag::Success),
            2 => Some(InfoFlag::Failure),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerContainer {
    pub localchain_id: u32,
    pub prev_block_hash: Digest,
    pub info_flag: InfoFlag,
}

/// Identifies one consensus instance: the proposer and its local nonce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcessId {
    pub proposer: StationId,
    pub nonce: u64,
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.proposer.0, self.nonce)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    PrePrepare,
    Prepare,
    Commit,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::PrePrepare => 0,
            Stage::Prepare => 1,
            Stage::Commit => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Stage::PrePrepare),
            1 => Some(Stage::Prepare),
            2 => Some(Stage::Commit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusContainer {
    pub process_id: ProcessId,
    pub stage: Stage,
    pub view: u32,
    pub proposal_digest: Digest,
    /// Only present in PRE_PREPARE.
    pub proposal_payload: Option<Vec<u8>>,
    /// Only non-empty in PRE_PREPARE.
    pub membership: Vec<StationId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenMechanism {
    Offer,
    PromiseProposal,
    PromiseOutput,
    PromiseVerify,
}

impl TokenMechanism {
    pub fn code(self) -> u8 {
        match self {
            TokenMechanism::Offer => 0,
            TokenMechanism::PromiseProposal => 1,
            TokenMechanism::PromiseOutput => 2,
            TokenMechanism::PromiseVerify => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TokenMechanism::Offer),
            1 => Some(TokenMechanism::PromiseProposal),
            2 => Some(TokenMechanism::PromiseOutput),
            3 => Some(TokenMechanism::PromiseVerify),
            _ => None,
        }
    }
}

/// Token address: SHA-256 of the holder's public key bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub Digest);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenOutput {
    pub address: Address,
    pub amount: u64,
}

/// Token transaction data. For `PromiseVerify` the `amount` field carries
/// the verdict (1 = event succeeded, 0 = failed).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenContainer {
    pub mechanism: TokenMechanism,
    pub amount: u64,
    pub outputs: Vec<TokenOutput>,
    pub tx_nonce: u64,
    pub tx_signature: SignatureBytes,
    pub certificate: Vec<u8>,
}

impl TokenContainer {
    /// Bytes covered by `tx_signature`.
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 40 * self.outputs.len());
        out.push(self.mechanism.code());
        out.extend_from_slice(&self.amount.to_be_bytes());
        out.extend_from_slice(&(self.outputs.len() as u32).to_be_bytes());
        for o in &self.outputs {
            out.extend_from_slice(&o.address.0 .0);
            out.extend_from_slice(&o.amount.to_be_bytes());
        }
        out.extend_from_slice(&self.tx_nonce.to_be_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msg_type_codes_round_trip() {
        for t in MsgType::ALL {
            assert_eq!(MsgType::from_code(t.code()), Some(t));
        }
        assert_eq!(MsgType::from_code(0), None);
    }

    #[test]
    fn signing_payload_ignores_extension() {
        let mut m = ItsMessage::new(MsgType::Cam, StationId(3), 10, 1, vec![1, 2, 3]);
        let before = m.signing_payload();
        m.extension = Some(VeeExtension::new(1, SpId::VIEW));
        assert_eq!(before, m.signing_payload());
    }

    #[test]
    fn sim_time_conversions() {
        assert_eq!(SimTime::from_ms(3).as_us(), 3_000);
        assert_eq!(SimTime::from_ms_f64(0.5).as_us(), 500);
        assert_eq!(SimTime(2_500).whole_ms(), 2);
        assert!((SimTime(2_500).as_ms() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = Digest([7; 32]);
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("zz"), None);
    }
}
