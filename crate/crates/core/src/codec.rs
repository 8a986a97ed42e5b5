//! Deterministic length-prefixed codec for ITS messages and their
//! piggybacked extension.
//!
//! ```text
//! +--------------------+----------+---------------------------+------------------+
//! | header region      | base len |  base message (+ pad)     | extension region |
//! | u16 len + filler   |   u16    |  see `write_base`         | optional, "VEE"  |
//! +--------------------+----------+---------------------------+------------------+
//! ```
//!
//! A decoder that knows nothing about extensions reads the header region
//! and `base len` bytes and stops. Anything after that is the extension
//! region, which starts with the magic `VEE` (0x56 0x45 0x45).
//!
//! All integers are big-endian.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::*;

pub const VEE_MAGIC: [u8; 3] = *b"VEE";
pub const VEE_VERSION: u8 = 1;
const CHECK_LEN: usize = 4;
/// magic + version + payload length
const EXT_PREFIX_LEN: usize = 3 + 1 + 2;

const HAS_LEDGER: u8 = 0b001;
const HAS_CONSENSUS: u8 = 0b010;
const HAS_TOKEN: u8 = 0b100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("{field} does not fit: {len} > {max}")]
    FieldOverflow {
        field: &'static str,
        len: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated at offset {offset}: need {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("unknown message type code {0}")]
    UnknownMsgType(u8),
    #[error("header region length {0} is shorter than its own prefix")]
    BadHeaderRegion(usize),
}

/// Why an extension region was rejected. The base message is still valid.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtensionError {
    #[error("missing VEE magic")]
    BadMagic,
    #[error("unsupported extension version {0}")]
    Version(u8),
    #[error("extension truncated")]
    Truncated,
    #[error("extension integrity check failed")]
    Checksum,
    #[error("malformed extension field: {0}")]
    Malformed(&'static str),
    #[error("{0} trailing bytes after extension")]
    Trailing(usize),
}

/// Per-layer header sizes that pad every frame, plus the frame floor.
///
/// Defaults are calibrated so that a CAM with an empty body and a 32-byte
/// tag encodes to exactly 92 bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeaderModel {
    pub btp_bytes: u16,
    pub gn_basic_bytes: u16,
    pub gn_common_bytes: u16,
    pub gn_shb_bytes: u16,
    pub min_frame_bytes: u16,
}

impl Default for HeaderModel {
    fn default() -> Self {
        HeaderModel {
            btp_bytes: 4,
            gn_basic_bytes: 4,
            gn_common_bytes: 8,
            gn_shb_bytes: 16,
            min_frame_bytes: 92,
        }
    }
}

impl HeaderModel {
    /// Bytes of the header region including its own 2-byte length.
    pub fn header_region_len(&self) -> usize {
        2 + self.btp_bytes as usize
            + self.gn_basic_bytes as usize
            + self.gn_common_bytes as usize
            + self.gn_shb_bytes as usize
    }
}

/// Result of decoding a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// The message; `extension` is filled only when the region was valid.
    pub message: ItsMessage,
    /// Bytes up to the end of the base message (header region included).
    pub base_len: usize,
    pub extension_present: bool,
    pub extension_error: Option<ExtensionError>,
}

impl Decoded {
    pub fn extension_valid(&self) -> bool {
        self.extension_present && self.extension_error.is_none()
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: Vec::with_capacity(128),
        }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn len_u8(&mut self, field: &'static str, len: usize) -> Result<(), EncodingError> {
        let v = u8::try_from(len).map_err(|_| EncodingError::FieldOverflow {
            field,
            len,
            max: u8::MAX as usize,
        })?;
        self.u8(v);
        Ok(())
    }
    fn len_u16(&mut self, field: &'static str, len: usize) -> Result<(), EncodingError> {
        let v = u16::try_from(len).map_err(|_| EncodingError::FieldOverflow {
            field,
            len,
            max: u16::MAX as usize,
        })?;
        self.u16(v);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }
    fn digest(&mut self) -> Option<Digest> {
        self.take(32).map(|b| Digest(b.try_into().unwrap()))
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn write_base(w: &mut Writer, msg: &ItsMessage) -> Result<(), EncodingError> {
    w.u8(msg.msg_type.code());
    w.u32(msg.sender.0);
    w.u64(msg.timestamp_ms);
    w.u64(msg.seq);
    w.len_u16("body", msg.body.len())?;
    w.bytes(&msg.body);
    w.len_u8("signature", msg.signature.0.len())?;
    w.bytes(&msg.signature.0);
    Ok(())
}

fn write_ledger(w: &mut Writer, c: &LedgerContainer) {
    w.u32(c.localchain_id);
    w.bytes(&c.prev_block_hash.0);
    w.u8(c.info_flag.code());
}

fn write_consensus(w: &mut Writer, c: &ConsensusContainer) -> Result<(), EncodingError> {
    w.u32(c.process_id.proposer.0);
    w.u64(c.process_id.nonce);
    w.u8(c.stage.code());
    w.u32(c.view);
    w.bytes(&c.proposal_digest.0);
    match &c.proposal_payload {
        Some(p) => {
            w.u8(1);
            w.len_u16("proposal_payload", p.len())?;
            w.bytes(p);
        }
        None => w.u8(0),
    }
    w.len_u8("membership", c.membership.len())?;
    for s in &c.membership {
        w.u32(s.0);
    }
    Ok(())
}

fn write_token(w: &mut Writer, c: &TokenContainer) -> Result<(), EncodingError> {
    w.u8(c.mechanism.code());
    w.u64(c.amount);
    w.len_u8("outputs", c.outputs.len())?;
    for o in &c.outputs {
        w.bytes(&o.address.0 .0);
        w.u64(o.amount);
    }
    w.u64(c.tx_nonce);
    w.len_u8("tx_signature", c.tx_signature.0.len())?;
    w.bytes(&c.tx_signature.0);
    w.len_u16("certificate", c.certificate.len())?;
    w.bytes(&c.certificate);
    Ok(())
}

fn extension_payload(ext: &VeeExtension) -> Result<Vec<u8>, EncodingError> {
    let mut w = Writer::new();
    w.u32(ext.event_id);
    w.u16(ext.sp_id.0);
    let mut mask = 0u8;
    if ext.ledger.is_some() {
        mask |= HAS_LEDGER;
    }
    if ext.consensus.is_some() {
        mask |= HAS_CONSENSUS;
    }
    if ext.token.is_some() {
        mask |= HAS_TOKEN;
    }
    w.u8(mask);
    if let Some(c) = &ext.ledger {
        write_ledger(&mut w, c);
    }
    if let Some(c) = &ext.consensus {
        write_consensus(&mut w, c)?;
    }
    if let Some(c) = &ext.token {
        write_token(&mut w, c)?;
    }
    Ok(w.buf)
}

fn payload_check(payload: &[u8]) -> [u8; CHECK_LEN] {
    let h = Sha256::digest(payload);
    [h[0], h[1], h[2], h[3]]
}

/// The complete extension region: magic, version, length, payload, check.
pub fn encode_extension(ext: &VeeExtension) -> Result<Vec<u8>, EncodingError> {
    let payload = extension_payload(ext)?;
    let mut w = Writer::new();
    w.bytes(&VEE_MAGIC);
    w.u8(VEE_VERSION);
    w.len_u16("extension", payload.len())?;
    w.bytes(&payload);
    w.bytes(&payload_check(&payload));
    Ok(w.buf)
}

/// Encoded size of a token container on its own, used to enforce the
/// per-transaction size limit.
pub fn token_container_len(c: &TokenContainer) -> Result<usize, EncodingError> {
    let mut w = Writer::new();
    write_token(&mut w, c)?;
    Ok(w.buf.len())
}

/// Encodes a full frame with the default header model.
pub fn encode(msg: &ItsMessage) -> Result<Vec<u8>, EncodingError> {
    encode_with(msg, &HeaderModel::default())
}

pub fn encode_with(msg: &ItsMessage, model: &HeaderModel) -> Result<Vec<u8>, EncodingError> {
    let mut base = Writer::new();
    write_base(&mut base, msg)?;

    let header_len = model.header_region_len();
    let fixed = header_len + 2;
    let floor = model.min_frame_bytes as usize;
    if fixed + base.buf.len() < floor {
        base.buf.resize(floor - fixed, 0);
    }

    let mut w = Writer::new();
    w.len_u16("header_region", header_len)?;
    w.bytes(&vec![0u8; header_len - 2]);
    w.len_u16("base", base.buf.len())?;
    w.bytes(&base.buf);
    if let Some(ext) = &msg.extension {
        w.bytes(&encode_extension(ext)?);
    }
    Ok(w.buf)
}

/// Encoded frame length without materializing the extension twice.
pub fn encoded_len(msg: &ItsMessage, model: &HeaderModel) -> Result<usize, EncodingError> {
    encode_with(msg, model).map(|b| b.len())
}

/// Byte string identifying a message for block hashing: base fields and
/// extension region, no header region and no padding.
pub fn canonical_bytes(msg: &ItsMessage) -> Result<Vec<u8>, EncodingError> {
    let mut w = Writer::new();
    write_base(&mut w, msg)?;
    if let Some(ext) = &msg.extension {
        w.bytes(&encode_extension(ext)?);
    }
    Ok(w.buf)
}

fn truncated(r: &Reader<'_>, need: usize) -> DecodeError {
    DecodeError::Truncated {
        offset: r.pos,
        need: need.saturating_sub(r.remaining()).max(1),
    }
}

fn read_base(bytes: &[u8]) -> Result<(ItsMessage, usize), DecodeError> {
    let mut r = Reader::new(bytes);
    let header_len = r.u16().ok_or_else(|| truncated(&r, 2))? as usize;
    if header_len < 2 {
        return Err(DecodeError::BadHeaderRegion(header_len));
    }
    r.take(header_len - 2).ok_or_else(|| truncated(&r, header_len - 2))?;
    let base_len = r.u16().ok_or_else(|| truncated(&r, 2))? as usize;
    let base_start = r.pos;
    let base = r.take(base_len).ok_or_else(|| truncated(&r, base_len))?;
    let end = r.pos;

    let mut b = Reader::new(base);
    let short = |b: &Reader<'_>| DecodeError::Truncated {
        offset: base_start + b.pos,
        need: 1,
    };
    let code = b.u8().ok_or_else(|| short(&b))?;
    let msg_type = MsgType::from_code(code).ok_or(DecodeError::UnknownMsgType(code))?;
    let sender = StationId(b.u32().ok_or_else(|| short(&b))?);
    let timestamp_ms = b.u64().ok_or_else(|| short(&b))?;
    let seq = b.u64().ok_or_else(|| short(&b))?;
    let body_len = b.u16().ok_or_else(|| short(&b))? as usize;
    let body = b.take(body_len).ok_or_else(|| short(&b))?.to_vec();
    let sig_len = b.u8().ok_or_else(|| short(&b))? as usize;
    let sig = b.take(sig_len).ok_or_else(|| short(&b))?.to_vec();
    // whatever remains inside the base region is padding

    let msg = ItsMessage {
        msg_type,
        sender,
        timestamp_ms,
        seq,
        body,
        signature: SignatureBytes(sig),
        extension: None,
    };
    Ok((msg, end))
}

/// Extension-unaware decode: the base message and its length. Trailing
/// bytes are ignored.
pub fn decode_base(bytes: &[u8]) -> Result<(ItsMessage, usize), DecodeError> {
    read_base(bytes)
}

/// Full decode. A damaged extension region never invalidates the base
/// message; it is reported through `extension_error`.
pub fn decode(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let (mut message, base_len) = read_base(bytes)?;
    let tail = &bytes[base_len..];
    if tail.is_empty() {
        return Ok(Decoded {
            message,
            base_len,
            extension_present: false,
            extension_error: None,
        });
    }
    let (extension_present, extension_error) = match decode_extension(tail) {
        Ok(ext) => {
            message.extension = Some(ext);
            (true, None)
        }
        Err(ExtensionError::BadMagic) => (false, Some(ExtensionError::BadMagic)),
        Err(e) => (true, Some(e)),
    };
    Ok(Decoded {
        message,
        base_len,
        extension_present,
        extension_error,
    })
}

/// Parses an extension region on its own.
pub fn decode_extension(region: &[u8]) -> Result<VeeExtension, ExtensionError> {
    let mut r = Reader::new(region);
    if r.take(3) != Some(&VEE_MAGIC[..]) {
        return Err(ExtensionError::BadMagic);
    }
    let version = r.u8().ok_or(ExtensionError::Truncated)?;
    if version != VEE_VERSION {
        return Err(ExtensionError::Version(version));
    }
    let len = r.u16().ok_or(ExtensionError::Truncated)? as usize;
    let payload = r.take(len).ok_or(ExtensionError::Truncated)?;
    let check = r.take(CHECK_LEN).ok_or(ExtensionError::Truncated)?;
    if r.remaining() != 0 {
        return Err(ExtensionError::Trailing(r.remaining()));
    }
    if check != payload_check(payload) {
        return Err(ExtensionError::Checksum);
    }
    parse_payload(payload)
}

fn parse_payload(payload: &[u8]) -> Result<VeeExtension, ExtensionError> {
    use ExtensionError::Malformed;
    let mut r = Reader::new(payload);
    let event_id = r.u32().ok_or(Malformed("event_id"))?;
    let sp_id = SpId(r.u16().ok_or(Malformed("sp_id"))?);
    let mask = r.u8().ok_or(Malformed("presence"))?;
    if mask & !(HAS_LEDGER | HAS_CONSENSUS | HAS_TOKEN) != 0 {
        return Err(Malformed("presence"));
    }
    let mut ext = VeeExtension::new(event_id, sp_id);

    if mask & HAS_LEDGER != 0 {
        let localchain_id = r.u32().ok_or(Malformed("ledger"))?;
        let prev_block_hash = r.digest().ok_or(Malformed("ledger"))?;
        let info_flag = r.u8().and_then(InfoFlag::from_code).ok_or(Malformed("info_flag"))?;
        ext.ledger = Some(LedgerContainer {
            localchain_id,
            prev_block_hash,
            info_flag,
        });
    }

    if mask & HAS_CONSENSUS != 0 {
        let m = Malformed("consensus");
        let proposer = StationId(r.u32().ok_or(m.clone())?);
        let nonce = r.u64().ok_or(m.clone())?;
        let stage = r.u8().and_then(Stage::from_code).ok_or(Malformed("stage"))?;
        let view = r.u32().ok_or(m.clone())?;
        let proposal_digest = r.digest().ok_or(m.clone())?;
        let proposal_payload = match r.u8().ok_or(m.clone())? {
            0 => None,
            1 => {
                let n = r.u16().ok_or(m.clone())? as usize;
                Some(r.take(n).ok_or(m.clone())?.to_vec())
            }
            _ => return Err(m),
        };
        let count = r.u8().ok_or(m.clone())? as usize;
        let mut membership = Vec::with_capacity(count);
        for _ in 0..count {
            membership.push(StationId(r.u32().ok_or(m.clone())?));
        }
        ext.consensus = Some(ConsensusContainer {
            process_id: ProcessId { proposer, nonce },
            stage,
            view,
            proposal_digest,
            proposal_payload,
            membership,
        });
    }

    if mask & HAS_TOKEN != 0 {
        let m = Malformed("token");
        let mechanism = r
            .u8()
            .and_then(TokenMechanism::from_code)
            .ok_or(Malformed("mechanism"))?;
        let amount = r.u64().ok_or(m.clone())?;
        let count = r.u8().ok_or(m.clone())? as usize;
        let mut outputs = Vec::with_capacity(count);
        for _ in 0..count {
            let address = Address(r.digest().ok_or(m.clone())?);
            let amount = r.u64().ok_or(m.clone())?;
            outputs.push(TokenOutput { address, amount });
        }
        let tx_nonce = r.u64().ok_or(m.clone())?;
        let sig_len = r.u8().ok_or(m.clone())? as usize;
        let tx_signature = SignatureBytes(r.take(sig_len).ok_or(m.clone())?.to_vec());
        let cert_len = r.u16().ok_or(m.clone())? as usize;
        let certificate = r.take(cert_len).ok_or(m)?.to_vec();
        ext.token = Some(TokenContainer {
            mechanism,
            amount,
            outputs,
            tx_nonce,
            tx_signature,
            certificate,
        });
    }

    if r.remaining() != 0 {
        return Err(Malformed("trailing payload bytes"));
    }
    Ok(ext)
}

/// Size of the extension region for a given extension, in bytes.
pub fn extension_len(ext: &VeeExtension) -> Result<usize, EncodingError> {
    extension_payload(ext).map(|p| EXT_PREFIX_LEN + p.len() + CHECK_LEN)
}

/// JSON summary of a decoded frame of `frame_len` bytes.
pub fn describe(d: &Decoded, frame_len: usize) -> serde_json::Value {
    use serde_json::json;
    let m = &d.message;
    let ext = m.extension.as_ref().map(|e| {
        json!({
            "event_id": e.event_id,
            "sp_id": e.sp_id.0,
            "ledger": e.ledger.as_ref().map(|l| json!({
                "localchain_id": l.localchain_id,
                "prev_block_hash": l.prev_block_hash.to_hex(),
                "info_flag": l.info_flag,
            })),
            "consensus": e.consensus.as_ref().map(|c| json!({
                "process": c.process_id.to_string(),
                "stage": c.stage,
                "view": c.view,
                "proposal_digest": c.proposal_digest.to_hex(),
                "membership": c.membership.iter().map(|s| s.0).collect::<Vec<_>>(),
            })),
            "token": e.token.as_ref().map(|t| json!({
                "mechanism": t.mechanism,
                "amount": t.amount,
                "nonce": t.tx_nonce,
                "outputs": t.outputs.len(),
            })),
        })
    });
    json!({
        "len": frame_len,
        "base_len": d.base_len,
        "msg_type": m.msg_type.to_string(),
        "sender": m.sender.0,
        "timestamp_ms": m.timestamp_ms,
        "seq": m.seq,
        "body_len": m.body.len(),
        "extension_present": d.extension_present,
        "extension_error": d.extension_error.as_ref().map(|e| e.to_string()),
        "extension": ext,
    })
}
