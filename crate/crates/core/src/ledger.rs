//! Localchain: a geographically scoped DAG of blocks, each hashing an ordered
//! set of signed messages. Stations may hold only part of the data; a block
//! whose messages a station never saw is kept as a bare header.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{self, EncodingError};
use crate::types::{Digest, InfoFlag, ItsMessage, LedgerContainer, StationId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("incomplete block: {missing} of {expected} messages missing")]
    IncompleteBlock { missing: usize, expected: usize },
    #[error("message from {sender} failed signature verification")]
    InvalidMessage { sender: StationId },
    #[error("block {0} already stored with different content")]
    IntegrityViolation(Digest),
    #[error("block belongs to localchain {got}, expected {expected}")]
    WrongChain { expected: u32, got: u32 },
    #[error("cannot forge an empty block")]
    Empty,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub hash: Digest,
    pub prev_hash: Digest,
    pub localchain_id: u32,
    pub message_digests: Vec<Digest>,
    /// Canonical message bytes, present only when this station holds all of
    /// them.
    #[serde(skip)]
    pub payload: Option<Vec<Vec<u8>>>,
    pub info_flag: InfoFlag,
}

impl Block {
    pub fn genesis(localchain_id: u32) -> Block {
        let mut h = Sha256::new();
        h.update(localchain_id.to_be_bytes());
        h.update(b"GENESIS");
        Block {
            hash: Digest(h.finalize().into()),
            prev_hash: Digest::default(),
            localchain_id,
            message_digests: Vec::new(),
            payload: None,
            info_flag: InfoFlag::None,
        }
    }

    pub fn is_genesis(&self) -> bool {
        *self == Block::genesis(self.localchain_id)
    }

    pub fn has_payload(&self) -> bool {
        self.payload.is_some()
    }

    /// The same block without message bytes, as a shard holder keeps it.
    pub fn header_only(&self) -> Block {
        Block {
            payload: None,
            ..self.clone()
        }
    }

    /// Recomputes the hash from the payload. Header-only blocks cannot be
    /// checked this way and return `None`.
    pub fn verify_payload(&self) -> Option<bool> {
        let payload = self.payload.as_ref()?;
        let digests_ok = payload
            .iter()
            .zip(&self.message_digests)
            .all(|(m, d)| message_digest(m) == *d)
            && payload.len() == self.message_digests.len();
        Some(digests_ok && block_hash(&self.prev_hash, self.localchain_id, payload) == self.hash)
    }

    fn same_content(&self, other: &Block) -> bool {
        self.hash == other.hash
            && self.prev_hash == other.prev_hash
            && self.localchain_id == other.localchain_id
            && self.message_digests == other.message_digests
            && self.info_flag == other.info_flag
    }
}

fn message_digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

fn block_hash(prev: &Digest, localchain_id: u32, msgs: &[Vec<u8>]) -> Digest {
    let mut h = Sha256::new();
    h.update(prev.0);
    h.update(localchain_id.to_be_bytes());
    for m in msgs {
        h.update(m);
    }
    Digest(h.finalize().into())
}

/// Forges a block from the messages of one sub-event, in the order given.
///
/// `slots` lists every expected message; `None` marks one this station did
/// not receive, in which case no block is created. `verify` checks each
/// message signature.
pub fn forge_block(
    localchain_id: u32,
    prev_hash: Digest,
    slots: &[Option<&ItsMessage>],
    info_flag: InfoFlag,
    verify: impl Fn(&ItsMessage) -> bool,
) -> Result<Block, LedgerError> {
    if slots.is_empty() {
        return Err(LedgerError::Empty);
    }
    let missing = slots.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        return Err(LedgerError::IncompleteBlock {
            missing,
            expected: slots.len(),
        });
    }
    let mut payload = Vec::with_capacity(slots.len());
    for m in slots.iter().flatten() {
        if !verify(m) {
            return Err(LedgerError::InvalidMessage { sender: m.sender });
        }
        payload.push(codec::canonical_bytes(m)?);
    }
    Ok(Block {
        hash: block_hash(&prev_hash, localchain_id, &payload),
        prev_hash,
        localchain_id,
        message_digests: payload.iter().map(|m| message_digest(m)).collect(),
        payload: Some(payload),
        info_flag,
    })
}

/// One line of the ledger dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub hash: Digest,
    pub prev: Digest,
    pub localchain_id: u32,
    pub flag: InfoFlag,
    pub msg_digests: Vec<Digest>,
    pub payload_present: bool,
}

#[derive(Debug, Clone)]
pub struct Localchain {
    localchain_id: u32,
    genesis: Digest,
    blocks: BTreeMap<Digest, Block>,
    children: BTreeMap<Digest, BTreeSet<Digest>>,
    tips: BTreeSet<Digest>,
    dangling: BTreeSet<Digest>,
    /// Insertion order, for stable dumps.
    order: Vec<Digest>,
}

impl Localchain {
    pub fn new(localchain_id: u32) -> Self {
        let genesis = Block::genesis(localchain_id);
        let hash = genesis.hash;
        let mut blocks = BTreeMap::new();
        blocks.insert(hash, genesis);
        Localchain {
            localchain_id,
            genesis: hash,
            blocks,
            children: BTreeMap::new(),
            tips: BTreeSet::from([hash]),
            dangling: BTreeSet::new(),
            order: vec![hash],
        }
    }

    pub fn id(&self) -> u32 {
        self.localchain_id
    }

    pub fn genesis_hash(&self) -> Digest {
        self.genesis
    }

    pub fn get(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tips(&self) -> &BTreeSet<Digest> {
        &self.tips
    }

    pub fn is_dangling(&self, hash: &Digest) -> bool {
        self.dangling.contains(hash)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.order.iter().map(|h| &self.blocks[h])
    }

    /// Indexes a block. Re-appending identical content is a no-op, except
    /// that a full copy replaces a stored header.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        if block.localchain_id != self.localchain_id {
            return Err(LedgerError::WrongChain {
                expected: self.localchain_id,
                got: block.localchain_id,
            });
        }
        if let Some(existing) = self.blocks.get_mut(&block.hash) {
            if !existing.same_content(&block) {
                return Err(LedgerError::IntegrityViolation(block.hash));
            }
            if existing.payload.is_none() && block.payload.is_some() {
                existing.payload = block.payload;
            }
            return Ok(());
        }

        let hash = block.hash;
        let prev = block.prev_hash;
        if self.blocks.contains_key(&prev) {
            self.tips.remove(&prev);
        } else {
            self.dangling.insert(hash);
        }
        self.children.entry(prev).or_default().insert(hash);

        // children that arrived before this block are no longer dangling
        if let Some(kids) = self.children.get(&hash) {
            for k in kids {
                self.dangling.remove(k);
            }
        } else {
            self.tips.insert(hash);
        }

        self.blocks.insert(hash, block);
        self.order.push(hash);
        Ok(())
    }

    /// Ledger container linking the smallest tip hash.
    pub fn make_container(&self, info_flag: InfoFlag) -> LedgerContainer {
        let prev = *self.tips.iter().next().unwrap_or(&self.genesis);
        self.container_for(prev, info_flag)
    }

    /// Ledger container linking a specific block.
    pub fn container_for(&self, prev: Digest, info_flag: InfoFlag) -> LedgerContainer {
        LedgerContainer {
            localchain_id: self.localchain_id,
            prev_block_hash: prev,
            info_flag,
        }
    }

    /// Hashes from `from` back to genesis, or to the first block whose
    /// parent is unknown. Stops on a repeated hash, which a hash-linked
    /// chain cannot produce.
    pub fn walk_to_genesis(&self, from: &Digest) -> Vec<Digest> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut cur = *from;
        while let Some(b) = self.blocks.get(&cur) {
            if !seen.insert(cur) {
                break;
            }
            out.push(cur);
            if cur == self.genesis {
                break;
            }
            cur = b.prev_hash;
        }
        out
    }

    pub fn records(&self) -> Vec<BlockRecord> {
        self.blocks()
            .map(|b| BlockRecord {
                hash: b.hash,
                prev: b.prev_hash,
                localchain_id: b.localchain_id,
                flag: b.info_flag,
                msg_digests: b.message_digests.clone(),
                payload_present: b.has_payload(),
            })
            .collect()
    }

    /// Writes one JSON object per block.
    pub fn dump_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MsgType;

    fn msg(sender: u32, body: u8) -> ItsMessage {
        ItsMessage::new(MsgType::McmRequest, StationId(sender), 10, 1, vec![body; 4])
    }

    fn forge(prev: Digest, bodies: &[u8]) -> Block {
        let msgs: Vec<_> = bodies.iter().enumerate().map(|(i, b)| msg(i as u32, *b)).collect();
        let slots: Vec<_> = msgs.iter().map(Some).collect();
        forge_block(1, prev, &slots, InfoFlag::Success, |_| true).unwrap()
    }

    #[test]
    fn tips_follow_branches() {
        let mut c = Localchain::new(1);
        let g = c.genesis_hash();
        assert_eq!(c.make_container(InfoFlag::None).prev_block_hash, g);
        let a = forge(g, &[1]);
        let b = forge(g, &[2]);
        c.append(a.clone()).unwrap();
        assert_eq!(c.tips().len(), 1);
        c.append(b.clone()).unwrap();
        assert_eq!(c.tips().len(), 2);
        let smallest = a.hash.min(b.hash);
        assert_eq!(c.make_container(InfoFlag::None).prev_block_hash, smallest);
    }

    #[test]
    fn late_parent_clears_dangling() {
        let mut c = Localchain::new(1);
        let parent = forge(c.genesis_hash(), &[1]);
        let child = forge(parent.hash, &[2]);
        c.append(child.clone()).unwrap();
        assert!(c.is_dangling(&child.hash));
        c.append(parent.clone()).unwrap();
        assert!(!c.is_dangling(&child.hash));
        assert_eq!(c.tips().iter().copied().collect::<Vec<_>>(), vec![child.hash]);
        assert_eq!(c.walk_to_genesis(&child.hash).len(), 3);
    }

    #[test]
    fn conflicting_duplicate() {
        let mut c = Localchain::new(1);
        let a = forge(c.genesis_hash(), &[1]);
        c.append(a.clone()).unwrap();
        let mut bad = a.clone();
        bad.info_flag = InfoFlag::Failure;
        assert_eq!(c.append(bad), Err(LedgerError::IntegrityViolation(a.hash)));
        assert_eq!(c.append(a.header_only()), Ok(()));
    }

    #[test]
    fn missing_message() {
        let m = msg(1, 1);
        let r = forge_block(1, Digest::default(), &[Some(&m), None], InfoFlag::None, |_| true);
        assert_eq!(
            r,
            Err(LedgerError::IncompleteBlock {
                missing: 1,
                expected: 2
            })
        );
    }

    #[test]
    fn payload_verifies() {
        let b = forge(Digest::default(), &[1, 2]);
        assert_eq!(b.verify_payload(), Some(true));
        assert_eq!(b.header_only().verify_payload(), None);
    }
}
