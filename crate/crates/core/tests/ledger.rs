use proptest::prelude::*;

use vep_core::ledger::{forge_block, Block, LedgerError, Localchain};
use vep_core::*;

fn msg(sender: u32, seq: u64, body: Vec<u8>) -> ItsMessage {
    ItsMessage::new(MsgType::McmRequest, StationId(sender), 1000 + seq, seq, body)
}

fn forge(chain: &Localchain, prev: Digest, msgs: &[ItsMessage]) -> Result<Block, LedgerError> {
    let slots: Vec<Option<&ItsMessage>> = msgs.iter().map(Some).collect();
    forge_block(chain.id(), prev, &slots, InfoFlag::Success, |_| true)
}

fn messages() -> impl Strategy<Value = Vec<ItsMessage>> {
    prop::collection::vec(
        (1u32..20, any::<u64>(), prop::collection::vec(any::<u8>(), 0..64)),
        1..6,
    )
    .prop_map(|v| v.into_iter().map(|(s, q, b)| msg(s, q, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Two stations that received the same messages agree on the hash, whatever
    // ledger container or header padding each copy carried on air.
    #[test]
    fn same_messages_same_hash(msgs in messages(), tag in any::<u32>()) {
        let a = Localchain::new(7);
        let b = Localchain::new(7);
        let mut tagged = msgs.clone();
        for m in &mut tagged {
            m.extension = Some(VeeExtension::new(tag, SpId::MANEUVER).with_ledger(a.make_container(InfoFlag::None)));
        }
        let with: Vec<_> = tagged.iter().map(|m| codec::decode(&codec::encode(m).unwrap()).unwrap().message).collect();
        let x = forge(&a, a.genesis_hash(), &with).unwrap();
        let y = forge(&b, b.genesis_hash(), &with).unwrap();
        prop_assert_eq!(x.hash, y.hash);
        prop_assert_eq!(x.verify_payload(), Some(true));
    }

    #[test]
    fn any_byte_change_changes_the_hash(msgs in messages(), which in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let chain = Localchain::new(1);
        let base = forge(&chain, chain.genesis_hash(), &msgs).unwrap();
        let mut changed = msgs.clone();
        let i = which.index(changed.len());
        if changed[i].body.is_empty() {
            changed[i].body.push(flip);
        } else {
            changed[i].body[0] ^= flip;
        }
        let other = forge(&chain, chain.genesis_hash(), &changed).unwrap();
        prop_assert_ne!(base.hash, other.hash);
    }

    #[test]
    fn order_and_parent_matter(msgs in messages()) {
        prop_assume!(msgs.len() >= 2 && msgs[0] != msgs[1]);
        let chain = Localchain::new(1);
        let base = forge(&chain, chain.genesis_hash(), &msgs).unwrap();
        let mut swapped = msgs.clone();
        swapped.swap(0, 1);
        prop_assert_ne!(base.hash, forge(&chain, chain.genesis_hash(), &swapped).unwrap().hash);
        prop_assert_ne!(base.hash, forge(&chain, Digest([9; 32]), &msgs).unwrap().hash);
    }

    // Random append orders over a random tree: every block walks back to
    // genesis once all of them are present, with no repeats.
    #[test]
    fn walks_terminate_at_genesis(parents in prop::collection::vec(any::<prop::sample::Index>(), 1..25), order in any::<u64>()) {
        let mut chain = Localchain::new(3);
        let mut blocks: Vec<Block> = Vec::new();
        for (i, p) in parents.iter().enumerate() {
            let prev = if blocks.is_empty() { chain.genesis_hash() } else {
                let k = p.index(blocks.len() + 1);
                if k == blocks.len() { chain.genesis_hash() } else { blocks[k].hash }
            };
            blocks.push(forge(&chain, prev, &[msg(1, i as u64, vec![])]).unwrap());
        }
        let mut shuffled = blocks.clone();
        let mut s = order;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        for b in shuffled {
            chain.append(b).unwrap();
        }
        for b in &blocks {
            prop_assert!(!chain.is_dangling(&b.hash));
            let walk = chain.walk_to_genesis(&b.hash);
            prop_assert_eq!(walk.first(), Some(&b.hash));
            prop_assert_eq!(walk.last(), Some(&chain.genesis_hash()));
            let unique: std::collections::BTreeSet<_> = walk.iter().collect();
            prop_assert_eq!(unique.len(), walk.len());
        }
        // every tip is a block nobody links to
        for t in chain.tips() {
            prop_assert!(chain.blocks().all(|b| b.prev_hash != *t));
        }
    }
}

#[test]
fn missing_message_means_no_block() {
    let chain = Localchain::new(1);
    let a = msg(1, 1, vec![1]);
    let err = forge_block(
        chain.id(),
        chain.genesis_hash(),
        &[Some(&a), None],
        InfoFlag::Success,
        |_| true,
    )
    .unwrap_err();
    assert_eq!(
        err,
        LedgerError::IncompleteBlock {
            missing: 1,
            expected: 2
        }
    );
    let err = forge_block(chain.id(), chain.genesis_hash(), &[], InfoFlag::Success, |_| true).unwrap_err();
    assert_eq!(err, LedgerError::Empty);
}

#[test]
fn bad_signature_means_no_block() {
    let chain = Localchain::new(1);
    let a = msg(4, 1, vec![1]);
    let err = forge_block(chain.id(), chain.genesis_hash(), &[Some(&a)], InfoFlag::Success, |m| {
        m.sender != StationId(4)
    })
    .unwrap_err();
    assert_eq!(err, LedgerError::InvalidMessage { sender: StationId(4) });
}

#[test]
fn header_only_copies_link_like_full_ones() {
    let mut full = Localchain::new(2);
    let mut shard = Localchain::new(2);
    let mut prev = full.genesis_hash();
    for i in 0..5 {
        let b = forge(&full, prev, &[msg(1, i, vec![i as u8; 10])]).unwrap();
        prev = b.hash;
        shard.append(b.header_only()).unwrap();
        full.append(b).unwrap();
    }
    assert_eq!(shard.walk_to_genesis(&prev), full.walk_to_genesis(&prev));
    assert_eq!(shard.tips(), full.tips());
    assert!(shard.get(&prev).unwrap().verify_payload().is_none());

    // a full copy upgrades the stored header, a conflicting one is refused
    let b = full.get(&prev).unwrap().clone();
    shard.append(b.clone()).unwrap();
    assert_eq!(shard.get(&prev).unwrap().verify_payload(), Some(true));
    let mut forged = b;
    forged.message_digests.reverse();
    forged.message_digests.push(Digest::default());
    assert_eq!(shard.append(forged), Err(LedgerError::IntegrityViolation(prev)));
}

#[test]
fn blocks_stay_on_their_chain() {
    let mut chain = Localchain::new(2);
    let other = Localchain::new(5);
    let b = forge(&other, other.genesis_hash(), &[msg(1, 1, vec![])]).unwrap();
    assert_eq!(chain.append(b), Err(LedgerError::WrongChain { expected: 2, got: 5 }));
}

#[test]
fn orphan_is_dangling_until_its_parent_arrives() {
    let mut chain = Localchain::new(1);
    let a = forge(&chain, chain.genesis_hash(), &[msg(1, 1, vec![])]).unwrap();
    let b = forge(&chain, a.hash, &[msg(1, 2, vec![])]).unwrap();
    chain.append(b.clone()).unwrap();
    assert!(chain.is_dangling(&b.hash));
    assert_eq!(chain.walk_to_genesis(&b.hash), vec![b.hash]);
    chain.append(a.clone()).unwrap();
    assert!(!chain.is_dangling(&b.hash));
    assert_eq!(
        chain.walk_to_genesis(&b.hash),
        vec![b.hash, a.hash, chain.genesis_hash()]
    );
    assert_eq!(chain.tips().iter().collect::<Vec<_>>(), vec![&b.hash]);
}
