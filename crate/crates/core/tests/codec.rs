use proptest::prelude::*;

use vep_core::codec::{self, ExtensionError, HeaderModel, VEE_MAGIC};
use vep_core::crypto::{SignerBackend, SigningKey};
use vep_core::*;

fn digest() -> impl Strategy<Value = Digest> {
    any::<[u8; 32]>().prop_map(Digest)
}

fn ledger() -> impl Strategy<Value = LedgerContainer> {
    (any::<u32>(), digest(), 0u8..3).prop_map(|(localchain_id, prev_block_hash, f)| LedgerContainer {
        localchain_id,
        prev_block_hash,
        info_flag: InfoFlag::from_code(f).unwrap(),
    })
}

fn consensus() -> impl Strategy<Value = ConsensusContainer> {
    (
        any::<u32>(),
        any::<u64>(),
        0u8..3,
        any::<u32>(),
        digest(),
        prop::option::of(prop::collection::vec(any::<u8>(), 0..80)),
        prop::collection::vec(any::<u32>(), 0..12),
    )
        .prop_map(
            |(p, nonce, st, view, proposal_digest, payload, members)| ConsensusContainer {
                process_id: ProcessId {
                    proposer: StationId(p),
                    nonce,
                },
                stage: Stage::from_code(st).unwrap(),
                view,
                proposal_digest,
                proposal_payload: payload,
                membership: members.into_iter().map(StationId).collect(),
            },
        )
}

fn token() -> impl Strategy<Value = TokenContainer> {
    (
        0u8..4,
        any::<u64>(),
        prop::collection::vec((digest(), any::<u64>()), 0..5),
        any::<u64>(),
        prop::collection::vec(any::<u8>(), 0..72),
        prop::collection::vec(any::<u8>(), 0..120),
    )
        .prop_map(|(m, amount, outs, tx_nonce, sig, certificate)| TokenContainer {
            mechanism: TokenMechanism::from_code(m).unwrap(),
            amount,
            outputs: outs
                .into_iter()
                .map(|(d, a)| TokenOutput {
                    address: Address(d),
                    amount: a,
                })
                .collect(),
            tx_nonce,
            tx_signature: SignatureBytes(sig),
            certificate,
        })
}

fn extension() -> impl Strategy<Value = VeeExtension> {
    (
        any::<u32>(),
        1u16..4,
        prop::option::of(ledger()),
        prop::option::of(consensus()),
        prop::option::of(token()),
    )
        .prop_filter("at least one container", |(_, _, l, c, t)| {
            l.is_some() || c.is_some() || t.is_some()
        })
        .prop_map(|(event_id, sp, ledger, consensus, token)| VeeExtension {
            event_id,
            sp_id: SpId(sp),
            ledger,
            consensus,
            token,
        })
}

fn message() -> impl Strategy<Value = ItsMessage> {
    (
        0usize..MsgType::ALL.len(),
        any::<u32>(),
        any::<u64>(),
        any::<u64>(),
        prop::collection::vec(any::<u8>(), 0..600),
        prop::collection::vec(any::<u8>(), 0..72),
        prop::option::of(extension()),
    )
        .prop_map(|(t, s, ts, seq, body, sig, ext)| {
            let mut m = ItsMessage::new(MsgType::ALL[t], StationId(s), ts, seq, body);
            m.signature = SignatureBytes(sig);
            m.extension = ext;
            m
        })
}

fn without_extension(m: &ItsMessage) -> ItsMessage {
    let mut b = m.clone();
    b.extension = None;
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn round_trip(m in message()) {
        let bytes = codec::encode(&m).unwrap();
        let d = codec::decode(&bytes).unwrap();
        prop_assert_eq!(&d.message, &m);
        prop_assert_eq!(d.extension_present, m.extension.is_some());
        prop_assert!(d.extension_error.is_none());
        prop_assert!(bytes.len() >= 92);
    }

    #[test]
    fn extension_is_transparent_to_base_decoding(m in message()) {
        let with = codec::encode(&m).unwrap();
        let plain = codec::encode(&without_extension(&m)).unwrap();
        let (a, la) = codec::decode_base(&with).unwrap();
        let (b, lb) = codec::decode_base(&plain).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(la, lb);
        // the extension is a pure suffix
        prop_assert_eq!(&with[..la], &plain[..]);
        if m.extension.is_some() {
            prop_assert_eq!(&with[la..la + 3], &VEE_MAGIC[..]);
        }
    }

    #[test]
    fn encoded_length_matches_parts(m in message()) {
        let bytes = codec::encode(&m).unwrap();
        let plain = codec::encode(&without_extension(&m)).unwrap();
        let ext = m.extension.as_ref().map_or(0, |e| codec::extension_len(e).unwrap());
        prop_assert_eq!(bytes.len(), plain.len() + ext);
        prop_assert_eq!(codec::encoded_len(&m, &HeaderModel::default()).unwrap(), bytes.len());
    }

    #[test]
    fn damaged_extension_never_spoils_the_base(m in message(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        prop_assume!(m.extension.is_some());
        let mut bytes = codec::encode(&m).unwrap();
        let (_, base_len) = codec::decode_base(&bytes).unwrap();
        let i = base_len + pos.index(bytes.len() - base_len);
        bytes[i] ^= flip;
        let d = codec::decode(&bytes).unwrap();
        prop_assert_eq!(&d.message.clone().extension, &None);
        prop_assert_eq!(without_extension(&d.message), without_extension(&m));
        prop_assert!(d.extension_error.is_some());
    }

    #[test]
    fn truncated_extension_is_reported(m in message(), cut in any::<prop::sample::Index>()) {
        prop_assume!(m.extension.is_some());
        let bytes = codec::encode(&m).unwrap();
        let (_, base_len) = codec::decode_base(&bytes).unwrap();
        let keep = base_len + 1 + cut.index(bytes.len() - base_len - 1);
        let d = codec::decode(&bytes[..keep]).unwrap();
        prop_assert!(d.message.extension.is_none());
        prop_assert!(d.extension_error.is_some());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = codec::decode(&bytes);
        let _ = codec::decode_extension(&bytes);
    }

    #[test]
    fn canonical_bytes_ignore_header_padding(m in message(), extra in 0u16..64, floor in 0u16..300) {
        let model = HeaderModel { gn_shb_bytes: 16 + extra, min_frame_bytes: floor, ..HeaderModel::default() };
        let a = codec::encode_with(&m, &model).unwrap();
        let b = codec::encode(&m).unwrap();
        prop_assert_eq!(codec::decode(&a).unwrap().message, codec::decode(&b).unwrap().message);
        let c = codec::canonical_bytes(&m).unwrap();
        prop_assert!(c.len() <= b.len());
    }

    #[test]
    fn signatures_cover_the_base_but_not_the_extension(m in message(), seed in any::<[u8; 8]>(), ext in extension()) {
        for backend in [SignerBackend::Null, SignerBackend::Ecdsa] {
            let key = SigningKey::from_seed(backend, &seed);
            let sig = key.sign(&m.signing_payload());
            let vk = key.verifying_key();
            let mut other = m.clone();
            other.extension = Some(ext.clone());
            prop_assert!(vk.verify(&other.signing_payload(), &sig));
            let mut tampered = m.clone();
            tampered.seq = tampered.seq.wrapping_add(1);
            prop_assert!(!vk.verify(&tampered.signing_payload(), &sig));
            let stranger = SigningKey::from_seed(backend, b"someone else");
            prop_assert!(!stranger.verifying_key().verify(&m.signing_payload(), &sig));
        }
    }
}

#[test]
fn plain_cam_is_padded_to_the_floor() {
    let m = ItsMessage::new(MsgType::Cam, StationId(1), 0, 0, vec![]);
    assert_eq!(codec::encode(&m).unwrap().len(), 92);
}

#[test]
fn missing_magic_is_not_an_extension() {
    let m = ItsMessage::new(MsgType::Cam, StationId(1), 0, 0, vec![1, 2, 3]);
    let mut bytes = codec::encode(&m).unwrap();
    bytes.extend_from_slice(b"XYZ123");
    let d = codec::decode(&bytes).unwrap();
    assert!(!d.extension_present);
    assert_eq!(d.extension_error, Some(ExtensionError::BadMagic));
    assert_eq!(d.message, m);
}

#[test]
fn oversize_fields_are_rejected() {
    let m = ItsMessage::new(MsgType::Cam, StationId(1), 0, 0, vec![0; 70_000]);
    assert!(codec::encode(&m).is_err());
    let ext = VeeExtension::new(1, SpId::VIEW).with_consensus(ConsensusContainer {
        process_id: ProcessId {
            proposer: StationId(1),
            nonce: 1,
        },
        stage: Stage::PrePrepare,
        view: 0,
        proposal_digest: Digest::default(),
        proposal_payload: None,
        membership: vec![StationId(1); 300],
    });
    assert!(codec::extension_len(&ext).is_err());
}

#[test]
fn stage_container_sizes() {
    let c = |stage, payload: Option<Vec<u8>>, n: u32| {
        VeeExtension::new(7, SpId::VIEW).with_consensus(ConsensusContainer {
            process_id: ProcessId {
                proposer: StationId(1),
                nonce: 5000,
            },
            stage,
            view: 0,
            proposal_digest: Digest::default(),
            proposal_payload: payload,
            membership: (1..=n).map(StationId).collect(),
        })
    };
    assert_eq!(codec::extension_len(&c(Stage::Prepare, None, 0)).unwrap(), 68);
    assert_eq!(codec::extension_len(&c(Stage::Commit, None, 0)).unwrap(), 68);
    // proposal payload of 32 bytes plus its length, and 4 bytes per member
    let pp = codec::extension_len(&c(Stage::PrePrepare, Some(vec![0; 32]), 4)).unwrap();
    assert_eq!(pp, 68 + 34 + 16);
    let ledger_only = VeeExtension::new(7, SpId::MANEUVER).with_ledger(LedgerContainer {
        localchain_id: 1,
        prev_block_hash: Digest::default(),
        info_flag: InfoFlag::Success,
    });
    assert_eq!(codec::extension_len(&ledger_only).unwrap(), 6 + 7 + 37 + 4);
}
