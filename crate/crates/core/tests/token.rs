use proptest::prelude::*;

use vep_core::crypto::{SignerBackend, SigningKey};
use vep_core::token::{PromiseState, SettlementLedger, TokenError, TokenWallet};
use vep_core::*;

const CERT: usize = 40;

fn wallet(backend: SignerBackend, i: u32) -> TokenWallet {
    TokenWallet::new(SigningKey::for_station(backend, "token-test", StationId(i)), CERT)
}

fn pay(to: &TokenWallet, amount: u64) -> TokenOutput {
    TokenOutput {
        address: to.address(),
        amount,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Offer { from: usize, to: usize, amount: u64 },
    Promise { from: usize, amount: u64, votes: Vec<bool> },
    Replay,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        (0usize..5, 0usize..5, 1u64..400).prop_map(|(from, to, amount)| Op::Offer { from, to, amount }),
        (0usize..5, 0u64..400, prop::collection::vec(any::<bool>(), 1..5))
            .prop_map(|(from, amount, votes)| Op::Promise { from, amount, votes }),
        Just(Op::Replay),
    ];
    prop::collection::vec(op, 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    // Supply never changes, replays never settle, nonces only grow.
    #[test]
    fn conservation_and_replay_protection(ops in ops()) {
        let mut wallets: Vec<_> = (1..=5).map(|i| wallet(SignerBackend::Null, i)).collect();
        let mut ledger = SettlementLedger::new();
        for w in &wallets {
            ledger.fund(w.address(), 1000);
        }
        let supply = ledger.total_supply();
        let mut last: Option<TokenContainer> = None;
        let mut settled = 0u64;

        for op in ops {
            let before: Vec<u64> = wallets.iter().map(|w| ledger.last_nonce(&w.address())).collect();
            match op {
                Op::Offer { from, to, amount } => {
                    let out = pay(&wallets[to], amount);
                    match wallets[from].make_offer(&ledger, amount, vec![out]) {
                        Ok(c) => {
                            ledger.settle_offer(&c).unwrap();
                            settled += 1;
                            last = Some(c);
                        }
                        Err(e) => prop_assert!(matches!(e, TokenError::InsufficientFunds { .. }), "{:?}", e),
                    }
                }
                Op::Promise { from, amount, votes } => {
                    let Ok(p) = wallets[from].make_promise_proposal(&ledger, amount) else { continue };
                    let ids: Vec<StationId> = (1..=5).map(StationId).collect();
                    let mut st = PromiseState::new(9, StationId(from as u32 + 1), p.clone(), ids).unwrap();
                    for (i, w) in wallets.iter().enumerate() {
                        st.add_output(StationId(i as u32 + 1), &w.make_promise_output(p.tx_nonce).unwrap()).unwrap();
                    }
                    for (i, v) in votes.iter().enumerate() {
                        st.add_verification(StationId(i as u32 + 1), &wallets[i].make_promise_verify(p.tx_nonce, *v).unwrap()).unwrap();
                    }
                    let yes = votes.iter().filter(|v| **v).count();
                    let bal = ledger.balance(&wallets[from].address());
                    let r = ledger.settle_promise(&mut st).unwrap();
                    prop_assert_eq!(r.is_some(), 2 * yes > votes.len());
                    if let Some(r) = r {
                        settled += 1;
                        // floor split, the remainder stays with the proposer
                        let share = amount / 4;
                        prop_assert_eq!(r.transfers.len(), 4);
                        prop_assert!(r.transfers.iter().all(|(_, a)| *a == share));
                        prop_assert_eq!(ledger.balance(&wallets[from].address()), bal - 4 * share);
                    }
                    prop_assert_eq!(ledger.settle_promise(&mut st), Err(TokenError::AlreadySettled));
                }
                Op::Replay => {
                    if let Some(c) = &last {
                        let r = ledger.settle_offer(c);
                        prop_assert!(matches!(r, Err(TokenError::Replay { .. })), "{:?}", r);
                    }
                }
            }
            prop_assert_eq!(ledger.total_supply(), supply);
            prop_assert_eq!(ledger.settlements(), settled);
            for (w, b) in wallets.iter().zip(before) {
                prop_assert!(ledger.last_nonce(&w.address()) >= b);
            }
        }
    }

    #[test]
    fn promise_needs_a_strict_majority(votes in prop::collection::vec(any::<bool>(), 1..9), exclude in any::<bool>()) {
        let ws: Vec<_> = (1..=9).map(|i| wallet(SignerBackend::Null, i)).collect();
        let mut ledger = SettlementLedger::new();
        ledger.fund(ws[0].address(), 100);
        let mut proposer = ws[0].clone();
        let p = proposer.make_promise_proposal(&ledger, 10).unwrap();
        let mut st = PromiseState::new(1, StationId(1), p.clone(), (1..=9).map(StationId)).unwrap();
        st.exclude_proposer_verdict = exclude;
        for (i, v) in votes.iter().enumerate() {
            st.add_verification(StationId(i as u32 + 1), &ws[i].make_promise_verify(p.tx_nonce, *v).unwrap()).unwrap();
        }
        let counted: Vec<bool> = votes.iter().enumerate().filter(|(i, _)| !(exclude && *i == 0)).map(|(_, v)| *v).collect();
        let yes = counted.iter().filter(|v| **v).count();
        let want = if counted.is_empty() { None } else { Some(2 * yes > counted.len()) };
        prop_assert_eq!(st.decision(), want);
    }
}

#[test]
fn offers_are_signed_and_bounded() {
    let mut a = wallet(SignerBackend::Ecdsa, 1);
    let b = wallet(SignerBackend::Ecdsa, 2);
    let mut ledger = SettlementLedger::new();
    ledger.fund(a.address(), 50);

    let c = a.make_offer(&ledger, 20, vec![pay(&b, 20)]).unwrap();
    let mut tampered = c.clone();
    tampered.outputs[0].amount = 21;
    tampered.amount = 21;
    assert_eq!(ledger.settle_offer(&tampered), Err(TokenError::InvalidTx("signature")));
    ledger.settle_offer(&c).unwrap();
    assert_eq!(ledger.balance(&a.address()), 30);
    assert_eq!(ledger.balance(&b.address()), 20);
    assert!(matches!(ledger.settle_offer(&c), Err(TokenError::Replay { .. })));

    assert!(matches!(
        a.make_offer(&ledger, 31, vec![pay(&b, 31)]),
        Err(TokenError::InsufficientFunds {
            balance: 30,
            amount: 31
        })
    ));
    let many: Vec<_> = (0..8).map(|_| pay(&b, 1)).collect();
    assert!(matches!(
        a.make_offer(&ledger, 8, many),
        Err(TokenError::TooLarge { .. })
    ));
}

#[test]
fn promise_parts_must_match_the_proposal() {
    let mut a = wallet(SignerBackend::Null, 1);
    let b = wallet(SignerBackend::Null, 2);
    let mut ledger = SettlementLedger::new();
    ledger.fund(a.address(), 50);
    let p = a.make_promise_proposal(&ledger, 7).unwrap();
    let mut st = PromiseState::new(1, StationId(1), p.clone(), [StationId(1), StationId(2)]).unwrap();
    assert_eq!(
        st.add_output(StationId(3), &b.make_promise_output(p.tx_nonce).unwrap()),
        Err(TokenError::NotParticipant(StationId(3)))
    );
    assert!(st
        .add_output(StationId(2), &b.make_promise_output(p.tx_nonce + 1).unwrap())
        .is_err());
    assert!(st
        .add_verification(StationId(2), &b.make_promise_output(p.tx_nonce).unwrap())
        .is_err());
    assert!(PromiseState::new(1, StationId(1), b.make_promise_output(1).unwrap(), [StationId(1)]).is_err());

    // no verdicts: nothing moves but the promise is closed
    assert_eq!(ledger.settle_promise(&mut st), Ok(None));
    assert_eq!(ledger.settlements(), 0);
}

#[test]
fn remainder_stays_with_the_proposer() {
    let mut ws: Vec<_> = (1..=4).map(|i| wallet(SignerBackend::Null, i)).collect();
    let mut ledger = SettlementLedger::new();
    ledger.fund(ws[0].address(), 100);
    let p = ws[0].make_promise_proposal(&ledger, 10).unwrap();
    let mut st = PromiseState::new(1, StationId(1), p.clone(), (1..=4).map(StationId)).unwrap();
    for (i, w) in ws.iter_mut().enumerate() {
        let id = StationId(i as u32 + 1);
        st.add_output(id, &w.make_promise_output(p.tx_nonce).unwrap()).unwrap();
        st.add_verification(id, &w.make_promise_verify(p.tx_nonce, true).unwrap())
            .unwrap();
    }
    ledger.settle_promise(&mut st).unwrap().unwrap();
    assert_eq!(ledger.balance(&ws[0].address()), 91);
    for w in &ws[1..] {
        assert_eq!(ledger.balance(&w.address()), 3);
    }
}
