//! Token transfers carried in extension containers: single-shot signed
//! offers and two-stage promises, settled on an in-memory ledger that
//! stands in for an external DLT.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, EncodingError};
use crate::crypto::{SigningKey, VerifyingKey};
use crate::types::{Address, StationId, TokenContainer, TokenMechanism, TokenOutput};

/// Default ceiling for one encoded token container.
pub const DEFAULT_MAX_TX_BYTES: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("insufficient funds: balance {balance}, amount {amount}")]
    InsufficientFunds { balance: u64, amount: u64 },
    #[error("transaction of {len} bytes exceeds {max}")]
    TooLarge { len: usize, max: usize },
    #[error("nonce {nonce} not above last accepted {last}")]
    Replay { nonce: u64, last: u64 },
    #[error("invalid transaction: {0}")]
    InvalidTx(&'static str),
    #[error("station {0} is not an event participant")]
    NotParticipant(StationId),
    #[error("promise already settled")]
    AlreadySettled,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAccount {
    pub address: Address,
    pub balance: u64,
    pub last_nonce: u64,
}

/// Outcome of an accepted settlement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub from: Address,
    pub nonce: u64,
    pub transfers: Vec<(Address, u64)>,
}

fn signer_of(c: &TokenContainer) -> Result<VerifyingKey, TokenError> {
    let key = VerifyingKey::from_certificate(&c.certificate).map_err(|_| TokenError::InvalidTx("certificate"))?;
    if !key.verify(&c.signing_payload(), &c.tx_signature) {
        return Err(TokenError::InvalidTx("signature"));
    }
    Ok(key)
}

fn check_size(c: &TokenContainer, max: usize) -> Result<(), TokenError> {
    let len = codec::token_container_len(c)?;
    if len > max {
        return Err(TokenError::TooLarge { len, max });
    }
    Ok(())
}

/// Single-writer account store.
#[derive(Debug, Clone)]
pub struct SettlementLedger {
    accounts: BTreeMap<Address, TokenAccount>,
    pub max_tx_bytes: usize,
    settlements: u64,
}

impl Default for SettlementLedger {
    fn default() -> Self {
        SettlementLedger {
            accounts: BTreeMap::new(),
            max_tx_bytes: DEFAULT_MAX_TX_BYTES,
            settlements: 0,
        }
    }
}

impl SettlementLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mints `amount` into an account. Only used to fund scenarios.
    pub fn fund(&mut self, address: Address, amount: u64) {
        self.account_mut(address).balance += amount;
    }

    fn account_mut(&mut self, address: Address) -> &mut TokenAccount {
        self.accounts.entry(address).or_insert(TokenAccount {
            address,
            balance: 0,
            last_nonce: 0,
        })
    }

    pub fn account(&self, address: &Address) -> Option<&TokenAccount> {
        self.accounts.get(address)
    }

    pub fn balance(&self, address: &Address) -> u64 {
        self.accounts.get(address).map_or(0, |a| a.balance)
    }

    pub fn last_nonce(&self, address: &Address) -> u64 {
        self.accounts.get(address).map_or(0, |a| a.last_nonce)
    }

    pub fn total_supply(&self) -> u128 {
        self.accounts.values().map(|a| a.balance as u128).sum()
    }

    /// Number of accepted settlements so far.
    pub fn settlements(&self) -> u64 {
        self.settlements
    }

    pub fn accounts(&self) -> impl Iterator<Item = &TokenAccount> {
        self.accounts.values()
    }

    fn check_nonce(&self, from: &Address, nonce: u64) -> Result<(), TokenError> {
        let last = self.last_nonce(from);
        if nonce <= last {
            return Err(TokenError::Replay { nonce, last });
        }
        Ok(())
    }

    fn apply(&mut self, from: Address, nonce: u64, transfers: Vec<(Address, u64)>) -> Result<Receipt, TokenError> {
        let total: u64 = transfers.iter().map(|(_, a)| a).sum();
        let balance = self.balance(&from);
        if total > balance {
            return Err(TokenError::InsufficientFunds { balance, amount: total });
        }
        let acct = self.account_mut(from);
        acct.balance -= total;
        acct.last_nonce = nonce;
        for (to, amount) in &transfers {
            self.account_mut(*to).balance += amount;
        }
        self.settlements += 1;
        Ok(Receipt { from, nonce, transfers })
    }

    /// Settles an offer atomically.
    pub fn settle_offer(&mut self, c: &TokenContainer) -> Result<Receipt, TokenError> {
        if c.mechanism != TokenMechanism::Offer {
            return Err(TokenError::InvalidTx("not an offer"));
        }
        check_size(c, self.max_tx_bytes)?;
        let key = signer_of(c)?;
        if c.outputs.is_empty() {
            return Err(TokenError::InvalidTx("no outputs"));
        }
        if c.outputs.iter().map(|o| o.amount).sum::<u64>() != c.amount {
            return Err(TokenError::InvalidTx("outputs do not sum to amount"));
        }
        let from = key.address();
        self.check_nonce(&from, c.tx_nonce)?;
        let transfers = c.outputs.iter().map(|o| (o.address, o.amount)).collect();
        self.apply(from, c.tx_nonce, transfers)
    }

    /// Settles a promise if its verifications carry a strict majority.
    /// Returns `Ok(None)` when the majority was not reached; the promise is
    /// closed either way.
    pub fn settle_promise(&mut self, p: &mut PromiseState) -> Result<Option<Receipt>, TokenError> {
        if p.settled {
            return Err(TokenError::AlreadySettled);
        }
        let from = p.proposer_address;
        self.check_nonce(&from, p.proposal.tx_nonce)?;
        p.settled = true;
        if p.decision() != Some(true) {
            return Ok(None);
        }
        let recipients = p.recipients();
        if recipients.is_empty() {
            return Ok(None);
        }
        let share = p.offered_amount / recipients.len() as u64;
        let transfers = recipients.into_iter().map(|a| (a, share)).collect();
        self.apply(from, p.proposal.tx_nonce, transfers).map(Some)
    }

    pub fn snapshot(&self) -> BTreeMap<String, TokenAccount> {
        self.accounts
            .iter()
            .map(|(a, acct)| (a.0.to_hex(), acct.clone()))
            .collect()
    }
}

/// A token identity, independent of the station identity.
#[derive(Debug, Clone)]
pub struct TokenWallet {
    key: SigningKey,
    address: Address,
    next_nonce: u64,
    certificate: Vec<u8>,
    pub max_tx_bytes: usize,
}

impl TokenWallet {
    pub fn new(key: SigningKey, certificate_bytes: usize) -> Self {
        let vk = key.verifying_key();
        TokenWallet {
            address: vk.address(),
            certificate: vk.certificate(certificate_bytes),
            key,
            next_nonce: 1,
            max_tx_bytes: DEFAULT_MAX_TX_BYTES,
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    fn fresh_nonce(&mut self, ledger: Option<&SettlementLedger>) -> u64 {
        let floor = ledger.map_or(0, |l| l.last_nonce(&self.address) + 1);
        let n = self.next_nonce.max(floor);
        self.next_nonce = n + 1;
        n
    }

    fn build(
        &self,
        mechanism: TokenMechanism,
        amount: u64,
        outputs: Vec<TokenOutput>,
        tx_nonce: u64,
    ) -> Result<TokenContainer, TokenError> {
        let mut c = TokenContainer {
            mechanism,
            amount,
            outputs,
            tx_nonce,
            tx_signature: Default::default(),
            certificate: self.certificate.clone(),
        };
        c.tx_signature = self.key.sign(&c.signing_payload());
        check_size(&c, self.max_tx_bytes)?;
        Ok(c)
    }

    /// Signed offer paying `outputs`, which must sum to `amount`.
    pub fn make_offer(
        &mut self,
        ledger: &SettlementLedger,
        amount: u64,
        outputs: Vec<TokenOutput>,
    ) -> Result<TokenContainer, TokenError> {
        if outputs.is_empty() {
            return Err(TokenError::InvalidTx("no outputs"));
        }
        if outputs.iter().map(|o| o.amount).sum::<u64>() != amount {
            return Err(TokenError::InvalidTx("outputs do not sum to amount"));
        }
        let balance = ledger.balance(&self.address);
        if amount > balance {
            return Err(TokenError::InsufficientFunds { balance, amount });
        }
        let nonce = self.fresh_nonce(Some(ledger));
        self.build(TokenMechanism::Offer, amount, outputs, nonce)
    }

    /// First stage of a promise: the amount, no outputs yet.
    pub fn make_promise_proposal(
        &mut self,
        ledger: &SettlementLedger,
        amount: u64,
    ) -> Result<TokenContainer, TokenError> {
        let balance = ledger.balance(&self.address);
        if amount > balance {
            return Err(TokenError::InsufficientFunds { balance, amount });
        }
        let nonce = self.fresh_nonce(Some(ledger));
        self.build(TokenMechanism::PromiseProposal, amount, Vec::new(), nonce)
    }

    /// A recipient's output address, bound to the proposal's nonce.
    pub fn make_promise_output(&self, proposal_nonce: u64) -> Result<TokenContainer, TokenError> {
        let out = TokenOutput {
            address: self.address,
            amount: 0,
        };
        self.build(TokenMechanism::PromiseOutput, 0, vec![out], proposal_nonce)
    }

    /// A participant's verdict on the event, bound to the proposal's nonce.
    pub fn make_promise_verify(&self, proposal_nonce: u64, success: bool) -> Result<TokenContainer, TokenError> {
        self.build(
            TokenMechanism::PromiseVerify,
            success as u64,
            Vec::new(),
            proposal_nonce,
        )
    }
}

/// Collected state of one promise.
#[derive(Debug, Clone)]
pub struct PromiseState {
    pub event_id: u32,
    pub offered_amount: u64,
    pub proposer: StationId,
    pub proposer_address: Address,
    pub proposal: TokenContainer,
    pub participants: BTreeSet<StationId>,
    pub collected_outputs: BTreeMap<StationId, Address>,
    pub verifications: BTreeMap<StationId, bool>,
    /// Leave the proposer's own verdict out of the vote.
    pub exclude_proposer_verdict: bool,
    pub settled: bool,
}

impl PromiseState {
    pub fn new(
        event_id: u32,
        proposer: StationId,
        proposal: TokenContainer,
        participants: impl IntoIterator<Item = StationId>,
    ) -> Result<Self, TokenError> {
        if proposal.mechanism != TokenMechanism::PromiseProposal {
            return Err(TokenError::InvalidTx("not a promise proposal"));
        }
        let key = signer_of(&proposal)?;
        Ok(PromiseState {
            event_id,
            offered_amount: proposal.amount,
            proposer,
            proposer_address: key.address(),
            proposal,
            participants: participants.into_iter().collect(),
            collected_outputs: BTreeMap::new(),
            verifications: BTreeMap::new(),
            exclude_proposer_verdict: false,
            settled: false,
        })
    }

    fn check_part(
        &self,
        station: StationId,
        c: &TokenContainer,
        mech: TokenMechanism,
    ) -> Result<VerifyingKey, TokenError> {
        if !self.participants.contains(&station) {
            return Err(TokenError::NotParticipant(station));
        }
        if c.mechanism != mech {
            return Err(TokenError::InvalidTx("unexpected mechanism"));
        }
        if c.tx_nonce != self.proposal.tx_nonce {
            return Err(TokenError::InvalidTx("nonce does not match proposal"));
        }
        signer_of(c)
    }

    pub fn add_output(&mut self, station: StationId, c: &TokenContainer) -> Result<(), TokenError> {
        let key = self.check_part(station, c, TokenMechanism::PromiseOutput)?;
        let addr = c.outputs.first().map(|o| o.address).unwrap_or_else(|| key.address());
        self.collected_outputs.entry(station).or_insert(addr);
        Ok(())
    }

    pub fn add_verification(&mut self, station: StationId, c: &TokenContainer) -> Result<(), TokenError> {
        self.check_part(station, c, TokenMechanism::PromiseVerify)?;
        let verdict = match c.amount {
            0 => false,
            1 => true,
            _ => return Err(TokenError::InvalidTx("verdict must be 0 or 1")),
        };
        self.verifications.entry(station).or_insert(verdict);
        Ok(())
    }

    /// `Some(true)` on a strict majority of successes among cast verdicts,
    /// `Some(false)` otherwise, `None` if nothing was cast.
    pub fn decision(&self) -> Option<bool> {
        let votes: Vec<bool> = self
            .verifications
            .iter()
            .filter(|(s, _)| !(self.exclude_proposer_verdict && **s == self.proposer))
            .map(|(_, v)| *v)
            .collect();
        if votes.is_empty() {
            return None;
        }
        let yes = votes.iter().filter(|v| **v).count();
        Some(2 * yes > votes.len())
    }

    /// Output addresses in ascending station order, proposer excluded.
    pub fn recipients(&self) -> Vec<Address> {
        self.collected_outputs
            .iter()
            .filter(|(s, _)| **s != self.proposer)
            .map(|(_, a)| *a)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SignerBackend;

    fn wallet(seed: &str) -> TokenWallet {
        TokenWallet::new(SigningKey::from_seed(SignerBackend::Null, seed.as_bytes()), 64)
    }

    #[test]
    fn offer_settles_once() {
        let mut ledger = SettlementLedger::new();
        let mut a = wallet("a");
        let b = wallet("b");
        ledger.fund(a.address(), 100);
        let out = vec![TokenOutput {
            address: b.address(),
            amount: 30,
        }];
        let c = a.make_offer(&ledger, 30, out).unwrap();
        ledger.settle_offer(&c).unwrap();
        assert_eq!(ledger.balance(&a.address()), 70);
        assert_eq!(ledger.balance(&b.address()), 30);
        assert!(matches!(ledger.settle_offer(&c), Err(TokenError::Replay { .. })));
        assert_eq!(ledger.total_supply(), 100);
    }

    #[test]
    fn tampered_amount() {
        let mut ledger = SettlementLedger::new();
        let mut a = wallet("a");
        ledger.fund(a.address(), 100);
        let out = vec![TokenOutput {
            address: a.address(),
            amount: 10,
        }];
        let mut c = a.make_offer(&ledger, 10, out).unwrap();
        c.amount = 11;
        c.outputs[0].amount = 11;
        assert_eq!(ledger.settle_offer(&c), Err(TokenError::InvalidTx("signature")));
    }

    #[test]
    fn insufficient() {
        let ledger = SettlementLedger::new();
        let mut a = wallet("a");
        let out = vec![TokenOutput {
            address: a.address(),
            amount: 1,
        }];
        assert!(matches!(
            a.make_offer(&ledger, 1, out),
            Err(TokenError::InsufficientFunds { .. })
        ));
    }

    #[test]
    fn oversized_rejected_at_construction() {
        let ledger = SettlementLedger::new();
        let mut a = TokenWallet::new(SigningKey::from_seed(SignerBackend::Null, b"a"), 400);
        assert!(matches!(
            a.make_promise_proposal(&ledger, 0),
            Err(TokenError::TooLarge { .. })
        ));
    }

    #[test]
    fn promise_tie_does_not_settle() {
        let mut ledger = SettlementLedger::new();
        let mut sv = wallet("sv");
        let tv = wallet("tv");
        ledger.fund(sv.address(), 10);
        let prop = sv.make_promise_proposal(&ledger, 10).unwrap();
        let mut p = PromiseState::new(1, StationId(0), prop.clone(), [StationId(0), StationId(1)]).unwrap();
        p.add_output(StationId(1), &tv.make_promise_output(prop.tx_nonce).unwrap())
            .unwrap();
        p.add_verification(StationId(0), &sv.make_promise_verify(prop.tx_nonce, true).unwrap())
            .unwrap();
        p.add_verification(StationId(1), &tv.make_promise_verify(prop.tx_nonce, false).unwrap())
            .unwrap();
        assert_eq!(p.decision(), Some(false));
        assert_eq!(ledger.settle_promise(&mut p), Ok(None));
        assert_eq!(ledger.balance(&sv.address()), 10);
    }

    #[test]
    fn outsider_output_rejected() {
        let mut ledger = SettlementLedger::new();
        let mut sv = wallet("sv");
        let other = wallet("x");
        ledger.fund(sv.address(), 10);
        let prop = sv.make_promise_proposal(&ledger, 10).unwrap();
        let mut p = PromiseState::new(1, StationId(0), prop.clone(), [StationId(0), StationId(1)]).unwrap();
        assert_eq!(
            p.add_output(StationId(9), &other.make_promise_output(prop.tx_nonce).unwrap()),
            Err(TokenError::NotParticipant(StationId(9)))
        );
    }
}
