//! Simulated on-chain escrow: deposits, dual-signed checkpoints,
//! challenge-period settlement, dispute adjudication and hashed timelocks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::node::{ChannelConfig, ConfigError};
use crate::protocol::{
    digest, verify, verify_chain_from, Address, Amount, Canonical, ChainAnchor, Checkpoint, CheckpointReason, Hash256,
    SignedInvoice, Violation,
};
use crate::Tick;

pub const DEFAULT_CHALLENGE_PERIOD: Tick = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChallengeParams {
    pub challenge_period: Tick,
}

impl Default for ChallengeParams {
    fn default() -> Self {
        ChallengeParams {
            challenge_period: DEFAULT_CHALLENGE_PERIOD,
        }
    }
}

/// Why a dispute transcript element was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriptFault {
    Chain(Violation),
    NotChannelParties,
    Overdraft { balance: Amount, price: Amount },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EscrowError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("challenge period must be positive")]
    ZeroChallengePeriod,
    #[error("a contract for channel `{0}` is already deployed")]
    AlreadyDeployed(String),
    #[error("no contract for channel `{0}`")]
    UnknownChannel(String),
    #[error("checkpoint is for channel `{found}`, contract holds `{expected}`")]
    WrongChannel { expected: String, found: String },
    #[error("checkpoint sequence {found} is not newer than {current}")]
    StaleCheckpoint { current: u64, found: u64 },
    #[error("checkpoint signature of party {0} does not verify")]
    BadSignature(char),
    #[error("checkpoint balances do not conserve the deposits")]
    ConservationViolation,
    #[error("checkpoint leaves less than the amount locked in open hashed timelocks")]
    HtlcReserveViolation,
    #[error("settlement already finalized")]
    AlreadyFinalized,
    #[error("no settlement pending")]
    NothingPending,
    #[error("challenge window closed at tick {deadline}")]
    ChallengeWindowClosed { deadline: Tick },
    #[error("challenge window open until tick {deadline}")]
    ChallengeStillOpen { deadline: Tick },
    #[error("invalid transcript at position {index}: {fault:?}")]
    InvalidTranscript { index: usize, fault: TranscriptFault },
    #[error("transcript ends at sequence {found}, pending settlement is at {pending}")]
    NotNewer { pending: u64, found: u64 },
    #[error("{0} is not a party of this channel")]
    NotAParty(Address),
    #[error("payer and payee must be the two distinct parties")]
    SelfPayment,
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("insufficient funds: available {available}, requested {requested}")]
    InsufficientFunds { available: Amount, requested: Amount },
    #[error("timeout {timeout} is not after now ({now})")]
    BadTimeout { timeout: Tick, now: Tick },
    #[error("unknown lock `{0}`")]
    UnknownLock(String),
    #[error("lock `{0}` is not open")]
    NotOpen(String),
    #[error("preimage does not match the hash lock")]
    WrongPreimage,
    #[error("lock expired at tick {timeout}")]
    Expired { timeout: Tick },
    #[error("lock cannot be refunded before tick {timeout} has passed")]
    NotYetExpired { timeout: Tick },
    #[error("lock `{0}` is open and not yet expired")]
    HtlcOutstanding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HtlcStatus {
    Open,
    Claimed,
    Refunded,
}

impl HtlcStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HtlcStatus::Open => "OPEN",
            HtlcStatus::Claimed => "CLAIMED",
            HtlcStatus::Refunded => "REFUNDED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Htlc {
    pub lock_id: String,
    pub amount: Amount,
    pub hash_lock: Hash256,
    pub timeout: Tick,
    pub payer: Address,
    pub payee: Address,
    pub status: HtlcStatus,
    /// Revealed on a successful claim.
    pub preimage: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionSource {
    Checkpoint(CheckpointReason),
    Dispute,
}

/// The balance state a pending settlement would pay out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub sequence: u64,
    pub chain_head: Hash256,
    pub balances: BTreeMap<Address, Amount>,
    pub source: ResolutionSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Settlement {
    Open,
    Pending { resolution: Resolution, deadline: Tick },
    Finalized { resolution: Resolution, payouts: BTreeMap<Address, Amount> },
}

/// Outcome of one accepted dispute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisputeOutcome {
    pub overturned_sequence: u64,
    pub new_sequence: u64,
    pub deadline: Tick,
}

#[derive(Debug, Clone)]
pub struct EscrowContract {
    config: ChannelConfig,
    params: ChallengeParams,
    address_a: Address,
    address_b: Address,
    deposits: BTreeMap<Address, Amount>,
    latest_checkpoint: Option<Checkpoint>,
    settlement: Settlement,
    htlcs: BTreeMap<String, Htlc>,
    lock_counter: u64,
    paid_out: Amount,
    finalized_at: Option<Tick>,
}

impl EscrowContract {
    pub fn deploy(config: ChannelConfig, params: ChallengeParams) -> Result<Self, EscrowError> {
        config.validate()?;
        if params.challenge_period == 0 {
            return Err(EscrowError::ZeroChallengePeriod);
        }
        let address_a = config.address_a();
        let address_b = config.address_b();
        let deposits = BTreeMap::from([(address_a, config.deposit_a), (address_b, config.deposit_b)]);
        Ok(EscrowContract {
            config,
            params,
            address_a,
            address_b,
            deposits,
            latest_checkpoint: None,
            settlement: Settlement::Open,
            htlcs: BTreeMap::new(),
            lock_counter: 0,
            paid_out: 0,
            finalized_at: None,
        })
    }

    pub fn channel(&self) -> &str {
        &self.config.channel
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn params(&self) -> ChallengeParams {
        self.params
    }

    pub fn deposits(&self) -> &BTreeMap<Address, Amount> {
        &self.deposits
    }

    pub fn total_deposits(&self) -> Amount {
        self.config.total_deposits()
    }

    pub fn latest_checkpoint(&self) -> Option<&Checkpoint> {
        self.latest_checkpoint.as_ref()
    }

    pub fn settlement(&self) -> &Settlement {
        &self.settlement
    }

    pub fn htlcs(&self) -> &BTreeMap<String, Htlc> {
        &self.htlcs
    }

    pub fn htlc(&self, lock_id: &str) -> Option<&Htlc> {
        self.htlcs.get(lock_id)
    }

    pub fn paid_out(&self) -> Amount {
        self.paid_out
    }

    pub fn finalized_at(&self) -> Option<Tick> {
        self.finalized_at
    }

    pub fn payouts(&self) -> Option<&BTreeMap<Address, Amount>> {
        match &self.settlement {
            Settlement::Finalized { payouts, .. } => Some(payouts),
            _ => None,
        }
    }

    pub fn challenge_deadline(&self) -> Option<Tick> {
        match &self.settlement {
            Settlement::Pending { deadline, .. } => Some(*deadline),
            _ => None,
        }
    }

    /// Sequence of the newest state the contract knows about.
    pub fn current_sequence(&self) -> u64 {
        let latest = self.latest_checkpoint.as_ref().map_or(0, |cp| cp.sequence);
        match &self.settlement {
            Settlement::Pending { resolution, .. } | Settlement::Finalized { resolution, .. } => {
                latest.max(resolution.sequence)
            }
            Settlement::Open => latest,
        }
    }

    fn basis(&self) -> &BTreeMap<Address, Amount> {
        match &self.settlement {
            Settlement::Pending { resolution, .. } | Settlement::Finalized { resolution, .. } => &resolution.balances,
            Settlement::Open => self
                .latest_checkpoint
                .as_ref()
                .map_or(&self.deposits, |cp| &cp.balances),
        }
    }

    fn available_in(&self, basis: &BTreeMap<Address, Amount>, party: &Address) -> i128 {
        let mut v = basis.get(party).copied().unwrap_or(0) as i128;
        for h in self.htlcs.values() {
            match h.status {
                HtlcStatus::Open if h.payer == *party => v -= h.amount as i128,
                HtlcStatus::Claimed if h.payer == *party => v -= h.amount as i128,
                HtlcStatus::Claimed if h.payee == *party => v += h.amount as i128,
                _ => {}
            }
        }
        v
    }

    /// `party`'s funds if `basis` were the settled balances, after every
    /// lock so far. Negative when the basis cannot cover them.
    pub fn available_with(&self, basis: &BTreeMap<Address, Amount>, party: &Address) -> i128 {
        self.available_in(basis, party)
    }

    /// What `party` could still lock or be paid, given the current basis and
    /// every lock so far. Zero once finalized.
    pub fn available(&self, party: &Address) -> Amount {
        if matches!(self.settlement, Settlement::Finalized { .. }) {
            return 0;
        }
        self.available_in(self.basis(), party).max(0) as Amount
    }

    pub fn locked(&self) -> Amount {
        self.htlcs
            .values()
            .filter(|h| h.status == HtlcStatus::Open)
            .map(|h| h.amount)
            .sum()
    }

    fn assert_conservation(&self) {
        let available: Amount = [self.address_a, self.address_b].iter().map(|p| self.available(p)).sum();
        assert_eq!(
            available as u128 + self.locked() as u128 + self.paid_out as u128,
            self.total_deposits() as u128,
            "escrow must conserve deposits"
        );
    }

    fn ensure_not_finalized(&self) -> Result<(), EscrowError> {
        match self.settlement {
            Settlement::Finalized { .. } => Err(EscrowError::AlreadyFinalized),
            _ => Ok(()),
        }
    }

    fn check_party(&self, a: &Address) -> Result<(), EscrowError> {
        if *a == self.address_a || *a == self.address_b {
            Ok(())
        } else {
            Err(EscrowError::NotAParty(*a))
        }
    }

    fn validate_checkpoint(&self, cp: &Checkpoint) -> Result<(), EscrowError> {
        if cp.channel != self.config.channel {
            return Err(EscrowError::WrongChannel {
                expected: self.config.channel.clone(),
                found: cp.channel.clone(),
            });
        }
        let msg = cp.signing_bytes();
        if !verify(&self.config.party_a, &msg, &cp.signature_a) {
            return Err(EscrowError::BadSignature('A'));
        }
        if !verify(&self.config.party_b, &msg, &cp.signature_b) {
            return Err(EscrowError::BadSignature('B'));
        }
        let parties_only = cp.balances.len() == 2
            && cp.balances.contains_key(&self.address_a)
            && cp.balances.contains_key(&self.address_b);
        if !parties_only || cp.total() != self.total_deposits() as u128 {
            return Err(EscrowError::ConservationViolation);
        }
        self.check_reserve(&cp.balances)
    }

    fn check_reserve(&self, basis: &BTreeMap<Address, Amount>) -> Result<(), EscrowError> {
        let short = [self.address_a, self.address_b]
            .iter()
            .any(|p| self.available_in(basis, p) < 0);
        if short {
            Err(EscrowError::HtlcReserveViolation)
        } else {
            Ok(())
        }
    }

    fn resolution_of(cp: &Checkpoint) -> Resolution {
        Resolution {
            sequence: cp.sequence,
            chain_head: cp.chain_head,
            balances: cp.balances.clone(),
            source: ResolutionSource::Checkpoint(cp.reason),
        }
    }

    /// Record a newer dual-signed checkpoint. A pending settlement is
    /// superseded by it, with the deadline reset.
    pub fn submit_checkpoint(&mut self, cp: &Checkpoint, now: Tick) -> Result<(), EscrowError> {
        self.ensure_not_finalized()?;
        self.validate_checkpoint(cp)?;
        let current = self.current_sequence();
        if cp.sequence <= current {
            return Err(EscrowError::StaleCheckpoint {
                current,
                found: cp.sequence,
            });
        }
        if matches!(self.settlement, Settlement::Pending { .. }) {
            self.settlement = Settlement::Pending {
                resolution: Self::resolution_of(cp),
                deadline: now + self.params.challenge_period,
            };
        }
        self.latest_checkpoint = Some(cp.clone());
        self.assert_conservation();
        Ok(())
    }

    /// Open (or supersede) a pending settlement on `cp`. A checkpoint at
    /// the already-accepted sequence is allowed when it commits to the same
    /// balances and head, so the latest committed state can be settled.
    pub fn request_settlement(&mut self, cp: &Checkpoint, now: Tick) -> Result<Tick, EscrowError> {
        self.ensure_not_finalized()?;
        self.validate_checkpoint(cp)?;
        let current = self.current_sequence();
        // Before any checkpoint the accepted state is the opening one.
        let same_as_latest = match &self.latest_checkpoint {
            Some(l) => l.sequence == cp.sequence && l.balances == cp.balances && l.chain_head == cp.chain_head,
            None => cp.sequence == 0 && cp.balances == self.deposits && cp.chain_head == Hash256::ZERO,
        };
        let acceptable = match &self.settlement {
            Settlement::Pending { resolution, .. } => cp.sequence > resolution.sequence && cp.sequence > current,
            _ => cp.sequence > current || same_as_latest,
        };
        if !acceptable {
            return Err(EscrowError::StaleCheckpoint {
                current,
                found: cp.sequence,
            });
        }
        let deadline = now + self.params.challenge_period;
        self.settlement = Settlement::Pending {
            resolution: Self::resolution_of(cp),
            deadline,
        };
        if cp.sequence > current {
            self.latest_checkpoint = Some(cp.clone());
        }
        self.assert_conservation();
        Ok(deadline)
    }

    /// Replace the pending outcome with the state reached by replaying
    /// `transcript` on top of it. Every element is re-verified here.
    pub fn dispute(&mut self, transcript: &[SignedInvoice], now: Tick) -> Result<DisputeOutcome, EscrowError> {
        self.ensure_not_finalized()?;
        let Settlement::Pending { resolution, deadline } = &self.settlement else {
            return Err(EscrowError::NothingPending);
        };
        if now > *deadline {
            return Err(EscrowError::ChallengeWindowClosed { deadline: *deadline });
        }
        let anchor = ChainAnchor {
            sequence: resolution.sequence,
            head: resolution.chain_head,
            head_id: None,
        };
        verify_chain_from(&anchor, transcript, self.config.currency).map_err(|f| EscrowError::InvalidTranscript {
            index: f.position,
            fault: TranscriptFault::Chain(f.violation),
        })?;
        let Some(last) = transcript.last() else {
            return Err(EscrowError::NotNewer {
                pending: resolution.sequence,
                found: resolution.sequence,
            });
        };

        let mut balances = resolution.balances.clone();
        for (i, si) in transcript.iter().enumerate() {
            let index = i + 1;
            let parties = [self.address_a, self.address_b];
            if si.buyer_address == si.supplier_address
                || !parties.contains(&si.buyer_address)
                || !parties.contains(&si.supplier_address)
            {
                return Err(EscrowError::InvalidTranscript {
                    index,
                    fault: TranscriptFault::NotChannelParties,
                });
            }
            let balance = balances[&si.buyer_address];
            if balance < si.price {
                return Err(EscrowError::InvalidTranscript {
                    index,
                    fault: TranscriptFault::Overdraft {
                        balance,
                        price: si.price,
                    },
                });
            }
            *balances.get_mut(&si.buyer_address).expect("party") -= si.price;
            *balances.get_mut(&si.supplier_address).expect("party") += si.price;
        }
        self.check_reserve(&balances)?;

        let outcome = DisputeOutcome {
            overturned_sequence: resolution.sequence,
            new_sequence: last.sequence,
            deadline: now + self.params.challenge_period,
        };
        self.settlement = Settlement::Pending {
            resolution: Resolution {
                sequence: last.sequence,
                chain_head: crate::protocol::transaction_hash(last),
                balances,
                source: ResolutionSource::Dispute,
            },
            deadline: outcome.deadline,
        };
        self.assert_conservation();
        Ok(outcome)
    }

    /// Close the channel once the challenge window has passed. Expired open
    /// locks are refunded first.
    pub fn finalize(&mut self, now: Tick) -> Result<&BTreeMap<Address, Amount>, EscrowError> {
        self.ensure_not_finalized()?;
        let Settlement::Pending { deadline, .. } = &self.settlement else {
            return Err(EscrowError::NothingPending);
        };
        if now <= *deadline {
            return Err(EscrowError::ChallengeStillOpen { deadline: *deadline });
        }
        if let Some(h) = self
            .htlcs
            .values()
            .find(|h| h.status == HtlcStatus::Open && now <= h.timeout)
        {
            return Err(EscrowError::HtlcOutstanding(h.lock_id.clone()));
        }
        for h in self.htlcs.values_mut() {
            if h.status == HtlcStatus::Open {
                h.status = HtlcStatus::Refunded;
            }
        }
        let basis = self.basis().clone();
        let payouts: BTreeMap<Address, Amount> = [self.address_a, self.address_b]
            .iter()
            .map(|p| (*p, self.available_in(&basis, p) as Amount))
            .collect();
        self.paid_out = payouts.values().sum();
        let Settlement::Pending { resolution, .. } = std::mem::replace(&mut self.settlement, Settlement::Open) else {
            unreachable!()
        };
        self.settlement = Settlement::Finalized { resolution, payouts };
        self.finalized_at = Some(now);
        self.assert_conservation();
        Ok(self.payouts().expect("just finalized"))
    }

    pub fn htlc_lock(
        &mut self,
        payer: Address,
        payee: Address,
        amount: Amount,
        hash_lock: Hash256,
        timeout: Tick,
        now: Tick,
    ) -> Result<String, EscrowError> {
        self.ensure_not_finalized()?;
        self.check_party(&payer)?;
        self.check_party(&payee)?;
        if payer == payee {
            return Err(EscrowError::SelfPayment);
        }
        if amount == 0 {
            return Err(EscrowError::ZeroAmount);
        }
        if timeout <= now {
            return Err(EscrowError::BadTimeout { timeout, now });
        }
        let available = self.available(&payer);
        if available < amount {
            return Err(EscrowError::InsufficientFunds {
                available,
                requested: amount,
            });
        }
        self.lock_counter += 1;
        let lock_id = format!("htlc-{}", self.lock_counter);
        self.htlcs.insert(
            lock_id.clone(),
            Htlc {
                lock_id: lock_id.clone(),
                amount,
                hash_lock,
                timeout,
                payer,
                payee,
                status: HtlcStatus::Open,
                preimage: None,
            },
        );
        self.assert_conservation();
        Ok(lock_id)
    }

    fn open_lock(&mut self, lock_id: &str) -> Result<&mut Htlc, EscrowError> {
        self.ensure_not_finalized()?;
        let h = self
            .htlcs
            .get_mut(lock_id)
            .ok_or_else(|| EscrowError::UnknownLock(lock_id.to_owned()))?;
        if h.status != HtlcStatus::Open {
            return Err(EscrowError::NotOpen(lock_id.to_owned()));
        }
        Ok(h)
    }

    pub fn htlc_claim(&mut self, lock_id: &str, preimage: &[u8], now: Tick) -> Result<(), EscrowError> {
        let h = self.open_lock(lock_id)?;
        if digest(preimage) != h.hash_lock {
            return Err(EscrowError::WrongPreimage);
        }
        if now > h.timeout {
            return Err(EscrowError::Expired { timeout: h.timeout });
        }
        h.status = HtlcStatus::Claimed;
        h.preimage = Some(preimage.to_vec());
        self.assert_conservation();
        Ok(())
    }

    pub fn htlc_refund(&mut self, lock_id: &str, now: Tick) -> Result<(), EscrowError> {
        let h = self.open_lock(lock_id)?;
        if now <= h.timeout {
            return Err(EscrowError::NotYetExpired { timeout: h.timeout });
        }
        h.status = HtlcStatus::Refunded;
        self.assert_conservation();
        Ok(())
    }

    /// Preimage published by a successful claim on `lock_id`.
    pub fn revealed_preimage(&self, lock_id: &str) -> Option<&[u8]> {
        self.htlcs.get(lock_id)?.preimage.as_deref()
    }

    /// Structured text settlement report.
    pub fn settlement_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "channel {}", self.config.channel);
        match &self.settlement {
            Settlement::Open => {
                let _ = writeln!(out, "status open");
            }
            Settlement::Pending { resolution, deadline } => {
                let _ = writeln!(out, "status pending");
                let _ = writeln!(out, "pending_sequence {}", resolution.sequence);
                let _ = writeln!(out, "deadline {deadline}");
            }
            Settlement::Finalized { resolution, payouts } => {
                let _ = writeln!(out, "status finalized");
                let _ = writeln!(out, "final_sequence {}", resolution.sequence);
                let source = match resolution.source {
                    ResolutionSource::Checkpoint(r) => r.as_str(),
                    ResolutionSource::Dispute => "DISPUTE",
                };
                let _ = writeln!(out, "resolved_by {source}");
                for (addr, amount) in payouts {
                    let _ = writeln!(out, "payout {addr} {amount}");
                }
            }
        }
        for h in self.htlcs.values() {
            let _ = writeln!(
                out,
                "htlc {} {} amount={} payer={} payee={} timeout={}",
                h.lock_id,
                h.status.as_str(),
                h.amount,
                h.payer,
                h.payee,
                h.timeout
            );
        }
        out
    }
}

/// All deployed contracts, one per channel.
#[derive(Debug, Clone, Default)]
pub struct EscrowRegistry {
    contracts: BTreeMap<String, EscrowContract>,
}

impl EscrowRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deploy(&mut self, config: ChannelConfig, params: ChallengeParams) -> Result<&mut EscrowContract, EscrowError> {
        if self.contracts.contains_key(&config.channel) {
            return Err(EscrowError::AlreadyDeployed(config.channel));
        }
        let c = EscrowContract::deploy(config, params)?;
        Ok(self.contracts.entry(c.channel().to_owned()).or_insert(c))
    }

    pub fn get(&self, channel: &str) -> Result<&EscrowContract, EscrowError> {
        self.contracts
            .get(channel)
            .ok_or_else(|| EscrowError::UnknownChannel(channel.to_owned()))
    }

    pub fn get_mut(&mut self, channel: &str) -> Result<&mut EscrowContract, EscrowError> {
        self.contracts
            .get_mut(channel)
            .ok_or_else(|| EscrowError::UnknownChannel(channel.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EscrowContract> {
        self.contracts.values()
    }
}
