//! The channel node: consumes one channel's transaction stream, restores
//! exact order from hash pointers, deduplicates, keeps balances and emits
//! checkpoints, settlement requests and dispute transcripts.

mod config;
mod reorder;
mod snapshot;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

pub use config::{ChannelConfig, ConfigError, Cosigners};
pub use reorder::{reconstruct_order, BufferError, Buffered, ForkEvidence, ReorderBuffer};
pub use snapshot::SnapshotError;

use crate::event_log::{ControlKind, ControlMessage};
use crate::protocol::{
    transaction_hash, verify_signed_invoice, verify_signed_invoices, Address, Amount, Canonical, Checkpoint,
    CheckpointReason, Hash256, Signature, SignedInvoice, Violation,
};
use crate::Tick;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("invalid transaction: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("transaction for channel `{found}` delivered to `{expected}`")]
    WrongChannel { expected: String, found: String },
    #[error("buyer and supplier must be the two distinct channel parties")]
    NotChannelParties,
    #[error("sequence {sequence} is beyond the reorder window (next {next}, capacity {capacity})")]
    OrderingWindowExceeded { sequence: u64, next: u64, capacity: usize },
    #[error("sequence {sequence} overdraws the buyer (balance {balance}, price {price})")]
    InsufficientFunds { sequence: u64, balance: Amount, price: Amount },
    #[error("hash pointer of sequence {0} does not match the chain head")]
    HashPointerMismatch(u64),
    #[error("conflicting signed transactions at one chain position")]
    ForkDetected(Box<ForkEvidence>),
    #[error("chain halted at sequence {0} after an overdraft")]
    Halted(u64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("control message for unknown channel `{0}`")]
    UnknownChannel(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Transactions since the last settlement, in chain order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisputeTranscript {
    pub channel: String,
    /// Sequence of the settlement the transcript continues from.
    pub after_sequence: u64,
    pub transactions: Vec<SignedInvoice>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeOutput {
    Checkpoint(Checkpoint),
    SettlementRequest(Checkpoint),
    DisputeSubmission(DisputeTranscript),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    /// Sequences applied by this call, in order (the ingested one plus any
    /// buffered successors it unblocked).
    Applied(Vec<u64>),
    Buffered,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub disposition: Disposition,
    pub outputs: Vec<NodeOutput>,
    /// Set when draining the buffer hit an overdraft; the chain is invalid
    /// from that sequence on.
    pub halted_at: Option<u64>,
}

impl Ingested {
    fn simple(disposition: Disposition) -> Self {
        Ingested {
            disposition,
            outputs: Vec::new(),
            halted_at: None,
        }
    }
}

/// Sign the signing-mode bytes of `cp` with both parties' keys.
pub fn cosign_checkpoint(cp: &mut Checkpoint, cosigners: &Cosigners) {
    let msg = cp.signing_bytes();
    cp.signature_a = cosigners.a.sign(&msg);
    cp.signature_b = cosigners.b.sign(&msg);
}

/// Live state of one channel.
#[derive(Debug, Clone)]
pub struct ChannelNode {
    config: ChannelConfig,
    cosigners: Cosigners,
    address_a: Address,
    address_b: Address,
    applied_ids: HashSet<String>,
    history: Vec<SignedInvoice>,
    chain_head: Hash256,
    head_id: String,
    next_sequence: u64,
    balances: BTreeMap<Address, Amount>,
    pending: ReorderBuffer,
    last_checkpoint_sequence: u64,
    last_checkpoint_time: Tick,
    halted_at: Option<u64>,
    forks: Vec<ForkEvidence>,
}

impl ChannelNode {
    pub fn open(config: ChannelConfig, cosigners: Cosigners) -> Result<Self, NodeError> {
        config.validate()?;
        cosigners.check(&config)?;
        let address_a = config.address_a();
        let address_b = config.address_b();
        let balances = BTreeMap::from([(address_a, config.deposit_a), (address_b, config.deposit_b)]);
        Ok(ChannelNode {
            pending: ReorderBuffer::new(config.reorder_capacity),
            config,
            cosigners,
            address_a,
            address_b,
            applied_ids: HashSet::new(),
            history: Vec::new(),
            chain_head: Hash256::ZERO,
            head_id: String::new(),
            next_sequence: 1,
            balances,
            last_checkpoint_sequence: 0,
            last_checkpoint_time: 0,
            halted_at: None,
            forks: Vec::new(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn channel(&self) -> &str {
        &self.config.channel
    }

    pub fn balances(&self) -> &BTreeMap<Address, Amount> {
        &self.balances
    }

    pub fn balance(&self, address: &Address) -> Amount {
        self.balances.get(address).copied().unwrap_or(0)
    }

    pub fn chain_head(&self) -> Hash256 {
        self.chain_head
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn last_applied_sequence(&self) -> u64 {
        self.next_sequence - 1
    }

    pub fn last_checkpoint_sequence(&self) -> u64 {
        self.last_checkpoint_sequence
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn history(&self) -> &[SignedInvoice] {
        &self.history
    }

    pub fn is_halted(&self) -> Option<u64> {
        self.halted_at
    }

    pub fn forks(&self) -> &[ForkEvidence] {
        &self.forks
    }

    pub fn has_applied(&self, invoice_id: &str) -> bool {
        self.applied_ids.contains(invoice_id)
    }

    /// Process one delivered transaction.
    pub fn ingest(&mut self, si: &SignedInvoice, now: Tick) -> Result<Ingested, IngestError> {
        if let Some(done) = self.precheck(si)? {
            return Ok(done);
        }
        let violations = verify_signed_invoice(si, self.config.currency);
        self.accept(si, violations, now)
    }

    /// Process a batch of deliveries in order. Signatures of the whole
    /// batch are checked together; results match calling [`ingest`] on each
    /// element in turn.
    ///
    /// [`ingest`]: ChannelNode::ingest
    pub fn ingest_batch(&mut self, batch: &[SignedInvoice], now: Tick) -> Vec<Result<Ingested, IngestError>> {
        let mut seen = HashSet::new();
        let fresh: Vec<SignedInvoice> = batch
            .iter()
            .filter(|si| {
                !self.applied_ids.contains(&si.invoice_id)
                    && !self.pending.contains_id(&si.invoice_id)
                    && seen.insert(si.invoice_id.as_str())
            })
            .cloned()
            .collect();
        let verdicts = verify_signed_invoices(&fresh, self.config.currency);
        let mut verdicts = fresh
            .iter()
            .map(|si| si.invoice_id.clone())
            .zip(verdicts)
            .collect::<std::collections::HashMap<_, _>>();
        batch
            .iter()
            .map(|si| {
                if let Some(done) = self.precheck(si)? {
                    return Ok(done);
                }
                let violations = verdicts
                    .remove(&si.invoice_id)
                    .unwrap_or_else(|| verify_signed_invoice(si, self.config.currency));
                self.accept(si, violations, now)
            })
            .collect()
    }

    fn precheck(&self, si: &SignedInvoice) -> Result<Option<Ingested>, IngestError> {
        if let Some(at) = self.halted_at {
            return Err(IngestError::Halted(at));
        }
        if self.applied_ids.contains(&si.invoice_id) || self.pending.contains_id(&si.invoice_id) {
            return Ok(Some(Ingested::simple(Disposition::Duplicate)));
        }
        if si.channel != self.config.channel {
            return Err(IngestError::WrongChannel {
                expected: self.config.channel.clone(),
                found: si.channel.clone(),
            });
        }
        Ok(None)
    }

    fn accept(&mut self, si: &SignedInvoice, violations: Vec<Violation>, now: Tick) -> Result<Ingested, IngestError> {
        if !violations.is_empty() {
            return Err(IngestError::Invalid(violations));
        }
        if !self.is_party_transfer(si) {
            return Err(IngestError::NotChannelParties);
        }
        let next = self.next_sequence;
        if si.sequence < next {
            // Not a duplicate (ids differ) yet claims an applied position.
            let evidence = ForkEvidence {
                first: self.history[si.sequence as usize - 1].clone(),
                second: si.clone(),
            };
            self.forks.push(evidence.clone());
            return Err(IngestError::ForkDetected(Box::new(evidence)));
        }
        if si.sequence == next {
            let ptr = &si.hash_pointer_to_previous;
            if ptr.transaction_hash != self.chain_head || ptr.transaction_id != self.head_id {
                return Err(IngestError::HashPointerMismatch(si.sequence));
            }
            let balance = self.balance(&si.buyer_address);
            if balance < si.price {
                self.halted_at = Some(si.sequence);
                return Err(IngestError::InsufficientFunds {
                    sequence: si.sequence,
                    balance,
                    price: si.price,
                });
            }
            let mut outputs = Vec::new();
            let mut applied = vec![si.sequence];
            self.apply(si.clone(), now, &mut outputs);
            let halted_at = self.drain(now, &mut applied, &mut outputs);
            return Ok(Ingested {
                disposition: Disposition::Applied(applied),
                outputs,
                halted_at,
            });
        }
        let capacity = self.config.reorder_capacity;
        if si.sequence > next + capacity as u64 {
            return Err(IngestError::OrderingWindowExceeded {
                sequence: si.sequence,
                next,
                capacity,
            });
        }
        match self.pending.insert(si.clone()) {
            Ok(Buffered::Inserted) => Ok(Ingested::simple(Disposition::Buffered)),
            Ok(Buffered::AlreadyHeld) => Ok(Ingested::simple(Disposition::Duplicate)),
            Err(BufferError::Fork(evidence)) => {
                self.forks.push((*evidence).clone());
                Err(IngestError::ForkDetected(evidence))
            }
            Err(BufferError::Full) => Err(IngestError::OrderingWindowExceeded {
                sequence: si.sequence,
                next,
                capacity,
            }),
        }
    }

    fn is_party_transfer(&self, si: &SignedInvoice) -> bool {
        let parties = [self.address_a, self.address_b];
        si.buyer_address != si.supplier_address
            && parties.contains(&si.buyer_address)
            && parties.contains(&si.supplier_address)
    }

    /// Apply buffered successors of the head for as long as they link.
    fn drain(&mut self, now: Tick, applied: &mut Vec<u64>, outputs: &mut Vec<NodeOutput>) -> Option<u64> {
        while let Some(next) = self.pending.take_successor(&self.chain_head) {
            let linked = next.sequence == self.next_sequence && next.hash_pointer_to_previous.transaction_id == self.head_id;
            if !linked {
                // Signed but mis-numbered; it can never be applied.
                continue;
            }
            if self.balance(&next.buyer_address) < next.price {
                self.halted_at = Some(next.sequence);
                return Some(next.sequence);
            }
            applied.push(next.sequence);
            self.apply(next, now, outputs);
        }
        None
    }

    fn apply(&mut self, si: SignedInvoice, now: Tick, outputs: &mut Vec<NodeOutput>) {
        self.transfer(&si);
        self.chain_head = transaction_hash(&si);
        self.head_id.clone_from(&si.invoice_id);
        self.next_sequence += 1;
        self.applied_ids.insert(si.invoice_id.clone());
        self.history.push(si);
        if let Some(cp) = self.maybe_checkpoint(now) {
            outputs.push(NodeOutput::Checkpoint(cp));
        }
    }

    fn transfer(&mut self, si: &SignedInvoice) {
        *self.balances.get_mut(&si.buyer_address).expect("buyer is a party") -= si.price;
        *self.balances.get_mut(&si.supplier_address).expect("supplier is a party") += si.price;
        let total: u128 = self.balances.values().map(|&v| v as u128).sum();
        assert_eq!(total, self.config.total_deposits() as u128, "channel balances must conserve deposits");
    }

    /// Emit at most one checkpoint: MODULO when the last applied sequence is
    /// a multiple of `m`, otherwise TIMEOUT when `checkpoint_timeout` ticks
    /// have passed since the previous checkpoint and something is
    /// uncommitted.
    pub fn maybe_checkpoint(&mut self, now: Tick) -> Option<Checkpoint> {
        let last = self.last_applied_sequence();
        if last <= self.last_checkpoint_sequence {
            return None;
        }
        if last.is_multiple_of(self.config.checkpoint_modulo) {
            return Some(self.checkpoint(CheckpointReason::Modulo, now));
        }
        if now.saturating_sub(self.last_checkpoint_time) >= self.config.checkpoint_timeout {
            return Some(self.checkpoint(CheckpointReason::Timeout, now));
        }
        None
    }

    /// Clock tick with no delivery.
    pub fn tick(&mut self, now: Tick) -> Option<NodeOutput> {
        self.maybe_checkpoint(now).map(NodeOutput::Checkpoint)
    }

    /// Co-signed checkpoint of the current state; counts as the latest
    /// checkpoint from now on.
    pub fn checkpoint(&mut self, reason: CheckpointReason, now: Tick) -> Checkpoint {
        let placeholder = Signature([0u8; 64]);
        let mut cp = Checkpoint {
            channel: self.config.channel.clone(),
            sequence: self.last_applied_sequence(),
            balances: self.balances.clone(),
            chain_head: self.chain_head,
            signature_a: placeholder,
            signature_b: placeholder,
            reason,
        };
        cosign_checkpoint(&mut cp, &self.cosigners);
        self.last_checkpoint_sequence = cp.sequence;
        self.last_checkpoint_time = now;
        cp
    }

    pub fn handle_control(&mut self, msg: &ControlMessage, now: Tick) -> Result<NodeOutput, NodeError> {
        if msg.channel != self.config.channel {
            return Err(NodeError::UnknownChannel(msg.channel.clone()));
        }
        Ok(match msg.kind {
            ControlKind::UnscheduledSettlement => {
                NodeOutput::SettlementRequest(self.checkpoint(CheckpointReason::Unscheduled, now))
            }
            ControlKind::DisputedSettlement => NodeOutput::DisputeSubmission(self.dispute_transcript()),
        })
    }

    /// Every applied transaction after the last checkpoint, in chain order.
    pub fn dispute_transcript(&self) -> DisputeTranscript {
        DisputeTranscript {
            channel: self.config.channel.clone(),
            after_sequence: self.last_checkpoint_sequence,
            transactions: self.history[self.last_checkpoint_sequence as usize..].to_vec(),
        }
    }
}
