//! Whole-chain verification: sequence numbers, hash pointers and per-element
//! checks.

use std::collections::HashSet;
use std::fmt;

use super::codec::Canonical;
use super::crypto::digest;
use super::invoice::{verify_signed_invoice, verify_signed_invoices, Violation};
use super::types::{Currency, Hash256, SignedInvoice};

/// A failure located at a 1-based chain position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainFault {
    pub position: usize,
    pub violation: Violation,
}

impl fmt::Display for ChainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "position {}: {}", self.position, self.violation)
    }
}

/// The point a chain segment must continue from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainAnchor {
    /// Sequence of the last transaction before the segment (0 at genesis).
    pub sequence: u64,
    pub head: Hash256,
    /// Invoice id of the anchor transaction, when known. Settlement
    /// checkpoints only commit to the hash, so the id check is skipped
    /// when this is `None` and the anchor is not genesis.
    pub head_id: Option<String>,
}

impl ChainAnchor {
    pub fn genesis() -> Self {
        ChainAnchor {
            sequence: 0,
            head: Hash256::ZERO,
            head_id: Some(String::new()),
        }
    }
}

/// Remembers storage digests of elements that already passed the stateless
/// checks, so re-verifying long, mostly unchanged chains is cheap. Any byte
/// change to an element changes its digest and forces a full check.
#[derive(Debug, Default)]
pub struct VerifiedCache {
    seen: HashSet<(Hash256, Currency)>,
}

impl VerifiedCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(&mut self, si: &SignedInvoice, digest_: Hash256, currency: Currency) -> Vec<Violation> {
        if self.seen.contains(&(digest_, currency)) {
            return Vec::new();
        }
        let v = verify_signed_invoice(si, currency);
        if v.is_empty() {
            self.seen.insert((digest_, currency));
        }
        v
    }
}

/// Signatures are checked this many elements at a time.
const BATCH: usize = 256;

/// Walks a chain segment, yielding every fault in order.
struct Walker<'a> {
    anchor: ChainAnchor,
    currency: Currency,
    cache: Option<&'a mut VerifiedCache>,
}

impl Walker<'_> {
    fn walk(&mut self, chain: &[SignedInvoice], stop_at_first: bool) -> Vec<ChainFault> {
        let mut faults = Vec::new();
        let mut prev_hash = self.anchor.head;
        let mut prev_id = self.anchor.head_id.clone();
        for (c, block) in chain.chunks(BATCH).enumerate() {
            let hashes: Vec<Hash256> = block.iter().map(|si| digest(&si.storage_bytes())).collect();
            let mut stateless = match self.cache.as_deref_mut() {
                Some(cache) => block
                    .iter()
                    .zip(&hashes)
                    .map(|(si, h)| cache.check(si, *h, self.currency))
                    .collect(),
                None => verify_signed_invoices(block, self.currency),
            };
            for (j, si) in block.iter().enumerate() {
                let position = c * BATCH + j + 1;
                let mut here = Vec::new();
                let expected_seq = self.anchor.sequence + position as u64;
                if si.sequence != expected_seq {
                    here.push(Violation::SequenceMismatch {
                        expected: expected_seq,
                        found: si.sequence,
                    });
                }
                let ptr = &si.hash_pointer_to_previous;
                let id_ok = prev_id.as_ref().is_none_or(|id| *id == ptr.transaction_id);
                if ptr.transaction_hash != prev_hash || !id_ok {
                    here.push(Violation::BrokenHashPointer);
                }
                here.append(&mut stateless[j]);
                for violation in here {
                    faults.push(ChainFault { position, violation });
                    if stop_at_first {
                        return faults;
                    }
                }
                prev_hash = hashes[j];
                prev_id = Some(si.invoice_id.clone());
            }
        }
        faults
    }
}

/// Ok iff the chain starts at genesis, sequences run 1, 2, ..., each hash
/// pointer names its predecessor, and every element passes
/// [`verify_signed_invoice`]. Otherwise the first fault.
pub fn verify_chain(chain: &[SignedInvoice], currency: Currency) -> Result<(), ChainFault> {
    verify_chain_from(&ChainAnchor::genesis(), chain, currency)
}

pub fn verify_chain_from(
    anchor: &ChainAnchor,
    chain: &[SignedInvoice],
    currency: Currency,
) -> Result<(), ChainFault> {
    verify_chain_cached(anchor, chain, currency, None)
}

pub fn verify_chain_cached(
    anchor: &ChainAnchor,
    chain: &[SignedInvoice],
    currency: Currency,
    cache: Option<&mut VerifiedCache>,
) -> Result<(), ChainFault> {
    let mut w = Walker {
        anchor: anchor.clone(),
        currency,
        cache,
    };
    match w.walk(chain, true).into_iter().next() {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

/// Every fault in the chain, not just the first.
pub fn audit_chain(chain: &[SignedInvoice], currency: Currency) -> Vec<ChainFault> {
    Walker {
        anchor: ChainAnchor::genesis(),
        currency,
        cache: None,
    }
    .walk(chain, false)
}
