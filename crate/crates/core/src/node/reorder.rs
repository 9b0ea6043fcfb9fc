//! Sliding buffer that relinks out-of-order transactions by hash pointer.

use std::collections::HashMap;

use thiserror::Error;

use crate::protocol::{transaction_hash, Hash256, SignedInvoice};

/// Two distinct signed transactions claiming the same place in the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForkEvidence {
    pub first: SignedInvoice,
    pub second: SignedInvoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufferError {
    #[error("conflicting buffered transactions")]
    Fork(Box<ForkEvidence>),
    #[error("reorder buffer is full")]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Buffered {
    Inserted,
    AlreadyHeld,
}

#[derive(Debug, Clone)]
pub struct ReorderBuffer {
    capacity: usize,
    by_predecessor: HashMap<Hash256, SignedInvoice>,
    by_sequence: HashMap<u64, Hash256>,
}

impl ReorderBuffer {
    pub fn new(capacity: usize) -> Self {
        ReorderBuffer {
            capacity,
            by_predecessor: HashMap::new(),
            by_sequence: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.by_predecessor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_predecessor.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.by_predecessor.values().any(|si| si.invoice_id == id)
    }

    pub fn insert(&mut self, si: SignedInvoice) -> Result<Buffered, BufferError> {
        let prev = si.hash_pointer_to_previous.transaction_hash;
        if let Some(existing) = self.by_predecessor.get(&prev) {
            if *existing == si {
                return Ok(Buffered::AlreadyHeld);
            }
            return Err(self.fork(existing.clone(), si));
        }
        if let Some(other_prev) = self.by_sequence.get(&si.sequence) {
            let existing = self.by_predecessor[other_prev].clone();
            return Err(self.fork(existing, si));
        }
        if self.len() >= self.capacity {
            return Err(BufferError::Full);
        }
        self.by_sequence.insert(si.sequence, prev);
        self.by_predecessor.insert(prev, si);
        Ok(Buffered::Inserted)
    }

    fn fork(&self, first: SignedInvoice, second: SignedInvoice) -> BufferError {
        BufferError::Fork(Box::new(ForkEvidence { first, second }))
    }

    /// Remove and return the element that links directly after `head`.
    pub fn take_successor(&mut self, head: &Hash256) -> Option<SignedInvoice> {
        let si = self.by_predecessor.remove(head)?;
        self.by_sequence.remove(&si.sequence);
        Some(si)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SignedInvoice> {
        self.by_predecessor.values()
    }
}

/// Longest chain that can be linked from `chain_head` using elements of
/// `buffer`, plus whatever could not be linked yet.
pub fn reconstruct_order(
    buffer: &[SignedInvoice],
    chain_head: Hash256,
) -> Result<(Vec<SignedInvoice>, Vec<SignedInvoice>), Box<ForkEvidence>> {
    let mut links: HashMap<Hash256, &SignedInvoice> = HashMap::new();
    for si in buffer {
        let prev = si.hash_pointer_to_previous.transaction_hash;
        if let Some(existing) = links.insert(prev, si) {
            if existing != si {
                return Err(Box::new(ForkEvidence {
                    first: existing.clone(),
                    second: si.clone(),
                }));
            }
        }
    }
    let mut ordered = Vec::new();
    let mut head = chain_head;
    while let Some(si) = links.remove(&head) {
        head = transaction_hash(si);
        ordered.push(si.clone());
    }
    let mut rest: Vec<SignedInvoice> = links.into_values().cloned().collect();
    rest.sort_by_key(|si| si.sequence);
    Ok((ordered, rest))
}
