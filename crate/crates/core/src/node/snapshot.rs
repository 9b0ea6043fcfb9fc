//! Durable node state: config, bookkeeping, applied chain and buffered
//! transactions as one framed byte stream.

use thiserror::Error;

use super::{ChannelConfig, ChannelNode, Cosigners, NodeError};
use crate::protocol::codec::{read_frames, write_frames, Decoder, Encoder, Kind};
use crate::protocol::{verify_chain, Canonical, ChainFault, CodecError, Mode, SignedInvoice};
use crate::Tick;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot is malformed: {0}")]
    Codec(#[from] CodecError),
    #[error("snapshot is missing the {0} record")]
    Missing(&'static str),
    #[error("snapshot chain does not verify: {0}")]
    Chain(ChainFault),
    #[error("snapshot chain overdraws at sequence {0}")]
    Overdraft(u64),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Buffer(#[from] super::BufferError),
}

struct Meta {
    last_checkpoint_sequence: u64,
    last_checkpoint_time: Tick,
    halted_at: Option<u64>,
    history_len: u64,
}

fn put_opt(e: &mut Encoder, v: Option<u64>) {
    e.nested(|n| {
        if let Some(v) = v {
            n.u64(v);
        }
    });
}

fn get_opt(d: &mut Decoder<'_>, field: &'static str) -> Result<Option<u64>, CodecError> {
    d.nested(|n| match n.bytes_left() {
        0 => Ok(None),
        _ => n.u64(field).map(Some),
    })
}

impl Meta {
    fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::message(Kind::NodeMeta, Mode::Storage);
        e.u64(self.last_checkpoint_sequence).u64(self.last_checkpoint_time);
        put_opt(&mut e, self.halted_at);
        e.u64(self.history_len);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::NodeMeta)?;
        let m = Meta {
            last_checkpoint_sequence: d.u64("last_checkpoint_sequence")?,
            last_checkpoint_time: d.u64("last_checkpoint_time")?,
            halted_at: get_opt(&mut d, "halted_at")?,
            history_len: d.u64("history_len")?,
        };
        d.finish()?;
        Ok(m)
    }
}

impl ChannelNode {
    pub fn snapshot(&self) -> Vec<u8> {
        let meta = Meta {
            last_checkpoint_sequence: self.last_checkpoint_sequence,
            last_checkpoint_time: self.last_checkpoint_time,
            halted_at: self.halted_at,
            history_len: self.history.len() as u64,
        };
        let mut pending: Vec<&SignedInvoice> = self.pending.iter().collect();
        pending.sort_by_key(|si| si.sequence);
        let mut records = vec![self.config.storage_bytes(), meta.encode()];
        records.extend(self.history.iter().map(|si| si.storage_bytes()));
        records.extend(pending.into_iter().map(|si| si.storage_bytes()));
        write_frames(records.iter().map(Vec::as_slice))
    }

    /// Rebuild a node from [`snapshot`] output. The applied chain is
    /// re-verified and replayed; nothing in the snapshot is trusted blindly.
    ///
    /// [`snapshot`]: ChannelNode::snapshot
    pub fn restore(bytes: &[u8], cosigners: Cosigners) -> Result<Self, SnapshotError> {
        let frames = read_frames(bytes)?;
        let mut frames = frames.into_iter();
        let config = ChannelConfig::decode(frames.next().ok_or(SnapshotError::Missing("config"))?)?;
        let meta = Meta::decode(frames.next().ok_or(SnapshotError::Missing("meta"))?)?;
        let mut history = Vec::with_capacity(meta.history_len as usize);
        for _ in 0..meta.history_len {
            history.push(SignedInvoice::decode(frames.next().ok_or(SnapshotError::Missing("chain"))?)?);
        }
        verify_chain(&history, config.currency).map_err(SnapshotError::Chain)?;

        let mut node = ChannelNode::open(config, cosigners)?;
        for si in history {
            if !node.is_party_transfer(&si) {
                return Err(SnapshotError::Chain(ChainFault {
                    position: si.sequence as usize,
                    violation: crate::protocol::Violation::InvalidBuyerAddress,
                }));
            }
            if node.balance(&si.buyer_address) < si.price {
                return Err(SnapshotError::Overdraft(si.sequence));
            }
            node.transfer(&si);
            node.chain_head = crate::protocol::transaction_hash(&si);
            node.head_id.clone_from(&si.invoice_id);
            node.next_sequence += 1;
            node.applied_ids.insert(si.invoice_id.clone());
            node.history.push(si);
        }
        for frame in frames {
            node.pending.insert(SignedInvoice::decode(frame)?)?;
        }
        node.last_checkpoint_sequence = meta.last_checkpoint_sequence;
        node.last_checkpoint_time = meta.last_checkpoint_time;
        node.halted_at = meta.halted_at;
        Ok(node)
    }
}
