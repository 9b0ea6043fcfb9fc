//! Deterministic in-process partitioned log.
//!
//! Records are durable and never mutated. Consumers pull through a
//! [`DeliveryStream`] whose [`FaultProfile`] may reorder records by a bounded
//! distance and inject duplicates, but never drops anything.
//!
//! Reordering gives each record a delivery key `log_position + U[0, d]` and
//! always releases the smallest key first. A record is released once no
//! record that could still arrive may precede it, or when the stream is
//! flushed. Either way every first delivery lands within `d` positions of
//! its log position.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::codec::{self, Canonical, CodecError, Decoder, Encoder, Kind, Mode};
use crate::protocol::types::{get_address, put_address};
use crate::protocol::{digest, Address, SignedInvoice};

pub const TRANSACTIONS_TOPIC: &str = "transactions";
pub const CONTROL_TOPIC: &str = "control";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("topic `{0}` must have at least one partition")]
    NoPartitions(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` has no partition {partition}")]
    UnknownPartition { topic: String, partition: usize },
    #[error("fault profile: {0}")]
    InvalidProfile(String),
    #[error("record in {file} is not a protocol message: {source}")]
    Undecodable { file: String, source: CodecError },
    #[error("bad log file name `{0}`")]
    BadFileName(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub offset: u64,
    pub key: Arc<[u8]>,
    pub value: Arc<[u8]>,
}

#[derive(Debug, Default, Clone)]
pub struct Partition {
    records: Vec<Record>,
}

impl Partition {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn next_offset(&self) -> u64 {
        self.records.len() as u64
    }
}

#[derive(Debug, Clone)]
pub struct Topic {
    name: String,
    partitions: Vec<Partition>,
    // (partition, offset) in append order; defines the merged log order a
    // multi-partition subscriber sees.
    append_order: Vec<(usize, u64)>,
}

impl Topic {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition_for(&self, key: &[u8]) -> usize {
        partition_for(key, self.partitions.len())
    }
}

/// `digest(key) mod partition_count`, reading the first 8 digest bytes as a
/// big-endian integer.
pub fn partition_for(key: &[u8], partitions: usize) -> usize {
    let d = digest(key);
    let head = u64::from_be_bytes(d.0[..8].try_into().unwrap());
    (head % partitions as u64) as usize
}

#[derive(Debug, Default, Clone)]
pub struct EventLog {
    topics: BTreeMap<String, Topic>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_topic(&mut self, name: &str, partitions: usize) -> Result<&Topic, LogError> {
        if partitions == 0 {
            return Err(LogError::NoPartitions(name.to_string()));
        }
        if self.topics.contains_key(name) {
            return Err(LogError::DuplicateTopic(name.to_string()));
        }
        let topic = Topic {
            name: name.to_string(),
            partitions: vec![Partition::default(); partitions],
            append_order: Vec::new(),
        };
        Ok(self.topics.entry(name.to_string()).or_insert(topic))
    }

    pub fn topic(&self, name: &str) -> Result<&Topic, LogError> {
        self.topics
            .get(name)
            .ok_or_else(|| LogError::UnknownTopic(name.to_string()))
    }

    /// Append a record; the log does not interpret `value`.
    pub fn append(&mut self, topic: &str, key: &[u8], value: &[u8]) -> Result<(usize, u64), LogError> {
        let t = self
            .topics
            .get_mut(topic)
            .ok_or_else(|| LogError::UnknownTopic(topic.to_string()))?;
        let p = partition_for(key, t.partitions.len());
        let part = &mut t.partitions[p];
        let offset = part.next_offset();
        part.records.push(Record {
            offset,
            key: key.into(),
            value: value.into(),
        });
        t.append_order.push((p, offset));
        Ok((p, offset))
    }

    pub fn subscribe(
        &self,
        topic: &str,
        partitions: &[usize],
        profile: FaultProfile,
    ) -> Result<DeliveryStream, LogError> {
        let t = self.topic(topic)?;
        for &p in partitions {
            if p >= t.partitions.len() {
                return Err(LogError::UnknownPartition {
                    topic: topic.to_string(),
                    partition: p,
                });
            }
        }
        profile.validate()?;
        let mut wanted = vec![false; t.partitions.len()];
        for &p in partitions {
            wanted[p] = true;
        }
        Ok(DeliveryStream {
            topic: topic.to_string(),
            wanted,
            key_filter: None,
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            cursor: 0,
            pulled: 0,
            serial: 0,
            first_delivered: 0,
            heap: BinaryHeap::new(),
            stats: DeliveryStats::default(),
        })
    }

    /// Write one `<topic>.<partition>.plog` file per partition into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<Vec<PathBuf>, LogError> {
        let mut written = Vec::new();
        for t in self.topics.values() {
            for (i, p) in t.partitions.iter().enumerate() {
                let path = dir.join(format!("{}.{}.plog", t.name, i));
                let framed = codec::write_frames(p.records.iter().map(|r| &*r.value));
                fs::write(&path, framed)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Rebuild a log from `.plog` files. Record keys are recovered from the
    /// decoded messages, so every record must be a protocol message.
    /// Cross-partition append order is not stored; restored topics order
    /// partitions one after another.
    pub fn restore(dir: &Path) -> Result<EventLog, LogError> {
        let mut files: BTreeMap<String, BTreeMap<usize, PathBuf>> = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = name.strip_suffix(".plog") else {
                continue;
            };
            let (topic, part) = stem
                .rsplit_once('.')
                .ok_or_else(|| LogError::BadFileName(name.to_string()))?;
            let part: usize = part
                .parse()
                .map_err(|_| LogError::BadFileName(name.to_string()))?;
            files.entry(topic.to_string()).or_default().insert(part, path.clone());
        }
        let mut log = EventLog::new();
        for (topic, parts) in files {
            let count = parts.keys().max().map_or(0, |m| m + 1);
            log.create_topic(&topic, count)?;
            let t = log.topics.get_mut(&topic).unwrap();
            for (idx, path) in parts {
                let data = fs::read(&path)?;
                let file = path.display().to_string();
                let frames = codec::read_frames(&data).map_err(|source| LogError::Undecodable {
                    file: file.clone(),
                    source,
                })?;
                for value in frames {
                    let msg = LogMessage::decode(value).map_err(|source| LogError::Undecodable {
                        file: file.clone(),
                        source,
                    })?;
                    let part = &mut t.partitions[idx];
                    let offset = part.next_offset();
                    part.records.push(Record {
                        offset,
                        key: msg.channel().as_bytes().into(),
                        value: value.into(),
                    });
                    t.append_order.push((idx, offset));
                }
            }
        }
        Ok(log)
    }
}

/// Probability as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probability {
    num: u32,
    den: u32,
}

impl Probability {
    pub const ZERO: Probability = Probability { num: 0, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, String> {
        if den == 0 || num > den {
            return Err(format!("{num}/{den} is not a probability"));
        }
        Ok(Probability { num, den })
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    fn sample(&self, rng: &mut impl Rng) -> bool {
        self.num > 0 && rng.gen_ratio(self.num, self.den)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Probability {
    type Err = String;

    /// Accepts `a/b` or a decimal such as `0.35`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| format!("bad probability `{s}`"))?;
            let d = d.trim().parse().map_err(|_| format!("bad probability `{s}`"))?;
            return Probability::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad probability `{s}`"));
        }
        let int: u32 = int.parse().map_err(|_| format!("bad probability `{s}`"))?;
        let den = 10u32.pow(frac.len() as u32);
        let frac_v: u32 = if frac.is_empty() { 0 } else { frac.parse().unwrap() };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(|| format!("bad probability `{s}`"))?;
        Probability::new(num, den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultProfile {
    pub seed: u64,
    pub duplicate_probability: Probability,
    pub max_reorder_distance: u64,
    /// The log is durable; anything but zero is rejected.
    pub drop_probability: Probability,
}

impl FaultProfile {
    /// No faults: delivery equals log order.
    pub fn identity(seed: u64) -> Self {
        FaultProfile {
            seed,
            duplicate_probability: Probability::ZERO,
            max_reorder_distance: 0,
            drop_probability: Probability::ZERO,
        }
    }

    pub fn new(seed: u64, duplicate_probability: Probability, max_reorder_distance: u64) -> Self {
        FaultProfile {
            seed,
            duplicate_probability,
            max_reorder_distance,
            drop_probability: Probability::ZERO,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        FaultProfile { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), LogError> {
        if !self.drop_probability.is_zero() {
            return Err(LogError::InvalidProfile(
                "drop probability must be 0; records are never lost".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub partition: usize,
    pub record: Record,
    pub duplicate: bool,
    /// Position of the record in the subscriber's merged log order.
    pub log_position: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryStats {
    pub records: u64,
    pub deliveries: u64,
    pub duplicates: u64,
    /// Largest |first-delivery rank - log position| seen so far, counting
    /// first deliveries only.
    pub max_displacement: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    key: u64,
    serial: u64,
    log_position: u64,
    partition: usize,
    offset: u64,
    duplicate: bool,
}

/// Pull-based consumer over a set of partitions.
#[derive(Debug)]
pub struct DeliveryStream {
    topic: String,
    wanted: Vec<bool>,
    key_filter: Option<Vec<u8>>,
    profile: FaultProfile,
    rng: ChaCha8Rng,
    cursor: usize,
    pulled: u64,
    serial: u64,
    first_delivered: u64,
    heap: BinaryHeap<Reverse<Pending>>,
    stats: DeliveryStats,
}

impl DeliveryStream {
    /// Only deliver records whose key equals `key`. Positions and faults are
    /// then computed over the filtered sequence alone.
    pub fn with_key_filter(mut self, key: &[u8]) -> Self {
        self.key_filter = Some(key.to_vec());
        self
    }

    pub fn stats(&self) -> DeliveryStats {
        self.stats
    }

    pub fn profile(&self) -> &FaultProfile {
        &self.profile
    }

    /// Records pulled but not yet delivered (duplicates included).
    pub fn in_flight(&self) -> usize {
        self.heap.len()
    }

    /// Fetch newly appended records. Returns how many were taken.
    pub fn pull(&mut self, log: &EventLog) -> Result<usize, LogError> {
        let t = log.topic(&self.topic)?;
        let mut taken = 0;
        while let Some(&(p, off)) = t.append_order.get(self.cursor) {
            self.cursor += 1;
            if !self.wanted[p] {
                continue;
            }
            if let Some(k) = &self.key_filter {
                if *t.partitions[p].records[off as usize].key != k[..] {
                    continue;
                }
            }
            let jitter = self.jitter();
            self.push(Pending {
                key: self.pulled + jitter,
                serial: 0,
                log_position: self.pulled,
                partition: p,
                offset: off,
                duplicate: false,
            });
            self.pulled += 1;
            self.stats.records += 1;
            taken += 1;
        }
        Ok(taken)
    }

    fn jitter(&mut self) -> u64 {
        match self.profile.max_reorder_distance {
            0 => 0,
            d => self.rng.gen_range(0..=d),
        }
    }

    fn push(&mut self, mut p: Pending) {
        p.serial = self.serial;
        self.serial += 1;
        self.heap.push(Reverse(p));
    }

    /// Next delivery whose position is already settled, if any.
    pub fn next_ready(&mut self, log: &EventLog) -> Option<Delivery> {
        match self.heap.peek() {
            Some(Reverse(p)) if p.key <= self.pulled => self.pop(log),
            _ => None,
        }
    }

    /// Next delivery regardless of whether more records could still arrive
    /// ahead of it. Used when the producer is idle.
    pub fn flush_next(&mut self, log: &EventLog) -> Option<Delivery> {
        self.pop(log)
    }

    /// Pull, then deliver the next record, flushing when nothing new is
    /// available. Returns `None` once every record so far is delivered.
    pub fn next_delivery(&mut self, log: &EventLog) -> Result<Option<Delivery>, LogError> {
        self.pull(log)?;
        Ok(self.next_ready(log).or_else(|| self.flush_next(log)))
    }

    fn pop(&mut self, log: &EventLog) -> Option<Delivery> {
        let Reverse(p) = self.heap.pop()?;
        let t = log.topic(&self.topic).ok()?;
        let record = t.partitions[p.partition].records[p.offset as usize].clone();
        self.stats.deliveries += 1;
        if p.duplicate {
            self.stats.duplicates += 1;
        } else {
            let rank = self.first_delivered;
            self.first_delivered += 1;
            self.stats.max_displacement = self.stats.max_displacement.max(rank.abs_diff(p.log_position));
            if self.profile.duplicate_probability.sample(&mut self.rng) {
                let later = 1 + self.jitter();
                self.push(Pending {
                    key: p.key + later,
                    duplicate: true,
                    ..p
                });
            }
        }
        Some(Delivery {
            partition: p.partition,
            record,
            duplicate: p.duplicate,
            log_position: p.log_position,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControlKind {
    UnscheduledSettlement,
    DisputedSettlement,
}

impl ControlKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::UnscheduledSettlement => "UNSCHEDULED_SETTLEMENT",
            ControlKind::DisputedSettlement => "DISPUTED_SETTLEMENT",
        }
    }
}

/// Settlement commands carried on the control topic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlMessage {
    pub channel: String,
    pub kind: ControlKind,
    pub requester: Address,
}

impl Canonical for ControlMessage {
    fn encode(&self, mode: Mode) -> Vec<u8> {
        let mut e = Encoder::message(Kind::ControlMessage, mode);
        e.str(&self.channel).str(self.kind.as_str());
        put_address(&mut e, &self.requester);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::ControlMessage)?;
        let channel = d.str("channel")?;
        let kind = match d.str("kind")?.as_str() {
            "UNSCHEDULED_SETTLEMENT" => ControlKind::UnscheduledSettlement,
            "DISPUTED_SETTLEMENT" => ControlKind::DisputedSettlement,
            other => {
                return Err(CodecError::BadValue {
                    field: "kind",
                    reason: format!("unknown control kind `{other}`"),
                })
            }
        };
        let requester = get_address(&mut d, "requester")?;
        d.finish()?;
        Ok(ControlMessage {
            channel,
            kind,
            requester,
        })
    }
}

/// Any message that may appear as a log record value.
// Transactions dominate traffic; boxing them would cost an allocation each.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogMessage {
    Transaction(SignedInvoice),
    Control(ControlMessage),
}

impl LogMessage {
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        match codec::peek_kind(bytes)? {
            Kind::SignedInvoice => Ok(LogMessage::Transaction(SignedInvoice::decode(bytes)?)),
            Kind::ControlMessage => Ok(LogMessage::Control(ControlMessage::decode(bytes)?)),
            other => Err(CodecError::UnknownKind(other as u8)),
        }
    }

    pub fn channel(&self) -> &str {
        match self {
            LogMessage::Transaction(si) => &si.channel,
            LogMessage::Control(c) => &c.channel,
        }
    }
}
