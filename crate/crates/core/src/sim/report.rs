//! Simulation report, rendered as structured text or key=value records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::event_log::DeliveryStats;
use crate::protocol::{Address, Amount, Hash256};
use crate::Tick;

pub const REPORT_HEADER: &str = "parsec-report v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewState {
    pub sequence: u64,
    pub head: Hash256,
    pub balances: BTreeMap<Address, Amount>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointEntry {
    pub tick: Tick,
    pub sequence: u64,
    pub reason: String,
    /// `node`, `control`, `stale` or `close`.
    pub origin: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisputeEntry {
    pub tick: Tick,
    pub after_sequence: u64,
    pub transactions: usize,
    /// Set when the dispute replaced the pending outcome.
    pub overturned: Option<(u64, u64)>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtlcEntry {
    pub name: String,
    pub lock_id: String,
    pub status: String,
    pub amount: Amount,
    pub payer: Address,
    pub payee: Address,
    pub timeout: Tick,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SettlementEntry {
    /// `open`, `pending` or `finalized`.
    pub status: String,
    pub sequence: Option<u64>,
    pub resolved_by: Option<String>,
    pub finalized_at: Option<Tick>,
    pub payouts: BTreeMap<Address, Amount>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelReport {
    pub deposits: BTreeMap<Address, Amount>,
    pub node: ViewState,
    pub oracle: Result<ViewState, String>,
    pub delivery: DeliveryStats,
    pub checkpoints: Vec<CheckpointEntry>,
    pub disputes: Vec<DisputeEntry>,
    pub settlement: SettlementEntry,
    pub htlcs: Vec<HtlcEntry>,
    pub events: Vec<(Tick, String)>,
    pub divergence: Vec<String>,
}

impl ChannelReport {
    pub fn new(deposits: BTreeMap<Address, Amount>, node: ViewState) -> Self {
        ChannelReport {
            deposits,
            node,
            oracle: Err("not computed".into()),
            delivery: DeliveryStats::default(),
            checkpoints: Vec::new(),
            disputes: Vec::new(),
            settlement: SettlementEntry::default(),
            htlcs: Vec::new(),
            events: Vec::new(),
            divergence: Vec::new(),
        }
    }

    /// Fill `divergence` from the node and oracle views.
    pub fn compare(&mut self) {
        self.divergence.clear();
        match &self.oracle {
            Err(e) => self.divergence.push(format!("oracle: {e}")),
            Ok(o) => {
                if o.sequence != self.node.sequence {
                    self.divergence.push("sequence".into());
                }
                if o.head != self.node.head {
                    self.divergence.push("chain_head".into());
                }
                if o.balances != self.node.balances {
                    self.divergence.push("balances".into());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub seed: u64,
    pub end_tick: Tick,
    pub channels: BTreeMap<String, ChannelReport>,
}

impl SimReport {
    /// One `<channel>: <field>` line per divergence.
    pub fn divergence_flags(&self) -> Vec<String> {
        self.channels
            .iter()
            .flat_map(|(name, c)| c.divergence.iter().map(move |d| format!("{name}: {d}")))
            .collect()
    }

    pub fn has_divergence(&self) -> bool {
        self.channels.values().any(|c| !c.divergence.is_empty())
    }

    pub fn total_deposits(&self) -> u128 {
        self.channels
            .values()
            .flat_map(|c| c.deposits.values())
            .map(|&v| v as u128)
            .sum()
    }

    pub fn total_payouts(&self) -> u128 {
        self.channels
            .values()
            .flat_map(|c| c.settlement.payouts.values())
            .map(|&v| v as u128)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "{REPORT_HEADER}");
        let _ = writeln!(o, "seed {}", self.seed);
        let _ = writeln!(o, "end_tick {}", self.end_tick);
        for (name, c) in &self.channels {
            let _ = writeln!(o, "channel {name}");
            for (a, v) in &c.deposits {
                let _ = writeln!(o, "  deposit {a} {v}");
            }
            let _ = writeln!(o, "  node sequence={} head={}", c.node.sequence, c.node.head);
            for (a, v) in &c.node.balances {
                let _ = writeln!(o, "  node_balance {a} {v}");
            }
            match &c.oracle {
                Ok(v) => {
                    let _ = writeln!(o, "  oracle sequence={} head={}", v.sequence, v.head);
                    for (a, b) in &v.balances {
                        let _ = writeln!(o, "  oracle_balance {a} {b}");
                    }
                }
                Err(e) => {
                    let _ = writeln!(o, "  oracle error {e}");
                }
            }
            let d = &c.delivery;
            let _ = writeln!(
                o,
                "  delivery records={} deliveries={} duplicates={} max_displacement={}",
                d.records, d.deliveries, d.duplicates, d.max_displacement
            );
            for cp in &c.checkpoints {
                let _ = writeln!(
                    o,
                    "  checkpoint tick={} seq={} reason={} origin={} outcome={}",
                    cp.tick, cp.sequence, cp.reason, cp.origin, cp.outcome
                );
            }
            for dp in &c.disputes {
                let _ = writeln!(
                    o,
                    "  dispute tick={} after={} transactions={} outcome={}",
                    dp.tick, dp.after_sequence, dp.transactions, dp.outcome
                );
            }
            let s = &c.settlement;
            let _ = write!(o, "  settlement status={}", s.status);
            if let Some(q) = s.sequence {
                let _ = write!(o, " sequence={q}");
            }
            if let Some(r) = &s.resolved_by {
                let _ = write!(o, " resolved_by={r}");
            }
            if let Some(t) = s.finalized_at {
                let _ = write!(o, " finalized_at={t}");
            }
            o.push('\n');
            for (a, v) in &s.payouts {
                let _ = writeln!(o, "  payout {a} {v}");
            }
            for h in &c.htlcs {
                let _ = writeln!(
                    o,
                    "  htlc {} id={} status={} amount={} payer={} payee={} timeout={}",
                    h.name, h.lock_id, h.status, h.amount, h.payer, h.payee, h.timeout
                );
            }
            for (t, e) in &c.events {
                let _ = writeln!(o, "  event tick={t} {e}");
            }
            if c.divergence.is_empty() {
                let _ = writeln!(o, "  divergence none");
            }
            for d in &c.divergence {
                let _ = writeln!(o, "  divergence {d}");
            }
        }
        let _ = writeln!(
            o,
            "summary channels={} divergences={} deposits={} payouts={}",
            self.channels.len(),
            self.divergence_flags().len(),
            self.total_deposits(),
            self.total_payouts()
        );
        o
    }

    pub fn to_kv(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: String, v: String| {
            let _ = writeln!(o, "{k}={v}");
        };
        kv("report".into(), REPORT_HEADER.replace(' ', "/"));
        kv("seed".into(), self.seed.to_string());
        kv("end_tick".into(), self.end_tick.to_string());
        for (name, c) in &self.channels {
            let p = format!("channel.{name}");
            for (a, v) in &c.deposits {
                kv(format!("{p}.deposit.{a}"), v.to_string());
            }
            kv(format!("{p}.node.sequence"), c.node.sequence.to_string());
            kv(format!("{p}.node.head"), c.node.head.to_hex());
            for (a, v) in &c.node.balances {
                kv(format!("{p}.node.balance.{a}"), v.to_string());
            }
            match &c.oracle {
                Ok(v) => {
                    kv(format!("{p}.oracle.sequence"), v.sequence.to_string());
                    kv(format!("{p}.oracle.head"), v.head.to_hex());
                    for (a, b) in &v.balances {
                        kv(format!("{p}.oracle.balance.{a}"), b.to_string());
                    }
                }
                Err(e) => kv(format!("{p}.oracle.error"), e.clone()),
            }
            kv(format!("{p}.delivery.records"), c.delivery.records.to_string());
            kv(format!("{p}.delivery.deliveries"), c.delivery.deliveries.to_string());
            kv(format!("{p}.delivery.duplicates"), c.delivery.duplicates.to_string());
            kv(format!("{p}.delivery.max_displacement"), c.delivery.max_displacement.to_string());
            for (i, cp) in c.checkpoints.iter().enumerate() {
                let q = format!("{p}.checkpoint.{}", i + 1);
                kv(format!("{q}.tick"), cp.tick.to_string());
                kv(format!("{q}.sequence"), cp.sequence.to_string());
                kv(format!("{q}.reason"), cp.reason.clone());
                kv(format!("{q}.origin"), cp.origin.clone());
                kv(format!("{q}.outcome"), cp.outcome.clone());
            }
            for (i, dp) in c.disputes.iter().enumerate() {
                let q = format!("{p}.dispute.{}", i + 1);
                kv(format!("{q}.tick"), dp.tick.to_string());
                kv(format!("{q}.after"), dp.after_sequence.to_string());
                kv(format!("{q}.transactions"), dp.transactions.to_string());
                kv(format!("{q}.outcome"), dp.outcome.clone());
            }
            let s = &c.settlement;
            kv(format!("{p}.settlement.status"), s.status.clone());
            if let Some(q) = s.sequence {
                kv(format!("{p}.settlement.sequence"), q.to_string());
            }
            if let Some(r) = &s.resolved_by {
                kv(format!("{p}.settlement.resolved_by"), r.clone());
            }
            if let Some(t) = s.finalized_at {
                kv(format!("{p}.settlement.finalized_at"), t.to_string());
            }
            for (a, v) in &s.payouts {
                kv(format!("{p}.payout.{a}"), v.to_string());
            }
            for h in &c.htlcs {
                let q = format!("{p}.htlc.{}", h.name);
                kv(format!("{q}.id"), h.lock_id.clone());
                kv(format!("{q}.status"), h.status.clone());
                kv(format!("{q}.amount"), h.amount.to_string());
                kv(format!("{q}.payer"), h.payer.to_string());
                kv(format!("{q}.payee"), h.payee.to_string());
                kv(format!("{q}.timeout"), h.timeout.to_string());
            }
            for (i, (t, e)) in c.events.iter().enumerate() {
                kv(format!("{p}.event.{}", i + 1), format!("{t} {e}"));
            }
            kv(format!("{p}.divergence"), c.divergence.join(";"));
        }
        kv("summary.divergences".into(), self.divergence_flags().len().to_string());
        kv("summary.deposits".into(), self.total_deposits().to_string());
        kv("summary.payouts".into(), self.total_payouts().to_string());
        o
    }
}
