//! The scheduler. Each tick runs workload, log delivery, node processing
//! and contract calls in that order, then the clock advances.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::oracle::oracle_replay;
use super::report::{ChannelReport, CheckpointEntry, DisputeEntry, HtlcEntry, SettlementEntry, SimReport, ViewState};
use super::scenario::{Action, ChannelSpec, Preimage, Scenario, ScenarioError, TimedAction};
use crate::escrow::{EscrowContract, EscrowRegistry, ResolutionSource, Settlement};
use crate::event_log::{
    partition_for, ControlMessage, DeliveryStream, EventLog, FaultProfile, LogMessage, CONTROL_TOPIC,
    TRANSACTIONS_TOPIC,
};
use crate::node::{ChannelConfig, ChannelNode, Cosigners, NodeOutput};
use crate::protocol::{
    digest, make_signed_invoice, Address, Amount, Canonical, Checkpoint, CheckpointReason, Invoice, KeyPair,
    SignedInvoice,
};
use crate::Tick;

const TX_PARTITIONS: usize = 4;

/// Independent per-channel seed, so a channel's randomness does not depend
/// on which other channels share the run.
fn mix_seed(seed: u64, purpose: &str, channel: &str) -> u64 {
    let mut buf = seed.to_be_bytes().to_vec();
    buf.extend_from_slice(purpose.as_bytes());
    buf.push(0);
    buf.extend_from_slice(channel.as_bytes());
    u64::from_be_bytes(digest(&buf).0[..8].try_into().unwrap())
}

fn setup_err(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError {
        line: 0,
        message: e.to_string(),
    }
}

struct Chan {
    spec: ChannelSpec,
    config: ChannelConfig,
    keys: BTreeMap<String, KeyPair>,
    node: ChannelNode,
    stream: DeliveryStream,
    issued: Vec<SignedInvoice>,
    issuer_balances: BTreeMap<Address, Amount>,
    ids: ChaCha8Rng,
    appended: bool,
    inbox: Vec<SignedInvoice>,
    controls: Vec<ControlMessage>,
    outputs: Vec<(NodeOutput, &'static str)>,
    archive: Vec<Checkpoint>,
    report: ChannelReport,
    lock_names: Vec<String>,
}

impl Chan {
    fn address(&self, label: &str) -> Address {
        self.keys[label].address(self.spec.currency)
    }

    fn event(&mut self, now: Tick, text: String) {
        self.report.events.push((now, text));
    }
}

struct World {
    log: EventLog,
    control: DeliveryStream,
    chans: BTreeMap<String, Chan>,
    contracts: EscrowRegistry,
    locks: BTreeMap<String, (String, String)>,
}

impl World {
    fn new(scenario: &Scenario, channels: &[&ChannelSpec]) -> Result<Self, ScenarioError> {
        let mut log = EventLog::new();
        log.create_topic(TRANSACTIONS_TOPIC, TX_PARTITIONS).map_err(setup_err)?;
        log.create_topic(CONTROL_TOPIC, 1).map_err(setup_err)?;
        let control = log
            .subscribe(CONTROL_TOPIC, &[0], FaultProfile::identity(0))
            .map_err(setup_err)?;
        let mut contracts = EscrowRegistry::new();
        let mut chans = BTreeMap::new();
        for spec in channels {
            let ka = KeyPair::from_label(scenario.seed, &spec.a);
            let kb = KeyPair::from_label(scenario.seed, &spec.b);
            let mut config = ChannelConfig::new(ka.public_key(), kb.public_key(), spec.currency);
            config.channel = spec.name.clone();
            config.deposit_a = spec.deposit_a;
            config.deposit_b = spec.deposit_b;
            config.reorder_capacity = spec.n;
            config.checkpoint_modulo = spec.m;
            config.checkpoint_timeout = spec.timeout;
            let cosigners = Cosigners {
                a: ka.clone(),
                b: kb.clone(),
            };
            let node = ChannelNode::open(config.clone(), cosigners)
                .map_err(|e| setup_err(format!("channel `{}`: {e}", spec.name)))?;
            contracts
                .deploy(config.clone(), scenario.challenge)
                .map_err(|e| setup_err(format!("channel `{}`: {e}", spec.name)))?;
            let key = spec.name.as_bytes();
            let profile = FaultProfile::new(
                mix_seed(scenario.seed, "faults", &spec.name),
                scenario.duplicate_probability,
                scenario.max_reorder_distance,
            );
            let stream = log
                .subscribe(TRANSACTIONS_TOPIC, &[partition_for(key, TX_PARTITIONS)], profile)
                .map_err(setup_err)?
                .with_key_filter(key);
            let issuer_balances = node.balances().clone();
            let view = ViewState {
                sequence: 0,
                head: node.chain_head(),
                balances: node.balances().clone(),
            };
            let keys = BTreeMap::from([(spec.a.clone(), ka), (spec.b.clone(), kb)]);
            chans.insert(
                spec.name.clone(),
                Chan {
                    spec: (*spec).clone(),
                    report: ChannelReport::new(node.balances().clone(), view),
                    config,
                    keys,
                    node,
                    stream,
                    issued: Vec::new(),
                    issuer_balances,
                    ids: ChaCha8Rng::seed_from_u64(mix_seed(scenario.seed, "ids", &spec.name)),
                    appended: false,
                    inbox: Vec::new(),
                    controls: Vec::new(),
                    outputs: Vec::new(),
                    archive: Vec::new(),
                    lock_names: Vec::new(),
                },
            );
        }
        Ok(World {
            log,
            control,
            chans,
            contracts,
            locks: BTreeMap::new(),
        })
    }

    fn run(mut self, actions: &[&TimedAction], end: Tick) -> BTreeMap<String, ChannelReport> {
        let mut next = 0;
        for now in 0..=end {
            for c in self.chans.values_mut() {
                c.appended = false;
            }
            let mut contract_ops = Vec::new();
            while let Some(ta) = actions.get(next).filter(|ta| ta.tick == now) {
                next += 1;
                match &ta.action {
                    Action::Pay {
                        channel,
                        payer,
                        amount,
                        invoice_type,
                    } => self.pay(now, channel, payer, *amount, invoice_type),
                    Action::Control {
                        channel,
                        kind,
                        requester,
                    } => {
                        let requester = self.chans[channel].address(requester);
                        let msg = ControlMessage {
                            channel: channel.clone(),
                            kind: *kind,
                            requester,
                        };
                        self.log
                            .append(CONTROL_TOPIC, channel.as_bytes(), &msg.storage_bytes())
                            .expect("control topic exists");
                    }
                    Action::Idle => {}
                    _ => contract_ops.push(&ta.action),
                }
            }
            self.deliver(now, now == end);
            self.process(now);
            self.apply_outputs(now);
            for op in contract_ops {
                self.contract_op(now, op);
            }
        }
        self.close(end);
        self.finish()
    }

    fn pay(&mut self, now: Tick, channel: &str, payer: &str, amount: Amount, invoice_type: &str) {
        let contract = self.contracts.get(channel).expect("deployed");
        let c = self.chans.get_mut(channel).expect("validated channel");
        if matches!(contract.settlement(), Settlement::Finalized { .. }) {
            c.event(now, format!("pay refused: channel closed ({payer} {amount})"));
            return;
        }
        let buyer_addr = c.address(payer);
        let available = contract.available_with(&c.issuer_balances, &buyer_addr);
        if (amount as i128) > available {
            c.event(
                now,
                format!("pay refused: {payer} has {available} available, needs {amount}"),
            );
            return;
        }
        let seller_label = c.spec.other(payer).to_string();
        let seller_addr = c.address(&seller_label);
        let invoice = Invoice::new(seller_addr, amount, c.spec.currency, invoice_type).expect("positive amount");
        let seq = c.issued.len() as u64 + 1;
        let si = make_signed_invoice(
            &invoice,
            c.issued.last(),
            &c.spec.name,
            seq,
            &c.keys[payer],
            &c.keys[&seller_label],
            &mut c.ids,
        )
        .expect("well-formed payment");
        *c.issuer_balances.get_mut(&buyer_addr).unwrap() -= amount;
        *c.issuer_balances.get_mut(&seller_addr).unwrap() += amount;
        self.log
            .append(TRANSACTIONS_TOPIC, channel.as_bytes(), &si.storage_bytes())
            .expect("transactions topic exists");
        c.issued.push(si);
        c.appended = true;
    }

    fn deliver(&mut self, now: Tick, final_tick: bool) {
        for c in self.chans.values_mut() {
            c.stream.pull(&self.log).expect("topic exists");
            let mut got = Vec::new();
            while let Some(d) = c.stream.next_ready(&self.log) {
                got.push(d);
            }
            if final_tick || !c.appended {
                while let Some(d) = c.stream.flush_next(&self.log) {
                    got.push(d);
                }
            }
            for d in got {
                match LogMessage::decode(&d.record.value) {
                    Ok(LogMessage::Transaction(si)) => c.inbox.push(si),
                    Ok(other) => c.report.events.push((now, format!("unexpected record for {}", other.channel()))),
                    Err(e) => c.report.events.push((now, format!("undecodable record: {e}"))),
                }
            }
        }
        self.control.pull(&self.log).expect("topic exists");
        while let Some(d) = self.control.flush_next(&self.log) {
            if let Ok(LogMessage::Control(msg)) = LogMessage::decode(&d.record.value) {
                if let Some(c) = self.chans.get_mut(&msg.channel) {
                    c.controls.push(msg);
                }
            }
        }
    }

    fn process(&mut self, now: Tick) {
        for c in self.chans.values_mut() {
            let inbox = std::mem::take(&mut c.inbox);
            for (si, r) in inbox.iter().zip(c.node.ingest_batch(&inbox, now)) {
                match r {
                    Ok(ing) => {
                        c.outputs.extend(ing.outputs.into_iter().map(|o| (o, "node")));
                        if let Some(at) = ing.halted_at {
                            c.report.events.push((now, format!("chain halted at sequence {at}")));
                        }
                    }
                    Err(e) => c.report.events.push((now, format!("ingest seq={} rejected: {e}", si.sequence))),
                }
            }
            for msg in std::mem::take(&mut c.controls) {
                match c.node.handle_control(&msg, now) {
                    Ok(o) => c.outputs.push((o, "control")),
                    Err(e) => c.report.events.push((now, format!("control rejected: {e}"))),
                }
            }
            if let Some(o) = c.node.tick(now) {
                c.outputs.push((o, "node"));
            }
        }
    }

    fn apply_outputs(&mut self, now: Tick) {
        for (name, c) in self.chans.iter_mut() {
            let contract = self.contracts.get_mut(name).expect("deployed");
            for (out, origin) in std::mem::take(&mut c.outputs) {
                match out {
                    NodeOutput::Checkpoint(cp) => {
                        let outcome = match contract.submit_checkpoint(&cp, now) {
                            Ok(()) => "accepted".to_string(),
                            Err(e) => format!("rejected:{}", slug(&e)),
                        };
                        push_checkpoint(c, now, &cp, origin, outcome);
                    }
                    NodeOutput::SettlementRequest(cp) => {
                        let outcome = settle_outcome(contract.request_settlement(&cp, now));
                        push_checkpoint(c, now, &cp, origin, outcome);
                    }
                    NodeOutput::DisputeSubmission(t) => {
                        let (overturned, outcome) = match contract.dispute(&t.transactions, now) {
                            Ok(o) => (
                                Some((o.overturned_sequence, o.new_sequence)),
                                format!("overturned:{}->{}:deadline={}", o.overturned_sequence, o.new_sequence, o.deadline),
                            ),
                            Err(e) => (None, format!("rejected:{}", slug(&e))),
                        };
                        c.report.disputes.push(DisputeEntry {
                            tick: now,
                            after_sequence: t.after_sequence,
                            transactions: t.transactions.len(),
                            overturned,
                            outcome,
                        });
                    }
                }
            }
        }
    }

    fn contract_op(&mut self, now: Tick, op: &Action) {
        match op {
            Action::SettleStale {
                channel,
                requester,
                sequence,
            } => {
                let c = self.chans.get_mut(channel).expect("validated");
                let Some(cp) = c.archive.iter().rev().find(|cp| cp.sequence == *sequence).cloned() else {
                    c.event(now, format!("settle-stale by {requester}: no checkpoint at sequence {sequence}"));
                    return;
                };
                let contract = self.contracts.get_mut(channel).expect("deployed");
                let outcome = settle_outcome(contract.request_settlement(&cp, now));
                c.report.checkpoints.push(CheckpointEntry {
                    tick: now,
                    sequence: cp.sequence,
                    reason: cp.reason.as_str().into(),
                    origin: "stale".into(),
                    outcome,
                });
            }
            Action::HtlcLock {
                channel,
                name,
                payer,
                amount,
                secret,
                timeout,
            } => {
                let c = self.chans.get_mut(channel).expect("validated");
                let payer_addr = c.address(payer);
                let payee_addr = c.address(c.spec.other(payer));
                let contract = self.contracts.get_mut(channel).expect("deployed");
                match contract.htlc_lock(payer_addr, payee_addr, *amount, digest(secret.as_bytes()), *timeout, now) {
                    Ok(id) => {
                        c.lock_names.push(name.clone());
                        self.locks.insert(name.clone(), (channel.clone(), id));
                    }
                    Err(e) => c.event(now, format!("htlc-lock {name} failed: {e}")),
                }
            }
            Action::HtlcClaim {
                channel,
                name,
                preimage,
            } => {
                let secret = match preimage {
                    Preimage::Literal(s) => Some(s.as_bytes().to_vec()),
                    Preimage::RevealedBy(src) => self.locks.get(src).and_then(|(ch, id)| {
                        self.contracts
                            .get(ch)
                            .ok()
                            .and_then(|k| k.revealed_preimage(id))
                            .map(<[u8]>::to_vec)
                    }),
                };
                let result = match (self.locks.get(name), secret) {
                    (None, _) => Err(format!("htlc-claim {name}: lock was never created")),
                    (Some(_), None) => Err(format!("htlc-claim {name}: no preimage available")),
                    (Some((_, id)), Some(s)) => self
                        .contracts
                        .get_mut(channel)
                        .expect("deployed")
                        .htlc_claim(id, &s, now)
                        .map_err(|e| format!("htlc-claim {name} failed: {e}")),
                };
                if let Err(e) = result {
                    self.chans.get_mut(channel).expect("validated").event(now, e);
                }
            }
            Action::HtlcRefund { channel, name } => {
                let result = match self.locks.get(name) {
                    None => Err(format!("htlc-refund {name}: lock was never created")),
                    Some((_, id)) => self
                        .contracts
                        .get_mut(channel)
                        .expect("deployed")
                        .htlc_refund(id, now)
                        .map_err(|e| format!("htlc-refund {name} failed: {e}")),
                };
                if let Err(e) = result {
                    self.chans.get_mut(channel).expect("validated").event(now, e);
                }
            }
            Action::Pay { .. } | Action::Control { .. } | Action::Idle => unreachable!("handled by the workload phase"),
        }
    }

    /// Settle every channel on its latest state and finalize once the
    /// challenge window and any open locks have run out.
    fn close(&mut self, end: Tick) {
        for (name, c) in self.chans.iter_mut() {
            let contract = self.contracts.get_mut(name).expect("deployed");
            let newer = match contract.settlement() {
                Settlement::Finalized { .. } => false,
                Settlement::Open => true,
                Settlement::Pending { resolution, .. } => resolution.sequence < c.node.last_applied_sequence(),
            };
            if newer {
                let cp = c.node.checkpoint(CheckpointReason::Unscheduled, end);
                let outcome = settle_outcome(contract.request_settlement(&cp, end));
                push_checkpoint(c, end, &cp, "close", outcome);
            }
            let Some(deadline) = contract.challenge_deadline() else { continue };
            let at = contract
                .htlcs()
                .values()
                .filter(|h| h.status == crate::escrow::HtlcStatus::Open)
                .map(|h| h.timeout)
                .fold(deadline, Tick::max)
                + 1;
            if let Err(e) = contract.finalize(at) {
                c.event(at, format!("finalize failed: {e}"));
            }
        }
    }

    fn finish(self) -> BTreeMap<String, ChannelReport> {
        let mut out = BTreeMap::new();
        for (name, mut c) in self.chans {
            let contract = self.contracts.get(&name).expect("deployed");
            c.report.node = ViewState {
                sequence: c.node.last_applied_sequence(),
                head: c.node.chain_head(),
                balances: c.node.balances().clone(),
            };
            c.report.oracle = oracle_replay(&c.issued, &c.config)
                .map(|o| ViewState {
                    sequence: o.final_sequence,
                    head: o.chain_head,
                    balances: o.balances,
                })
                .map_err(|e| e.to_string());
            c.report.delivery = c.stream.stats();
            c.report.settlement = settlement_entry(contract);
            c.report.htlcs = c
                .lock_names
                .iter()
                .map(|n| {
                    let h = contract.htlc(&self.locks[n].1).expect("recorded lock");
                    HtlcEntry {
                        name: n.clone(),
                        lock_id: h.lock_id.clone(),
                        status: h.status.as_str().into(),
                        amount: h.amount,
                        payer: h.payer,
                        payee: h.payee,
                        timeout: h.timeout,
                    }
                })
                .collect();
            if let Some(p) = contract.payouts() {
                let paid: u128 = p.values().map(|&v| v as u128).sum();
                assert_eq!(paid, contract.total_deposits() as u128, "payouts must equal deposits");
            }
            c.report.compare();
            out.insert(name, c.report);
        }
        out
    }
}

fn push_checkpoint(c: &mut Chan, now: Tick, cp: &Checkpoint, origin: &str, outcome: String) {
    c.archive.push(cp.clone());
    c.report.checkpoints.push(CheckpointEntry {
        tick: now,
        sequence: cp.sequence,
        reason: cp.reason.as_str().into(),
        origin: origin.into(),
        outcome,
    });
}

fn settle_outcome(r: Result<Tick, crate::escrow::EscrowError>) -> String {
    match r {
        Ok(deadline) => format!("settlement-pending:deadline={deadline}"),
        Err(e) => format!("rejected:{}", slug(&e)),
    }
}

/// Error variant name, for compact single-token report fields.
fn slug(e: &crate::escrow::EscrowError) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
}

fn settlement_entry(contract: &EscrowContract) -> SettlementEntry {
    let source = |s: ResolutionSource| match s {
        ResolutionSource::Checkpoint(r) => r.as_str().to_string(),
        ResolutionSource::Dispute => "DISPUTE".to_string(),
    };
    match contract.settlement() {
        Settlement::Open => SettlementEntry {
            status: "open".into(),
            ..Default::default()
        },
        Settlement::Pending { resolution, .. } => SettlementEntry {
            status: "pending".into(),
            sequence: Some(resolution.sequence),
            resolved_by: Some(source(resolution.source)),
            ..Default::default()
        },
        Settlement::Finalized { resolution, payouts } => SettlementEntry {
            status: "finalized".into(),
            sequence: Some(resolution.sequence),
            resolved_by: Some(source(resolution.source)),
            finalized_at: contract.finalized_at(),
            payouts: payouts.clone(),
        },
    }
}

/// Run a scenario on one thread.
pub fn run_scenario(s: &Scenario) -> Result<SimReport, ScenarioError> {
    s.validate()?;
    let channels: Vec<&ChannelSpec> = s.channels.iter().collect();
    let actions: Vec<&TimedAction> = s.actions.iter().collect();
    let end = s.end_tick();
    let channels = World::new(s, &channels)?.run(&actions, end);
    Ok(SimReport {
        seed: s.seed,
        end_tick: end,
        channels,
    })
}

/// Groups of channels that interact through relayed locks. Channels in
/// different groups share no state and can run independently.
pub fn independent_groups(s: &Scenario) -> Vec<Vec<String>> {
    let names: Vec<&str> = s.channels.iter().map(|c| c.name.as_str()).collect();
    let mut parent: Vec<usize> = (0..names.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let index = |n: &str| names.iter().position(|x| *x == n);
    let lock_channel: BTreeMap<&str, &str> = s
        .actions
        .iter()
        .filter_map(|ta| match &ta.action {
            Action::HtlcLock { name, channel, .. } => Some((name.as_str(), channel.as_str())),
            _ => None,
        })
        .collect();
    for ta in &s.actions {
        if let Action::HtlcClaim {
            channel,
            preimage: Preimage::RevealedBy(src),
            ..
        } = &ta.action
        {
            if let (Some(a), Some(b)) = (index(channel), lock_channel.get(src.as_str()).and_then(|c| index(c))) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(name.to_string());
    }
    groups.into_values().collect()
}

/// Run independent channel groups on separate threads. The report is
/// identical to [`run_scenario`]'s.
pub fn run_scenario_parallel(s: &Scenario) -> Result<SimReport, ScenarioError> {
    s.validate()?;
    let end = s.end_tick();
    let groups = independent_groups(s);
    let results: Vec<Result<BTreeMap<String, ChannelReport>, ScenarioError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .iter()
            .map(|g| {
                scope.spawn(move || {
                    let members: BTreeSet<&str> = g.iter().map(String::as_str).collect();
                    let channels: Vec<&ChannelSpec> =
                        s.channels.iter().filter(|c| members.contains(c.name.as_str())).collect();
                    let actions: Vec<&TimedAction> = s
                        .actions
                        .iter()
                        .filter(|ta| ta.action.channel().is_some_and(|c| members.contains(c)))
                        .collect();
                    Ok(World::new(s, &channels)?.run(&actions, end))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut channels = BTreeMap::new();
    for r in results {
        channels.extend(r?);
    }
    Ok(SimReport {
        seed: s.seed,
        end_tick: end,
        channels,
    })
}
