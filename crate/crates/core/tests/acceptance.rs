//! Acceptance run: one PASS/FAIL line per criterion on stdout. Exits
//! nonzero if any correctness criterion fails. The throughput criterion only
//! raises a flag.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parsec_core::escrow::{ChallengeParams, EscrowContract, EscrowError, HtlcStatus};
use parsec_core::node::{ChannelConfig, ChannelNode, Cosigners, NodeOutput};
use parsec_core::protocol::testkit::{build_chain, Pair};
use parsec_core::protocol::{
    digest, make_signed_invoice, verify_chain, Address, CheckpointReason, Currency, Hash256, Invoice,
    KeyPair, SignedInvoice,
};
use parsec_core::sim::{random_scenario, run_scenario, run_scenario_parallel, Scenario, SimReport};

enum Verdict {
    Pass(String),
    Fail(String),
    Flag(String),
}

fn example(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/examples").join(name);
    Scenario::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pair_config(pair: &Pair, channel: &str, deposit: u64) -> ChannelConfig {
    let mut c = ChannelConfig::new(pair.alice.public_key(), pair.bob.public_key(), Currency::Eth);
    c.channel = channel.into();
    c.deposit_a = deposit;
    c.deposit_b = deposit;
    c
}

fn cosigners(pair: &Pair) -> Cosigners {
    Cosigners {
        a: KeyPair::from_secret(&pair.alice.secret_bytes()).unwrap(),
        b: KeyPair::from_secret(&pair.bob.secret_bytes()).unwrap(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut flagged = Vec::new();
    let mut txs = 0;
    for seed in 1..=200 {
        let s = random_scenario(seed);
        let r = run_scenario(&s).unwrap();
        txs += r.channels.values().map(|c| c.node.sequence).sum::<u64>();
        flagged.extend(r.divergence_flags().into_iter().map(|f| format!("seed {seed} {f}")));
    }
    let took = start.elapsed();
    let detail = format!("200 scenarios, {txs} transactions, {} divergence flags, {}", flagged.len(), secs(took));
    if !flagged.is_empty() {
        return Verdict::Fail(format!("{detail}; first: {}", flagged[0]));
    }
    if took > Duration::from_secs(60) {
        return Verdict::Pass(format!("{detail} (over the 60 s runtime budget)"));
    }
    Verdict::Pass(detail)
}

const FIELDS: [&str; 13] = [
    "invoice_id",
    "seller_signature",
    "buyer_signature",
    "supplier_address",
    "supplier_public_key",
    "buyer_public_key",
    "buyer_address",
    "currency",
    "price",
    "channel",
    "sequence",
    "hash_pointer.transaction_id",
    "hash_pointer.transaction_hash",
];

fn mutate(si: &mut SignedInvoice, field: &str, rng: &mut ChaCha8Rng, stranger: &KeyPair) {
    let byte = rng.gen_range(0..20);
    let bit = 1u8 << rng.gen_range(0..8);
    match field {
        "invoice_id" => si.invoice_id = parsec_core::protocol::invoice::new_invoice_id(rng, &si.channel),
        "seller_signature" => si.seller_signature.0[rng.gen_range(0..64)] ^= bit,
        "buyer_signature" => si.buyer_signature.0[rng.gen_range(0..64)] ^= bit,
        "supplier_address" => si.supplier_address.bytes[byte] ^= bit,
        "supplier_public_key" => si.supplier_public_key = stranger.public_key(),
        "buyer_public_key" => si.buyer_public_key = stranger.public_key(),
        "buyer_address" => si.buyer_address.bytes[byte] ^= bit,
        "currency" => si.currency = Currency::Btc,
        "price" => si.price += rng.gen_range(1..1000),
        "channel" => si.channel.push('x'),
        "sequence" => si.sequence += rng.gen_range(1..5),
        "hash_pointer.transaction_id" => si.hash_pointer_to_previous.transaction_id.push('0'),
        "hash_pointer.transaction_hash" => si.hash_pointer_to_previous.transaction_hash.0[byte] ^= bit,
        other => unreachable!("{other}"),
    }
}

fn tamper_detection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mutations = 0;
    let mut misses = Vec::new();
    for seed in 0..100 {
        let (chain, _) = build_chain(50, "tamper", 1000 + seed);
        assert_eq!(verify_chain(&chain, Currency::Eth), Ok(()));
        let stranger = KeyPair::from_label(seed, "mallory");
        for field in FIELDS {
            let at = rng.gen_range(0..chain.len());
            let mut bad = chain.clone();
            mutate(&mut bad[at], field, &mut rng, &stranger);
            mutations += 1;
            match verify_chain(&bad, Currency::Eth) {
                Err(f) if f.position <= at + 2 => {}
                other => misses.push(format!("chain {seed} {field} at {}: {other:?}", at + 1)),
            }
        }
    }
    let detail = format!("{mutations} single-field mutations over 100 chains of 50, {} misses", misses.len());
    if misses.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; first: {}", misses[0]))
    }
}

fn modulo_sequences(m: u64) -> Vec<u64> {
    let pair = Pair::new(3);
    let (chain, _) = build_chain(12, "cad", 3);
    let mut cfg = pair_config(&pair, "cad", 100);
    cfg.checkpoint_modulo = m;
    cfg.checkpoint_timeout = u64::MAX;
    let mut node = ChannelNode::open(cfg, cosigners(&pair)).unwrap();
    let mut seqs = Vec::new();
    for r in node.ingest_batch(&chain, 0) {
        for out in r.unwrap().outputs {
            if let NodeOutput::Checkpoint(cp) = out {
                assert_eq!(cp.reason, CheckpointReason::Modulo);
                seqs.push(cp.sequence);
            }
        }
    }
    seqs
}

/// (transactions at tick, idle window end) bursts; returns TIMEOUT
/// checkpoints emitted by idle ticks inside each window.
fn timeout_windows() -> (Vec<Vec<u64>>, usize) {
    let pair = Pair::new(4);
    let (chain, _) = build_chain(5, "idle", 4);
    let mut cfg = pair_config(&pair, "idle", 100);
    cfg.checkpoint_timeout = 50;
    let mut node = ChannelNode::open(cfg, cosigners(&pair)).unwrap();
    let bursts: [(usize, usize, u64, u64); 3] = [(0, 3, 0, 120), (3, 5, 120, 300), (5, 5, 300, 500)];
    let mut per_window = Vec::new();
    let mut during_bursts = 0;
    for (from, to, at, until) in bursts {
        for r in node.ingest_batch(&chain[from..to], at) {
            during_bursts += r.unwrap().outputs.len();
        }
        let mut seen = Vec::new();
        for now in at + 1..until {
            if let Some(NodeOutput::Checkpoint(cp)) = node.tick(now) {
                assert_eq!(cp.reason, CheckpointReason::Timeout);
                seen.push(now);
            }
        }
        per_window.push(seen);
    }
    (per_window, during_bursts)
}

fn checkpoint_cadence() -> Verdict {
    let got: Vec<Vec<u64>> = [1, 5, 100].into_iter().map(modulo_sequences).collect();
    let want = vec![(1..=12).collect::<Vec<u64>>(), vec![5, 10], vec![]];
    let (windows, during) = timeout_windows();
    let counts: Vec<usize> = windows.iter().map(Vec::len).collect();
    let detail = format!(
        "MODULO m=1 {:?}, m=5 {:?}, m=100 {:?}; TIMEOUT per idle window {:?} at ticks {:?} ({} at burst start)",
        got[0], got[1], got[2], counts, windows, during
    );
    if got == want && counts == [1, 1, 0] {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn dispute_supremacy() -> Verdict {
    let r = run_scenario(&example("stale_settlement.scn")).unwrap();
    let c = &r.channels["ab"];
    let Ok(oracle) = &c.oracle else {
        return Verdict::Fail("oracle failed".into());
    };
    let overturned = c.disputes.iter().any(|d| d.overturned.is_some());
    let detail = format!(
        "stale settlement at 5 overturned={overturned}, final sequence {:?} vs oracle {}, payouts {:?} vs oracle {:?}",
        c.settlement.sequence,
        oracle.sequence,
        c.settlement.payouts.values().collect::<Vec<_>>(),
        oracle.balances.values().collect::<Vec<_>>()
    );
    if overturned && c.settlement.sequence == Some(oracle.sequence) && c.settlement.payouts == oracle.balances {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

#[derive(Debug, PartialEq)]
enum Expect {
    Ok,
    WrongPreimage,
    Expired,
    NotYetExpired,
}

fn htlc_case(claim: bool, when: i64, right: bool) -> Expect {
    let pair = Pair::new(5);
    let mut esc = EscrowContract::deploy(pair_config(&pair, "h", 50), ChallengeParams::default()).unwrap();
    let (a, b) = (pair.alice.address(Currency::Eth), pair.bob.address(Currency::Eth));
    let timeout = 20u64;
    let id = esc.htlc_lock(a, b, 10, digest(b"opensesame"), timeout, 0).unwrap();
    let now = (timeout as i64 + when) as u64;
    let result = if claim {
        esc.htlc_claim(&id, if right { b"opensesame" } else { b"opensesamf" }, now)
    } else {
        esc.htlc_refund(&id, now)
    };
    let h = esc.htlc(&id).unwrap();
    let balance = |p: &Address| esc.available(p);
    match result {
        Ok(()) if claim => {
            assert_eq!(h.status, HtlcStatus::Claimed);
            assert_eq!((balance(&a), balance(&b)), (40, 60));
            assert_eq!(esc.revealed_preimage(&id), Some(&b"opensesame"[..]));
            Expect::Ok
        }
        Ok(()) => {
            assert_eq!(h.status, HtlcStatus::Refunded);
            assert_eq!((balance(&a), balance(&b)), (50, 50));
            Expect::Ok
        }
        Err(e) => {
            assert_eq!(h.status, HtlcStatus::Open);
            assert_eq!((balance(&a), balance(&b), esc.locked()), (40, 50, 10));
            match e {
                EscrowError::WrongPreimage => Expect::WrongPreimage,
                EscrowError::Expired { .. } => Expect::Expired,
                EscrowError::NotYetExpired { .. } => Expect::NotYetExpired,
                other => panic!("unexpected {other}"),
            }
        }
    }
}

fn htlc_correctness() -> Verdict {
    // Claim needs the right preimage no later than the timeout; refund needs
    // a time strictly after it and ignores preimages.
    let mut table = Vec::new();
    for claim in [true, false] {
        for (label, when) in [("before", -1), ("at", 0), ("after", 1)] {
            for right in [true, false] {
                let want = match (claim, when, right) {
                    (true, w, true) if w <= 0 => Expect::Ok,
                    (true, _, true) => Expect::Expired,
                    (true, _, false) => Expect::WrongPreimage,
                    (false, w, _) if w > 0 => Expect::Ok,
                    (false, _, _) => Expect::NotYetExpired,
                };
                table.push((claim, label, right, want));
            }
        }
    }
    let mismatches: Vec<String> = table
        .into_iter()
        .filter_map(|(claim, label, right, want)| {
            let when = match label {
                "before" => -1,
                "at" => 0,
                _ => 1,
            };
            let got = htlc_case(claim, when, right);
            (got != want).then(|| {
                format!("{} {label} right={right}: {got:?} != {want:?}", if claim { "claim" } else { "refund" })
            })
        })
        .collect();
    let r = run_scenario(&example("relay.scn")).unwrap();
    let status = |ch: &str, name: &str| {
        r.channels[ch].htlcs.iter().find(|h| h.name == name).map(|h| h.status.clone()).unwrap_or_default()
    };
    let happy = (status("up", "r1.up"), status("down", "r1.down"));
    let abort = (status("up", "r2.up"), status("down", "r2.down"));
    let relay_ok = happy == ("CLAIMED".into(), "CLAIMED".into())
        && abort == ("REFUNDED".into(), "REFUNDED".into())
        && r.total_payouts() == r.total_deposits();
    let detail = format!(
        "12 cases, {} mismatches; relay happy {}/{}, abort {}/{}",
        mismatches.len(),
        happy.0,
        happy.1,
        abort.0,
        abort.1
    );
    if mismatches.is_empty() && relay_ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; {mismatches:?}"))
    }
}

/// Random escrow operations; the books are recomputed from the public view
/// after every step on top of the contract's own always-on assertion.
fn conservation() -> Verdict {
    let mut steps = 0;
    let mut broken = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = Pair::new(100 + seed);
        let cfg = pair_config(&pair, "cons", 200);
        let mut node = ChannelNode::open(cfg.clone(), cosigners(&pair)).unwrap();
        let mut esc = EscrowContract::deploy(cfg, ChallengeParams { challenge_period: 5 }).unwrap();
        let (a, b) = (pair.alice.address(Currency::Eth), pair.bob.address(Currency::Eth));
        let mut prev: Option<SignedInvoice> = None;
        let mut locks: Vec<(String, bool)> = Vec::new();
        let mut stale = None;
        for now in 0..120u64 {
            match rng.gen_range(0..8) {
                0 | 1 => {
                    let a_pays = rng.gen_bool(0.5);
                    let (buyer, seller, from) = if a_pays { (&pair.alice, &pair.bob, a) } else { (&pair.bob, &pair.alice, b) };
                    let amount = rng.gen_range(1..30).min(node.balance(&from));
                    if amount > 0 {
                        let inv = Invoice::new(seller.address(Currency::Eth), amount, Currency::Eth, "").unwrap();
                        let seq = node.next_sequence();
                        let si = make_signed_invoice(&inv, prev.as_ref(), "cons", seq, buyer, seller, &mut rng).unwrap();
                        node.ingest(&si, now).unwrap();
                        prev = Some(si);
                    }
                }
                2 => {
                    let cp = node.checkpoint(CheckpointReason::Unscheduled, now);
                    if stale.is_none() && rng.gen_bool(0.5) {
                        stale = Some(cp);
                    } else {
                        let _ = esc.submit_checkpoint(&cp, now);
                    }
                }
                3 => {
                    let (p, q) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                    let right = rng.gen_bool(0.5);
                    if let Ok(id) = esc.htlc_lock(p, q, rng.gen_range(1..40), digest(b"k"), now + rng.gen_range(1..15), now) {
                        locks.push((id, right));
                    }
                }
                4 if !locks.is_empty() => {
                    let (id, right) = locks[rng.gen_range(0..locks.len())].clone();
                    let _ = esc.htlc_claim(&id, if right { b"k" } else { b"j" }, now);
                }
                5 if !locks.is_empty() => {
                    let (id, _) = locks[rng.gen_range(0..locks.len())].clone();
                    let _ = esc.htlc_refund(&id, now);
                }
                6 if now > 60 => {
                    if let Some(cp) = stale.take() {
                        let _ = esc.request_settlement(&cp, now);
                    } else if esc.current_sequence() == 0 && esc.latest_checkpoint().is_none() {
                        let cp = node.checkpoint(CheckpointReason::Unscheduled, now);
                        let _ = esc.request_settlement(&cp, now);
                    }
                    let t = node.dispute_transcript();
                    let _ = esc.dispute(&t.transactions, now);
                }
                _ => {
                    let _ = esc.finalize(now);
                }
            }
            steps += 1;
            let books = esc.available(&a) as u128 + esc.available(&b) as u128 + esc.locked() as u128 + esc.paid_out() as u128;
            if books != esc.total_deposits() as u128 {
                broken.push(format!("seed {seed} tick {now}: {books} != {}", esc.total_deposits()));
            }
            let channel: u64 = node.balances().values().sum();
            if channel != 400 {
                broken.push(format!("seed {seed} tick {now}: channel holds {channel}"));
            }
        }
    }
    let detail = format!("{steps} random node/escrow steps, {} imbalances; contract assertion active in all criteria", broken.len());
    if broken.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; first: {}", broken[0]))
    }
}

fn determinism() -> Verdict {
    let mut runs = 0;
    let mut differing = Vec::new();
    let mut scenarios: Vec<(String, Scenario)> = ["happy.scn", "stale_settlement.scn", "relay.scn"]
        .iter()
        .map(|n| (n.to_string(), example(n)))
        .collect();
    scenarios.extend((1..=20).map(|s| (format!("random {s}"), random_scenario(s))));
    for (name, s) in &scenarios {
        let render = |r: SimReport| (r.to_text(), r.to_kv());
        let first = render(run_scenario(s).unwrap());
        let second = render(run_scenario(s).unwrap());
        let parallel = render(run_scenario_parallel(s).unwrap());
        runs += 3;
        if first != second {
            differing.push(format!("{name}: serial reruns differ"));
        }
        if first != parallel {
            differing.push(format!("{name}: parallel differs"));
        }
    }
    let detail = format!("{} scenarios, {runs} runs, {} differing reports", scenarios.len(), differing.len());
    if differing.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; {differing:?}"))
    }
}

fn throughput() -> Verdict {
    const N: usize = 100_000;
    let build = Instant::now();
    let (chain, pair) = build_chain(N, "bulk", 8);
    let built = build.elapsed();
    let mut node = ChannelNode::open(pair_config(&pair, "bulk", 1_000_000), cosigners(&pair)).unwrap();
    let start = Instant::now();
    for block in chain.chunks(1024) {
        for r in node.ingest_batch(block, 0) {
            r.expect("in-order ingest");
        }
    }
    let took = start.elapsed();
    // Element i moves i % 7 + 1 from alice (even i) or bob (odd i).
    let mut alice = 1_000_000i64;
    for i in 0..N {
        let p = (i % 7 + 1) as i64;
        alice += if i % 2 == 0 { -p } else { p };
    }
    let a = pair.alice.address(Currency::Eth);
    assert_eq!(node.last_applied_sequence(), N as u64);
    assert_eq!(node.balance(&a) as i64, alice);
    assert_ne!(node.chain_head(), Hash256::ZERO);
    let detail = format!(
        "{N} in-order transactions ingested in {} ({:.0} tx/s; chain built in {})",
        secs(took),
        N as f64 / took.as_secs_f64(),
        secs(built)
    );
    if took < Duration::from_secs(5) {
        Verdict::Pass(detail)
    } else {
        Verdict::Flag(format!("{detail}; target is under 5 s"))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("tamper detection", tamper_detection),
        ("checkpoint cadence", checkpoint_cadence),
        ("dispute supremacy", dispute_supremacy),
        ("htlc correctness", htlc_correctness),
        ("conservation", conservation),
        ("determinism", determinism),
        ("throughput smoke", throughput),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let line = match verdict {
            Verdict::Pass(d) => format!("PASS {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                format!("FAIL {d}")
            }
            Verdict::Flag(d) => format!("FLAG (performance regression) {d}"),
        };
        println!("criterion {} {name}: {line}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
