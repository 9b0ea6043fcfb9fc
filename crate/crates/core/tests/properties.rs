use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use parsec_core::escrow::{ChallengeParams, EscrowContract, EscrowError, HtlcStatus};
use parsec_core::event_log::{ControlKind, ControlMessage};
use parsec_core::node::{ChannelConfig, ChannelNode, Cosigners};
use parsec_core::protocol::testkit::{build_chain, Pair};
use parsec_core::protocol::{
    digest, make_signed_invoice, verify_chain, verify_signed_invoice, Address, Canonical, Checkpoint,
    CheckpointReason, Currency, Hash256, Invoice, KeyPair, Signature, SignedInvoice,
};
use parsec_core::sim::oracle_replay;

fn currency() -> impl Strategy<Value = Currency> {
    prop_oneof![Just(Currency::Eth), Just(Currency::Btc)]
}

fn address() -> impl Strategy<Value = Address> {
    (any::<[u8; 20]>(), currency()).prop_map(|(bytes, currency)| Address { bytes, currency })
}

fn invoice() -> impl Strategy<Value = Invoice> {
    (address(), 1..u64::MAX, ".{0,12}").prop_map(|(a, price, t)| Invoice {
        currency: a.currency,
        invoice_address: a,
        price,
        invoice_type: t,
    })
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    (
        "[a-z]{1,8}",
        any::<u64>(),
        prop::collection::btree_map(address(), any::<u64>(), 0..4),
        any::<[u8; 32]>(),
        any::<[u8; 32]>(),
        prop_oneof![
            Just(CheckpointReason::Modulo),
            Just(CheckpointReason::Timeout),
            Just(CheckpointReason::Unscheduled)
        ],
    )
        .prop_map(|(channel, sequence, balances, head, sig, reason)| {
            let mut s = [0u8; 64];
            s[..32].copy_from_slice(&sig);
            let mut t = [0u8; 64];
            t[32..].copy_from_slice(&sig);
            Checkpoint {
                channel,
                sequence,
                balances,
                chain_head: Hash256(head),
                signature_a: Signature(s),
                signature_b: Signature(t),
                reason,
            }
        })
}

fn config(pair: &Pair, channel: &str, deposit: u64, n: usize, m: u64) -> ChannelConfig {
    let mut c = ChannelConfig::new(pair.alice.public_key(), pair.bob.public_key(), Currency::Eth);
    c.channel = channel.into();
    c.deposit_a = deposit;
    c.deposit_b = deposit;
    c.reorder_capacity = n;
    c.checkpoint_modulo = m;
    c.checkpoint_timeout = u64::MAX;
    c
}

fn node(pair: &Pair, cfg: ChannelConfig) -> ChannelNode {
    let cos = Cosigners {
        a: KeyPair::from_secret(&pair.alice.secret_bytes()).unwrap(),
        b: KeyPair::from_secret(&pair.bob.secret_bytes()).unwrap(),
    };
    ChannelNode::open(cfg, cos).unwrap()
}

/// Reorder with displacement at most `d`: sort positions by `i + jitter`.
fn permute(len: usize, jitter: &[u64], d: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by_key(|&i| (i as u64 + jitter[i % jitter.len()] % (d + 1), i));
    idx
}

/// Random payment chain between the pair; amounts never overdraw.
fn payment_chain(pair: &Pair, channel: &str, deposit: u64, pays: &[(bool, u64)], seed: u64) -> Vec<SignedInvoice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bal = [deposit, deposit];
    let mut chain: Vec<SignedInvoice> = Vec::new();
    for &(a_pays, amount) in pays {
        let (from, buyer, seller) = if a_pays { (0, &pair.alice, &pair.bob) } else { (1, &pair.bob, &pair.alice) };
        let amount = amount.min(bal[from]);
        if amount == 0 {
            continue;
        }
        bal[from] -= amount;
        bal[1 - from] += amount;
        let inv = Invoice::new(seller.address(Currency::Eth), amount, Currency::Eth, "").unwrap();
        let seq = chain.len() as u64 + 1;
        chain.push(make_signed_invoice(&inv, chain.last(), channel, seq, buyer, seller, &mut rng).unwrap());
    }
    chain
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invoice_round_trips(inv in invoice()) {
        prop_assert_eq!(Invoice::decode(&inv.storage_bytes()).unwrap(), inv);
    }

    #[test]
    fn invoice_encoding_is_injective(a in invoice(), b in invoice()) {
        prop_assert_eq!(a == b, a.storage_bytes() == b.storage_bytes());
    }

    #[test]
    fn checkpoint_round_trips(cp in checkpoint()) {
        prop_assert_eq!(Checkpoint::decode(&cp.storage_bytes()).unwrap(), cp);
    }

    #[test]
    fn checkpoint_encoding_is_injective(a in checkpoint(), b in checkpoint()) {
        prop_assert_eq!(a == b, a.storage_bytes() == b.storage_bytes());
        prop_assert_eq!(
            a.signing_bytes() == b.signing_bytes(),
            Checkpoint { signature_a: b.signature_a, signature_b: b.signature_b, ..a.clone() } == b
        );
    }

    #[test]
    fn control_message_round_trips(channel in "[a-z0-9]{1,10}", a in address(), unscheduled in any::<bool>()) {
        let msg = ControlMessage {
            channel,
            kind: if unscheduled { ControlKind::UnscheduledSettlement } else { ControlKind::DisputedSettlement },
            requester: a,
        };
        prop_assert_eq!(ControlMessage::decode(&msg.storage_bytes()).unwrap(), msg);
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = SignedInvoice::decode(&bytes);
        let _ = Checkpoint::decode(&bytes);
        let _ = Invoice::decode(&bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn signed_invoice_round_trips(seed in 0u64..1000, len in 1usize..4) {
        let (chain, _) = build_chain(len, "rt", seed);
        for si in &chain {
            prop_assert_eq!(&SignedInvoice::decode(&si.storage_bytes()).unwrap(), si);
        }
    }

    #[test]
    fn any_byte_change_is_detected(seed in 0u64..50, which in 0usize..3, pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let (mut chain, _) = build_chain(3, "tamper", seed);
        let mut bytes = chain[which].storage_bytes();
        let at = pos.index(bytes.len());
        bytes[at] ^= flip;
        if let Ok(si) = SignedInvoice::decode(&bytes) {
            prop_assert_ne!(&si, &chain[which]);
            prop_assert!(!verify_signed_invoice(&si, Currency::Eth).is_empty());
            chain[which] = si;
            prop_assert!(verify_chain(&chain, Currency::Eth).is_err());
        }
    }

    #[test]
    fn redelivery_is_idempotent(seed in 0u64..200, len in 1usize..40, dups in prop::collection::vec(any::<prop::sample::Index>(), 0..40)) {
        let pair = Pair::new(seed);
        let (chain, _) = build_chain(len, "idem", seed);
        let cfg = config(&pair, "idem", 1000, 16, 5);
        let mut once = node(&pair, cfg.clone());
        for r in once.ingest_batch(&chain, 0) {
            r.unwrap();
        }
        let mut stream = chain.clone();
        for d in &dups {
            let i = d.index(stream.len() + 1);
            let copy = chain[d.index(chain.len())].clone();
            stream.insert(i.min(stream.len()), copy);
        }
        // Duplicates may arrive before their original; keep the window safe.
        let mut twice = node(&pair, config(&pair, "idem", 1000, chain.len(), 5));
        for si in &stream {
            twice.ingest(si, 0).unwrap();
        }
        for si in &chain {
            twice.ingest(si, 0).unwrap();
        }
        prop_assert_eq!(once.balances(), twice.balances());
        prop_assert_eq!(once.chain_head(), twice.chain_head());
        prop_assert_eq!(once.history(), twice.history());
    }

    #[test]
    fn node_matches_oracle_under_bounded_reordering(
        seed in 0u64..500,
        pays in prop::collection::vec((any::<bool>(), 1u64..40), 1..60),
        d in 0u64..=8,
        jitter in prop::collection::vec(any::<u64>(), 1..64),
    ) {
        let pair = Pair::new(seed);
        let chain = payment_chain(&pair, "perm", 100, &pays, seed);
        let cfg = config(&pair, "perm", 100, 8, 7);
        let mut n = node(&pair, cfg.clone());
        for i in permute(chain.len(), &jitter, d) {
            n.ingest(&chain[i], 0).unwrap();
        }
        let o = oracle_replay(&chain, &cfg).unwrap();
        prop_assert_eq!(&o.balances, n.balances());
        prop_assert_eq!(o.chain_head, n.chain_head());
        prop_assert_eq!(o.final_sequence, n.last_applied_sequence());
        prop_assert_eq!(n.pending_len(), 0);
        let total: u64 = n.balances().values().sum();
        prop_assert_eq!(total, 200);
    }

    #[test]
    fn checkpoints_are_monotone_and_fault_independent(
        seed in 0u64..500,
        pays in prop::collection::vec((any::<bool>(), 1u64..40), 1..60),
        m in 1u64..10,
        d in 0u64..=8,
        jitter in prop::collection::vec(any::<u64>(), 1..64),
    ) {
        let pair = Pair::new(seed);
        let chain = payment_chain(&pair, "cp", 100, &pays, seed);
        let cfg = config(&pair, "cp", 100, 8, m);
        let collect = |order: Vec<usize>| {
            let mut n = node(&pair, cfg.clone());
            let mut cps = Vec::new();
            for i in order {
                for out in n.ingest(&chain[i], 0).unwrap().outputs {
                    if let parsec_core::node::NodeOutput::Checkpoint(cp) = out {
                        cps.push(cp);
                    }
                }
            }
            cps
        };
        let clean = collect((0..chain.len()).collect());
        let faulty = collect(permute(chain.len(), &jitter, d));
        prop_assert!(clean.windows(2).all(|w| w[0].sequence < w[1].sequence));
        prop_assert_eq!(clean.len() as u64, chain.len() as u64 / m);
        prop_assert!(clean.iter().all(|c| c.total() == 200));
        prop_assert_eq!(clean, faulty);
    }

    #[test]
    fn htlc_claim_and_refund_are_exclusive(
        ops in prop::collection::vec((any::<bool>(), any::<bool>(), 0u64..30), 1..12),
        timeout in 1u64..20,
        amount in 1u64..50,
    ) {
        let pair = Pair::new(77);
        let mut esc = EscrowContract::deploy(config(&pair, "h", 50, 8, 5), ChallengeParams::default()).unwrap();
        let (a, b) = (pair.alice.address(Currency::Eth), pair.bob.address(Currency::Eth));
        let id = esc.htlc_lock(a, b, amount, digest(b"secret"), timeout, 0).unwrap();
        let mut claimed = 0;
        let mut refunded = 0;
        for (claim, right, now) in ops {
            if claim {
                let pre: &[u8] = if right { b"secret" } else { b"guess" };
                match esc.htlc_claim(&id, pre, now) {
                    Ok(()) => {
                        prop_assert!(right && now <= timeout);
                        claimed += 1;
                    }
                    Err(e) => {
                        let expected =
                            matches!(e, EscrowError::NotOpen(_) | EscrowError::WrongPreimage | EscrowError::Expired { .. });
                        prop_assert!(expected, "{:?}", e);
                    }
                }
            } else if esc.htlc_refund(&id, now).is_ok() {
                prop_assert!(now > timeout);
                refunded += 1;
            }
        }
        prop_assert!(claimed + refunded <= 1);
        let h = esc.htlc(&id).unwrap();
        match h.status {
            HtlcStatus::Open => prop_assert_eq!(claimed + refunded, 0),
            HtlcStatus::Claimed => prop_assert_eq!(esc.revealed_preimage(&id), Some(&b"secret"[..])),
            HtlcStatus::Refunded => prop_assert_eq!(esc.revealed_preimage(&id), None),
        }
    }

    #[test]
    fn escrow_conserves_deposits(
        seed in 0u64..100,
        pays in prop::collection::vec((any::<bool>(), 1u64..40), 0..30),
        locks in prop::collection::vec((any::<bool>(), 1u64..30, 1u64..40, any::<bool>()), 0..6),
    ) {
        let pair = Pair::new(seed);
        let cfg = config(&pair, "cons", 60, 8, 1000);
        let chain = payment_chain(&pair, "cons", 60, &pays, seed);
        let mut n = node(&pair, cfg.clone());
        for r in n.ingest_batch(&chain, 0) {
            r.unwrap();
        }
        let mut esc = EscrowContract::deploy(cfg, ChallengeParams { challenge_period: 5 }).unwrap();
        let (a, b) = (pair.alice.address(Currency::Eth), pair.bob.address(Currency::Eth));
        let mut ids = Vec::new();
        for (a_pays, amount, timeout, claim) in locks {
            let (p, q) = if a_pays { (a, b) } else { (b, a) };
            if let Ok(id) = esc.htlc_lock(p, q, amount, digest(b"k"), timeout, 0) {
                ids.push((id, claim));
            }
        }
        for (id, claim) in &ids {
            if *claim {
                let _ = esc.htlc_claim(id, b"k", 0);
            }
        }
        let cp = n.checkpoint(CheckpointReason::Unscheduled, 1);
        let settled_latest = esc.request_settlement(&cp, 1).is_ok();
        if !settled_latest {
            // Claimed locks exceed what the latest state leaves the payer;
            // fall back to the opening state the locks were reserved against.
            let opening = node(&pair, esc.config().clone()).checkpoint(CheckpointReason::Unscheduled, 1);
            prop_assert!(esc.request_settlement(&opening, 1).is_ok());
        }
        let now = 100;
        let payouts = esc.finalize(now + 10).unwrap().clone();
        prop_assert_eq!(payouts.values().sum::<u64>(), 120);
        prop_assert_eq!(esc.paid_out(), 120);
        if ids.is_empty() {
            prop_assert!(settled_latest);
            prop_assert_eq!(&payouts, n.balances());
        }
    }
}
