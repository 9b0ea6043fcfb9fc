//! Fixture builders shared by unit, integration and acceptance tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crypto::KeyPair;
use super::invoice::make_signed_invoice;
use super::types::{Currency, Invoice, SignedInvoice};

/// Two deterministic parties for fixtures.
pub struct Pair {
    pub alice: KeyPair,
    pub bob: KeyPair,
}

impl Pair {
    pub fn new(seed: u64) -> Self {
        Pair {
            alice: KeyPair::from_label(seed, "alice"),
            bob: KeyPair::from_label(seed, "bob"),
        }
    }
}

/// A valid ETH chain of `len` payments alternating direction, starting with
/// alice paying bob; element `i` (0-based) has price `i % 7 + 1`.
pub fn build_chain(len: usize, channel: &str, seed: u64) -> (Vec<SignedInvoice>, Pair) {
    let pair = Pair::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain: Vec<SignedInvoice> = Vec::with_capacity(len);
    for i in 0..len {
        let (buyer, seller) = if i % 2 == 0 {
            (&pair.alice, &pair.bob)
        } else {
            (&pair.bob, &pair.alice)
        };
        let invoice = Invoice::new(
            seller.address(Currency::Eth),
            (i % 7 + 1) as u64,
            Currency::Eth,
            "",
        )
        .expect("fixture invoice");
        let si = make_signed_invoice(
            &invoice,
            chain.last(),
            channel,
            i as u64 + 1,
            buyer,
            seller,
            &mut rng,
        )
        .expect("fixture chain");
        chain.push(si);
    }
    (chain, pair)
}
