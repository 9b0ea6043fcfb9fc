//! Building and checking signed invoices.

use std::fmt;

use rand::RngCore;
use thiserror::Error;
use uuid::Uuid;

use super::codec::Canonical;
use super::crypto::{derive_address, digest, verify, verify_batch, KeyPair};
use super::types::{Currency, Hash256, HashPointer, Invoice, SignedInvoice};

/// A reason a signed invoice (or a chain of them) is not acceptable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Violation {
    CurrencyMismatch { expected: Currency, found: Currency },
    InvalidBuyerAddress,
    InvalidSupplierAddress,
    BadSellerSignature,
    BadBuyerSignature,
    NonPositivePrice,
    MalformedInvoiceId,
    ChannelMismatch,
    /// `sequence == 1` must coincide with a genesis hash pointer.
    GenesisMismatch,
    ZeroSequence,
    SequenceMismatch { expected: u64, found: u64 },
    BrokenHashPointer,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CurrencyMismatch { expected, found } => {
                write!(f, "currency mismatch: expected {expected}, found {found}")
            }
            Violation::InvalidBuyerAddress => f.write_str("buyer address not derived from buyer key"),
            Violation::InvalidSupplierAddress => {
                f.write_str("supplier address not derived from supplier key")
            }
            Violation::BadSellerSignature => f.write_str("seller signature does not verify"),
            Violation::BadBuyerSignature => f.write_str("buyer signature does not verify"),
            Violation::NonPositivePrice => f.write_str("price must be positive"),
            Violation::MalformedInvoiceId => f.write_str("invoice id is not <uuid>+<channel>"),
            Violation::ChannelMismatch => f.write_str("invoice id suffix does not match channel"),
            Violation::GenesisMismatch => {
                f.write_str("sequence 1 must carry the genesis pointer and only it")
            }
            Violation::ZeroSequence => f.write_str("sequence must be at least 1"),
            Violation::SequenceMismatch { expected, found } => {
                write!(f, "sequence mismatch: expected {expected}, found {found}")
            }
            Violation::BrokenHashPointer => f.write_str("hash pointer does not match predecessor"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MakeInvoiceError {
    #[error("sequence {found} does not follow predecessor (expected {expected})")]
    SequenceMismatch { expected: u64, found: u64 },
    #[error("invoice currency {invoice} does not match channel currency {channel}")]
    CurrencyMismatch { invoice: Currency, channel: Currency },
    #[error("seller key does not own the invoice address")]
    SellerKeyMismatch,
}

pub fn produce_invoice_hash(invoice: &Invoice) -> Hash256 {
    digest(&invoice.signing_bytes())
}

/// Digest of a signed invoice's storage bytes; what successors point at.
pub fn transaction_hash(si: &SignedInvoice) -> Hash256 {
    digest(&si.storage_bytes())
}

pub fn new_invoice_id(rng: &mut impl RngCore, channel: &str) -> String {
    let mut raw = [0u8; 16];
    rng.fill_bytes(&mut raw);
    let id = uuid::Builder::from_random_bytes(raw).into_uuid();
    format!("{}+{}", id.hyphenated(), channel)
}

/// Link `invoice` after `predecessor` (or at genesis) and have both sides
/// sign it.
pub fn make_signed_invoice(
    invoice: &Invoice,
    predecessor: Option<&SignedInvoice>,
    channel: &str,
    sequence: u64,
    buyer_keys: &KeyPair,
    seller_keys: &KeyPair,
    rng: &mut impl RngCore,
) -> Result<SignedInvoice, MakeInvoiceError> {
    let expected = predecessor.map_or(1, |p| p.sequence + 1);
    if sequence != expected {
        return Err(MakeInvoiceError::SequenceMismatch {
            expected,
            found: sequence,
        });
    }
    if let Some(p) = predecessor {
        if p.currency != invoice.currency {
            return Err(MakeInvoiceError::CurrencyMismatch {
                invoice: invoice.currency,
                channel: p.currency,
            });
        }
    }
    if invoice.invoice_address.currency != invoice.currency {
        return Err(MakeInvoiceError::CurrencyMismatch {
            invoice: invoice.currency,
            channel: invoice.invoice_address.currency,
        });
    }
    if seller_keys.address(invoice.currency) != invoice.invoice_address {
        return Err(MakeInvoiceError::SellerKeyMismatch);
    }
    let hash_pointer_to_previous = match predecessor {
        None => HashPointer::genesis(),
        Some(p) => HashPointer {
            transaction_id: p.invoice_id.clone(),
            transaction_hash: transaction_hash(p),
        },
    };
    let placeholder = super::crypto::Signature([0u8; 64]);
    let mut si = SignedInvoice {
        invoice_id: new_invoice_id(rng, channel),
        seller_signature: placeholder,
        buyer_signature: placeholder,
        supplier_address: invoice.invoice_address,
        supplier_public_key: seller_keys.public_key(),
        buyer_public_key: buyer_keys.public_key(),
        buyer_address: buyer_keys.address(invoice.currency),
        currency: invoice.currency,
        price: invoice.price,
        channel: channel.to_string(),
        sequence,
        hash_pointer_to_previous,
    };
    let msg = si.signing_bytes();
    si.seller_signature = seller_keys.sign(&msg);
    si.buyer_signature = buyer_keys.sign(&msg);
    Ok(si)
}

/// Every check except the two signatures, in the documented order.
fn structural_violations(si: &SignedInvoice, expected_currency: Currency) -> Vec<Violation> {
    let mut out = Vec::new();
    if si.currency != expected_currency {
        out.push(Violation::CurrencyMismatch {
            expected: expected_currency,
            found: si.currency,
        });
    }
    if si.buyer_address != derive_address(&si.buyer_public_key, si.currency) {
        out.push(Violation::InvalidBuyerAddress);
    }
    if si.supplier_address != derive_address(&si.supplier_public_key, si.currency) {
        out.push(Violation::InvalidSupplierAddress);
    }
    out
}

fn tail_violations(si: &SignedInvoice, out: &mut Vec<Violation>) {
    if si.price == 0 {
        out.push(Violation::NonPositivePrice);
    }
    match si.invoice_id.split_once('+') {
        Some((uuid_part, suffix))
            if uuid_part.len() == 36
                && Uuid::try_parse(uuid_part).is_ok()
                && uuid_part.bytes().all(|b| !b.is_ascii_uppercase()) =>
        {
            if suffix != si.channel {
                out.push(Violation::ChannelMismatch);
            }
        }
        _ => out.push(Violation::MalformedInvoiceId),
    }
    if si.sequence == 0 {
        out.push(Violation::ZeroSequence);
    } else if (si.sequence == 1) != si.hash_pointer_to_previous.is_genesis() {
        out.push(Violation::GenesisMismatch);
    }
}

/// Stateless acceptance check. Returns every violation found, empty when
/// the invoice is well-formed.
pub fn verify_signed_invoice(si: &SignedInvoice, expected_currency: Currency) -> Vec<Violation> {
    let mut out = structural_violations(si, expected_currency);
    let msg = si.signing_bytes();
    if !verify(&si.supplier_public_key, &msg, &si.seller_signature) {
        out.push(Violation::BadSellerSignature);
    }
    if !verify(&si.buyer_public_key, &msg, &si.buyer_signature) {
        out.push(Violation::BadBuyerSignature);
    }
    tail_violations(si, &mut out);
    out
}

/// Same result as calling [`verify_signed_invoice`] on each element, but
/// checks all signatures in one batch when everything is valid.
pub fn verify_signed_invoices(items: &[SignedInvoice], expected_currency: Currency) -> Vec<Vec<Violation>> {
    let messages: Vec<Vec<u8>> = items.iter().map(|si| si.signing_bytes()).collect();
    let mut triples = Vec::with_capacity(items.len() * 2);
    for (si, msg) in items.iter().zip(&messages) {
        triples.push((&si.supplier_public_key, msg.as_slice(), &si.seller_signature));
        triples.push((&si.buyer_public_key, msg.as_slice(), &si.buyer_signature));
    }
    if !verify_batch(&triples) {
        return items
            .iter()
            .map(|si| verify_signed_invoice(si, expected_currency))
            .collect();
    }
    items
        .iter()
        .map(|si| {
            let mut out = structural_violations(si, expected_currency);
            tail_violations(si, &mut out);
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn keys() -> (KeyPair, KeyPair) {
        (KeyPair::from_label(5, "buyer"), KeyPair::from_label(5, "seller"))
    }

    fn invoice(seller: &KeyPair, price: u64) -> Invoice {
        Invoice::new(seller.address(Currency::Eth), price, Currency::Eth, "").unwrap()
    }

    #[test]
    fn genesis_and_link() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let first = make_signed_invoice(&invoice(&s, 3), None, "c1", 1, &b, &s, &mut rng).unwrap();
        assert!(first.hash_pointer_to_previous.is_genesis());
        assert_eq!(first.sequence, 1);
        assert!(verify_signed_invoice(&first, Currency::Eth).is_empty());
        let second =
            make_signed_invoice(&invoice(&s, 4), Some(&first), "c1", 2, &b, &s, &mut rng).unwrap();
        assert_eq!(second.hash_pointer_to_previous.transaction_id, first.invoice_id);
        assert_eq!(
            second.hash_pointer_to_previous.transaction_hash,
            digest(&first.storage_bytes())
        );
        assert!(second.invoice_id.ends_with("+c1"));
    }

    #[test]
    fn construction_errors() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            make_signed_invoice(&invoice(&s, 3), None, "c", 2, &b, &s, &mut rng),
            Err(MakeInvoiceError::SequenceMismatch { expected: 1, found: 2 })
        );
        let btc = Invoice::new(s.address(Currency::Btc), 3, Currency::Btc, "").unwrap();
        let first = make_signed_invoice(&invoice(&s, 3), None, "c", 1, &b, &s, &mut rng).unwrap();
        assert!(matches!(
            make_signed_invoice(&btc, Some(&first), "c", 2, &b, &s, &mut rng),
            Err(MakeInvoiceError::CurrencyMismatch { .. })
        ));
        assert_eq!(
            make_signed_invoice(&invoice(&s, 3), None, "c", 1, &b, &b, &mut rng),
            Err(MakeInvoiceError::SellerKeyMismatch)
        );
    }

    #[test]
    fn replaced_buyer_address_is_flagged() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut si = make_signed_invoice(&invoice(&s, 3), None, "c", 1, &b, &s, &mut rng).unwrap();
        si.buyer_address = s.address(Currency::Eth);
        let v = verify_signed_invoice(&si, Currency::Eth);
        assert!(v.contains(&Violation::InvalidBuyerAddress));
        // Address is signed content, so signatures break too.
        assert!(v.contains(&Violation::BadSellerSignature));
    }

    #[test]
    fn btc_invoice_on_eth_channel() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let btc = Invoice::new(s.address(Currency::Btc), 3, Currency::Btc, "").unwrap();
        let si = make_signed_invoice(&btc, None, "c", 1, &b, &s, &mut rng).unwrap();
        assert!(verify_signed_invoice(&si, Currency::Btc).is_empty());
        assert_eq!(
            verify_signed_invoice(&si, Currency::Eth),
            vec![Violation::CurrencyMismatch {
                expected: Currency::Eth,
                found: Currency::Btc
            }]
        );
    }

    #[test]
    fn all_violations_reported() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut si = make_signed_invoice(&invoice(&s, 3), None, "c", 1, &b, &s, &mut rng).unwrap();
        si.price = 0;
        si.channel = "other".into();
        let v = verify_signed_invoice(&si, Currency::Eth);
        assert_eq!(
            v,
            vec![
                Violation::BadSellerSignature,
                Violation::BadBuyerSignature,
                Violation::NonPositivePrice,
                Violation::ChannelMismatch
            ]
        );
    }

    #[test]
    fn invoice_id_format() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let id = new_invoice_id(&mut rng, "default");
        let (u, c) = id.split_once('+').unwrap();
        assert_eq!(c, "default");
        assert_eq!(u, u.to_lowercase());
        assert_eq!(Uuid::parse_str(u).unwrap().get_version_num(), 4);
    }

    #[test]
    fn invoice_hash_covers_metadata() {
        let s = KeyPair::from_label(5, "seller");
        let a = Invoice::new(s.address(Currency::Eth), 3, Currency::Eth, "").unwrap();
        let mut b = a.clone();
        assert_eq!(produce_invoice_hash(&a), produce_invoice_hash(&b));
        b.invoice_type = "coffee".into();
        assert_ne!(produce_invoice_hash(&a), produce_invoice_hash(&b));
    }

    #[test]
    fn batch_path_matches_single_path() {
        let (b, s) = keys();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut chain = vec![make_signed_invoice(&invoice(&s, 1), None, "c", 1, &b, &s, &mut rng).unwrap()];
        for seq in 2..=6 {
            let next = make_signed_invoice(&invoice(&s, seq), chain.last(), "c", seq, &b, &s, &mut rng)
                .unwrap();
            chain.push(next);
        }
        let single: Vec<_> = chain.iter().map(|si| verify_signed_invoice(si, Currency::Eth)).collect();
        assert_eq!(verify_signed_invoices(&chain, Currency::Eth), single);
        chain[3].price += 1;
        let single: Vec<_> = chain.iter().map(|si| verify_signed_invoice(si, Currency::Eth)).collect();
        assert!(!single[3].is_empty());
        assert_eq!(verify_signed_invoices(&chain, Currency::Eth), single);
    }
}
