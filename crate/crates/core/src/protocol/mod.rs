//! Wire-level protocol: message types, canonical encoding, hashing, keys,
//! addresses, signatures and stateless verification.

pub mod chain;
pub mod codec;
pub mod crypto;
pub mod invoice;
pub mod testkit;
pub mod types;

pub use chain::{audit_chain, verify_chain, verify_chain_from, ChainAnchor, ChainFault, VerifiedCache};
pub use codec::{Canonical, CodecError, Mode};
pub use crypto::{derive_address, digest, sign, verify, CryptoError, KeyPair, PublicKey, Signature};
pub use invoice::{
    make_signed_invoice, produce_invoice_hash, transaction_hash, verify_signed_invoice,
    verify_signed_invoices, MakeInvoiceError, Violation,
};
pub use types::{
    Address, Amount, Checkpoint, CheckpointReason, Currency, Hash256, HashPointer, Invoice,
    InvoiceError, SignedInvoice, UnknownCurrency, ALLOWED_CURRENCIES, DEFAULT_CHANNEL,
};
