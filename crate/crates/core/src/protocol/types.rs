use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::codec::{Canonical, CodecError, Decoder, Encoder, Kind, Mode};
use super::crypto::{PublicKey, Signature};

/// Channel used when none is named.
pub const DEFAULT_CHANNEL: &str = "default";

/// Amounts are integers in the currency's smallest unit.
pub type Amount = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Currency {
    Eth,
    Btc,
}

pub const ALLOWED_CURRENCIES: [Currency; 2] = [Currency::Eth, Currency::Btc];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("currency {0} is not an allowed currency, use ETH or BTC")]
pub struct UnknownCurrency(pub String);

impl Currency {
    pub fn symbol(self) -> &'static str {
        match self {
            Currency::Eth => "ETH",
            Currency::Btc => "BTC",
        }
    }

    pub(crate) fn address_tag(self) -> u8 {
        match self {
            Currency::Eth => 0x01,
            Currency::Btc => 0x02,
        }
    }
}

impl FromStr for Currency {
    type Err = UnknownCurrency;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ETH" => Ok(Currency::Eth),
            "BTC" => Ok(Currency::Btc),
            other => Err(UnknownCurrency(other.to_string())),
        }
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// 32-byte digest. [`Hash256::ZERO`] marks the genesis predecessor.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        let v = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = v
            .try_into()
            .map_err(|v: Vec<u8>| format!("expected 32 bytes, got {}", v.len()))?;
        Ok(Hash256(arr))
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", self.to_hex())
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 20-byte account identifier bound to a currency.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    pub bytes: [u8; 20],
    pub currency: Currency,
}

impl Address {
    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.currency.symbol().to_lowercase(), self.to_hex())
    }
}

impl FromStr for Address {
    type Err = String;

    /// Parses the `eth:<hex>` / `btc:<hex>` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cur, hexpart) = s
            .split_once(':')
            .ok_or_else(|| format!("address `{s}` lacks a currency prefix"))?;
        let currency: Currency = cur.to_uppercase().parse().map_err(|e: UnknownCurrency| e.to_string())?;
        let raw = hex::decode(hexpart).map_err(|e| e.to_string())?;
        let bytes: [u8; 20] = raw
            .try_into()
            .map_err(|v: Vec<u8>| format!("address must be 20 bytes, got {}", v.len()))?;
        Ok(Address { bytes, currency })
    }
}

/// Link to the predecessor transaction of a channel chain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HashPointer {
    pub transaction_id: String,
    pub transaction_hash: Hash256,
}

impl HashPointer {
    pub fn genesis() -> Self {
        HashPointer {
            transaction_id: String::new(),
            transaction_hash: Hash256::ZERO,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.transaction_id.is_empty() && self.transaction_hash.is_zero()
    }
}

/// What the seller asks to be paid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Invoice {
    pub invoice_address: Address,
    pub price: Amount,
    pub currency: Currency,
    /// Opaque metadata; hashed but never interpreted.
    pub invoice_type: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvoiceError {
    #[error("invoice price must be positive")]
    ZeroPrice,
    #[error("invoice currency {currency} does not match address currency {address}")]
    CurrencyMismatch { currency: Currency, address: Currency },
}

impl Invoice {
    pub fn new(
        invoice_address: Address,
        price: Amount,
        currency: Currency,
        invoice_type: impl Into<String>,
    ) -> Result<Self, InvoiceError> {
        if price == 0 {
            return Err(InvoiceError::ZeroPrice);
        }
        if invoice_address.currency != currency {
            return Err(InvoiceError::CurrencyMismatch {
                currency,
                address: invoice_address.currency,
            });
        }
        Ok(Invoice {
            invoice_address,
            price,
            currency,
            invoice_type: invoice_type.into(),
        })
    }
}

/// One channel transaction, signed by both sides and linked to its
/// predecessor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignedInvoice {
    /// `<lowercase uuid>+<channel>`.
    pub invoice_id: String,
    pub seller_signature: Signature,
    pub buyer_signature: Signature,
    pub supplier_address: Address,
    /// Needed to check the seller signature; `supplier_address` must be
    /// derived from it.
    pub supplier_public_key: PublicKey,
    pub buyer_public_key: PublicKey,
    pub buyer_address: Address,
    pub currency: Currency,
    pub price: Amount,
    pub channel: String,
    /// Per-channel position, starting at 1.
    pub sequence: u64,
    pub hash_pointer_to_previous: HashPointer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckpointReason {
    Modulo,
    Timeout,
    Unscheduled,
}

impl CheckpointReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointReason::Modulo => "MODULO",
            CheckpointReason::Timeout => "TIMEOUT",
            CheckpointReason::Unscheduled => "UNSCHEDULED",
        }
    }
}

impl FromStr for CheckpointReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MODULO" => Ok(CheckpointReason::Modulo),
            "TIMEOUT" => Ok(CheckpointReason::Timeout),
            "UNSCHEDULED" => Ok(CheckpointReason::Unscheduled),
            other => Err(format!("unknown checkpoint reason `{other}`")),
        }
    }
}

impl fmt::Display for CheckpointReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dual-signed balance statement at a sequence number.
///
/// `signature_a` / `signature_b` belong to the channel's party A and party B
/// keys respectively; in a bidirectional channel either may be seller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub channel: String,
    pub sequence: u64,
    pub balances: BTreeMap<Address, Amount>,
    pub chain_head: Hash256,
    pub signature_a: Signature,
    pub signature_b: Signature,
    pub reason: CheckpointReason,
}

impl Checkpoint {
    pub fn total(&self) -> u128 {
        self.balances.values().map(|&v| v as u128).sum()
    }
}

// ---- canonical encodings ----

pub(crate) fn put_address(e: &mut Encoder, a: &Address) {
    e.nested(|n| {
        n.bytes(&a.bytes).str(a.currency.symbol());
    });
}

pub(crate) fn get_address(d: &mut Decoder<'_>, field: &'static str) -> Result<Address, CodecError> {
    d.nested(|n| {
        let bytes = n.fixed::<20>(field)?;
        let currency = get_currency(n, field)?;
        Ok(Address { bytes, currency })
    })
}

pub(crate) fn get_currency(d: &mut Decoder<'_>, field: &'static str) -> Result<Currency, CodecError> {
    let s = d.str(field)?;
    s.parse().map_err(|e: UnknownCurrency| CodecError::BadValue {
        field,
        reason: e.to_string(),
    })
}

pub(crate) fn get_public_key(d: &mut Decoder<'_>, field: &'static str) -> Result<PublicKey, CodecError> {
    Ok(PublicKey(d.fixed::<32>(field)?))
}

fn get_signature(d: &mut Decoder<'_>, field: &'static str) -> Result<Signature, CodecError> {
    Ok(Signature(d.fixed::<64>(field)?))
}

fn get_hash(d: &mut Decoder<'_>, field: &'static str) -> Result<Hash256, CodecError> {
    Ok(Hash256(d.fixed::<32>(field)?))
}

impl Canonical for Invoice {
    fn encode(&self, mode: Mode) -> Vec<u8> {
        // Invoices carry no signatures, so both modes hold the same fields.
        let mut e = Encoder::message(Kind::Invoice, mode);
        put_address(&mut e, &self.invoice_address);
        e.u64(self.price)
            .str(self.currency.symbol())
            .str(&self.invoice_type);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::Invoice)?;
        let invoice = Invoice {
            invoice_address: get_address(&mut d, "invoice_address")?,
            price: d.u64("price")?,
            currency: get_currency(&mut d, "currency")?,
            invoice_type: d.str("invoice_type")?,
        };
        d.finish()?;
        Ok(invoice)
    }
}

impl Canonical for SignedInvoice {
    fn encode(&self, mode: Mode) -> Vec<u8> {
        let mut e = Encoder::message(Kind::SignedInvoice, mode);
        e.str(&self.invoice_id);
        if mode == Mode::Storage {
            e.bytes(&self.seller_signature.0).bytes(&self.buyer_signature.0);
        }
        put_address(&mut e, &self.supplier_address);
        e.bytes(&self.supplier_public_key.0)
            .bytes(&self.buyer_public_key.0);
        put_address(&mut e, &self.buyer_address);
        e.str(self.currency.symbol())
            .u64(self.price)
            .str(&self.channel)
            .u64(self.sequence)
            .nested(|n| {
                n.str(&self.hash_pointer_to_previous.transaction_id)
                    .bytes(&self.hash_pointer_to_previous.transaction_hash.0);
            });
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::SignedInvoice)?;
        let si = SignedInvoice {
            invoice_id: d.str("invoice_id")?,
            seller_signature: get_signature(&mut d, "seller_signature")?,
            buyer_signature: get_signature(&mut d, "buyer_signature")?,
            supplier_address: get_address(&mut d, "supplier_address")?,
            supplier_public_key: get_public_key(&mut d, "supplier_public_key")?,
            buyer_public_key: get_public_key(&mut d, "buyer_public_key")?,
            buyer_address: get_address(&mut d, "buyer_address")?,
            currency: get_currency(&mut d, "currency")?,
            price: d.u64("price")?,
            channel: d.str("channel")?,
            sequence: d.u64("sequence")?,
            hash_pointer_to_previous: d.nested(|n| {
                Ok(HashPointer {
                    transaction_id: n.str("hash_pointer.transaction_id")?,
                    transaction_hash: get_hash(n, "hash_pointer.transaction_hash")?,
                })
            })?,
        };
        d.finish()?;
        Ok(si)
    }
}

impl Canonical for Checkpoint {
    fn encode(&self, mode: Mode) -> Vec<u8> {
        let mut e = Encoder::message(Kind::Checkpoint, mode);
        e.str(&self.channel).u64(self.sequence).nested(|n| {
            n.u64(self.balances.len() as u64);
            for (addr, amount) in &self.balances {
                n.nested(|entry| {
                    put_address(entry, addr);
                    entry.u64(*amount);
                });
            }
        });
        e.bytes(&self.chain_head.0);
        if mode == Mode::Storage {
            e.bytes(&self.signature_a.0).bytes(&self.signature_b.0);
        }
        e.str(self.reason.as_str());
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::Checkpoint)?;
        let channel = d.str("channel")?;
        let sequence = d.u64("sequence")?;
        let balances = d.nested(|n| {
            let count = n.u64("balances.count")?;
            let mut map = BTreeMap::new();
            for _ in 0..count {
                let (addr, amount) = n.nested(|entry| {
                    Ok((get_address(entry, "balances.address")?, entry.u64("balances.amount")?))
                })?;
                if map.insert(addr, amount).is_some() {
                    return Err(CodecError::BadValue {
                        field: "balances",
                        reason: format!("duplicate address {addr}"),
                    });
                }
            }
            Ok(map)
        })?;
        let chain_head = get_hash(&mut d, "chain_head")?;
        let signature_a = get_signature(&mut d, "signature_a")?;
        let signature_b = get_signature(&mut d, "signature_b")?;
        let reason = d.str("reason")?.parse().map_err(|reason| CodecError::BadValue {
            field: "reason",
            reason,
        })?;
        d.finish()?;
        Ok(Checkpoint {
            channel,
            sequence,
            balances,
            chain_head,
            signature_a,
            signature_b,
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn currency_parse() {
        assert_eq!("ETH".parse::<Currency>(), Ok(Currency::Eth));
        assert_eq!("BTC".parse::<Currency>(), Ok(Currency::Btc));
        assert_eq!(
            "XRP".parse::<Currency>(),
            Err(UnknownCurrency("XRP".into()))
        );
        assert!("eth".parse::<Currency>().is_err());
    }

    #[test]
    fn address_text_round_trip() {
        let a = Address {
            bytes: [0xab; 20],
            currency: Currency::Btc,
        };
        assert_eq!(a.to_string().parse::<Address>(), Ok(a));
        assert!("abab".parse::<Address>().is_err());
    }

    #[test]
    fn invoice_constructor_checks() {
        let addr = Address {
            bytes: [1; 20],
            currency: Currency::Eth,
        };
        assert_eq!(
            Invoice::new(addr, 0, Currency::Eth, ""),
            Err(InvoiceError::ZeroPrice)
        );
        assert!(matches!(
            Invoice::new(addr, 3, Currency::Btc, ""),
            Err(InvoiceError::CurrencyMismatch { .. })
        ));
        assert!(Invoice::new(addr, 3, Currency::Eth, "").is_ok());
    }

    #[test]
    fn genesis_pointer() {
        assert!(HashPointer::genesis().is_genesis());
        let p = HashPointer {
            transaction_id: "x".into(),
            transaction_hash: Hash256::ZERO,
        };
        assert!(!p.is_genesis());
    }
}
