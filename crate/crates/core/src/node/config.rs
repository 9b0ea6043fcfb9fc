use thiserror::Error;

use crate::protocol::codec::{Canonical, CodecError, Decoder, Encoder, Kind, Mode};
use crate::protocol::types::{get_currency, get_public_key};
use crate::protocol::{derive_address, Address, Amount, Currency, KeyPair, PublicKey, DEFAULT_CHANNEL};
use crate::Tick;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("channel parties must be distinct")]
    SameParty,
    #[error("reorder capacity must be at least 1")]
    ZeroCapacity,
    #[error("checkpoint modulo must be at least 1")]
    ZeroModulo,
    #[error("checkpoint timeout must be at least 1 tick")]
    ZeroTimeout,
    #[error("channel id must be non-empty")]
    EmptyChannel,
    #[error("deposits overflow")]
    DepositOverflow,
    #[error("cosigner key does not match party {0}")]
    CosignerMismatch(char),
}

/// Static parameters of one bilateral channel.
///
/// Parties are identified by public key; their addresses are derived for
/// the channel currency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelConfig {
    pub channel: String,
    pub currency: Currency,
    pub party_a: PublicKey,
    pub party_b: PublicKey,
    pub deposit_a: Amount,
    pub deposit_b: Amount,
    /// Reorder window `n`: how far ahead of the next expected sequence a
    /// transaction may arrive and still be buffered.
    pub reorder_capacity: usize,
    /// Checkpoint every `m`-th sequence number.
    pub checkpoint_modulo: u64,
    pub checkpoint_timeout: Tick,
}

impl ChannelConfig {
    /// Config on the default channel with no deposits, `n = 16`,
    /// `m = 100` and a 50 tick timeout.
    pub fn new(party_a: PublicKey, party_b: PublicKey, currency: Currency) -> Self {
        ChannelConfig {
            channel: DEFAULT_CHANNEL.to_string(),
            currency,
            party_a,
            party_b,
            deposit_a: 0,
            deposit_b: 0,
            reorder_capacity: 16,
            checkpoint_modulo: 100,
            checkpoint_timeout: 50,
        }
    }

    pub fn address_a(&self) -> Address {
        derive_address(&self.party_a, self.currency)
    }

    pub fn address_b(&self) -> Address {
        derive_address(&self.party_b, self.currency)
    }

    pub fn total_deposits(&self) -> Amount {
        self.deposit_a + self.deposit_b
    }

    /// The public key behind `address`, if it belongs to a party.
    pub fn party_key(&self, address: &Address) -> Option<PublicKey> {
        if *address == self.address_a() {
            Some(self.party_a)
        } else if *address == self.address_b() {
            Some(self.party_b)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channel.is_empty() {
            return Err(ConfigError::EmptyChannel);
        }
        if self.party_a == self.party_b {
            return Err(ConfigError::SameParty);
        }
        if self.reorder_capacity == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        if self.checkpoint_modulo == 0 {
            return Err(ConfigError::ZeroModulo);
        }
        if self.checkpoint_timeout == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        self.deposit_a
            .checked_add(self.deposit_b)
            .ok_or(ConfigError::DepositOverflow)?;
        Ok(())
    }
}

impl Canonical for ChannelConfig {
    fn encode(&self, mode: Mode) -> Vec<u8> {
        let mut e = Encoder::message(Kind::ChannelConfig, mode);
        e.str(&self.channel)
            .str(self.currency.symbol())
            .bytes(self.party_a.as_bytes())
            .bytes(self.party_b.as_bytes())
            .u64(self.deposit_a)
            .u64(self.deposit_b)
            .u64(self.reorder_capacity as u64)
            .u64(self.checkpoint_modulo)
            .u64(self.checkpoint_timeout);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::message(bytes, Kind::ChannelConfig)?;
        let c = ChannelConfig {
            channel: d.str("channel")?,
            currency: get_currency(&mut d, "currency")?,
            party_a: get_public_key(&mut d, "party_a")?,
            party_b: get_public_key(&mut d, "party_b")?,
            deposit_a: d.u64("deposit_a")?,
            deposit_b: d.u64("deposit_b")?,
            reorder_capacity: d.u64("reorder_capacity")? as usize,
            checkpoint_modulo: d.u64("checkpoint_modulo")?,
            checkpoint_timeout: d.u64("checkpoint_timeout")?,
        };
        d.finish()?;
        Ok(c)
    }
}

/// Both parties' keys, held by the node so checkpoints are co-signed
/// synchronously.
#[derive(Clone, Debug)]
pub struct Cosigners {
    pub a: KeyPair,
    pub b: KeyPair,
}

impl Cosigners {
    pub fn check(&self, config: &ChannelConfig) -> Result<(), ConfigError> {
        if self.a.public_key() != config.party_a {
            return Err(ConfigError::CosignerMismatch('a'));
        }
        if self.b.public_key() != config.party_b {
            return Err(ConfigError::CosignerMismatch('b'));
        }
        Ok(())
    }
}
