//! Ground truth for a channel: a plain in-order fold over the chain. Shares
//! nothing with the node beyond the wire types and chain verification.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::node::ChannelConfig;
use crate::protocol::{digest, verify_chain, Address, Amount, Canonical, ChainFault, Hash256, SignedInvoice};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("invalid chain: {0}")]
    InvalidChain(ChainFault),
    #[error("invalid chain: position {0} moves funds outside the channel")]
    Outsider(usize),
    #[error("invalid chain: position {0} overdraws the buyer")]
    Overdraft(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleState {
    pub balances: BTreeMap<Address, Amount>,
    pub chain_head: Hash256,
    pub final_sequence: u64,
}

pub fn oracle_replay(chain: &[SignedInvoice], config: &ChannelConfig) -> Result<OracleState, OracleError> {
    verify_chain(chain, config.currency).map_err(OracleError::InvalidChain)?;
    let mut balances = BTreeMap::new();
    balances.insert(config.address_a(), config.deposit_a);
    balances.insert(config.address_b(), config.deposit_b);
    let mut head = Hash256::ZERO;
    for (i, si) in chain.iter().enumerate() {
        if si.buyer_address == si.supplier_address
            || !balances.contains_key(&si.buyer_address)
            || !balances.contains_key(&si.supplier_address)
        {
            return Err(OracleError::Outsider(i + 1));
        }
        let from = balances[&si.buyer_address]
            .checked_sub(si.price)
            .ok_or(OracleError::Overdraft(i + 1))?;
        balances.insert(si.buyer_address, from);
        *balances.get_mut(&si.supplier_address).unwrap() += si.price;
        head = digest(&si.storage_bytes());
    }
    Ok(OracleState {
        balances,
        chain_head: head,
        final_sequence: chain.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::testkit::build_chain;
    use crate::protocol::{make_signed_invoice, Currency, Invoice};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(chain_pair: &crate::protocol::testkit::Pair, a: u64, b: u64) -> ChannelConfig {
        let mut c = ChannelConfig::new(chain_pair.alice.public_key(), chain_pair.bob.public_key(), Currency::Eth);
        c.channel = "c".into();
        c.deposit_a = a;
        c.deposit_b = b;
        c
    }

    #[test]
    fn empty_chain_is_deposits() {
        let (_, pair) = build_chain(0, "c", 1);
        let st = oracle_replay(&[], &config(&pair, 7, 3)).unwrap();
        assert_eq!(st.balances.values().copied().collect::<Vec<_>>().iter().sum::<u64>(), 10);
        assert_eq!(st.balances[&pair.alice.address(Currency::Eth)], 7);
        assert_eq!(st.chain_head, Hash256::ZERO);
        assert_eq!(st.final_sequence, 0);
    }

    #[test]
    fn unit_payments_in_one_direction() {
        let (_, pair) = build_chain(0, "c", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inv = Invoice::new(pair.bob.address(Currency::Eth), 1, Currency::Eth, "").unwrap();
        let mut chain: Vec<SignedInvoice> = Vec::new();
        for seq in 1..=6 {
            let si = make_signed_invoice(&inv, chain.last(), "c", seq, &pair.alice, &pair.bob, &mut rng).unwrap();
            chain.push(si);
        }
        let st = oracle_replay(&chain, &config(&pair, 10, 0)).unwrap();
        assert_eq!(st.balances[&pair.alice.address(Currency::Eth)], 4);
        assert_eq!(st.balances[&pair.bob.address(Currency::Eth)], 6);
        assert_eq!(st.final_sequence, 6);
        assert_eq!(oracle_replay(&chain, &config(&pair, 5, 0)), Err(OracleError::Overdraft(6)));
    }

    #[test]
    fn rejects_broken_chains() {
        let (mut chain, pair) = build_chain(4, "c", 3);
        chain.swap(1, 2);
        assert!(matches!(oracle_replay(&chain, &config(&pair, 50, 50)), Err(OracleError::InvalidChain(_))));
    }
}
