//! Plain-text key files:
//!
//! ```text
//! parsec-key v1
//! secret <hex>
//! public <hex>
//! eth eth:<hex>
//! btc btc:<hex>
//! ```
//!
//! Only `secret` is read back; the rest is for humans and scripts.

use std::path::Path;

use anyhow::{bail, Context, Result};
use parsec_core::protocol::{Currency, KeyPair};

pub const HEADER: &str = "parsec-key v1";

pub fn render(keys: &KeyPair) -> String {
    format!(
        "{HEADER}\nsecret {}\npublic {}\neth {}\nbtc {}\n",
        hex::encode(keys.secret_bytes()),
        hex::encode(keys.public_key().0),
        keys.address(Currency::Eth),
        keys.address(Currency::Btc),
    )
}

pub fn parse(text: &str) -> Result<KeyPair> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        bail!("not a key file (expected `{HEADER}` header)");
    }
    for line in lines {
        if let Some(hexed) = line.trim().strip_prefix("secret ") {
            let raw = hex::decode(hexed.trim()).context("secret is not hex")?;
            return KeyPair::from_secret(&raw).map_err(|e| anyhow::anyhow!("bad secret: {e}"));
        }
    }
    bail!("key file has no `secret` line")
}

pub fn load(path: &Path) -> Result<KeyPair> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}
