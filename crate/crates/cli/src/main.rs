//! `parsec`: key and invoice tooling, chain verification and scenario runs.
//!
//! Results go to stdout as stable, line-oriented text. Diagnostics go to
//! stderr. Exit codes: 0 success, 1 the input was checked and found bad
//! (chain violation, simulator divergence), 2 usage or parse errors.

mod keyfile;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use parsec_core::node::ChannelConfig;
use parsec_core::protocol::codec::{read_frames, write_frames};
use parsec_core::protocol::{
    audit_chain, make_signed_invoice, produce_invoice_hash, transaction_hash, Canonical, Currency, Invoice,
    KeyPair, PublicKey, SignedInvoice, DEFAULT_CHANNEL,
};
use parsec_core::sim::{oracle_replay, run_scenario, run_scenario_parallel, Scenario};

#[derive(Parser)]
#[command(name = "parsec", version, about = "Hash-linked payment channel tooling")]
struct Cli {
    /// Extra diagnostics on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Subcommand)]
enum Command {
    /// Write a new keypair and its ETH and BTC addresses.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Derive the key deterministically from a seed and label.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "key", requires = "seed")]
        label: String,
    },
    /// Create an unsigned invoice payable to the seller's key.
    Invoice {
        #[arg(long)]
        seller: PathBuf,
        #[arg(long)]
        price: u64,
        #[arg(long, default_value = "ETH")]
        currency: Currency,
        #[arg(long = "type", default_value = "")]
        invoice_type: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign an invoice with both keys and append it to a chain file.
    Sign {
        #[arg(long)]
        invoice: PathBuf,
        #[arg(long)]
        buyer: PathBuf,
        #[arg(long)]
        seller: PathBuf,
        /// `.plog` chain file; created when missing.
        #[arg(long)]
        chain: PathBuf,
        /// Defaults to the chain's channel, or `default` for a new chain.
        #[arg(long)]
        channel: Option<String>,
        /// Seed for the invoice id; random when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a `.plog` chain file and list every violation.
    VerifyChain {
        file: PathBuf,
        /// Expected currency; defaults to the first transaction's.
        #[arg(long)]
        currency: Option<Currency>,
    },
    /// Run a scenario file and report node, oracle and contract outcomes.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Run independent channel groups on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Fold a chain file into final balances from the given deposits.
    Replay {
        file: PathBuf,
        #[arg(long)]
        deposit_a: u64,
        #[arg(long)]
        deposit_b: u64,
        /// Party A public key (hex); defaults to the first buyer.
        #[arg(long)]
        party_a: Option<String>,
        /// Party B public key (hex); defaults to the first seller.
        #[arg(long)]
        party_b: Option<String>,
    },
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    /// Input checked and found bad.
    Rejected,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Rejected) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if verbose {
                for (i, cause) in e.chain().enumerate() {
                    eprintln!("  {i}: {cause}");
                }
            }
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Keygen { out, seed, label } => keygen(&out, seed, &label),
        Command::Invoice {
            seller,
            price,
            currency,
            invoice_type,
            out,
        } => invoice(&seller, price, currency, invoice_type, &out),
        Command::Sign {
            invoice,
            buyer,
            seller,
            chain,
            channel,
            seed,
        } => sign(&invoice, &buyer, &seller, &chain, channel, seed),
        Command::VerifyChain { file, currency } => verify_chain_file(&file, currency),
        Command::Run {
            scenario,
            seed,
            report,
            format,
            parallel,
        } => run(&scenario, seed, report.as_deref(), format, parallel),
        Command::Replay {
            file,
            deposit_a,
            deposit_b,
            party_a,
            party_b,
        } => replay(&file, deposit_a, deposit_b, party_a, party_b),
    }
}

fn keygen(out: &Path, seed: Option<u64>, label: &str) -> Result<Outcome> {
    let keys = match seed {
        Some(s) => KeyPair::from_label(s, label),
        None => KeyPair::generate(&mut rand::thread_rng()),
    };
    fs::write(out, keyfile::render(&keys)).with_context(|| format!("writing {}", out.display()))?;
    println!("public {}", hex::encode(keys.public_key().0));
    println!("eth {}", keys.address(Currency::Eth));
    println!("btc {}", keys.address(Currency::Btc));
    Ok(Outcome::Ok)
}

fn invoice(seller: &Path, price: u64, currency: Currency, invoice_type: String, out: &Path) -> Result<Outcome> {
    let keys = keyfile::load(seller)?;
    let inv = Invoice::new(keys.address(currency), price, currency, invoice_type)?;
    fs::write(out, format!("{}\n", hex::encode(inv.storage_bytes())))
        .with_context(|| format!("writing {}", out.display()))?;
    println!("invoice_hash {}", produce_invoice_hash(&inv));
    Ok(Outcome::Ok)
}

fn read_invoice(path: &Path) -> Result<Invoice> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw = hex::decode(text.trim()).with_context(|| format!("{} is not a hex invoice", path.display()))?;
    Invoice::decode(&raw).with_context(|| format!("decoding {}", path.display()))
}

fn read_chain(path: &Path) -> Result<Vec<SignedInvoice>> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let frames = read_frames(&data).with_context(|| format!("framing in {}", path.display()))?;
    frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| SignedInvoice::decode(f).with_context(|| format!("record {} of {}", i + 1, path.display())))
        .collect()
}

fn sign(
    invoice_path: &Path,
    buyer: &Path,
    seller: &Path,
    chain_path: &Path,
    channel: Option<String>,
    seed: Option<u64>,
) -> Result<Outcome> {
    let inv = read_invoice(invoice_path)?;
    let buyer = keyfile::load(buyer)?;
    let seller = keyfile::load(seller)?;
    let chain = if chain_path.exists() { read_chain(chain_path)? } else { Vec::new() };
    let last = chain.last();
    let channel = match (channel, last) {
        (Some(c), Some(p)) if c != p.channel => bail!("chain belongs to channel `{}`, not `{c}`", p.channel),
        (Some(c), _) => c,
        (None, Some(p)) => p.channel.clone(),
        (None, None) => DEFAULT_CHANNEL.to_string(),
    };
    let sequence = chain.len() as u64 + 1;
    let si = match seed {
        Some(s) => make_signed_invoice(&inv, last, &channel, sequence, &buyer, &seller, &mut ChaCha8Rng::seed_from_u64(s)),
        None => make_signed_invoice(&inv, last, &channel, sequence, &buyer, &seller, &mut rand::thread_rng()),
    }?;
    let record = si.storage_bytes();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(chain_path)
        .with_context(|| format!("opening {}", chain_path.display()))?;
    file.write_all(&write_frames([record.as_slice()]))?;
    println!("sequence {sequence}");
    println!("invoice_id {}", si.invoice_id);
    println!("transaction_hash {}", transaction_hash(&si));
    Ok(Outcome::Ok)
}

fn verify_chain_file(path: &Path, currency: Option<Currency>) -> Result<Outcome> {
    let chain = read_chain(path)?;
    let Some(first) = chain.first() else {
        bail!("{} holds no transactions", path.display());
    };
    let currency = currency.unwrap_or(first.currency);
    let faults = audit_chain(&chain, currency);
    if faults.is_empty() {
        println!("ok transactions={} head={}", chain.len(), transaction_hash(chain.last().unwrap()));
        return Ok(Outcome::Ok);
    }
    for f in &faults {
        println!("violation index={} {}", f.position, f.violation);
    }
    println!("failed transactions={} violations={} first_index={}", chain.len(), faults.len(), faults[0].position);
    Ok(Outcome::Rejected)
}

fn run(path: &Path, seed: Option<u64>, report: Option<&Path>, format: Format, parallel: bool) -> Result<Outcome> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario = Scenario::parse(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let result = if parallel { run_scenario_parallel(&scenario) } else { run_scenario(&scenario) };
    let r = result.with_context(|| format!("in {}", path.display()))?;
    let rendered = match format {
        Format::Text => r.to_text(),
        Format::Kv => r.to_kv(),
    };
    match report {
        Some(out) => fs::write(out, &rendered).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{rendered}"),
    }
    let flags = r.divergence_flags();
    for f in &flags {
        eprintln!("divergence {f}");
    }
    Ok(if flags.is_empty() { Outcome::Ok } else { Outcome::Rejected })
}

fn parse_key(hexed: &str) -> Result<PublicKey> {
    let raw = hex::decode(hexed.trim()).context("public key is not hex")?;
    Ok(PublicKey::from_slice(&raw)?)
}

fn replay(
    path: &Path,
    deposit_a: u64,
    deposit_b: u64,
    party_a: Option<String>,
    party_b: Option<String>,
) -> Result<Outcome> {
    let chain = read_chain(path)?;
    let Some(first) = chain.first() else {
        bail!("{} holds no transactions", path.display());
    };
    let a = match party_a {
        Some(k) => parse_key(&k)?,
        None => first.buyer_public_key,
    };
    let b = match party_b {
        Some(k) => parse_key(&k)?,
        None => first.supplier_public_key,
    };
    let mut cfg = ChannelConfig::new(a, b, first.currency);
    cfg.channel = first.channel.clone();
    cfg.deposit_a = deposit_a;
    cfg.deposit_b = deposit_b;
    match oracle_replay(&chain, &cfg) {
        Ok(st) => {
            println!("channel {}", cfg.channel);
            println!("sequence {}", st.final_sequence);
            println!("head {}", st.chain_head);
            for (addr, v) in &st.balances {
                println!("balance {addr} {v}");
            }
            Ok(Outcome::Ok)
        }
        Err(e) => {
            println!("rejected {e}");
            Ok(Outcome::Rejected)
        }
    }
}
