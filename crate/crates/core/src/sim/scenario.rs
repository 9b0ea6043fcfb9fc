//! Scenario model, the line-oriented `parsec-scenario v1` format and the
//! random scenario generator.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::escrow::{ChallengeParams, DEFAULT_CHALLENGE_PERIOD};
use crate::event_log::{ControlKind, Probability};
use crate::protocol::{Amount, Currency};
use crate::Tick;

pub const HEADER: &str = "parsec-scenario v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec {
    pub name: String,
    pub currency: Currency,
    pub a: String,
    pub b: String,
    pub deposit_a: Amount,
    pub deposit_b: Amount,
    pub n: usize,
    pub m: u64,
    pub timeout: Tick,
}

impl ChannelSpec {
    pub fn has_party(&self, label: &str) -> bool {
        self.a == label || self.b == label
    }

    pub fn other(&self, label: &str) -> &str {
        if self.a == label {
            &self.b
        } else {
            &self.a
        }
    }
}

/// Where a claim's preimage comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Preimage {
    Literal(String),
    /// Whatever a successful claim on the named lock revealed.
    RevealedBy(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pay {
        channel: String,
        payer: String,
        amount: Amount,
        invoice_type: String,
    },
    Control {
        channel: String,
        kind: ControlKind,
        requester: String,
    },
    /// Ask the contract to settle on an earlier emitted checkpoint.
    SettleStale {
        channel: String,
        requester: String,
        sequence: u64,
    },
    HtlcLock {
        channel: String,
        name: String,
        payer: String,
        amount: Amount,
        secret: String,
        timeout: Tick,
    },
    HtlcClaim {
        channel: String,
        name: String,
        preimage: Preimage,
    },
    HtlcRefund {
        channel: String,
        name: String,
    },
    Idle,
}

impl Action {
    pub fn channel(&self) -> Option<&str> {
        match self {
            Action::Pay { channel, .. }
            | Action::Control { channel, .. }
            | Action::SettleStale { channel, .. }
            | Action::HtlcLock { channel, .. }
            | Action::HtlcClaim { channel, .. }
            | Action::HtlcRefund { channel, .. } => Some(channel),
            Action::Idle => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedAction {
    pub tick: Tick,
    /// Source line, for diagnostics; 0 for generated actions.
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub challenge: ChallengeParams,
    pub duplicate_probability: Probability,
    pub max_reorder_distance: u64,
    pub channels: Vec<ChannelSpec>,
    /// Sorted by tick, stable in declaration order.
    pub actions: Vec<TimedAction>,
    pub end: Option<Tick>,
}

impl Scenario {
    pub fn channel(&self, name: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Tick at which deliveries are flushed and channels are closed.
    pub fn end_tick(&self) -> Tick {
        let last = self.actions.iter().map(|a| a.tick).max().map_or(0, |t| t + 1);
        self.end.map_or(last, |e| e.max(last))
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        Parser::default().parse(text)
    }

    /// Check every cross-reference and parameter the runner relies on.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.challenge.challenge_period == 0 {
            return err(0, "challenge period must be positive");
        }
        if self.channels.is_empty() {
            return err(0, "no channels declared");
        }
        let mut names = BTreeMap::new();
        for c in &self.channels {
            if names.insert(c.name.as_str(), c).is_some() {
                return err(0, format!("channel `{}` declared twice", c.name));
            }
            if c.a == c.b {
                return err(0, format!("channel `{}` needs two distinct parties", c.name));
            }
            if c.n == 0 || c.m == 0 || c.timeout == 0 {
                return err(0, format!("channel `{}`: n, m and timeout must be positive", c.name));
            }
            if (c.n as u64) < self.max_reorder_distance {
                return err(
                    0,
                    format!(
                        "channel `{}`: n={} is smaller than the reorder distance {}",
                        c.name, c.n, self.max_reorder_distance
                    ),
                );
            }
        }
        let mut locks: BTreeMap<&str, &str> = BTreeMap::new();
        for ta in &self.actions {
            let line = ta.line;
            let Some(ch) = ta.action.channel() else { continue };
            let Some(spec) = names.get(ch) else {
                return err(line, format!("unknown channel `{ch}`"));
            };
            let party = |label: &str| -> Result<(), ScenarioError> {
                if spec.has_party(label) {
                    Ok(())
                } else {
                    err(line, format!("`{label}` is not a party of channel `{ch}`"))
                }
            };
            match &ta.action {
                Action::Pay { payer, amount, .. } => {
                    party(payer)?;
                    if *amount == 0 {
                        return err(line, "payment amount must be positive");
                    }
                }
                Action::Control { requester, .. } | Action::SettleStale { requester, .. } => party(requester)?,
                Action::HtlcLock {
                    name,
                    payer,
                    amount,
                    timeout,
                    ..
                } => {
                    party(payer)?;
                    if *amount == 0 {
                        return err(line, "lock amount must be positive");
                    }
                    if *timeout <= ta.tick {
                        return err(line, "lock timeout must be after the lock tick");
                    }
                    if locks.insert(name, ch).is_some() {
                        return err(line, format!("lock `{name}` declared twice"));
                    }
                }
                Action::HtlcClaim { name, preimage, .. } => {
                    self.lock_ref(&locks, name, ch, line)?;
                    if let Preimage::RevealedBy(src) = preimage {
                        if !locks.contains_key(src.as_str()) {
                            return err(line, format!("unknown lock `{src}`"));
                        }
                    }
                }
                Action::HtlcRefund { name, .. } => self.lock_ref(&locks, name, ch, line)?,
                Action::Idle => {}
            }
        }
        Ok(())
    }

    fn lock_ref(&self, locks: &BTreeMap<&str, &str>, name: &str, ch: &str, line: usize) -> Result<(), ScenarioError> {
        match locks.get(name) {
            None => err(line, format!("unknown lock `{name}`")),
            Some(c) if *c != ch => err(line, format!("lock `{name}` belongs to channel `{c}`")),
            Some(_) => Ok(()),
        }
    }
}

fn fmt_preimage(p: &Preimage) -> String {
    match p {
        Preimage::Literal(s) => s.clone(),
        Preimage::RevealedBy(l) => format!("revealed:{l}"),
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Pay {
                channel,
                payer,
                amount,
                invoice_type,
            } => {
                write!(f, "pay {channel} {payer} {amount}")?;
                if !invoice_type.is_empty() {
                    write!(f, " {invoice_type}")?;
                }
                Ok(())
            }
            Action::Control {
                channel,
                kind,
                requester,
            } => {
                let k = match kind {
                    ControlKind::UnscheduledSettlement => "unscheduled",
                    ControlKind::DisputedSettlement => "disputed",
                };
                write!(f, "control {channel} {k} {requester}")
            }
            Action::SettleStale {
                channel,
                requester,
                sequence,
            } => write!(f, "settle-stale {channel} {requester} {sequence}"),
            Action::HtlcLock {
                channel,
                name,
                payer,
                amount,
                secret,
                timeout,
            } => write!(f, "htlc-lock {channel} {name} {payer} {amount} {secret} {timeout}"),
            Action::HtlcClaim {
                channel,
                name,
                preimage,
            } => write!(f, "htlc-claim {channel} {name} {}", fmt_preimage(preimage)),
            Action::HtlcRefund { channel, name } => write!(f, "htlc-refund {channel} {name}"),
            Action::Idle => f.write_str("idle"),
        }
    }
}

/// Canonical text form; relays appear expanded.
impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{HEADER}")?;
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "challenge {}", self.challenge.challenge_period)?;
        writeln!(
            f,
            "faults dup={} reorder={}",
            self.duplicate_probability, self.max_reorder_distance
        )?;
        for c in &self.channels {
            writeln!(
                f,
                "channel {} currency={} a={} b={} deposit_a={} deposit_b={} n={} m={} timeout={}",
                c.name,
                c.currency.symbol(),
                c.a,
                c.b,
                c.deposit_a,
                c.deposit_b,
                c.n,
                c.m,
                c.timeout
            )?;
        }
        for ta in &self.actions {
            writeln!(f, "{} {}", ta.tick, ta.action)?;
        }
        if let Some(e) = self.end {
            writeln!(f, "end {e}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Parser {
    seed: Option<u64>,
    challenge: Option<Tick>,
    faults: Option<(Probability, u64)>,
    channels: Vec<ChannelSpec>,
    actions: Vec<TimedAction>,
    relays: Vec<(usize, Relay)>,
    end: Option<Tick>,
}

fn num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, ScenarioError> {
    s.parse()
        .or_else(|_| err(line, format!("{what}: expected a non-negative integer, found `{s}`")))
}

fn key_values<'a>(line: usize, parts: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>, ScenarioError> {
    let mut out = BTreeMap::new();
    for p in parts {
        let Some((k, v)) = p.split_once('=') else {
            return err(line, format!("expected key=value, found `{p}`"));
        };
        if out.insert(k, v).is_some() {
            return err(line, format!("`{k}` given twice"));
        }
    }
    Ok(out)
}

fn arity(line: usize, verb: &str, args: &[&str], min: usize, max: usize) -> Result<(), ScenarioError> {
    if args.len() < min || args.len() > max {
        let want = if min == max {
            format!("{min}")
        } else {
            format!("{min} to {max}")
        };
        return err(line, format!("`{verb}` takes {want} arguments, found {}", args.len()));
    }
    Ok(())
}

impl Parser {
    fn parse(mut self, text: &str) -> Result<Scenario, ScenarioError> {
        let mut saw_header = false;
        let mut order = 0usize;
        let mut staged: Vec<(Tick, usize, usize, Action)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if !saw_header {
                if content != HEADER {
                    return err(line, format!("expected header `{HEADER}`"));
                }
                saw_header = true;
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "seed" => {
                    arity(line, "seed", &words[1..], 1, 1)?;
                    self.seed = Some(num(line, "seed", words[1])?);
                }
                "challenge" => {
                    arity(line, "challenge", &words[1..], 1, 1)?;
                    self.challenge = Some(num(line, "challenge", words[1])?);
                }
                "faults" => {
                    let kv = key_values(line, &words[1..])?;
                    let mut dup = Probability::ZERO;
                    let mut reorder = 0;
                    for (k, v) in kv {
                        match k {
                            "dup" => dup = v.parse().or_else(|e: String| err(line, e))?,
                            "reorder" => reorder = num(line, "reorder", v)?,
                            other => return err(line, format!("unknown fault parameter `{other}`")),
                        }
                    }
                    self.faults = Some((dup, reorder));
                }
                "channel" => {
                    let c = self.channel(line, &words[1..])?;
                    self.channels.push(c);
                }
                "end" => {
                    arity(line, "end", &words[1..], 1, 1)?;
                    self.end = Some(num(line, "end", words[1])?);
                }
                first => {
                    let tick: Tick = num(line, "tick", first)?;
                    let Some(&verb) = words.get(1) else {
                        return err(line, "missing action after tick");
                    };
                    let args = &words[2..];
                    if verb == "relay" {
                        let r = parse_relay(line, args)?;
                        for (t, a) in relay_payment(line, tick, &r)? {
                            staged.push((t, order, line, a));
                            order += 1;
                        }
                        self.relays.push((line, r));
                    } else {
                        staged.push((tick, order, line, action(line, verb, args)?));
                        order += 1;
                    }
                }
            }
        }
        if !saw_header {
            return err(0, format!("missing header `{HEADER}`"));
        }
        staged.sort_by_key(|(t, o, _, _)| (*t, *o));
        self.actions = staged
            .into_iter()
            .map(|(tick, _, line, action)| TimedAction { tick, line, action })
            .collect();
        let (dup, reorder) = self.faults.unwrap_or((Probability::ZERO, 0));
        let s = Scenario {
            seed: self.seed.unwrap_or(0),
            challenge: ChallengeParams {
                challenge_period: self.challenge.unwrap_or(DEFAULT_CHALLENGE_PERIOD),
            },
            duplicate_probability: dup,
            max_reorder_distance: reorder,
            channels: self.channels,
            actions: self.actions,
            end: self.end,
        };
        for (line, r) in &self.relays {
            check_relay_route(&s, r, *line)?;
        }
        s.validate()?;
        Ok(s)
    }

    fn channel(&self, line: usize, words: &[&str]) -> Result<ChannelSpec, ScenarioError> {
        let Some((&name, rest)) = words.split_first() else {
            return err(line, "channel needs a name");
        };
        if name.contains('=') {
            return err(line, "channel needs a name before its parameters");
        }
        let kv = key_values(line, rest)?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| ScenarioError {
            line,
            message: format!("channel `{name}` is missing `{k}`"),
        });
        for k in kv.keys() {
            if !["currency", "a", "b", "deposit_a", "deposit_b", "n", "m", "timeout"].contains(k) {
                return err(line, format!("unknown channel parameter `{k}`"));
            }
        }
        let currency = match kv.get("currency") {
            None => Currency::Eth,
            Some(c) => c.parse().or_else(|e| err(line, format!("{e}")))?,
        };
        let opt = |k: &str, default: u64| -> Result<u64, ScenarioError> {
            kv.get(k).map_or(Ok(default), |v| num(line, k, v))
        };
        Ok(ChannelSpec {
            name: name.to_string(),
            currency,
            a: get("a")?.to_string(),
            b: get("b")?.to_string(),
            deposit_a: opt("deposit_a", 0)?,
            deposit_b: opt("deposit_b", 0)?,
            n: opt("n", 16)? as usize,
            m: opt("m", 100)?,
            timeout: opt("timeout", 50)?,
        })
    }
}

fn action(line: usize, verb: &str, args: &[&str]) -> Result<Action, ScenarioError> {
    let s = |i: usize| args[i].to_string();
    Ok(match verb {
        "pay" => {
            arity(line, verb, args, 3, 4)?;
            Action::Pay {
                channel: s(0),
                payer: s(1),
                amount: num(line, "amount", args[2])?,
                invoice_type: args.get(3).map(|t| t.to_string()).unwrap_or_default(),
            }
        }
        "control" => {
            arity(line, verb, args, 3, 3)?;
            let kind = match args[1] {
                "unscheduled" => ControlKind::UnscheduledSettlement,
                "disputed" => ControlKind::DisputedSettlement,
                other => return err(line, format!("unknown control kind `{other}`")),
            };
            Action::Control {
                channel: s(0),
                kind,
                requester: s(2),
            }
        }
        "settle-stale" => {
            arity(line, verb, args, 3, 3)?;
            Action::SettleStale {
                channel: s(0),
                requester: s(1),
                sequence: num(line, "sequence", args[2])?,
            }
        }
        "htlc-lock" => {
            arity(line, verb, args, 6, 6)?;
            Action::HtlcLock {
                channel: s(0),
                name: s(1),
                payer: s(2),
                amount: num(line, "amount", args[3])?,
                secret: s(4),
                timeout: num(line, "timeout", args[5])?,
            }
        }
        "htlc-claim" => {
            arity(line, verb, args, 3, 3)?;
            let preimage = match args[2].strip_prefix("revealed:") {
                Some(src) => Preimage::RevealedBy(src.to_string()),
                None => Preimage::Literal(s(2)),
            };
            Action::HtlcClaim {
                channel: s(0),
                name: s(1),
                preimage,
            }
        }
        "htlc-refund" => {
            arity(line, verb, args, 2, 2)?;
            Action::HtlcRefund {
                channel: s(0),
                name: s(1),
            }
        }
        "idle" => {
            arity(line, verb, args, 0, 0)?;
            Action::Idle
        }
        other => return err(line, format!("unknown action `{other}`")),
    })
}

/// Two-hop conditional payment payer -> relay -> payee over a fixed route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relay {
    pub id: String,
    pub upstream: String,
    pub downstream: String,
    pub payer: String,
    pub relay: String,
    pub payee: String,
    pub amount: Amount,
    pub secret: String,
    /// Downstream timeout; upstream gets `timeout + delta`.
    pub timeout: Tick,
    pub delta: Tick,
    /// Whether the payee reveals the preimage.
    pub reveal: bool,
}

/// Expand a relay into lock, claim and refund actions. Upstream is locked
/// first so the relay never commits funds it is not covered for.
pub fn relay_payment(line: usize, t0: Tick, r: &Relay) -> Result<Vec<(Tick, Action)>, ScenarioError> {
    if r.delta < 1 {
        return err(line, "relay timeout stagger must be at least 1 tick");
    }
    if r.timeout <= t0 {
        return err(line, "relay timeout must leave time for the payee's claim");
    }
    let up = format!("{}.up", r.id);
    let down = format!("{}.down", r.id);
    let mut out = vec![
        (
            t0,
            Action::HtlcLock {
                channel: r.upstream.clone(),
                name: up.clone(),
                payer: r.payer.clone(),
                amount: r.amount,
                secret: r.secret.clone(),
                timeout: r.timeout + r.delta,
            },
        ),
        (
            t0,
            Action::HtlcLock {
                channel: r.downstream.clone(),
                name: down.clone(),
                payer: r.relay.clone(),
                amount: r.amount,
                secret: r.secret.clone(),
                timeout: r.timeout,
            },
        ),
    ];
    if r.reveal {
        out.push((
            t0 + 1,
            Action::HtlcClaim {
                channel: r.downstream.clone(),
                name: down.clone(),
                preimage: Preimage::Literal(r.secret.clone()),
            },
        ));
        out.push((
            t0 + 2,
            Action::HtlcClaim {
                channel: r.upstream.clone(),
                name: up,
                preimage: Preimage::RevealedBy(down),
            },
        ));
    } else {
        out.push((
            r.timeout + 1,
            Action::HtlcRefund {
                channel: r.downstream.clone(),
                name: down,
            },
        ));
        out.push((
            r.timeout + r.delta + 1,
            Action::HtlcRefund {
                channel: r.upstream.clone(),
                name: up,
            },
        ));
    }
    Ok(out)
}

fn parse_relay(line: usize, args: &[&str]) -> Result<Relay, ScenarioError> {
    arity(line, "relay", args, 11, 11)?;
    let reveal = match args[10] {
        "reveal" => true,
        "withhold" => false,
        other => return err(line, format!("relay outcome must be reveal or withhold, found `{other}`")),
    };
    let r = Relay {
        id: args[0].to_string(),
        upstream: args[1].to_string(),
        downstream: args[2].to_string(),
        payer: args[3].to_string(),
        relay: args[4].to_string(),
        payee: args[5].to_string(),
        amount: num(line, "amount", args[6])?,
        secret: args[7].to_string(),
        timeout: num(line, "timeout", args[8])?,
        delta: num(line, "delta", args[9])?,
        reveal,
    };
    if r.upstream == r.downstream {
        return err(line, "relay needs two different channels");
    }
    Ok(r)
}

/// Parties are checked against the route once channels are known.
fn check_relay_route(s: &Scenario, r: &Relay, line: usize) -> Result<(), ScenarioError> {
    let up = s.channel(&r.upstream).ok_or_else(|| ScenarioError {
        line,
        message: format!("unknown channel `{}`", r.upstream),
    })?;
    let down = s.channel(&r.downstream).ok_or_else(|| ScenarioError {
        line,
        message: format!("unknown channel `{}`", r.downstream),
    })?;
    if !(up.has_party(&r.payer) && up.has_party(&r.relay) && down.has_party(&r.relay) && down.has_party(&r.payee)) {
        return err(line, "relay route does not match the channel parties");
    }
    Ok(())
}

/// A valid scenario drawn from `seed`: one to three channels, up to 1,000
/// payments, duplication up to 1/2 and reordering below every channel's
/// buffer capacity. Payments never overdraw.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a210);
    let reorder: u64 = rng.gen_range(0..=7);
    let dup = Probability::new(rng.gen_range(0..=5), 10).expect("valid ratio");
    let k = rng.gen_range(1..=3);
    let channels: Vec<ChannelSpec> = (0..k)
        .map(|i| ChannelSpec {
            name: format!("ch{i}"),
            currency: Currency::Eth,
            a: format!("ch{i}-a"),
            b: format!("ch{i}-b"),
            deposit_a: rng.gen_range(50..=500),
            deposit_b: rng.gen_range(0..=500),
            n: rng.gen_range(reorder as usize + 1..=16),
            m: rng.gen_range(1..=50),
            timeout: rng.gen_range(5..=100),
        })
        .collect();
    let total: usize = rng.gen_range(1..=1000);
    let mut balances: Vec<(Amount, Amount)> = channels.iter().map(|c| (c.deposit_a, c.deposit_b)).collect();
    let mut actions = Vec::new();
    let mut tick: Tick = 0;
    let mut issued = 0;
    while issued < total {
        for _ in 0..rng.gen_range(0..=4) {
            if issued == total {
                break;
            }
            let ci = rng.gen_range(0..channels.len());
            let c = &channels[ci];
            let (ba, bb) = &mut balances[ci];
            let a_pays = match (*ba, *bb) {
                (0, _) => false,
                (_, 0) => true,
                _ => rng.gen_bool(0.5),
            };
            let (from, to, label) = if a_pays { (ba, bb, &c.a) } else { (bb, ba, &c.b) };
            let amount = rng.gen_range(1..=(*from).min(20));
            *from -= amount;
            *to += amount;
            actions.push(TimedAction {
                tick,
                line: 0,
                action: Action::Pay {
                    channel: c.name.clone(),
                    payer: label.clone(),
                    amount,
                    invoice_type: String::new(),
                },
            });
            issued += 1;
            if rng.gen_ratio(1, 250) {
                actions.push(TimedAction {
                    tick,
                    line: 0,
                    action: Action::Control {
                        channel: c.name.clone(),
                        kind: ControlKind::UnscheduledSettlement,
                        requester: label.clone(),
                    },
                });
            }
        }
        tick += rng.gen_range(1..=3);
    }
    Scenario {
        seed,
        challenge: ChallengeParams::default(),
        duplicate_probability: dup,
        max_reorder_distance: reorder,
        channels,
        actions,
        end: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# a comment
parsec-scenario v1
seed 9
challenge 20
faults dup=1/4 reorder=2
channel up currency=ETH a=alice b=rita deposit_a=100 deposit_b=0 n=4 m=5 timeout=30
channel down a=rita b=bob deposit_a=50 n=4
2 pay up alice 30 coffee
1 pay up alice 5
3 control up unscheduled rita
4 relay r1 up down alice rita bob 10 s3cret 20 5 reveal
end 60
";

    #[test]
    fn parses_and_sorts() {
        let s = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.challenge.challenge_period, 20);
        assert_eq!(s.max_reorder_distance, 2);
        assert_eq!(s.duplicate_probability, Probability::new(1, 4).unwrap());
        assert_eq!(s.channels.len(), 2);
        assert_eq!(s.channels[1].m, 100);
        let ticks: Vec<Tick> = s.actions.iter().map(|a| a.tick).collect();
        assert_eq!(ticks, vec![1, 2, 3, 4, 4, 5, 6]);
        assert_eq!(s.actions[0].line, 9);
        assert_eq!(s.end_tick(), 60);
    }

    #[test]
    fn display_round_trips() {
        let s = Scenario::parse(SAMPLE).unwrap();
        let again = Scenario::parse(&s.to_string()).unwrap();
        assert_eq!(again.to_string(), s.to_string());
        assert_eq!(again.actions.len(), s.actions.len());
        let r = random_scenario(3);
        assert_eq!(Scenario::parse(&r.to_string()).unwrap().to_string(), r.to_string());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = SAMPLE.replace("1 pay up alice 5", "1 pay up mallory 5");
        assert_eq!(Scenario::parse(&bad).unwrap_err().line, 9);
        let bad = SAMPLE.replace("20 5 reveal", "20 0 reveal");
        let e = Scenario::parse(&bad).unwrap_err();
        assert_eq!(e.line, 11);
        assert!(e.message.contains("stagger"));
        assert_eq!(Scenario::parse("seed 1\n").unwrap_err().line, 1);
        let bad = SAMPLE.replace("n=4 m=5", "n=1 m=5");
        assert!(Scenario::parse(&bad).unwrap_err().message.contains("reorder"));
        let bad = SAMPLE.replace("3 control up unscheduled rita", "3 wobble up");
        assert_eq!(Scenario::parse(&bad).unwrap_err().line, 10);
    }

    #[test]
    fn relay_expansion() {
        let r = Relay {
            id: "x".into(),
            upstream: "u".into(),
            downstream: "d".into(),
            payer: "a".into(),
            relay: "r".into(),
            payee: "b".into(),
            amount: 3,
            secret: "s".into(),
            timeout: 10,
            delta: 2,
            reveal: false,
        };
        let steps = relay_payment(1, 0, &r).unwrap();
        let ticks: Vec<Tick> = steps.iter().map(|(t, _)| *t).collect();
        assert_eq!(ticks, vec![0, 0, 11, 13]);
        assert!(matches!(&steps[0].1, Action::HtlcLock { timeout: 12, .. }));
        assert!(relay_payment(1, 0, &Relay { delta: 0, ..r.clone() }).is_err());
        assert!(relay_payment(1, 10, &r).is_err());
    }

    #[test]
    fn random_scenarios_validate() {
        for seed in 1..20 {
            let s = random_scenario(seed);
            s.validate().unwrap();
            assert!(s.channels.iter().all(|c| c.n as u64 > s.max_reorder_distance));
        }
        assert_eq!(random_scenario(5), random_scenario(5));
    }
}
