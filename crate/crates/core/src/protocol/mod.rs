//! Three-party contract signing with payment.
//!
//! The merchant shares one key string with the client and one with the TP.
//! It signs a contract with the XOR of the two, the client forwards contract,
//! tag and its own share to the TP, the TP answers with its share, and both
//! verify against the same combined key. Payment goes through an escrow the
//! TP releases on acceptance or refunds on rejection.
//!
//! The network is a deterministic in-order message loop. Every message is
//! encoded to a wire frame and decoded on delivery, so a malformed frame
//! aborts the run instead of failing it.

mod attack;
mod ledger;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::otuh::{sign, verify, SignatureKeys, SignatureTag};
use crate::rng;

pub use attack::{
    attack_trials, bound_with_band, forgery_monte_carlo, AttackStats, ForgeryStats, Tamper,
};
pub use ledger::{MoneyLedger, MoneySummary, PaymentEvent, PaymentKind};
pub use wire::{Message, MessageKind, WIRE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Merchant,
    Client,
    Tp,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Merchant, Role::Client, Role::Tp];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub merchant_id: String,
    pub client_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Price in integer currency units.
    pub price: u64,
    pub payload: String,
}

impl Contract {
    /// `merchant_id, client_id, timestamp:u64be, price:u64be, payload` with
    /// each string prefixed by its byte length as `u32be`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.payload.len());
        wire::put_bytes(&mut out, self.merchant_id.as_bytes());
        wire::put_bytes(&mut out, self.client_id.as_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.price.to_be_bytes());
        wire::put_bytes(&mut out, self.payload.as_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Contract> {
        let mut r = wire::Reader { buf: b };
        let text = |raw: &[u8], what: &str| {
            String::from_utf8(raw.to_vec())
                .map_err(|e| Error::format(format!("contract {what} is not UTF-8: {e}")))
        };
        let merchant_id = text(r.bytes()?, "merchant id")?;
        let client_id = text(r.bytes()?, "client id")?;
        let timestamp = r.u64()?;
        let price = r.u64()?;
        let payload = text(r.bytes()?, "payload")?;
        if !r.buf.is_empty() {
            return Err(Error::format(format!(
                "{} trailing bytes after contract",
                r.buf.len()
            )));
        }
        Ok(Contract {
            merchant_id,
            client_id,
            timestamp,
            price,
            payload,
        })
    }

    /// The signed message: the canonical bytes, MSB first.
    pub fn to_bits(&self) -> BitString {
        BitString::from_bytes_msb(&self.to_bytes())
    }

    /// Message length `m` in bits.
    pub fn bit_len(&self) -> usize {
        8 * self.to_bytes().len()
    }
}

/// Shuffles a reconciled key with the permutation announced under
/// `order_seed` and cuts it into `3n`-bit signing blocks. A remainder shorter
/// than a block is dropped.
pub fn distill_signing_blocks(
    key: &BitString,
    n: usize,
    order_seed: u64,
) -> Result<Vec<SignatureKeys>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "block parameter n = {n} must be at least 2"
        )));
    }
    let block = 3 * n;
    if key.len() < block {
        return Err(Error::InsufficientKey {
            needed: block,
            available: key.len(),
        });
    }
    let order = rng::permutation(&mut rng::stream(order_seed, "protocol/distill"), key.len());
    let shuffled = BitString::from_bools(order.iter().map(|&i| key.get(i as usize)));
    (0..key.len() / block)
        .map(|i| SignatureKeys::from_block(&shuffled.slice(i * block, block)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    MerchantClient,
    MerchantTp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    #[default]
    Pending,
    Accept,
    Reject,
}

/// Unused signing blocks for one channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyStore {
    blocks: Vec<SignatureKeys>,
    next: usize,
}

impl KeyStore {
    pub fn new(blocks: Vec<SignatureKeys>) -> Self {
        KeyStore { blocks, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.blocks.len() - self.next
    }

    /// Hands out the next block; a block is never handed out twice.
    pub fn take(&mut self) -> Result<(usize, SignatureKeys)> {
        let i = self.next;
        let k = self.blocks.get(i).cloned().ok_or(Error::InsufficientKey {
            needed: 1,
            available: 0,
        })?;
        self.next += 1;
        Ok((i, k))
    }
}

#[derive(Clone, Debug)]
pub struct PartyState {
    pub role: Role,
    pub keys: BTreeMap<Channel, KeyStore>,
    decision: Decision,
}

impl PartyState {
    pub fn new(role: Role, keys: BTreeMap<Channel, KeyStore>) -> Self {
        PartyState {
            role,
            keys,
            decision: Decision::Pending,
        }
    }

    pub fn decision(&self) -> Decision {
        self.decision
    }

    /// Sets the decision once; a different later decision is an error.
    pub fn decide(&mut self, d: Decision) -> Result<()> {
        match self.decision {
            Decision::Pending => {
                self.decision = d;
                Ok(())
            }
            current if current == d => Ok(()),
            current => Err(Error::invalid(format!(
                "{:?} already decided {current:?}, cannot change to {d:?}",
                self.role
            ))),
        }
    }

    fn reset(&mut self) {
        self.decision = Decision::Pending;
    }

    fn take_block(&mut self, channel: Channel) -> Result<(usize, SignatureKeys)> {
        self.keys
            .get_mut(&channel)
            .ok_or_else(|| Error::invalid(format!("{:?} holds no key for {channel:?}", self.role)))?
            .take()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    #[default]
    None,
    /// The client forwards a contract with one bit flipped to the TP.
    ForgeClient,
    /// The TP, holding its own share, forges a merchant-signed contract to the client.
    ForgeTp,
    /// After an honest run the merchant denies having signed.
    RepudiateMerchant,
}

/// Reconciled key strings of one channel, as held by the merchant and by its peer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelKeys {
    pub merchant: BitString,
    pub peer: BitString,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub contract: Contract,
    pub n: usize,
    pub merchant_client: ChannelKeys,
    pub merchant_tp: ChannelKeys,
    /// Seed of the announced key-order permutation.
    pub order_seed: u64,
    #[serde(default)]
    pub adversary: Adversary,
    /// Whether the client agrees with the contract it receives.
    #[serde(default = "default_true")]
    pub client_agrees: bool,
    /// Probability that a message is lost in transit.
    #[serde(default)]
    pub channel_failure: f64,
    /// Drives message loss and adversary choices.
    #[serde(default)]
    pub seed: u64,
    /// Client's opening balance; defaults to the contract price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_balance: Option<i64>,
}

impl Scenario {
    /// An honest scenario with identical uniformly random keys for `blocks`
    /// signing rounds on each channel.
    pub fn with_random_keys(contract: Contract, n: usize, blocks: usize, seed: u64) -> Scenario {
        let gen = |label: &str| {
            let mut r = rng::stream(seed, label);
            let k = BitString::from_bools((0..3 * n * blocks).map(|_| r.gen::<bool>()));
            ChannelKeys {
                merchant: k.clone(),
                peer: k,
            }
        };
        Scenario {
            contract,
            n,
            merchant_client: gen("scenario/merchant-client"),
            merchant_tp: gen("scenario/merchant-tp"),
            order_seed: rng::child_seed(seed, "scenario/order"),
            adversary: Adversary::None,
            client_agrees: true,
            channel_failure: 0.0,
            seed,
            client_balance: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMessage {
    pub seq: usize,
    pub sender: Role,
    pub receiver: Role,
    pub kind: MessageKind,
    /// The frame as delivered, hex encoded.
    pub frame: String,
    pub tampered: bool,
    pub delivered: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dispute {
    pub dissenting: Role,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyOp {
    Sign,
    Verify,
    Reveal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyUse {
    pub party: Role,
    pub channel: Channel,
    pub block: usize,
    pub op: KeyOp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub adversary: Adversary,
    pub messages: Vec<TranscriptMessage>,
    pub client_verdict: Decision,
    pub tp_verdict: Decision,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub disputes: Vec<Dispute>,
    pub key_usage: Vec<KeyUse>,
    /// Set when the merchant denied the contract: whether it stays bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merchant_bound: Option<bool>,
    pub money: MoneySummary,
}

impl Transcript {
    /// Checks that no party used a key block twice and that money is conserved.
    pub fn audit(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for u in &self.key_usage {
            if !seen.insert((u.party, u.channel, u.block)) {
                return Err(Error::KeyReuse);
            }
        }
        if !self.money.is_conserved() {
            return Err(Error::invalid("ledger deltas do not sum to zero"));
        }
        Ok(())
    }
}

/// Result of combining the client's and the TP's verdicts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arbitration {
    pub outcome: Outcome,
    pub refund: bool,
    pub dispute: Option<Dispute>,
}

/// The contract stands iff the TP accepts. A client that rejects never
/// forwards or pays, so the run ends before the TP is involved.
pub fn arbitrate(client: Decision, tp: Decision) -> Arbitration {
    match (client, tp) {
        (Decision::Accept, Decision::Accept) => Arbitration {
            outcome: Outcome::Completed,
            refund: false,
            dispute: None,
        },
        (Decision::Accept, _) => Arbitration {
            outcome: Outcome::Aborted,
            refund: true,
            dispute: Some(Dispute {
                dissenting: Role::Tp,
                reason: "TP rejected a signature the client accepted".into(),
            }),
        },
        (Decision::Reject, _) => Arbitration {
            outcome: Outcome::Aborted,
            refund: false,
            dispute: Some(Dispute {
                dissenting: Role::Client,
                reason: "client rejected the merchant's signature".into(),
            }),
        },
        (Decision::Pending, _) => Arbitration {
            outcome: Outcome::Aborted,
            refund: false,
            dispute: None,
        },
    }
}

/// Parties and ledger that persist across signing rounds.
pub struct Session {
    merchant: PartyState,
    client: PartyState,
    tp: PartyState,
    ledger: MoneyLedger,
    rounds: usize,
}

impl Session {
    /// Each party distills its own key strings with the announced order.
    pub fn new(scenario: &Scenario) -> Result<Session> {
        let distill = |k: &BitString| {
            distill_signing_blocks(k, scenario.n, scenario.order_seed).map(KeyStore::new)
        };
        let merchant = PartyState::new(
            Role::Merchant,
            BTreeMap::from([
                (
                    Channel::MerchantClient,
                    distill(&scenario.merchant_client.merchant)?,
                ),
                (
                    Channel::MerchantTp,
                    distill(&scenario.merchant_tp.merchant)?,
                ),
            ]),
        );
        let client = PartyState::new(
            Role::Client,
            BTreeMap::from([(
                Channel::MerchantClient,
                distill(&scenario.merchant_client.peer)?,
            )]),
        );
        let tp = PartyState::new(
            Role::Tp,
            BTreeMap::from([(Channel::MerchantTp, distill(&scenario.merchant_tp.peer)?)]),
        );
        let balance = scenario
            .client_balance
            .unwrap_or(i64::try_from(scenario.contract.price).unwrap_or(i64::MAX));
        Ok(Session {
            merchant,
            client,
            tp,
            ledger: MoneyLedger::new(BTreeMap::from([(Role::Client, balance)])),
            rounds: 0,
        })
    }

    pub fn ledger(&self) -> &MoneyLedger {
        &self.ledger
    }

    /// Runs one signing round. Protocol failures end in an aborted
    /// transcript; only key exhaustion and invalid inputs are errors.
    pub fn execute(
        &mut self,
        contract: &Contract,
        adversary: Adversary,
        client_agrees: bool,
        channel_failure: f64,
        seed: u64,
    ) -> Result<Transcript> {
        if !(0.0..=1.0).contains(&channel_failure) {
            return Err(Error::invalid(format!(
                "channel failure probability {channel_failure} outside [0,1]"
            )));
        }
        for p in [&mut self.merchant, &mut self.client, &mut self.tp] {
            p.reset();
        }
        let round = self.rounds;
        self.rounds += 1;
        let mut run = Round {
            net: Network {
                rng: rng::stream(seed, &format!("protocol/round{round}/network")),
                loss: channel_failure,
                log: Vec::new(),
            },
            adv_rng: rng::stream(seed, &format!("protocol/round{round}/adversary")),
            adversary,
            key_usage: Vec::new(),
            disputes: Vec::new(),
            merchant_bound: None,
            escrowed: false,
        };
        let ledger_before = self.ledger.summary().events.len();
        let result = run.play(self, contract, client_agrees);
        let abort_reason = match result {
            Ok(()) => None,
            Err(Abort::Protocol(reason)) => Some(reason),
            Err(Abort::Fatal(e)) => return Err(e),
        };
        let client_verdict = self.client.decision();
        let tp_verdict = self.tp.decision();
        if abort_reason.is_some() && run.escrowed && self.ledger.escrow() > 0 {
            self.ledger.refund_client()?;
        }
        let outcome = if abort_reason.is_none()
            && arbitrate(client_verdict, tp_verdict).outcome == Outcome::Completed
        {
            Outcome::Completed
        } else {
            Outcome::Aborted
        };
        let full = self.ledger.summary();
        let events = full.events[ledger_before..].to_vec();
        let mut deltas: BTreeMap<Role, i64> = Role::ALL.iter().map(|r| (*r, 0)).collect();
        for e in &events {
            *deltas.get_mut(&e.from).expect("role") -= e.amount as i64;
            *deltas.get_mut(&e.to).expect("role") += e.amount as i64;
        }
        Ok(Transcript {
            adversary,
            messages: run.net.log,
            client_verdict,
            tp_verdict,
            outcome,
            abort_reason,
            disputes: run.disputes,
            key_usage: run.key_usage,
            merchant_bound: run.merchant_bound,
            money: MoneySummary {
                deltas,
                escrow_outstanding: self.ledger.escrow(),
                events,
            },
        })
    }
}

/// Runs one scenario from fresh party state.
pub fn run_e2e(scenario: &Scenario) -> Result<Transcript> {
    let mut session = Session::new(scenario)?;
    session.execute(
        &scenario.contract,
        scenario.adversary,
        scenario.client_agrees,
        scenario.channel_failure,
        scenario.seed,
    )
}

enum Abort {
    /// The run ends with an aborted outcome.
    Protocol(String),
    /// The run cannot be carried out at all.
    Fatal(Error),
}

impl From<Error> for Abort {
    fn from(e: Error) -> Self {
        match e {
            Error::InsufficientKey { .. } | Error::KeyReuse => Abort::Fatal(e),
            other => Abort::Protocol(other.to_string()),
        }
    }
}

struct Network {
    rng: rng::StreamRng,
    loss: f64,
    log: Vec<TranscriptMessage>,
}

impl Network {
    /// Encodes, optionally loses, and decodes one message.
    fn send(
        &mut self,
        sender: Role,
        receiver: Role,
        msg: &Message,
        tampered: bool,
    ) -> Result<Message, Abort> {
        let frame = msg.encode();
        let delivered = !(self.loss > 0.0 && self.rng.gen_bool(self.loss));
        self.log.push(TranscriptMessage {
            seq: self.log.len(),
            sender,
            receiver,
            kind: msg.kind(),
            frame: hex(&frame),
            tampered,
            delivered,
        });
        if !delivered {
            return Err(Abort::Protocol(format!(
                "{:?} message from {sender:?} to {receiver:?} lost",
                msg.kind()
            )));
        }
        Message::decode(&frame).map_err(|e| Abort::Protocol(format!("malformed frame: {e}")))
    }
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

struct Round {
    net: Network,
    adv_rng: rng::StreamRng,
    adversary: Adversary,
    key_usage: Vec<KeyUse>,
    disputes: Vec<Dispute>,
    merchant_bound: Option<bool>,
    escrowed: bool,
}

impl Round {
    fn forged(&mut self, contract: &Contract) -> Contract {
        let mut c = contract.clone();
        c.price ^= 1u64 << self.adv_rng.gen_range(0..64);
        c
    }

    fn verify_with(
        &mut self,
        party: Role,
        contract: &Contract,
        tag: &SignatureTag,
        own: SignatureKeys,
        other: &SignatureKeys,
    ) -> Decision {
        let ok = own
            .combine(other)
            .and_then(|mut k| verify(&contract.to_bits(), tag, &mut k))
            .unwrap_or_else(|e| {
                log::debug!("{party:?} verification error: {e}");
                false
            });
        if ok {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn play(
        &mut self,
        s: &mut Session,
        contract: &Contract,
        client_agrees: bool,
    ) -> Result<(), Abort> {
        // (i) merchant signs with both shares.
        let (mb, k_mc) = s.merchant.take_block(Channel::MerchantClient)?;
        let (_, k_mt) = s.merchant.take_block(Channel::MerchantTp)?;
        for channel in [Channel::MerchantClient, Channel::MerchantTp] {
            self.key_usage.push(KeyUse {
                party: Role::Merchant,
                channel,
                block: mb,
                op: KeyOp::Sign,
            });
        }
        let mut signing = k_mc.combine(&k_mt)?;
        let tag = sign(&contract.to_bits(), &mut signing)?;

        // (ii) merchant → client, or a forgery in its place.
        let (sent, tampered) = if self.adversary == Adversary::ForgeTp {
            (self.forged(contract), true)
        } else {
            (contract.clone(), false)
        };
        let Message::SignedContract {
            contract: got,
            tag: got_tag,
        } = self.net.send(
            Role::Merchant,
            Role::Client,
            &Message::SignedContract {
                contract: sent,
                tag: tag.clone(),
            },
            tampered,
        )?
        else {
            unreachable!("frame kind is preserved");
        };

        // (iii) client agrees and forwards its share.
        if !client_agrees {
            s.client.decide(Decision::Reject)?;
            return Err(Abort::Protocol("client declined the contract".into()));
        }
        let (cb, k_c) = s.client.take_block(Channel::MerchantClient)?;
        let (fwd, tampered) = if self.adversary == Adversary::ForgeClient {
            (self.forged(&got), true)
        } else {
            (got.clone(), false)
        };
        let Message::Forward {
            contract: tp_contract,
            tag: tp_tag,
            keys: client_share,
        } = self.net.send(
            Role::Client,
            Role::Tp,
            &Message::Forward {
                contract: fwd,
                tag: got_tag.clone(),
                keys: k_c.clone(),
            },
            tampered,
        )?
        else {
            unreachable!("frame kind is preserved");
        };

        // TP answers with its share.
        let (tb, k_t) = s.tp.take_block(Channel::MerchantTp)?;
        let Message::KeyReveal { keys: tp_share } = self.net.send(
            Role::Tp,
            Role::Client,
            &Message::KeyReveal { keys: k_t.clone() },
            false,
        )?
        else {
            unreachable!("frame kind is preserved");
        };

        // (iv) both verify Hash(C, k1 ⊕ k2) against the tag.
        let client_verdict = self.verify_with(Role::Client, &got, &got_tag, k_c, &tp_share);
        self.key_usage.push(KeyUse {
            party: Role::Client,
            channel: Channel::MerchantClient,
            block: cb,
            op: KeyOp::Verify,
        });
        s.client.decide(client_verdict)?;
        let tp_verdict = if self.adversary == Adversary::ForgeTp {
            self.key_usage.push(KeyUse {
                party: Role::Tp,
                channel: Channel::MerchantTp,
                block: tb,
                op: KeyOp::Reveal,
            });
            Decision::Accept
        } else {
            self.key_usage.push(KeyUse {
                party: Role::Tp,
                channel: Channel::MerchantTp,
                block: tb,
                op: KeyOp::Verify,
            });
            self.verify_with(Role::Tp, &tp_contract, &tp_tag, k_t, &client_share)
        };

        if client_verdict == Decision::Reject {
            // Payment is withheld; the TP never holds money.
            let a = arbitrate(client_verdict, tp_verdict);
            self.disputes.extend(a.dispute);
            return Err(Abort::Protocol(
                "client rejected the signature and withheld payment".into(),
            ));
        }
        s.ledger.escrow_from_client(got.price)?;
        self.escrowed = true;
        s.tp.decide(tp_verdict)?;
        for to in [Role::Merchant, Role::Client] {
            self.net.send(
                Role::Tp,
                to,
                &Message::Verdict {
                    accept: tp_verdict == Decision::Accept,
                },
                false,
            )?;
        }
        let a = arbitrate(client_verdict, tp_verdict);
        self.disputes.extend(a.dispute.clone());
        if a.refund {
            s.ledger.refund_client()?;
        } else {
            s.ledger.release_to_merchant()?;
        }

        if self.adversary == Adversary::RepudiateMerchant && a.outcome == Outcome::Completed {
            // Both honest verifiers ran the same check on the same inputs.
            let bound = client_verdict == Decision::Accept && tp_verdict == Decision::Accept;
            self.merchant_bound = Some(bound);
            self.disputes.push(Dispute {
                dissenting: Role::Merchant,
                reason: if bound {
                    "merchant denied a contract both verifiers accepted; denial overruled".into()
                } else {
                    "merchant denial upheld".into()
                },
            });
        }
        if a.outcome == Outcome::Aborted {
            return Err(Abort::Protocol(
                "TP rejected the signature; payment refunded".into(),
            ));
        }
        Ok(())
    }
}
