//! In-process model of the inter-agent radio network.
//!
//! Connectivity is resampled every tick, every directed delivery is dropped
//! independently, and survivors arrive `latency` ticks later. All randomness
//! comes from one seeded generator consumed in a fixed order, so identical
//! seeds replay identical traces.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::AgentId;
use crate::spectral::Spectrum;
use crate::taskspec::{ObjectKind, Point2};

/// Sender id of the operator console. Its link bypasses the mesh model.
pub const OPERATOR: AgentId = AgentId::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    Full,
    /// Each undirected link is up with this probability, resampled per tick.
    Random { edge_probability: f64 },
    Static { edges: Vec<[AgentId; 2]> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    pub topology: Topology,
    pub drop_probability: f64,
    pub latency: u64,
    pub seed: u64,
}

impl Default for NetModel {
    fn default() -> Self {
        Self {
            topology: Topology::Full,
            drop_probability: 0.0,
            latency: 0,
            seed: 0,
        }
    }
}

impl NetModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err("drop probability must lie in [0, 1]".into());
        }
        if let Topology::Random { edge_probability } = self.topology {
            if !(0.0..=1.0).contains(&edge_probability) {
                return Err("edge probability must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    SpectrumShare,
    Discovery,
    UserCommand,
    AgentDisabled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SpectrumShare { spectrum: Spectrum, elapsed: f64 },
    Discovery { kind: ObjectKind, location: Point2 },
    UserCommand { points: Vec<Point2> },
    AgentDisabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmMessage {
    pub sender: AgentId,
    pub sent_tick: u64,
    pub payload: Payload,
}

impl SwarmMessage {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::SpectrumShare { .. } => MessageKind::SpectrumShare,
            Payload::Discovery { .. } => MessageKind::Discovery,
            Payload::UserCommand { .. } => MessageKind::UserCommand,
            Payload::AgentDisabled => MessageKind::AgentDisabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recipient {
    All,
    Agent(AgentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Recipient,
    pub message: SwarmMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    Delivered,
    Dropped,
    NoLink,
    RecipientDown,
}

/// One line of the exportable message log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub kind: MessageKind,
    pub from: AgentId,
    pub to: AgentId,
    pub sent_tick: u64,
    /// Tick at which the fate was decided.
    pub tick: u64,
    pub fate: Fate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetStats {
    pub attempted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub no_link: u64,
    pub recipient_down: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_tick: u64,
    to: AgentId,
    message: SwarmMessage,
}

#[derive(Debug, Clone)]
pub struct Network {
    model: NetModel,
    rng: ChaCha8Rng,
    in_flight: Vec<InFlight>,
    log: Vec<DeliveryRecord>,
    stats: NetStats,
}

impl Network {
    pub fn new(model: NetModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Self {
            model,
            rng,
            in_flight: Vec::new(),
            log: Vec::new(),
            stats: NetStats::default(),
        }
    }

    pub fn model(&self) -> &NetModel {
        &self.model
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    fn sample_links(&mut self, live: &BTreeSet<AgentId>) -> BTreeSet<(AgentId, AgentId)> {
        let ids: Vec<AgentId> = live.iter().copied().collect();
        let mut links = BTreeSet::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let up = match &self.model.topology {
                    Topology::Full => true,
                    Topology::Random { edge_probability } => {
                        self.rng.random::<f64>() < *edge_probability
                    }
                    Topology::Static { edges } => edges
                        .iter()
                        .any(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)),
                };
                if up {
                    links.insert((a, b));
                }
            }
        }
        links
    }

    fn record(&mut self, kind: MessageKind, from: AgentId, to: AgentId, sent_tick: u64, tick: u64, fate: Fate) {
        match fate {
            Fate::Delivered => self.stats.delivered += 1,
            Fate::Dropped => self.stats.dropped += 1,
            Fate::NoLink => self.stats.no_link += 1,
            Fate::RecipientDown => self.stats.recipient_down += 1,
        }
        self.log.push(DeliveryRecord {
            kind,
            from,
            to,
            sent_tick,
            tick,
            fate,
        });
    }

    /// Routes this tick's outboxes and returns every live agent's inbox.
    ///
    /// Senders that are not live are ignored. Operator messages skip the
    /// topology and drop model and arrive the same tick.
    pub fn exchange(
        &mut self,
        live: &BTreeSet<AgentId>,
        outboxes: &BTreeMap<AgentId, Vec<Outgoing>>,
        tick: u64,
    ) -> BTreeMap<AgentId, Vec<SwarmMessage>> {
        let links = self.sample_links(live);
        let mut inboxes: BTreeMap<AgentId, Vec<SwarmMessage>> =
            live.iter().map(|&id| (id, Vec::new())).collect();

        for (&sender, outbox) in outboxes {
            let operator = sender == OPERATOR;
            if !operator && !live.contains(&sender) {
                continue;
            }
            for out in outbox {
                let recipients: Vec<AgentId> = match out.to {
                    Recipient::All => live.iter().copied().filter(|&r| r != sender).collect(),
                    Recipient::Agent(r) if r != sender => vec![r],
                    Recipient::Agent(_) => Vec::new(),
                };
                let kind = out.message.kind();
                for to in recipients {
                    self.stats.attempted += 1;
                    if !live.contains(&to) {
                        self.record(kind, sender, to, out.message.sent_tick, tick, Fate::RecipientDown);
                        continue;
                    }
                    if operator {
                        self.record(kind, sender, to, out.message.sent_tick, tick, Fate::Delivered);
                        inboxes.entry(to).or_default().push(out.message.clone());
                        continue;
                    }
                    let key = (sender.min(to), sender.max(to));
                    if !links.contains(&key) {
                        self.record(kind, sender, to, out.message.sent_tick, tick, Fate::NoLink);
                        continue;
                    }
                    let dropped = self.rng.random::<f64>() < self.model.drop_probability;
                    if dropped {
                        self.record(kind, sender, to, out.message.sent_tick, tick, Fate::Dropped);
                        continue;
                    }
                    self.in_flight.push(InFlight {
                        deliver_tick: tick + self.model.latency,
                        to,
                        message: out.message.clone(),
                    });
                }
            }
        }

        let (due, pending): (Vec<InFlight>, Vec<InFlight>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|m| m.deliver_tick <= tick);
        self.in_flight = pending;
        for m in due {
            let fate = if live.contains(&m.to) {
                Fate::Delivered
            } else {
                Fate::RecipientDown
            };
            self.record(m.message.kind(), m.message.sender, m.to, m.message.sent_tick, tick, fate);
            if fate == Fate::Delivered {
                inboxes.entry(m.to).or_default().push(m.message);
            }
        }
        inboxes
    }

    /// Writes the delivery log as JSON lines.
    pub fn write_log_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Discovery notices from `discoverer` to each of `recipients`.
///
/// The discoverer applies the discovery to its own task state separately.
pub fn broadcast_discovery<I>(
    discoverer: AgentId,
    recipients: I,
    kind: ObjectKind,
    location: Point2,
    tick: u64,
) -> Vec<Outgoing>
where
    I: IntoIterator<Item = AgentId>,
{
    recipients
        .into_iter()
        .filter(|&r| r != discoverer)
        .map(|r| Outgoing {
            to: Recipient::Agent(r),
            message: SwarmMessage {
                sender: discoverer,
                sent_tick: tick,
                payload: Payload::Discovery { kind, location },
            },
        })
        .collect()
}
