use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::backend::{BackendOutput, EncoderBackend};
use super::message::{monotonic_now, AgentMessage, FailureReason, MessageKind, Payload};
use crate::domain::ModalityId;

/// `(modality, instance)`; instances count up from 0 per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub modality: ModalityId,
    pub instance: u32,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.modality, self.instance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentHealth {
    Ok,
    Unresponsive,
}

impl AgentHealth {
    pub fn name(self) -> &'static str {
        match self {
            AgentHealth::Ok => "ok",
            AgentHealth::Unresponsive => "unresponsive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStatus {
    pub id: AgentId,
    pub health: AgentHealth,
    pub missed_pings: u32,
    pub last_seen: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Registered,
    Deregistered,
    /// Deregister of an id that was never registered (or already removed).
    UnknownDeregister,
    HealthOk,
    MissedPing,
    MarkedUnresponsive(FailureReason),
    /// A request for the modality went to this non-primary instance.
    Failover,
    Killed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEvent {
    pub at: Duration,
    pub agent: AgentId,
    pub kind: EventKind,
}

enum Command {
    Message(AgentMessage, Sender<AgentMessage>),
    Stop,
}

fn failure(msg: &AgentMessage, reason: FailureReason, detail: String) -> AgentMessage {
    msg.reply(MessageKind::Failure, Payload::Failure { reason, detail })
}

fn handle(backend: &mut dyn EncoderBackend, msg: AgentMessage) -> AgentMessage {
    match (&msg.kind, &msg.payload) {
        (MessageKind::HealthPing, _) => msg.reply(MessageKind::HealthAck, Payload::Empty),
        (MessageKind::ExtractRequest, Payload::Request(req)) => {
            let modality = backend.modality();
            if msg.modality != modality {
                return failure(&msg, FailureReason::Malformed, format!("{} request sent to {modality} agent", msg.modality));
            }
            match backend.extract(msg.request_id, req) {
                Ok(BackendOutput::Sequence(seq)) => {
                    if seq.modality() != modality || modality == ModalityId::Aed || !backend.accepts_dim(seq.dim()) {
                        let detail = format!(
                            "{modality} agent declared width {} but produced {} frames of width {}",
                            backend.output_dim(),
                            seq.modality(),
                            seq.dim()
                        );
                        return failure(&msg, FailureReason::DimensionMismatch, detail);
                    }
                    msg.reply(MessageKind::ExtractResponse, Payload::Sequence(seq))
                }
                Ok(BackendOutput::Tags(tags)) if modality == ModalityId::Aed => {
                    msg.reply(MessageKind::ExtractResponse, Payload::Tags(tags))
                }
                Ok(BackendOutput::Tags(_)) => {
                    failure(&msg, FailureReason::DimensionMismatch, format!("{modality} agent produced audio tags"))
                }
                Err(e) => failure(&msg, e.reason, e.detail),
            }
        }
        _ => failure(&msg, FailureReason::Malformed, format!("agent cannot handle {:?} message", msg.kind)),
    }
}

fn spawn_worker(id: AgentId, mut backend: Box<dyn EncoderBackend>) -> Sender<Command> {
    let (tx, rx) = mpsc::channel::<Command>();
    thread::Builder::new()
        .name(format!("agent-{id}"))
        .spawn(move || {
            while let Ok(cmd) = rx.recv() {
                match cmd {
                    Command::Stop => break,
                    Command::Message(msg, reply) => {
                        let out = handle(backend.as_mut(), msg);
                        // The requester may have timed out and gone away.
                        let _ = reply.send(out);
                    }
                }
            }
        })
        .expect("spawn agent worker");
    tx
}

struct Slot {
    status: AgentStatus,
    tx: Sender<Command>,
}

#[derive(Default)]
struct Inner {
    slots: Vec<Slot>,
    events: Vec<RegistryEvent>,
    next_instance: BTreeMap<ModalityId, u32>,
}

impl Inner {
    fn log(&mut self, agent: AgentId, kind: EventKind) {
        if matches!(kind, EventKind::UnknownDeregister) {
            log::warn!("deregister of unknown agent {agent}");
        }
        self.events.push(RegistryEvent {
            at: monotonic_now(),
            agent,
            kind,
        });
    }

    fn slot_mut(&mut self, id: AgentId) -> Option<&mut Slot> {
        self.slots.iter_mut().find(|s| s.status.id == id)
    }
}

/// The one shared structure of the runtime. Each agent runs on its own
/// worker thread and is reached only through messages; every registry
/// operation holds a single lock, so operations are linearizable. Worker
/// threads are never joined: a hung backend cannot block the registry.
pub struct AgentRegistry {
    inner: Mutex<Inner>,
    missed_ping_limit: u32,
}

impl Default for AgentRegistry {
    fn default() -> Self {
        Self::new(1)
    }
}

impl AgentRegistry {
    /// `missed_ping_limit` consecutive unanswered pings mark an agent
    /// unresponsive (values below 1 are treated as 1).
    pub fn new(missed_ping_limit: u32) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            missed_ping_limit: missed_ping_limit.max(1),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn register(&self, backend: Box<dyn EncoderBackend>) -> AgentId {
        let modality = backend.modality();
        let mut inner = self.lock();
        let n = inner.next_instance.entry(modality).or_insert(0);
        let id = AgentId { modality, instance: *n };
        *n += 1;
        let tx = spawn_worker(id, backend);
        inner.slots.push(Slot {
            status: AgentStatus {
                id,
                health: AgentHealth::Ok,
                missed_pings: 0,
                last_seen: None,
            },
            tx,
        });
        inner.log(id, EventKind::Registered);
        id
    }

    /// Removes the agent and stops its worker. Unknown ids are a logged no-op.
    pub fn deregister(&self, id: AgentId) -> bool {
        let mut inner = self.lock();
        match inner.slots.iter().position(|s| s.status.id == id) {
            Some(i) => {
                let slot = inner.slots.remove(i);
                let _ = slot.tx.send(Command::Stop);
                inner.log(id, EventKind::Deregistered);
                true
            }
            None => {
                inner.log(id, EventKind::UnknownDeregister);
                false
            }
        }
    }

    /// Stops the worker but leaves the agent registered, as a crashed
    /// process would. The registry only notices on the next contact.
    pub fn kill(&self, id: AgentId) -> bool {
        let mut inner = self.lock();
        let sent = match inner.slot_mut(id) {
            Some(slot) => slot.tx.send(Command::Stop).is_ok(),
            None => return false,
        };
        if sent {
            inner.log(id, EventKind::Killed);
        }
        true
    }

    pub fn status(&self, id: AgentId) -> Option<AgentStatus> {
        self.lock().slots.iter().find(|s| s.status.id == id).map(|s| s.status.clone())
    }

    pub fn agents(&self) -> Vec<AgentStatus> {
        self.lock().slots.iter().map(|s| s.status.clone()).collect()
    }

    pub fn instances(&self, modality: ModalityId) -> Vec<AgentId> {
        self.lock()
            .slots
            .iter()
            .filter(|s| s.status.id.modality == modality)
            .map(|s| s.status.id)
            .collect()
    }

    pub fn events(&self) -> Vec<RegistryEvent> {
        self.lock().events.clone()
    }

    /// First healthy instance of `modality` not in `exclude`, preferring
    /// the lowest instance number. Picking anything other than the primary
    /// is logged as a failover.
    pub fn route(&self, modality: ModalityId, exclude: &[AgentId]) -> Option<AgentId> {
        let mut inner = self.lock();
        let mut candidates: Vec<&Slot> = inner.slots.iter().filter(|s| s.status.id.modality == modality).collect();
        candidates.sort_by_key(|s| s.status.id.instance);
        let primary = candidates.first().map(|s| s.status.id);
        let chosen = candidates
            .iter()
            .find(|s| s.status.health == AgentHealth::Ok && !exclude.contains(&s.status.id))
            .map(|s| s.status.id)?;
        if Some(chosen) != primary {
            inner.log(chosen, EventKind::Failover);
        }
        Some(chosen)
    }

    pub fn mark_unresponsive(&self, id: AgentId, reason: FailureReason) {
        let mut inner = self.lock();
        if let Some(slot) = inner.slot_mut(id) {
            if slot.status.health != AgentHealth::Unresponsive {
                slot.status.health = AgentHealth::Unresponsive;
                inner.log(id, EventKind::MarkedUnresponsive(reason));
            }
        }
    }

    /// Posts a message to the agent and returns the channel its single
    /// reply will arrive on. Fails with `Unavailable` if the worker is gone.
    pub fn send(&self, id: AgentId, msg: AgentMessage) -> Result<Receiver<AgentMessage>, FailureReason> {
        let tx = self
            .lock()
            .slots
            .iter()
            .find(|s| s.status.id == id)
            .map(|s| s.tx.clone())
            .ok_or(FailureReason::Unavailable)?;
        let (reply_tx, reply_rx) = mpsc::channel();
        tx.send(Command::Message(msg, reply_tx)).map_err(|_| FailureReason::Unavailable)?;
        Ok(reply_rx)
    }

    /// Pings every agent at once and waits up to `timeout` for acks.
    /// Answering agents are marked ok with `last_seen` updated; the rest
    /// accumulate missed pings.
    pub fn health_check(&self, timeout: Duration) -> Vec<AgentStatus> {
        let targets: Vec<(AgentId, Sender<Command>)> =
            self.lock().slots.iter().map(|s| (s.status.id, s.tx.clone())).collect();
        let pending: Vec<(AgentId, u64, Option<Receiver<AgentMessage>>)> = targets
            .into_iter()
            .map(|(id, tx)| {
                let ping = AgentMessage::ping(id.modality);
                let rid = ping.request_id;
                let (reply_tx, reply_rx) = mpsc::channel();
                let rx = tx.send(Command::Message(ping, reply_tx)).ok().map(|_| reply_rx);
                (id, rid, rx)
            })
            .collect();
        let deadline = Instant::now() + timeout;
        let mut answered = Vec::new();
        for (id, rid, rx) in pending {
            let ok = rx.is_some_and(|rx| loop {
                let left = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(left) {
                    Ok(m) if m.request_id == rid && m.kind == MessageKind::HealthAck => break true,
                    Ok(_) => continue,
                    Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => break false,
                }
            });
            answered.push((id, ok));
        }
        let now = monotonic_now();
        let mut inner = self.lock();
        let limit = self.missed_ping_limit;
        for (id, ok) in answered {
            let Some(slot) = inner.slot_mut(id) else { continue };
            let st = &mut slot.status;
            if ok {
                st.missed_pings = 0;
                st.last_seen = Some(now);
                st.health = AgentHealth::Ok;
                inner.log(id, EventKind::HealthOk);
            } else {
                st.missed_pings += 1;
                let newly_dead = st.missed_pings >= limit && st.health == AgentHealth::Ok;
                if newly_dead {
                    st.health = AgentHealth::Unresponsive;
                }
                inner.log(id, EventKind::MissedPing);
                if newly_dead {
                    inner.log(id, EventKind::MarkedUnresponsive(FailureReason::Timeout));
                }
            }
        }
        inner.slots.iter().map(|s| s.status.clone()).collect()
    }
}

impl Drop for AgentRegistry {
    fn drop(&mut self) {
        for slot in &self.lock().slots {
            let _ = slot.tx.send(Command::Stop);
        }
    }
}
