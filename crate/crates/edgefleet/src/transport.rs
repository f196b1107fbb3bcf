//! Topic-based publish/subscribe fabric.
//!
//! The in-memory broker delivers exactly-once with per-topic FIFO order and
//! bounded subscriber queues (publishers block when a queue is full). The
//! `BusAdapter` trait is the seam for slotting in an external broker, whose
//! contract is at-least-once; consumers already dedupe readings by
//! (room, timestamp), so duplicates are safe.

use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::pipeline::{parse_reading, SensorReading};
use crate::time::{TimeSource, Timestamp};

/// Default per-subscription queue capacity.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("broker closed")]
    BrokerClosed,
    #[error("wildcard in publish topic `{0}`")]
    WildcardInPublish(String),
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("decode error: {0}")]
    DecodeError(String),
}

/// A `/`-separated topic path. Subscriptions may use `+` as a single-level
/// wildcard segment; publish topics may not contain wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topic {
    segments: Vec<String>,
}

impl Topic {
    pub fn parse(path: &str) -> Result<Self, TransportError> {
        if path.is_empty() {
            return Err(TransportError::InvalidTopic(path.to_string()));
        }
        let segments: Vec<String> = path.split('/').map(str::to_string).collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(TransportError::InvalidTopic(path.to_string()));
        }
        // `+` is only meaningful as a whole segment.
        if segments
            .iter()
            .any(|s| s.contains('+') && s != "+")
        {
            return Err(TransportError::InvalidTopic(path.to_string()));
        }
        Ok(Topic { segments })
    }

    pub fn path(&self) -> String {
        self.segments.join("/")
    }

    pub fn segment(&self, i: usize) -> Option<&str> {
        self.segments.get(i).map(String::as_str)
    }

    pub fn has_wildcard(&self) -> bool {
        self.segments.iter().any(|s| s == "+")
    }

    /// Single-level wildcard matching: `+` matches exactly one segment.
    pub fn matches(&self, concrete: &Topic) -> bool {
        self.segments.len() == concrete.segments.len()
            && self
                .segments
                .iter()
                .zip(&concrete.segments)
                .all(|(p, t)| p == "+" || p == t)
    }
}

impl std::fmt::Display for Topic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.path())
    }
}

/// A published message as seen by subscribers.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub published_at: Timestamp,
    /// Per-topic monotone sequence number, starting at 1.
    pub sequence_no: u64,
}

struct SubEntry {
    pattern: Topic,
    sender: SyncSender<Message>,
}

struct BrokerInner {
    closed: bool,
    topic_seq: std::collections::HashMap<String, u64>,
    subscriptions: Vec<SubEntry>,
}

/// In-memory broker. Publish fans out to every matching subscription in
/// per-topic FIFO order; enqueueing happens under the broker lock so two
/// racing publishers cannot reorder a topic.
pub struct Broker {
    inner: Mutex<BrokerInner>,
    clock: Arc<dyn TimeSource>,
    queue_capacity: usize,
}

impl Broker {
    pub fn new(clock: Arc<dyn TimeSource>) -> Self {
        Self::with_capacity(clock, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(clock: Arc<dyn TimeSource>, queue_capacity: usize) -> Self {
        Broker {
            inner: Mutex::new(BrokerInner {
                closed: false,
                topic_seq: std::collections::HashMap::new(),
                subscriptions: Vec::new(),
            }),
            clock,
            queue_capacity,
        }
    }

    /// Publishes a payload; returns the per-topic sequence number. Blocks if
    /// a matching subscriber queue is full.
    pub fn publish(&self, topic: &Topic, payload: Vec<u8>) -> Result<u64, TransportError> {
        if topic.has_wildcard() {
            return Err(TransportError::WildcardInPublish(topic.path()));
        }
        let mut inner = self.inner.lock().expect("broker lock");
        if inner.closed {
            return Err(TransportError::BrokerClosed);
        }
        let seq = inner
            .topic_seq
            .entry(topic.path())
            .and_modify(|s| *s += 1)
            .or_insert(1);
        let message = Message {
            topic: topic.clone(),
            payload,
            published_at: self.clock.now(),
            sequence_no: *seq,
        };
        // Send under the lock to preserve per-topic total order; drop
        // subscriptions whose receivers are gone.
        inner
            .subscriptions
            .retain(|sub| !sub.pattern.matches(topic) || sub.sender.send(message.clone()).is_ok());
        Ok(message.sequence_no)
    }

    /// Subscribes to a pattern; only messages published afterwards are
    /// delivered (no retained messages).
    pub fn subscribe(&self, pattern: &Topic) -> Result<Subscription, TransportError> {
        let (sender, receiver) = std::sync::mpsc::sync_channel(self.queue_capacity);
        let mut inner = self.inner.lock().expect("broker lock");
        if inner.closed {
            return Err(TransportError::BrokerClosed);
        }
        inner.subscriptions.push(SubEntry {
            pattern: pattern.clone(),
            sender,
        });
        Ok(Subscription { receiver })
    }

    /// Closes the broker; subsequent publishes and subscribes fail and
    /// existing subscriptions drain then end.
    pub fn close(&self) {
        let mut inner = self.inner.lock().expect("broker lock");
        inner.closed = true;
        inner.subscriptions.clear();
    }
}

/// Receiving end of one subscription, owned by a single consumer.
pub struct Subscription {
    receiver: Receiver<Message>,
}

impl Subscription {
    /// Non-blocking receive; `None` when no message is queued.
    pub fn try_recv(&self) -> Option<Message> {
        match self.receiver.try_recv() {
            Ok(m) => Some(m),
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => None,
        }
    }

    /// Blocking receive; `None` once the broker is gone.
    pub fn recv(&self) -> Option<Message> {
        self.receiver.recv().ok()
    }

    /// Receive with a timeout; `None` on timeout or broker gone.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Message> {
        match self.receiver.recv_timeout(timeout) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }
}

/// Abstract message-bus surface so a real broker client can replace the
/// in-memory one without touching agents.
pub trait BusAdapter: Send + Sync {
    fn publish(&self, topic: &Topic, payload: Vec<u8>) -> Result<u64, TransportError>;
    fn subscribe(&self, pattern: &Topic) -> Result<Subscription, TransportError>;
    fn disconnect(&self);
}

impl BusAdapter for Broker {
    fn publish(&self, topic: &Topic, payload: Vec<u8>) -> Result<u64, TransportError> {
        Broker::publish(self, topic, payload)
    }

    fn subscribe(&self, pattern: &Topic) -> Result<Subscription, TransportError> {
        Broker::subscribe(self, pattern)
    }

    fn disconnect(&self) {
        self.close();
    }
}

/// Generic line-oriented key:value payload with a leading `type:` line.
pub mod wire {
    use super::TransportError;

    pub fn encode(kind: &str, fields: &[(String, String)]) -> Vec<u8> {
        let mut out = format!("type:{kind}\n");
        for (k, v) in fields {
            out.push_str(k);
            out.push(':');
            out.push_str(v);
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn decode(payload: &[u8]) -> Result<(String, Vec<(String, String)>), TransportError> {
        let text = std::str::from_utf8(payload)
            .map_err(|_| TransportError::DecodeError("payload is not UTF-8".into()))?;
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| TransportError::DecodeError("empty payload".into()))?;
        let kind = first
            .strip_prefix("type:")
            .ok_or_else(|| TransportError::DecodeError("missing type line".into()))?
            .to_string();
        let mut fields = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| TransportError::DecodeError(format!("bad line {line:?}")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        Ok((kind, fields))
    }

    pub fn field<'a>(
        fields: &'a [(String, String)],
        name: &str,
    ) -> Result<&'a str, TransportError> {
        fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| TransportError::DecodeError(format!("missing field {name}")))
    }
}

/// Encodes a reading as a `type:reading` payload.
pub fn encode_reading(reading: &SensorReading) -> Vec<u8> {
    wire::encode("reading", &reading.to_field_map())
}

/// Decodes a `type:reading` payload.
pub fn decode_reading(payload: &[u8]) -> Result<SensorReading, TransportError> {
    let (kind, fields) = wire::decode(payload)?;
    if kind != "reading" {
        return Err(TransportError::DecodeError(format!(
            "expected reading payload, got {kind:?}"
        )));
    }
    let borrowed: Vec<(&str, &str)> = fields
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    parse_reading(&borrowed).map_err(|e| TransportError::DecodeError(e.to_string()))
}
