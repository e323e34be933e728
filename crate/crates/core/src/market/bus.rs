use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;

use super::round::ClusterSnapshot;
use super::{Trade, TradeOrder};
use crate::error::{Error, Result};

/// The six trading stages, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InfoCollection,
    Registration,
    Routing,
    Scheduling,
    Transmission,
    Settlement,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [
        Stage::InfoCollection,
        Stage::Registration,
        Stage::Routing,
        Stage::Scheduling,
        Stage::Transmission,
        Stage::Settlement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::InfoCollection => "info_collection",
            Stage::Registration => "registration",
            Stage::Routing => "routing",
            Stage::Scheduling => "scheduling",
            Stage::Transmission => "transmission",
            Stage::Settlement => "settlement",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Snapshot(ClusterSnapshot),
    Register(TradeOrder),
    Route { producer: usize, consumer: usize },
    Schedule(Trade),
    Transmit { cluster: usize, delivered_kwh: f64, received_kwh: f64 },
    Settle { cluster: usize, usd: f64 },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Snapshot(_) => "snapshot",
            Message::Register(_) => "register",
            Message::Route { .. } => "route",
            Message::Schedule(_) => "schedule",
            Message::Transmit { .. } => "transmit",
            Message::Settle { .. } => "settle",
        }
    }

    fn trace_fields(&self) -> (usize, f64, f64) {
        match *self {
            Message::Snapshot(ref s) => (s.cluster, s.bid.map_or(0.0, |b| b.kwh), 0.0),
            Message::Register(ref o) => (o.cluster, o.quantity_kwh, 0.0),
            Message::Route { producer, .. } => (producer, 0.0, 0.0),
            Message::Schedule(ref t) => (t.producer, t.kwh, 0.0),
            Message::Transmit {
                cluster,
                delivered_kwh,
                received_kwh,
            } => (cluster, delivered_kwh - received_kwh, 0.0),
            Message::Settle { cluster, usd } => (cluster, 0.0, usd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub interval: usize,
    pub stage: &'static str,
    pub cluster_id: usize,
    pub message_type: &'static str,
    pub kwh: f64,
    pub usd: f64,
}

/// In-process stand-in for the cluster router network: a FIFO of typed
/// messages plus an optional delivery trace.
#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    queue: VecDeque<(usize, Message)>,
    trace: Option<Vec<TraceRecord>>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        MessageBus {
            queue: VecDeque::new(),
            trace: Some(Vec::new()),
        }
    }

    /// Posts a message for interval `n`.
    pub fn post(&mut self, n: usize, msg: Message) {
        self.queue.push_back((n, msg));
    }

    /// Removes and returns every queued message of interval `n` accepted by
    /// `filter`, recording each under `stage`.
    pub(crate) fn take(
        &mut self,
        n: usize,
        stage: Stage,
        filter: impl Fn(&Message) -> bool,
    ) -> Vec<Message> {
        let mut taken = Vec::new();
        let mut kept = VecDeque::with_capacity(self.queue.len());
        for (m_n, msg) in self.queue.drain(..) {
            if m_n == n && filter(&msg) {
                taken.push(msg);
            } else {
                kept.push_back((m_n, msg));
            }
        }
        self.queue = kept;
        if let Some(trace) = self.trace.as_mut() {
            for msg in &taken {
                let (cluster_id, kwh, usd) = msg.trace_fields();
                trace.push(TraceRecord {
                    interval: n,
                    stage: stage.name(),
                    cluster_id,
                    message_type: msg.kind(),
                    kwh,
                    usd,
                });
            }
        }
        taken
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Writes `interval,stage,cluster_id,message_type,kwh,usd`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["interval", "stage", "cluster_id", "message_type", "kwh", "usd"])?;
        for r in self.trace() {
            wtr.write_record([
                r.interval.to_string(),
                r.stage.to_string(),
                r.cluster_id.to_string(),
                r.message_type.to_string(),
                r.kwh.to_string(),
                r.usd.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<round trace>", e))?;
        Ok(())
    }
}
