use super::bus::{Message, MessageBus, Stage};
use super::{allocate_proportional, classify_roles, Role, Trade, TradeOrder};
use crate::error::{Error, Result};

/// What a cluster wants to trade on the P2P channel this interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P2pBid {
    /// `Producer` to sell, `Consumer` to buy.
    pub side: Role,
    pub kwh: f64,
}

/// The interval-`n` report a cluster posts before the round starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSnapshot {
    pub cluster: usize,
    pub supply_kw: f64,
    pub demand_kw: f64,
    pub bid: Option<P2pBid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradingRound {
    pub interval: usize,
    pub stages: Vec<Stage>,
    pub orders: Vec<TradeOrder>,
    pub trades: Vec<Trade>,
    /// kWh each cluster delivered into the P2P pool.
    pub delivered: Vec<f64>,
    /// kWh each cluster received from the pool.
    pub received: Vec<f64>,
    /// Net cash per cluster in $; positive is revenue.
    pub cash: Vec<f64>,
}

impl TradingRound {
    pub fn energy_imbalance(&self) -> f64 {
        self.delivered.iter().sum::<f64>() - self.received.iter().sum::<f64>()
    }

    pub fn cash_imbalance(&self) -> f64 {
        self.cash.iter().sum()
    }
}

/// Runs the six trading stages for interval `n` over `clusters` participants
/// whose snapshots are already on the bus. Orders are capped by each
/// cluster's physical position, trades clear pro rata, and cash settles at `smp`.
pub fn run_trading_round(
    clusters: usize,
    n: usize,
    smp: f64,
    dt_h: f64,
    bus: &mut MessageBus,
) -> Result<TradingRound> {
    let mut stages = Vec::with_capacity(Stage::ORDER.len());

    // 1. Information collection.
    stages.push(Stage::InfoCollection);
    let mut snapshots: Vec<Option<ClusterSnapshot>> = vec![None; clusters];
    for msg in bus.take(n, Stage::InfoCollection, |m| matches!(m, Message::Snapshot(_))) {
        let Message::Snapshot(s) = msg else { unreachable!() };
        let slot = snapshots.get_mut(s.cluster).ok_or_else(|| Error::Protocol {
            stage: Stage::InfoCollection.name(),
            detail: format!("snapshot from unknown cluster {}", s.cluster),
        })?;
        if slot.replace(s).is_some() {
            return Err(Error::Protocol {
                stage: Stage::InfoCollection.name(),
                detail: format!("duplicate snapshot from cluster {}", s.cluster),
            });
        }
    }

    // 2. Registration.
    stages.push(Stage::Registration);
    let mut positions = Vec::with_capacity(clusters);
    for (c, s) in snapshots.iter().enumerate() {
        let s = s.ok_or_else(|| Error::Protocol {
            stage: Stage::Registration.name(),
            detail: format!("no interval-{n} snapshot from cluster {c}"),
        })?;
        positions.push((s.supply_kw, s.demand_kw));
    }
    let physical = classify_roles(&positions, dt_h, smp);
    for (order, snap) in physical.iter().zip(snapshots.iter().flatten()) {
        let registered = match snap.bid {
            Some(bid) if bid.side == order.role && bid.kwh > 0.0 => TradeOrder {
                quantity_kwh: bid.kwh.min(order.quantity_kwh),
                ..*order
            },
            _ => TradeOrder {
                role: Role::Idle,
                quantity_kwh: 0.0,
                ..*order
            },
        };
        bus.post(n, Message::Register(registered));
    }
    let orders: Vec<TradeOrder> = bus
        .take(n, Stage::Registration, |m| matches!(m, Message::Register(_)))
        .into_iter()
        .map(|m| match m {
            Message::Register(o) => o,
            _ => unreachable!(),
        })
        .collect();

    // 3. Routing: every producer can reach every consumer.
    stages.push(Stage::Routing);
    let producers: Vec<TradeOrder> = orders.iter().copied().filter(|o| o.role == Role::Producer).collect();
    let consumers: Vec<TradeOrder> = orders.iter().copied().filter(|o| o.role == Role::Consumer).collect();
    for p in &producers {
        for c in &consumers {
            bus.post(
                n,
                Message::Route {
                    producer: p.cluster,
                    consumer: c.cluster,
                },
            );
        }
    }
    bus.take(n, Stage::Routing, |m| matches!(m, Message::Route { .. }));

    // 4. Scheduling.
    stages.push(Stage::Scheduling);
    let allocation = allocate_proportional(&producers, &consumers);
    for t in &allocation.trades {
        bus.post(n, Message::Schedule(*t));
    }
    let trades: Vec<Trade> = bus
        .take(n, Stage::Scheduling, |m| matches!(m, Message::Schedule(_)))
        .into_iter()
        .map(|m| match m {
            Message::Schedule(t) => t,
            _ => unreachable!(),
        })
        .collect();

    // 5. Transmission.
    stages.push(Stage::Transmission);
    let mut delivered = vec![0.0; clusters];
    let mut received = vec![0.0; clusters];
    for t in &trades {
        delivered[t.producer] += t.kwh;
        received[t.consumer] += t.kwh;
    }
    for c in 0..clusters {
        if delivered[c] > 0.0 || received[c] > 0.0 {
            bus.post(
                n,
                Message::Transmit {
                    cluster: c,
                    delivered_kwh: delivered[c],
                    received_kwh: received[c],
                },
            );
        }
    }
    bus.take(n, Stage::Transmission, |m| matches!(m, Message::Transmit { .. }));

    // 6. Settlement at SMP: each trade moves cash from consumer to producer.
    stages.push(Stage::Settlement);
    let mut cash = vec![0.0; clusters];
    for t in &trades {
        let usd = t.kwh * smp;
        cash[t.producer] += usd;
        cash[t.consumer] -= usd;
    }
    for (c, &usd) in cash.iter().enumerate() {
        if usd != 0.0 {
            bus.post(n, Message::Settle { cluster: c, usd });
        }
    }
    bus.take(n, Stage::Settlement, |m| matches!(m, Message::Settle { .. }));

    Ok(TradingRound {
        interval: n,
        stages,
        orders,
        trades,
        delivered,
        received,
        cash,
    })
}
