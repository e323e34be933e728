//! Inter-cluster P2P trading: role classification, pro-rata clearing,
//! the staged trading protocol, and interval settlement.

mod bus;
mod cost;
mod round;

pub use bus::{Message, MessageBus, Stage, TraceRecord};
pub use cost::{settle_and_cost, ClusterCostLedger, CostBreakdown, Exchange, Prices, UtMultiplier};
pub use round::{run_trading_round, ClusterSnapshot, P2pBid, TradingRound};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Producer,
    Consumer,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeOrder {
    pub cluster: usize,
    pub role: Role,
    pub quantity_kwh: f64,
    /// SMP at the trading interval, $/kWh.
    pub reference_price: f64,
}

/// Energy moved from `producer` to `consumer` in one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub producer: usize,
    pub consumer: usize,
    pub kwh: f64,
}

/// Registers each cluster by the sign of its net position over `dt_h` hours.
/// `clusters` holds `(supply_kw, demand_kw)` pairs, indexed by cluster id.
pub fn classify_roles(clusters: &[(f64, f64)], dt_h: f64, reference_price: f64) -> Vec<TradeOrder> {
    clusters
        .iter()
        .enumerate()
        .map(|(cluster, &(supply, demand))| {
            let (role, quantity_kwh) = if supply > demand {
                (Role::Producer, (supply - demand) * dt_h)
            } else if demand > supply {
                (Role::Consumer, (demand - supply) * dt_h)
            } else {
                (Role::Idle, 0.0)
            };
            TradeOrder {
                cluster,
                role,
                quantity_kwh,
                reference_price,
            }
        })
        .collect()
}

/// Outcome of pro-rata clearing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    /// `(cluster, kWh delivered)` for each producer, in input order.
    pub deliveries: Vec<(usize, f64)>,
    /// `(cluster, kWh received)` for each consumer, in input order.
    pub receipts: Vec<(usize, f64)>,
    pub trades: Vec<Trade>,
}

impl Allocation {
    pub fn total_delivered(&self) -> f64 {
        self.deliveries.iter().map(|d| d.1).sum()
    }

    pub fn total_received(&self) -> f64 {
        self.receipts.iter().map(|r| r.1).sum()
    }
}

const MATCH_EPS: f64 = 1e-12;

/// Clears `T = min(S, D)`. With surplus supply (S >= D) every consumer is
/// served in full and producer `i` delivers `T * q_i / S`; with short supply
/// every producer is fully dispatched and consumer `j` receives `T * q_j / D`.
/// Pairwise trades come from greedy matching in cluster order.
pub fn allocate_proportional(producers: &[TradeOrder], consumers: &[TradeOrder]) -> Allocation {
    let supply: f64 = producers.iter().map(|o| o.quantity_kwh).sum();
    let demand: f64 = consumers.iter().map(|o| o.quantity_kwh).sum();
    if producers.is_empty() || consumers.is_empty() || supply <= 0.0 || demand <= 0.0 {
        return Allocation {
            deliveries: producers.iter().map(|o| (o.cluster, 0.0)).collect(),
            receipts: consumers.iter().map(|o| (o.cluster, 0.0)).collect(),
            trades: Vec::new(),
        };
    }
    let traded = supply.min(demand);
    let (deliveries, receipts): (Vec<_>, Vec<_>) = if supply >= demand {
        (
            producers
                .iter()
                .map(|o| (o.cluster, traded * o.quantity_kwh / supply))
                .collect(),
            consumers.iter().map(|o| (o.cluster, o.quantity_kwh)).collect(),
        )
    } else {
        (
            producers.iter().map(|o| (o.cluster, o.quantity_kwh)).collect(),
            consumers
                .iter()
                .map(|o| (o.cluster, traded * o.quantity_kwh / demand))
                .collect(),
        )
    };
    let trades = greedy_match(&deliveries, &receipts);
    Allocation {
        deliveries,
        receipts,
        trades,
    }
}

fn greedy_match(deliveries: &[(usize, f64)], receipts: &[(usize, f64)]) -> Vec<Trade> {
    let mut trades = Vec::new();
    let mut remaining_out: Vec<f64> = deliveries.iter().map(|d| d.1).collect();
    let mut remaining_in: Vec<f64> = receipts.iter().map(|r| r.1).collect();
    let (mut i, mut j) = (0, 0);
    while i < deliveries.len() && j < receipts.len() {
        if remaining_out[i] <= MATCH_EPS {
            i += 1;
            continue;
        }
        if remaining_in[j] <= MATCH_EPS {
            j += 1;
            continue;
        }
        let kwh = remaining_out[i].min(remaining_in[j]);
        trades.push(Trade {
            producer: deliveries[i].0,
            consumer: receipts[j].0,
            kwh,
        });
        remaining_out[i] -= kwh;
        remaining_in[j] -= kwh;
    }
    trades
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(cluster: usize, role: Role, q: f64) -> TradeOrder {
        TradeOrder {
            cluster,
            role,
            quantity_kwh: q,
            reference_price: 0.09,
        }
    }

    #[test]
    fn classify_examples() {
        let orders = classify_roles(&[(5.0, 3.0), (3.0, 5.0), (2.0, 2.0)], 1.0 / 6.0, 0.09);
        assert_eq!(orders[0].role, Role::Producer);
        assert!((orders[0].quantity_kwh - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(orders[1].role, Role::Consumer);
        assert_eq!(orders[2].role, Role::Idle);
        assert_eq!(orders[2].quantity_kwh, 0.0);
        for o in &orders {
            assert_eq!(o.quantity_kwh > 0.0, o.role != Role::Idle);
        }
    }

    #[test]
    fn case1_surplus_supply() {
        let p = [order(0, Role::Producer, 6.0), order(1, Role::Producer, 4.0)];
        let c = [order(2, Role::Consumer, 3.0), order(3, Role::Consumer, 2.0)];
        let a = allocate_proportional(&p, &c);
        assert_eq!(a.deliveries, vec![(0, 3.0), (1, 2.0)]);
        assert_eq!(a.receipts, vec![(2, 3.0), (3, 2.0)]);
        let traded: f64 = a.trades.iter().map(|t| t.kwh).sum();
        assert!((traded - 5.0).abs() < 1e-12);
    }

    #[test]
    fn case2_short_supply() {
        let p = [order(0, Role::Producer, 4.0)];
        let c = [order(1, Role::Consumer, 6.0), order(2, Role::Consumer, 2.0)];
        let a = allocate_proportional(&p, &c);
        assert_eq!(a.receipts, vec![(1, 3.0), (2, 1.0)]);
        assert_eq!(a.trades.len(), 2);
        assert_eq!(a.trades[0], Trade { producer: 0, consumer: 1, kwh: 3.0 });
    }

    #[test]
    fn empty_sides_trade_nothing() {
        let c = [order(1, Role::Consumer, 6.0)];
        let a = allocate_proportional(&[], &c);
        assert!(a.trades.is_empty());
        assert_eq!(a.total_received(), 0.0);
        let a = allocate_proportional(&[order(0, Role::Producer, 1.0)], &[]);
        assert!(a.trades.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conservation_and_proportionality(
                p in prop::collection::vec(0.001f64..10.0, 1..6),
                c in prop::collection::vec(0.001f64..10.0, 1..6),
            ) {
                let prods: Vec<_> = p.iter().enumerate().map(|(i, &q)| order(i, Role::Producer, q)).collect();
                let cons: Vec<_> = c.iter().enumerate().map(|(i, &q)| order(10 + i, Role::Consumer, q)).collect();
                let a = allocate_proportional(&prods, &cons);
                prop_assert!((a.total_delivered() - a.total_received()).abs() < 1e-9);
                let traded: f64 = a.trades.iter().map(|t| t.kwh).sum();
                prop_assert!((traded - a.total_received()).abs() < 1e-9);
                let s: f64 = p.iter().sum();
                let d: f64 = c.iter().sum();
                let (side, qty) = if s >= d { (&a.deliveries, &p) } else { (&a.receipts, &c) };
                let ratio0 = side[0].1 / qty[0];
                for (x, q) in side.iter().zip(qty.iter()) {
                    prop_assert!((x.1 / q - ratio0).abs() < 1e-12);
                }
                for t in &a.trades {
                    prop_assert!(t.kwh > 0.0);
                }
            }
        }
    }
}
