use serde::{Deserialize, Serialize};

use crate::scheduler::SourceMix;

/// Prices in force for one interval, $/kWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prices {
    /// Composite demand-response rate for this cluster.
    pub dr: f64,
    pub smp: f64,
}

/// How the utility-channel action label scales its cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtMultiplier {
    /// Buy +1, sell -1, idle 0.
    #[default]
    Sign,
    /// Uses the ±2 action label itself as the multiplier.
    Literal,
}

impl UtMultiplier {
    fn factor(self) -> f64 {
        match self {
            UtMultiplier::Sign => 1.0,
            UtMultiplier::Literal => 2.0,
        }
    }
}

/// Traded energy of one cluster in one interval, kWh. At most one direction
/// per channel is non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Exchange {
    pub p2p_bought_kwh: f64,
    pub p2p_sold_kwh: f64,
    pub ut_bought_kwh: f64,
    pub ut_sold_kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub grid_load: f64,
    pub res_load: f64,
    pub grid_p2p: f64,
    pub res_p2p: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.grid_load + self.res_load + self.grid_p2p + self.res_p2p
    }
}

/// Per-cluster running cost record and month-to-date consumption.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterCostLedger {
    monthly_kwh: f64,
    total_usd: f64,
    intervals: Vec<(usize, CostBreakdown)>,
}

impl ClusterCostLedger {
    pub fn new(month_to_date_kwh: f64) -> Self {
        ClusterCostLedger {
            monthly_kwh: month_to_date_kwh,
            ..Self::default()
        }
    }

    pub fn monthly_kwh(&self) -> f64 {
        self.monthly_kwh
    }

    pub fn total_usd(&self) -> f64 {
        self.total_usd
    }

    pub fn intervals(&self) -> &[(usize, CostBreakdown)] {
        &self.intervals
    }
}

/// Interval cost: grid load at DR, own-RES load at SMP, utility trades at DR
/// and P2P trades at SMP, with buys positive and sells negative. Adds the
/// served energy to the month-to-date total.
pub fn settle_and_cost(
    ledger: &mut ClusterCostLedger,
    n: usize,
    mix: &SourceMix,
    exchange: &Exchange,
    prices: Prices,
    ut_multiplier: UtMultiplier,
    dt_h: f64,
) -> f64 {
    let m = ut_multiplier.factor();
    let breakdown = CostBreakdown {
        grid_load: mix.grid * dt_h * prices.dr,
        res_load: mix.res * dt_h * prices.smp,
        grid_p2p: m * (exchange.ut_bought_kwh - exchange.ut_sold_kwh) * prices.dr,
        res_p2p: (exchange.p2p_bought_kwh - exchange.p2p_sold_kwh) * prices.smp,
    };
    let cost = breakdown.total();
    ledger.monthly_kwh += mix.served() * dt_h;
    ledger.total_usd += cost;
    ledger.intervals.push((n, breakdown));
    cost
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(res: f64, grid: f64) -> SourceMix {
        SourceMix {
            res,
            grid,
            ..SourceMix::default()
        }
    }

    #[test]
    fn hand_evaluated_interval_cost() {
        // dt = 1 h so kW and kWh coincide.
        let mut ledger = ClusterCostLedger::new(0.0);
        let prices = Prices { dr: 0.10, smp: 0.08 };
        let ex = Exchange {
            p2p_bought_kwh: 1.0,
            ..Exchange::default()
        };
        let c = settle_and_cost(&mut ledger, 0, &mix(1.0, 2.0), &ex, prices, UtMultiplier::Sign, 1.0);
        assert!((c - 0.36).abs() < 1e-15);
        assert_eq!(ledger.monthly_kwh(), 3.0);

        let ex = Exchange {
            p2p_sold_kwh: 1.0,
            ..Exchange::default()
        };
        let c = settle_and_cost(&mut ledger, 1, &mix(0.0, 0.0), &ex, prices, UtMultiplier::Sign, 1.0);
        assert!((c + 0.08).abs() < 1e-15);

        let c = settle_and_cost(&mut ledger, 2, &mix(0.0, 0.0), &Exchange::default(), prices, UtMultiplier::Sign, 1.0);
        assert_eq!(c, 0.0);
        assert_eq!(ledger.intervals().len(), 3);
        assert!((ledger.total_usd() - 0.28).abs() < 1e-15);
    }

    #[test]
    fn utility_channel_and_literal_multiplier() {
        let prices = Prices { dr: 0.2, smp: 0.08 };
        let ex = Exchange {
            ut_sold_kwh: 1.0,
            ..Exchange::default()
        };
        let mut l = ClusterCostLedger::default();
        let sign = settle_and_cost(&mut l, 0, &mix(0.0, 0.0), &ex, prices, UtMultiplier::Sign, 1.0 / 6.0);
        let literal = settle_and_cost(&mut l, 1, &mix(0.0, 0.0), &ex, prices, UtMultiplier::Literal, 1.0 / 6.0);
        assert!((sign + 0.2).abs() < 1e-15);
        assert!((literal + 0.4).abs() < 1e-15);
    }

    #[test]
    fn monthly_total_never_decreases() {
        let mut l = ClusterCostLedger::new(10.0);
        let mut prev = l.monthly_kwh();
        for n in 0..50 {
            let m = mix((n % 3) as f64, (n % 5) as f64);
            settle_and_cost(&mut l, n, &m, &Exchange::default(), Prices { dr: 0.1, smp: 0.1 }, UtMultiplier::Sign, 1.0 / 6.0);
            assert!(l.monthly_kwh() >= prev);
            prev = l.monthly_kwh();
        }
    }
}
