//! The trading MDP: state vector, action labels, per-interval stepping of the
//! learner world alongside the rule-based baseline world, and the ±1 reward.

mod scenario;

pub use scenario::*;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assets::{INTERVALS_PER_DAY, INTERVAL_HOURS};
use crate::error::{Error, Result};
use crate::market::{
    run_trading_round, settle_and_cost, ClusterCostLedger, ClusterSnapshot, Exchange, Message, MessageBus, P2pBid,
    Prices, Role, TraceRecord,
};
use crate::scheduler::{dispatch_sources, SourceMix};
use crate::tariff::TimeOfDay;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeAction {
    BuyUt,
    BuyRes,
    SellUt,
    SellRes,
    Idle,
}

impl TradeAction {
    /// Integer label: ±2 utility channel, ±1 P2P channel, 0 idle.
    pub fn label(self) -> i8 {
        match self {
            TradeAction::BuyUt => 2,
            TradeAction::BuyRes => 1,
            TradeAction::SellUt => -2,
            TradeAction::SellRes => -1,
            TradeAction::Idle => 0,
        }
    }

    pub fn is_buy(self) -> bool {
        self.label() > 0
    }

    pub fn is_sell(self) -> bool {
        self.label() < 0
    }

    pub fn is_utility(self) -> bool {
        self.label().abs() == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// P2P channel only: buy, sell, idle.
    #[default]
    Res,
    /// Utility and P2P channels.
    UtRes,
}

impl ActionSpace {
    pub fn actions(self) -> &'static [TradeAction] {
        match self {
            ActionSpace::Res => &[TradeAction::BuyRes, TradeAction::SellRes, TradeAction::Idle],
            ActionSpace::UtRes => &[
                TradeAction::BuyUt,
                TradeAction::BuyRes,
                TradeAction::SellUt,
                TradeAction::SellRes,
                TradeAction::Idle,
            ],
        }
    }

    pub fn len(self) -> usize {
        self.actions().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn action(self, index: usize) -> Result<TradeAction> {
        self.actions()
            .get(index)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action index {index} outside a {}-action space", self.len())))
    }

    pub fn index_of(self, action: TradeAction) -> Option<usize> {
        self.actions().iter().position(|&a| a == action)
    }
}

/// Traded power for one action: buys cover the net demand above `pw_max`,
/// sells offer the headroom below it. Results are never negative.
pub fn traded_power(action: TradeAction, pw_cluster: f64, pw_res: f64, pw_max: f64) -> f64 {
    if action.is_buy() {
        ((pw_cluster - pw_res) - pw_max).max(0.0)
    } else if action.is_sell() {
        (pw_max - (pw_cluster + pw_res)).max(0.0)
    } else {
        0.0
    }
}

/// Rule-based trader: sell any surplus and buy any deficit on the P2P channel.
pub fn baseline_policy(surplus_kw: f64, deficit_kw: f64) -> TradeAction {
    if surplus_kw > 0.0 {
        TradeAction::SellRes
    } else if deficit_kw > 0.0 {
        TradeAction::BuyRes
    } else {
        TradeAction::Idle
    }
}

/// Observation `[D_1..D_K, S_1..S_K, DR, SMP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    values: Vec<f64>,
}

impl MarketState {
    pub fn new(demand: &[f64], supply: &[f64], dr: f64, smp: f64) -> Self {
        debug_assert_eq!(demand.len(), supply.len());
        let mut values = Vec::with_capacity(2 * demand.len() + 2);
        values.extend_from_slice(demand);
        values.extend_from_slice(supply);
        values.push(dr);
        values.push(smp);
        MarketState { values }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 || values.len() % 2 != 0 {
            return Err(Error::Contract(format!("state length {} is not 2K+2", values.len())));
        }
        Ok(MarketState { values })
    }

    pub fn clusters(&self) -> usize {
        (self.values.len() - 2) / 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn demand(&self, c: usize) -> f64 {
        self.values[c]
    }

    pub fn supply(&self, c: usize) -> f64 {
        self.values[self.clusters() + c]
    }

    pub fn dr(&self) -> f64 {
        self.values[self.values.len() - 2]
    }

    pub fn smp(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub scenario: ScenarioConfig,
    pub horizon: usize,
    pub seed: u64,
    /// Scenario day simulated by the episode.
    pub day: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            scenario: ScenarioConfig::default(),
            horizon: INTERVALS_PER_DAY,
            seed: 0,
            day: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        validate_horizon(self.horizon)?;
        self.scenario.validate()
    }
}

fn validate_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Config("episode horizon must be at least one interval".into()));
    }
    if horizon > INTERVALS_PER_DAY {
        return Err(Error::Config(format!(
            "episode horizon {horizon} exceeds the {INTERVALS_PER_DAY} intervals of a scenario day"
        )));
    }
    Ok(())
}

/// Per-cluster result of one interval in one world.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterInterval {
    pub action: Option<TradeAction>,
    pub mix: SourceMix,
    pub exchange: Exchange,
    pub cost: f64,
}

#[derive(Debug, Clone)]
struct World {
    ledgers: Vec<ClusterCostLedger>,
    bus: MessageBus,
}

impl World {
    fn new(month_start_kwh: &[f64], trace: bool) -> Self {
        World {
            ledgers: month_start_kwh.iter().map(|&k| ClusterCostLedger::new(k)).collect(),
            bus: if trace { MessageBus::with_trace() } else { MessageBus::new() },
        }
    }

    fn total_costs(&self) -> Vec<f64> {
        self.ledgers.iter().map(|l| l.total_usd()).collect()
    }
}

/// Physical position of cluster `c` at interval `n`: (demand, RES, EV discharge).
fn position(day: &DayTrajectory, c: usize, n: usize) -> (f64, f64, f64) {
    (day.demand_kw[c][n], day.res_kw[c][n], day.ev_discharge_kw(c, n))
}

/// Runs one trading interval of one world and books every cluster's cost.
#[allow(clippy::too_many_arguments)]
fn advance_world(
    world: &mut World,
    cfg: &ScenarioConfig,
    day: &DayTrajectory,
    n: usize,
    actions: &[TradeAction],
    dr: &[f64],
    out: &mut [ClusterInterval],
) -> Result<()> {
    let k = actions.len();
    let dt = INTERVAL_HOURS;
    let smp = day.smp[n];
    let mut ut = vec![(0.0, 0.0); k];
    for (c, &a) in actions.iter().enumerate() {
        let (d, r, dis) = position(day, c, n);
        let surplus = (r + dis - d).max(0.0);
        let deficit = (d - r - dis).max(0.0);
        let kw = if a.is_buy() {
            traded_power(a, d, r, day.pw_max_kw[c]).min(deficit)
        } else if a.is_sell() {
            match cfg.sell_rule {
                SellRule::LiteralClamped => traded_power(a, d, r, day.pw_max_kw[c]).min(surplus),
                SellRule::Surplus => surplus,
            }
        } else {
            0.0
        };
        let bid = if a.is_utility() {
            ut[c] = if a.is_buy() { (kw * dt, 0.0) } else { (0.0, kw * dt) };
            None
        } else if kw > 0.0 {
            Some(P2pBid {
                side: if a.is_buy() { Role::Consumer } else { Role::Producer },
                kwh: kw * dt,
            })
        } else {
            None
        };
        world.bus.post(
            n,
            Message::Snapshot(ClusterSnapshot {
                cluster: c,
                supply_kw: r + dis,
                demand_kw: d,
                bid,
            }),
        );
    }
    let round = run_trading_round(k, n, smp, dt, &mut world.bus)?;
    for c in 0..k {
        let (d, r, dis) = position(day, c, n);
        let (ut_bought, ut_sold) = ut[c];
        let mix = dispatch_sources(d, r, dis, (round.received[c] + ut_bought) / dt);
        let exchange = Exchange {
            p2p_bought_kwh: round.received[c],
            p2p_sold_kwh: round.delivered[c],
            ut_bought_kwh: ut_bought,
            ut_sold_kwh: ut_sold,
        };
        let prices = Prices { dr: dr[c], smp };
        let cost = settle_and_cost(&mut world.ledgers[c], n, &mix, &exchange, prices, cfg.ut_multiplier, dt);
        out[c] = ClusterInterval {
            action: Some(actions[c]),
            mix,
            exchange,
            cost,
        };
    }
    Ok(())
}

/// One row of the step-level trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Interval index counted from the start of scenario day 0.
    pub interval: usize,
    pub cluster_id: usize,
    pub demand_kw: f64,
    pub res_kw: f64,
    pub ev_kw: f64,
    pub grid_kw: f64,
    /// Energy bought on either channel.
    pub p2p_buy_kwh: f64,
    /// Energy sold on either channel.
    pub p2p_sell_kwh: f64,
    pub cost_usd: f64,
    pub baseline_cost_usd: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// State of the next interval; on the final step the last interval's
    /// state is repeated and `done` is set.
    pub state: MarketState,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub learner: Vec<ClusterInterval>,
    pub baseline: Vec<ClusterInterval>,
}

/// Environment for one day of one scenario.
#[derive(Debug, Clone)]
pub struct Env {
    scenario: Arc<Scenario>,
    day: usize,
    horizon: usize,
    n: usize,
    learner: World,
    baseline: World,
    trace: Option<Vec<StepRecord>>,
}

impl Env {
    /// Generates the scenario for `config` and returns the environment at interval 0.
    pub fn reset(config: &EpisodeConfig) -> Result<(Env, MarketState)> {
        config.validate()?;
        let scenario = Arc::new(Scenario::generate(&config.scenario, config.seed, config.day, 1)?);
        let mut env = Env::new(scenario, config.horizon)?;
        let state = env.reset_day(config.day)?;
        Ok((env, state))
    }

    pub fn new(scenario: Arc<Scenario>, horizon: usize) -> Result<Env> {
        validate_horizon(horizon)?;
        let day = scenario.first_day();
        let month = &scenario.day(day)?.month_start_kwh;
        Ok(Env {
            learner: World::new(month, false),
            baseline: World::new(month, false),
            scenario,
            day,
            horizon,
            n: 0,
            trace: None,
        })
    }

    /// Records step rows and the learner world's protocol messages.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
        self.learner.bus = MessageBus::with_trace();
    }

    /// Restarts on scenario day `day`, resuming its month-to-date consumption.
    pub fn reset_day(&mut self, day: usize) -> Result<MarketState> {
        let month = self.scenario.day(day)?.month_start_kwh.clone();
        let trace = self.trace.is_some();
        self.day = day;
        self.n = 0;
        self.learner = World::new(&month, trace);
        self.baseline = World::new(&month, false);
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        self.state_at(0)
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn clusters(&self) -> usize {
        self.scenario.clusters()
    }

    pub fn interval(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.n >= self.horizon
    }

    pub fn trajectory(&self) -> &DayTrajectory {
        // The day was validated in `reset_day`.
        self.scenario.day(self.day).expect("current day is generated")
    }

    fn dr_rates(&self, n: usize) -> Result<Vec<f64>> {
        let t = TimeOfDay::at_interval_end(n, 10.0);
        self.learner
            .ledgers
            .iter()
            .map(|l| self.scenario.tariff.effective_dr_rate(t, l.monthly_kwh()))
            .collect()
    }

    fn state_at(&self, n: usize) -> Result<MarketState> {
        let day = self.trajectory();
        let k = self.clusters();
        let demand: Vec<f64> = (0..k).map(|c| day.demand_kw[c][n]).collect();
        let supply: Vec<f64> = (0..k).map(|c| day.supply_kw(c, n)).collect();
        let dr = self.dr_rates(n)?;
        let mean_dr = dr.iter().sum::<f64>() / k as f64;
        Ok(MarketState::new(&demand, &supply, mean_dr, day.smp[n]))
    }

    /// Actions the rule-based baseline takes at the current interval.
    pub fn baseline_actions(&self) -> Vec<TradeAction> {
        let day = self.trajectory();
        let n = self.n.min(self.horizon - 1);
        (0..self.clusters())
            .map(|c| {
                let (d, r, dis) = position(day, c, n);
                baseline_policy((r + dis - d).max(0.0), (d - r - dis).max(0.0))
            })
            .collect()
    }

    pub fn step(&mut self, actions: &[TradeAction]) -> Result<StepOutcome> {
        let k = self.clusters();
        if actions.len() != k {
            return Err(Error::Contract(format!("expected {k} actions, got {}", actions.len())));
        }
        if self.is_done() {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let n = self.n;
        let dr = self.dr_rates(n)?;
        let baseline_actions = self.baseline_actions();
        let scenario = Arc::clone(&self.scenario);
        let day = scenario.day(self.day)?;
        let mut learner = vec![ClusterInterval::default(); k];
        let mut baseline = vec![ClusterInterval::default(); k];
        advance_world(&mut self.learner, &scenario.config, day, n, actions, &dr, &mut learner)?;
        advance_world(&mut self.baseline, &scenario.config, day, n, &baseline_actions, &dr, &mut baseline)?;

        let rewards: Vec<f64> = learner
            .iter()
            .zip(&baseline)
            .map(|(l, b)| if b.cost > l.cost { 1.0 } else { -1.0 })
            .collect();
        if let Some(trace) = self.trace.as_mut() {
            for c in 0..k {
                let l = &learner[c];
                trace.push(StepRecord {
                    interval: self.day * INTERVALS_PER_DAY + n,
                    cluster_id: c,
                    demand_kw: day.demand_kw[c][n],
                    res_kw: day.res_kw[c][n],
                    ev_kw: day.ev_kw[c][n],
                    grid_kw: l.mix.grid,
                    p2p_buy_kwh: l.exchange.p2p_bought_kwh + l.exchange.ut_bought_kwh,
                    p2p_sell_kwh: l.exchange.p2p_sold_kwh + l.exchange.ut_sold_kwh,
                    cost_usd: l.cost,
                    baseline_cost_usd: baseline[c].cost,
                    reward: rewards[c],
                });
            }
        }
        self.n += 1;
        let done = self.is_done();
        let state = self.state_at(if done { n } else { self.n })?;
        Ok(StepOutcome {
            state,
            rewards,
            done,
            learner,
            baseline,
        })
    }

    /// Accumulated episode cost per cluster, learner world.
    pub fn learner_costs(&self) -> Vec<f64> {
        self.learner.total_costs()
    }

    pub fn baseline_costs(&self) -> Vec<f64> {
        self.baseline.total_costs()
    }

    pub fn learner_ledgers(&self) -> &[ClusterCostLedger] {
        &self.learner.ledgers
    }

    pub fn step_trace(&self) -> &[StepRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn protocol_trace(&self) -> &[TraceRecord] {
        self.learner.bus.trace()
    }

    pub fn write_step_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_step_trace_csv(self.step_trace(), writer)
    }
}

/// Writes `interval,cluster_id,demand_kw,res_kw,ev_kw,grid_kw,p2p_buy_kwh,p2p_sell_kwh,cost_usd,baseline_cost_usd,reward`.
pub fn write_step_trace_csv<W: Write>(records: &[StepRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record([
            "interval",
            "cluster_id",
            "demand_kw",
            "res_kw",
            "ev_kw",
            "grid_kw",
            "p2p_buy_kwh",
            "p2p_sell_kwh",
            "cost_usd",
            "baseline_cost_usd",
            "reward",
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<step trace>", e))?;
    Ok(())
}
