use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, Hyperparams, Variant};
use crate::env::{derive_seed, ActionSpace, Env, Scenario, StepOutcome, StepRecord, TradeAction};
use crate::error::{Error, Result};

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub agent_id: usize,
    pub avg_reward: f64,
    pub epsilon: f64,
    /// Mean loss of the updates run during the epoch; empty if none ran.
    pub loss: Option<f64>,
}

pub const CURVE_HEADER: [&str; 5] = ["epoch", "agent_id", "avg_reward", "epsilon", "loss"];

/// Builds one agent per cluster with independent seeds.
pub fn build_agents(variant: Variant, hp: &Hyperparams, clusters: usize, seed: u64) -> Result<Vec<Agent>> {
    (0..clusters)
        .map(|i| Agent::new(variant, hp, clusters, derive_seed(seed, &[0xA6E7, i as u64])))
        .collect()
}

fn to_actions(space: ActionSpace, idx: &[usize]) -> Result<Vec<TradeAction>> {
    idx.iter().map(|&i| space.action(i)).collect()
}

/// Trains `agents` for `epochs` one-day episodes cycling through `days`.
pub fn train_agents(
    scenario: &Arc<Scenario>,
    agents: &mut [Agent],
    space: ActionSpace,
    epochs: usize,
    days: Range<usize>,
    horizon: usize,
) -> Result<Vec<CurveRow>> {
    if days.is_empty() {
        return Err(Error::Config("the training pool has no days".into()));
    }
    let mut env = Env::new(scenario.clone(), horizon)?;
    let k = env.clusters();
    if agents.len() != k {
        return Err(Error::Contract(format!("{} agents for {k} clusters", agents.len())));
    }
    let mut curve = Vec::with_capacity(epochs * k);
    let mut idx = vec![0usize; k];
    for epoch in 0..epochs {
        let day = days.start + epoch % days.len();
        let mut state = env.reset_day(day)?;
        agents.iter_mut().for_each(Agent::begin_episode);
        let mut reward_sum = vec![0.0; k];
        let mut loss_sum = vec![0.0; k];
        let mut loss_n = vec![0usize; k];
        loop {
            for (i, a) in agents.iter_mut().enumerate() {
                idx[i] = a.act(state.as_slice(), true)?;
            }
            let out = env.step(&to_actions(space, &idx)?)?;
            for (i, a) in agents.iter_mut().enumerate() {
                reward_sum[i] += out.rewards[i];
                if let Some(l) = a.observe(out.rewards[i], out.state.as_slice(), out.done)? {
                    if !l.is_finite() {
                        return Err(Error::Numeric(format!(
                            "loss became {l} for agent {i} at epoch {epoch}, interval {}",
                            env.interval()
                        )));
                    }
                    loss_sum[i] += l;
                    loss_n[i] += 1;
                }
            }
            state = out.state;
            if out.done {
                break;
            }
        }
        for (i, a) in agents.iter_mut().enumerate() {
            a.end_episode();
            curve.push(CurveRow {
                epoch,
                agent_id: i,
                avg_reward: reward_sum[i] / horizon as f64,
                epsilon: a.epsilon(),
                loss: (loss_n[i] > 0).then(|| loss_sum[i] / loss_n[i] as f64),
            });
        }
    }
    Ok(curve)
}

/// Per-cluster totals over the evaluation days.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub cost: Vec<f64>,
    pub baseline_cost: Vec<f64>,
    /// Energy drawn from the grid for load, kWh.
    pub grid_kwh: Vec<f64>,
    /// Energy served to load from any source, kWh.
    pub consumption_kwh: Vec<f64>,
    pub bought_kwh: Vec<f64>,
    pub sold_kwh: Vec<f64>,
    pub avg_reward: Vec<f64>,
}

impl Evaluation {
    pub fn new(k: usize) -> Self {
        let z = vec![0.0; k];
        Evaluation {
            cost: z.clone(),
            baseline_cost: z.clone(),
            grid_kwh: z.clone(),
            consumption_kwh: z.clone(),
            bought_kwh: z.clone(),
            sold_kwh: z.clone(),
            avg_reward: z,
        }
    }

    fn add(&mut self, out: &StepOutcome, dt: f64) {
        for (c, l) in out.learner.iter().enumerate() {
            self.cost[c] += l.cost;
            self.baseline_cost[c] += out.baseline[c].cost;
            self.grid_kwh[c] += l.mix.grid * dt;
            self.consumption_kwh[c] += l.mix.served() * dt;
            self.bought_kwh[c] += l.exchange.p2p_bought_kwh + l.exchange.ut_bought_kwh;
            self.sold_kwh[c] += l.exchange.p2p_sold_kwh + l.exchange.ut_sold_kwh;
            self.avg_reward[c] += out.rewards[c];
        }
    }

    pub fn clusters(&self) -> usize {
        self.cost.len()
    }

    /// Element-wise mean of several evaluations of the same clusters.
    pub fn mean(all: &[Evaluation]) -> Result<Evaluation> {
        let k = all.first().map_or(0, Evaluation::clusters);
        if all.is_empty() || all.iter().any(|e| e.clusters() != k) {
            return Err(Error::Contract("evaluations to average must be non-empty and agree in size".into()));
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Evaluation) -> &Vec<f64>| -> Vec<f64> {
            (0..k).map(|c| all.iter().map(|e| f(e)[c]).sum::<f64>() / n).collect()
        };
        Ok(Evaluation {
            cost: avg(|e| &e.cost),
            baseline_cost: avg(|e| &e.baseline_cost),
            grid_kwh: avg(|e| &e.grid_kwh),
            consumption_kwh: avg(|e| &e.consumption_kwh),
            bought_kwh: avg(|e| &e.bought_kwh),
            sold_kwh: avg(|e| &e.sold_kwh),
            avg_reward: avg(|e| &e.avg_reward),
        })
    }

    /// Saving of the learner against the baseline per cluster, in percent.
    pub fn saving_percent(&self) -> Vec<f64> {
        self.cost
            .iter()
            .zip(&self.baseline_cost)
            .map(|(&v, &b)| saving_percent(b, v))
            .collect()
    }
}

/// `(baseline − variant) / baseline · 100`.
pub fn saving_percent(baseline: f64, variant: f64) -> f64 {
    (baseline - variant) / baseline * 100.0
}

/// Greedy evaluation over `days`. Without agents the learner world
/// follows the baseline rule.
pub fn evaluate(
    scenario: &Arc<Scenario>,
    agents: Option<&mut [Agent]>,
    space: ActionSpace,
    days: Range<usize>,
    horizon: usize,
) -> Result<Evaluation> {
    Ok(evaluate_traced(scenario, agents, space, days, horizon, false)?.0)
}

/// [`evaluate`], also returning the step trace of every day when `trace` is set.
pub fn evaluate_traced(
    scenario: &Arc<Scenario>,
    mut agents: Option<&mut [Agent]>,
    space: ActionSpace,
    days: Range<usize>,
    horizon: usize,
    trace: bool,
) -> Result<(Evaluation, Vec<StepRecord>)> {
    let mut env = Env::new(scenario.clone(), horizon)?;
    if trace {
        env.enable_trace();
    }
    let k = env.clusters();
    if let Some(a) = agents.as_deref() {
        if a.len() != k {
            return Err(Error::Contract(format!("{} agents for {k} clusters", a.len())));
        }
    }
    let mut ev = Evaluation::new(k);
    let mut records = Vec::new();
    let dt = crate::assets::INTERVAL_HOURS;
    let steps = (days.len() * horizon).max(1) as f64;
    let mut idx = vec![0usize; k];
    for day in days {
        let mut state = env.reset_day(day)?;
        if let Some(a) = agents.as_deref_mut() {
            a.iter_mut().for_each(Agent::begin_episode);
        }
        loop {
            let actions = match agents.as_deref_mut() {
                Some(a) => {
                    for (i, ag) in a.iter_mut().enumerate() {
                        idx[i] = ag.act(state.as_slice(), false)?;
                    }
                    to_actions(space, &idx)?
                }
                None => env.baseline_actions(),
            };
            let out = env.step(&actions)?;
            ev.add(&out, dt);
            state = out.state;
            if out.done {
                break;
            }
        }
        records.extend_from_slice(env.step_trace());
    }
    ev.avg_reward.iter_mut().for_each(|r| *r /= steps);
    Ok((ev, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScenarioConfig;

    fn small() -> Arc<Scenario> {
        let cfg = ScenarioConfig {
            clusters: 3,
            ..ScenarioConfig::default()
        };
        Arc::new(Scenario::generate(&cfg, 3, 0, 3).unwrap())
    }

    #[test]
    fn saving_arithmetic() {
        assert!((saving_percent(682.4, 641.5) - 5.99).abs() < 0.01);
        assert!((saving_percent(825.4, 602.5) - 27.00).abs() < 0.01);
        assert!((saving_percent(766.3, 193.2) - 74.78).abs() < 0.01);
    }

    #[test]
    fn baseline_evaluation_has_no_saving() {
        let sc = small();
        let ev = evaluate(&sc, None, ActionSpace::Res, 1..3, 144).unwrap();
        assert_eq!(ev.cost, ev.baseline_cost);
        assert!(ev.avg_reward.iter().all(|&r| r == -1.0));
        assert!(ev.consumption_kwh.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let sc = small();
        let hp = Hyperparams {
            batch_size: 16,
            update_interval: 32,
            ..Hyperparams::default()
        };
        for name in ["dqn", "n_drqn", "gcn_ppo"] {
            let v: Variant = name.parse().unwrap();
            let run = || {
                let mut agents = build_agents(v, &hp, 3, 5).unwrap();
                let curve = train_agents(&sc, &mut agents, v.action_space, 2, 0..2, 48).unwrap();
                let ev = evaluate(&sc, Some(&mut agents), v.action_space, 2..3, 48).unwrap();
                (curve, ev)
            };
            let (c1, e1) = run();
            let (c2, e2) = run();
            assert_eq!(c1, c2);
            assert_eq!(e1, e2);
            assert_eq!(c1.len(), 6);
            assert!(c1.iter().all(|r| r.avg_reward.abs() <= 1.0));
        }
    }

    #[test]
    fn agent_count_must_match() {
        let sc = small();
        let v: Variant = "dqn".parse().unwrap();
        let mut agents = build_agents(v, &Hyperparams::default(), 2, 0).unwrap();
        assert!(train_agents(&sc, &mut agents, v.action_space, 1, 0..1, 10).is_err());
        assert!(train_agents(&sc, &mut agents, v.action_space, 1, 0..0, 10).is_err());
    }
}
