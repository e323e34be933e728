//! Trading agents: DQN, DRQN, Bi-DRQN and PPO, each with an optional GCN
//! encoder over the cluster graph.

mod nets;
mod ppo;
mod q;
mod replay;

pub use nets::{
    gcn_encode, node_features, scale_state, Carry, Encoder, GcnEncoder, Mlp, QArch, QNet, NODE_FEATURES, POWER_SCALE,
    PRICE_SCALE,
};
pub use ppo::{clipped_surrogate, compute_gae, normalize_advantages, PpoAgent, PpoLosses, Rollout};
pub use q::{epsilon_greedy, QAgent};
pub use replay::{ReplayBuffer, Transition};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ActionSpace;
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub gcn_hidden: usize,
    /// Weight of every edge of the cluster graph; `None` gives `1/(K−1)`.
    pub gcn_edge_weight: Option<f64>,
    pub replay_capacity: usize,
    pub seq_len: usize,
    pub burn_in: usize,
    pub target_net: bool,
    pub target_sync: u64,
    /// Environment steps between gradient updates of a Q agent.
    pub train_every: usize,
    pub ppo_gamma: f64,
    pub update_interval: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub ppo_epochs: usize,
    pub normalize_advantages: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.95,
            epsilon: 0.1,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            batch_size: 128,
            lr: 0.005,
            hidden: 64,
            gcn_hidden: 8,
            gcn_edge_weight: None,
            replay_capacity: 10_000,
            seq_len: 8,
            burn_in: 4,
            target_net: true,
            target_sync: 200,
            train_every: 32,
            ppo_gamma: 0.99,
            update_interval: 128,
            actor_lr: 0.0005,
            critic_lr: 0.001,
            clip: 0.1,
            gae_lambda: 0.95,
            ppo_epochs: 3,
            normalize_advantages: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.ppo_gamma) {
            return bad("discount factors must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) || self.epsilon_min > self.epsilon || self.epsilon > 1.0 {
            return bad("exploration rates must satisfy 0 <= epsilon_min <= epsilon <= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad("epsilon_decay must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.gcn_hidden == 0 {
            return bad("batch_size, hidden and gcn_hidden must be positive");
        }
        if [self.lr, self.actor_lr, self.critic_lr].iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("learning rates must be positive");
        }
        if matches!(self.gcn_edge_weight, Some(w) if !(w > 0.0 && w.is_finite())) {
            return bad("gcn_edge_weight must be positive");
        }
        if self.replay_capacity == 0 || self.train_every == 0 || self.target_sync == 0 {
            return bad("replay_capacity, train_every and target_sync must be positive");
        }
        if self.seq_len == 0 || self.burn_in >= self.seq_len {
            return bad("burn_in must be shorter than seq_len");
        }
        if self.update_interval == 0 || self.ppo_epochs == 0 {
            return bad("update_interval and ppo_epochs must be positive");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("clip must lie in (0, 1) and gae_lambda in [0, 1]");
        }
        Ok(())
    }

    /// Windows per sequence update, so that one update reads
    /// `batch_size` transitions as with the feedforward net.
    pub fn sequence_batch(&self) -> usize {
        self.batch_size.div_ceil(self.seq_len)
    }

    /// Edge weight used for a graph of `k` clusters.
    pub fn edge_weight(&self, k: usize) -> f64 {
        self.gcn_edge_weight.unwrap_or(if k > 1 { 1.0 / (k - 1) as f64 } else { 1.0 })
    }
}

/// ε after one multiplicative decay, floored at `min`.
pub fn decay_epsilon(epsilon: f64, decay: f64, min: f64) -> f64 {
    (epsilon * decay).max(min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    Drqn,
    BiDrqn,
    Ppo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Dqn, Algorithm::Drqn, Algorithm::BiDrqn, Algorithm::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Drqn => "drqn",
            Algorithm::BiDrqn => "bi_drqn",
            Algorithm::Ppo => "ppo",
        }
    }

    fn q_arch(self) -> Option<QArch> {
        match self {
            Algorithm::Dqn => Some(QArch::Feedforward),
            Algorithm::Drqn => Some(QArch::Recurrent),
            Algorithm::BiDrqn => Some(QArch::Bidirectional),
            Algorithm::Ppo => None,
        }
    }
}

/// One trainable configuration, e.g. `gcn_n_bi_drqn`: optional `gcn_`
/// encoder, optional `n_` for the five-action space, then the algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub gcn: bool,
    pub action_space: ActionSpace,
}

impl Variant {
    pub fn new(algorithm: Algorithm, gcn: bool, action_space: ActionSpace) -> Self {
        Variant {
            algorithm,
            gcn,
            action_space,
        }
    }

    /// All sixteen variants in table order: plain before `n_`, GCN last.
    pub fn all() -> Vec<Variant> {
        let mut out = Vec::with_capacity(16);
        for gcn in [false, true] {
            for space in [ActionSpace::Res, ActionSpace::UtRes] {
                for a in Algorithm::ALL {
                    out.push(Variant::new(a, gcn, space));
                }
            }
        }
        out
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.gcn {
            f.write_str("gcn_")?;
        }
        if self.action_space == ActionSpace::UtRes {
            f.write_str("n_")?;
        }
        f.write_str(self.algorithm.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        let (gcn, rest) = match lower.strip_prefix("gcn_") {
            Some(r) => (true, r),
            None => (false, lower.as_str()),
        };
        let (space, rest) = match rest.strip_prefix("n_") {
            Some(r) => (ActionSpace::UtRes, r),
            None => (ActionSpace::Res, rest),
        };
        let algorithm = Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == rest)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))?;
        Ok(Variant::new(algorithm, gcn, space))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One cluster's learner.
#[derive(Debug, Clone)]
pub enum Agent {
    Q(Box<QAgent>),
    Ppo(Box<PpoAgent>),
}

impl Agent {
    pub fn new(variant: Variant, hp: &Hyperparams, clusters: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if clusters == 0 {
            return Err(Error::Config("an agent needs at least one cluster in its state".into()));
        }
        let actions = variant.action_space.len();
        Ok(match variant.algorithm.q_arch() {
            Some(arch) => Agent::Q(Box::new(QAgent::new(arch, variant.gcn, hp, clusters, actions, seed)?)),
            None => Agent::Ppo(Box::new(PpoAgent::new(variant.gcn, hp, clusters, actions, seed)?)),
        })
    }

    pub fn begin_episode(&mut self) {
        match self {
            Agent::Q(a) => a.begin_episode(),
            Agent::Ppo(a) => a.begin_episode(),
        }
    }

    /// Chooses an action index for a raw state vector. `explore` selects
    /// ε-greedy or sampling; otherwise the greedy action is taken.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<usize> {
        match self {
            Agent::Q(a) => a.act(state, explore),
            Agent::Ppo(a) => a.act(state, explore),
        }
    }

    /// Records the outcome of the last action and trains when due.
    /// Returns the training loss if an update ran.
    pub fn observe(&mut self, reward: f64, next_state: &[f64], done: bool) -> Result<Option<f64>> {
        match self {
            Agent::Q(a) => a.observe(reward, next_state, done),
            Agent::Ppo(a) => a.observe(reward, next_state, done),
        }
    }

    pub fn end_episode(&mut self) {
        match self {
            Agent::Q(a) => a.end_episode(),
            Agent::Ppo(a) => a.end_episode(),
        }
    }

    /// Current exploration rate; PPO reports 0.
    pub fn epsilon(&self) -> f64 {
        match self {
            Agent::Q(a) => a.epsilon(),
            Agent::Ppo(_) => 0.0,
        }
    }

    /// Writes `<stem>.bin/.json`; PPO writes `<stem>_actor` and `<stem>_critic`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        match self {
            Agent::Q(a) => save_checkpoint(&a.online, stem),
            Agent::Ppo(a) => {
                save_checkpoint(&a.actor_params, &suffixed(stem, "actor"))?;
                save_checkpoint(&a.critic_params, &suffixed(stem, "critic"))
            }
        }
    }

    pub fn load(&mut self, stem: &Path) -> Result<()> {
        match self {
            Agent::Q(a) => a.load_params(&load_checkpoint(stem)?),
            Agent::Ppo(a) => {
                a.actor_params.copy_from(&load_checkpoint(&suffixed(stem, "actor"))?)?;
                a.critic_params.copy_from(&load_checkpoint(&suffixed(stem, "critic"))?)
            }
        }
    }
}

fn suffixed(stem: &Path, part: &str) -> std::path::PathBuf {
    let name = stem.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    stem.with_file_name(format!("{name}_{part}"))
}

/// Uniform integer in `0..n` from `rng`; shared by the agents.
pub(crate) fn uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.gen_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
        let mut hp = Hyperparams::default();
        hp.gamma = 1.0;
        assert!(hp.validate().is_err());
        hp = Hyperparams::default();
        hp.epsilon_min = 0.2;
        assert!(hp.validate().is_err());
        hp = Hyperparams::default();
        hp.batch_size = 0;
        assert!(hp.validate().is_err());
        hp = Hyperparams::default();
        hp.burn_in = 8;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn epsilon_schedule() {
        assert!((decay_epsilon(0.1, 0.995, 0.01) - 0.0995).abs() < 1e-15);
        let mut e = 0.1;
        for _ in 0..2000 {
            e = decay_epsilon(e, 0.995, 0.01);
        }
        assert_eq!(e, 0.01);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        let v: Variant = "gcn_n_bi_drqn".parse().unwrap();
        assert_eq!(v, Variant::new(Algorithm::BiDrqn, true, ActionSpace::UtRes));
        assert!("n_sarsa".parse::<Variant>().is_err());
        assert_eq!(Variant::all().len(), 16);
    }

    #[test]
    fn edge_weight_default() {
        let hp = Hyperparams::default();
        assert!((hp.edge_weight(10) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(hp.edge_weight(1), 1.0);
    }

    #[test]
    fn checkpoint_round_trip_for_every_family() {
        let dir = tempfile::tempdir().unwrap();
        let hp = Hyperparams::default();
        for (i, name) in ["dqn", "gcn_n_drqn", "bi_drqn", "gcn_ppo"].iter().enumerate() {
            let v: Variant = name.parse().unwrap();
            let a = Agent::new(v, &hp, 3, 7).unwrap();
            let stem = dir.path().join(format!("agent_{i}"));
            a.save(&stem).unwrap();
            let mut b = Agent::new(v, &hp, 3, 8).unwrap();
            b.load(&stem).unwrap();
            let s = [1.0, 2.0, 3.0, 0.5, 0.5, 0.5, 0.12, 0.09];
            let (mut a, mut b) = (a, b);
            assert_eq!(a.act(&s, false).unwrap(), b.act(&s, false).unwrap());
        }
    }
}
