use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{scale_state, Encoder, Mlp};
use super::q::argmax;
use super::Hyperparams;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore, Tape};

/// Per-step clipped objective `min(r·Â, clip(r, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Generalised advantage estimates and the matching value targets.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next * live - values[t];
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / sd;
    }
}

/// On-policy experience gathered under the current (old) policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    /// Scaled states, back to back.
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Critic value of the state after the last step (0 if it ended an episode).
    pub last_value: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Rollout::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses {
    /// Negated clipped objective of the last epoch.
    pub policy: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: Mlp,
    pub actor_params: ParamStore,
    pub critic: Mlp,
    pub critic_params: ParamStore,
    pub actor_adam: Adam,
    pub critic_adam: Adam,
    pub rollout: Rollout,
    pub hp: Hyperparams,
    rng: ChaCha8Rng,
    pending: Option<(Vec<f64>, usize, f64, f64)>,
}

impl PpoAgent {
    pub fn new(gcn: bool, hp: &Hyperparams, clusters: usize, actions: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = gcn.then(|| (hp.gcn_hidden, hp.edge_weight(clusters)));
        let widths = [hp.hidden, hp.hidden];
        let mut actor_params = ParamStore::new();
        let enc = Encoder::build(&mut actor_params, clusters, gcn, &mut rng)?;
        let actor = Mlp::build(&mut actor_params, enc, &widths, actions, &mut rng);
        let mut critic_params = ParamStore::new();
        let enc = Encoder::build(&mut critic_params, clusters, gcn, &mut rng)?;
        let critic = Mlp::build(&mut critic_params, enc, &widths, 1, &mut rng);
        Ok(PpoAgent {
            actor_adam: Adam::new(&actor_params, AdamConfig::with_lr(hp.actor_lr)),
            critic_adam: Adam::new(&critic_params, AdamConfig::with_lr(hp.critic_lr)),
            actor,
            actor_params,
            critic,
            critic_params,
            rollout: Rollout::default(),
            hp: hp.clone(),
            rng,
            pending: None,
        })
    }

    fn input_dim(&self) -> usize {
        self.actor.encoder.input_dim()
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "state of length {} for a network expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Log-probabilities of every action for a batch of scaled states.
    pub fn log_policy(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        let n = scaled.len() / self.input_dim();
        let mut t = Tape::new();
        let logits = self.actor.forward(&mut t, &self.actor_params, scaled.to_vec(), n)?;
        let lp = t.log_softmax(logits);
        Ok(t.value(lp).to_vec())
    }

    pub fn value(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        let n = scaled.len() / self.input_dim();
        let mut t = Tape::new();
        let v = self.critic.forward(&mut t, &self.critic_params, scaled.to_vec(), n)?;
        Ok(t.value(v).to_vec())
    }

    pub fn begin_episode(&mut self) {
        self.pending = None;
    }

    pub fn end_episode(&mut self) {
        self.pending = None;
    }

    /// Samples from the policy when `explore`, else takes its mode.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<usize> {
        let x = scale_state(state);
        self.check_state(&x)?;
        let lp = self.log_policy(&x)?;
        let a = if explore {
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (i, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            argmax(&lp)
        };
        let v = self.value(&x)?[0];
        self.pending = Some((x, a, lp[a], v));
        Ok(a)
    }

    pub fn observe(&mut self, reward: f64, next_state: &[f64], done: bool) -> Result<Option<f64>> {
        let (x, a, lp, v) = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract("observe called without a preceding act".into()))?;
        let r = &mut self.rollout;
        r.states.extend_from_slice(&x);
        r.actions.push(a);
        r.rewards.push(reward);
        r.dones.push(done);
        r.log_probs.push(lp);
        r.values.push(v);
        if self.rollout.len() < self.hp.update_interval {
            return Ok(None);
        }
        self.rollout.last_value = if done { 0.0 } else { self.value(&scale_state(next_state))?[0] };
        let rollout = std::mem::take(&mut self.rollout);
        let losses = self.ppo_update(&rollout)?;
        Ok(Some(losses.policy + losses.value))
    }

    /// Probability ratios π_θ/π_θ_old of the rollout's actions.
    pub fn policy_ratios(&self, rollout: &Rollout) -> Result<Vec<f64>> {
        let lp = self.log_policy(&rollout.states)?;
        let k = self.actor.head().outputs;
        Ok(rollout
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| (lp[i * k + a] - rollout.log_probs[i]).exp())
            .collect())
    }

    /// `ppo_epochs` full-batch passes of the clipped objective and the
    /// critic regression.
    pub fn ppo_update(&mut self, rollout: &Rollout) -> Result<PpoLosses> {
        let n = rollout.len();
        if n < self.hp.update_interval || n == 0 {
            return Err(Error::Contract(format!(
                "rollout of {n} steps is shorter than the update interval {}",
                self.hp.update_interval
            )));
        }
        if rollout.states.len() != n * self.input_dim() {
            return Err(Error::Contract("rollout states do not match its length".into()));
        }
        let (mut adv, returns) = compute_gae(
            &rollout.rewards,
            &rollout.values,
            &rollout.dones,
            rollout.last_value,
            self.hp.ppo_gamma,
            self.hp.gae_lambda,
        );
        if self.hp.normalize_advantages {
            normalize_advantages(&mut adv);
        }
        let clip = self.hp.clip;
        let mut losses = PpoLosses {
            policy: 0.0,
            value: 0.0,
        };
        for _ in 0..self.hp.ppo_epochs {
            let (policy, grads) = {
                let mut t = Tape::new();
                let logits = self.actor.forward(&mut t, &self.actor_params, rollout.states.clone(), n)?;
                let lp = t.log_softmax(logits);
                let la = t.gather(lp, &rollout.actions)?;
                let old = t.input(n, 1, rollout.log_probs.clone())?;
                let diff = t.sub(la, old)?;
                let ratio = t.exp(diff);
                let a = t.input(n, 1, adv.clone())?;
                let s1 = t.mul(ratio, a)?;
                let clipped = t.clip(ratio, 1.0 - clip, 1.0 + clip);
                let s2 = t.mul(clipped, a)?;
                let m = t.min(s1, s2)?;
                let obj = t.mean(m);
                let loss = t.scale(obj, -1.0);
                let value = t.scalar(loss);
                (value, t.backward(loss)?.for_store(&self.actor_params))
            };
            self.actor_adam.step(&mut self.actor_params, &grads)?;
            let (value, grads) = {
                let mut t = Tape::new();
                let v = self.critic.forward(&mut t, &self.critic_params, rollout.states.clone(), n)?;
                let r = t.input(n, 1, returns.clone())?;
                let d = t.sub(v, r)?;
                let sq = t.mul(d, d)?;
                let loss = t.mean(sq);
                let value = t.scalar(loss);
                (value, t.backward(loss)?.for_store(&self.critic_params))
            };
            self.critic_adam.step(&mut self.critic_params, &grads)?;
            losses = PpoLosses { policy, value };
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn surrogate_fixtures() {
        assert!((clipped_surrogate(1.3, 2.0, 0.1) - 2.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.7, -1.0, 0.1) + 0.9).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, 3.0, 0.1), 3.0);
    }

    #[test]
    fn gae_hand_values() {
        // λ = 1 gives discounted returns minus values.
        let (adv, ret) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, true], 5.0, 0.5, 1.0);
        assert_eq!(ret, vec![1.5, 1.0]);
        assert_eq!(adv, ret);
        // λ = 0 gives one-step TD errors.
        let (adv, _) = compute_gae(&[1.0, 0.0], &[0.5, 2.0], &[false, false], 4.0, 0.5, 0.0);
        assert_eq!(adv, vec![1.0 + 0.5 * 2.0 - 0.5, 0.5 * 4.0 - 2.0]);
    }

    fn rollout(agent: &mut PpoAgent, n: usize) -> Rollout {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..n {
            let s: Vec<f64> = vec![rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 0.12, 0.09];
            let a = agent.act(&s, true).unwrap();
            let (x, a2, lp, v) = agent.pending.take().unwrap();
            assert_eq!(a, a2);
            let r = &mut agent.rollout;
            r.states.extend_from_slice(&x);
            r.actions.push(a);
            r.rewards.push(if a == 0 { 1.0 } else { -1.0 });
            r.dones.push(i % 16 == 15);
            r.log_probs.push(lp);
            r.values.push(v);
        }
        std::mem::take(&mut agent.rollout)
    }

    #[test]
    fn first_pass_ratios_are_one() {
        let hp = Hyperparams {
            update_interval: 32,
            ..Hyperparams::default()
        };
        let mut a = PpoAgent::new(false, &hp, 1, 3, 3).unwrap();
        let ro = rollout(&mut a, 32);
        for r in a.policy_ratios(&ro).unwrap() {
            assert!((r - 1.0).abs() < 1e-12);
        }
        let before = a.actor_params.flatten();
        let l = a.ppo_update(&ro).unwrap();
        assert!(l.policy.is_finite() && l.value >= 0.0);
        assert_ne!(before, a.actor_params.flatten());
    }

    #[test]
    fn short_rollout_is_rejected() {
        let hp = Hyperparams {
            update_interval: 32,
            ..Hyperparams::default()
        };
        let mut a = PpoAgent::new(true, &hp, 1, 5, 3).unwrap();
        let ro = rollout(&mut a, 31);
        assert!(matches!(a.ppo_update(&ro), Err(Error::Contract(_))));
    }

    #[test]
    fn learns_a_fixed_preference() {
        let hp = Hyperparams {
            update_interval: 64,
            actor_lr: 0.01,
            ..Hyperparams::default()
        };
        let mut a = PpoAgent::new(false, &hp, 1, 3, 9).unwrap();
        let s = [1.0, 2.0, 0.12, 0.09];
        for _ in 0..20 {
            for i in 0..64 {
                let act = a.act(&s, true).unwrap();
                a.observe(if act == 2 { 1.0 } else { -1.0 }, &s, i == 63).unwrap();
            }
        }
        assert_eq!(a.act(&s, false).unwrap(), 2);
        assert!(a.log_policy(&scale_state(&s)).unwrap()[2].exp() > 0.8);
    }

    proptest! {
        #[test]
        fn normalized_advantages_have_zero_mean(v in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let mut a = v.clone();
            normalize_advantages(&mut a);
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
        }

        #[test]
        fn surrogate_is_shift_sensitive_only_through_advantages(
            r in 0.5f64..1.5, adv in -5.0f64..5.0, c in 0.05f64..0.5
        ) {
            let s = clipped_surrogate(r, adv, c);
            prop_assert!(s <= r * adv + 1e-12);
            prop_assert!(s <= r.clamp(1.0 - c, 1.0 + c) * adv + 1e-12);
        }
    }
}
