use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{scale_state, Encoder, QArch, QNet};
use super::replay::{ReplayBuffer, Transition};
use super::{decay_epsilon, uniform_index, Hyperparams};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore, Tape};

/// Uniform action with probability `epsilon`, else the first maximiser of `q`.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        uniform_index(rng, q.len())
    } else {
        argmax(q)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn row_max(q: &[f64], actions: usize) -> Vec<f64> {
    q.chunks(actions).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Bootstrapped targets `r + γ·max Q'` (just `r` on terminal steps).
fn targets(batch: &[&Transition], next_max: &[f64], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .zip(next_max)
        .map(|(t, &m)| if t.done { t.reward } else { t.reward + gamma * m })
        .collect()
}

fn stack<'t>(rows: impl Iterator<Item = &'t Vec<f64>>) -> Vec<f64> {
    rows.flat_map(|r| r.iter().copied()).collect()
}

/// One squared-error step on single transitions; the recurrent state is zero.
fn dqn_step(
    net: &QNet,
    online: &mut ParamStore,
    target: Option<&ParamStore>,
    adam: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("Q update on an empty batch".into()));
    }
    let n = batch.len();
    let y = {
        let tparams = target.unwrap_or(online);
        let mut t = Tape::new();
        let (q, _) = net.step(&mut t, tparams, stack(batch.iter().map(|x| &x.next_state)), n, None)?;
        targets(batch, &row_max(t.value(q), net.actions), gamma)
    };
    let (loss, grads) = {
        let mut t = Tape::new();
        let (q, _) = net.step(&mut t, online, stack(batch.iter().map(|x| &x.state)), n, None)?;
        let actions: Vec<usize> = batch.iter().map(|x| x.action).collect();
        let qa = t.gather(q, &actions)?;
        let yv = t.input(n, 1, y)?;
        let d = t.sub(qa, yv)?;
        let sq = t.mul(d, d)?;
        let loss = t.mean(sq);
        let value = t.scalar(loss);
        (value, t.backward(loss)?.for_store(online))
    };
    adam.step(online, &grads)?;
    Ok(loss)
}

fn check_window(w: &[&Transition], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::Contract(format!("sequence of length {} in a batch of length {len}", w.len())));
    }
    if w.iter().any(|t| t.episode != w[0].episode) || w[..len - 1].iter().any(|t| t.done) {
        return Err(Error::Contract("sequence crosses an episode boundary".into()));
    }
    Ok(())
}

/// Unrolls from zero state through `burn_in` steps without loss, then
/// averages the squared error over the remaining steps of every window.
fn drqn_step(
    net: &QNet,
    online: &mut ParamStore,
    target: Option<&ParamStore>,
    adam: &mut Adam,
    windows: &[Vec<&Transition>],
    burn_in: usize,
    gamma: f64,
) -> Result<f64> {
    let len = windows.first().map_or(0, Vec::len);
    if windows.is_empty() || len == 0 {
        return Err(Error::Contract("sequence update on an empty batch".into()));
    }
    if burn_in >= len {
        return Err(Error::Contract(format!("burn-in {burn_in} leaves no trained steps in length {len}")));
    }
    for w in windows {
        check_window(w, len)?;
    }
    let n = windows.len();
    let at = |t: usize| -> Vec<&Transition> { windows.iter().map(|w| w[t]).collect() };
    let ys: Vec<Vec<f64>> = {
        let tparams = target.unwrap_or(online);
        let mut tape = Tape::new();
        let next: Vec<Vec<f64>> = (0..len).map(|t| stack(at(t).into_iter().map(|x| &x.next_state))).collect();
        let qs = net.unroll(&mut tape, tparams, next, n)?;
        (0..len)
            .map(|t| targets(&at(t), &row_max(tape.value(qs[t]), net.actions), gamma))
            .collect()
    };
    let (loss, grads) = {
        let mut tape = Tape::new();
        let xs: Vec<Vec<f64>> = (0..len).map(|t| stack(at(t).into_iter().map(|x| &x.state))).collect();
        let qs = net.unroll(&mut tape, online, xs, n)?;
        let mut total = None;
        for t in burn_in..len {
            let actions: Vec<usize> = at(t).iter().map(|x| x.action).collect();
            let qa = tape.gather(qs[t], &actions)?;
            let yv = tape.input(n, 1, ys[t].clone())?;
            let d = tape.sub(qa, yv)?;
            let sq = tape.mul(d, d)?;
            let s = tape.sum(sq);
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let loss = tape.scale(total.expect("at least one trained step"), 1.0 / (n * (len - burn_in)) as f64);
        let value = tape.scalar(loss);
        (value, tape.backward(loss)?.for_store(online))
    };
    adam.step(online, &grads)?;
    Ok(loss)
}

/// Value-based learner with replay, ε-greedy acting and an optional
/// periodically synced target network.
#[derive(Debug, Clone)]
pub struct QAgent {
    pub net: QNet,
    pub online: ParamStore,
    pub target: Option<ParamStore>,
    pub adam: Adam,
    pub buffer: ReplayBuffer,
    pub hp: Hyperparams,
    epsilon: f64,
    rng: ChaCha8Rng,
    updates: u64,
    steps: u64,
    episode: u64,
    carry: Option<(Vec<f64>, Vec<f64>)>,
    pending: Option<(Vec<f64>, usize)>,
}

impl QAgent {
    pub fn new(arch: QArch, gcn: bool, hp: &Hyperparams, clusters: usize, actions: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut online = ParamStore::new();
        let gcn = gcn.then(|| (hp.gcn_hidden, hp.edge_weight(clusters)));
        let encoder = Encoder::build(&mut online, clusters, gcn, &mut rng)?;
        let net = QNet::build(&mut online, arch, encoder, hp.hidden, actions, &mut rng);
        Ok(QAgent {
            target: hp.target_net.then(|| online.clone()),
            adam: Adam::new(&online, AdamConfig::with_lr(hp.lr)),
            buffer: ReplayBuffer::new(hp.replay_capacity),
            net,
            online,
            hp: hp.clone(),
            epsilon: hp.epsilon,
            rng,
            updates: 0,
            steps: 0,
            episode: 0,
            carry: None,
            pending: None,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_recurrent(&self) -> bool {
        self.net.arch != QArch::Feedforward
    }

    pub fn begin_episode(&mut self) {
        self.carry = None;
        self.pending = None;
    }

    pub fn end_episode(&mut self) {
        self.epsilon = decay_epsilon(self.epsilon, self.hp.epsilon_decay, self.hp.epsilon_min);
        self.episode += 1;
        self.carry = None;
        self.pending = None;
    }

    /// Q-values of a raw state; recurrent nets advance their acting state.
    pub fn q_values(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        let x = scale_state(state);
        if x.len() != self.net.encoder.input_dim() {
            return Err(Error::Contract(format!(
                "state of length {} for a network expecting {}",
                x.len(),
                self.net.encoder.input_dim()
            )));
        }
        let mut t = Tape::new();
        let carry = match &self.carry {
            Some((h, c)) => {
                let w = h.len();
                Some((t.input(1, w, h.clone())?, t.input(1, w, c.clone())?))
            }
            None => None,
        };
        let (q, next) = self.net.step(&mut t, &self.online, x, 1, carry)?;
        let values = t.value(q).to_vec();
        self.carry = next.map(|(h, c)| (t.value(h).to_vec(), t.value(c).to_vec()));
        Ok(values)
    }

    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<usize> {
        let q = self.q_values(state)?;
        let eps = if explore { self.epsilon } else { 0.0 };
        let a = epsilon_greedy(&q, eps, &mut self.rng);
        self.pending = Some((scale_state(state), a));
        Ok(a)
    }

    pub fn observe(&mut self, reward: f64, next_state: &[f64], done: bool) -> Result<Option<f64>> {
        let (state, action) = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract("observe called without a preceding act".into()))?;
        self.buffer.push(Transition {
            state,
            action,
            reward,
            next_state: scale_state(next_state),
            done,
            episode: self.episode,
        });
        self.steps += 1;
        let ready = self.buffer.len() >= self.hp.batch_size.max(self.hp.seq_len);
        if ready && self.steps % self.hp.train_every as u64 == 0 {
            return self.train_step().map(Some);
        }
        Ok(None)
    }

    /// One update from a sampled batch (windows for recurrent nets).
    pub fn train_step(&mut self) -> Result<f64> {
        let loss = if self.is_recurrent() {
            let windows = self.buffer.sample_sequences(self.hp.sequence_batch(), self.hp.seq_len, &mut self.rng)?;
            drqn_step(
                &self.net,
                &mut self.online,
                self.target.as_ref(),
                &mut self.adam,
                &windows,
                self.hp.burn_in,
                self.hp.gamma,
            )?
        } else {
            let batch = self.buffer.sample(self.hp.batch_size, &mut self.rng)?;
            dqn_step(&self.net, &mut self.online, self.target.as_ref(), &mut self.adam, &batch, self.hp.gamma)?
        };
        self.after_update();
        Ok(loss)
    }

    /// Squared-error update on the given transitions; returns the loss
    /// before the step.
    pub fn dqn_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = dqn_step(&self.net, &mut self.online, self.target.as_ref(), &mut self.adam, &refs, self.hp.gamma)?;
        self.after_update();
        Ok(loss)
    }

    /// Sequence update with the configured burn-in.
    pub fn drqn_update(&mut self, windows: &[Vec<Transition>]) -> Result<f64> {
        let refs: Vec<Vec<&Transition>> = windows.iter().map(|w| w.iter().collect()).collect();
        let loss = drqn_step(
            &self.net,
            &mut self.online,
            self.target.as_ref(),
            &mut self.adam,
            &refs,
            self.hp.burn_in,
            self.hp.gamma,
        )?;
        self.after_update();
        Ok(loss)
    }

    fn after_update(&mut self) {
        self.updates += 1;
        if self.updates % self.hp.target_sync == 0 {
            self.sync_target();
        }
    }

    pub fn sync_target(&mut self) {
        if let Some(t) = &mut self.target {
            t.copy_from(&self.online).expect("target mirrors the online layout");
        }
    }

    pub fn load_params(&mut self, params: &ParamStore) -> Result<()> {
        self.online.copy_from(params)?;
        self.sync_target();
        Ok(())
    }
}
