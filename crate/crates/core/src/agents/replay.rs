use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub episode: u64,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Physical index of the oldest item once the buffer is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Item `i` in insertion order, oldest first.
    pub fn get(&self, i: usize) -> &Transition {
        &self.items[(self.head + i) % self.items.len()]
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() || n == 0 {
            return Err(Error::Contract("cannot sample an empty batch".into()));
        }
        Ok((0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }

    /// The `len` consecutive transitions starting at logical index `start`.
    /// Fails if the window leaves the buffer or spans two episodes.
    pub fn sequence(&self, start: usize, len: usize) -> Result<Vec<&Transition>> {
        if len == 0 || start + len > self.items.len() {
            return Err(Error::Contract(format!(
                "window {start}..{} outside buffer of {}",
                start + len,
                self.items.len()
            )));
        }
        let seq: Vec<&Transition> = (start..start + len).map(|i| self.get(i)).collect();
        let ep = seq[0].episode;
        if seq.iter().any(|t| t.episode != ep) || seq[..len - 1].iter().any(|t| t.done) {
            return Err(Error::Contract(format!("window at {start} crosses an episode boundary")));
        }
        Ok(seq)
    }

    /// `n` windows of `len` steps, each inside a single episode.
    pub fn sample_sequences<R: Rng + ?Sized>(&self, n: usize, len: usize, rng: &mut R) -> Result<Vec<Vec<&Transition>>> {
        if n == 0 || len == 0 || self.items.len() < len {
            return Err(Error::Contract(format!(
                "cannot draw {n} windows of {len} from {} transitions",
                self.items.len()
            )));
        }
        let starts = self.items.len() - len + 1;
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::Contract(format!("no {len}-step window fits inside one episode")));
            }
            if let Ok(seq) = self.sequence(rng.gen_range(0..starts), len) {
                out.push(seq);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn t(episode: u64, step: usize, done: bool) -> Transition {
        Transition {
            state: vec![step as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![step as f64 + 1.0],
            done,
            episode,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(0, i, false));
        }
        assert_eq!(b.len(), 3);
        let order: Vec<f64> = (0..3).map(|i| b.get(i).state[0]).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn windows_respect_episodes() {
        let mut b = ReplayBuffer::new(100);
        for ep in 0..3 {
            for s in 0..5 {
                b.push(t(ep, s, s == 4));
            }
        }
        assert!(b.sequence(0, 5).is_ok());
        assert!(matches!(b.sequence(3, 4), Err(Error::Contract(_))));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for seq in b.sample_sequences(50, 5, &mut rng).unwrap() {
            assert!(seq.iter().all(|x| x.episode == seq[0].episode));
        }
        assert!(b.sample_sequences(1, 6, &mut rng).is_err());
        assert!(ReplayBuffer::new(4).sample(1, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn size_bounded_and_samples_stored(cap in 1usize..40, pushes in 0usize..120, seed in 0u64..1000) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..pushes {
                b.push(t((i / 7) as u64, i % 7, i % 7 == 6));
                prop_assert!(b.len() <= cap);
            }
            if pushes > 0 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let lo = pushes.saturating_sub(cap) as f64;
                for x in b.sample(20, &mut rng).unwrap() {
                    prop_assert!(x.state[0] >= 0.0);
                    let idx = (x.episode * 7) as f64 + x.state[0];
                    prop_assert!(idx >= lo && idx < pushes as f64);
                }
                if let Ok(seqs) = b.sample_sequences(5, 3, &mut rng) {
                    for s in seqs {
                        prop_assert!(s.iter().all(|x| x.episode == s[0].episode));
                        prop_assert!(s[..2].iter().all(|x| !x.done));
                    }
                }
            }
        }
    }
}
