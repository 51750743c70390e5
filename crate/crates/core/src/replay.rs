//! Fixed-capacity uniform experience replay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Tensor,
    pub action: Tensor,
    pub reward: f64,
    pub next_state: Tensor,
    /// Genuine terminal state only; time-limit truncation stays `false`.
    pub done: bool,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    /// `[b, 1]`
    pub rewards: Tensor,
    pub next_states: Tensor,
    /// `[b, 1]`, 1.0 for terminal transitions.
    pub dones: Tensor,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let n = ts.len();
        Ok(Batch {
            states: Tensor::stack_rows(ts.iter().map(|t| &t.state))?,
            actions: Tensor::stack_rows(ts.iter().map(|t| &t.action))?,
            rewards: Tensor::matrix(n, 1, ts.iter().map(|t| t.reward).collect())?,
            next_states: Tensor::stack_rows(ts.iter().map(|t| &t.next_state))?,
            dones: Tensor::matrix(n, 1, ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect())?,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::usage("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for (what, tensor, want) in [
            ("state", &t.state, self.state_dim),
            ("next state", &t.next_state, self.state_dim),
            ("action", &t.action, self.action_dim),
        ] {
            if tensor.rank() != 1 || tensor.len() != want {
                return Err(Error::shape(format!("{what} has shape {:?}, buffer expects [{want}]", tensor.shape())));
            }
        }
        if !t.reward.is_finite() {
            return Err(Error::Numeric(format!("non-finite reward {}", t.reward)));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.cursor };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    fn indices(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if batch == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.storage.len() < batch {
            return Err(Error::NotReady { size: self.storage.len(), batch });
        }
        Ok((0..batch).map(|_| rng.below(self.storage.len())).collect())
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<Transition>> {
        Ok(self.indices(batch, rng)?.into_iter().map(|i| self.storage[i].clone()).collect())
    }

    /// Same draws as [`ReplayBuffer::sample`], stacked into tensors.
    pub fn sample_batch(&self, batch: usize, rng: &mut SeededRng) -> Result<Batch> {
        let idx = self.indices(batch, rng)?;
        let pick = |f: &dyn Fn(&Transition) -> &Tensor, width: usize| {
            let mut data = Vec::with_capacity(batch * width);
            for &i in &idx {
                data.extend_from_slice(f(&self.storage[i]).data());
            }
            Tensor::matrix(batch, width, data)
        };
        Ok(Batch {
            states: pick(&|t| &t.state, self.state_dim)?,
            actions: pick(&|t| &t.action, self.action_dim)?,
            rewards: Tensor::matrix(batch, 1, idx.iter().map(|&i| self.storage[i].reward).collect())?,
            next_states: pick(&|t| &t.next_state, self.state_dim)?,
            dones: Tensor::matrix(batch, 1, idx.iter().map(|&i| if self.storage[i].done { 1.0 } else { 0.0 }).collect())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn tr(i: usize) -> Transition {
        Transition {
            state: Tensor::vector(vec![i as f64, 0.5]),
            action: Tensor::vector(vec![-(i as f64)]),
            reward: i as f64 * 0.1,
            next_state: Tensor::vector(vec![i as f64 + 1.0, 0.5]),
            done: i % 3 == 0,
        }
    }

    #[test]
    fn push_and_ring_semantics() {
        let mut b = ReplayBuffer::new(2, 2, 1).unwrap();
        b.push(tr(0)).unwrap();
        assert_eq!(b.len(), 1);
        b.push(tr(1)).unwrap();
        b.push(tr(2)).unwrap();
        assert_eq!(b.len(), 2);
        let kept: Vec<_> = b.iter().cloned().collect();
        assert_eq!(kept, vec![tr(1), tr(2)]);
    }

    #[test]
    fn full_buffer_reads_back_everything() {
        let mut b = ReplayBuffer::new(5, 2, 1).unwrap();
        for i in 0..5 {
            b.push(tr(i)).unwrap();
        }
        let all: Vec<_> = b.iter().cloned().collect();
        assert_eq!(all, (0..5).map(tr).collect::<Vec<_>>());
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let mut b = ReplayBuffer::new(4, 2, 1).unwrap();
        let mut t = tr(0);
        t.action = Tensor::vector(vec![0.0, 0.0]);
        assert!(matches!(b.push(t), Err(Error::Shape(_))));
        let mut t = tr(0);
        t.reward = f64::NAN;
        assert!(matches!(b.push(t), Err(Error::Numeric(_))));
    }

    #[test]
    fn not_ready_until_batch_fits() {
        let mut b = ReplayBuffer::new(8, 2, 1).unwrap();
        b.push(tr(0)).unwrap();
        let mut rng = seeded_rng(0);
        assert!(matches!(b.sample(4, &mut rng), Err(Error::NotReady { size: 1, batch: 4 })));
        for i in 1..4 {
            b.push(tr(i)).unwrap();
        }
        let s = b.sample(4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|t| b.iter().any(|x| x == t)));
    }

    #[test]
    fn sample_and_batch_use_identical_draws() {
        let mut b = ReplayBuffer::new(16, 2, 1).unwrap();
        for i in 0..16 {
            b.push(tr(i)).unwrap();
        }
        let ts = b.sample(8, &mut seeded_rng(5)).unwrap();
        let batch = b.sample_batch(8, &mut seeded_rng(5)).unwrap();
        assert_eq!(Batch::from_transitions(&ts).unwrap(), batch);
    }

    #[test]
    fn same_seed_same_indices() {
        let mut b = ReplayBuffer::new(100, 2, 1).unwrap();
        for i in 0..100 {
            b.push(tr(i)).unwrap();
        }
        let before = b.clone();
        let x = b.sample(50, &mut seeded_rng(9)).unwrap();
        let y = b.sample(50, &mut seeded_rng(9)).unwrap();
        assert_eq!(x, y);
        assert_eq!(before, b);
    }
}
