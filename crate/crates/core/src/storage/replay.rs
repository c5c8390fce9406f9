use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
    pub episode: u64,
}

/// A batch of transitions in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_records(records: &[TransitionRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (obs, act) = (first.state.len(), first.action.len());
        let mut states = Vec::with_capacity(records.len() * obs);
        let mut actions = Vec::with_capacity(records.len() * act);
        let mut next = Vec::with_capacity(records.len() * obs);
        for r in records {
            if r.state.len() != obs || r.next_state.len() != obs || r.action.len() != act {
                return Err(shape_err("records of differing widths in one batch"));
            }
            states.extend_from_slice(&r.state);
            actions.extend_from_slice(&r.action);
            next.extend_from_slice(&r.next_state);
        }
        let n = records.len();
        Ok(Self {
            states: Matrix::from_vec(n, obs, states),
            actions: Matrix::from_vec(n, act, actions),
            rewards: records.iter().map(|r| r.reward).collect(),
            next_states: Matrix::from_vec(n, obs, next),
            terminated: records.iter().map(|r| r.terminated).collect(),
            truncated: records.iter().map(|r| r.truncated).collect(),
        })
    }
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    action_dim: usize,
    capacity: usize,
    cursor: usize,
    size: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminated: Vec<bool>,
    truncated: Vec<bool>,
    episodes: Vec<u64>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, action_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            action_dim,
            capacity,
            cursor: 0,
            size: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminated: Vec::new(),
            truncated: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn push(&mut self, record: TransitionRecord) -> Result<()> {
        if record.state.len() != self.obs_dim || record.next_state.len() != self.obs_dim || record.action.len() != self.action_dim {
            return Err(shape_err(format!(
                "transition widths ({}, {}, {}) do not match buffer ({}, {})",
                record.state.len(),
                record.action.len(),
                record.next_state.len(),
                self.obs_dim,
                self.action_dim
            )));
        }
        let slot = self.cursor;
        if slot == self.rewards.len() {
            self.states.extend_from_slice(&record.state);
            self.actions.extend_from_slice(&record.action);
            self.next_states.extend_from_slice(&record.next_state);
            self.rewards.push(record.reward);
            self.terminated.push(record.terminated);
            self.truncated.push(record.truncated);
            self.episodes.push(record.episode);
        } else {
            let (o, a) = (self.obs_dim, self.action_dim);
            self.states[slot * o..(slot + 1) * o].copy_from_slice(&record.state);
            self.actions[slot * a..(slot + 1) * a].copy_from_slice(&record.action);
            self.next_states[slot * o..(slot + 1) * o].copy_from_slice(&record.next_state);
            self.rewards[slot] = record.reward;
            self.terminated[slot] = record.terminated;
            self.truncated[slot] = record.truncated;
            self.episodes[slot] = record.episode;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(())
    }

    /// Record stored in physical slot `index`.
    pub fn get(&self, index: usize) -> Option<TransitionRecord> {
        if index >= self.size {
            return None;
        }
        let (o, a) = (self.obs_dim, self.action_dim);
        Some(TransitionRecord {
            state: self.states[index * o..(index + 1) * o].to_vec(),
            action: self.actions[index * a..(index + 1) * a].to_vec(),
            reward: self.rewards[index],
            next_state: self.next_states[index * o..(index + 1) * o].to_vec(),
            terminated: self.terminated[index],
            truncated: self.truncated[index],
            episode: self.episodes[index],
        })
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.size < batch_size || self.size == 0 {
            return Err(Error::Underfull { need: batch_size.max(1), have: self.size });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.size)).collect())
    }

    /// Uniform batch with the slot indices it was built from.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<(TransitionBatch, Vec<usize>)> {
        let indices = self.sample_indices(batch_size, rng)?;
        Ok((self.gather(&indices)?, indices))
    }

    pub fn gather(&self, indices: &[usize]) -> Result<TransitionBatch> {
        let (o, a) = (self.obs_dim, self.action_dim);
        let n = indices.len();
        let mut states = Vec::with_capacity(n * o);
        let mut actions = Vec::with_capacity(n * a);
        let mut next = Vec::with_capacity(n * o);
        let mut rewards = Vec::with_capacity(n);
        let mut terminated = Vec::with_capacity(n);
        let mut truncated = Vec::with_capacity(n);
        for &i in indices {
            if i >= self.size {
                return Err(Error::InvalidInput(format!("index {i} outside {} stored transitions", self.size)));
            }
            states.extend_from_slice(&self.states[i * o..(i + 1) * o]);
            actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            next.extend_from_slice(&self.next_states[i * o..(i + 1) * o]);
            rewards.push(self.rewards[i]);
            terminated.push(self.terminated[i]);
            truncated.push(self.truncated[i]);
        }
        Ok(TransitionBatch {
            states: Matrix::from_vec(n, o, states),
            actions: Matrix::from_vec(n, a, actions),
            rewards,
            next_states: Matrix::from_vec(n, o, next),
            terminated,
            truncated,
        })
    }

    /// Every stored transition in slot order.
    pub fn all(&self) -> TransitionBatch {
        let idx: Vec<usize> = (0..self.size).collect();
        self.gather(&idx).expect("indices in range")
    }

    pub fn episodes(&self) -> &[u64] {
        &self.episodes[..self.size]
    }

    pub(crate) fn from_parts(
        obs_dim: usize,
        action_dim: usize,
        capacity: usize,
        cursor: usize,
        records: Vec<TransitionRecord>,
    ) -> Result<Self> {
        if records.len() > capacity || cursor >= capacity.max(1) || (records.len() < capacity && cursor != records.len()) {
            return Err(Error::Format(format!(
                "inconsistent buffer header: capacity {capacity}, cursor {cursor}, size {}",
                records.len()
            )));
        }
        let mut buf = Self::new(obs_dim, action_dim, capacity);
        for r in records {
            buf.push(r)?;
        }
        buf.cursor = cursor;
        Ok(buf)
    }
}
