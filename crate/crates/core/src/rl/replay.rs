use rand::seq::index;
use rand::Rng;

use crate::mask::MaskInputs;

/// One stored step. Actions are kept in normalised `[-1, 1]` units.
#[derive(Debug, Clone)]
pub struct Transition {
    pub features: Vec<f64>,
    pub mask_inputs: MaskInputs,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub next_mask_inputs: MaskInputs,
    pub done: bool,
    pub from_oracle: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: usize,
    oracle_pushed: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0, pushed: 0, oracle_pushed: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        self.pushed += 1;
        self.oracle_pushed += usize::from(t.from_oracle);
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Share of all transitions ever pushed that came from the oracle.
    pub fn oracle_fraction(&self) -> f64 {
        if self.pushed == 0 {
            0.0
        } else {
            self.oracle_pushed as f64 / self.pushed as f64
        }
    }

    /// Uniform batch without replacement; smaller than `n` if the buffer is.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}
