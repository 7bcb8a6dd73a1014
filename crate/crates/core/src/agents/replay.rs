//! Bounded replay memory.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::AgentState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AgentState,
    pub action: f64,
    pub reward: f64,
    /// `None` at the last step of an episode.
    pub next_state: Option<AgentState>,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    /// Contiguous runs in insertion order, for stateful recurrent networks.
    Sequential,
    /// Distinct uniformly drawn transitions.
    Shuffled,
}

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    mode: ReplayMode,
    items: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize, mode: ReplayMode) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            mode,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Positions (oldest first) of a sampled batch.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || batch > self.items.len() {
            return Err(Error::NotReady(format!("need {batch} transitions, memory holds {}", self.items.len())));
        }
        Ok(match self.mode {
            ReplayMode::Sequential => {
                let start = rng.random_range(0..=self.items.len() - batch);
                (start..start + batch).collect()
            }
            ReplayMode::Shuffled => index::sample(rng, self.items.len(), batch).into_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(step: usize) -> Transition {
        Transition {
            state: AgentState::new(vec![0.0; 3], 1, 0.0).unwrap(),
            action: 0.0,
            reward: step as f64,
            next_state: None,
            step,
        }
    }

    fn steps(batch: &[&Transition]) -> Vec<usize> {
        batch.iter().map(|t| t.step).collect()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut m = ReplayMemory::new(3, ReplayMode::Sequential);
        for s in 1..=4 {
            m.push(tr(s));
        }
        assert_eq!(m.iter().map(|t| t.step).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn sequential_samples_are_contiguous() {
        let mut m = ReplayMemory::new(3, ReplayMode::Sequential);
        for s in 1..=4 {
            m.push(tr(s));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(steps(&m.sample(2, &mut rng).unwrap()));
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![vec![2, 3], vec![3, 4]]);
    }

    #[test]
    fn shuffled_sampling_is_uniform_without_replacement() {
        let mut m = ReplayMemory::new(10, ReplayMode::Shuffled);
        for s in 0..10 {
            m.push(tr(s));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let b = m.sample(3, &mut rng).unwrap();
            let mut s = steps(&b);
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 3);
            for i in s {
                counts[i] += 1;
            }
        }
        let p = 0.3;
        let expected = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn oversized_batch_is_not_ready() {
        let mut m = ReplayMemory::new(5, ReplayMode::Shuffled);
        m.push(tr(0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(m.sample(2, &mut rng), Err(Error::NotReady(_))));
    }
}
