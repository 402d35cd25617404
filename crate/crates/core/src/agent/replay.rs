use crate::error::{domain, Result};
use crate::mdp::Transition;
use crate::rng::SeedRng;

/// Fixed-capacity FIFO store of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return domain("replay capacity must be positive");
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
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

    /// Adds a transition, overwriting the oldest one once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample(&self, n: usize, rng: &mut SeedRng) -> Result<Vec<&Transition>> {
        if n > self.items.len() {
            return domain(format!("cannot sample {n} from {} transitions", self.items.len()));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Action, State};
    use crate::rng;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn tr(i: u32) -> Transition {
        let s = State::Tokens(vec![i]);
        Transition::new(s.clone(), Action::NoOp, i as f64, s.clone(), 1, 1, Arc::new(s)).unwrap()
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sample_is_distinct_and_bounded() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..6 {
            b.push(tr(i));
        }
        let mut r = rng::stream(0, 0);
        assert!(b.sample(7, &mut r).is_err());
        let mut got: Vec<f64> = b.sample(6, &mut r).unwrap().iter().map(|t| t.reward).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    proptest! {
        #[test]
        fn fifo_eviction(capacity in 1usize..20, inserts in 0usize..60) {
            let mut b = ReplayBuffer::new(capacity).unwrap();
            for i in 0..inserts {
                b.push(tr(i as u32));
            }
            prop_assert!(b.len() <= capacity);
            let kept: Vec<f64> = b.iter().map(|t| t.reward).collect();
            let first = inserts.saturating_sub(capacity);
            let expected: Vec<f64> = (first..inserts).map(|i| i as f64).collect();
            prop_assert_eq!(kept, expected);
        }
    }
}
